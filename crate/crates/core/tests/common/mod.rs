#![allow(dead_code)]

use ctquant::fusion::{DropoutMode, FusionConfig, FusionModel, ModelInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so that near-zero gradients
/// are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between the fusion model's analytic loss gradient
/// and central finite differences, over every parameter of a toy model with
/// jittered weights, random input and a fixed dropout mask.
pub fn fusion_gradient_error(n: usize, l: usize, d: usize, seed: u64) -> f64 {
    let mut cfg = FusionConfig::toy(n, l, d);
    cfg.seed = seed;
    let mut model = FusionModel::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5151);
    for p in model.parameters_mut() {
        for v in &mut p.data {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let x = ModelInput {
        deep: (0..d).map(|_| rng.sample(StandardNormal)).collect(),
        scalars: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    };
    let label = rng.gen_bool(0.5);
    let mask_seed: u64 = rng.gen();
    let eval = |m: &FusionModel| {
        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
        m.loss_and_gradients(&x, label, DropoutMode::Train(&mut r)).unwrap()
    };
    let (_, grads) = eval(&model);
    let mut worst = 0.0f64;
    for (k, g) in grads.iter().enumerate() {
        for j in 0..g.data.len() {
            let mut plus = model.clone();
            plus.parameters_mut()[k].data[j] += FD_STEP;
            let mut minus = model.clone();
            minus.parameters_mut()[k].data[j] -= FD_STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(g.data[j], numeric));
        }
    }
    worst
}
