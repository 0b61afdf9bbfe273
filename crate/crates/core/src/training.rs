//! Mini-batch Adam training of the fusion model with early stopping on
//! validation AUC, plus a synthetic cohort generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarkers::{Biomarker, BiomarkerVector, Status, BIOMARKER_COUNT};
use crate::evaluation::{roc_auc, MetricError};
use crate::features::FeatureRecord;
use crate::fusion::{DropoutMode, FusionModel, ModelError, ModelInput};
use crate::tensor::Tensor2;

/// Records per gradient work unit; partial sums are reduced in chunk order.
const GRADIENT_CHUNK: usize = 8;
const DROPOUT_SALT: u64 = 0x6472_6f70_6f75_7421;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{split} split has no positive records")]
    NoPositives { split: String },
    #[error("{split} split has no negative records")]
    NoNegatives { split: String },
    #[error("record {0} has no label")]
    Unlabeled(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs without a validation AUC improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept, if any epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
    pub stopped_early: bool,
    pub seed: u64,
}

struct Adam {
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    step: i32,
}

impl Adam {
    fn new(model: &FusionModel) -> Self {
        let zeros: Vec<Tensor2> = model
            .parameters()
            .iter()
            .map(|(_, p)| Tensor2::zeros(p.rows, p.cols))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, model: &mut FusionModel, grads: &[Tensor2], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (k, p) in model.parameters_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k].data, &mut self.v[k].data, &grads[k].data);
            for i in 0..p.data.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

fn add_into(acc: &mut [Tensor2], grads: &[Tensor2]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data.iter_mut().zip(&g.data) {
            *x += y;
        }
    }
}

fn labels_of(records: &[FeatureRecord], split: &str) -> Result<Vec<bool>, TrainError> {
    let labels = records
        .iter()
        .map(|r| r.label.ok_or_else(|| TrainError::Unlabeled(r.scan_id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    if !labels.iter().any(|&l| l) {
        return Err(TrainError::NoPositives { split: split.into() });
    }
    if labels.iter().all(|&l| l) {
        return Err(TrainError::NoNegatives { split: split.into() });
    }
    Ok(labels)
}

fn bce(p: f64, label: bool) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Summed loss and gradients over `batch`, reduced in a fixed order so the
/// result does not depend on the thread count.
fn batch_gradients(
    model: &FusionModel,
    batch: &[(usize, &ModelInput, bool)],
    seed: u64,
    epoch: usize,
) -> Result<(f64, Vec<Tensor2>), ModelError> {
    let partials: Vec<Result<(f64, Vec<Tensor2>), ModelError>> = batch
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut acc: Option<Vec<Tensor2>> = None;
            for &(idx, x, label) in chunk {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DROPOUT_SALT);
                rng.set_stream(((epoch as u64) << 32) | idx as u64);
                let (l, g) = model.loss_and_gradients(x, label, DropoutMode::Train(&mut rng))?;
                loss += l;
                match acc.as_mut() {
                    Some(a) => add_into(a, &g),
                    None => acc = Some(g),
                }
            }
            Ok((loss, acc.unwrap_or_default()))
        })
        .collect();
    let mut loss = 0.0;
    let mut total: Option<Vec<Tensor2>> = None;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        match total.as_mut() {
            Some(t) => add_into(t, &g),
            None => total = Some(g),
        }
    }
    Ok((loss, total.unwrap_or_default()))
}

/// Probabilities for prepared inputs, in input order.
fn probabilities(model: &FusionModel, inputs: &[ModelInput]) -> Result<Vec<f64>, ModelError> {
    inputs.par_iter().map(|x| model.forward(x).map(|(p, _)| p)).collect()
}

/// Trains with Adam on binary cross-entropy and returns the parameters of the
/// epoch with the best validation AUC. Records are normalised with the
/// model's embedded statistics.
pub fn train(
    model: FusionModel,
    train_records: &[FeatureRecord],
    val_records: &[FeatureRecord],
    cfg: &TrainConfig,
) -> Result<(FusionModel, TrainHistory), TrainError> {
    cfg.validate()?;
    let train_labels = labels_of(train_records, "train")?;
    let val_labels = labels_of(val_records, "validation")?;
    let mut history = TrainHistory {
        seed: cfg.seed,
        ..TrainHistory::default()
    };
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    let train_inputs: Vec<ModelInput> = train_records.iter().map(|r| model.prepare(r)).collect();
    let val_inputs: Vec<ModelInput> = val_records.iter().map(|r| model.prepare(r)).collect();

    let mut model = model;
    let mut adam = Adam::new(&model);
    let mut best: Option<(FusionModel, f64, usize)> = None;
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, idxs) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(usize, &ModelInput, bool)> = idxs
                .iter()
                .enumerate()
                .map(|(j, &i)| (b * cfg.batch_size + j, &train_inputs[i], train_labels[i]))
                .collect();
            let (loss, mut grads) = batch_gradients(&model, &batch, cfg.seed, epoch)?;
            epoch_loss += loss;
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data.iter_mut().for_each(|v| *v *= scale);
            }
            adam.update(&mut model, &grads, cfg);
        }

        let probs = probabilities(&model, &val_inputs)?;
        let val_auc = roc_auc(&probs, &val_labels)?;
        let val_loss = probs.iter().zip(&val_labels).map(|(&p, &l)| bce(p, l)).sum::<f64>() / probs.len() as f64;
        history.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / train_inputs.len() as f64,
            val_loss,
            val_auc,
        });
        log::debug!("epoch {epoch}: val auc {val_auc:.4}");

        let improved = best.as_ref().is_none_or(|(_, a, _)| val_auc > *a);
        if improved {
            best = Some((model.clone(), val_auc, epoch));
        } else if epoch - best.as_ref().map_or(0, |b| b.2) >= cfg.patience {
            history.stopped_early = true;
            break;
        }
    }

    let (best_model, auc, epoch) = best.expect("at least one epoch ran");
    history.best_epoch = Some(epoch);
    history.best_val_auc = Some(auc);
    Ok((best_model, history))
}

/// Stratified split into (train, validation) with `val_fraction` of each
/// class held out, shuffled by `seed`.
pub fn split_train_val(
    records: &[FeatureRecord],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<FeatureRecord>, Vec<FeatureRecord>), TrainError> {
    if !(0.0 < val_fraction && val_fraction < 1.0) {
        return Err(TrainError::Config(format!("validation fraction {val_fraction} not in (0, 1)")));
    }
    let labels = labels_of(records, "input")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * val_fraction).round() as usize).clamp(1, idx.len() - 1);
        for (k, &i) in idx.iter().enumerate() {
            if k < n_val {
                val.push(records[i].clone());
            } else {
                train.push(records[i].clone());
            }
        }
    }
    // Keep input order within each split.
    let pos: std::collections::HashMap<&str, usize> =
        records.iter().enumerate().map(|(i, r)| (r.scan_id.as_str(), i)).collect();
    train.sort_by_key(|r| pos[r.scan_id.as_str()]);
    val.sort_by_key(|r| pos[r.scan_id.as_str()]);
    Ok((train, val))
}

/// Labelled records where only `informative` depends on the label: its value
/// is `±(margin + |z|)` by class, so the classes are linearly separable on it.
/// Every other biomarker and the deep vector are label-independent noise.
pub fn synthetic_cohort(n: usize, deep_width: usize, informative: Biomarker, seed: u64) -> Vec<FeatureRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = rng.gen_bool(0.5);
            let mut values = [0.0; BIOMARKER_COUNT];
            for (k, v) in values.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                // Per-column scale and offset so normalisation matters.
                *v = 10.0 * (k + 1) as f64 + (k + 1) as f64 * z;
            }
            let z: f64 = rng.sample(StandardNormal);
            let signal = 0.5 + z.abs();
            let k = informative.index();
            values[k] = 10.0 * (k + 1) as f64 + (k + 1) as f64 * if label { signal } else { -signal };
            let x1 = (0..deep_width).map(|_| rng.sample(StandardNormal)).collect();
            FeatureRecord {
                scan_id: format!("synthetic-{i:05}"),
                x1,
                biomarkers: BiomarkerVector::from_parts(values, [Status::Ok; BIOMARKER_COUNT]),
                label: Some(label),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::fit_normalizer;
    use crate::fusion::FusionConfig;

    fn small_model(records: &[FeatureRecord], deep: usize) -> FusionModel {
        let mut cfg = FusionConfig::toy(BIOMARKER_COUNT, 4, deep);
        cfg.seed = 3;
        let mut model = FusionModel::new(cfg).unwrap();
        model.normalizer = Some(fit_normalizer(records).unwrap());
        model
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let data = synthetic_cohort(40, 6, Biomarker::Cacs, 1);
        let model = small_model(&data, 6);
        let hash = model.sha256().unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (trained, history) = train(model, &data[..30], &data[30..], &cfg).unwrap();
        assert_eq!(trained.sha256().unwrap(), hash);
        assert!(history.epochs.is_empty());
    }

    #[test]
    fn repeated_runs_match() {
        let data = synthetic_cohort(60, 6, Biomarker::Cacs, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let run = || train(small_model(&data, 6), &data[..45], &data[45..], &cfg).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(ha, hb);
        assert_eq!(a.sha256().unwrap(), b.sha256().unwrap());
    }

    #[test]
    fn missing_class_is_rejected() {
        let mut data = synthetic_cohort(20, 6, Biomarker::Cacs, 3);
        for r in &mut data[..10] {
            r.label = Some(false);
        }
        let model = small_model(&data, 6);
        let err = train(model, &data[10..], &data[..10], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::NoPositives { ref split } if split == "validation"));
    }

    #[test]
    fn stratified_split_keeps_both_classes() {
        let data = synthetic_cohort(50, 2, Biomarker::Ati, 4);
        let (tr, va) = split_train_val(&data, 0.2, 9).unwrap();
        assert_eq!(tr.len() + va.len(), 50);
        for part in [&tr, &va] {
            assert!(part.iter().any(|r| r.label == Some(true)));
            assert!(part.iter().any(|r| r.label == Some(false)));
        }
    }
}
