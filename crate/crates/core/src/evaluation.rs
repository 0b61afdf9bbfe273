//! Classification metrics, bootstrap intervals, McNemar's test and
//! operating-threshold selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

pub const DEFAULT_REPLICATES: usize = 1000;
/// Fraction of failed bootstrap replicates above which the interval is
/// reported as unreliable.
pub const MAX_FAILED_REPLICATE_FRACTION: f64 = 0.05;
/// Discordant-pair count from which McNemar switches to the chi-square form.
pub const MCNEMAR_EXACT_LIMIT: u64 = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no positive labels")]
    NoPositives,
    #[error("no negative labels")]
    NoNegatives,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("no samples")]
    Empty,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    Ok(())
}

/// Area under the ROC curve as the probability that a random positive
/// outscores a random negative, ties counting one half. Computed from
/// mid-ranks in O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    if n_neg == 0 {
        return Err(MetricError::NoNegatives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps mid-ranks integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum2 += mid2 * pos_in_tie;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points for every distinct score used as a `score >= t` threshold,
/// from the strictest to the most lenient, starting at (0, 0).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>, MetricError> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 {
        return Err(MetricError::NoPositives);
    }
    if n_neg == 0.0 {
        return Err(MetricError::NoNegatives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp / n_neg,
            tpr: tp / n_pos,
            threshold: t,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    /// Predictions are positive when `score >= threshold`.
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn metrics(&self) -> ConfusionMetrics {
        ConfusionMetrics {
            accuracy: self.accuracy(),
            sensitivity: self.sensitivity(),
            specificity: self.specificity(),
            f1: self.f1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

pub fn confusion_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionMetrics, MetricError> {
    check(scores, labels)?;
    Ok(Confusion::at(scores, labels, threshold).metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
    /// Replicates on which the metric was undefined (e.g. no positives).
    pub failed: usize,
}

impl BootstrapCi {
    pub fn unreliable(&self) -> bool {
        self.failed as f64 > MAX_FAILED_REPLICATE_FRACTION * self.replicates as f64
    }
}

/// Linear-interpolated percentile of sorted values, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Seeded RNG of replicate `r`; replicates are independent of scheduling.
fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// Percentile 2.5/97.5 interval of `metric` over resamples with replacement.
pub fn bootstrap_ci<F>(
    metric: F,
    scores: &[f64],
    labels: &[bool],
    replicates: usize,
    seed: u64,
) -> Result<BootstrapCi, MetricError>
where
    F: Fn(&[f64], &[bool]) -> Result<f64, MetricError> + Sync,
{
    check(scores, labels)?;
    let n = scores.len();
    let values: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let mut s = Vec::with_capacity(n);
            let mut l = Vec::with_capacity(n);
            for _ in 0..n {
                let k = rng.gen_range(0..n);
                s.push(scores[k]);
                l.push(labels[k]);
            }
            metric(&s, &l).ok()
        })
        .collect();
    let mut ok: Vec<f64> = values.iter().flatten().copied().collect();
    let failed = replicates - ok.len();
    if ok.is_empty() {
        return Err(metric(scores, labels).err().unwrap_or(MetricError::Empty));
    }
    ok.sort_by(f64::total_cmp);
    let ci = BootstrapCi {
        lo: percentile(&ok, 0.025),
        hi: percentile(&ok, 0.975),
        replicates,
        failed,
    };
    if ci.unreliable() {
        log::warn!("{failed} of {replicates} bootstrap replicates were undefined; interval is unreliable");
    }
    Ok(ci)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// First model right, second wrong.
    pub b: u64,
    /// First model wrong, second right.
    pub c: u64,
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided exact binomial tail `2·P(X <= min(b, c))`, X ~ Bin(b+c, 1/2).
pub fn binomial_two_sided(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    // ln C(n, i) by running sums of logs.
    let mut log_choose = 0.0f64;
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            log_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (log_choose + ln_half_n).exp();
    }
    (2.0 * tail).min(1.0)
}

/// Continuity-corrected McNemar chi-square p-value, one degree of freedom.
pub fn chi_square_continuity(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let stat = diff.max(0.0).powi(2) / n as f64;
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    chi.sf(stat).clamp(f64::MIN_POSITIVE, 1.0)
}

pub fn mcnemar_test(pred_a: &[bool], pred_b: &[bool], labels: &[bool]) -> Result<McNemar, MetricError> {
    if pred_a.len() != labels.len() || pred_b.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: pred_a.len().max(pred_b.len()),
            labels: labels.len(),
        });
    }
    let (mut b, mut c) = (0u64, 0u64);
    for ((&a, &p), &l) in pred_a.iter().zip(pred_b).zip(labels) {
        match (a == l, p == l) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    let n = b + c;
    if n == 0 {
        return Ok(McNemar {
            b,
            c,
            p_value: 1.0,
            exact: true,
        });
    }
    if n < MCNEMAR_EXACT_LIMIT {
        return Ok(McNemar {
            b,
            c,
            p_value: binomial_two_sided(b, c),
            exact: true,
        });
    }
    Ok(McNemar {
        b,
        c,
        p_value: chi_square_continuity(b, c),
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub youden: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// All scores were equal, so no threshold separates anything.
    pub degenerate: bool,
}

/// Threshold maximising sensitivity + specificity - 1 over the midpoints
/// between consecutive distinct scores; ties go to higher specificity.
pub fn select_threshold(scores: &[f64], labels: &[bool]) -> Result<ThresholdChoice, MetricError> {
    check(scores, labels)?;
    if !labels.iter().any(|&l| l) {
        return Err(MetricError::NoPositives);
    }
    if labels.iter().all(|&l| l) {
        return Err(MetricError::NoNegatives);
    }
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() == 1 {
        let c = Confusion::at(scores, labels, distinct[0]);
        return Ok(ThresholdChoice {
            threshold: distinct[0],
            youden: c.sensitivity() + c.specificity() - 1.0,
            sensitivity: c.sensitivity(),
            specificity: c.specificity(),
            degenerate: true,
        });
    }
    let mut best: Option<ThresholdChoice> = None;
    for w in distinct.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let c = Confusion::at(scores, labels, t);
        let cand = ThresholdChoice {
            threshold: t,
            youden: c.sensitivity() + c.specificity() - 1.0,
            sensitivity: c.sensitivity(),
            specificity: c.specificity(),
            degenerate: false,
        };
        let better = best.is_none_or(|b| {
            cand.youden > b.youden || (cand.youden == b.youden && cand.specificity > b.specificity)
        });
        if better {
            best = Some(cand);
        }
    }
    Ok(best.expect("at least two distinct scores"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Estimate,
    pub sensitivity: Estimate,
    pub specificity: Estimate,
    pub f1: Estimate,
    pub auc: Estimate,
    pub threshold: f64,
    pub confusion: Confusion,
    pub n_positive: usize,
    pub n_negative: usize,
    pub replicates: usize,
    /// Metrics whose bootstrap had too many undefined replicates.
    pub unreliable: Vec<String>,
}

fn estimate(value: f64, ci: BootstrapCi) -> Estimate {
    // Percentile intervals need not contain the full-sample value.
    Estimate {
        value,
        lo: ci.lo.min(value),
        hi: ci.hi.max(value),
    }
}

/// Point metrics at `threshold` with bootstrap intervals.
pub fn evaluate(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    replicates: usize,
    seed: u64,
) -> Result<MetricsReport, MetricError> {
    check(scores, labels)?;
    let auc = roc_auc(scores, labels)?;
    let confusion = Confusion::at(scores, labels, threshold);
    let point = confusion.metrics();
    let mut unreliable = Vec::new();
    let mut ci = |name: &str, f: &(dyn Fn(&[f64], &[bool]) -> Result<f64, MetricError> + Sync)| {
        let ci = bootstrap_ci(f, scores, labels, replicates, seed)?;
        if ci.unreliable() {
            unreliable.push(name.to_string());
        }
        Ok::<_, MetricError>(ci)
    };
    let at = move |s: &[f64], l: &[bool]| Confusion::at(s, l, threshold);
    let acc_ci = ci("accuracy", &|s, l| Ok(at(s, l).accuracy()))?;
    let sens_ci = ci("sensitivity", &|s, l| {
        let c = at(s, l);
        if c.tp + c.fn_ == 0 {
            Err(MetricError::NoPositives)
        } else {
            Ok(c.sensitivity())
        }
    })?;
    let spec_ci = ci("specificity", &|s, l| {
        let c = at(s, l);
        if c.tn + c.fp == 0 {
            Err(MetricError::NoNegatives)
        } else {
            Ok(c.specificity())
        }
    })?;
    let f1_ci = ci("f1", &|s, l| Ok(at(s, l).f1()))?;
    let auc_ci = ci("auc", &roc_auc)?;
    let n_positive = labels.iter().filter(|&&l| l).count();
    Ok(MetricsReport {
        accuracy: estimate(point.accuracy, acc_ci),
        sensitivity: estimate(point.sensitivity, sens_ci),
        specificity: estimate(point.specificity, spec_ci),
        f1: estimate(point.f1, f1_ci),
        auc: estimate(auc, auc_ci),
        threshold,
        confusion,
        n_positive,
        n_negative: labels.len() - n_positive,
        replicates,
        unreliable,
    })
}
