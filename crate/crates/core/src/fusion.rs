//! Joint-representation network.
//!
//! Each input feature (the deep-feature vector and every biomarker scalar)
//! has its own encoder and gated residual network, producing one row of an
//! `(N+1)×L` embedding matrix. Multi-head self-attention runs over those rows
//! as tokens; a softmax head turns the attended, flattened result into
//! per-feature contribution scores, which weight the rows into a single
//! `L`-vector for the classifier.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::biomarkers::{Biomarker, BIOMARKER_COUNT};
use crate::features::{FeatureRecord, NormalizationStats, DEEP_FEATURE_DIM};
use crate::tensor::{dropout_mask, sigmoid, Tape, Tensor2, TensorError, Var};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEEP_FEATURE_NAME: &str = "deep_features";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input has {found} {what}, model expects {expected}")]
    InputShape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("model format version {found} is not supported (expected {MODEL_FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("model checksum mismatch: stored {stored}, computed {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("parameter {0}: {1}")]
    Parameter(String, String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub n_biomarkers: usize,
    pub embed_width: usize,
    pub deep_width: usize,
    pub heads: usize,
    pub head_width: usize,
    pub encoder_hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            n_biomarkers: BIOMARKER_COUNT,
            embed_width: 32,
            deep_width: DEEP_FEATURE_DIM,
            heads: 2,
            head_width: 16,
            encoder_hidden: 64,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl FusionConfig {
    /// Small configuration used for gradient checks.
    pub fn toy(n_biomarkers: usize, embed_width: usize, deep_width: usize) -> Self {
        Self {
            n_biomarkers,
            embed_width,
            deep_width,
            heads: 2,
            head_width: embed_width / 2,
            encoder_hidden: 5,
            dropout: 0.5,
            seed: 0,
        }
    }

    pub fn tokens(&self) -> usize {
        self.n_biomarkers + 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let widths = [
            self.n_biomarkers,
            self.embed_width,
            self.deep_width,
            self.heads,
            self.head_width,
            self.encoder_hidden,
        ];
        if widths.contains(&0) {
            return Err(ModelError::Config("all widths must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Affine layer `x·W + b` with `W` of shape in×out and `b` of shape 1×out.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Tensor2 {
                rows: inputs,
                cols: outputs,
                data: (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
            },
            bias: Tensor2::zeros(1, outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub fc1: Dense,
    pub fc2: Dense,
}

/// Gated residual network: `LayerNorm(GLU(η) + e)` with
/// `η = Dropout(FC2(ELU(FC1(e))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grn {
    pub fc1: Dense,
    pub fc2: Dense,
    /// Value and gate halves side by side (L×2L).
    pub gate: Dense,
    pub norm_gain: Tensor2,
    pub norm_bias: Tensor2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub heads: Vec<AttentionHead>,
    pub output: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: FusionConfig,
    /// Row 0 is the deep-feature encoder, rows 1..=N the biomarkers.
    pub encoders: Vec<Encoder>,
    pub grns: Vec<Grn>,
    pub attention: Attention,
    pub contribution: Dense,
    pub classifier: Dense,
    pub normalizer: Option<NormalizationStats>,
}

/// Normalised numeric input for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub deep: Vec<f64>,
    pub scalars: Vec<f64>,
}

impl ModelInput {
    /// Uses the record's values as given; flagged biomarkers contribute 0.
    pub fn from_normalized(r: &FeatureRecord) -> Self {
        Self {
            deep: r.x1.clone(),
            scalars: Biomarker::ALL
                .iter()
                .map(|&b| {
                    let m = r.biomarkers.get(b);
                    if m.status.is_ok() {
                        m.value
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }
}

/// Attention result for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    /// Flattened attended embeddings.
    pub m: Vec<f64>,
    pub scores: Vec<f64>,
    /// Per-head `(N+1)×(N+1)` attention weights.
    pub attention: Vec<Tensor2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub scan_id: String,
    pub probability: f64,
    pub scores: Vec<f64>,
    pub contributions: IndexMap<String, f64>,
    pub model_sha256: String,
}

/// Names of the model's input features in row order.
pub fn feature_names() -> Vec<String> {
    std::iter::once(DEEP_FEATURE_NAME.to_string())
        .chain(Biomarker::ALL.iter().map(|b| b.name().to_string()))
        .collect()
}

/// Tape handles of every parameter, mirroring [`FusionModel`].
struct DenseVars {
    weight: Var,
    bias: Var,
}

struct GrnVars {
    fc1: DenseVars,
    fc2: DenseVars,
    gate: DenseVars,
    norm_gain: Var,
    norm_bias: Var,
}

struct HeadVars {
    query: DenseVars,
    key: DenseVars,
    value: DenseVars,
}

struct ModelVars {
    encoders: Vec<(DenseVars, DenseVars)>,
    grns: Vec<GrnVars>,
    heads: Vec<HeadVars>,
    output: DenseVars,
    contribution: DenseVars,
    classifier: DenseVars,
    /// Every parameter handle in [`FusionModel::parameters`] order.
    flat: Vec<Var>,
}

/// How dropout masks are drawn during a forward pass.
pub enum DropoutMode<'a> {
    Off,
    Train(&'a mut ChaCha8Rng),
}

struct Graph {
    e: Var,
    g: Var,
    m: Var,
    s: Var,
    attention: Vec<Var>,
    logit: Var,
}

impl Dense {
    fn register<'p>(&'p self, t: &mut Tape<'p>, flat: &mut Vec<Var>) -> DenseVars {
        let weight = t.param(&self.weight);
        let bias = t.param(&self.bias);
        flat.push(weight);
        flat.push(bias);
        DenseVars { weight, bias }
    }
}

fn affine(t: &mut Tape<'_>, x: Var, d: &DenseVars) -> Result<Var, TensorError> {
    let y = t.matmul(x, d.weight)?;
    t.add_row(y, d.bias)
}

impl FusionModel {
    pub fn new(config: FusionConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (l, h) = (config.embed_width, config.encoder_hidden);
        let tokens = config.tokens();
        let encoders = (0..tokens)
            .map(|i| {
                let inputs = if i == 0 { config.deep_width } else { 1 };
                Encoder {
                    fc1: Dense::init(inputs, h, &mut rng),
                    fc2: Dense::init(h, l, &mut rng),
                }
            })
            .collect();
        let grns = (0..tokens)
            .map(|_| Grn {
                fc1: Dense::init(l, l, &mut rng),
                fc2: Dense::init(l, l, &mut rng),
                gate: Dense::init(l, 2 * l, &mut rng),
                norm_gain: Tensor2::filled(1, l, 1.0),
                norm_bias: Tensor2::zeros(1, l),
            })
            .collect();
        let heads = (0..config.heads)
            .map(|_| AttentionHead {
                query: Dense::init(l, config.head_width, &mut rng),
                key: Dense::init(l, config.head_width, &mut rng),
                value: Dense::init(l, config.head_width, &mut rng),
            })
            .collect();
        let output = Dense::init(config.heads * config.head_width, l, &mut rng);
        let contribution = Dense::init(tokens * l, tokens, &mut rng);
        let classifier = Dense::init(l, 1, &mut rng);
        Ok(Self {
            config,
            encoders,
            grns,
            attention: Attention { heads, output },
            contribution,
            classifier,
            normalizer: None,
        })
    }

    /// Every parameter with its name, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Tensor2)> {
        fn dense<'a>(out: &mut Vec<(String, &'a Tensor2)>, name: String, d: &'a Dense) {
            out.push((format!("{name}.weight"), &d.weight));
            out.push((format!("{name}.bias"), &d.bias));
        }
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            dense(&mut out, format!("encoder.{i}.fc1"), &e.fc1);
            dense(&mut out, format!("encoder.{i}.fc2"), &e.fc2);
        }
        for (i, g) in self.grns.iter().enumerate() {
            dense(&mut out, format!("grn.{i}.fc1"), &g.fc1);
            dense(&mut out, format!("grn.{i}.fc2"), &g.fc2);
            dense(&mut out, format!("grn.{i}.gate"), &g.gate);
            out.push((format!("grn.{i}.norm.gain"), &g.norm_gain));
            out.push((format!("grn.{i}.norm.bias"), &g.norm_bias));
        }
        for (h, head) in self.attention.heads.iter().enumerate() {
            dense(&mut out, format!("attention.{h}.query"), &head.query);
            dense(&mut out, format!("attention.{h}.key"), &head.key);
            dense(&mut out, format!("attention.{h}.value"), &head.value);
        }
        dense(&mut out, "attention.output".into(), &self.attention.output);
        dense(&mut out, "contribution".into(), &self.contribution);
        dense(&mut out, "classifier".into(), &self.classifier);
        out
    }

    /// Mutable parameters in [`parameters`](Self::parameters) order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out: Vec<&mut Tensor2> = Vec::new();
        for e in &mut self.encoders {
            out.extend([&mut e.fc1.weight, &mut e.fc1.bias, &mut e.fc2.weight, &mut e.fc2.bias]);
        }
        for g in &mut self.grns {
            out.extend([
                &mut g.fc1.weight,
                &mut g.fc1.bias,
                &mut g.fc2.weight,
                &mut g.fc2.bias,
                &mut g.gate.weight,
                &mut g.gate.bias,
                &mut g.norm_gain,
                &mut g.norm_bias,
            ]);
        }
        for h in &mut self.attention.heads {
            out.extend([
                &mut h.query.weight,
                &mut h.query.bias,
                &mut h.key.weight,
                &mut h.key.bias,
                &mut h.value.weight,
                &mut h.value.bias,
            ]);
        }
        out.extend([&mut self.attention.output.weight, &mut self.attention.output.bias]);
        out.extend([&mut self.contribution.weight, &mut self.contribution.bias]);
        out.extend([&mut self.classifier.weight, &mut self.classifier.bias]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.data.len()).sum()
    }

    fn register<'p>(&'p self, t: &mut Tape<'p>) -> ModelVars {
        let mut flat = Vec::new();
        let encoders = self
            .encoders
            .iter()
            .map(|e| (e.fc1.register(t, &mut flat), e.fc2.register(t, &mut flat)))
            .collect();
        let grns = self
            .grns
            .iter()
            .map(|g| {
                let fc1 = g.fc1.register(t, &mut flat);
                let fc2 = g.fc2.register(t, &mut flat);
                let gate = g.gate.register(t, &mut flat);
                let norm_gain = t.param(&g.norm_gain);
                let norm_bias = t.param(&g.norm_bias);
                flat.push(norm_gain);
                flat.push(norm_bias);
                GrnVars {
                    fc1,
                    fc2,
                    gate,
                    norm_gain,
                    norm_bias,
                }
            })
            .collect();
        let heads = self
            .attention
            .heads
            .iter()
            .map(|h| HeadVars {
                query: h.query.register(t, &mut flat),
                key: h.key.register(t, &mut flat),
                value: h.value.register(t, &mut flat),
            })
            .collect();
        let output = self.attention.output.register(t, &mut flat);
        let contribution = self.contribution.register(t, &mut flat);
        let classifier = self.classifier.register(t, &mut flat);
        ModelVars {
            encoders,
            grns,
            heads,
            output,
            contribution,
            classifier,
            flat,
        }
    }

    fn check_input(&self, x: &ModelInput) -> Result<(), ModelError> {
        if x.deep.len() != self.config.deep_width {
            return Err(ModelError::InputShape {
                what: "deep features",
                expected: self.config.deep_width,
                found: x.deep.len(),
            });
        }
        if x.scalars.len() != self.config.n_biomarkers {
            return Err(ModelError::InputShape {
                what: "biomarkers",
                expected: self.config.n_biomarkers,
                found: x.scalars.len(),
            });
        }
        Ok(())
    }

    fn encode_on(&self, t: &mut Tape<'_>, v: &ModelVars, x: &ModelInput) -> Result<Var, TensorError> {
        let mut rows = Vec::with_capacity(self.config.tokens());
        for (i, (fc1, fc2)) in v.encoders.iter().enumerate() {
            let input = if i == 0 {
                Tensor2::row_vector(x.deep.clone())
            } else {
                Tensor2::scalar(x.scalars[i - 1])
            };
            let xi = t.leaf(input);
            let h = affine(t, xi, fc1)?;
            let h = t.elu(h)?;
            rows.push(affine(t, h, fc2)?);
        }
        t.concat_rows(&rows)
    }

    fn grn_on(&self, t: &mut Tape<'_>, v: &ModelVars, e: Var, dropout: &mut DropoutMode<'_>) -> Result<Var, TensorError> {
        let l = self.config.embed_width;
        let mut rows = Vec::with_capacity(self.config.tokens());
        for (i, g) in v.grns.iter().enumerate() {
            let ei = t.slice_rows(e, i, 1)?;
            let h = affine(t, ei, &g.fc1)?;
            let h = t.elu(h)?;
            let mut eta = affine(t, h, &g.fc2)?;
            if let DropoutMode::Train(rng) = dropout {
                if self.config.dropout > 0.0 {
                    let mask = dropout_mask(1, l, self.config.dropout, *rng);
                    eta = t.dropout(eta, mask)?;
                }
            }
            let gated = affine(t, eta, &g.gate)?;
            let gated = t.glu(gated)?;
            let res = t.add(gated, ei)?;
            let n = t.layer_norm_rows(res)?;
            let n = t.mul_row(n, g.norm_gain)?;
            rows.push(t.add_row(n, g.norm_bias)?);
        }
        t.concat_rows(&rows)
    }

    fn interact_on(&self, t: &mut Tape<'_>, v: &ModelVars, g: Var) -> Result<(Var, Var, Vec<Var>), TensorError> {
        let scale = 1.0 / (self.config.head_width as f64).sqrt();
        let mut outs = Vec::with_capacity(v.heads.len());
        let mut weights = Vec::with_capacity(v.heads.len());
        for h in &v.heads {
            let q = affine(t, g, &h.query)?;
            let k = affine(t, g, &h.key)?;
            let val = affine(t, g, &h.value)?;
            let kt = t.transpose(k)?;
            let logits = t.matmul(q, kt)?;
            let logits = t.scale(logits, scale)?;
            let w = t.softmax_rows(logits)?;
            weights.push(w);
            outs.push(t.matmul(w, val)?);
        }
        let joined = t.concat_cols(&outs)?;
        let attended = affine(t, joined, &v.output)?;
        let tokens = self.config.tokens();
        let m = t.reshape(attended, 1, tokens * self.config.embed_width)?;
        let logits = affine(t, m, &v.contribution)?;
        let s = t.softmax_rows(logits)?;
        Ok((m, s, weights))
    }

    fn classify_on(&self, t: &mut Tape<'_>, v: &ModelVars, s: Var, g: Var) -> Result<Var, TensorError> {
        let c = t.matmul(s, g)?;
        affine(t, c, &v.classifier)
    }

    fn graph(&self, t: &mut Tape<'_>, v: &ModelVars, x: &ModelInput, mut dropout: DropoutMode<'_>) -> Result<Graph, TensorError> {
        let e = self.encode_on(t, v, x)?;
        let g = self.grn_on(t, v, e, &mut dropout)?;
        let (m, s, attention) = self.interact_on(t, v, g)?;
        let logit = self.classify_on(t, v, s, g)?;
        Ok(Graph {
            e,
            g,
            m,
            s,
            attention,
            logit,
        })
    }

    /// Embedding matrix `E`, one row per input feature.
    pub fn encode(&self, x: &ModelInput) -> Result<Tensor2, ModelError> {
        self.check_input(x)?;
        let mut t = Tape::new();
        let v = self.register(&mut t);
        let e = self.encode_on(&mut t, &v, x)?;
        Ok(t.value(e).clone())
    }

    /// Row-wise gated residual networks applied to `E`, dropout off.
    pub fn grn_apply(&self, e: &Tensor2) -> Result<Tensor2, ModelError> {
        self.check_rows(e)?;
        let mut t = Tape::new();
        let v = self.register(&mut t);
        let ev = t.leaf(e.clone());
        let g = self.grn_on(&mut t, &v, ev, &mut DropoutMode::Off)?;
        Ok(t.value(g).clone())
    }

    pub fn interact(&self, g: &Tensor2) -> Result<Interaction, ModelError> {
        self.check_rows(g)?;
        let mut t = Tape::new();
        let v = self.register(&mut t);
        let gv = t.leaf(g.clone());
        let (m, s, w) = self.interact_on(&mut t, &v, gv)?;
        Ok(Interaction {
            m: t.value(m).data.clone(),
            scores: t.value(s).data.clone(),
            attention: w.iter().map(|&a| t.value(a).clone()).collect(),
        })
    }

    /// `σ(classifier(s·G))`.
    pub fn combine_and_classify(&self, s: &[f64], g: &Tensor2) -> Result<f64, ModelError> {
        self.check_rows(g)?;
        if s.len() != g.rows {
            return Err(ModelError::InputShape {
                what: "scores",
                expected: g.rows,
                found: s.len(),
            });
        }
        let mut t = Tape::new();
        let v = self.register(&mut t);
        let sv = t.leaf(Tensor2::row_vector(s.to_vec()));
        let gv = t.leaf(g.clone());
        let logit = self.classify_on(&mut t, &v, sv, gv)?;
        Ok(sigmoid(t.value(logit).data[0]))
    }

    fn check_rows(&self, x: &Tensor2) -> Result<(), ModelError> {
        let want = (self.config.tokens(), self.config.embed_width);
        if x.shape() != want {
            return Err(TensorError::ShapeMismatch {
                op: "embedding",
                left: x.shape(),
                right: want,
            }
            .into());
        }
        Ok(())
    }

    /// Probability and contribution scores with dropout off.
    pub fn forward(&self, x: &ModelInput) -> Result<(f64, Vec<f64>), ModelError> {
        self.check_input(x)?;
        let mut t = Tape::new();
        let v = self.register(&mut t);
        let gr = self.graph(&mut t, &v, x, DropoutMode::Off)?;
        Ok((sigmoid(t.value(gr.logit).data[0]), t.value(gr.s).data.clone()))
    }

    /// All intermediate values of one inference pass.
    pub fn trace(&self, x: &ModelInput) -> Result<(Tensor2, Tensor2, Interaction, f64), ModelError> {
        self.check_input(x)?;
        let mut t = Tape::new();
        let v = self.register(&mut t);
        let gr = self.graph(&mut t, &v, x, DropoutMode::Off)?;
        let interaction = Interaction {
            m: t.value(gr.m).data.clone(),
            scores: t.value(gr.s).data.clone(),
            attention: gr.attention.iter().map(|&a| t.value(a).clone()).collect(),
        };
        Ok((
            t.value(gr.e).clone(),
            t.value(gr.g).clone(),
            interaction,
            sigmoid(t.value(gr.logit).data[0]),
        ))
    }

    /// Binary cross-entropy and its gradient for every parameter, in
    /// [`parameters`](Self::parameters) order.
    pub fn loss_and_gradients(
        &self,
        x: &ModelInput,
        label: bool,
        dropout: DropoutMode<'_>,
    ) -> Result<(f64, Vec<Tensor2>), ModelError> {
        self.check_input(x)?;
        let mut t = Tape::new();
        let v = self.register(&mut t);
        let gr = self.graph(&mut t, &v, x, dropout)?;
        let loss = t.bce_with_logits(gr.logit, if label { 1.0 } else { 0.0 })?;
        let mut grads = t.backward(loss)?;
        let value = t.value(loss).data[0];
        let out = v
            .flat
            .iter()
            .map(|&p| {
                grads.take(p).unwrap_or_else(|| {
                    let s = t.value(p);
                    Tensor2::zeros(s.rows, s.cols)
                })
            })
            .collect();
        Ok((value, out))
    }

    /// Normalises a raw record with the embedded statistics, if any.
    pub fn prepare(&self, r: &FeatureRecord) -> ModelInput {
        match &self.normalizer {
            Some(stats) => ModelInput::from_normalized(&stats.apply(r)),
            None => ModelInput::from_normalized(r),
        }
    }

    pub fn predict(&self, r: &FeatureRecord) -> Result<PredictionReport, ModelError> {
        self.report(r, self.sha256()?)
    }

    /// Predictions in input order; the model hash is computed once.
    pub fn predict_batch(&self, records: &[FeatureRecord]) -> Result<Vec<PredictionReport>, ModelError> {
        let hash = self.sha256()?;
        records.par_iter().map(|r| self.report(r, hash.clone())).collect()
    }

    fn report(&self, r: &FeatureRecord, model_sha256: String) -> Result<PredictionReport, ModelError> {
        let (probability, scores) = self.forward(&self.prepare(r))?;
        let contributions = feature_names().into_iter().zip(scores.iter().copied()).collect();
        Ok(PredictionReport {
            scan_id: r.scan_id.clone(),
            probability,
            scores,
            contributions,
            model_sha256,
        })
    }

    fn file_body(&self) -> ModelBody {
        ModelBody {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            params: self.parameters().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    /// SHA-256 of the canonical serialisation of config and parameters.
    pub fn sha256(&self) -> Result<String, ModelError> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&self.file_body())?)))
    }

    /// Serialised model file bytes.
    pub fn to_file_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let body = self.file_body();
        let sha256 = hex::encode(Sha256::digest(serde_json::to_vec(&body)?));
        let mut out = serde_json::to_vec(&ModelFile { body, sha256 })?;
        out.push(b'\n');
        Ok(out)
    }

    /// Parses model file bytes. The file must be exactly the canonical
    /// serialisation of its content, so any edit that survives parsing
    /// still fails the checksum.
    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_slice(bytes)?;
        if file.body.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: file.body.format_version,
            });
        }
        let canonical = serde_json::to_vec(&file.body)?;
        let computed = hex::encode(Sha256::digest(&canonical));
        if computed != file.sha256 {
            return Err(ModelError::HashMismatch {
                stored: file.sha256,
                computed,
            });
        }
        let mut expected = serde_json::to_vec(&file)?;
        expected.push(b'\n');
        if expected != bytes {
            return Err(ModelError::HashMismatch {
                stored: file.sha256,
                computed: hex::encode(Sha256::digest(bytes)),
            });
        }
        let mut model = FusionModel::new(file.body.config)?;
        model.normalizer = file.body.normalizer;
        let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
        if names.len() != file.body.params.len() {
            return Err(ModelError::Parameter(
                "*".into(),
                format!("expected {} arrays, found {}", names.len(), file.body.params.len()),
            ));
        }
        let mut params = file.body.params;
        for (name, slot) in names.iter().zip(model.parameters_mut()) {
            let t = params
                .shift_remove(name)
                .ok_or_else(|| ModelError::Parameter(name.clone(), "missing".into()))?;
            if t.shape() != slot.shape() || t.data.len() != t.rows * t.cols {
                return Err(ModelError::Parameter(
                    name.clone(),
                    format!("shape {:?}, expected {:?}", t.shape(), slot.shape()),
                ));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_file_bytes()?)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_file_bytes(&std::fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelBody {
    format_version: u32,
    config: FusionConfig,
    normalizer: Option<NormalizationStats>,
    params: IndexMap<String, Tensor2>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(flatten)]
    body: ModelBody,
    sha256: String,
}
