use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::explain::explain;
use super::manifest::{sibling, RunManifest};
use super::{
    Cli, CliError, Command, EvaluateArgs, ExplainArgs, FeaturizeArgs, Format, PhantomArgs, PredictArgs, RunConfig,
    ScanArgs, TrainArgs,
};
use crate::biomarkers::io::{write_csv, write_json, BiomarkerRow};
use crate::biomarkers::{extract_all, ScanMasks};
use crate::evaluation::{evaluate, mcnemar_test, roc_curve, select_threshold, McNemar, MetricsReport, ThresholdChoice};
use crate::features::{
    fit_normalizer, import_features, stub_featurize, write_features_csv, write_features_json, FeatureRecord,
};
use crate::fusion::{feature_names, FusionModel, PredictionReport};
use crate::phantom::{bundled, generate, PhantomSpec};
use crate::training::{split_train_val, train, TrainHistory};
use crate::volume::{load_mask, load_volume, save_mask, save_volume, CtVolume, LabelMask, MaskSchema};

const DEFAULT_THRESHOLD: f64 = 0.5;

pub(super) fn dispatch(cli: &Cli, cfg: &RunConfig, manifest: &mut RunManifest) -> Result<(), CliError> {
    match &cli.command {
        Command::Extract(a) => cmd_extract(cli, cfg, manifest, a),
        Command::Featurize(a) => cmd_featurize(cli, cfg, manifest, a),
        Command::Train(a) => cmd_train(cli, cfg, manifest, a),
        Command::Predict(a) => cmd_predict(cli, cfg, manifest, a),
        Command::Explain(a) => cmd_explain(cli, cfg, manifest, a),
        Command::Evaluate(a) => cmd_evaluate(cli, cfg, manifest, a),
        Command::Phantom(a) => cmd_phantom(cli, manifest, a),
    }
}

/// Writes to `--out` when given, stdout otherwise.
fn emit(cli: &Cli, manifest: &mut RunManifest, bytes: &[u8]) -> Result<(), CliError> {
    match &cli.out {
        Some(path) => write_file(manifest, path, bytes),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn write_file(manifest: &mut RunManifest, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::input(path, e))?;
    manifest.add_output(path)
}

fn required_out(cli: &Cli) -> Result<&Path, CliError> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{} needs --out", cli.command.name())))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serialisable output");
    v.push(b'\n');
    v
}

/// One scan's inputs.
#[derive(Debug, Clone)]
struct ScanJob {
    scan_id: String,
    volume: PathBuf,
    masks: [Option<PathBuf>; 4],
    label: Option<bool>,
}

const MASK_SCHEMAS: [MaskSchema; 4] = [
    MaskSchema::Pericardium,
    MaskSchema::Calcium,
    MaskSchema::Aorta,
    MaskSchema::Lungs,
];

#[derive(Debug, Deserialize)]
struct ScanManifestRow {
    scan_id: String,
    volume: String,
    #[serde(default)]
    pericardium: String,
    #[serde(default)]
    calcium: String,
    #[serde(default)]
    aorta: String,
    #[serde(default)]
    lungs: String,
    #[serde(default)]
    label: String,
}

fn read_scan_manifest(path: &Path) -> Result<Vec<ScanJob>, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |s: &str| (!s.is_empty()).then(|| base.join(s));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::input(path, e))?;
    let mut jobs = Vec::new();
    for row in rdr.deserialize::<ScanManifestRow>() {
        let row = row.map_err(|e| CliError::input(path, e))?;
        let label = match row.label.trim() {
            "" => None,
            "1" => Some(true),
            "0" => Some(false),
            other => return Err(CliError::Usage(format!("scan {}: label {other:?} is not 0 or 1", row.scan_id))),
        };
        jobs.push(ScanJob {
            volume: base.join(&row.volume),
            masks: [
                resolve(&row.pericardium),
                resolve(&row.calcium),
                resolve(&row.aorta),
                resolve(&row.lungs),
            ],
            scan_id: row.scan_id,
            label,
        });
    }
    Ok(jobs)
}

fn scan_jobs(a: &ScanArgs, label: Option<bool>, manifest: &mut RunManifest) -> Result<Vec<ScanJob>, CliError> {
    let jobs = match (&a.batch, &a.volume) {
        (Some(batch), _) => {
            manifest.add_input(batch)?;
            read_scan_manifest(batch)?
        }
        (None, Some(volume)) => vec![ScanJob {
            scan_id: a.scan_id.clone(),
            volume: volume.clone(),
            masks: [a.pericardium.clone(), a.calcium.clone(), a.aorta.clone(), a.lungs.clone()],
            label,
        }],
        (None, None) => return Err(CliError::Usage("give --volume or --batch".into())),
    };
    for job in &jobs {
        for p in std::iter::once(&job.volume).chain(job.masks.iter().flatten()) {
            if p.exists() {
                manifest.add_input(p)?;
            }
        }
    }
    Ok(jobs)
}

struct LoadedScan {
    volume: CtVolume,
    masks: [Option<LabelMask>; 4],
}

impl LoadedScan {
    fn load(job: &ScanJob) -> Result<Self, CliError> {
        let volume = load_volume(&job.volume)?;
        let mut masks: [Option<LabelMask>; 4] = Default::default();
        for (k, p) in job.masks.iter().enumerate() {
            if let Some(p) = p {
                masks[k] = Some(load_mask(p, MASK_SCHEMAS[k])?);
            }
        }
        Ok(Self { volume, masks })
    }

    fn scan_masks(&self) -> ScanMasks<'_> {
        ScanMasks {
            pericardium: self.masks[0].as_ref(),
            calcium: self.masks[1].as_ref(),
            aorta: self.masks[2].as_ref(),
            lungs: self.masks[3].as_ref(),
        }
    }
}

/// Runs `f` over every job in parallel, keeping input order. Failed scans
/// are reported and skipped; any failure makes the command fail after the
/// successful rows are written.
fn run_batch<T: Send>(
    jobs: &[ScanJob],
    f: impl Fn(&ScanJob) -> Result<T, CliError> + Sync,
) -> Result<(Vec<T>, Option<CliError>), CliError> {
    let results: Vec<Result<T, CliError>> = jobs.par_iter().map(&f).collect();
    let mut ok = Vec::new();
    let mut failed = 0;
    let mut only_error = None;
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                if jobs.len() > 1 {
                    eprintln!("scan {}: {e}", job.scan_id);
                }
                failed += 1;
                only_error = Some(e);
            }
        }
    }
    match (failed, jobs.len()) {
        (0, _) => Ok((ok, None)),
        (1, 1) => Err(only_error.expect("one failure recorded")),
        (failed, total) => Ok((ok, Some(CliError::PartialFailure { failed, total }))),
    }
}

fn cmd_extract(cli: &Cli, cfg: &RunConfig, manifest: &mut RunManifest, a: &ScanArgs) -> Result<(), CliError> {
    let jobs = scan_jobs(a, None, manifest)?;
    let (rows, err) = run_batch(&jobs, |job| {
        let scan = LoadedScan::load(job)?;
        let biomarkers = extract_all(&scan.volume, scan.scan_masks())?;
        Ok(BiomarkerRow {
            scan_id: job.scan_id.clone(),
            biomarkers,
        })
    })?;
    let mut buf = Vec::new();
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => write_csv(&mut buf, &rows)?,
        Format::Json => {
            write_json(&mut buf, &rows)?;
            buf.push(b'\n');
        }
    }
    emit(cli, manifest, &buf)?;
    err.map_or(Ok(()), Err)
}

fn cmd_featurize(cli: &Cli, cfg: &RunConfig, manifest: &mut RunManifest, a: &FeaturizeArgs) -> Result<(), CliError> {
    let jobs = scan_jobs(&a.scan, a.label.map(|l| l == 1), manifest)?;
    let (records, err) = run_batch(&jobs, |job| {
        let scan = LoadedScan::load(job)?;
        let heart = scan.masks[0]
            .as_ref()
            .ok_or_else(|| CliError::Usage("featurize needs a pericardium mask".into()))?;
        let x1 = stub_featurize(&scan.volume, heart)?;
        let biomarkers = extract_all(&scan.volume, scan.scan_masks())?;
        Ok(FeatureRecord {
            scan_id: job.scan_id.clone(),
            x1,
            biomarkers,
            label: job.label,
        })
    })?;
    let mut buf = Vec::new();
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => write_features_csv(&mut buf, &records)?,
        Format::Json => {
            write_features_json(&mut buf, &records)?;
            buf.push(b'\n');
        }
    }
    emit(cli, manifest, &buf)?;
    err.map_or(Ok(()), Err)
}

fn read_features(path: &Path, manifest: &mut RunManifest) -> Result<Vec<FeatureRecord>, CliError> {
    manifest.add_input(path)?;
    Ok(import_features(path)?)
}

fn load_model(path: &Path, manifest: &mut RunManifest) -> Result<FusionModel, CliError> {
    manifest.add_input(path)?;
    Ok(FusionModel::load(path)?)
}

/// Written next to the model by `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub model_sha256: String,
    pub n_train: usize,
    pub n_validation: usize,
    pub threshold: ThresholdChoice,
    pub validation: MetricsReport,
    pub history: TrainHistory,
}

fn labels_of(records: &[FeatureRecord]) -> Result<Vec<bool>, CliError> {
    records
        .iter()
        .map(|r| r.label.ok_or_else(|| CliError::Usage(format!("record {} has no label", r.scan_id))))
        .collect()
}

fn cmd_train(cli: &Cli, cfg: &RunConfig, manifest: &mut RunManifest, a: &TrainArgs) -> Result<(), CliError> {
    let out = required_out(cli)?;
    let records = read_features(&a.features, manifest)?;
    let (train_set, val_set) = match &a.val_features {
        Some(p) => (records, read_features(p, manifest)?),
        None => split_train_val(&records, cfg.val_fraction, cfg.seed)?,
    };
    let mut model = FusionModel::new(cfg.model.clone())?;
    model.normalizer = Some(fit_normalizer(&train_set)?);
    let (model, history) = train(model, &train_set, &val_set, &cfg.train)?;
    if let Some(best) = history.best_val_auc {
        log::info!("best validation AUC {best:.4} at epoch {:?}", history.best_epoch);
    }

    let probs: Vec<f64> = model.predict_batch(&val_set)?.iter().map(|r| r.probability).collect();
    let labels = labels_of(&val_set)?;
    let threshold = select_threshold(&probs, &labels)?;
    let validation = evaluate(&probs, &labels, threshold.threshold, cfg.replicates, cfg.seed)?;
    let bytes = model.to_file_bytes()?;
    write_file(manifest, out, &bytes)?;
    let report = TrainReport {
        model_sha256: model.sha256()?,
        n_train: train_set.len(),
        n_validation: val_set.len(),
        threshold,
        validation,
        history,
    };
    write_file(manifest, &sibling(out, "train.json"), &json_bytes(&report))
}

fn predictions_csv(reports: &[PredictionReport]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["scan_id".to_string(), "probability".to_string()];
    header.extend(feature_names());
    w.write_record(&header).map_err(crate::biomarkers::io::TableError::from)?;
    for r in reports {
        let mut row = vec![r.scan_id.clone(), r.probability.to_string()];
        row.extend(r.scores.iter().map(|s| s.to_string()));
        w.write_record(&row).map_err(crate::biomarkers::io::TableError::from)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn cmd_predict(cli: &Cli, cfg: &RunConfig, manifest: &mut RunManifest, a: &PredictArgs) -> Result<(), CliError> {
    let model = load_model(&a.model, manifest)?;
    let records = read_features(&a.features, manifest)?;
    let reports = model.predict_batch(&records)?;
    let bytes = match cfg.format.unwrap_or(Format::Json) {
        Format::Json => json_bytes(&reports),
        Format::Csv => predictions_csv(&reports)?,
    };
    emit(cli, manifest, &bytes)
}

fn cmd_explain(cli: &Cli, cfg: &RunConfig, manifest: &mut RunManifest, a: &ExplainArgs) -> Result<(), CliError> {
    let model = load_model(&a.model, manifest)?;
    let records = read_features(&a.features, manifest)?;
    let record = records
        .iter()
        .find(|r| r.scan_id == a.scan_id)
        .ok_or_else(|| CliError::Usage(format!("scan {} not found in {}", a.scan_id, a.features.display())))?;
    let e = explain(&model.predict(record)?);
    let bytes = match cfg.format {
        None => e.to_text().into_bytes(),
        Some(Format::Csv) => e.to_csv().into_bytes(),
        Some(Format::Json) => json_bytes(&e),
    };
    emit(cli, manifest, &bytes)
}

/// scan_id → probability from a predictions file (JSON reports or CSV).
fn read_predictions(path: &Path) -> Result<HashMap<String, f64>, CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        let reports: Vec<PredictionReport> = serde_json::from_str(&text).map_err(|e| CliError::input(path, e))?;
        return Ok(reports.into_iter().map(|r| (r.scan_id, r.probability)).collect());
    }
    #[derive(Deserialize)]
    struct Row {
        scan_id: String,
        probability: f64,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::input(path, e))?;
    let header = rdr.headers().map_err(|e| CliError::input(path, e))?.clone();
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::input(path, e))?;
            let row: Row = rec.deserialize(Some(&header)).map_err(|e| CliError::input(path, e))?;
            Ok((row.scan_id, row.probability))
        })
        .collect()
}

fn read_labels(path: &Path) -> Result<HashMap<String, bool>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        scan_id: String,
        label: u8,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::input(path, e))?;
    rdr.deserialize::<Row>()
        .map(|r| {
            let r = r.map_err(|e| CliError::input(path, e))?;
            match r.label {
                0 | 1 => Ok((r.scan_id, r.label == 1)),
                other => Err(CliError::Usage(format!("scan {}: label {other} is not 0 or 1", r.scan_id))),
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct EvaluationOutput<'a> {
    #[serde(flatten)]
    metrics: &'a MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    mcnemar: Option<McNemar>,
}

fn cmd_evaluate(cli: &Cli, cfg: &RunConfig, manifest: &mut RunManifest, a: &EvaluateArgs) -> Result<(), CliError> {
    let model = load_model(&a.model, manifest)?;
    let mut records = read_features(&a.features, manifest)?;
    if let Some(p) = &a.labels {
        manifest.add_input(p)?;
        let labels = read_labels(p)?;
        for r in &mut records {
            r.label = Some(
                *labels
                    .get(&r.scan_id)
                    .ok_or_else(|| CliError::Usage(format!("no label for scan {}", r.scan_id)))?,
            );
        }
    }
    let threshold = match (a.threshold, &a.threshold_from) {
        (Some(t), _) => t,
        (None, Some(p)) => {
            manifest.add_input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::input(p, e))?;
            let report: TrainReport = serde_json::from_str(&text).map_err(|e| CliError::input(p, e))?;
            report.threshold.threshold
        }
        (None, None) => cfg.threshold.unwrap_or(DEFAULT_THRESHOLD),
    };
    let labels = labels_of(&records)?;
    let probs: Vec<f64> = model.predict_batch(&records)?.iter().map(|r| r.probability).collect();
    let metrics = evaluate(&probs, &labels, threshold, cfg.replicates, cfg.seed)?;

    let mcnemar = match &a.compare {
        Some(p) => {
            manifest.add_input(p)?;
            let other = read_predictions(p)?;
            let theirs = records
                .iter()
                .map(|r| {
                    other.get(&r.scan_id).map(|&q| q >= threshold).ok_or_else(|| {
                        CliError::Usage(format!("scan {} missing from {}", r.scan_id, p.display()))
                    })
                })
                .collect::<Result<Vec<bool>, _>>()?;
            let ours: Vec<bool> = probs.iter().map(|&q| q >= threshold).collect();
            Some(mcnemar_test(&ours, &theirs, &labels)?)
        }
        None => None,
    };

    let roc_path = a.roc.clone().or_else(|| cli.out.as_deref().map(|o| sibling(o, "roc.csv")));
    match roc_path {
        Some(path) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for pt in roc_curve(&probs, &labels)? {
                w.serialize(pt).map_err(crate::biomarkers::io::TableError::from)?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
            write_file(manifest, &path, &bytes)?;
        }
        None => log::warn!("no --out or --roc given; ROC points not written"),
    }

    let bytes = match cfg.format.unwrap_or(Format::Json) {
        Format::Json => json_bytes(&EvaluationOutput {
            metrics: &metrics,
            mcnemar,
        }),
        Format::Csv => {
            let mut s = String::from("metric,value,lo,hi\n");
            for (name, e) in [
                ("accuracy", metrics.accuracy),
                ("sensitivity", metrics.sensitivity),
                ("specificity", metrics.specificity),
                ("f1", metrics.f1),
                ("auc", metrics.auc),
            ] {
                s.push_str(&format!("{name},{},{},{}\n", e.value, e.lo, e.hi));
            }
            s.into_bytes()
        }
    };
    emit(cli, manifest, &bytes)
}

fn cmd_phantom(cli: &Cli, manifest: &mut RunManifest, a: &PhantomArgs) -> Result<(), CliError> {
    let dir = required_out(cli)?;
    let (name, mut spec) = match (&a.spec, &a.bundled) {
        (Some(p), _) => {
            manifest.add_input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::input(p, e))?;
            let spec = PhantomSpec::from_json(&text).map_err(|e| CliError::input(p, e))?;
            let name = p.file_stem().map_or("phantom".into(), |s| s.to_string_lossy().into_owned());
            (name, spec)
        }
        (None, Some(n)) => (
            n.clone(),
            bundled(n).ok_or_else(|| CliError::Usage(format!("no bundled phantom named {n}")))?,
        ),
        (None, None) => return Err(CliError::Usage("give --spec or --bundled".into())),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    manifest.seed = spec.seed;
    let p = generate(&spec)?;
    std::fs::create_dir_all(dir)?;

    let volume_path = dir.join("volume.ctqh");
    save_volume(&p.volume, &volume_path)?;
    manifest.add_output(&volume_path)?;
    for (mask, schema) in [&p.pericardium, &p.calcium, &p.aorta, &p.lungs].into_iter().zip(MASK_SCHEMAS) {
        let path = dir.join(format!("{}.ctqh", schema.name()));
        save_mask(mask, &path)?;
        manifest.add_output(&path)?;
    }
    write_file(manifest, &dir.join("truth.json"), &json_bytes(&p.truth))?;
    let scans = format!(
        "scan_id,volume,pericardium,calcium,aorta,lungs\n{name},volume.ctqh,pericardium.ctqh,calcium.ctqh,aorta.ctqh,lungs.ctqh\n"
    );
    write_file(manifest, &dir.join("scans.csv"), scans.as_bytes())
}
