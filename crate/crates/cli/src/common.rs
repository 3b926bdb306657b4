//! Helpers shared by several subcommands.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use discnet::dataio::{
    build_samples, load_manifest, pair_manifest, read_split_csv, split_by_patient, write_split_csv, ManifestRow,
    PreprocessConfig, SamplePair, Split, SplitAssignment, SplitRatios, StereoMode,
};
use discnet::ndtensor::Tensor;
use discnet::phantom::healthy_percentiles;
use discnet::resnet::{load_checkpoint, Model};
use log::{info, warn};

use crate::config::{usage, RunConfig};

pub const PREDICTION_COLUMNS: [&str; 10] = [
    "patient_id",
    "eye",
    "view",
    "photo_path",
    "diagnosis",
    "normative_class",
    "observed_um",
    "predicted_um",
    "prob_abnormal",
    "predicted_abnormal",
];

/// Loads a manifest, logs its exclusions and keeps one photo per OCT scan.
pub fn load_rows(manifest: &Path) -> Result<(Vec<ManifestRow>, PathBuf)> {
    let load = load_manifest(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    for e in &load.exclusions {
        warn!("manifest line {} ({}): excluded, {}", e.line, e.patient_id, e.reason);
    }
    let rows = pair_manifest(&load.rows);
    info!(
        "{}: {} eligible rows, {} excluded, {} paired",
        manifest.display(),
        load.rows.len(),
        load.exclusions.len(),
        rows.len()
    );
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((rows, dir))
}

pub fn ratios(cfg: &RunConfig) -> Result<SplitRatios> {
    let raw = cfg.str("ratios")?;
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| usage(format!("--ratios {raw}: {e}")))?;
    let [train, valid, test] = parts[..] else {
        return Err(usage(format!("--ratios needs three values train,valid,test, got `{raw}`")));
    };
    SplitRatios::new(train, valid, test).map_err(|e| usage(e.to_string()))
}

pub fn read_assignment(path: &Path) -> Result<SplitAssignment> {
    let f = File::open(path).with_context(|| format!("opening split file {}", path.display()))?;
    read_split_csv(f).with_context(|| format!("reading split file {}", path.display()))
}

/// The `split` file when given, otherwise a fresh patient-level split from `ratios` and `seed`.
pub fn assignment(cfg: &RunConfig, rows: &[ManifestRow]) -> Result<SplitAssignment> {
    if let Some(path) = cfg.opt_path("split") {
        let a = read_assignment(&path)?;
        let missing = rows.iter().filter(|r| !a.contains_key(&r.patient_id)).count();
        if missing > 0 {
            warn!("{missing} manifest rows belong to patients absent from {}", path.display());
        }
        return Ok(a);
    }
    let seed: u64 = cfg.parse("seed")?;
    Ok(split_by_patient(rows.iter().map(|r| r.patient_id.as_str()), &ratios(cfg)?, seed)?)
}

pub fn write_assignment(path: &Path, a: &SplitAssignment) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_split_csv(BufWriter::new(f), a)?;
    Ok(())
}

pub fn stereo_mode(cfg: &RunConfig) -> Result<StereoMode> {
    match cfg.str("stereo")? {
        "auto" => Ok(StereoMode::Auto),
        "mono" => Ok(StereoMode::Mono),
        "stereo" => Ok(StereoMode::Stereo),
        other => Err(usage(format!("--stereo must be auto, mono or stereo, got `{other}`"))),
    }
}

pub fn preprocess_config(model: &Model, cfg: &RunConfig) -> Result<PreprocessConfig> {
    Ok(PreprocessConfig {
        input_size: model.config().input_size,
        channels: model.config().in_channels,
        stereo: stereo_mode(cfg)?,
    })
}

pub fn load_model(path: &Path) -> Result<Model> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn parse_split(cfg: &RunConfig, key: &str) -> Result<Split> {
    cfg.str(key)?.parse().map_err(|e: discnet::dataio::DataError| usage(e.to_string()))
}

/// Samples of one split, built from `manifest` and the `split` file.
pub fn split_samples(cfg: &RunConfig, model: &Model, which: Split) -> Result<Vec<SamplePair>> {
    let (rows, dir) = load_rows(&cfg.path("manifest")?)?;
    let a = read_assignment(&cfg.path("split")?)?;
    let samples = build_samples(&rows, &a, &dir, &preprocess_config(model, cfg)?, Some(which))?;
    if samples.is_empty() {
        bail!("the {which} split has no samples");
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub predicted_um: Option<f64>,
    pub prob_abnormal: Option<f64>,
}

pub fn predict_all(model: &Model, samples: &[SamplePair], batch_size: usize) -> Result<Vec<Prediction>> {
    let head = model.config().head;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = Tensor::stack(&chunk.iter().map(|s| &s.image).collect::<Vec<_>>())?;
        let um = if head.has_regression() { Some(model.predict(&batch)?) } else { None };
        let prob = if head.has_classification() { Some(model.predict_prob(&batch)?) } else { None };
        for i in 0..chunk.len() {
            out.push(Prediction {
                predicted_um: um.as_ref().map(|v| v[i]),
                prob_abnormal: prob.as_ref().map(|v| v[i]),
            });
        }
    }
    Ok(out)
}

/// Default thickness cutoff for an abnormal call: first percentile of the healthy pool.
pub fn default_outside_below() -> f64 {
    healthy_percentiles().0
}

/// Probability above one half when the model has a classification head,
/// otherwise predicted thickness below `outside_below`.
pub fn abnormal_call(p: &Prediction, outside_below: f64) -> Option<bool> {
    p.prob_abnormal
        .map(|q| q > 0.5)
        .or_else(|| p.predicted_um.map(|um| um < outside_below))
}

pub fn fmt_um(v: f64) -> String {
    format!("{v:.2}")
}

pub fn fmt_prob(v: f64) -> String {
    format!("{v:.4}")
}

/// One `predictions.csv` record, formatted exactly as it is written.
pub fn prediction_record(s: &SamplePair, p: &Prediction, outside_below: f64) -> Vec<String> {
    vec![
        s.patient_id.clone(),
        s.eye.to_string(),
        s.view.to_string(),
        s.photo_path.clone(),
        s.diagnosis.to_string(),
        s.normative_class.map(|c| c.to_string()).unwrap_or_default(),
        fmt_um(s.target_um),
        p.predicted_um.map(fmt_um).unwrap_or_default(),
        p.prob_abnormal.map(fmt_prob).unwrap_or_default(),
        abnormal_call(p, outside_below).map(|b| b.to_string()).unwrap_or_default(),
    ]
}

pub fn write_csv(path: &Path, header: &[&str], records: &[Vec<String>]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
