use std::path::Path;

use anyhow::{Context, Result};
use discnet::dataio::{preprocess, Image};
use discnet::explain::{gradcam as cam, write_outputs, CamTarget};
use discnet::ndtensor::Tensor;

use crate::common::{create_dir, fmt_prob, fmt_um, load_model, preprocess_config};
use crate::config::{key, usage, Key, RunConfig};

pub const GRADCAM_KEYS: &[Key] = &[
    key("checkpoint", "", "trained model"),
    key("out", "", "output directory"),
    key("images", "", "comma-separated photo paths (positional paths also accepted)"),
    key("target", "regression", "regression or abnormality"),
    key("alpha", "0.4", "overlay opacity of the heatmap"),
    key("stereo", "auto", "auto, mono or stereo"),
];

pub fn gradcam(cfg: &mut RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let model = load_model(&cfg.path("checkpoint")?)?;
    let target: CamTarget = cfg.str("target")?.parse().map_err(|e: discnet::explain::ExplainError| usage(e.to_string()))?;
    let head = model.config().head;
    match target {
        CamTarget::Abnormality if !head.has_classification() => {
            return Err(usage(format!(
                "--target abnormality needs a classification head, but this checkpoint has a {head} head"
            )))
        }
        CamTarget::Regression if !head.has_regression() => {
            return Err(usage(format!("--target regression needs a regression head, but this checkpoint has a {head} head")))
        }
        _ => {}
    }
    let alpha: f64 = cfg.parse("alpha")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(usage(format!("--alpha must be in [0, 1], got {alpha}")));
    }
    let mut inputs: Vec<String> = cfg
        .opt("images")
        .map(|s| s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect())
        .unwrap_or_default();
    inputs.extend(cfg.positional.iter().cloned());
    if inputs.is_empty() {
        return Err(usage("gradcam needs at least one photo (--images or positional paths)"));
    }
    cfg.set("images", inputs.join(","));
    cfg.positional.clear();

    let pre = preprocess_config(&model, cfg)?;
    create_dir(&out)?;
    let mut written = 0;
    for input in &inputs {
        let path = Path::new(input);
        let views = preprocess(path, &pre).with_context(|| format!("reading {input}"))?;
        let stem = path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
        let names: &[&str] = if views.len() == 2 { &["left", "right"] } else { &["mono"] };
        for (view, name) in views.iter().zip(names) {
            let heat = cam(&model, view, target).with_context(|| format!("Grad-CAM for {input}"))?;
            let caption = describe(&model, view, input, name)?;
            let vstem = if views.len() == 2 { format!("{stem}_{name}") } else { stem.clone() };
            write_outputs(&out, &vstem, &Image::from_tensor(view), &heat, alpha, &caption)?;
            written += 1;
        }
    }
    cfg.write_resolved(&out)?;
    println!("wrote {written} heatmaps to {}", out.display());
    Ok(())
}

fn describe(model: &discnet::resnet::Model, view: &Tensor, input: &str, name: &str) -> Result<String> {
    let batch = view.clone().reshape(vec![1, view.shape()[0], view.shape()[1], view.shape()[2]])?;
    let mut parts = vec![format!("{input} ({name})")];
    if model.config().head.has_regression() {
        parts.push(format!("predicted {} um", fmt_um(model.predict(&batch)?[0])));
    }
    if model.config().head.has_classification() {
        parts.push(format!("P(abnormal) {}", fmt_prob(model.predict_prob(&batch)?[0])));
    }
    Ok(parts.join(", "))
}
