use std::fmt::Write as _;

use anyhow::{Context, Result};
use discnet::dataio::{Image, SamplePair};
use discnet::evalstats::{evaluate_series, EvalOptions, PairedSeries};
use discnet::explain::{bmp_data_uri, escape_xml};
use discnet::rng::stream_rng;
use log::warn;
use rand::seq::SliceRandom;

use crate::common::{
    abnormal_call, create_dir, default_outside_below, fmt_prob, fmt_um, load_model, parse_split, predict_all,
    prediction_record, split_samples, write_csv, Prediction, PREDICTION_COLUMNS,
};
use crate::config::{key, usage, Key, RunConfig};

const GALLERY_KEY: u64 = 0x6761_6c6c;

pub const EVAL_KEYS: &[Key] = &[
    key("checkpoint", "", "trained model"),
    key("manifest", "", "manifest CSV"),
    key("split", "", "split.csv written by train or split"),
    key("which", "test", "split to evaluate"),
    key("out", "", "output directory"),
    key("boot", "2000", "bootstrap replicates"),
    key("seed", "0", "bootstrap seed"),
    key("lowess-span", "0.6666666666666666", "LOWESS span"),
    key("lowess-iters", "3", "LOWESS robustness iterations"),
    key("outside-below", "", "thickness cutoff for an abnormal call without a classification head"),
    key("batch-size", "64", "inference batch size"),
    key("stereo", "auto", "auto, mono or stereo"),
];

fn outside_below(cfg: &mut RunConfig) -> Result<f64> {
    match cfg.parse_opt::<f64>("outside-below")? {
        Some(v) => Ok(v),
        None => {
            let v = default_outside_below();
            cfg.set("outside-below", v);
            Ok(v)
        }
    }
}

pub fn eval(cfg: &mut RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let model = load_model(&cfg.path("checkpoint")?)?;
    if !model.config().head.has_regression() {
        return Err(usage("eval needs a checkpoint with a regression head"));
    }
    let opts = EvalOptions {
        n_boot: cfg.parse("boot")?,
        seed: cfg.parse("seed")?,
        lowess_span: cfg.parse("lowess-span")?,
        lowess_iters: cfg.parse("lowess-iters")?,
    };
    let cutoff = outside_below(cfg)?;
    let which = parse_split(cfg, "which")?;
    let samples = split_samples(cfg, &model, which)?;
    let preds = predict_all(&model, &samples, cfg.parse("batch-size")?)?;

    let series = PairedSeries {
        predicted_um: preds.iter().map(|p| p.predicted_um.expect("regression head")).collect(),
        observed_um: samples.iter().map(|s| s.target_um).collect(),
        cluster_id: samples.iter().map(|s| s.cluster().to_string()).collect(),
        group: samples.iter().map(|s| s.diagnosis).collect(),
        sap_md_db: samples.iter().map(|s| s.sap_md_db).collect(),
        reference_class: samples.iter().map(|s| s.normative_class).collect(),
        predicted_abnormal: preds.iter().map(|p| abnormal_call(p, cutoff)).collect(),
    };
    let report = evaluate_series(&series, &opts).with_context(|| format!("evaluating the {which} split"))?;

    create_dir(&out)?;
    report.write_dir(&out, &series).with_context(|| format!("writing report to {}", out.display()))?;
    let records: Vec<Vec<String>> = samples.iter().zip(&preds).map(|(s, p)| prediction_record(s, p, cutoff)).collect();
    write_csv(&out.join("predictions.csv"), &PREDICTION_COLUMNS, &records)?;
    cfg.write_resolved(&out)?;
    print!("{}", report.summary());
    Ok(())
}

pub const GALLERY_KEYS: &[Key] = &[
    key("checkpoint", "", "trained model with a classification head"),
    key("manifest", "", "manifest CSV"),
    key("split", "", "split.csv written by train or split"),
    key("which", "test", "split to sample from"),
    key("out", "", "output directory"),
    key("n", "6", "examples per sheet"),
    key("seed", "0", "sampling seed"),
    key("columns", "3", "tiles per row"),
    key("batch-size", "64", "inference batch size"),
    key("stereo", "auto", "auto, mono or stereo"),
];

const TILE: usize = 160;
const CAPTION: usize = 44;

/// Annotation lines for one example, built from the same strings as `predictions.csv`.
fn caption(s: &SamplePair, p: &Prediction) -> [String; 3] {
    [
        format!("{} {} {}", s.patient_id, s.eye, s.view),
        format!(
            "OCT {} um, predicted {} um",
            fmt_um(s.target_um),
            p.predicted_um.map(fmt_um).unwrap_or_else(|| "n/a".into())
        ),
        format!("P(abnormal) {}", p.prob_abnormal.map(fmt_prob).unwrap_or_else(|| "n/a".into())),
    ]
}

fn contact_sheet(title: &str, items: &[(&SamplePair, &Prediction)], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = items.len().div_ceil(columns).max(1);
    let (w, h) = (columns * (TILE + 10) + 10, rows * (TILE + CAPTION + 10) + 40);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let _ = writeln!(s, "<text x=\"10\" y=\"22\" font-size=\"14\">{}</text>", escape_xml(title));
    if items.is_empty() {
        let _ = writeln!(s, "<text x=\"10\" y=\"50\" font-size=\"12\">no examples</text>");
    }
    for (k, (sample, pred)) in items.iter().enumerate() {
        let x = 10 + (k % columns) * (TILE + 10);
        let y = 34 + (k / columns) * (TILE + CAPTION + 10);
        let img = Image::from_tensor(&sample.image);
        let _ = writeln!(
            s,
            "<image x=\"{x}\" y=\"{y}\" width=\"{TILE}\" height=\"{TILE}\" style=\"image-rendering:pixelated\" href=\"{}\"/>",
            bmp_data_uri(&img)
        );
        for (line, text) in caption(sample, pred).iter().enumerate() {
            let _ = writeln!(
                s,
                "<text x=\"{x}\" y=\"{}\" font-size=\"10\">{}</text>",
                y + TILE + 13 + 13 * line,
                escape_xml(text)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn gallery(cfg: &mut RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let model = load_model(&cfg.path("checkpoint")?)?;
    if !model.config().head.has_classification() {
        return Err(usage("gallery needs a checkpoint with a classification head (train with --head classification or both)"));
    }
    let n: usize = cfg.parse("n")?;
    let seed: u64 = cfg.parse("seed")?;
    let columns: usize = cfg.parse("columns")?;
    let cutoff = default_outside_below();
    let which = parse_split(cfg, "which")?;
    let samples = split_samples(cfg, &model, which)?;
    let preds = predict_all(&model, &samples, cfg.parse("batch-size")?)?;

    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for (i, (s, p)) in samples.iter().zip(&preds).enumerate() {
        let (Some(truth), Some(call)) = (s.abnormal(), abnormal_call(p, cutoff)) else {
            continue;
        };
        if truth == call {
            correct.push(i);
        } else {
            incorrect.push(i);
        }
    }

    create_dir(&out)?;
    for (tag, (name, mut pool)) in [("correct", correct), ("incorrect", incorrect)].into_iter().enumerate() {
        pool.shuffle(&mut stream_rng(seed, &[GALLERY_KEY, tag as u64]));
        if pool.len() < n {
            warn!("only {} {name}ly classified examples available, wanted {n}", pool.len());
        }
        pool.truncate(n);
        let items: Vec<(&SamplePair, &Prediction)> = pool.iter().map(|&i| (&samples[i], &preds[i])).collect();
        let title = format!("{} {name}ly classified ({which} split)", items.len());
        let svg = contact_sheet(&title, &items, columns);
        let path = out.join(format!("{name}.svg"));
        std::fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        let records: Vec<Vec<String>> = pool.iter().map(|&i| prediction_record(&samples[i], &preds[i], cutoff)).collect();
        write_csv(&out.join(format!("{name}.csv")), &PREDICTION_COLUMNS, &records)?;
        println!("{name}: {} examples", items.len());
    }
    cfg.write_resolved(&out)?;
    Ok(())
}
