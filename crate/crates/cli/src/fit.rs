use std::fs::File;
use std::io::BufWriter;

use anyhow::{Context, Result};
use discnet::dataio::{build_samples, SamplePair, Split};
use discnet::optim::{find_lr, train as train_model, AdamConfig, LrRangeResult, TrainConfig};
use discnet::resnet::{build_model, save_checkpoint, Head, Model, ModelConfig};
use log::info;

use crate::common::{assignment, create_dir, load_rows, preprocess_config, write_assignment, write_csv};
use crate::config::{key, usage, Key, RunConfig};

pub const TRAIN_KEYS: &[Key] = &[
    key("manifest", "", "manifest CSV"),
    key("out", "", "output directory"),
    key("split", "", "split.csv to reuse; otherwise split by --ratios"),
    key("ratios", "0.7,0.1,0.2", "train,valid,test patient fractions"),
    key("preset", "micro", "architecture: micro or resnet34"),
    key("head", "regression", "regression, classification or both"),
    key("epochs", "", "total epochs; overrides the phase counts"),
    key("epochs-frozen", "3", "epochs training only the last stage and heads"),
    key("epochs-unfrozen", "7", "epochs training every layer"),
    key("batch-size", "64", "minibatch size"),
    key("lr", "3e-3", "peak learning rate, or auto for a range test"),
    key("lr-min-ratio", "0.01", "cosine floor as a fraction of the peak"),
    key("t0", "1", "first restart cycle in epochs"),
    key("t-mult", "2", "cycle length multiplier"),
    key("weight-decay", "0", "L2 penalty"),
    key("bce-weight", "1", "cross-entropy weight when both heads are present"),
    key("augment", "true", "random flips, rotations and photometric jitter"),
    key("stereo", "auto", "auto, mono or stereo"),
    key("lr-find-lo", "1e-6", "range test lower bound"),
    key("lr-find-hi", "1", "range test upper bound"),
    key("lr-find-steps", "100", "range test steps"),
    key("seed", "0", "random seed"),
];

pub const LR_FIND_KEYS: &[Key] = &[
    key("manifest", "", "manifest CSV"),
    key("out", "", "output directory"),
    key("split", "", "split.csv to reuse; otherwise split by --ratios"),
    key("ratios", "0.7,0.1,0.2", "train,valid,test patient fractions"),
    key("preset", "micro", "architecture: micro or resnet34"),
    key("head", "regression", "regression, classification or both"),
    key("batch-size", "64", "minibatch size"),
    key("bce-weight", "1", "cross-entropy weight when both heads are present"),
    key("augment", "true", "random flips, rotations and photometric jitter"),
    key("stereo", "auto", "auto, mono or stereo"),
    key("lo", "1e-6", "lowest learning rate"),
    key("hi", "1", "highest learning rate"),
    key("steps", "100", "number of steps"),
    key("seed", "0", "random seed"),
];

fn initial_model(cfg: &RunConfig) -> Result<Model> {
    let mut mc = ModelConfig::preset(cfg.str("preset")?).map_err(|e| usage(e.to_string()))?;
    mc.head = cfg.str("head")?.parse::<Head>().map_err(|e| usage(e.to_string()))?;
    Ok(build_model(&mc, cfg.parse("seed")?)?)
}

struct Data {
    train: Vec<SamplePair>,
    valid: Vec<SamplePair>,
}

fn load_data(cfg: &RunConfig, model: &Model, out: &std::path::Path) -> Result<Data> {
    let (rows, dir) = load_rows(&cfg.path("manifest")?)?;
    let a = assignment(cfg, &rows)?;
    write_assignment(&out.join("split.csv"), &a)?;
    let all = build_samples(&rows, &a, &dir, &preprocess_config(model, cfg)?, None)?;
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for s in all {
        match s.split {
            Split::Train => train.push(s),
            Split::Valid => valid.push(s),
            Split::Test => {}
        }
    }
    info!("{} training and {} validation samples", train.len(), valid.len());
    Ok(Data { train, valid })
}

fn base_config(cfg: &RunConfig) -> Result<TrainConfig> {
    Ok(TrainConfig {
        batch_size: cfg.parse("batch-size")?,
        augment: cfg.flag("augment")?,
        bce_weight: cfg.parse("bce-weight")?,
        seed: cfg.parse("seed")?,
        ..TrainConfig::default()
    })
}

fn range_test(model: &Model, samples: &[SamplePair], tc: &TrainConfig, lo: f64, hi: f64, steps: usize) -> Result<LrRangeResult> {
    // the range test probes the rate for the first phase
    let mut probe = model.clone();
    probe.set_trainable(&model.final_groups())?;
    Ok(find_lr(&probe, samples, tc, lo, hi, steps)?)
}

fn write_range(path: &std::path::Path, r: &LrRangeResult) -> Result<()> {
    let records: Vec<Vec<String>> = r
        .table
        .iter()
        .enumerate()
        .map(|(k, (lr, loss))| vec![k.to_string(), lr.to_string(), loss.to_string()])
        .collect();
    write_csv(path, &["step", "lr", "smoothed_loss"], &records)
}

pub fn train(cfg: &mut RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let model = initial_model(cfg)?;
    let mut tc = base_config(cfg)?;
    tc.epochs_frozen = cfg.parse("epochs-frozen")?;
    tc.epochs_unfrozen = cfg.parse("epochs-unfrozen")?;
    if let Some(total) = cfg.parse_opt::<usize>("epochs")? {
        tc.epochs_frozen = tc.epochs_frozen.min(total);
        tc.epochs_unfrozen = total - tc.epochs_frozen;
        cfg.set("epochs-frozen", tc.epochs_frozen);
        cfg.set("epochs-unfrozen", tc.epochs_unfrozen);
    }
    tc.lr_min_ratio = cfg.parse("lr-min-ratio")?;
    tc.t0_epochs = cfg.parse("t0")?;
    tc.t_mult = cfg.parse("t-mult")?;
    tc.adam = AdamConfig {
        weight_decay: cfg.parse("weight-decay")?,
        ..AdamConfig::default()
    };
    let auto_lr = cfg.str("lr")? == "auto";
    if !auto_lr {
        tc.lr_max = cfg.parse("lr")?;
    }
    tc.validate().map_err(|e| usage(e.to_string()))?;

    create_dir(&out)?;
    let data = load_data(cfg, &model, &out)?;
    if auto_lr {
        let r = range_test(
            &model,
            &data.train,
            &tc,
            cfg.parse("lr-find-lo")?,
            cfg.parse("lr-find-hi")?,
            cfg.parse("lr-find-steps")?,
        )?;
        write_range(&out.join("lr_find.csv"), &r)?;
        tc.lr_max = r.suggested_lr;
        info!("range test suggests lr {:.3e}", r.suggested_lr);
        cfg.set("lr", r.suggested_lr);
    }
    cfg.write_resolved(&out)?;

    let outcome = train_model(&model, &data.train, &data.valid, &tc)?;
    save_checkpoint(&outcome.model, out.join("model.ckpt"))?;
    save_checkpoint(&outcome.final_model, out.join("final.ckpt"))?;
    let path = out.join("history.csv");
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    outcome.history.write_csv(BufWriter::new(f))?;

    match (outcome.best_epoch, outcome.history.records.iter().find(|r| Some(r.epoch) == outcome.best_epoch)) {
        (Some(e), Some(r)) => println!(
            "trained {} epochs; best epoch {e} (valid MAE {})",
            outcome.history.records.len(),
            r.valid_mae.map_or("-".into(), |m| format!("{m:.3} um"))
        ),
        _ => println!("trained {} epochs; no validation data", outcome.history.records.len()),
    }
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(())
}

pub fn lr_find(cfg: &mut RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let model = initial_model(cfg)?;
    let tc = base_config(cfg)?;
    tc.validate().map_err(|e| usage(e.to_string()))?;
    create_dir(&out)?;
    let data = load_data(cfg, &model, &out)?;
    let r = range_test(&model, &data.train, &tc, cfg.parse("lo")?, cfg.parse("hi")?, cfg.parse("steps")?)?;
    write_range(&out.join("lr_find.csv"), &r)?;
    cfg.write_resolved(&out)?;
    println!(
        "suggested lr {:.3e} after {} steps{}",
        r.suggested_lr,
        r.table.len(),
        if r.stopped_early { " (stopped early on divergence)" } else { "" }
    );
    Ok(())
}
