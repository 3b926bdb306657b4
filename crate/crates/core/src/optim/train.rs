use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use log::info;
use rand::seq::SliceRandom;

use super::{adam_step, differential_multipliers, AdamConfig, AdamState, OptimError, Result, Schedule, Sgdr, DEFAULT_TIERS};
use crate::dataio::{augment, SamplePair};
use crate::ndtensor::{Graph, Tensor, Var};
use crate::resnet::{ForwardOptions, ForwardPass, Model};
use crate::rng::stream_rng;

const SHUFFLE_KEY: u64 = 0x7368_7566;
const AUGMENT_KEY: u64 = 0x6175_676d;

pub const HISTORY_COLUMNS: [&str; 6] = ["epoch", "phase", "lr", "train_loss", "valid_loss", "valid_mae"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Epochs with only the final stage and heads trainable.
    pub epochs_frozen: usize,
    /// Epochs with every group trainable at differential rates.
    pub epochs_unfrozen: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    /// `eta_min = lr_max * lr_min_ratio`.
    pub lr_min_ratio: f64,
    pub t0_epochs: usize,
    pub t_mult: usize,
    /// Multipliers from the input side to the output side.
    pub tiers: [f64; 3],
    pub adam: AdamConfig,
    pub augment: bool,
    /// Weight of the cross-entropy term when both heads are present.
    pub bce_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_frozen: 3,
            epochs_unfrozen: 7,
            batch_size: 64,
            lr_max: 3e-3,
            lr_min_ratio: 0.01,
            t0_epochs: 1,
            t_mult: 2,
            tiers: DEFAULT_TIERS,
            adam: AdamConfig::default(),
            augment: true,
            bce_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(OptimError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr_min_ratio >= 0.0 && self.lr_min_ratio < 1.0) {
            return Err(OptimError::Config(format!("lr_min_ratio {} not in [0, 1)", self.lr_min_ratio)));
        }
        if self.tiers.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(OptimError::Config(format!("multipliers must be positive, got {:?}", self.tiers)));
        }
        self.schedule(1).validate()
    }

    fn schedule(&self, steps_per_epoch: usize) -> Schedule {
        Schedule {
            eta_min: self.lr_max * self.lr_min_ratio,
            eta_max: self.lr_max,
            t0: self.t0_epochs * steps_per_epoch,
            t_mult: self.t_mult,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Frozen,
    Unfrozen,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Frozen => "frozen",
            Phase::Unfrozen => "unfrozen",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Base rate at the epoch's first step.
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub valid_mae: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(HISTORY_COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.phase.to_string(),
                r.lr.to_string(),
                r.train_loss.to_string(),
                opt(r.valid_loss),
                opt(r.valid_mae),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score, or the
    /// final parameters when there is no validation data.
    pub model: Model,
    pub final_model: Model,
    pub history: History,
    pub best_epoch: Option<usize>,
}

/// Records the model on `g` and returns the batch loss: mean squared error
/// on z-scored targets, plus weighted cross-entropy on logits when the model
/// has a classification head.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    model: &Model,
    g: &mut Graph,
    images: &Tensor,
    targets_z: &[f64],
    labels: Option<&[f64]>,
    opts: ForwardOptions,
    bce_weight: f64,
) -> Result<(Var, ForwardPass)> {
    let n = images.shape()[0];
    let x = g.constant(images.clone());
    let fwd = model.forward(g, x, opts)?;
    let mut loss = None;
    if let Some(pred) = fwd.regression {
        let t = g.constant(Tensor::new(vec![n, 1], targets_z.to_vec())?);
        loss = Some(g.mse_loss(pred, t)?);
    }
    if let Some(logit) = fwd.logit {
        let labels = labels.ok_or_else(|| OptimError::Config("classification head needs labels".into()))?;
        let t = g.constant(Tensor::new(vec![n, 1], labels.to_vec())?);
        let bce = g.bce_loss(logit, t)?;
        loss = Some(match loss {
            Some(mse) => {
                let w = g.scale(bce, bce_weight)?;
                g.add(mse, w)?
            }
            None => bce,
        });
    }
    let loss = loss.ok_or_else(|| OptimError::Config("model has no head".into()))?;
    Ok((loss, fwd))
}

/// Forward, backward and one Adam update on a single batch. Returns the
/// loss before the update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model,
    state: &mut AdamState,
    images: &Tensor,
    targets_z: &[f64],
    labels: Option<&[f64]>,
    lr: f64,
    multipliers: &[f64],
    bce_weight: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let (loss, fwd) = batch_loss(model, &mut g, images, targets_z, labels, ForwardOptions::train(), bce_weight)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(OptimError::NonFinite {
            what: "loss",
            context: format!("lr {lr}"),
        });
    }
    g.backward(loss)?;
    let grads: Vec<Option<Vec<f64>>> = fwd
        .param_vars
        .iter()
        .enumerate()
        .map(|(i, v)| v.map(|v| g.take_grad(v).unwrap_or_else(|| vec![0.0; model.params()[i].numel()])))
        .collect();
    adam_step(model, &grads, lr, state, multipliers)?;
    model.commit_bn_stats(fwd.bn_stats);
    Ok(value)
}

pub(crate) struct Batch {
    pub images: Tensor,
    pub targets_z: Vec<f64>,
    pub targets_um: Vec<f64>,
    pub labels: Option<Vec<f64>>,
}

pub(crate) fn assemble(
    model: &Model,
    samples: &[SamplePair],
    idx: &[usize],
    augment_epoch: Option<(u64, usize)>,
) -> Result<Batch> {
    let images: Vec<Tensor> = idx
        .iter()
        .map(|&i| match augment_epoch {
            Some((seed, epoch)) => augment(
                &samples[i].image,
                &mut stream_rng(seed, &[AUGMENT_KEY, epoch as u64, i as u64]),
            ),
            None => samples[i].image.clone(),
        })
        .collect();
    let refs: Vec<&Tensor> = images.iter().collect();
    let targets_um: Vec<f64> = idx.iter().map(|&i| samples[i].target_um).collect();
    let labels = if model.config().head.has_classification() {
        let l: Option<Vec<f64>> = idx
            .iter()
            .map(|&i| samples[i].abnormal().map(|a| if a { 1.0 } else { 0.0 }))
            .collect();
        Some(l.ok_or_else(|| {
            OptimError::Config("classification head needs a normative class on every sample".into())
        })?)
    } else {
        None
    };
    Ok(Batch {
        images: Tensor::stack(&refs)?,
        targets_z: targets_um.iter().map(|&t| model.normalize_target(t)).collect(),
        targets_um,
        labels,
    })
}

/// Mean loss and mean absolute error (micrometers) in eval mode.
fn evaluate(model: &Model, samples: &[SamplePair], cfg: &TrainConfig) -> Result<(f64, Option<f64>)> {
    let order: Vec<usize> = (0..samples.len()).collect();
    let (mut loss_sum, mut abs_sum) = (0.0, 0.0);
    for chunk in order.chunks(cfg.batch_size) {
        let b = assemble(model, samples, chunk, None)?;
        let mut g = Graph::new();
        let (loss, fwd) = batch_loss(
            model,
            &mut g,
            &b.images,
            &b.targets_z,
            b.labels.as_deref(),
            ForwardOptions::eval(),
            cfg.bce_weight,
        )?;
        loss_sum += g.value(loss).item()? * chunk.len() as f64;
        if let Some(r) = fwd.regression {
            for (z, t) in g.value(r).data().iter().zip(&b.targets_um) {
                abs_sum += (model.denormalize_target(*z) - t).abs();
            }
        }
    }
    let n = samples.len() as f64;
    let mae = model.config().head.has_regression().then_some(abs_sum / n);
    Ok((loss_sum / n, mae))
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 1.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// Two-phase fine-tuning: first only the final stage and heads, then every
/// group with differential rates. Each phase runs its own warm-restart
/// schedule; a single Adam state spans both. Target normalization is fitted
/// on `train_set` and stored in the model.
pub fn train(model: &Model, train_set: &[SamplePair], valid_set: &[SamplePair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(OptimError::EmptyDataset("training set"));
    }
    let train_patients: BTreeSet<&str> = train_set.iter().map(|s| s.patient_id.as_str()).collect();
    if let Some(s) = valid_set.iter().find(|s| train_patients.contains(s.patient_id.as_str())) {
        return Err(OptimError::Leakage(s.patient_id.clone()));
    }

    let mut model = model.clone();
    let targets: Vec<f64> = train_set.iter().map(|s| s.target_um).collect();
    let (mean, sd) = mean_sd(&targets);
    model.set_target_norm(mean, sd)?;

    let mut state = AdamState::new(&model, cfg.adam);
    let mut history = History::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let mut epoch = 0usize;

    for (phase, epochs) in [(Phase::Frozen, cfg.epochs_frozen), (Phase::Unfrozen, cfg.epochs_unfrozen)] {
        if epochs == 0 {
            continue;
        }
        let multipliers = match phase {
            Phase::Frozen => {
                let groups = model.final_groups();
                model.set_trainable(&groups)?;
                vec![1.0; model.groups().len()]
            }
            Phase::Unfrozen => {
                model.unfreeze_all();
                differential_multipliers(&model, cfg.tiers)
            }
        };
        let mut sched = Sgdr::new(cfg.schedule(steps_per_epoch))?;
        for _ in 0..epochs {
            epoch += 1;
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut stream_rng(cfg.seed, &[SHUFFLE_KEY, epoch as u64]));
            let lr_first = sched.lr();
            let mut loss_sum = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let b = assemble(&model, train_set, chunk, cfg.augment.then_some((cfg.seed, epoch)))?;
                let lr = sched.lr();
                let loss = train_step(
                    &mut model,
                    &mut state,
                    &b.images,
                    &b.targets_z,
                    b.labels.as_deref(),
                    lr,
                    &multipliers,
                    cfg.bce_weight,
                )
                .map_err(|e| match e {
                    OptimError::NonFinite { what, context } => OptimError::NonFinite {
                        what,
                        context: format!("epoch {epoch}, {context}"),
                    },
                    e => e,
                })?;
                loss_sum += loss * chunk.len() as f64;
                sched.advance();
            }
            let train_loss = loss_sum / train_set.len() as f64;
            let (valid_loss, valid_mae) = if valid_set.is_empty() {
                (None, None)
            } else {
                let (l, m) = evaluate(&model, valid_set, cfg)?;
                (Some(l), m)
            };
            info!(
                "epoch {epoch} ({phase}): lr {lr_first:.3e} train {train_loss:.4} valid {} mae {}",
                valid_loss.map_or("-".into(), |v| format!("{v:.4}")),
                valid_mae.map_or("-".into(), |v| format!("{v:.3}")),
            );
            if let Some(score) = valid_mae.or(valid_loss) {
                if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                    best = Some((score, epoch, model.clone()));
                }
            }
            history.records.push(EpochRecord {
                epoch,
                phase,
                lr: lr_first,
                train_loss,
                valid_loss,
                valid_mae,
            });
        }
    }

    model.unfreeze_all();
    let (best_model, best_epoch) = match best {
        Some((_, e, mut m)) => {
            m.unfreeze_all();
            (m, Some(e))
        }
        None => (model.clone(), None),
    };
    Ok(TrainOutcome {
        model: best_model,
        final_model: model,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Diagnosis, Eye, Split, View};
    use crate::resnet::{build_model, Head, ModelConfig};
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            in_channels: 1,
            stem_channels: 4,
            blocks_per_stage: vec![1, 1],
            channels_per_stage: vec![4, 8],
            head: Head::Regression,
        }
    }

    fn samples(n: usize, patients: usize, seed: u64) -> Vec<SamplePair> {
        let mut rng = stream_rng(seed, &[]);
        (0..n)
            .map(|i| {
                let level: f64 = rng.random();
                let data = (0..256).map(|_| (level + 0.1 * rng.random::<f64>()).min(1.0)).collect();
                SamplePair {
                    image: Tensor::new(vec![1, 16, 16], data).unwrap(),
                    target_um: 50.0 + 60.0 * level,
                    patient_id: format!("p{}", i % patients + seed as usize * 1000),
                    eye: Eye::Od,
                    view: View::Mono,
                    split: Split::Train,
                    photo_path: String::new(),
                    diagnosis: Diagnosis::Normal,
                    sap_md_db: 0.0,
                    normative_class: None,
                }
            })
            .collect()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs_frozen: 1,
            epochs_unfrozen: 2,
            batch_size: 8,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_history() {
        let m = build_model(&tiny_config(), 1).unwrap();
        let (tr, va) = (samples(24, 6, 1), samples(8, 2, 2));
        let a = train(&m, &tr, &va, &quick()).unwrap();
        let b = train(&m, &tr, &va, &quick()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        let mut buf = Vec::new();
        a.history.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,phase,lr,train_loss,valid_loss,valid_mae\n1,frozen,"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn frozen_phase_keeps_stem() {
        let m = build_model(&tiny_config(), 1).unwrap();
        let cfg = TrainConfig {
            epochs_unfrozen: 0,
            ..quick()
        };
        let out = train(&m, &samples(16, 4, 1), &[], &cfg).unwrap();
        let stem = m.group_index("stem").unwrap();
        let stage1 = m.group_index("stage1").unwrap();
        for i in 0..m.params().len() {
            let g = m.param_group(i);
            if g == stem || g == stage1 {
                assert_eq!(out.final_model.params()[i], m.params()[i], "{}", m.param_name(i));
            }
        }
        assert_eq!(out.final_model.bn_stats()[0], m.bn_stats()[0]);
        assert_ne!(out.final_model.params(), m.params());
        assert_eq!(out.best_epoch, None);
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let m = build_model(&tiny_config(), 1).unwrap();
        let cfg = TrainConfig {
            epochs_frozen: 0,
            epochs_unfrozen: 0,
            ..quick()
        };
        let out = train(&m, &samples(16, 4, 1), &[], &cfg).unwrap();
        assert_eq!(out.model.params(), m.params());
        assert!(out.history.records.is_empty());
        assert!(out.model.target_norm().1 > 0.0);
    }

    #[test]
    fn rejects_empty_and_leaky_data() {
        let m = build_model(&tiny_config(), 1).unwrap();
        assert!(matches!(train(&m, &[], &[], &quick()), Err(OptimError::EmptyDataset(_))));
        let tr = samples(8, 4, 1);
        assert!(matches!(train(&m, &tr, &tr[..2], &quick()), Err(OptimError::Leakage(_))));
    }

    #[test]
    fn lr_recorded_at_restart_is_max() {
        let m = build_model(&tiny_config(), 1).unwrap();
        let cfg = TrainConfig {
            epochs_unfrozen: 3,
            ..quick()
        };
        let out = train(&m, &samples(16, 4, 1), &[], &cfg).unwrap();
        let lrs: Vec<f64> = out.history.records.iter().map(|r| r.lr).collect();
        // phase starts and the restart after one epoch all begin at the peak; epoch 4 is mid-cycle
        assert_eq!(lrs[..3], [cfg.lr_max; 3]);
        assert!(lrs[3] < cfg.lr_max);
    }
}
