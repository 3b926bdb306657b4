//! Adam with per-group learning-rate multipliers, cosine annealing with warm
//! restarts, the LR range test, and the two-phase fine-tuning loop.

mod lr_find;
mod train;

pub use lr_find::{find_lr, geometric_lrs, lr_range_test, LrRangeResult, SMOOTHING};
pub use train::{
    batch_loss, train, train_step, EpochRecord, History, Phase, TrainConfig, TrainOutcome, HISTORY_COLUMNS,
};

use thiserror::Error;

use crate::dataio::DataError;
use crate::ndtensor::TensorError;
use crate::resnet::{Model, ResnetError};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid optimizer setting: {0}")]
    Config(String),
    #[error("{0} is empty")]
    EmptyDataset(&'static str),
    #[error("non-finite {what} ({context})")]
    NonFinite { what: &'static str, context: String },
    #[error("patient `{0}` appears in both training and validation data")]
    Leakage(String),
    #[error(transparent)]
    Model(#[from] ResnetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, param: usize) -> &[f64] {
        &self.m[param]
    }

    pub fn second_moment(&self, param: usize) -> &[f64] {
        &self.v[param]
    }
}

/// One bias-corrected Adam update. `grads[i]` is `None` for parameters
/// outside the trainable set; those are left untouched along with their
/// moments. The effective rate of parameter `i` is
/// `base_lr * multipliers[group(i)]`.
pub fn adam_step(
    model: &mut Model,
    grads: &[Option<Vec<f64>>],
    base_lr: f64,
    state: &mut AdamState,
    multipliers: &[f64],
) -> Result<()> {
    if grads.len() != model.params().len() || state.m.len() != grads.len() {
        return Err(OptimError::Config(format!(
            "{} gradients for {} parameters",
            grads.len(),
            model.params().len()
        )));
    }
    if multipliers.len() != model.groups().len() || multipliers.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(OptimError::Config(format!(
            "need {} non-negative group multipliers, got {multipliers:?}",
            model.groups().len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.len() != state.m[i].len() {
                return Err(OptimError::Config(format!("gradient {i} has {} entries", g.len())));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(OptimError::NonFinite {
                    what: "gradient",
                    context: model.param_name(i).to_string(),
                });
            }
        }
    }

    state.t += 1;
    let AdamConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let lr = base_lr * multipliers[model.param_group(i)];
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = model.params_mut()[i].data_mut();
        for j in 0..p.len() {
            let gj = g[j] + weight_decay * p[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Cosine-annealed rate at `step_in_cycle` of a cycle of `cycle_len` steps.
pub fn sgdr_lr(step_in_cycle: usize, cycle_len: usize, eta_min: f64, eta_max: f64) -> Result<f64> {
    if cycle_len == 0 {
        return Err(OptimError::Config("SGDR cycle length must be at least 1".into()));
    }
    if step_in_cycle > cycle_len {
        return Err(OptimError::Config(format!(
            "step {step_in_cycle} beyond cycle length {cycle_len}"
        )));
    }
    let angle = std::f64::consts::PI * step_in_cycle as f64 / cycle_len as f64;
    Ok(eta_min + 0.5 * (eta_max - eta_min) * (1.0 + angle.cos()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub eta_min: f64,
    pub eta_max: f64,
    /// First cycle length in steps.
    pub t0: usize,
    pub t_mult: usize,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_min >= 0.0 && self.eta_min < self.eta_max && self.eta_max.is_finite()) {
            return Err(OptimError::Config(format!(
                "need 0 <= eta_min < eta_max, got {} and {}",
                self.eta_min, self.eta_max
            )));
        }
        if self.t0 == 0 || self.t_mult == 0 {
            return Err(OptimError::Config("T_0 and T_mult must be at least 1".into()));
        }
        Ok(())
    }
}

/// Position within an SGDR schedule. Each cycle visits steps
/// `0..cycle_len`; the next cycle is `t_mult` times longer.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgdr {
    schedule: Schedule,
    cycle_len: usize,
    step_in_cycle: usize,
    cycle: usize,
}

impl Sgdr {
    pub fn new(schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            cycle_len: schedule.t0,
            schedule,
            step_in_cycle: 0,
            cycle: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        sgdr_lr(self.step_in_cycle, self.cycle_len, self.schedule.eta_min, self.schedule.eta_max)
            .expect("step kept inside the cycle")
    }

    pub fn cycle_len(&self) -> usize {
        self.cycle_len
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    pub fn step_in_cycle(&self) -> usize {
        self.step_in_cycle
    }

    pub fn advance(&mut self) {
        self.step_in_cycle += 1;
        if self.step_in_cycle == self.cycle_len {
            self.step_in_cycle = 0;
            self.cycle_len *= self.schedule.t_mult;
            self.cycle += 1;
        }
    }
}

/// Spreads three multipliers over the model's groups, from the input side
/// to the output side: the stem and all but the last two stages take
/// `tiers[0]`, the penultimate stage `tiers[1]`, and the last stage plus the
/// heads `tiers[2]`. A single-stage model has no middle tier.
pub fn differential_multipliers(model: &Model, tiers: [f64; 3]) -> Vec<f64> {
    let k = model.config().stages();
    model
        .groups()
        .iter()
        .map(|g| match g.strip_prefix("stage").and_then(|s| s.parse::<usize>().ok()) {
            Some(s) if s == k => tiers[2],
            Some(s) if s + 1 == k => tiers[1],
            Some(_) => tiers[0],
            None if g.starts_with("head_") => tiers[2],
            None => tiers[0],
        })
        .collect()
}

pub const DEFAULT_TIERS: [f64; 3] = [1.0 / 9.0, 1.0 / 3.0, 1.0];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resnet::{build_model, ModelConfig};

    fn grads_like(model: &Model, f: impl Fn(usize) -> f64) -> Vec<Option<Vec<f64>>> {
        model
            .params()
            .iter()
            .map(|p| Some((0..p.numel()).map(&f).collect()))
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = build_model(&ModelConfig::micro(), 3).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(&m, AdamConfig::default());
        let g = grads_like(&m, |_| 0.0);
        let ones = vec![1.0; m.groups().len()];
        adam_step(&mut m, &g, 0.1, &mut st, &ones).unwrap();
        assert_eq!(m, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut m = build_model(&ModelConfig::micro(), 3).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(&m, AdamConfig::default());
        let g = grads_like(&m, |j| if j % 2 == 0 { 0.37 } else { -2.5 });
        let lr = 1e-3;
        let ones = vec![1.0; m.groups().len()];
        adam_step(&mut m, &g, lr, &mut st, &ones).unwrap();
        for (i, (a, b)) in m.params().iter().zip(before.params()).enumerate() {
            for (j, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
                let sign = g[i].as_ref().unwrap()[j].signum();
                let expect = -lr * sign;
                assert!(((x - y) - expect).abs() <= 1e-6 * lr, "{} vs {}", x - y, expect);
            }
        }
    }

    #[test]
    fn zero_multiplier_freezes_group() {
        let mut m = build_model(&ModelConfig::micro(), 3).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(&m, AdamConfig::default());
        let stem = m.group_index("stem").unwrap();
        let mut mult = vec![1.0; m.groups().len()];
        mult[stem] = 0.0;
        let g = grads_like(&m, |_| 1.0);
        adam_step(&mut m, &g, 0.01, &mut st, &mult).unwrap();
        for i in 0..m.params().len() {
            let same = m.params()[i] == before.params()[i];
            assert_eq!(same, m.param_group(i) == stem, "{}", m.param_name(i));
        }
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut m = build_model(&ModelConfig::micro(), 3).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(&m, AdamConfig::default());
        let mut g = grads_like(&m, |_| 1.0);
        g[2].as_mut().unwrap()[0] = f64::NAN;
        let ones = vec![1.0; m.groups().len()];
        let err = adam_step(&mut m, &g, 0.01, &mut st, &ones).unwrap_err();
        assert!(matches!(err, OptimError::NonFinite { .. }));
        assert_eq!(m, before);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn sgdr_endpoints() {
        assert_eq!(sgdr_lr(0, 10, 0.1, 1.0).unwrap(), 1.0);
        assert!((sgdr_lr(10, 10, 0.1, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((sgdr_lr(5, 10, 0.1, 1.0).unwrap() - 0.55).abs() < 1e-15);
        assert!(sgdr_lr(0, 0, 0.1, 1.0).is_err());
        assert!(sgdr_lr(11, 10, 0.1, 1.0).is_err());
    }

    #[test]
    fn restarts_grow_cycle() {
        let mut s = Sgdr::new(Schedule {
            eta_min: 0.0,
            eta_max: 1.0,
            t0: 3,
            t_mult: 2,
        })
        .unwrap();
        let mut lens = Vec::new();
        let mut restarts = Vec::new();
        for step in 0..21 {
            if s.step_in_cycle() == 0 {
                lens.push(s.cycle_len());
                restarts.push(step);
                assert_eq!(s.lr(), 1.0);
            }
            s.advance();
        }
        assert_eq!(lens, vec![3, 6, 12]);
        assert_eq!(restarts, vec![0, 3, 9]);
    }

    #[test]
    fn schedule_validation() {
        let bad = Schedule {
            eta_min: 1.0,
            eta_max: 1.0,
            t0: 1,
            t_mult: 1,
        };
        assert!(Sgdr::new(bad).is_err());
    }

    #[test]
    fn tiers_by_depth() {
        let m = build_model(&ModelConfig::micro(), 0).unwrap();
        let mult = differential_multipliers(&m, DEFAULT_TIERS);
        let by_name: Vec<(&str, f64)> = m.groups().iter().map(String::as_str).zip(mult).collect();
        assert_eq!(
            by_name,
            vec![
                ("stem", 1.0 / 9.0),
                ("stage1", 1.0 / 3.0),
                ("stage2", 1.0),
                ("head_regression", 1.0)
            ]
        );
    }
}
