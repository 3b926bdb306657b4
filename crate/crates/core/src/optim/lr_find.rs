use rand::seq::SliceRandom;

use super::train::{assemble, train_step};
use super::{AdamState, OptimError, Result, TrainConfig};
use crate::dataio::SamplePair;
use crate::resnet::Model;
use crate::rng::stream_rng;

/// Exponential smoothing factor applied to the loss.
pub const SMOOTHING: f64 = 0.98;
const DIVERGENCE_FACTOR: f64 = 4.0;
const LR_FIND_KEY: u64 = 0x6c72_6669;

#[derive(Debug, Clone, PartialEq)]
pub struct LrRangeResult {
    /// `(lr, smoothed loss)` per completed step.
    pub table: Vec<(f64, f64)>,
    pub suggested_lr: f64,
    pub stopped_early: bool,
}

/// `lr_lo * (lr_hi / lr_lo)^(k / (n - 1))` for `k` in `0..n`.
pub fn geometric_lrs(lr_lo: f64, lr_hi: f64, n_steps: usize) -> Vec<f64> {
    let ratio = lr_hi / lr_lo;
    (0..n_steps)
        .map(|k| lr_lo * ratio.powf(k as f64 / (n_steps - 1) as f64))
        .collect()
}

/// Runs `step(k, lr)` with geometrically growing rates and smooths the
/// returned losses. Stops once the smoothed loss exceeds four times the best
/// seen so far, or when a step reports a non-finite loss. The suggestion is
/// the rate where the smoothed loss falls fastest, divided by ten.
pub fn lr_range_test<F>(lr_lo: f64, lr_hi: f64, n_steps: usize, mut step: F) -> Result<LrRangeResult>
where
    F: FnMut(usize, f64) -> Result<f64>,
{
    if !(lr_lo > 0.0 && lr_lo < lr_hi && lr_hi.is_finite()) {
        return Err(OptimError::Config(format!("need 0 < lr_lo < lr_hi, got {lr_lo} and {lr_hi}")));
    }
    if n_steps < 10 {
        return Err(OptimError::Config(format!("need at least 10 steps, got {n_steps}")));
    }
    let mut table = Vec::with_capacity(n_steps);
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    let mut stopped_early = false;
    for (k, lr) in geometric_lrs(lr_lo, lr_hi, n_steps).into_iter().enumerate() {
        let loss = match step(k, lr) {
            Ok(l) if l.is_finite() => Some(l),
            Ok(_) | Err(OptimError::NonFinite { .. }) => None,
            Err(e) => return Err(e),
        };
        let Some(loss) = loss else {
            if k == 0 {
                return Err(OptimError::NonFinite {
                    what: "loss",
                    context: format!("diverged immediately at lr {lr}"),
                });
            }
            stopped_early = true;
            break;
        };
        avg = SMOOTHING * avg + (1.0 - SMOOTHING) * loss;
        let smoothed = avg / (1.0 - SMOOTHING.powi(k as i32 + 1));
        table.push((lr, smoothed));
        best = best.min(smoothed);
        if smoothed > DIVERGENCE_FACTOR * best {
            stopped_early = true;
            break;
        }
    }
    let steepest = table
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k, w[1].1 - w[0].1))
        .filter(|&(_, d)| d < 0.0)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(k, _)| k);
    Ok(LrRangeResult {
        suggested_lr: table[steepest].0 / 10.0,
        table,
        stopped_early,
    })
}

/// LR range test on a throwaway copy of `model`, cycling through shuffled
/// minibatches of `samples`. Trainable groups are taken as they are set on
/// `model`.
pub fn find_lr(
    model: &Model,
    samples: &[SamplePair],
    cfg: &TrainConfig,
    lr_lo: f64,
    lr_hi: f64,
    n_steps: usize,
) -> Result<LrRangeResult> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(OptimError::EmptyDataset("training set"));
    }
    let mut model = model.clone();
    let targets: Vec<f64> = samples.iter().map(|s| s.target_um).collect();
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let sd = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    model.set_target_norm(mean, if sd > 0.0 { sd } else { 1.0 })?;
    let mut state = AdamState::new(&model, cfg.adam);
    let multipliers = vec![1.0; model.groups().len()];

    let bs = cfg.batch_size.min(samples.len());
    let mut order: Vec<usize> = Vec::new();
    let mut pass = 0u64;
    lr_range_test(lr_lo, lr_hi, n_steps, |_, lr| {
        if order.len() < bs {
            let mut fresh: Vec<usize> = (0..samples.len()).collect();
            fresh.shuffle(&mut stream_rng(cfg.seed, &[LR_FIND_KEY, pass]));
            pass += 1;
            order.extend(fresh);
        }
        let idx: Vec<usize> = order.drain(..bs).collect();
        let b = assemble(&model, samples, &idx, cfg.augment.then_some((cfg.seed, pass as usize)))?;
        train_step(
            &mut model,
            &mut state,
            &b.images,
            &b.targets_z,
            b.labels.as_deref(),
            lr,
            &multipliers,
            cfg.bce_weight,
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_schedule_formula() {
        let lrs = geometric_lrs(1e-5, 1.0, 11);
        for (k, lr) in lrs.iter().enumerate() {
            assert_eq!(*lr, 1e-5 * (1.0f64 / 1e-5).powf(k as f64 / 10.0));
        }
        assert!(lrs.windows(2).all(|w| w[1] > w[0]));
    }

    /// Gradient descent on f(x) = L/2 x^2 diverges for lr > 2/L.
    #[test]
    fn quadratic_suggestion_below_stability_bound() {
        for &curv in &[0.5, 2.0, 10.0, 300.0] {
            let mut x: f64 = 1.0;
            let res = lr_range_test(1e-4 / curv, 100.0 / curv, 200, |_, lr| {
                let loss = 0.5 * curv * x * x;
                x -= lr * curv * x;
                Ok(loss)
            })
            .unwrap();
            assert!(res.suggested_lr < 2.0 / curv, "L={curv}: {}", res.suggested_lr);
            assert!(res.suggested_lr > 0.0);
            assert!(res.stopped_early);
            assert!(res.table.windows(2).all(|w| w[1].0 > w[0].0));
        }
    }

    #[test]
    fn immediate_divergence_is_an_error() {
        let r = lr_range_test(1e-3, 1.0, 20, |_, _| Ok(f64::NAN));
        assert!(matches!(r, Err(OptimError::NonFinite { .. })));
    }

    #[test]
    fn argument_checks() {
        assert!(lr_range_test(1.0, 0.1, 20, |_, _| Ok(1.0)).is_err());
        assert!(lr_range_test(0.1, 1.0, 9, |_, _| Ok(1.0)).is_err());
    }

    #[test]
    fn later_divergence_stops_early() {
        let r = lr_range_test(1e-3, 1.0, 50, |k, _| Ok(if k < 20 { 1.0 / (k + 1) as f64 } else { f64::INFINITY }))
            .unwrap();
        assert!(r.stopped_early);
        assert_eq!(r.table.len(), 20);
    }
}
