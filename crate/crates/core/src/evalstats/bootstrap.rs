//! Participant-clustered bootstrap: whole clusters are resampled with replacement.

use std::collections::BTreeMap;

use rand::Rng;

use super::{check_pair, mean, Result, StatsError};
use crate::rng::stream_rng;

pub const DEFAULT_BOOTSTRAP: usize = 2000;
pub const GEE_APPROXIMATION: &str = "GEE-approximation (cluster bootstrap)";

const BOOTSTRAP_KEY: u64 = 0x626f_6f74;
/// Redraws allowed for a replicate whose statistic is undefined (for example a single-class resample).
const MAX_REDRAWS: u64 = 1000;

/// Row indices grouped by cluster id, clusters ordered by id so that row order does not matter.
#[derive(Debug, Clone, PartialEq)]
pub struct Clusters {
    groups: Vec<Vec<usize>>,
    n_rows: usize,
}

impl Clusters {
    pub fn new<S: AsRef<str>>(ids: &[S]) -> Self {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            map.entry(id.as_ref()).or_default().push(i);
        }
        Self {
            groups: map.into_values().collect(),
            n_rows: ids.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn resample<R: Rng>(&self, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        for _ in 0..self.groups.len() {
            out.extend_from_slice(&self.groups[rng.random_range(0..self.groups.len())]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    pub n_boot: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_args(what: &'static str, clusters: &Clusters, n_boot: usize) -> Result<()> {
    if clusters.len() < 2 {
        return Err(StatsError::Clusters { what, got: clusters.len() });
    }
    if n_boot < 100 {
        return Err(StatsError::Arg(format!("{what}: need at least 100 bootstrap replicates, got {n_boot}")));
    }
    Ok(())
}

/// Statistic value for each of `n_boot` cluster resamples. Replicate `b` draws from its
/// own keyed stream, so the output does not depend on the number of worker threads.
pub fn replicates<F>(stat: &F, clusters: &Clusters, n_boot: usize, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    let one = |b: usize| -> Result<f64> {
        let mut rows = Vec::with_capacity(clusters.n_rows);
        for attempt in 0..MAX_REDRAWS {
            let mut rng = stream_rng(seed, &[BOOTSTRAP_KEY, b as u64, attempt]);
            clusters.resample(&mut rng, &mut rows);
            if let Some(v) = stat(&rows).filter(|v| v.is_finite()) {
                return Ok(v);
            }
        }
        Err(StatsError::Arg(format!("statistic undefined on {MAX_REDRAWS} consecutive resamples")))
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(n_boot.max(1));
    let chunk = n_boot.div_ceil(workers.max(1));
    let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n_boot)
            .step_by(chunk.max(1))
            .map(|start| {
                let one = &one;
                s.spawn(move || (start..(start + chunk).min(n_boot)).map(one).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bootstrap worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n_boot);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Point estimate on all rows with a 2.5/97.5 percentile interval.
pub fn cluster_bootstrap<F>(stat: F, clusters: &Clusters, n_boot: usize, seed: u64) -> Result<Interval>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    check_args("cluster_bootstrap", clusters, n_boot)?;
    let all: Vec<usize> = (0..clusters.n_rows).collect();
    let estimate = stat(&all).ok_or_else(|| StatsError::Arg("statistic undefined on the full data".into()))?;
    let mut reps = replicates(&stat, clusters, n_boot, seed)?;
    reps.sort_by(f64::total_cmp);
    Ok(Interval {
        estimate,
        low: percentile(&reps, 0.025),
        high: percentile(&reps, 0.975),
        n_boot,
    })
}

/// Two-sided `2 min(P(d <= 0), P(d >= 0))` with the `(count + 1) / (B + 1)` correction, capped at 1.
pub fn bootstrap_p_value(deltas: &[f64]) -> f64 {
    let b = deltas.len() as f64;
    let le = deltas.iter().filter(|&&d| d <= 0.0).count() as f64;
    let ge = deltas.iter().filter(|&&d| d >= 0.0).count() as f64;
    (2.0 * ((le + 1.0) / (b + 1.0)).min((ge + 1.0) / (b + 1.0))).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanComparison {
    pub mean_a: f64,
    pub mean_b: f64,
    pub p_value: f64,
    pub method: &'static str,
}

/// Tests `mean(a - b) = 0` with the clustered bootstrap, standing in for a GEE mean comparison.
pub fn cluster_mean_diff(a: &[f64], b: &[f64], clusters: &Clusters, n_boot: usize, seed: u64) -> Result<MeanComparison> {
    check_pair("cluster_mean_diff", a, b)?;
    if clusters.n_rows != a.len() {
        return Err(StatsError::Length {
            what: "cluster_mean_diff",
            a: a.len(),
            b: clusters.n_rows,
        });
    }
    check_args("cluster_mean_diff", clusters, n_boot)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let stat = |rows: &[usize]| Some(rows.iter().map(|&i| d[i]).sum::<f64>() / rows.len() as f64);
    let deltas = replicates(&stat, clusters, n_boot, seed)?;
    Ok(MeanComparison {
        mean_a: mean(a),
        mean_b: mean(b),
        p_value: bootstrap_p_value(&deltas),
        method: GEE_APPROXIMATION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize, per: usize) -> Vec<String> {
        (0..n * per).map(|i| format!("c{}", i / per)).collect()
    }

    #[test]
    fn constant_data_gives_degenerate_interval() {
        let x = vec![4.5; 30];
        let c = Clusters::new(&ids(10, 3));
        let ci = cluster_bootstrap(|r| Some(r.iter().map(|&i| x[i]).sum::<f64>() / r.len() as f64), &c, 200, 1).unwrap();
        assert_eq!((ci.estimate, ci.low, ci.high), (4.5, 4.5, 4.5));
    }

    #[test]
    fn identical_duplicated_clusters_give_zero_width() {
        let block = [3.0, -1.0, 7.5, 2.25];
        let x: Vec<f64> = block.iter().chain(&block).copied().collect();
        let c = Clusters::new(&ids(2, 4));
        // any statistic: here the variance, sensitive to which rows enter
        let var = |r: &[usize]| {
            let v: Vec<f64> = r.iter().map(|&i| x[i]).collect();
            let m = mean(&v);
            Some(v.iter().map(|a| (a - m).powi(2)).sum::<f64>())
        };
        let ci = cluster_bootstrap(var, &c, 300, 9).unwrap();
        assert_eq!(ci.low, ci.high);
    }

    #[test]
    fn rerun_is_bit_identical() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 7919) % 113) as f64).collect();
        let c = Clusters::new(&ids(20, 2));
        let stat = |r: &[usize]| Some(r.iter().map(|&i| x[i]).sum::<f64>() / r.len() as f64);
        let a = cluster_bootstrap(stat, &c, 500, 3).unwrap();
        let b = cluster_bootstrap(stat, &c, 500, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.low < a.estimate && a.estimate < a.high);
    }

    #[test]
    fn argument_checks() {
        let c = Clusters::new(&["a", "a"]);
        assert!(matches!(cluster_bootstrap(|_| Some(0.0), &c, 200, 0), Err(StatsError::Clusters { .. })));
        let c = Clusters::new(&["a", "b"]);
        assert!(matches!(cluster_bootstrap(|_| Some(0.0), &c, 50, 0), Err(StatsError::Arg(_))));
    }

    #[test]
    fn mean_diff_p_values() {
        let obs: Vec<f64> = (0..60).map(|i| 70.0 + (i % 17) as f64).collect();
        let c = Clusters::new(&ids(30, 2));
        let same = cluster_mean_diff(&obs, &obs, &c, 500, 1).unwrap();
        assert_eq!(same.p_value, 1.0);
        assert_eq!(same.method, GEE_APPROXIMATION);
        let shifted: Vec<f64> = obs.iter().map(|o| o + 10.0).collect();
        let r = cluster_mean_diff(&shifted, &obs, &c, 500, 1).unwrap();
        assert!(r.p_value <= 2.0 / 501.0);
        assert!((r.mean_a - r.mean_b - 10.0).abs() < 1e-12);
    }

    #[test]
    fn percentile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&s, 0.5), 3.0);
        assert_eq!(percentile(&s, 0.125), 1.5);
        assert_eq!(percentile(&s, 1.0), 5.0);
    }
}
