use std::fmt;
use std::str::FromStr;

use super::bootstrap::{bootstrap_p_value, cluster_bootstrap, replicates, Clusters, Interval};
use super::{Result, StatsError};

/// Which end of the score scale indicates disease.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HigherIsDisease,
    /// Thickness: thinner is worse.
    LowerIsDisease,
}

impl Direction {
    fn orient(self, s: f64) -> f64 {
        match self {
            Direction::HigherIsDisease => s,
            Direction::LowerIsDisease => -s,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::HigherIsDisease => "higher",
            Direction::LowerIsDisease => "lower",
        })
    }
}

impl FromStr for Direction {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher" => Ok(Direction::HigherIsDisease),
            "lower" => Ok(Direction::LowerIsDisease),
            other => Err(StatsError::Arg(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores at or beyond this value (towards disease) are called positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Zero when no interval was computed (bounds then equal the estimate).
    pub n_boot: usize,
}

fn check_scores(what: &'static str, scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(StatsError::Length {
            what,
            a: scores.len(),
            b: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(StatsError::NonFinite(what));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(StatsError::SingleClass(what));
    }
    Ok(())
}

/// Mann-Whitney AUC from midranks of oriented scores; `None` if a class is absent.
fn auc_of<I: Iterator<Item = (f64, bool)>>(items: I) -> Option<f64> {
    let mut v: Vec<(f64, bool)> = items.collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_case = v.iter().filter(|p| p.1).count();
    let n_ctrl = v.len() - n_case;
    if n_case == 0 || n_ctrl == 0 {
        return None;
    }
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1].0 == v[i].0 {
            j += 1;
        }
        // positions i..=j share the rank (i + 1 + j + 1) / 2
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * v[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_case * (n_case + 1)) as f64 / 2.0;
    Some(u / (n_case * n_ctrl) as f64)
}

fn curve(scores: &[f64], labels: &[bool], dir: Direction) -> Vec<RocPoint> {
    let mut v: Vec<(f64, bool)> = scores.iter().map(|&s| dir.orient(s)).zip(labels.iter().copied()).collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_case = labels.iter().filter(|&&l| l).count() as f64;
    let n_ctrl = labels.len() as f64 - n_case;
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: dir.orient(f64::INFINITY),
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < v.len() {
        let t = v[i].0;
        while i < v.len() && v[i].0 == t {
            if v[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_ctrl,
            tpr: tp as f64 / n_case,
            threshold: dir.orient(t),
        });
    }
    points
}

/// ROC curve over all distinct thresholds, with AUC equal to the Mann-Whitney statistic (ties count one half).
pub fn roc_auc(scores: &[f64], labels: &[bool], dir: Direction) -> Result<RocResult> {
    check_scores("roc_auc", scores, labels)?;
    let auc = auc_of(scores.iter().map(|&s| dir.orient(s)).zip(labels.iter().copied())).expect("both classes checked");
    Ok(RocResult {
        points: curve(scores, labels, dir),
        auc,
        ci_low: auc,
        ci_high: auc,
        n_boot: 0,
    })
}

/// [`roc_auc`] with a participant-clustered percentile interval.
pub fn roc_auc_ci(scores: &[f64], labels: &[bool], dir: Direction, clusters: &Clusters, n_boot: usize, seed: u64) -> Result<RocResult> {
    let mut res = roc_auc(scores, labels, dir)?;
    check_rows("roc_auc", clusters, scores.len())?;
    let stat = |rows: &[usize]| auc_of(rows.iter().map(|&i| (dir.orient(scores[i]), labels[i])));
    let ci = cluster_bootstrap(stat, clusters, n_boot, seed)?;
    res.ci_low = ci.low;
    res.ci_high = ci.high;
    res.n_boot = n_boot;
    Ok(res)
}

fn check_rows(what: &'static str, clusters: &Clusters, n: usize) -> Result<()> {
    if clusters.n_rows() != n {
        return Err(StatsError::Length {
            what,
            a: n,
            b: clusters.n_rows(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucComparison {
    pub auc_a: f64,
    pub auc_b: f64,
    pub p_value: f64,
    pub n_boot: usize,
}

/// Paired comparison of two scores on the same eyes: bootstrap distribution of `auc_a - auc_b`.
pub fn compare_auc(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[bool],
    dir: Direction,
    clusters: &Clusters,
    n_boot: usize,
    seed: u64,
) -> Result<AucComparison> {
    if scores_a.len() != scores_b.len() {
        return Err(StatsError::Length {
            what: "compare_auc",
            a: scores_a.len(),
            b: scores_b.len(),
        });
    }
    let auc_a = roc_auc(scores_a, labels, dir)?.auc;
    let auc_b = roc_auc(scores_b, labels, dir)?.auc;
    check_rows("compare_auc", clusters, labels.len())?;
    if clusters.len() < 2 {
        return Err(StatsError::Clusters {
            what: "compare_auc",
            got: clusters.len(),
        });
    }
    if n_boot < 100 {
        return Err(StatsError::Arg(format!("compare_auc: need at least 100 bootstrap replicates, got {n_boot}")));
    }
    let stat = |rows: &[usize]| {
        let a = auc_of(rows.iter().map(|&i| (dir.orient(scores_a[i]), labels[i])))?;
        let b = auc_of(rows.iter().map(|&i| (dir.orient(scores_b[i]), labels[i])))?;
        Some(a - b)
    };
    let deltas = replicates(&stat, clusters, n_boot, seed)?;
    Ok(AucComparison {
        auc_a,
        auc_b,
        p_value: bootstrap_p_value(&deltas),
        n_boot,
    })
}

/// Sensitivity at the most sensitive threshold whose specificity on controls is at least `spec`.
/// Returns `(sensitivity, threshold)` with the threshold in original score units.
fn sens_point(pairs: &[(f64, bool)], spec: f64) -> Option<(f64, f64)> {
    let mut ctrl: Vec<f64> = pairs.iter().filter(|p| !p.1).map(|p| p.0).collect();
    let cases: Vec<f64> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
    if ctrl.is_empty() || cases.is_empty() {
        return None;
    }
    ctrl.sort_by(f64::total_cmp);
    let mut cands: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    cands.push(f64::INFINITY);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    for t in cands {
        // controls strictly below t are called negative
        let below = ctrl.partition_point(|&c| c < t);
        if below as f64 / ctrl.len() as f64 >= spec {
            let hits = cases.iter().filter(|&&c| c >= t).count();
            return Some((hits as f64 / cases.len() as f64, t));
        }
    }
    unreachable!("the infinite threshold always qualifies")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensAtSpec {
    pub specificity: f64,
    pub sensitivity: f64,
    pub threshold: f64,
    pub ci: Interval,
}

pub fn sens_at_spec(
    scores: &[f64],
    labels: &[bool],
    dir: Direction,
    spec: f64,
    clusters: &Clusters,
    n_boot: usize,
    seed: u64,
) -> Result<SensAtSpec> {
    check_scores("sens_at_spec", scores, labels)?;
    if !(0.0..=1.0).contains(&spec) {
        return Err(StatsError::Arg(format!("specificity must be in [0, 1], got {spec}")));
    }
    check_rows("sens_at_spec", clusters, scores.len())?;
    let oriented: Vec<(f64, bool)> = scores.iter().map(|&s| dir.orient(s)).zip(labels.iter().copied()).collect();
    let (sensitivity, t) = sens_point(&oriented, spec).expect("both classes checked");
    let stat = |rows: &[usize]| {
        let sub: Vec<(f64, bool)> = rows.iter().map(|&i| oriented[i]).collect();
        sens_point(&sub, spec).map(|p| p.0)
    };
    let ci = cluster_bootstrap(stat, clusters, n_boot, seed)?;
    Ok(SensAtSpec {
        specificity: spec,
        sensitivity,
        threshold: dir.orient(t),
        ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Clusters {
        Clusters::new(&(0..n).map(|i| format!("p{i}")).collect::<Vec<_>>())
    }

    #[test]
    fn auc_examples() {
        let hi = Direction::HigherIsDisease;
        assert_eq!(roc_auc(&[0.8, 0.3, 0.5, 0.2], &[true, true, false, false], hi).unwrap().auc, 0.75);
        assert_eq!(roc_auc(&[5.0, 6.0, 1.0, 2.0], &[true, true, false, false], hi).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[3.0; 6], &[true, false, true, false, false, true], hi).unwrap().auc, 0.5);
        assert_eq!(roc_auc(&[1.0, 2.0], &[true, true], hi), Err(StatsError::SingleClass("roc_auc")));
    }

    #[test]
    fn curve_is_monotone_and_spans_unit_square() {
        let s = [0.1, 0.4, 0.4, 0.9, 0.3, 0.7];
        let l = [false, true, false, true, false, true];
        let r = roc_auc(&s, &l, Direction::HigherIsDisease).unwrap();
        assert_eq!((r.points[0].fpr, r.points[0].tpr), (0.0, 0.0));
        let last = r.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in r.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        // trapezoid area under the curve equals the rank statistic
        let area: f64 = r.points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
        assert!((area - r.auc).abs() < 1e-12);
    }

    #[test]
    fn sens_at_spec_hand_case() {
        // controls 60, 70; cases 50, 65; thinner is worse
        let s = [60.0, 70.0, 50.0, 65.0];
        let l = [false, false, true, true];
        let r = sens_at_spec(&s, &l, Direction::LowerIsDisease, 0.95, &ids(4), 200, 1).unwrap();
        assert_eq!(r.sensitivity, 0.5);
        assert!(r.threshold < 60.0);
        let r = sens_at_spec(&s, &l, Direction::LowerIsDisease, 0.5, &ids(4), 200, 1).unwrap();
        assert_eq!((r.sensitivity, r.threshold), (1.0, 65.0));
    }

    #[test]
    fn separated_classes_have_full_sensitivity() {
        let s = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let l = [false, false, false, true, true, true];
        for spec in [0.8, 0.95] {
            let r = sens_at_spec(&s, &l, Direction::HigherIsDisease, spec, &ids(6), 200, 4).unwrap();
            assert_eq!(r.sensitivity, 1.0);
        }
    }

    #[test]
    fn identical_scores_compare_with_p_one() {
        let s: Vec<f64> = (0..40).map(|i| ((i * 31) % 17) as f64).collect();
        let l: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let c = compare_auc(&s, &s, &l, Direction::HigherIsDisease, &ids(40), 300, 2).unwrap();
        assert_eq!(c.p_value, 1.0);
        assert_eq!(c.auc_a, c.auc_b);
        assert!(compare_auc(&s, &s[1..], &l, Direction::HigherIsDisease, &ids(40), 300, 2).is_err());
    }
}
