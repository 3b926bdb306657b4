//! Agreement, correlation, ROC analysis with participant-clustered bootstrap,
//! LOWESS smoothing and normative-classification accuracy.

mod bootstrap;
mod kde;
mod lowess;
mod plots;
mod report;
mod roc;

pub use bootstrap::{
    bootstrap_p_value, cluster_bootstrap, cluster_mean_diff, percentile, replicates, Clusters, Interval, MeanComparison,
    DEFAULT_BOOTSTRAP, GEE_APPROXIMATION,
};
pub use kde::{gaussian_kde, silverman_bandwidth};
pub use lowess::{lowess, DEFAULT_ROBUST_ITERS, DEFAULT_SPAN};
pub use plots::{bland_altman_svg, lowess_svg, roc_svg, scatter_svg, violin_svg};
pub use report::{evaluate_series, EvalOptions, EvalReport, GroupSummary, PairedSeries};
pub use roc::{compare_auc, roc_auc, roc_auc_ci, sens_at_spec, AucComparison, Direction, RocPoint, RocResult, SensAtSpec};

use thiserror::Error;

use crate::dataio::NormativeClass;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{what}: lengths differ ({a} vs {b})")]
    Length { what: &'static str, a: usize, b: usize },
    #[error("{what}: need at least {need} values, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("correlation undefined: {0} is constant")]
    Constant(&'static str),
    #[error("{0}: both classes must be present")]
    SingleClass(&'static str),
    #[error("{what}: need at least 2 clusters, got {got}")]
    Clusters { what: &'static str, got: usize },
    #[error("invalid argument: {0}")]
    Arg(String),
    #[error("unknown class label `{0}`")]
    Label(String),
    #[error("{0}: non-finite value")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_pair(what: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(StatsError::Length { what, a: a.len(), b: b.len() });
    }
    if a.is_empty() {
        return Err(StatsError::Empty(what));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(what));
    }
    Ok(())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n - 1) standard deviation.
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair("mae", pred, obs)?;
    Ok(pred.iter().zip(obs).map(|(p, o)| (p - o).abs()).sum::<f64>() / pred.len() as f64)
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("pearson", x, y)?;
    if x.len() < 3 {
        return Err(StatsError::TooFew { what: "pearson", need: 3, got: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::Constant("first argument"));
    }
    if syy == 0.0 {
        return Err(StatsError::Constant("second argument"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlandAltman {
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Mean difference `pred - obs` with 95% limits of agreement.
pub fn bland_altman(pred: &[f64], obs: &[f64]) -> Result<BlandAltman> {
    check_pair("bland_altman", pred, obs)?;
    if pred.len() < 2 {
        return Err(StatsError::TooFew { what: "bland_altman", need: 2, got: pred.len() });
    }
    let d: Vec<f64> = pred.iter().zip(obs).map(|(p, o)| p - o).collect();
    let bias = mean(&d);
    let half = 1.96 * sample_sd(&d);
    Ok(BlandAltman {
        bias,
        loa_low: bias - half,
        loa_high: bias + half,
    })
}

/// Parses a class label onto the binary normal/abnormal axis. Borderline counts as normal.
pub fn binary_class(label: &str) -> Result<bool> {
    match label.trim().to_ascii_lowercase().as_str() {
        "normal" => Ok(false),
        "abnormal" => Ok(true),
        other => other
            .parse::<NormativeClass>()
            .map(NormativeClass::is_abnormal)
            .map_err(|_| StatsError::Label(label.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub accuracy: f64,
    /// `[[tn, fp], [fn, tp]]`, reference by row, prediction by column.
    pub confusion: [[usize; 2]; 2],
}

pub fn classification_accuracy<A: AsRef<str>, B: AsRef<str>>(predicted: &[A], reference: &[B]) -> Result<Classification> {
    if predicted.len() != reference.len() {
        return Err(StatsError::Length {
            what: "classification_accuracy",
            a: predicted.len(),
            b: reference.len(),
        });
    }
    if predicted.is_empty() {
        return Err(StatsError::Empty("classification_accuracy"));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (p, r) in predicted.iter().zip(reference) {
        let p = binary_class(p.as_ref())? as usize;
        let r = binary_class(r.as_ref())? as usize;
        confusion[r][p] += 1;
    }
    let agree = confusion[0][0] + confusion[1][1];
    Ok(Classification {
        accuracy: agree as f64 / predicted.len() as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[80.0, 90.0], &[82.0, 88.0]).unwrap(), 2.0);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[], &[]), Err(StatsError::Empty("mae")));
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(StatsError::Length { .. })));
    }

    #[test]
    fn pearson_extremes_and_errors() {
        let x = [1.0, 4.0, 2.0, 8.0];
        assert!((pearson(&x, &x.map(|v| 2.0 * v)).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &x.map(|v| 100.0 - v)).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::Constant("first argument")));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFew { .. })));
    }

    #[test]
    fn bland_altman_examples() {
        let z = bland_altman(&[3.0, 4.0, 5.0], &[3.0, 4.0, 5.0]).unwrap();
        assert_eq!((z.bias, z.loa_low, z.loa_high), (0.0, 0.0, 0.0));
        let b = bland_altman(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(b.bias, 0.0);
        assert!((b.loa_high - 2.7719).abs() < 1e-4);
        assert_eq!(b.loa_low, -b.loa_high);
        assert!(bland_altman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn classification_examples() {
        let same = ["within", "outside", "borderline"];
        assert_eq!(classification_accuracy(&same, &same).unwrap().accuracy, 1.0);
        let c = classification_accuracy(&["normal"; 3], &["borderline"; 3]).unwrap();
        assert_eq!(c.accuracy, 1.0);
        assert_eq!(c.confusion, [[3, 0], [0, 0]]);
        let c = classification_accuracy(&["normal", "abnormal", "abnormal", "normal"], &["within", "outside", "within", "within"]).unwrap();
        assert_eq!(c.accuracy, 0.75);
        assert_eq!(c.confusion, [[2, 1], [0, 1]]);
        assert_eq!(classification_accuracy(&["weird"], &["within"]), Err(StatsError::Label("weird".into())));
    }
}
