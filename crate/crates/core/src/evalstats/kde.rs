use super::sample_sd;
use super::bootstrap::percentile;

/// `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling back to whichever spread is positive, then to 1.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 1.0;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let sd = sample_sd(xs);
    let iqr = (percentile(&s, 0.75) - percentile(&s, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return 1.0,
    };
    0.9 * spread * (xs.len() as f64).powf(-0.2)
}

/// Gaussian kernel density of `xs` evaluated at `at`.
pub fn gaussian_kde(xs: &[f64], at: &[f64], bandwidth: f64) -> Vec<f64> {
    let norm = 1.0 / (xs.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    at.iter()
        .map(|&t| xs.iter().map(|&x| (-0.5 * ((t - x) / bandwidth).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}
