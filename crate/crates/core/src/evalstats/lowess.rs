use super::{check_pair, Result, StatsError};

pub const DEFAULT_SPAN: f64 = 2.0 / 3.0;
pub const DEFAULT_ROBUST_ITERS: usize = 3;

fn tricube(u: f64) -> f64 {
    if u < 1.0 {
        (1.0 - u * u * u).powi(3)
    } else {
        0.0
    }
}

fn bisquare(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (1.0 - u * u).powi(2)
    } else {
        0.0
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Weighted local-linear value at `x0`; falls back to the window mean when `x` has no spread.
fn local_fit(xs: &[f64], ys: &[f64], ws: &[f64], x0: f64) -> f64 {
    let sw: f64 = ws.iter().sum();
    if sw <= 0.0 {
        return ys.iter().sum::<f64>() / ys.len() as f64;
    }
    let xm = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let ym = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - xm) * (x - xm);
        sxy += w * (x - xm) * (y - ym);
    }
    let spread = xs.iter().fold(0.0f64, |m, x| m.max((x - xm).abs()));
    if sxx <= 1e-12 * sw * spread * spread || spread == 0.0 {
        return ym;
    }
    ym + sxy / sxx * (x0 - xm)
}

/// Locally weighted linear smoothing with tricube neighborhood weights over the
/// `ceil(span n)` nearest points and `robust_iters` bisquare reweighting passes.
/// Returns `(x, fitted)` sorted by `x`.
pub fn lowess(x: &[f64], y: &[f64], span: f64, robust_iters: usize) -> Result<Vec<(f64, f64)>> {
    check_pair("lowess", x, y)?;
    let n = x.len();
    if n < 5 {
        return Err(StatsError::TooFew { what: "lowess", need: 5, got: n });
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(StatsError::Arg(format!("lowess span must be in (0, 1], got {span}")));
    }
    let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let k = ((span * n as f64).ceil() as usize).clamp(2, n);

    let mut robust = vec![1.0; n];
    let mut fit = vec![0.0; n];
    let mut w = vec![0.0; k];
    for iter in 0..=robust_iters {
        let mut lo = 0;
        for i in 0..n {
            let x0 = xs[i];
            while lo + k < n && x0 - xs[lo] > xs[lo + k] - x0 {
                lo += 1;
            }
            let win = lo..lo + k;
            let h = (x0 - xs[lo]).max(xs[lo + k - 1] - x0);
            if h == 0.0 {
                let (sw, sy) = win.clone().fold((0.0, 0.0), |(a, b), j| (a + robust[j], b + robust[j] * ys[j]));
                fit[i] = if sw > 0.0 { sy / sw } else { ys[win].iter().sum::<f64>() / k as f64 };
                continue;
            }
            for (slot, j) in w.iter_mut().zip(win.clone()) {
                *slot = tricube((xs[j] - x0).abs() / h) * robust[j];
            }
            fit[i] = local_fit(&xs[win.clone()], &ys[win], &w, x0);
        }
        if iter == robust_iters {
            break;
        }
        let resid: Vec<f64> = ys.iter().zip(&fit).map(|(y, f)| y - f).collect();
        let s = median(&mut resid.iter().map(|r| r.abs()).collect::<Vec<_>>());
        if s == 0.0 {
            break;
        }
        for (r, res) in robust.iter_mut().zip(&resid) {
            *r = bisquare(res / (6.0 * s));
        }
    }
    Ok(xs.into_iter().zip(fit).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_constant_fit() {
        let x: Vec<f64> = (0..20).map(|i| (i * 7 % 20) as f64).collect();
        let fit = lowess(&x, &[3.5; 20], 0.4, 3).unwrap();
        assert!(fit.iter().all(|p| (p.1 - 3.5).abs() < 1e-12));
    }

    #[test]
    fn line_is_recovered() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 4.0).collect();
        for span in [1.0, 0.3] {
            let fit = lowess(&x, &y, span, 0).unwrap();
            for (xi, fi) in fit {
                assert!((fi - (2.5 * xi - 4.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_x_falls_back_to_mean() {
        let fit = lowess(&[1.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 1.0, 0).unwrap();
        assert!(fit.iter().all(|p| p.1 == 3.5));
    }

    #[test]
    fn argument_checks() {
        assert!(lowess(&[1.0; 4], &[1.0; 4], 0.5, 0).is_err());
        assert!(lowess(&[1.0; 6], &[1.0; 6], 0.0, 0).is_err());
        assert!(lowess(&[1.0; 6], &[1.0; 6], 1.5, 0).is_err());
    }

    #[test]
    fn robust_pass_discounts_outlier() {
        let x: Vec<f64> = (0..21).map(|i| i as f64).collect();
        let mut y: Vec<f64> = x.iter().map(|v| 0.5 * v + 0.1 * (1.7 * v).sin()).collect();
        y[10] += 50.0;
        let plain = lowess(&x, &y, 0.5, 0).unwrap();
        let robust = lowess(&x, &y, 0.5, 3).unwrap();
        assert!((robust[10].1 - 5.0).abs() < (plain[10].1 - 5.0).abs());
        assert!((robust[10].1 - 5.0).abs() < 0.5);
    }
}
