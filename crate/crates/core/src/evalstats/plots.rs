//! Standalone SVG figures.

use std::fmt::Write as _;

use super::kde::{gaussian_kde, silverman_bandwidth};
use super::report::PairedSeries;
use super::roc::RocResult;
use super::BlandAltman;
use crate::dataio::Diagnosis;

const W: f64 = 420.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const PRED_COLOR: &str = "#c0392b";
const OBS_COLOR: &str = "#2c6fbb";

/// One plotting panel mapping data coordinates onto an SVG region.
struct Panel {
    x0: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

fn padded(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
    (lo - pad, hi + pad)
}

impl Panel {
    fn new(x0: f64, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        Self { x0, x_range, y_range }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + MARGIN + (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * (W - 1.5 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * (H - 1.5 * MARGIN)
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str, title: &str) {
        let (l, r) = (self.x0 + MARGIN, self.x0 + W - MARGIN / 2.0);
        let (t, b) = (MARGIN / 2.0, H - MARGIN);
        let _ = writeln!(s, "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", r - l, b - t);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x_range.0 + f * (self.x_range.1 - self.x_range.0);
            let yv = self.y_range.0 + f * (self.y_range.1 - self.y_range.0);
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{}</text>", self.px(xv), b + 14.0, tick(xv));
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{}</text>", l - 4.0, self.py(yv) + 3.0, tick(yv));
        }
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>", (l + r) / 2.0, H - 12.0, xlabel);
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 {:.1} {:.1})\">{}</text>",
            self.x0 + 12.0,
            (t + b) / 2.0,
            self.x0 + 12.0,
            (t + b) / 2.0,
            ylabel
        );
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"16\" font-size=\"13\" text-anchor=\"middle\">{}</text>", (l + r) / 2.0, title);
    }

    fn polyline(&self, s: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let dash = if dashed { " stroke-dasharray=\"4 3\"" } else { "" };
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>", coords.join(" "));
    }

    fn points(&self, s: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str) {
        for (x, y) in pts {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.5\"/>", self.px(x), self.py(y));
        }
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn open(width: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{H}\" viewBox=\"0 0 {width} {H}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn legend(s: &mut String, x: f64, y: f64, items: &[(&str, &str)]) {
    for (i, (label, color)) in items.iter().enumerate() {
        let yy = y + 14.0 * i as f64;
        let _ = writeln!(s, "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>", yy - 9.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{yy}\" font-size=\"11\">{label}</text>", x + 14.0);
    }
}

pub fn roc_svg(pred: &RocResult, obs: &RocResult) -> String {
    let p = Panel::new(0.0, (0.0, 1.0), (0.0, 1.0));
    let mut s = open(W);
    p.axes(&mut s, "1 - specificity", "sensitivity", "ROC, glaucoma vs normal");
    p.polyline(&mut s, &[(0.0, 0.0), (1.0, 1.0)], "#999999", true);
    for (roc, color) in [(obs, OBS_COLOR), (pred, PRED_COLOR)] {
        let pts: Vec<(f64, f64)> = roc.points.iter().map(|q| (q.fpr, q.tpr)).collect();
        p.polyline(&mut s, &pts, color, false);
    }
    legend(
        &mut s,
        p.px(0.45),
        p.py(0.2),
        &[
            (&format!("photo prediction, AUC {:.3}", pred.auc), PRED_COLOR),
            (&format!("OCT thickness, AUC {:.3}", obs.auc), OBS_COLOR),
        ],
    );
    s.push_str("</svg>\n");
    s
}

pub fn scatter_svg(observed: &[f64], predicted: &[f64]) -> String {
    let range = padded(observed.iter().chain(predicted).copied());
    let p = Panel::new(0.0, range, range);
    let mut s = open(W);
    p.axes(&mut s, "observed RNFL thickness (um)", "predicted RNFL thickness (um)", "Prediction vs measurement");
    p.polyline(&mut s, &[(range.0, range.0), (range.1, range.1)], "#999999", true);
    p.points(&mut s, observed.iter().copied().zip(predicted.iter().copied()), PRED_COLOR);
    s.push_str("</svg>\n");
    s
}

pub fn bland_altman_svg(predicted: &[f64], observed: &[f64], ba: &BlandAltman) -> String {
    let pts: Vec<(f64, f64)> = predicted.iter().zip(observed).map(|(a, b)| ((a + b) / 2.0, a - b)).collect();
    let xr = padded(pts.iter().map(|q| q.0));
    let yr = padded(pts.iter().map(|q| q.1).chain([ba.loa_low, ba.loa_high]));
    let p = Panel::new(0.0, xr, yr);
    let mut s = open(W);
    p.axes(&mut s, "mean of prediction and measurement (um)", "prediction - measurement (um)", "Bland-Altman");
    p.points(&mut s, pts.into_iter(), OBS_COLOR);
    for (y, dashed) in [(ba.bias, false), (ba.loa_low, true), (ba.loa_high, true)] {
        p.polyline(&mut s, &[(xr.0, y), (xr.1, y)], "black", dashed);
    }
    s.push_str("</svg>\n");
    s
}

/// Left: observed thickness vs MD; right: predicted thickness vs MD.
pub fn lowess_svg(series: &PairedSeries, fit_observed: &[(f64, f64)], fit_predicted: &[(f64, f64)]) -> String {
    let xr = padded(series.observed_um.iter().chain(&series.predicted_um).copied());
    let yr = padded(series.sap_md_db.iter().copied());
    let mut s = open(2.0 * W);
    for (i, (xs, fit, title, color)) in [
        (&series.observed_um, fit_observed, "OCT thickness", OBS_COLOR),
        (&series.predicted_um, fit_predicted, "photo prediction", PRED_COLOR),
    ]
    .into_iter()
    .enumerate()
    {
        let p = Panel::new(i as f64 * W, xr, yr);
        p.axes(&mut s, "RNFL thickness (um)", "visual field MD (dB)", title);
        p.points(&mut s, xs.iter().copied().zip(series.sap_md_db.iter().copied()), color);
        p.polyline(&mut s, fit, "black", false);
    }
    s.push_str("</svg>\n");
    s
}

/// Mirrored kernel densities of predicted and observed thickness per diagnosis group.
pub fn violin_svg(series: &PairedSeries) -> String {
    let groups = [Diagnosis::Normal, Diagnosis::Suspect, Diagnosis::Glaucoma];
    let yr = padded(series.observed_um.iter().chain(&series.predicted_um).copied());
    let p = Panel::new(0.0, (0.0, 6.0), yr);
    let mut s = open(W);
    p.axes(&mut s, "normal | suspect | glaucoma", "RNFL thickness (um)", "Distribution by group");
    let grid: Vec<f64> = (0..=80).map(|i| yr.0 + (yr.1 - yr.0) * i as f64 / 80.0).collect();
    for (gi, g) in groups.iter().enumerate() {
        for (k, (values, color)) in [(&series.predicted_um, PRED_COLOR), (&series.observed_um, OBS_COLOR)].into_iter().enumerate() {
            let xs: Vec<f64> = values.iter().zip(&series.group).filter(|(_, gg)| *gg == g).map(|(v, _)| *v).collect();
            if xs.is_empty() {
                continue;
            }
            let dens = gaussian_kde(&xs, &grid, silverman_bandwidth(&xs));
            let peak = dens.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let center = 2.0 * gi as f64 + 0.5 + k as f64;
            let mut outline: Vec<(f64, f64)> = grid.iter().zip(&dens).map(|(y, d)| (center + 0.45 * d / peak, *y)).collect();
            outline.extend(grid.iter().zip(&dens).rev().map(|(y, d)| (center - 0.45 * d / peak, *y)));
            let coords: Vec<String> = outline.iter().map(|&(x, y)| format!("{:.2},{:.2}", p.px(x), p.py(y))).collect();
            let _ = writeln!(s, "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.4\" stroke=\"{color}\"/>", coords.join(" "));
        }
    }
    legend(&mut s, p.px(4.2), p.py(yr.1) + 16.0, &[("prediction", PRED_COLOR), ("OCT", OBS_COLOR)]);
    s.push_str("</svg>\n");
    s
}
