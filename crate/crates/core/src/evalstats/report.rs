use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::bootstrap::{cluster_mean_diff, Clusters, MeanComparison, DEFAULT_BOOTSTRAP};
use super::lowess::{lowess, DEFAULT_ROBUST_ITERS, DEFAULT_SPAN};
use super::plots::{bland_altman_svg, lowess_svg, roc_svg, scatter_svg, violin_svg};
use super::roc::{compare_auc, roc_auc_ci, sens_at_spec, AucComparison, Direction, RocResult, SensAtSpec};
use super::{bland_altman, classification_accuracy, mae, mean, pearson, sample_sd, BlandAltman, Classification, Result, StatsError};
use crate::dataio::{Diagnosis, NormativeClass};

/// Per-eye predictions with the reference measurement and clinical context.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    pub predicted_um: Vec<f64>,
    pub observed_um: Vec<f64>,
    pub cluster_id: Vec<String>,
    pub group: Vec<Diagnosis>,
    pub sap_md_db: Vec<f64>,
    /// Reference normative classification, when recorded.
    pub reference_class: Vec<Option<NormativeClass>>,
    /// Model call of abnormality, when available.
    pub predicted_abnormal: Option<Vec<bool>>,
}

impl PairedSeries {
    pub fn len(&self) -> usize {
        self.predicted_um.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted_um.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.predicted_um.len();
        if n == 0 {
            return Err(StatsError::Empty("paired series"));
        }
        let lens = [
            self.observed_um.len(),
            self.cluster_id.len(),
            self.group.len(),
            self.sap_md_db.len(),
            self.reference_class.len(),
            self.predicted_abnormal.as_ref().map_or(n, Vec::len),
        ];
        if let Some(&bad) = lens.iter().find(|&&l| l != n) {
            return Err(StatsError::Length {
                what: "paired series",
                a: n,
                b: bad,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub n_boot: usize,
    pub seed: u64,
    pub lowess_span: f64,
    pub lowess_iters: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_boot: DEFAULT_BOOTSTRAP,
            seed: 0,
            lowess_span: DEFAULT_SPAN,
            lowess_iters: DEFAULT_ROBUST_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: Diagnosis,
    pub n: usize,
    pub predicted_mean: f64,
    pub predicted_sd: f64,
    pub observed_mean: f64,
    pub observed_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_rows: usize,
    pub n_clusters: usize,
    pub mae: f64,
    pub pearson_r: f64,
    pub r_squared: f64,
    pub bland_altman: BlandAltman,
    pub mean_comparison: MeanComparison,
    /// Glaucoma vs normal from predicted thickness.
    pub roc_predicted: RocResult,
    /// Glaucoma vs normal from observed thickness.
    pub roc_observed: RocResult,
    pub auc_comparison: AucComparison,
    pub sens_predicted: Vec<SensAtSpec>,
    pub sens_observed: Vec<SensAtSpec>,
    pub classification: Option<Classification>,
    pub groups: Vec<GroupSummary>,
    /// `(thickness, MD)` smooths.
    pub lowess_predicted: Vec<(f64, f64)>,
    pub lowess_observed: Vec<(f64, f64)>,
    pub options: EvalOptions,
}

const SPECIFICITIES: [f64; 2] = [0.80, 0.95];

/// Computes every figure of merit on `s`. Glaucoma-vs-normal analyses drop suspects.
pub fn evaluate_series(s: &PairedSeries, opts: &EvalOptions) -> Result<EvalReport> {
    s.validate()?;
    let clusters = Clusters::new(&s.cluster_id);
    let pearson_r = pearson(&s.predicted_um, &s.observed_um)?;
    let mean_comparison = cluster_mean_diff(&s.predicted_um, &s.observed_um, &clusters, opts.n_boot, opts.seed)?;

    let roc_rows: Vec<usize> = (0..s.len()).filter(|&i| s.group[i] != Diagnosis::Suspect).collect();
    let labels: Vec<bool> = roc_rows.iter().map(|&i| s.group[i] == Diagnosis::Glaucoma).collect();
    let pred: Vec<f64> = roc_rows.iter().map(|&i| s.predicted_um[i]).collect();
    let obs: Vec<f64> = roc_rows.iter().map(|&i| s.observed_um[i]).collect();
    let roc_clusters = Clusters::new(&roc_rows.iter().map(|&i| s.cluster_id[i].as_str()).collect::<Vec<_>>());
    let dir = Direction::LowerIsDisease;
    let roc_predicted = roc_auc_ci(&pred, &labels, dir, &roc_clusters, opts.n_boot, opts.seed)?;
    let roc_observed = roc_auc_ci(&obs, &labels, dir, &roc_clusters, opts.n_boot, opts.seed)?;
    let auc_comparison = compare_auc(&pred, &obs, &labels, dir, &roc_clusters, opts.n_boot, opts.seed)?;
    let sens = |scores: &[f64]| -> Result<Vec<SensAtSpec>> {
        SPECIFICITIES
            .iter()
            .map(|&sp| sens_at_spec(scores, &labels, dir, sp, &roc_clusters, opts.n_boot, opts.seed))
            .collect()
    };

    let classification = match &s.predicted_abnormal {
        Some(calls) => {
            let rows: Vec<usize> = (0..s.len()).filter(|&i| s.reference_class[i].is_some()).collect();
            if rows.is_empty() {
                None
            } else {
                let p: Vec<&str> = rows.iter().map(|&i| if calls[i] { "abnormal" } else { "normal" }).collect();
                let r: Vec<&str> = rows.iter().map(|&i| s.reference_class[i].expect("filtered").as_str()).collect();
                Some(classification_accuracy(&p, &r)?)
            }
        }
        None => None,
    };

    let groups = [Diagnosis::Normal, Diagnosis::Suspect, Diagnosis::Glaucoma]
        .into_iter()
        .filter_map(|g| {
            let rows: Vec<usize> = (0..s.len()).filter(|&i| s.group[i] == g).collect();
            if rows.is_empty() {
                return None;
            }
            let p: Vec<f64> = rows.iter().map(|&i| s.predicted_um[i]).collect();
            let o: Vec<f64> = rows.iter().map(|&i| s.observed_um[i]).collect();
            let sd = |v: &[f64]| if v.len() > 1 { sample_sd(v) } else { 0.0 };
            Some(GroupSummary {
                group: g,
                n: rows.len(),
                predicted_mean: mean(&p),
                predicted_sd: sd(&p),
                observed_mean: mean(&o),
                observed_sd: sd(&o),
            })
        })
        .collect();

    Ok(EvalReport {
        n_rows: s.len(),
        n_clusters: clusters.len(),
        mae: mae(&s.predicted_um, &s.observed_um)?,
        pearson_r,
        r_squared: pearson_r * pearson_r,
        bland_altman: bland_altman(&s.predicted_um, &s.observed_um)?,
        mean_comparison,
        sens_predicted: sens(&pred)?,
        sens_observed: sens(&obs)?,
        roc_predicted,
        roc_observed,
        auc_comparison,
        classification,
        groups,
        lowess_predicted: lowess(&s.predicted_um, &s.sap_md_db, opts.lowess_span, opts.lowess_iters)?,
        lowess_observed: lowess(&s.observed_um, &s.sap_md_db, opts.lowess_span, opts.lowess_iters)?,
        options: *opts,
    })
}

fn io_err(e: impl std::fmt::Display) -> StatsError {
    StatsError::Arg(format!("writing report: {e}"))
}

impl EvalReport {
    /// `(metric, estimate, ci_low, ci_high)`; absent bounds are empty.
    pub fn rows(&self) -> Vec<(String, f64, Option<f64>, Option<f64>)> {
        let mut r: Vec<(String, f64, Option<f64>, Option<f64>)> = vec![
            ("n_rows".into(), self.n_rows as f64, None, None),
            ("n_clusters".into(), self.n_clusters as f64, None, None),
            ("mae_um".into(), self.mae, None, None),
            ("pearson_r".into(), self.pearson_r, None, None),
            ("r_squared".into(), self.r_squared, None, None),
            ("bland_altman_bias_um".into(), self.bland_altman.bias, None, None),
            ("bland_altman_loa_low_um".into(), self.bland_altman.loa_low, None, None),
            ("bland_altman_loa_high_um".into(), self.bland_altman.loa_high, None, None),
            ("mean_predicted_um".into(), self.mean_comparison.mean_a, None, None),
            ("mean_observed_um".into(), self.mean_comparison.mean_b, None, None),
            ("mean_difference_p".into(), self.mean_comparison.p_value, None, None),
            (
                "auc_predicted".into(),
                self.roc_predicted.auc,
                Some(self.roc_predicted.ci_low),
                Some(self.roc_predicted.ci_high),
            ),
            (
                "auc_observed".into(),
                self.roc_observed.auc,
                Some(self.roc_observed.ci_low),
                Some(self.roc_observed.ci_high),
            ),
            ("auc_difference_p".into(), self.auc_comparison.p_value, None, None),
        ];
        for (tag, list) in [("predicted", &self.sens_predicted), ("observed", &self.sens_observed)] {
            for s in list {
                let pct = (s.specificity * 100.0).round();
                r.push((format!("sens_at_spec{pct}_{tag}"), s.sensitivity, Some(s.ci.low), Some(s.ci.high)));
                r.push((format!("threshold_at_spec{pct}_{tag}_um"), s.threshold, None, None));
            }
        }
        if let Some(c) = &self.classification {
            r.push(("classification_accuracy".into(), c.accuracy, None, None));
            for (name, (i, j)) in [("tn", (0, 0)), ("fp", (0, 1)), ("fn", (1, 0)), ("tp", (1, 1))] {
                r.push((format!("confusion_{name}"), c.confusion[i][j] as f64, None, None));
            }
        }
        for g in &self.groups {
            let name = g.group.as_str();
            r.push((format!("n_{name}"), g.n as f64, None, None));
            r.push((format!("predicted_mean_{name}_um"), g.predicted_mean, None, None));
            r.push((format!("predicted_sd_{name}_um"), g.predicted_sd, None, None));
            r.push((format!("observed_mean_{name}_um"), g.observed_mean, None, None));
            r.push((format!("observed_sd_{name}_um"), g.observed_sd, None, None));
        }
        r
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "estimate", "ci_low", "ci_high"]).map_err(io_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (name, est, lo, hi) in self.rows() {
            out.write_record([name, est.to_string(), opt(lo), opt(hi)]).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let ba = &self.bland_altman;
        let _ = writeln!(s, "eyes: {}  participants: {}", self.n_rows, self.n_clusters);
        let _ = writeln!(s, "MAE: {:.2} um", self.mae);
        let _ = writeln!(s, "Pearson r: {:.3}  R^2: {:.1}%", self.pearson_r, 100.0 * self.r_squared);
        let _ = writeln!(s, "Bland-Altman bias {:.2} um, 95% limits {:.2} to {:.2} um", ba.bias, ba.loa_low, ba.loa_high);
        let m = &self.mean_comparison;
        let _ = writeln!(s, "mean predicted {:.1} um vs observed {:.1} um (P = {:.3}; {})", m.mean_a, m.mean_b, m.p_value, m.method);
        for (tag, roc) in [("predicted", &self.roc_predicted), ("observed", &self.roc_observed)] {
            let _ = writeln!(s, "AUC glaucoma vs normal, {tag}: {:.3} (95% CI {:.3} to {:.3})", roc.auc, roc.ci_low, roc.ci_high);
        }
        let _ = writeln!(s, "AUC difference P = {:.3} (cluster bootstrap, B = {})", self.auc_comparison.p_value, self.auc_comparison.n_boot);
        for (tag, list) in [("predicted", &self.sens_predicted), ("observed", &self.sens_observed)] {
            for x in list {
                let _ = writeln!(
                    s,
                    "sensitivity at {:.0}% specificity, {tag}: {:.1}% (95% CI {:.1} to {:.1})",
                    100.0 * x.specificity,
                    100.0 * x.sensitivity,
                    100.0 * x.ci.low,
                    100.0 * x.ci.high
                );
            }
        }
        if let Some(c) = &self.classification {
            let _ = writeln!(s, "normative classification accuracy: {:.1}%", 100.0 * c.accuracy);
        }
        for g in &self.groups {
            let _ = writeln!(
                s,
                "{}: n = {}, predicted {:.1} +/- {:.1} um, observed {:.1} +/- {:.1} um",
                g.group, g.n, g.predicted_mean, g.predicted_sd, g.observed_mean, g.observed_sd
            );
        }
        s
    }

    /// Writes report.csv, summary.txt and the five SVG figures into `dir`.
    pub fn write_dir(&self, dir: &Path, series: &PairedSeries) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut csv_bytes = Vec::new();
        self.write_csv(&mut csv_bytes).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("report.csv"), csv_bytes)?;
        std::fs::write(dir.join("summary.txt"), self.summary())?;
        std::fs::write(dir.join("roc.svg"), roc_svg(&self.roc_predicted, &self.roc_observed))?;
        std::fs::write(dir.join("scatter.svg"), scatter_svg(&series.observed_um, &series.predicted_um))?;
        std::fs::write(dir.join("violin.svg"), violin_svg(series))?;
        std::fs::write(dir.join("bland_altman.svg"), bland_altman_svg(&series.predicted_um, &series.observed_um, &self.bland_altman))?;
        std::fs::write(dir.join("lowess.svg"), lowess_svg(series, &self.lowess_observed, &self.lowess_predicted))?;
        Ok(())
    }
}
