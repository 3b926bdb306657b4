use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use super::{render_eye, render_stereo, PhantomError, PhantomParams, Result, TRUTH_MAX_UM, TRUTH_MIN_UM};
use crate::dataio::{encode_pgm, write_manifest, Diagnosis, Eye, ManifestRow, NormativeClass};
use crate::rng::stream_rng;

const PATIENT_KEY: u64 = 0x7061_7469;
const EYE_KEY: u64 = 0x6579_6573;
const VISIT_KEY: u64 = 0x7669_7369;

/// Disease trajectory of a simulated patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pool {
    Normal,
    Suspect,
    Glaucoma,
}

impl Pool {
    pub const ALL: [Pool; 3] = [Pool::Normal, Pool::Suspect, Pool::Glaucoma];
}

/// Baseline thickness is drawn from a normal with `loc`/`scale` truncated to
/// [40, 130]; the location and scale are solved so that the truncated
/// distribution has mean `target_mean` and SD `target_sd`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolSpec {
    pub target_mean: f64,
    pub target_sd: f64,
    pub loc: f64,
    pub scale: f64,
    /// Thinning rate range, μm per year.
    pub slope: (f64, f64),
}

impl PoolSpec {
    pub fn for_pool(pool: Pool) -> Self {
        match pool {
            Pool::Normal => Self {
                target_mean: 97.6,
                target_sd: 9.3,
                loc: 97.608_80,
                scale: 9.315_32,
                slope: (0.0, 0.5),
            },
            Pool::Suspect => Self {
                target_mean: 87.1,
                target_sd: 12.5,
                loc: 87.110_04,
                scale: 12.532_58,
                slope: (0.0, 1.5),
            },
            Pool::Glaucoma => Self {
                target_mean: 68.8,
                target_sd: 16.0,
                loc: 65.657_085_2,
                scale: 18.666_608_72,
                slope: (0.5, 3.0),
            },
        }
    }

    fn dist(&self) -> StatNormal {
        StatNormal::new(self.loc, self.scale).expect("positive scale")
    }

    /// Inverse-CDF draw from the truncated normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d = self.dist();
        let (lo, hi) = (d.cdf(TRUTH_MIN_UM), d.cdf(TRUTH_MAX_UM));
        let u: f64 = rng.random();
        d.inverse_cdf(lo + u * (hi - lo)).clamp(TRUTH_MIN_UM, TRUTH_MAX_UM)
    }

    /// Quantile `p` of the truncated distribution.
    pub fn quantile(&self, p: f64) -> f64 {
        let d = self.dist();
        let (lo, hi) = (d.cdf(TRUTH_MIN_UM), d.cdf(TRUTH_MAX_UM));
        d.inverse_cdf(lo + p * (hi - lo))
    }
}

/// 1st and 5th percentiles of the healthy pool: below the 5th is borderline,
/// below the 1st is outside normal limits.
pub fn healthy_percentiles() -> (f64, f64) {
    let s = PoolSpec::for_pool(Pool::Normal);
    (s.quantile(0.01), s.quantile(0.05))
}

fn normative_class(truth: f64) -> NormativeClass {
    let (p1, p5) = healthy_percentiles();
    if truth < p1 {
        NormativeClass::Outside
    } else if truth < p5 {
        NormativeClass::Borderline
    } else {
        NormativeClass::Within
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub eyes_per_patient: usize,
    /// Inclusive range of visits per eye.
    pub visits: (usize, usize),
    pub image_size: usize,
    pub stereo: bool,
    pub noise_sd: f64,
    /// Relative frequencies of the normal, suspect and glaucoma pools.
    pub pool_weights: [f64; 3],
    /// Baseline above `normal_above` is normal, below `glaucoma_below` glaucoma.
    pub normal_above: f64,
    pub glaucoma_below: f64,
    pub visit_gap_days: (i64, i64),
    pub oct_jitter_days: i64,
    pub quality_db: (f64, f64),
    pub start: NaiveDate,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 200,
            eyes_per_patient: 2,
            visits: (3, 3),
            image_size: 64,
            stereo: false,
            noise_sd: 0.03,
            pool_weights: [0.35, 0.25, 0.4],
            normal_above: 90.0,
            glaucoma_below: 80.0,
            visit_gap_days: (180, 540),
            oct_jitter_days: 60,
            quality_db: (18.0, 35.0),
            start: NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date"),
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PhantomError::Spec(m.to_string()));
        if self.n_patients < 3 {
            return bad("need at least 3 patients");
        }
        if !(1..=2).contains(&self.eyes_per_patient) {
            return bad("eyes per patient must be 1 or 2");
        }
        if self.visits.0 == 0 || self.visits.0 > self.visits.1 {
            return bad("visit range must be non-empty and start at 1 or more");
        }
        if self.pool_weights.iter().any(|w| !(*w >= 0.0)) || self.pool_weights.iter().sum::<f64>() <= 0.0 {
            return bad("pool weights must be non-negative with a positive sum");
        }
        if self.glaucoma_below > self.normal_above {
            return bad("glaucoma cutoff above normal cutoff");
        }
        if self.visit_gap_days.0 < 1 || self.visit_gap_days.0 > self.visit_gap_days.1 {
            return bad("visit gap range invalid");
        }
        if self.oct_jitter_days < 0 || 2 * self.oct_jitter_days >= self.visit_gap_days.0 {
            return bad("OCT jitter must be under half the minimum visit gap");
        }
        if !(self.quality_db.0 <= self.quality_db.1) {
            return bad("quality range invalid");
        }
        Ok(())
    }

    pub fn diagnosis_for(&self, baseline_um: f64) -> Diagnosis {
        if baseline_um > self.normal_above {
            Diagnosis::Normal
        } else if baseline_um < self.glaucoma_below {
            Diagnosis::Glaucoma
        } else {
            Diagnosis::Suspect
        }
    }
}

/// One photo/OCT visit of one eye, fully determined before any rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedVisit {
    pub patient_id: String,
    pub eye: Eye,
    pub pool: Pool,
    pub visit: usize,
    pub baseline_um: f64,
    pub truth_um: f64,
    pub photo_date: NaiveDate,
    pub oct_date: NaiveDate,
    pub quality_db: f64,
    pub diagnosis: Diagnosis,
    pub sap_md_db: f64,
    pub sap_psd_db: f64,
    pub normative_class: NormativeClass,
    pub params: PhantomParams,
    pub photo_path: String,
}

impl PlannedVisit {
    pub fn manifest_row(&self) -> ManifestRow {
        ManifestRow {
            patient_id: self.patient_id.clone(),
            eye: self.eye,
            photo_path: self.photo_path.clone(),
            photo_date: self.photo_date,
            oct_date: self.oct_date,
            oct_avg_rnfl_um: self.truth_um,
            oct_quality_db: self.quality_db,
            diagnosis: self.diagnosis,
            sap_md_db: self.sap_md_db,
            sap_psd_db: self.sap_psd_db,
            normative_class: Some(self.normative_class),
        }
    }
}

fn round_dp(v: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (v * k).round() / k
}

fn pick_pool<R: Rng + ?Sized>(weights: &[f64; 3], rng: &mut R) -> Pool {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (pool, w) in Pool::ALL.iter().zip(weights) {
        if u < *w {
            return *pool;
        }
        u -= w;
    }
    Pool::ALL[weights.iter().rposition(|w| *w > 0.0).expect("positive weight")]
}

/// Draws the whole cohort: pools, baselines, trajectories, dates, labels and
/// render parameters. Pure; nothing is written.
pub fn plan_cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<PlannedVisit>> {
    spec.validate()?;
    let eyes = [Eye::Od, Eye::Os];
    let md_noise = Normal::new(0.0, 1.0).expect("unit sd");
    let psd_noise = Normal::new(0.0, 0.3).expect("positive sd");
    let mut out = Vec::new();
    for p in 0..spec.n_patients {
        let mut prng = stream_rng(seed, &[PATIENT_KEY, p as u64]);
        let pool = pick_pool(&spec.pool_weights, &mut prng);
        let pool_spec = PoolSpec::for_pool(pool);
        let n_visits = prng.random_range(spec.visits.0..=spec.visits.1);
        let first = spec.start + Duration::days(prng.random_range(0..1500));
        let mut dates = vec![first];
        for _ in 1..n_visits {
            let gap = prng.random_range(spec.visit_gap_days.0..=spec.visit_gap_days.1);
            dates.push(*dates.last().expect("non-empty") + Duration::days(gap));
        }
        let patient_id = format!("P{:04}", p + 1);
        for (e, &eye) in eyes.iter().enumerate().take(spec.eyes_per_patient) {
            let mut erng = stream_rng(seed, &[EYE_KEY, p as u64, e as u64]);
            let baseline = pool_spec.sample(&mut erng);
            let slope = erng.random_range(pool_spec.slope.0..=pool_spec.slope.1);
            let diagnosis = spec.diagnosis_for(round_dp(baseline, 2));
            for (v, &photo_date) in dates.iter().enumerate() {
                let mut vrng = stream_rng(seed, &[VISIT_KEY, p as u64, e as u64, v as u64]);
                let years = (photo_date - first).num_days() as f64 / 365.25;
                let truth = round_dp((baseline - slope * years).max(TRUTH_MIN_UM), 2);
                let jitter = vrng.random_range(-spec.oct_jitter_days..=spec.oct_jitter_days);
                let quality = round_dp(vrng.random_range(spec.quality_db.0..=spec.quality_db.1), 1);
                let md = (0.2 * (truth - 95.0) + md_noise.sample(&mut vrng)).max(-30.0);
                let psd = 1.6 + 0.12 * (90.0 - truth).max(0.0) + f64::abs(psd_noise.sample(&mut vrng));
                let params = PhantomParams::sample(truth, spec.image_size, spec.noise_sd, &mut vrng);
                out.push(PlannedVisit {
                    photo_path: format!("images/{patient_id}_{eye}_v{}.pgm", v + 1),
                    patient_id: patient_id.clone(),
                    eye,
                    pool,
                    visit: v + 1,
                    baseline_um: baseline,
                    truth_um: truth,
                    photo_date,
                    oct_date: photo_date + Duration::days(jitter),
                    quality_db: quality,
                    diagnosis,
                    sap_md_db: round_dp(md, 2),
                    sap_psd_db: round_dp(psd, 2),
                    normative_class: normative_class(truth),
                    params,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub manifest_path: PathBuf,
    pub visits: Vec<PlannedVisit>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PhantomError + '_ {
    move |source| PhantomError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Plans a cohort, renders every photo as 8-bit PGM under `out_dir/images`,
/// and writes `out_dir/manifest.csv`.
pub fn gen_cohort(spec: &CohortSpec, seed: u64, out_dir: &Path) -> Result<GeneratedCohort> {
    let visits = plan_cohort(spec, seed)?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    for v in &visits {
        let img = if spec.stereo {
            render_stereo(&v.params)?
        } else {
            render_eye(&v.params)?
        };
        let path = out_dir.join(&v.photo_path);
        fs::write(&path, encode_pgm(&img)).map_err(io_err(&path))?;
    }
    let manifest_path = out_dir.join("manifest.csv");
    let rows: Vec<ManifestRow> = visits.iter().map(PlannedVisit::manifest_row).collect();
    let f = fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    write_manifest(f, &rows)?;
    Ok(GeneratedCohort { manifest_path, visits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_count_is_patients_eyes_visits() {
        let v = plan_cohort(&CohortSpec::default(), 1).unwrap();
        assert_eq!(v.len(), 1200);
    }

    #[test]
    fn glaucoma_labels_have_thin_baselines() {
        let v = plan_cohort(&CohortSpec::default(), 2).unwrap();
        assert!(v.iter().any(|r| r.diagnosis == Diagnosis::Glaucoma));
        for r in v.iter().filter(|r| r.diagnosis == Diagnosis::Glaucoma) {
            assert!(r.baseline_um < 80.0);
        }
        for r in v.iter().filter(|r| r.diagnosis == Diagnosis::Normal) {
            assert!(r.baseline_um > 90.0);
        }
    }

    #[test]
    fn per_eye_truth_never_rises() {
        let spec = CohortSpec {
            visits: (1, 6),
            ..Default::default()
        };
        let v = plan_cohort(&spec, 3).unwrap();
        for w in v.windows(2) {
            if w[0].patient_id == w[1].patient_id && w[0].eye == w[1].eye {
                assert!(w[1].truth_um <= w[0].truth_um);
                assert!(w[1].photo_date > w[0].photo_date);
            }
        }
    }

    #[test]
    fn oct_dates_within_jitter() {
        let v = plan_cohort(&CohortSpec::default(), 4).unwrap();
        assert!(v.iter().all(|r| (r.oct_date - r.photo_date).num_days().abs() <= 60));
    }

    #[test]
    fn healthy_percentiles_ordered() {
        let (p1, p5) = healthy_percentiles();
        assert!(p1 < p5 && p5 < 97.6);
        // close to the untruncated normal quantiles
        assert!((p5 - (97.608_80 - 1.644_853_6 * 9.315_32)).abs() < 0.05);
    }

    #[test]
    fn spec_validation() {
        let bad = CohortSpec {
            n_patients: 2,
            ..Default::default()
        };
        assert!(plan_cohort(&bad, 0).is_err());
        let bad = CohortSpec {
            oct_jitter_days: 100,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
