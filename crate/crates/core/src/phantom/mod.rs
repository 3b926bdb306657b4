//! Synthetic disc photographs with a known thickness, and longitudinal
//! cohorts built from them.
//!
//! Thickness reaches the image through two couplings: the cup widens as
//! thickness falls, and the contrast of a radial striation band around the
//! disc is affine in thickness.

mod cohort;

pub use cohort::{
    gen_cohort, healthy_percentiles, plan_cohort, CohortSpec, GeneratedCohort, PlannedVisit, Pool, PoolSpec,
};

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataio::{DataError, Image};
use crate::rng::{stream_key, stream_rng};

pub const TRUTH_MIN_UM: f64 = 40.0;
pub const TRUTH_MAX_UM: f64 = 130.0;

pub const BACKGROUND: f64 = 0.3;
pub const RIM: f64 = 0.7;
pub const CUP: f64 = 0.92;
pub const BAND_BASE: f64 = 0.45;
/// Outer edge of the striation band, in disc radii.
pub const BAND_OUTER: f64 = 1.8;
/// Angular frequency of the striations.
pub const STRIATIONS: f64 = 10.0;

const VESSEL_KEY: u64 = 0x7665_7373;
const NOISE_KEY: u64 = 0x6e6f_6973;
const STEREO_KEY: u64 = 0x7374_6572;
const VESSEL_DEPTH: f64 = 0.35;
const VESSEL_SEGMENTS: usize = 32;
/// Beyond this many widths a vessel's darkening is below 1e-4.
const VESSEL_REACH: f64 = 4.5;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom parameters: {0}")]
    Params(String),
    #[error("invalid cohort spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, PhantomError>;

/// Cup-to-disc radius ratio: 0.95 at 40 μm falling linearly to 0.275 at 130 μm.
pub fn cup_ratio_for(truth_um: f64) -> f64 {
    0.95 - 0.0075 * (truth_um - TRUTH_MIN_UM)
}

/// Striation amplitude: 0.02 at 40 μm rising linearly to 0.155 at 130 μm.
pub fn striation_contrast(truth_um: f64) -> f64 {
    0.02 + 0.0015 * (truth_um - TRUTH_MIN_UM)
}

/// Inverse of [`striation_contrast`].
pub fn truth_from_contrast(contrast: f64) -> f64 {
    TRUTH_MIN_UM + (contrast - 0.02) / 0.0015
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub truth_um: f64,
    /// Image side in pixels.
    pub size: usize,
    /// Disc centre as fractions of the image side.
    pub center: (f64, f64),
    pub disc_radius_frac: f64,
    pub cup_ratio: f64,
    pub vessel_count: usize,
    pub noise_sd: f64,
    /// Relative brightness change across one image side.
    pub illumination_gradient: f64,
    pub illumination_angle: f64,
    pub seed: u64,
}

impl PhantomParams {
    /// Centred disc with the cup coupled to `truth_um`; no vessels, noise or shading.
    pub fn nominal(truth_um: f64, size: usize, seed: u64) -> Self {
        Self {
            truth_um,
            size,
            center: (0.5, 0.5),
            disc_radius_frac: 0.16,
            cup_ratio: cup_ratio_for(truth_um),
            vessel_count: 0,
            noise_sd: 0.0,
            illumination_gradient: 0.0,
            illumination_angle: 0.0,
            seed,
        }
    }

    /// Randomized framing, vessels and shading around a given thickness.
    pub fn sample<R: Rng + ?Sized>(truth_um: f64, size: usize, noise_sd: f64, rng: &mut R) -> Self {
        Self {
            truth_um,
            size,
            center: (0.5 + rng.random_range(-0.12..0.12), 0.5 + rng.random_range(-0.12..0.12)),
            disc_radius_frac: rng.random_range(0.15..0.17),
            cup_ratio: cup_ratio_for(truth_um),
            vessel_count: rng.random_range(2..=5),
            noise_sd,
            illumination_gradient: rng.random_range(0.0..0.25),
            illumination_angle: rng.random_range(0.0..2.0 * PI),
            seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PhantomError::Params(m));
        if !(TRUTH_MIN_UM..=TRUTH_MAX_UM).contains(&self.truth_um) {
            return bad(format!("truth {} outside [40, 130]", self.truth_um));
        }
        if !(0.2..=0.95).contains(&self.cup_ratio) {
            return bad(format!("cup ratio {} outside [0.2, 0.95]", self.cup_ratio));
        }
        let fracs = [self.center.0, self.center.1, self.disc_radius_frac];
        if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return bad(format!("centre and radius fractions must lie in (0, 1): {fracs:?}"));
        }
        if self.size < 8 {
            return bad(format!("image side {} too small", self.size));
        }
        if !(self.noise_sd >= 0.0 && self.illumination_gradient >= 0.0 && self.illumination_gradient < 1.0) {
            return bad("noise and illumination gradient must be non-negative, gradient below 1".into());
        }
        Ok(())
    }

    fn geometry(&self) -> Geometry {
        let s = self.size as f64;
        let radius = self.disc_radius_frac * s;
        Geometry {
            cx: self.center.0 * s,
            cy: self.center.1 * s,
            radius,
            cup: self.cup_ratio * radius,
            band: BAND_OUTER * radius,
        }
    }

    /// Multiplicative shading at pixel centre `(x, y)`; exactly 1 at the disc centre.
    pub fn illumination(&self, x: f64, y: f64) -> f64 {
        let g = self.geometry();
        let (s, c) = self.illumination_angle.sin_cos();
        1.0 + self.illumination_gradient * ((x - g.cx) * c + (y - g.cy) * s) / self.size as f64
    }

    /// Striation basis at pixel centre `(x, y)`: band pixels have value
    /// `BAND_BASE + contrast * basis` before shading; `None` outside the band.
    pub fn band_basis(&self, x: f64, y: f64) -> Option<f64> {
        let g = self.geometry();
        let (dx, dy) = (x - g.cx, y - g.cy);
        let r = dx.hypot(dy);
        (r >= g.radius && r < g.band)
            .then(|| (STRIATIONS * dy.atan2(dx)).cos() * (PI * (r - g.radius) / (g.band - g.radius)).sin())
    }
}

struct Geometry {
    cx: f64,
    cy: f64,
    radius: f64,
    cup: f64,
    band: f64,
}

struct Vessel {
    angle: f64,
    bend: f64,
    width: f64,
}

impl Vessel {
    /// Polyline from the cup edge out past the striation band.
    fn points(&self, g: &Geometry) -> Vec<(f64, f64)> {
        let (r0, r1) = (0.4 * g.radius, 2.6 * g.radius);
        (0..=VESSEL_SEGMENTS)
            .map(|i| {
                let t = i as f64 / VESSEL_SEGMENTS as f64;
                let r = r0 + t * (r1 - r0);
                let a = self.angle + self.bend * t;
                (g.cx + r * a.cos(), g.cy + r * a.sin())
            })
            .collect()
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * vx).hypot(p.1 - a.1 - t * vy)
}

/// Noise-free, vessel-free, unshaded intensity at pixel centre `(x, y)`.
fn base_intensity(p: &PhantomParams, g: &Geometry, x: f64, y: f64) -> f64 {
    let r = (x - g.cx).hypot(y - g.cy);
    if r < g.cup {
        CUP
    } else if r < g.radius {
        RIM
    } else if let Some(b) = p.band_basis(x, y) {
        BAND_BASE + striation_contrast(p.truth_um) * b
    } else {
        BACKGROUND
    }
}

/// Shaded image with vessels, before noise and clamping.
fn render_clean(params: &PhantomParams) -> Result<Vec<f64>> {
    params.validate()?;
    let g = params.geometry();
    let n = params.size;
    let mut vrng = stream_rng(params.seed, &[VESSEL_KEY]);
    let vessels: Vec<(f64, Vec<(f64, f64)>, (f64, f64, f64, f64))> = (0..params.vessel_count)
        .map(|_| {
            let v = Vessel {
                angle: vrng.random_range(0.0..2.0 * PI),
                bend: vrng.random_range(-0.8..0.8),
                width: vrng.random_range(0.012..0.022) * n as f64,
            };
            let pts = v.points(&g);
            let reach = VESSEL_REACH * v.width;
            let bbox = pts.iter().fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |b, p| (b.0.min(p.0 - reach), b.1.min(p.1 - reach), b.2.max(p.0 + reach), b.3.max(p.1 + reach)),
            );
            (v.width, pts, bbox)
        })
        .collect();
    let mut data = Vec::with_capacity(n * n);
    for yi in 0..n {
        for xi in 0..n {
            let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
            let mut v = base_intensity(params, &g, x, y) * params.illumination(x, y);
            for (w, pts, bbox) in &vessels {
                if x < bbox.0 || x > bbox.2 || y < bbox.1 || y > bbox.3 {
                    continue;
                }
                let d = pts
                    .windows(2)
                    .map(|s| segment_distance((x, y), s[0], s[1]))
                    .fold(f64::INFINITY, f64::min);
                v *= 1.0 - VESSEL_DEPTH * (-0.5 * (d / w).powi(2)).exp();
            }
            data.push(v);
        }
    }
    Ok(data)
}

fn add_noise(clean: &[f64], sd: f64, seed: u64) -> Vec<f64> {
    let noise = (sd > 0.0).then(|| Normal::new(0.0, sd).expect("non-negative sd"));
    let mut rng = stream_rng(seed, &[NOISE_KEY]);
    clean
        .iter()
        .map(|&v| {
            let e = noise.as_ref().map_or(0.0, |nd| nd.sample(&mut rng));
            (v + e).clamp(0.0, 1.0)
        })
        .collect()
}

/// One grayscale frame. Deterministic in `params` (including its seed).
pub fn render_eye(params: &PhantomParams) -> Result<Image> {
    let clean = render_clean(params)?;
    let n = params.size;
    Ok(Image::gray(n, n, add_noise(&clean, params.noise_sd, params.seed)))
}

/// Two independently noised renders of the same eye, side by side. The left
/// half equals [`render_eye`].
pub fn render_stereo(params: &PhantomParams) -> Result<Image> {
    let clean = render_clean(params)?;
    let left = add_noise(&clean, params.noise_sd, params.seed);
    let right = add_noise(&clean, params.noise_sd, stream_key(params.seed, &[STEREO_KEY]));
    let n = params.size;
    let mut data = Vec::with_capacity(2 * n * n);
    for y in 0..n {
        data.extend_from_slice(&left[y * n..(y + 1) * n]);
        data.extend_from_slice(&right[y * n..(y + 1) * n]);
    }
    Ok(Image::gray(2 * n, n, data))
}
