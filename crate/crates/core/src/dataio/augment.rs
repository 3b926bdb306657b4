use rand::Rng;

use crate::ndtensor::Tensor;

/// One concrete draw of the augmentation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    /// `(brightness shift, contrast scale about 0.5)`.
    pub lighting: Option<(f64, f64)>,
    pub rotation_deg: Option<f64>,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Each transform is switched on with probability one half.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let lighting = rng
            .random_bool(0.5)
            .then(|| (rng.random_range(-0.1..0.1), rng.random_range(0.9..1.1)));
        let rotation_deg = rng.random_bool(0.5).then(|| rng.random_range(-10.0..10.0));
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        Self {
            lighting,
            rotation_deg,
            hflip,
            vflip,
        }
    }

    /// Applies to a `[C, H, W]` image; output is clamped to [0, 1].
    pub fn apply(&self, image: &Tensor) -> Tensor {
        let [c, h, w] = image.shape()[..] else {
            panic!("augment expects [C, H, W], got {:?}", image.shape());
        };
        let mut data = image.data().to_vec();
        if let Some((b, k)) = self.lighting {
            for v in &mut data {
                *v = (*v - 0.5) * k + 0.5 + b;
            }
        }
        if let Some(deg) = self.rotation_deg {
            data = rotate(&data, c, h, w, deg.to_radians());
        }
        if self.hflip {
            for row in data.chunks_mut(w) {
                row.reverse();
            }
        }
        if self.vflip {
            for plane in data.chunks_mut(h * w) {
                for y in 0..h / 2 {
                    let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
                    top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
                }
            }
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Tensor::new(vec![c, h, w], data).expect("shape preserved")
    }
}

/// Rotation about the image centre with bilinear sampling; samples falling
/// outside the frame take the nearest edge value.
fn rotate(src: &[f64], c: usize, h: usize, w: usize, theta: f64) -> Vec<f64> {
    let (s, co) = theta.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = (co * dx + s * dy + cx).clamp(0.0, (w - 1) as f64);
            let sy = (-s * dx + co * dy + cy).clamp(0.0, (h - 1) as f64);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            for ch in 0..c {
                let p = &src[ch * h * w..(ch + 1) * h * w];
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[ch * h * w + y * w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Draws a parameter set from `rng` and applies it.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, rng: &mut R) -> Tensor {
    AugmentParams::sample(rng).apply(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        let n = c * h * w;
        Tensor::new(vec![c, h, w], (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn all_off_is_identity() {
        let img = ramp(2, 5, 7);
        assert_eq!(AugmentParams::identity().apply(&img).data(), img.data());
    }

    #[test]
    fn double_flips_are_identity() {
        let img = ramp(3, 5, 4);
        let p = AugmentParams {
            hflip: true,
            vflip: true,
            ..Default::default()
        };
        assert_eq!(p.apply(&p.apply(&img)).data(), img.data());
    }

    #[test]
    fn hflip_reverses_rows() {
        let img = Tensor::new(vec![1, 1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        let p = AugmentParams {
            hflip: true,
            ..Default::default()
        };
        assert_eq!(p.apply(&img).data(), &[0.3, 0.2, 0.1]);
    }

    #[test]
    fn neutral_parameters_are_identity() {
        let img = ramp(1, 9, 6);
        let p = AugmentParams {
            lighting: Some((0.0, 1.0)),
            rotation_deg: Some(0.0),
            ..Default::default()
        };
        for (a, b) in p.apply(&img).data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_in_unit_range_and_deterministic() {
        let img = ramp(1, 16, 16);
        for seed in 0..50 {
            let a = augment(&img, &mut stream_rng(seed, &[1, 2]));
            let b = augment(&img, &mut stream_rng(seed, &[1, 2]));
            assert_eq!(a.data(), b.data());
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rotation_preserves_constant_image() {
        let img = Tensor::full(&[1, 8, 8], 0.4);
        let p = AugmentParams {
            rotation_deg: Some(9.0),
            ..Default::default()
        };
        assert!(p.apply(&img).data().iter().all(|v| (v - 0.4).abs() < 1e-12));
    }
}
