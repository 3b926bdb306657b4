//! Grad-CAM heatmaps over input photographs, color overlays and image writers.

mod bmp;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use thiserror::Error;

use crate::dataio::{encode_pgm, encode_ppm, Image};
use crate::ndtensor::{Graph, Tensor, TensorError, Var};
use crate::resnet::{ForwardOptions, ForwardPass, Model, ResnetError};

pub use bmp::encode_bmp;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("activations must be [C, H, W] with matching gradients: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Arg(String),
    #[error("model has no {0} head")]
    MissingHead(&'static str),
    #[error(transparent)]
    Model(#[from] ResnetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, ExplainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamTarget {
    /// z-scored thickness output.
    Regression,
    /// Classification logit.
    Abnormality,
}

impl fmt::Display for CamTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CamTarget::Regression => "regression",
            CamTarget::Abnormality => "abnormality",
        })
    }
}

impl FromStr for CamTarget {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(CamTarget::Regression),
            "abnormality" => Ok(CamTarget::Abnormality),
            other => Err(ExplainError::Arg(format!("unknown Grad-CAM target `{other}`"))),
        }
    }
}

/// Row-major scalar map.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(ExplainError::Shape(format!("{} values for a {width}x{height} grid", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_image(&self) -> Image {
        Image::gray(self.width, self.height, self.data.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// At the target layer's spatial resolution.
    pub coarse: Grid,
    /// Bilinearly upsampled to the input resolution.
    pub full: Grid,
}

fn normalize_by_max(data: &mut [f64]) {
    let max = data.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in data.iter_mut() {
            *v /= max;
        }
    }
}

/// Channel weights: spatial mean of the gradient per channel.
pub fn channel_weights(grads: &[f64], shape: [usize; 3]) -> Result<Vec<f64>> {
    let [c, h, w] = shape;
    if grads.len() != c * h * w || c == 0 || h * w == 0 {
        return Err(ExplainError::Shape(format!("{} gradient values for {shape:?}", grads.len())));
    }
    Ok(grads.chunks(h * w).map(|ch| ch.iter().sum::<f64>() / (h * w) as f64).collect())
}

/// `relu(sum_k alpha_k A_k)` divided by its maximum; an all-zero map stays zero.
pub fn cam_from_activations(acts: &[f64], grads: &[f64], shape: [usize; 3]) -> Result<Grid> {
    let [c, h, w] = shape;
    if acts.len() != c * h * w {
        return Err(ExplainError::Shape(format!("{} activation values for {shape:?}", acts.len())));
    }
    let alpha = channel_weights(grads, shape)?;
    let mut map = vec![0.0; h * w];
    for (a, ch) in alpha.iter().zip(acts.chunks(h * w)) {
        for (m, v) in map.iter_mut().zip(ch) {
            *m += a * v;
        }
    }
    for m in map.iter_mut() {
        *m = m.max(0.0);
    }
    normalize_by_max(&mut map);
    Grid::new(w, h, map)
}

/// Half-pixel-centered bilinear resize with edge clamping.
pub fn upsample_bilinear(grid: &Grid, width: usize, height: usize) -> Grid {
    let axis = |src: usize, dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(grid.width, width);
    let ys = axis(grid.height, height);
    let mut data = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = grid.at(x0, y0) * (1.0 - fx) + grid.at(x1, y0) * fx;
            let bottom = grid.at(x0, y1) * (1.0 - fx) + grid.at(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Grid { width, height, data }
}

/// Grad-CAM with a caller-chosen scalar target built from the forward pass.
pub fn gradcam_with<F>(model: &Model, image: &Tensor, target: F) -> Result<Heatmap>
where
    F: FnOnce(&mut Graph, &ForwardPass) -> Result<Var>,
{
    let shape = image.shape().to_vec();
    let batch = match shape.len() {
        3 => image.clone().reshape(vec![1, shape[0], shape[1], shape[2]])?,
        4 if shape[0] == 1 => image.clone(),
        _ => return Err(ExplainError::Shape(format!("expected one [C, H, W] image, got {shape:?}"))),
    };
    let mut g = Graph::new();
    // A tracked input makes every intermediate node keep its gradient.
    let x = g.leaf(batch);
    let fwd = model.forward(&mut g, x, ForwardOptions::eval())?;
    let out = target(&mut g, &fwd)?;
    let scalar = g.sum(out)?;
    g.backward(scalar)?;

    let feats = g.value(fwd.features);
    let fshape = feats.shape();
    if fshape.len() != 4 {
        return Err(ExplainError::Shape(format!("target layer has shape {fshape:?}")));
    }
    let fshape = [fshape[1], fshape[2], fshape[3]];
    let zeros;
    let grads = match g.grad(fwd.features) {
        Some(gr) => gr,
        None => {
            zeros = vec![0.0; feats.numel()];
            &zeros
        }
    };
    let coarse = cam_from_activations(feats.data(), grads, fshape)?;
    let size = model.config().input_size;
    let mut full = upsample_bilinear(&coarse, size, size);
    normalize_by_max(&mut full.data);
    Ok(Heatmap { coarse, full })
}

/// Grad-CAM for one `[C, H, W]` image at the last residual block's output.
pub fn gradcam(model: &Model, image: &Tensor, target: CamTarget) -> Result<Heatmap> {
    gradcam_with(model, image, |_, fwd| match target {
        CamTarget::Regression => fwd.regression.ok_or(ExplainError::MissingHead("regression")),
        CamTarget::Abnormality => fwd.logit.ok_or(ExplainError::MissingHead("classification")),
    })
}

/// Blue, cyan, yellow, red.
const RAMP: [[f64; 3]; 4] = [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];

/// Piecewise-linear color ramp over [0, 1].
pub fn ramp(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (v.floor() as usize).min(RAMP.len() - 2);
    let t = v - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    [0, 1, 2].map(|c| a[c] + t * (b[c] - a[c]))
}

/// `(1 - alpha) * photo + alpha * ramp(heat)`, per pixel and channel, on an RGB copy of the photo.
pub fn overlay(image: &Image, heat: &Grid, alpha: f64) -> Result<Image> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ExplainError::Arg(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if image.width != heat.width || image.height != heat.height {
        return Err(ExplainError::Shape(format!(
            "image is {}x{} but heatmap is {}x{}",
            image.width, image.height, heat.width, heat.height
        )));
    }
    if image.channels != 1 && image.channels != 3 {
        return Err(ExplainError::Shape(format!("{} channel image", image.channels)));
    }
    let rgb = image.to_channels(3);
    let data = rgb
        .data
        .chunks(3)
        .zip(&heat.data)
        .flat_map(|(px, &h)| {
            let c = ramp(h);
            [0, 1, 2].map(|k| (1.0 - alpha) * px[k] + alpha * c[k])
        })
        .collect();
    Ok(Image::new(image.width, image.height, 3, data))
}

/// Share of total heatmap mass at pixel centers within `radius` of `center` (pixel units).
/// `None` for an all-zero map.
pub fn mass_fraction_within(heat: &Grid, center: (f64, f64), radius: f64) -> Option<f64> {
    let (mut inside, mut total) = (0.0, 0.0);
    for y in 0..heat.height {
        for x in 0..heat.width {
            let v = heat.at(x, y);
            total += v;
            if (x as f64 + 0.5 - center.0).hypot(y as f64 + 0.5 - center.1) <= radius {
                inside += v;
            }
        }
    }
    (total > 0.0).then(|| inside / total)
}

/// Base64 BMP data URI for embedding in SVG.
pub fn bmp_data_uri(img: &Image) -> String {
    format!("data:image/bmp;base64,{}", STANDARD.encode(encode_bmp(img)))
}

/// Standalone SVG showing the heatmap and the overlay next to each other.
pub fn side_by_side_svg(heat: &Grid, overlay: &Image, caption: &str) -> String {
    let (w, h) = (overlay.width.max(heat.width), overlay.height.max(heat.height));
    let scale = (256 / w.max(1)).max(1);
    let (cw, ch) = (w * scale, h * scale);
    let heat_rgb = Image::new(heat.width, heat.height, 3, heat.data.iter().flat_map(|&v| ramp(v)).collect());
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        2 * cw + 30,
        ch + 40,
        2 * cw + 30,
        ch + 40
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, img) in [&heat_rgb, overlay].into_iter().enumerate() {
        s.push_str(&format!(
            "<image x=\"{}\" y=\"10\" width=\"{cw}\" height=\"{ch}\" style=\"image-rendering:pixelated\" href=\"{}\"/>\n",
            10 + i * (cw + 10),
            bmp_data_uri(img)
        ));
    }
    s.push_str(&format!(
        "<text x=\"10\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n</svg>\n",
        ch + 30,
        escape_xml(caption)
    ));
    s
}

pub fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| ExplainError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `<stem>_heatmap.pgm`, `<stem>_overlay.ppm` and `<stem>.svg` into `dir`.
pub fn write_outputs(dir: &Path, stem: &str, photo: &Image, heat: &Heatmap, alpha: f64, caption: &str) -> Result<Image> {
    let over = overlay(photo, &heat.full, alpha)?;
    write_file(&dir.join(format!("{stem}_heatmap.pgm")), &encode_pgm(&heat.full.to_image()))?;
    write_file(&dir.join(format!("{stem}_overlay.ppm")), &encode_ppm(&over))?;
    write_file(&dir.join(format!("{stem}.svg")), side_by_side_svg(&heat.full, &over, caption).as_bytes())?;
    Ok(over)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resnet::{build_model, ModelConfig};

    #[test]
    fn zero_gradients_give_zero_map() {
        let acts = vec![1.0; 2 * 3 * 3];
        let map = cam_from_activations(&acts, &vec![0.0; 18], [2, 3, 3]).unwrap();
        assert!(map.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_positive_single_channel_is_all_ones() {
        let map = cam_from_activations(&[0.7; 16], &[0.2; 16], [1, 4, 4]).unwrap();
        assert!(map.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(cam_from_activations(&[1.0; 4], &[1.0; 5], [1, 2, 2]).is_err());
        assert!(cam_from_activations(&[1.0; 3], &[1.0; 4], [1, 2, 2]).is_err());
        assert!(Grid::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn upsample_constant_and_identity() {
        let g = Grid::new(2, 2, vec![0.25; 4]).unwrap();
        let up = upsample_bilinear(&g, 8, 8);
        assert!(up.data.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let g = Grid::new(3, 2, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(upsample_bilinear(&g, 3, 2), g);
    }

    #[test]
    fn upsample_interpolates_between_centers() {
        // 2 -> 4: output centers at 0.25 and 0.75 of the way between the two source centers
        let g = Grid::new(2, 1, vec![0.0, 1.0]).unwrap();
        let up = upsample_bilinear(&g, 4, 1);
        assert_eq!(up.data, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(ramp(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(ramp(-3.0), ramp(0.0));
    }

    #[test]
    fn overlay_alpha_extremes_and_affinity() {
        let photo = Image::gray(2, 2, vec![0.1, 0.4, 0.6, 0.9]);
        let heat = Grid::new(2, 2, vec![0.0, 0.3, 0.6, 1.0]).unwrap();
        let o = overlay(&photo, &heat, 0.0).unwrap();
        assert_eq!(o, photo.to_channels(3));

        let zero = Grid::new(2, 2, vec![0.0; 4]).unwrap();
        let o = overlay(&photo, &zero, 1.0).unwrap();
        assert!(o.data.chunks(3).all(|px| px == ramp(0.0)));

        let a = 0.35;
        let o = overlay(&photo, &heat, a).unwrap();
        for (i, px) in o.data.chunks(3).enumerate() {
            let c = ramp(heat.data[i]);
            for k in 0..3 {
                assert_eq!(px[k], (1.0 - a) * photo.data[i] + a * c[k]);
            }
        }
    }

    #[test]
    fn overlay_rejects_bad_input() {
        let photo = Image::gray(2, 2, vec![0.0; 4]);
        let heat = Grid::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(matches!(overlay(&photo, &heat, 0.5), Err(ExplainError::Shape(_))));
        let heat = Grid::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(overlay(&photo, &heat, 1.5), Err(ExplainError::Arg(_))));
    }

    #[test]
    fn mass_fraction_counts_pixel_centers() {
        let mut data = vec![0.0; 16];
        data[5] = 1.0; // (1, 1)
        data[15] = 1.0; // (3, 3)
        let g = Grid::new(4, 4, data).unwrap();
        assert_eq!(mass_fraction_within(&g, (1.5, 1.5), 0.5), Some(0.5));
        assert_eq!(mass_fraction_within(&g, (2.0, 2.0), 10.0), Some(1.0));
        assert_eq!(mass_fraction_within(&Grid::new(1, 1, vec![0.0]).unwrap(), (0.0, 0.0), 1.0), None);
    }

    #[test]
    fn model_heatmap_is_normalized_and_sized() {
        let cfg = ModelConfig::micro();
        let m = build_model(&cfg, 3).unwrap();
        let img = Tensor::new(vec![1, 64, 64], (0..64 * 64).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()).unwrap();
        let h = gradcam(&m, &img, CamTarget::Regression).unwrap();
        assert_eq!((h.coarse.width, h.coarse.height), (cfg.feature_size(), cfg.feature_size()));
        assert_eq!((h.full.width, h.full.height), (64, 64));
        for grid in [&h.coarse, &h.full] {
            assert!(grid.data.iter().all(|v| (0.0..=1.0).contains(v)));
            let max = grid.max();
            assert!(max == 1.0 || max == 0.0);
        }
        assert!(matches!(gradcam(&m, &img, CamTarget::Abnormality), Err(ExplainError::MissingHead(_))));
    }

    #[test]
    fn svg_embeds_two_images() {
        let photo = Image::gray(4, 4, vec![0.5; 16]);
        let heat = Grid::new(4, 4, vec![0.2; 16]).unwrap();
        let over = overlay(&photo, &heat, 0.4).unwrap();
        let svg = side_by_side_svg(&heat, &over, "a < b");
        assert_eq!(svg.matches("data:image/bmp;base64,").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }
}
