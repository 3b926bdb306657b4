//! Binary PGM/PPM (P5/P6) codec and photo preprocessing.

use std::path::Path;

use super::{DataError, Result};
use crate::ndtensor::Tensor;

/// Interleaved image with values scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels, "image buffer size");
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn gray(width: usize, height: usize, data: Vec<f64>) -> Self {
        Self::new(width, height, 1, data)
    }

    /// Planar `[channels, height, width]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.data[(y * w + x) * c + ch];
                }
            }
        }
        Tensor::new(vec![c, h, w], out).expect("consistent size")
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let [c, h, w] = t.shape()[..] else {
            panic!("expected [C, H, W], got {:?}", t.shape());
        };
        let mut data = vec![0.0; t.numel()];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(y * w + x) * c + ch] = t.data()[(ch * h + y) * w + x];
                }
            }
        }
        Self::new(w, h, c, data)
    }

    fn crop_columns(&self, x0: usize, width: usize) -> Image {
        let c = self.channels;
        let mut data = Vec::with_capacity(width * self.height * c);
        for y in 0..self.height {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Image::new(width, self.height, c, data)
    }

    /// Converts between 1 and 3 channels (luma weights when reducing).
    pub fn to_channels(&self, channels: usize) -> Image {
        match (self.channels, channels) {
            (a, b) if a == b => self.clone(),
            (3, 1) => Image::gray(
                self.width,
                self.height,
                self.data
                    .chunks(3)
                    .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    .collect(),
            ),
            (1, 3) => Image::new(
                self.width,
                self.height,
                3,
                self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            ),
            (a, b) => panic!("unsupported channel conversion {a} -> {b}"),
        }
    }
}

fn image_err(path: &str, msg: impl Into<String>) -> DataError {
    DataError::Image {
        path: path.to_string(),
        msg: msg.into(),
    }
}

/// Decodes binary PGM (P5) or PPM (P6), 8- or 16-bit.
pub fn decode_pnm(bytes: &[u8], name: &str) -> Result<Image> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(image_err(name, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(image_err(name, format!("unsupported format `{other}` (need P5 or P6)"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse::<usize>()
            .map_err(|_| image_err(name, format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(image_err(name, "invalid dimensions or maxval"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bps = if maxval > 255 { 2 } else { 1 };
    let need = width * height * channels * bps;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| image_err(name, format!("raster truncated: need {need} bytes")))?;
    let scale = maxval as f64;
    let data = if bps == 1 {
        raster.iter().map(|&b| f64::from(b) / scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / scale)
            .collect()
    };
    Ok(Image::new(width, height, channels, data))
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| image_err(&name, e.to_string()))?;
    decode_pnm(&bytes, &name)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit binary PGM of a single-channel image.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    assert_eq!(img.channels, 1, "PGM needs one channel");
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}

/// 8-bit binary PPM; gray images are replicated to RGB.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let rgb = img.to_channels(3);
    let mut out = format!("P6\n{} {}\n255\n", rgb.width, rgb.height).into_bytes();
    out.extend(rgb.data.iter().map(|&v| quantize(v)));
    out
}

/// Per-axis area-averaging weights: `(source index, weight)` lists per output index.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let mut w = Vec::new();
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < src {
                let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((j, overlap / scale));
                }
                j += 1;
            }
            w
        })
        .collect()
}

/// Resizes by exact box (area) averaging; works for any scale factor.
pub fn area_resize(img: &Image, width: usize, height: usize) -> Image {
    let c = img.channels;
    let wx = area_weights(img.width, width);
    let wy = area_weights(img.height, height);
    let mut tmp = vec![0.0; img.height * width * c];
    for y in 0..img.height {
        for (ox, ws) in wx.iter().enumerate() {
            for ch in 0..c {
                tmp[(y * width + ox) * c + ch] = ws
                    .iter()
                    .map(|&(sx, w)| w * img.data[(y * img.width + sx) * c + ch])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; height * width * c];
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..width {
            for ch in 0..c {
                out[(oy * width + ox) * c + ch] = ws.iter().map(|&(sy, w)| w * tmp[(sy * width + ox) * c + ch]).sum();
            }
        }
    }
    Image::new(width, height, c, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StereoMode {
    /// Split frames whose width is exactly twice their height.
    Auto,
    Mono,
    Stereo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub input_size: usize,
    pub channels: usize,
    pub stereo: StereoMode,
}

/// Decodes a photo, splits side-by-side stereo frames at the horizontal
/// midpoint, and area-resizes each view to `input_size` squared.
/// Returns `[channels, size, size]` tensors in [0, 1].
pub fn preprocess(path: &Path, cfg: &PreprocessConfig) -> Result<Vec<Tensor>> {
    let img = read_pnm(path)?;
    preprocess_image(&img, cfg).map_err(|msg| image_err(&path.display().to_string(), msg))
}

pub(crate) fn preprocess_image(img: &Image, cfg: &PreprocessConfig) -> std::result::Result<Vec<Tensor>, String> {
    if cfg.channels != 1 && cfg.channels != 3 {
        return Err(format!("unsupported channel count {}", cfg.channels));
    }
    let split = match cfg.stereo {
        StereoMode::Mono => false,
        StereoMode::Stereo => true,
        StereoMode::Auto => img.width == 2 * img.height,
    };
    let views = if split {
        if img.width % 2 != 0 {
            return Err(format!("stereo frame has odd width {}", img.width));
        }
        let half = img.width / 2;
        vec![img.crop_columns(0, half), img.crop_columns(half, half)]
    } else {
        vec![img.clone()]
    };
    Ok(views
        .iter()
        .map(|v| {
            area_resize(&v.to_channels(cfg.channels), cfg.input_size, cfg.input_size)
                .to_tensor()
                .clamped()
        })
        .collect())
}

trait Clamp01 {
    fn clamped(self) -> Self;
}

impl Clamp01 for Tensor {
    fn clamped(mut self) -> Self {
        for v in self.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }
}
