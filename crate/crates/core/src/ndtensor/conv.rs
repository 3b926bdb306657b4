//! im2col based 2-D convolution kernels (NCHW input, OIKK weights).

use super::{shape_err, Result, Tensor};

/// Output extent of a convolution along one axis: `floor((size + 2 pad - k) / stride) + 1`.
pub fn conv_out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(shape_err("conv2d", "stride must be >= 1"));
    }
    let padded = size + 2 * pad;
    if padded < k {
        return Err(shape_err(
            "conv2d",
            format!("kernel {k} larger than padded extent {padded}"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = input[..] else {
            return Err(shape_err("conv2d", format!("input must be NCHW, got {input:?}")));
        };
        let [o, i, kh, kw] = weight[..] else {
            return Err(shape_err("conv2d", format!("weight must be OIKK, got {weight:?}")));
        };
        if i != c {
            return Err(shape_err(
                "conv2d",
                format!("input has {c} channels but weight expects {i}"),
            ));
        }
        if kh != kw {
            return Err(shape_err("conv2d", format!("kernel must be square, got {kh}x{kw}")));
        }
        let oh = conv_out_extent(h, kh, stride, pad)?;
        let ow = conv_out_extent(w, kw, stride, pad)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            k: kh,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.oh, self.ow]
    }
}

/// Unfolds one sample `[c, h, w]` into `[c*k*k, oh*ow]` patch columns.
pub(crate) fn im2col(g: &ConvGeom, input: &[f64], cols: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let chan = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *slot = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds patch-column gradients back onto one input sample (accumulating).
pub(crate) fn col2im(g: &ConvGeom, cols: &[f64], dinput: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let chan = &mut dinput[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[o, p] = bias[o] + sum_r weight[o, r] * cols[r, p]` for one sample.
pub(crate) fn gemm_forward(g: &ConvGeom, weight: &[f64], bias: Option<&[f64]>, cols: &[f64], out: &mut [f64]) {
    let plane = g.out_plane();
    let rows = g.col_rows();
    for oc in 0..g.o {
        let dst = &mut out[oc * plane..(oc + 1) * plane];
        dst.fill(bias.map_or(0.0, |b| b[oc]));
        let wrow = &weight[oc * rows..(oc + 1) * rows];
        for (r, &wv) in wrow.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let src = &cols[r * plane..(r + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
}

/// Accumulates `dweight += dout * cols^T` for one sample.
pub(crate) fn gemm_dweight(g: &ConvGeom, dout: &[f64], cols: &[f64], dweight: &mut [f64]) {
    let plane = g.out_plane();
    let rows = g.col_rows();
    for oc in 0..g.o {
        let dy = &dout[oc * plane..(oc + 1) * plane];
        let dw = &mut dweight[oc * rows..(oc + 1) * rows];
        for (r, slot) in dw.iter_mut().enumerate() {
            let src = &cols[r * plane..(r + 1) * plane];
            let mut acc = 0.0;
            for (a, b) in dy.iter().zip(src) {
                acc += a * b;
            }
            *slot += acc;
        }
    }
}

/// `dcols = weight^T * dout` for one sample (overwrites `dcols`).
pub(crate) fn gemm_dcols(g: &ConvGeom, weight: &[f64], dout: &[f64], dcols: &mut [f64]) {
    let plane = g.out_plane();
    let rows = g.col_rows();
    dcols.fill(0.0);
    for oc in 0..g.o {
        let dy = &dout[oc * plane..(oc + 1) * plane];
        let wrow = &weight[oc * rows..(oc + 1) * rows];
        for (r, &wv) in wrow.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let dst = &mut dcols[r * plane..(r + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(dy) {
                *d += wv * s;
            }
        }
    }
}

/// Graph-free convolution forward pass.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.o] {
            return Err(shape_err("conv2d", format!("bias shape {:?}, expected [{}]", b.shape(), g.o)));
        }
    }
    let mut cols = vec![0.0; g.col_rows() * g.out_plane()];
    let mut out = vec![0.0; g.n * g.o * g.out_plane()];
    let out_sample = g.o * g.out_plane();
    for s in 0..g.n {
        im2col(&g, &input.data()[s * g.in_sample()..(s + 1) * g.in_sample()], &mut cols);
        gemm_forward(
            &g,
            weight.data(),
            bias.map(|b| b.data()),
            &cols,
            &mut out[s * out_sample..(s + 1) * out_sample],
        );
    }
    Tensor::new(g.out_shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_extent_formula() {
        assert_eq!(conv_out_extent(256, 7, 2, 3).unwrap(), 128);
        assert_eq!(conv_out_extent(5, 3, 1, 0).unwrap(), 3);
        assert_eq!(conv_out_extent(8, 1, 2, 0).unwrap(), 4);
        assert!(conv_out_extent(2, 5, 1, 0).is_err());
        assert!(conv_out_extent(4, 1, 0, 0).is_err());
    }

    #[test]
    fn identity_kernel_copies_input() {
        let input = Tensor::new(vec![1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let input = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&input, &w, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("2 channels"));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom::new(&[1, 2, 5, 4], &[3, 2, 3, 3], 2, 1).unwrap();
        let x: Vec<f64> = (0..g.in_sample()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.out_plane())
            .map(|i| ((i * 5) % 13) as f64 - 6.0)
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
