use super::conv::{col2im, gemm_dcols, gemm_dweight, gemm_forward, im2col, ConvGeom};
use super::{shape_err, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchNormMode {
    /// Normalize by batch statistics and fold them into the running stats.
    Train { momentum: f64 },
    /// Normalize by the running stats, which stay untouched.
    Eval,
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Sigmoid(Var),
    MseLoss {
        pred: Var,
        target: Var,
    },
    BceLoss {
        logits: Var,
        targets: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Relu(_) => "relu",
            Op::MaxPool { .. } => "maxpool2x2",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Sigmoid(_) => "sigmoid",
            Op::MseLoss { .. } => "mse_loss",
            Op::BceLoss { .. } => "bce_loss",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only tape. Node indices are a topological order by construction.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf whose gradient is tracked.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_leaf(t.with_requires_grad(true))
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t.with_requires_grad(false))
    }

    fn push_leaf(&mut self, mut t: Tensor) -> Var {
        t.grad = None;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.take_grad()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(op.name()));
        }
        let value = Tensor::new(shape, data)?.with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let geom = ConvGeom::new(x.shape(), w.shape(), stride, pad)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.o] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias shape {:?}, expected [{}]", self.value(b).shape(), geom.o),
                ));
            }
        }
        let col_len = geom.col_rows() * geom.out_plane();
        let out_sample = geom.o * geom.out_plane();
        let mut cols = vec![0.0; geom.n * col_len];
        let mut out = vec![0.0; geom.n * out_sample];
        let bias_data = bias.map(|b| self.value(b).data());
        for s in 0..geom.n {
            let c = &mut cols[s * col_len..(s + 1) * col_len];
            im2col(&geom, &x.data()[s * geom.in_sample()..(s + 1) * geom.in_sample()], c);
            gemm_forward(&geom, w.data(), bias_data, c, &mut out[s * out_sample..(s + 1) * out_sample]);
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(
            geom.out_shape(),
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            rg,
        )
    }

    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        mode: BatchNormMode,
        eps: f64,
    ) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.shape()[..] else {
            return Err(shape_err("batchnorm2d", format!("input must be NCHW, got {:?}", x.shape())));
        };
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(shape_err(
                    "batchnorm2d",
                    format!("{name} shape {:?}, expected [{c}]", self.value(v).shape()),
                ));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(shape_err("batchnorm2d", "running stats channel count"));
        }
        let m = n * h * w;
        let plane = h * w;
        let train = matches!(mode, BatchNormMode::Train { .. });
        if train && m < 2 {
            return Err(TensorError::DegenerateBatch(m));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let xd = x.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if let BatchNormMode::Train { momentum } = mode {
                let mut sum = 0.0;
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    sum += xd[base..base + plane].iter().sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut ss = 0.0;
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    ss += xd[base..base + plane].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                }
                let var = ss / m as f64;
                let unbiased = ss / (m - 1) as f64;
                stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * mean;
                stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * unbiased;
                (mean, var)
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[ch] = istd;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    let xh = (xd[i] - mean) * istd;
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        self.push(
            vec![n, c, h, w],
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = x.shape().to_vec();
        let rg = self.rg(input);
        self.push(shape, out, Op::Relu(input), rg)
    }

    /// 2x2 max pooling with stride 2; ties go to the first element in row-major order.
    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.shape()[..] else {
            return Err(shape_err("maxpool2x2", format!("input must be NCHW, got {:?}", x.shape())));
        };
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(shape_err("maxpool2x2", format!("spatial extent {h}x{w} too small")));
        }
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(input);
        self.push(vec![n, c, oh, ow], out, Op::MaxPool { input, argmax }, rg)
    }

    /// NCHW -> NC by spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.shape()[..] else {
            return Err(shape_err("global_avg_pool", format!("input must be NCHW, got {:?}", x.shape())));
        };
        let plane = h * w;
        let out = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let rg = self.rg(input);
        self.push(vec![n, c], out, Op::GlobalAvgPool(input), rg)
    }

    /// `[N, in] x [out, in]^T + [out] -> [N, out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let [n, fin] = x.shape()[..] else {
            return Err(shape_err("linear", format!("input must be [N, in], got {:?}", x.shape())));
        };
        let [fout, win] = w.shape()[..] else {
            return Err(shape_err("linear", format!("weight must be [out, in], got {:?}", w.shape())));
        };
        if win != fin {
            return Err(shape_err("linear", format!("input features {fin} vs weight {win}")));
        }
        let bd = match bias {
            Some(b) if self.value(b).shape() != [fout] => {
                return Err(shape_err("linear", format!("bias shape {:?}", self.value(b).shape())))
            }
            Some(b) => Some(self.value(b).data()),
            None => None,
        };
        let mut out = vec![0.0; n * fout];
        for s in 0..n {
            let xr = &x.data()[s * fin..(s + 1) * fin];
            for o in 0..fout {
                let wr = &w.data()[o * fin..(o + 1) * fin];
                let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                out[s * fout + o] = dot + bd.map_or(0.0, |b| b[o]);
            }
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(vec![n, fout], out, Op::Linear { input, weight, bias }, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(shape, out, Op::Add(a, b), rg)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(shape, out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|v| v * factor).collect();
        let shape = x.shape().to_vec();
        let rg = self.rg(input);
        self.push(shape, out, Op::Scale(input, factor), rg)
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.value(input).data().iter().sum();
        let rg = self.rg(input);
        self.push(vec![1], vec![total], Op::Sum(input), rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&z| stable_sigmoid(z)).collect();
        let shape = x.shape().to_vec();
        let rg = self.rg(input);
        self.push(shape, out, Op::Sigmoid(input), rg)
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.numel() != t.numel() || p.numel() == 0 {
            return Err(shape_err("mse_loss", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let n = p.numel() as f64;
        let loss = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let rg = self.rg(pred) || self.rg(target);
        self.push(vec![1], vec![loss], Op::MseLoss { pred, target }, rg)
    }

    /// Mean binary cross-entropy on logits, computed without forming `ln(sigmoid)`.
    pub fn bce_loss(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let (z, y) = (self.value(logits), self.value(targets));
        if z.numel() != y.numel() || z.numel() == 0 {
            return Err(shape_err("bce_loss", format!("{:?} vs {:?}", z.shape(), y.shape())));
        }
        let n = z.numel() as f64;
        let loss = z
            .data()
            .iter()
            .zip(y.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let rg = self.rg(logits) || self.rg(targets);
        self.push(vec![1], vec![loss], Op::BceLoss { logits, targets }, rg)
    }

    /// Reverse pass from a one-element `loss`. Clears previous gradients first;
    /// within the pass, contributions from multiple consumers are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        self.backward_seeded(loss, vec![1.0])
    }

    /// Reverse pass seeded with an explicit output gradient of `out`'s shape.
    pub fn backward_seeded(&mut self, out: Var, seed: Vec<f64>) -> Result<()> {
        if seed.len() != self.value(out).numel() {
            return Err(shape_err("backward", "seed gradient size"));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        if !self.rg(out) {
            return Ok(());
        }
        self.nodes[out.0].value.grad = Some(seed);
        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            let Some(gout) = self.nodes[idx].value.grad.take() else {
                continue;
            };
            let contribs = self.local_grads(idx, &gout);
            self.nodes[idx].value.grad = Some(gout);
            for (v, g) in contribs {
                if !self.rg(v) {
                    continue;
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(TensorError::NonFinite("backward"));
                }
                let acc = self.nodes[v.0].value.grad_mut_or_zero();
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, gout: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let g = geom;
                let col_len = g.col_rows() * g.out_plane();
                let out_sample = g.o * g.out_plane();
                let w = self.value(*weight).data();
                if self.rg(*weight) {
                    let mut dw = vec![0.0; w.len()];
                    for s in 0..g.n {
                        gemm_dweight(
                            g,
                            &gout[s * out_sample..(s + 1) * out_sample],
                            &cols[s * col_len..(s + 1) * col_len],
                            &mut dw,
                        );
                    }
                    res.push((*weight, dw));
                }
                if let Some(b) = bias.filter(|b| self.rg(*b)) {
                    let mut db = vec![0.0; g.o];
                    for s in 0..g.n {
                        for (oc, slot) in db.iter_mut().enumerate() {
                            let base = s * out_sample + oc * g.out_plane();
                            *slot += gout[base..base + g.out_plane()].iter().sum::<f64>();
                        }
                    }
                    res.push((b, db));
                }
                if self.rg(*input) {
                    let mut dx = vec![0.0; g.n * g.in_sample()];
                    let mut dcols = vec![0.0; col_len];
                    for s in 0..g.n {
                        gemm_dcols(g, w, &gout[s * out_sample..(s + 1) * out_sample], &mut dcols);
                        col2im(g, &dcols, &mut dx[s * g.in_sample()..(s + 1) * g.in_sample()]);
                    }
                    res.push((*input, dx));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let [n, c, h, w] = node.value.shape()[..] else { unreachable!() };
                let plane = h * w;
                let m = (n * plane) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    for s in 0..n {
                        let base = (s * c + ch) * plane;
                        for i in base..base + plane {
                            dgamma[ch] += gout[i] * xhat[i];
                            dbeta[ch] += gout[i];
                        }
                    }
                }
                if self.rg(*input) {
                    let mut dx = vec![0.0; gout.len()];
                    for ch in 0..c {
                        let k = gam[ch] * inv_std[ch];
                        for s in 0..n {
                            let base = (s * c + ch) * plane;
                            for i in base..base + plane {
                                dx[i] = if *train {
                                    k * (gout[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
                                } else {
                                    k * gout[i]
                                };
                            }
                        }
                    }
                    res.push((*input, dx));
                }
                res.push((*gamma, dgamma));
                res.push((*beta, dbeta));
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                res.push((*input, dx));
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![0.0; self.value(*input).numel()];
                for (&i, &g) in argmax.iter().zip(gout) {
                    dx[i] += g;
                }
                res.push((*input, dx));
            }
            Op::GlobalAvgPool(input) => {
                let x = self.value(*input);
                let plane = x.shape()[2] * x.shape()[3];
                let mut dx = vec![0.0; x.numel()];
                for (chunk, &g) in dx.chunks_mut(plane).zip(gout) {
                    chunk.fill(g / plane as f64);
                }
                res.push((*input, dx));
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, fin) = (x.shape()[0], x.shape()[1]);
                let fout = w.shape()[0];
                if self.rg(*input) {
                    let mut dx = vec![0.0; n * fin];
                    for s in 0..n {
                        for o in 0..fout {
                            let g = gout[s * fout + o];
                            for (d, wv) in dx[s * fin..(s + 1) * fin].iter_mut().zip(&w.data()[o * fin..(o + 1) * fin]) {
                                *d += g * wv;
                            }
                        }
                    }
                    res.push((*input, dx));
                }
                if self.rg(*weight) {
                    let mut dw = vec![0.0; fout * fin];
                    for s in 0..n {
                        for o in 0..fout {
                            let g = gout[s * fout + o];
                            for (d, xv) in dw[o * fin..(o + 1) * fin].iter_mut().zip(&x.data()[s * fin..(s + 1) * fin]) {
                                *d += g * xv;
                            }
                        }
                    }
                    res.push((*weight, dw));
                }
                if let Some(b) = bias {
                    let mut db = vec![0.0; fout];
                    for s in 0..n {
                        for o in 0..fout {
                            db[o] += gout[s * fout + o];
                        }
                    }
                    res.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, gout.to_vec()));
                res.push((*b, gout.to_vec()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                res.push((*a, gout.iter().zip(bv).map(|(g, y)| g * y).collect()));
                res.push((*b, gout.iter().zip(av).map(|(g, x)| g * x).collect()));
            }
            Op::Scale(input, factor) => {
                res.push((*input, gout.iter().map(|g| g * factor).collect()));
            }
            Op::Sum(input) => {
                res.push((*input, vec![gout[0]; self.value(*input).numel()]));
            }
            Op::Sigmoid(input) => {
                let y = node.value.data();
                res.push((*input, y.iter().zip(gout).map(|(y, g)| g * y * (1.0 - y)).collect()));
            }
            Op::MseLoss { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let k = 2.0 * gout[0] / p.len() as f64;
                let dp: Vec<f64> = p.iter().zip(t).map(|(a, b)| k * (a - b)).collect();
                res.push((*target, dp.iter().map(|v| -v).collect()));
                res.push((*pred, dp));
            }
            Op::BceLoss { logits, targets } => {
                let (z, y) = (self.value(*logits).data(), self.value(*targets).data());
                let k = gout[0] / z.len() as f64;
                res.push((
                    *logits,
                    z.iter().zip(y).map(|(&z, &y)| k * (stable_sigmoid(z) - y)).collect(),
                ));
                res.push((*targets, z.iter().map(|&z| -k * z).collect()));
            }
        }
        res
    }
}
