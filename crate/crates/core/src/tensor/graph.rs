use super::kernels::{gemm_nn, gemm_nn_set, gemm_nt, gemm_tn, gemm_tn_set, ConvGeom};
use super::Tensor;
use crate::error::{contract_err, shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one training-mode batch-norm evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) variance, the form folded into running statistics.
    pub var_unbiased: Vec<f64>,
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    GlobalAvgPool(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Reshape(Var),
    Log(Var),
    Pow(Var, f64),
    ClampMin(Var, f64),
    SoftmaxRows(Var),
    NormalizeRows(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Append-only computation tape. Node order is a topological order, so
/// backward simply walks the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [b, c] => Ok((*b, *c, 1)),
        [b, c, rest @ ..] => Ok((*b, *c, rest.iter().product())),
        _ => Err(shape_err!("batch-norm needs at least 2 dims, got {shape:?}")),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err!("{what}: {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.value(a).dims2()?;
        let (k2, c) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err!("matmul inner dims {r}×{k} · {k2}×{c}"));
        }
        let mut out = vec![0.0; r * c];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, r, k, c);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::MatMul(a, b), rg))
    }

    /// `x[B×K] + bias[K]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (b, k) = self.value(x).dims2()?;
        if self.value(bias).shape() != [k] {
            return Err(shape_err!(
                "row bias {:?} does not match {b}×{k}",
                self.value(bias).shape()
            ));
        }
        let mut out = self.value(x).data().to_vec();
        let bv = self.value(bias).data();
        for row in out.chunks_mut(k) {
            for (o, &bb) in row.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(vec![b, k], out)?, Op::AddRowBias(x, bias), rg))
    }

    /// Batched cross-correlation: input `B×C×H×W`, kernel `O×C×k×k`, optional bias `O`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        let (o, kc, kh, kw) = self.value(kernel).dims4()?;
        if kc != c || kh != kw {
            return Err(shape_err!(
                "kernel {:?} incompatible with input channels {c}",
                self.value(kernel).shape()
            ));
        }
        if let Some(bv) = bias {
            if self.value(bv).shape() != [o] {
                return Err(shape_err!("conv bias must have {o} entries"));
            }
        }
        let geom = ConvGeom::new(c, h, w, kh, stride, pad).ok_or_else(|| {
            shape_err!("conv {h}×{w} with kernel {kh}, stride {stride}, pad {pad} does not fit")
        })?;
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![0.0; b * o * cols_n];
        let mut cols = vec![0.0; rows * cols_n];
        let x = self.value(input).data();
        let kd = self.value(kernel).data();
        for s in 0..b {
            geom.im2col(&x[s * c * h * w..(s + 1) * c * h * w], &mut cols);
            let dst = &mut out[s * o * cols_n..(s + 1) * o * cols_n];
            match bias {
                Some(bv) => {
                    for (oc, &bb) in self.value(bv).data().iter().enumerate() {
                        dst[oc * cols_n..(oc + 1) * cols_n].fill(bb);
                    }
                    gemm_nn(kd, &cols, dst, o, rows, cols_n);
                }
                None => gemm_nn_set(kd, &cols, dst, o, rows, cols_n),
            }
        }
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.rg(&deps);
        let value = Tensor::new(vec![b, o, geom.out_h, geom.out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    /// `B×C×H×W → B×C`
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(a).dims4()?;
        let hw = h * w;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![b, c], out)?, Op::GlobalAvgPool(a), rg))
    }

    /// 2×2 max pooling with stride 2; spatial dims must be even.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(a).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("max_pool2 needs even spatial dims, got {h}×{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(vec![b, c, oh, ow], out)?,
            Op::MaxPool2 { input: a, argmax },
            rg,
        ))
    }

    /// Training-mode batch norm over every axis except 1, using biased batch
    /// variance for normalization. The returned statistics are for the caller
    /// to fold into running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (b, c, spatial) = channel_layout(self.value(x).shape())?;
        let n = b * spatial;
        if n < 2 {
            return Err(shape_err!("training batch norm needs at least 2 values per channel"));
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for bi in 0..b {
                let off = (bi * c + ch) * spatial;
                s += xd[off..off + spatial].iter().sum::<f64>();
            }
            let m = s / n as f64;
            let mut ss = 0.0;
            for bi in 0..b {
                let off = (bi * c + ch) * spatial;
                ss += xd[off..off + spatial].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = ss / n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let stats = BatchStats {
            mean: mean.clone(),
            var_unbiased: var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect(),
            count: n,
        };
        let v = self.normalize_affine(x, gamma, beta, &mean, &inv_std, b, c, spatial)?;
        Ok((v, stats))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (b, c, spatial) = channel_layout(self.value(x).shape())?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err!("running statistics do not have {c} channels"));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let id = self.normalize_affine(x, gamma, beta, running_mean, &inv_std, b, c, spatial)?;
        if let Op::BatchNorm { train, .. } = &mut self.nodes[id.0].op {
            *train = false;
        }
        Ok(id)
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize_affine(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        b: usize,
        c: usize,
        spatial: usize,
    ) -> Result<Var> {
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(shape_err!("batch-norm scale/shift must have {c} entries"));
        }
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * spatial;
                for i in off..off + spatial {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std: inv_std.to_vec(),
                train: true,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// `B×… → B×(rest)`
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape();
        let b = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(a, vec![b, rest])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let rg = self.rg(&[a]);
        self.push(v, Op::Log(a), rg)
    }

    pub fn powf(&mut self, a: Var, e: f64) -> Var {
        let v = self.value(a).map(|x| x.powf(e));
        let rg = self.rg(&[a]);
        self.push(v, Op::Pow(a, e), rg)
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).map(|x| x.max(floor));
        let rg = self.rg(&[a]);
        self.push(v, Op::ClampMin(a, floor), rg)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, k) = self.value(a).dims2()?;
        let x = self.value(a).data();
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let mut out = vec![0.0; r * k];
        for (src, dst) in x.chunks(k).zip(out.chunks_mut(k)) {
            let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - m).exp();
                s += *d;
            }
            for d in dst.iter_mut() {
                *d /= s;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![r, k], out)?, Op::SoftmaxRows(a), rg))
    }

    /// Divides each row by its sum.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (r, k) = self.value(a).dims2()?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::Numeric(format!("cannot normalize row with sum {s}")));
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![r, k], out)?, Op::NormalizeRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(v, Op::Mean(a), rg)
    }

    /// Accumulates d(loss)/d(node) into every node that requires a gradient.
    /// Returns the number of nodes whose adjoint was propagated.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if self.value(loss).len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(0);
        }
        let seed = Tensor::full(self.value(loss).shape(), 1.0);
        self.accumulate(loss, seed);
        let mut visited = 0;
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(gout) = self.nodes[id].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(id, &gout);
            self.nodes[id].grad = Some(gout);
            visited += 1;
            for (v, g) in contributions {
                self.accumulate(v, g);
            }
        }
        Ok(visited)
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn input_grads(&self, id: usize, gout: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[id];
        let want = |v: &Var| self.nodes[v.0].requires_grad;
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("adjoint shape")
        };
        let g = gout.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if want(v) {
                        out.push((*v, gout.clone()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((*a, gout.clone()));
                }
                if want(b) {
                    out.push((*b, gout.map(|x| -x)));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if want(a) {
                    out.push((*a, like(*a, g.iter().zip(vb).map(|(x, y)| x * y).collect())));
                }
                if want(b) {
                    out.push((*b, like(*b, g.iter().zip(va).map(|(x, y)| x * y).collect())));
                }
            }
            Op::Scale(a, s) => out.push((*a, gout.map(|x| x * s))),
            Op::AddScalar(a) => out.push((*a, gout.clone())),
            Op::MatMul(a, b) => {
                let (r, k) = self.value(*a).dims2().expect("matrix");
                let c = self.value(*b).shape()[1];
                if want(a) {
                    let mut da = vec![0.0; r * k];
                    gemm_nt(g, self.value(*b).data(), &mut da, r, c, k);
                    out.push((*a, like(*a, da)));
                }
                if want(b) {
                    let mut db = vec![0.0; k * c];
                    gemm_tn(self.value(*a).data(), g, &mut db, k, r, c);
                    out.push((*b, like(*b, db)));
                }
            }
            Op::AddRowBias(x, bias) => {
                if want(x) {
                    out.push((*x, gout.clone()));
                }
                if want(bias) {
                    let k = self.value(*bias).len();
                    let mut db = vec![0.0; k];
                    for row in g.chunks(k) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    out.push((*bias, like(*bias, db)));
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => out.extend(self.conv_adjoint(*input, *kernel, *bias, geom, g)),
            Op::Relu(a) => {
                let va = self.value(*a).data();
                out.push((
                    *a,
                    like(*a, g.iter().zip(va).map(|(&d, &x)| if x > 0.0 { d } else { 0.0 }).collect()),
                ));
            }
            Op::GlobalAvgPool(a) => {
                let (_, _, h, w) = self.value(*a).dims4().expect("4-D");
                let hw = h * w;
                let mut da = Vec::with_capacity(g.len() * hw);
                for &d in g {
                    da.extend(std::iter::repeat_n(d / hw as f64, hw));
                }
                out.push((*a, like(*a, da)));
            }
            Op::MaxPool2 { input, argmax } => {
                let mut da = vec![0.0; self.value(*input).len()];
                for (&idx, &d) in argmax.iter().zip(g) {
                    da[idx] += d;
                }
                out.push((*input, like(*input, da)));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (b, c, spatial) = channel_layout(self.value(*input).shape()).expect("bn");
                let gd = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * spatial;
                        for i in off..off + spatial {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                if want(input) {
                    let n = (b * spatial) as f64;
                    let mut dx = vec![0.0; g.len()];
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * spatial;
                            let scale = gd[ch] * inv_std[ch];
                            for i in off..off + spatial {
                                dx[i] = if *train {
                                    scale * (g[i] - dbeta[ch] / n - xhat[i] * dgamma[ch] / n)
                                } else {
                                    scale * g[i]
                                };
                            }
                        }
                    }
                    out.push((*input, like(*input, dx)));
                }
                if want(gamma) {
                    out.push((*gamma, like(*gamma, dgamma)));
                }
                if want(beta) {
                    out.push((*beta, like(*beta, dbeta)));
                }
            }
            Op::Reshape(a) => out.push((*a, like(*a, g.to_vec()))),
            Op::Log(a) => {
                let va = self.value(*a).data();
                out.push((*a, like(*a, g.iter().zip(va).map(|(d, x)| d / x).collect())));
            }
            Op::Pow(a, e) => {
                let va = self.value(*a).data();
                out.push((
                    *a,
                    like(*a, g.iter().zip(va).map(|(d, x)| d * e * x.powf(e - 1.0)).collect()),
                ));
            }
            Op::ClampMin(a, floor) => {
                let va = self.value(*a).data();
                out.push((
                    *a,
                    like(*a, g.iter().zip(va).map(|(&d, &x)| if x >= *floor { d } else { 0.0 }).collect()),
                ));
            }
            Op::SoftmaxRows(a) => {
                let k = node.value.shape()[1];
                let y = node.value.data();
                let mut da = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(k).zip(g.chunks(k)).zip(da.chunks_mut(k)) {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - s);
                    }
                }
                out.push((*a, like(*a, da)));
            }
            Op::NormalizeRows(a) => {
                let k = node.value.shape()[1];
                let y = node.value.data();
                let x = self.value(*a).data();
                let mut da = vec![0.0; y.len()];
                for (((yr, gr), dr), xr) in y.chunks(k).zip(g.chunks(k)).zip(da.chunks_mut(k)).zip(x.chunks(k)) {
                    let total: f64 = xr.iter().sum();
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (d, &gv) in dr.iter_mut().zip(gr) {
                        *d = (gv - s) / total;
                    }
                }
                out.push((*a, like(*a, da)));
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                out.push((*a, like(*a, vec![g[0]; n])));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                out.push((*a, like(*a, vec![g[0] / n as f64; n])));
            }
        }
        out.retain(|(v, _)| want(v));
        out
    }

    fn conv_adjoint(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: &ConvGeom,
        g: &[f64],
    ) -> Vec<(Var, Tensor)> {
        let (b, c, h, w) = self.value(input).dims4().expect("4-D");
        let o = self.value(kernel).shape()[0];
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let need_x = self.nodes[input.0].requires_grad;
        let need_k = self.nodes[kernel.0].requires_grad;
        let x = self.value(input).data();
        let kd = self.value(kernel).data();
        let mut dk = vec![0.0; if need_k { o * rows } else { 0 }];
        let mut dx = vec![0.0; if need_x { x.len() } else { 0 }];
        let mut cols = vec![0.0; rows * cols_n];
        let mut dcols = vec![0.0; rows * cols_n];
        for s in 0..b {
            let gs = &g[s * o * cols_n..(s + 1) * o * cols_n];
            if need_k {
                geom.im2col(&x[s * c * h * w..(s + 1) * c * h * w], &mut cols);
                gemm_nt(gs, &cols, &mut dk, o, cols_n, rows);
            }
            if need_x {
                gemm_tn_set(kd, gs, &mut dcols, rows, o, cols_n);
                geom.col2im(&dcols, &mut dx[s * c * h * w..(s + 1) * c * h * w]);
            }
        }
        let mut out = Vec::new();
        if need_x {
            out.push((input, Tensor::new(self.value(input).shape().to_vec(), dx).expect("dx")));
        }
        if need_k {
            out.push((kernel, Tensor::new(self.value(kernel).shape().to_vec(), dk).expect("dk")));
        }
        if let Some(bv) = bias {
            if self.nodes[bv.0].requires_grad {
                let mut db = vec![0.0; o];
                for (i, plane) in g.chunks(cols_n).enumerate() {
                    db[i % o] += plane.iter().sum::<f64>();
                }
                out.push((bv, Tensor::new(vec![o], db).expect("db")));
            }
        }
        out
    }
}
