//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation appends a node holding its output value
//! and the indices of its inputs. [`Tape::backward`] walks the nodes in exact
//! reverse order and accumulates gradients into trainable leaves.

use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry, Padding};
use super::float::{gemm, MatRef};
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    Relu(Var),
    Sigmoid(Var),
    Upsample { x: Var, factor: usize },
    AvgPool2(Var),
    ChannelMean(Var),
    ChannelStd { x: Var },
    ChannelNormalize { x: Var, mean: Var, std: Var },
    ChannelAffine { x: Var, scale: Var, shift: Var },
    Softmax(Var),
    Bmm { a: Var, b: Var, ta: bool, tb: bool, dims: (usize, usize, usize, usize) },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    SampleL2(Var),
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![x, w];
                v.extend(b);
                v
            }
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Upsample { x, .. }
            | Op::AvgPool2(x)
            | Op::ChannelMean(x)
            | Op::ChannelStd { x }
            | Op::Softmax(x)
            | Op::Reshape(x)
            | Op::Scale(x, _)
            | Op::SampleL2(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![x],
            Op::ChannelNormalize { x, mean, std } => vec![x, mean, std],
            Op::ChannelAffine { x, scale, shift } => vec![x, scale, shift],
            Op::Bmm { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T: Float> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    trainable: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Clone, Default)]
pub struct Tape<T: Float = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad, trainable: false });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Trainable leaves receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor<T>, trainable: bool) -> Var {
        let mut value = value;
        value.grad = None;
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: trainable, trainable });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `x`'s value as a constant; gradients stop here.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.constant(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a trainable leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(vec![0]))
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn clear_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.clear_grad();
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.cout] {
                return Err(Error::shape("conv2d", format!("bias must be [{}], got {:?}", geom.cout, self.shape(b))));
            }
        }
        let out = conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let t = Tensor::new(vec![geom.batch, geom.cout, geom.ho, geom.wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(t, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(t, Op::Sigmoid(x))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
        }
        let (b, c, h, w) = self.value(x).dims4("upsample_nearest")?;
        let (ho, wo) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * ho * wo);
        for plane in src.chunks_exact(h * w) {
            for oy in 0..ho {
                let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
                for ox in 0..wo {
                    out.push(row[ox / factor]);
                }
            }
        }
        let t = Tensor::new(vec![b, c, ho, wo], out)?;
        Ok(self.push(t, Op::Upsample { x, factor }))
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avg_pool2", format!("spatial extents must be even, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * ho * wo);
        for plane in src.chunks_exact(h * w) {
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = 2 * oy * w + 2 * ox;
                    out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter);
                }
            }
        }
        let t = Tensor::new(vec![b, c, ho, wo], out)?;
        Ok(self.push(t, Op::AvgPool2(x)))
    }

    /// Per-(batch, channel) spatial mean: `[B,C,H,W] -> [B,C]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("channel_mean")?;
        let n = T::from_f64((h * w) as f64);
        let out = self.value(x).data().chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() / n).collect();
        let t = Tensor::new(vec![b, c], out)?;
        Ok(self.push(t, Op::ChannelMean(x)))
    }

    /// Per-(batch, channel) `sqrt(population variance + eps)`.
    pub fn channel_std(&mut self, x: Var, eps: T) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("channel_std")?;
        let n = T::from_f64((h * w) as f64);
        let out = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|p| {
                let mu = p.iter().copied().sum::<T>() / n;
                let var = p.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
                (var + eps).sqrt()
            })
            .collect();
        let t = Tensor::new(vec![b, c], out)?;
        Ok(self.push(t, Op::ChannelStd { x }))
    }

    /// Both channel statistics at once.
    pub fn channel_stats(&mut self, x: Var, eps: T) -> Result<(Var, Var)> {
        Ok((self.channel_mean(x)?, self.channel_std(x, eps)?))
    }

    fn check_channel_operand(&self, op: &'static str, x: Var, stat: Var) -> Result<(usize, usize)> {
        let (b, c, h, w) = self.value(x).dims4(op)?;
        if self.shape(stat) != [b, c] {
            return Err(Error::shape(op, format!("statistic must be [{b},{c}], got {:?}", self.shape(stat))));
        }
        Ok((b * c, h * w))
    }

    /// `(x - mean) / std` with `[B,C]` statistics broadcast over space.
    pub fn channel_normalize(&mut self, x: Var, mean: Var, std: Var) -> Result<Var> {
        let (planes, hw) = self.check_channel_operand("channel_normalize", x, mean)?;
        self.check_channel_operand("channel_normalize", x, std)?;
        let (xd, md, sd) = (self.value(x).data(), self.value(mean).data(), self.value(std).data());
        let mut out = Vec::with_capacity(planes * hw);
        for p in 0..planes {
            let inv = T::one() / sd[p];
            out.extend(xd[p * hw..(p + 1) * hw].iter().map(|&v| (v - md[p]) * inv));
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(t, Op::ChannelNormalize { x, mean, std }))
    }

    /// `x * scale + shift` with `[B,C]` coefficients broadcast over space.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (planes, hw) = self.check_channel_operand("channel_affine", x, scale)?;
        self.check_channel_operand("channel_affine", x, shift)?;
        let (xd, sd, td) = (self.value(x).data(), self.value(scale).data(), self.value(shift).data());
        let mut out = Vec::with_capacity(planes * hw);
        for p in 0..planes {
            out.extend(xd[p * hw..(p + 1) * hw].iter().map(|&v| v * sd[p] + td[p]));
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(t, Op::ChannelAffine { x, scale, shift }))
    }

    /// Numerically stable softmax along the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let m = *shape.last().ok_or_else(|| Error::shape("softmax", "rank-0 input"))?;
        let mut out = self.value(x).data().to_vec();
        if m > 0 {
            for row in out.chunks_exact_mut(m) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z = z + *v;
                }
                for v in row.iter_mut() {
                    *v = *v / z;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Softmax(x)))
    }

    /// Batched matrix product of rank-3 operands, each optionally transposed
    /// in its last two axes: `op(a)[B,M,K] x op(b)[B,K,N] -> [B,M,N]`.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ([ba, a1, a2], [bb, b1, b2]) = (sa.as_slice(), sb.as_slice()) else {
            return Err(Error::shape("bmm", format!("operands must be rank 3, got {sa:?} and {sb:?}")));
        };
        let (batch, m, k) = if ta { (*ba, *a2, *a1) } else { (*ba, *a1, *a2) };
        let (kb, n) = if tb { (*b2, *b1) } else { (*b1, *b2) };
        if *bb != batch || kb != k {
            return Err(Error::shape("bmm", format!("op(a) is [{batch},{m},{k}] but op(b) is [{bb},{kb},{n}]")));
        }
        let mut out = vec![T::zero(); batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            let am = MatRef::new(&ad[i * m * k..(i + 1) * m * k], *a1, *a2);
            let bm = MatRef::new(&bd[i * k * n..(i + 1) * k * n], *b1, *b2);
            let am = if ta { am.t() } else { am };
            let bm = if tb { bm.t() } else { bm };
            gemm(am, bm, T::zero(), &mut out[i * m * n..(i + 1) * m * n]);
        }
        let t = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(t, Op::Bmm { a, b, ta, tb, dims: (batch, m, k, n) }))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::Scale(x, c))
    }

    /// Euclidean norm of each batch item: `[B, ...] -> [B]`.
    pub fn sample_l2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let b = *shape.first().ok_or_else(|| Error::shape("sample_l2", "rank-0 input"))?;
        let per = self.value(x).len().checked_div(b).unwrap_or(0);
        let out = (0..b)
            .map(|i| self.value(x).data()[i * per..(i + 1) * per].iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let t = Tensor::new(vec![b], out)?;
        Ok(self.push(t, Op::SampleL2(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_f64(self.value(x).len().max(1) as f64);
        let s = self.value(x).data().iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Propagates d`loss` back to every trainable leaf, accumulating into
    /// their gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        if !self.value(loss).item().is_finite() {
            return Err(Error::NonFinite("loss value".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].trainable {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("gradient of leaf #{i}")));
                    }
                    self.nodes[i].value.accumulate_grad(&g);
                }
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut send = |v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a = *a + *d),
                slot @ None => *slot = Some(delta),
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (wants(x), wants(w), b.is_some_and(wants));
                let cg = conv2d_backward(&geom, self.value(x).data(), self.value(w).data(), g, need);
                if let Some(dx) = cg.dx {
                    send(x, dx);
                }
                if let Some(dw) = cg.dw {
                    send(w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    send(b, db);
                }
            }
            Op::Relu(x) => {
                let d = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                send(x, d);
            }
            Op::Sigmoid(x) => {
                let d = node.value.data().iter().zip(g).map(|(&y, &gv)| gv * y * (T::one() - y)).collect();
                send(x, d);
            }
            Op::Upsample { x, factor } => {
                let (_, _, h, w) = self.value(x).dims4("upsample_nearest")?;
                let (ho, wo) = (h * factor, w * factor);
                let mut d = vec![T::zero(); self.value(x).len()];
                for (plane, gp) in d.chunks_exact_mut(h * w).zip(g.chunks_exact(ho * wo)) {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let idx = (oy / factor) * w + ox / factor;
                            plane[idx] = plane[idx] + gp[oy * wo + ox];
                        }
                    }
                }
                send(x, d);
            }
            Op::AvgPool2(x) => {
                let (_, _, h, w) = self.value(x).dims4("avg_pool2")?;
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::from_f64(0.25);
                let mut d = vec![T::zero(); self.value(x).len()];
                for (plane, gp) in d.chunks_exact_mut(h * w).zip(g.chunks_exact(ho * wo)) {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = gp[oy * wo + ox] * quarter;
                            let i = 2 * oy * w + 2 * ox;
                            plane[i] = v;
                            plane[i + 1] = v;
                            plane[i + w] = v;
                            plane[i + w + 1] = v;
                        }
                    }
                }
                send(x, d);
            }
            Op::ChannelMean(x) => {
                let (_, _, h, w) = self.value(x).dims4("channel_mean")?;
                let hw = h * w;
                let n = T::from_f64(hw as f64);
                let mut d = Vec::with_capacity(self.value(x).len());
                for &gv in g {
                    d.extend(std::iter::repeat_n(gv / n, hw));
                }
                send(x, d);
            }
            Op::ChannelStd { x } => {
                let (_, _, h, w) = self.value(x).dims4("channel_std")?;
                let hw = h * w;
                let n = T::from_f64(hw as f64);
                let mut d = Vec::with_capacity(self.value(x).len());
                for (p, plane) in self.value(x).data().chunks_exact(hw).enumerate() {
                    let mu = plane.iter().copied().sum::<T>() / n;
                    let coef = g[p] / (n * node.value.data()[p]);
                    d.extend(plane.iter().map(|&v| (v - mu) * coef));
                }
                send(x, d);
            }
            Op::ChannelNormalize { x, mean, std } => {
                let (_, _, h, w) = self.value(x).dims4("channel_normalize")?;
                let hw = h * w;
                let (xd, md, sd) = (self.value(x).data(), self.value(mean).data(), self.value(std).data());
                let planes = md.len();
                if wants(x) {
                    let mut d = Vec::with_capacity(xd.len());
                    for p in 0..planes {
                        let inv = T::one() / sd[p];
                        d.extend(g[p * hw..(p + 1) * hw].iter().map(|&gv| gv * inv));
                    }
                    send(x, d);
                }
                if wants(mean) || wants(std) {
                    let mut dm = vec![T::zero(); planes];
                    let mut ds = vec![T::zero(); planes];
                    for p in 0..planes {
                        let gp = &g[p * hw..(p + 1) * hw];
                        let xp = &xd[p * hw..(p + 1) * hw];
                        let inv = T::one() / sd[p];
                        dm[p] = -gp.iter().copied().sum::<T>() * inv;
                        ds[p] = -gp.iter().zip(xp).map(|(&gv, &xv)| gv * (xv - md[p])).sum::<T>() * inv * inv;
                    }
                    send(mean, dm);
                    send(std, ds);
                }
            }
            Op::ChannelAffine { x, scale, shift } => {
                let (_, _, h, w) = self.value(x).dims4("channel_affine")?;
                let hw = h * w;
                let (xd, sd) = (self.value(x).data(), self.value(scale).data());
                let planes = sd.len();
                if wants(x) {
                    let mut d = Vec::with_capacity(xd.len());
                    for p in 0..planes {
                        d.extend(g[p * hw..(p + 1) * hw].iter().map(|&gv| gv * sd[p]));
                    }
                    send(x, d);
                }
                if wants(scale) {
                    let d = (0..planes)
                        .map(|p| {
                            g[p * hw..(p + 1) * hw].iter().zip(&xd[p * hw..(p + 1) * hw]).map(|(&a, &b)| a * b).sum()
                        })
                        .collect();
                    send(scale, d);
                }
                if wants(shift) {
                    let d = (0..planes).map(|p| g[p * hw..(p + 1) * hw].iter().copied().sum()).collect();
                    send(shift, d);
                }
            }
            Op::Softmax(x) => {
                let m = *node.value.shape().last().unwrap_or(&1);
                let mut d = Vec::with_capacity(g.len());
                if m > 0 {
                    for (yr, gr) in node.value.data().chunks_exact(m).zip(g.chunks_exact(m)) {
                        let dot = yr.iter().zip(gr).map(|(&y, &gv)| y * gv).sum::<T>();
                        d.extend(yr.iter().zip(gr).map(|(&y, &gv)| y * (gv - dot)));
                    }
                }
                send(x, d);
            }
            Op::Bmm { a, b, ta, tb, dims: (batch, m, k, n) } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (ad, bd) = (self.value(a).data(), self.value(b).data());
                if wants(a) {
                    let mut d = vec![T::zero(); ad.len()];
                    for i in 0..batch {
                        let gm = MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n);
                        let bm = MatRef::new(&bd[i * k * n..(i + 1) * k * n], sb[1], sb[2]);
                        let bm = if tb { bm.t() } else { bm };
                        let dst = &mut d[i * m * k..(i + 1) * m * k];
                        if ta {
                            gemm(bm, gm.t(), T::zero(), dst);
                        } else {
                            gemm(gm, bm.t(), T::zero(), dst);
                        }
                    }
                    send(a, d);
                }
                if wants(b) {
                    let mut d = vec![T::zero(); bd.len()];
                    for i in 0..batch {
                        let gm = MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n);
                        let am = MatRef::new(&ad[i * m * k..(i + 1) * m * k], sa[1], sa[2]);
                        let am = if ta { am.t() } else { am };
                        let dst = &mut d[i * k * n..(i + 1) * k * n];
                        if tb {
                            gemm(gm.t(), am, T::zero(), dst);
                        } else {
                            gemm(am.t(), gm, T::zero(), dst);
                        }
                    }
                    send(b, d);
                }
            }
            Op::Reshape(x) => send(x, g.to_vec()),
            Op::Add(a, b) => {
                send(a, g.to_vec());
                send(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(a, g.to_vec());
                send(b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    send(a, g.iter().zip(self.value(b).data()).map(|(&gv, &bv)| gv * bv).collect());
                }
                if wants(b) {
                    send(b, g.iter().zip(self.value(a).data()).map(|(&gv, &av)| gv * av).collect());
                }
            }
            Op::Scale(x, c) => send(x, g.iter().map(|&v| v * c).collect()),
            Op::SampleL2(x) => {
                let xd = self.value(x).data();
                let b = g.len();
                let per = xd.len().checked_div(b).unwrap_or(0);
                let mut d = Vec::with_capacity(xd.len());
                for (i, &gv) in g.iter().enumerate() {
                    let norm = node.value.data()[i];
                    let coef = if norm > T::zero() { gv / norm } else { T::zero() };
                    d.extend(xd[i * per..(i + 1) * per].iter().map(|&v| v * coef));
                }
                send(x, d);
            }
            Op::Sum(x) => send(x, vec![g[0]; self.value(x).len()]),
            Op::Mean(x) => {
                let n = T::from_f64(self.value(x).len().max(1) as f64);
                send(x, vec![g[0] / n; self.value(x).len()]);
            }
        }
        Ok(())
    }
}
