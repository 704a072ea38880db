use rand::Rng;

use super::{Mode, Real, Tensor};
use crate::error::{Error, Result};

/// Index of a node inside its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Sum(NodeId),
    MaxPool2 { input: NodeId, argmax: Vec<usize> },
    Upsample2(NodeId),
    Concat(NodeId, NodeId),
    Dropout { input: NodeId, mask: Vec<T> },
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        padding: usize,
    },
    Softmax(NodeId),
    Channel { input: NodeId, index: usize },
    Reshape(NodeId),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Lower bound applied to the argument of [`Graph::log`].
pub const LOG_FLOOR: f64 = 1e-12;

/// Append-only computation tape. Node ids are handed out in creation order,
/// which is also a valid topological order.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn conv_out(len: usize, k: usize, padding: usize) -> Option<usize> {
    (len + 2 * padding).checked_sub(k).map(|v| v + 1)
}

/// Output columns `lo..hi` whose input column `ox + kx − pad` lies inside
/// `0..w`.
fn valid_span(wo: usize, w: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).min(wo);
    let hi = (w + pad).saturating_sub(kx).min(wo).max(lo);
    (lo, hi)
}

/// Unfolds `x` (C×H×W) into a (C·k·k)×(Ho·Wo) patch matrix.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize) -> Vec<T> {
    let (ho, wo) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
    let n = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * n];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let (lo, hi) = valid_span(wo, w, kx, pad);
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    row[oy * wo + lo..oy * wo + hi].copy_from_slice(&src[lo + kx - pad..hi + kx - pad]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize) -> Vec<T> {
    let (ho, wo) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
    let n = ho * wo;
    let mut x = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let (lo, hi) = valid_span(wo, w, kx, pad);
                    let dst = &mut plane[iy as usize * w + lo + kx - pad..iy as usize * w + hi + kx - pad];
                    for (d, &g) in dst.iter_mut().zip(&row[oy * wo + lo..oy * wo + hi]) {
                        *d = *d + g;
                    }
                }
            }
        }
    }
    x
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(contribution).for_each(|(a, c)| *a = *a + c),
        None => *slot = Some(contribution),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient populated by the last [`Graph::backward`], if the node was
    /// reached.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].value.grad()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    fn unary(&mut self, input: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> NodeId {
        let src = &self.nodes[input.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("unary keeps shape");
        let rg = self.rg(&[input]);
        self.push(op, value, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: name,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("binary keeps shape");
        let rg = self.rg(&[a, b]);
        Ok(self.push(op, value, rg))
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Copy of `input` cut off from gradient flow.
    pub fn detach(&mut self, input: NodeId) -> NodeId {
        let value = self.nodes[input.0].value.data().to_vec();
        let shape = self.shape(input).to_vec();
        self.constant(Tensor::new(shape, value).expect("same shape"))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("ew_add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("ew_mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("ew_div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> NodeId {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        })
    }

    /// Natural log with the argument clamped to at least [`LOG_FLOOR`].
    pub fn log(&mut self, a: NodeId) -> NodeId {
        let floor = T::of(LOG_FLOOR);
        self.unary(a, Op::Log(a), |x| x.max(floor).ln())
    }

    /// Sum of every element into a `[1]` tensor.
    pub fn reduce_sum(&mut self, a: NodeId) -> NodeId {
        let s: T = self.data(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.nodes[a.0].value.data().to_vec();
        let old = self.shape(a).to_vec();
        let numel: usize = shape.iter().product();
        if numel != value.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: old,
                right: shape.to_vec(),
            });
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Reshape(a), Tensor::new(shape.to_vec(), value)?, rg))
    }

    fn chw(&self, op: &'static str, a: NodeId) -> Result<(usize, usize, usize)> {
        match *self.shape(a) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(Error::InvalidShape {
                op,
                msg: format!("expected C×H×W, got {s:?}"),
            }),
        }
    }

    /// 2×2 max pooling with stride 2. Ties route to the first maximum.
    pub fn max_pool2(&mut self, a: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.chw("max_pool2", a)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::IndivisibleInput {
                height: h,
                width: w,
                divisor: 2,
            });
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.data(a);
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = ci * h * w + 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for idx in [base + 1, base + w, base + w + 1] {
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
            Op::MaxPool2 { input: a, argmax },
            Tensor::new(vec![c, ho, wo], out)?,
            rg,
        ))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, a: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.chw("upsample2", a)?;
        let x = self.data(a);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * ho * wo];
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[(ci * ho + oy) * wo + ox] = x[(ci * h + oy / 2) * w + ox / 2];
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Upsample2(a), Tensor::new(vec![c, ho, wo], out)?, rg))
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, ha, wa) = self.chw("concat", a)?;
        let (cb, hb, wb) = self.chw("concat", b)?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: vec![ca, ha, wa],
                right: vec![cb, hb, wb],
            });
        }
        let mut out = self.data(a).to_vec();
        out.extend_from_slice(self.data(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Op::Concat(a, b),
            Tensor::new(vec![ca + cb, ha, wa], out)?,
            rg,
        ))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Eval mode and
    /// `p == 0` return `a` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: NodeId, p: f64, mode: Mode, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.data(a).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self.data(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Dropout { input: a, mask }, Tensor::new(shape, out)?, rg))
    }

    /// Zero-padded 2-D cross-correlation of a C×H×W input with F×C×k×k
    /// kernels plus a per-filter bias.
    pub fn conv2d(&mut self, x: NodeId, kernels: NodeId, bias: NodeId, padding: usize) -> Result<NodeId> {
        let (c, h, w) = self.chw("conv2d", x)?;
        let (f, kc, k) = match *self.shape(kernels) {
            [f, kc, k1, k2] if k1 == k2 => (f, kc, k1),
            ref s => {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    msg: format!("kernels must be F×C×k×k, got {s:?}"),
                })
            }
        };
        if kc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                left: self.shape(x).to_vec(),
                right: self.shape(kernels).to_vec(),
            });
        }
        if self.shape(bias) != [f] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: vec![f],
                right: self.shape(bias).to_vec(),
            });
        }
        let (Some(ho), Some(wo)) = (conv_out(h, k, padding), conv_out(w, k, padding)) else {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("kernel {k} larger than padded input {h}x{w}"),
            });
        };
        let n = ho * wo;
        let kk = c * k * k;
        let cols = im2col(self.data(x), c, h, w, k, padding);
        let mut out = Vec::with_capacity(f * n);
        for &b in self.data(bias) {
            out.extend(std::iter::repeat_n(b, n));
        }
        T::gemm(f, kk, n, self.data(kernels), (kk as isize, 1), &cols, (n as isize, 1), T::one(), &mut out);
        let rg = self.rg(&[x, kernels, bias]);
        Ok(self.push(
            Op::Conv2d {
                input: x,
                kernels,
                bias,
                padding,
            },
            Tensor::new(vec![f, ho, wo], out)?,
            rg,
        ))
    }

    /// Softmax across the channel axis of a C×H×W tensor (C ≥ 2), computed
    /// with per-pixel max subtraction.
    pub fn softmax_channel(&mut self, a: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.chw("softmax_channel", a)?;
        if c < 2 {
            return Err(Error::InvalidShape {
                op: "softmax_channel",
                msg: format!("needs at least 2 channels, got {c}"),
            });
        }
        let x = self.data(a);
        let hw = h * w;
        let mut out = vec![T::zero(); c * hw];
        for p in 0..hw {
            let m = (0..c).map(|ci| x[ci * hw + p]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for ci in 0..c {
                let e = (x[ci * hw + p] - m).exp();
                out[ci * hw + p] = e;
                z = z + e;
            }
            for ci in 0..c {
                out[ci * hw + p] = out[ci * hw + p] / z;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Softmax(a), Tensor::new(vec![c, h, w], out)?, rg))
    }

    /// Extracts channel `index` of a C×H×W tensor as an H×W tensor.
    pub fn channel(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let (c, h, w) = self.chw("channel", a)?;
        if index >= c {
            return Err(Error::InvalidShape {
                op: "channel",
                msg: format!("channel {index} out of range for {c} channels"),
            });
        }
        let out = self.data(a)[index * h * w..(index + 1) * h * w].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Channel { input: a, index }, Tensor::new(vec![h, w], out)?, rg))
    }

    /// Reverse sweep from a single-element `root`. Every node reachable
    /// from the root that requires a gradient gets its grad slot filled;
    /// all other slots are cleared.
    /// Which side of every non-smooth point the forward pass took: ReLU
    /// signs, pooling winners and log-floor hits, in tape order. Two passes
    /// with equal patterns evaluate the same smooth branch.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.data(*a).iter().map(|&x| usize::from(x > T::zero()))),
                Op::Log(a) => {
                    let floor = T::of(LOG_FLOOR);
                    out.extend(self.data(*a).iter().map(|&x| usize::from(x >= floor)))
                }
                Op::MaxPool2 { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![T::one()]);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            let g = grads.get_mut(i).and_then(Option::take);
            node.value.set_grad(g)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let mut send = |id: NodeId, contribution: Vec<T>| {
            if self.nodes[id.0].requires_grad {
                add_into(&mut grads[id.0], contribution);
            }
        };
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                send(*a, g.iter().zip(xb).map(|(&g, &y)| g * y).collect());
                send(*b, g.iter().zip(xa).map(|(&g, &x)| g * x).collect());
            }
            Op::Div(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                send(*a, g.iter().zip(xb).map(|(&g, &y)| g / y).collect());
                send(
                    *b,
                    g.iter()
                        .zip(xa.iter().zip(xb))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect(),
                );
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|&g| g * *s).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Relu(a) => send(
                *a,
                g.iter()
                    .zip(self.data(*a))
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect(),
            ),
            Op::Sigmoid(a) => send(
                *a,
                g.iter().zip(out).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
            ),
            Op::Log(a) => {
                let floor = T::of(LOG_FLOOR);
                send(
                    *a,
                    g.iter()
                        .zip(self.data(*a))
                        .map(|(&g, &x)| if x >= floor { g / x } else { T::zero() })
                        .collect(),
                )
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.data(*a).len()]),
            Op::MaxPool2 { input, argmax } => {
                let mut dx = vec![T::zero(); self.data(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] = dx[src] + gv;
                }
                send(*input, dx);
            }
            Op::Upsample2(a) => {
                let (c, h, w) = self.chw("upsample2", *a).expect("recorded shape");
                let wo = 2 * w;
                let mut dx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let o = (ci * 2 * h + 2 * y) * wo + 2 * x;
                            dx[(ci * h + y) * w + x] = g[o] + g[o + 1] + g[o + wo] + g[o + wo + 1];
                        }
                    }
                }
                send(*a, dx);
            }
            Op::Concat(a, b) => {
                let split = self.data(*a).len();
                send(*a, g[..split].to_vec());
                send(*b, g[split..].to_vec());
            }
            Op::Dropout { input, mask } => {
                send(*input, g.iter().zip(mask).map(|(&g, &m)| g * m).collect())
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                padding,
            } => {
                let (c, h, w) = self.chw("conv2d", *input).expect("recorded shape");
                let shape = self.shape(*kernels);
                let (f, k) = (shape[0], shape[2]);
                let n = g.len() / f;
                let kk = c * k * k;
                if self.nodes[bias.0].requires_grad {
                    send(*bias, g.chunks(n).map(|row| row.iter().copied().sum()).collect());
                }
                let need_w = self.nodes[kernels.0].requires_grad;
                let need_x = self.nodes[input.0].requires_grad;
                if need_w {
                    let cols = im2col(self.data(*input), c, h, w, k, *padding);
                    let mut dw = vec![T::zero(); f * kk];
                    // dW = dY · colsᵀ
                    T::gemm(f, n, kk, g, (n as isize, 1), &cols, (1, n as isize), T::zero(), &mut dw);
                    send(*kernels, dw);
                }
                if need_x {
                    let mut dcols = vec![T::zero(); kk * n];
                    // dcols = Wᵀ · dY
                    T::gemm(
                        kk,
                        f,
                        n,
                        self.data(*kernels),
                        (1, kk as isize),
                        g,
                        (n as isize, 1),
                        T::zero(),
                        &mut dcols,
                    );
                    send(*input, col2im(&dcols, c, h, w, k, *padding));
                }
            }
            Op::Softmax(a) => {
                let c = self.shape(*a)[0];
                let hw = out.len() / c;
                let mut dx = vec![T::zero(); out.len()];
                for p in 0..hw {
                    let dot: T = (0..c).map(|ci| g[ci * hw + p] * out[ci * hw + p]).sum();
                    for ci in 0..c {
                        let j = ci * hw + p;
                        dx[j] = out[j] * (g[j] - dot);
                    }
                }
                send(*a, dx);
            }
            Op::Channel { input, index } => {
                let mut dx = vec![T::zero(); self.data(*input).len()];
                let hw = g.len();
                dx[index * hw..(index + 1) * hw].copy_from_slice(g);
                send(*input, dx);
            }
        }
    }
}
