//! Tape-based reverse-mode autodiff over NCHW tensors.

use rand::Rng;

use super::kernels::{col2im, gemm, im2col, reflect, Window};
use super::tensor::{Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const NORM_EPS: f32 = 1e-5;

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        win: Window,
        cols: Vec<f32>,
    },
    ConvT {
        x: Var,
        w: Var,
        b: Option<Var>,
        win: Window,
    },
    ReflectPad {
        x: Var,
        pad: usize,
    },
    Upsample2x {
        x: Var,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<f32>,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    Tanh {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Scale {
        x: Var,
        s: f32,
    },
    MseConst {
        x: Var,
        target: f32,
    },
    BceConst {
        x: Var,
        target: f32,
    },
    L1 {
        a: Var,
        b: Var,
    },
    WeightedSum {
        terms: Vec<(Var, f32)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

/// A computation recorded for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn scalar_shape() -> Shape {
    [1, 1, 1, 1]
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.push(value, Op::Leaf, needs_grad)
    }

    /// A constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cross-correlation with a `[Cout, Cin, k, k]` kernel and zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        assert_eq!(ws[1], xs[1], "conv2d: weight expects {} input channels, got {}", ws[1], xs[1]);
        assert_eq!(ws[2], ws[3]);
        let (cout, k) = (ws[0], ws[2]);
        let win = Window::new(xs[1], xs[2], xs[3], k, stride, pad);
        let (rows, ncols) = (win.rows(), win.cols());
        let mut cols = vec![0.0; xs[0] * rows * ncols];
        let mut out = Tensor::zeros([xs[0], cout, win.ho, win.wo]);
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            for n in 0..xs[0] {
                let c = &mut cols[n * rows * ncols..(n + 1) * rows * ncols];
                im2col(xv.item_slice(n), &win, c);
                let o = &mut out.data_mut()[n * cout * ncols..(n + 1) * cout * ncols];
                gemm(false, false, cout, ncols, rows, 1.0, wv, c, 0.0, o);
            }
        }
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data());
        }
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        // columns are only needed for the weight gradient
        let cols = if self.ng(w) { cols } else { Vec::new() };
        self.push(out, Op::Conv { x, w, b, win, cols }, needs)
    }

    /// Transposed convolution with a `[Cin, Cout, k, k]` kernel.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        assert_eq!(ws[0], xs[1], "conv_transpose2d: weight expects {} input channels, got {}", ws[0], xs[1]);
        let (cout, k) = (ws[1], ws[2]);
        let ho = (xs[2] - 1) * stride + k - 2 * pad;
        let wo = (xs[3] - 1) * stride + k - 2 * pad;
        let win = Window::new(cout, ho, wo, k, stride, pad);
        assert_eq!((win.ho, win.wo), (xs[2], xs[3]));
        let (rows, ncols) = (win.rows(), win.cols());
        let mut out = Tensor::zeros([xs[0], cout, ho, wo]);
        let mut cols = vec![0.0; rows * ncols];
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            let olen = cout * ho * wo;
            for n in 0..xs[0] {
                gemm(true, false, rows, ncols, xs[1], 1.0, wv, xv.item_slice(n), 0.0, &mut cols);
                col2im(&cols, &win, &mut out.data_mut()[n * olen..(n + 1) * olen]);
            }
        }
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data());
        }
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, Op::ConvT { x, w, b, win }, needs)
    }

    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        assert!(pad < h && pad < w, "reflect padding {pad} needs a side longer than the pad");
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut out = Tensor::zeros([n, c, hp, wp]);
        let src = xv.data();
        let dst = out.data_mut();
        for p in 0..n * c {
            for y in 0..hp {
                let sy = reflect(y as isize - pad as isize, h);
                for xx in 0..wp {
                    let sx = reflect(xx as isize - pad as isize, w);
                    dst[(p * hp + y) * wp + xx] = src[(p * h + sy) * w + sx];
                }
            }
        }
        let needs = self.ng(x);
        self.push(out, Op::ReflectPad { x, pad }, needs)
    }

    /// Nearest-neighbour upsampling by a factor of two.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        let src = xv.data();
        let dst = out.data_mut();
        for p in 0..n * c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let needs = self.ng(x);
        self.push(out, Op::Upsample2x { x }, needs)
    }

    /// Per-item, per-channel normalization over the spatial axes, without affine terms.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let hw = h * w;
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(n * c);
        for plane in out.data_mut().chunks_mut(hw) {
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
            let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / hw as f64;
            let inv = 1.0 / (var + NORM_EPS as f64).sqrt();
            for v in plane.iter_mut() {
                *v = ((*v as f64 - mean) * inv) as f32;
            }
            inv_std.push(inv as f32);
        }
        debug_assert_eq!(inv_std.len(), n * c);
        let needs = self.ng(x);
        self.push(out, Op::InstanceNorm { x, inv_std }, needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        let needs = self.ng(x);
        self.push(out, Op::LeakyRelu { x, slope }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        let needs = self.ng(x);
        self.push(out, Op::Tanh { x }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add: shape mismatch");
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        let needs = self.ng(a) || self.ng(b);
        self.push(out, Op::Add { a, b }, needs)
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        assert!(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3], "concat: {sa:?} vs {sb:?}");
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for n in 0..sa[0] {
            data.extend_from_slice(av.item_slice(n));
            data.extend_from_slice(bv.item_slice(n));
        }
        let out = Tensor::from_vec([sa[0], sa[1] + sb[1], sa[2], sa[3]], data);
        let needs = self.ng(a) || self.ng(b);
        self.push(out, Op::Concat { a, b }, needs)
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f32, rng: &mut R) -> Var {
        let mut out = self.value(x).clone();
        let keep = 1.0 - p;
        let mask: Vec<f32> = (0..out.len())
            .map(|_| if rng.random::<f32>() < p { 0.0 } else { 1.0 / keep })
            .collect();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        let needs = self.ng(x);
        self.push(out, Op::Dropout { x, mask }, needs)
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= s;
        }
        let needs = self.ng(x);
        self.push(out, Op::Scale { x, s }, needs)
    }

    /// `mean((x - target)^2)`.
    pub fn mse_const(&mut self, x: Var, target: f32) -> Var {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().map(|&v| ((v - target) as f64).powi(2)).sum();
        let out = Tensor::scalar((s / xv.len() as f64) as f32);
        let needs = self.ng(x);
        self.push(out, Op::MseConst { x, target }, needs)
    }

    /// Mean binary cross-entropy of logits `x` against a constant label.
    pub fn bce_logits_const(&mut self, x: Var, target: f32) -> Var {
        let xv = self.value(x);
        let s: f64 = xv
            .data()
            .iter()
            .map(|&z| {
                let z = z as f64;
                z.max(0.0) - z * target as f64 + (-z.abs()).exp().ln_1p()
            })
            .sum();
        let out = Tensor::scalar((s / xv.len() as f64) as f32);
        let needs = self.ng(x);
        self.push(out, Op::BceConst { x, target }, needs)
    }

    /// `mean(|a - b|)`.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "l1: shape mismatch");
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y).abs() as f64).sum();
        let out = Tensor::scalar((s / av.len() as f64) as f32);
        let needs = self.ng(a) || self.ng(b);
        self.push(out, Op::L1 { a, b }, needs)
    }

    /// `sum_i w_i * x_i` over equally shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Var {
        assert!(!terms.is_empty());
        let mut out = Tensor::zeros(self.value(terms[0].0).shape());
        for &(v, wt) in terms {
            assert_eq!(out.shape(), self.value(v).shape(), "weighted_sum: shape mismatch");
            for (o, x) in out.data_mut().iter_mut().zip(self.value(v).data()) {
                *o += wt * x;
            }
        }
        let needs = terms.iter().any(|&(v, _)| self.ng(v));
        self.push(out, Op::WeightedSum { terms: terms.to_vec() }, needs)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), scalar_shape(), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulate into an existing gradient buffer in place, allocating on first use.
    fn grad_buf<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> &'a mut Tensor {
        let shape = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    fn backward_node(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, win, cols } => {
                let (x, w) = (*x, *w);
                let n = gy.n();
                let (rows, ncols, cout) = (win.rows(), win.cols(), gy.c());
                if let Some(b) = b {
                    if self.ng(*b) {
                        let gb = bias_grad(gy);
                        self.accumulate(grads, *b, gb);
                    }
                }
                if self.ng(w) {
                    let gw = self.grad_buf(grads, w);
                    for i in 0..n {
                        let c = &cols[i * rows * ncols..(i + 1) * rows * ncols];
                        gemm(false, true, cout, rows, ncols, 1.0, gy.item_slice(i), c, 1.0, gw.data_mut());
                    }
                }
                if self.ng(x) {
                    let wv = self.value(w).data();
                    let mut dcols = vec![0.0; rows * ncols];
                    let ilen = self.value(x).item_len();
                    let gx = self.grad_buf(grads, x);
                    for i in 0..n {
                        gemm(true, false, rows, ncols, cout, 1.0, wv, gy.item_slice(i), 0.0, &mut dcols);
                        col2im(&dcols, win, &mut gx.data_mut()[i * ilen..(i + 1) * ilen]);
                    }
                }
            }
            Op::ConvT { x, w, b, win } => {
                let (x, w) = (*x, *w);
                let n = gy.n();
                let (rows, ncols) = (win.rows(), win.cols());
                let cin = self.value(x).c();
                if let Some(b) = b {
                    if self.ng(*b) {
                        let gb = bias_grad(gy);
                        self.accumulate(grads, *b, gb);
                    }
                }
                if !(self.ng(x) || self.ng(w)) {
                    return;
                }
                let mut dcols = vec![0.0; n * rows * ncols];
                for i in 0..n {
                    im2col(gy.item_slice(i), win, &mut dcols[i * rows * ncols..(i + 1) * rows * ncols]);
                }
                if self.ng(w) {
                    let xv = self.value(x);
                    let gw = self.grad_buf(grads, w);
                    for i in 0..n {
                        let dc = &dcols[i * rows * ncols..(i + 1) * rows * ncols];
                        gemm(false, true, cin, rows, ncols, 1.0, xv.item_slice(i), dc, 1.0, gw.data_mut());
                    }
                }
                if self.ng(x) {
                    let wv = self.value(w).data();
                    let ilen = self.value(x).item_len();
                    let gx = self.grad_buf(grads, x);
                    for i in 0..n {
                        let dc = &dcols[i * rows * ncols..(i + 1) * rows * ncols];
                        gemm(false, false, cin, ncols, rows, 1.0, wv, dc, 1.0, &mut gx.data_mut()[i * ilen..(i + 1) * ilen]);
                    }
                }
            }
            Op::ReflectPad { x, pad } => {
                let [n, c, h, w] = self.value(*x).shape();
                let (hp, wp) = (gy.h(), gy.w());
                let gx = self.grad_buf(grads, *x);
                let dst = gx.data_mut();
                let src = gy.data();
                for p in 0..n * c {
                    for y in 0..hp {
                        let sy = reflect(y as isize - *pad as isize, h);
                        for xx in 0..wp {
                            let sx = reflect(xx as isize - *pad as isize, w);
                            dst[(p * h + sy) * w + sx] += src[(p * hp + y) * wp + xx];
                        }
                    }
                }
            }
            Op::Upsample2x { x } => {
                let [n, c, h, w] = self.value(*x).shape();
                let gx = self.grad_buf(grads, *x);
                let dst = gx.data_mut();
                let src = gy.data();
                for p in 0..n * c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dst[(p * h + y / 2) * w + xx / 2] += src[(p * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let hw = gy.h() * gy.w();
                let xhat = node.value.data();
                let mut gx = Tensor::zeros(gy.shape());
                for (p, inv) in inv_std.iter().enumerate() {
                    let r = p * hw..(p + 1) * hw;
                    let (g, xh) = (&gy.data()[r.clone()], &xhat[r.clone()]);
                    let mg = g.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
                    let mgx = g.iter().zip(xh).map(|(&a, &b)| (a * b) as f64).sum::<f64>() / hw as f64;
                    for ((o, &gv), &xv) in gx.data_mut()[r].iter_mut().zip(g).zip(xh) {
                        *o = inv * (gv - mg as f32 - xv * mgx as f32);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                let mut gx = gy.clone();
                for (g, &v) in gx.data_mut().iter_mut().zip(xv) {
                    if v <= 0.0 {
                        *g *= slope;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Tanh { x } => {
                let mut gx = gy.clone();
                for (g, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    *g *= 1.0 - y * y;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Concat { a, b } => {
                let (la, lb) = (self.value(*a).item_len(), self.value(*b).item_len());
                let n = gy.n();
                if self.ng(*a) {
                    let mut ga = Vec::with_capacity(n * la);
                    for i in 0..n {
                        ga.extend_from_slice(&gy.item_slice(i)[..la]);
                    }
                    self.accumulate(grads, *a, Tensor::from_vec(self.value(*a).shape(), ga));
                }
                if self.ng(*b) {
                    let mut gb = Vec::with_capacity(n * lb);
                    for i in 0..n {
                        gb.extend_from_slice(&gy.item_slice(i)[la..]);
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(self.value(*b).shape(), gb));
                }
            }
            Op::Dropout { x, mask } => {
                let mut gx = gy.clone();
                for (g, m) in gx.data_mut().iter_mut().zip(mask) {
                    *g *= m;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Scale { x, s } => {
                let mut gx = gy.clone();
                for g in gx.data_mut() {
                    *g *= s;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MseConst { x, target } => {
                let xv = self.value(*x);
                let k = 2.0 * gy.item() / xv.len() as f32;
                let d = xv.data().iter().map(|&v| k * (v - target)).collect();
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), d));
            }
            Op::BceConst { x, target } => {
                let xv = self.value(*x);
                let k = gy.item() / xv.len() as f32;
                let d = xv.data().iter().map(|&z| k * (sigmoid(z) - target)).collect();
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), d));
            }
            Op::L1 { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = gy.item() / av.len() as f32;
                let d: Vec<f32> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(x, y)| {
                        let diff = x - y;
                        if diff > 0.0 {
                            k
                        } else if diff < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if self.ng(*b) {
                    let neg = d.iter().map(|v| -v).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(bv.shape(), neg));
                }
                self.accumulate(grads, *a, Tensor::from_vec(av.shape(), d));
            }
            Op::WeightedSum { terms } => {
                for &(v, wt) in terms {
                    let mut g = gy.clone();
                    for x in g.data_mut() {
                        *x *= wt;
                    }
                    self.accumulate(grads, v, g);
                }
            }
        }
    }
}

fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn add_bias(out: &mut Tensor, bias: &[f32]) {
    let (c, hw) = (out.c(), out.h() * out.w());
    assert_eq!(bias.len(), c, "bias length");
    for (p, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        let b = bias[p % c];
        for v in plane {
            *v += b;
        }
    }
}

fn bias_grad(gy: &Tensor) -> Tensor {
    let (c, hw) = (gy.c(), gy.h() * gy.w());
    let mut g = vec![0.0f32; c];
    for (p, plane) in gy.data().chunks(hw).enumerate() {
        g[p % c] += plane.iter().sum::<f32>();
    }
    Tensor::from_vec([c, 1, 1, 1], g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: Shape, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())
    }

    /// Central-difference check of d(loss)/d(input) for a graph builder.
    fn check_grad(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss);
        let eval = |ins: &[Tensor]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone(), false)).collect();
            let l = build(&mut g, &vars);
            g.value(l).item() as f64
        };
        let eps = 1e-2f32;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).expect("gradient present");
            assert_eq!(analytic.shape(), t.shape());
            for i in (0..t.len()).step_by(1 + t.len() / 40) {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += eps;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= eps;
                let num = (eval(&plus) - eval(&minus)) / (2.0 * eps as f64);
                let a = analytic.data()[i] as f64;
                assert!(
                    (num - a).abs() <= 2e-2 * (1.0 + num.abs()),
                    "input {k} elem {i}: numeric {num} analytic {a}"
                );
            }
        }
    }

    fn weighted_probe(g: &mut Graph, y: Var, seed: u64) -> Var {
        // a random linear functional, so every output element matters
        let probe = rand_tensor(g.value(y).shape(), seed);
        let p = g.input(probe);
        let shifted = g.add(y, p);
        g.mse_const(shifted, 0.3)
    }

    #[test]
    fn conv_gradients() {
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0)] {
            check_grad(
                vec![rand_tensor([2, 3, 6, 5], 1), rand_tensor([4, 3, 3, 3], 2), rand_tensor([4, 1, 1, 1], 3)],
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad);
                    weighted_probe(g, y, 9)
                },
            );
        }
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (x, w) = (rand_tensor([2, 3, 7, 5], 40), rand_tensor([4, 3, 4, 4], 41));
        for &(stride, pad) in &[(2, 1), (1, 1), (1, 0)] {
            let mut g = Graph::new();
            let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
            let y = g.conv2d(xv, wv, None, stride, pad);
            let yv = g.value(y);
            let [_, _, oh, ow] = yv.shape();
            for n in 0..2 {
                for o in 0..4 {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0f32;
                            for c in 0..3 {
                                for ky in 0..4 {
                                    for kx in 0..4 {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iy < 0 || ix < 0 || iy >= 7 || ix >= 5 {
                                            continue;
                                        }
                                        acc += x.data()[((n * 3 + c) * 7 + iy as usize) * 5 + ix as usize]
                                            * w.data()[((o * 3 + c) * 4 + ky) * 4 + kx];
                                    }
                                }
                            }
                            let got = yv.data()[((n * 4 + o) * oh + oy) * ow + ox];
                            assert!((got - acc).abs() < 1e-5, "s{stride} p{pad} ({n},{o},{oy},{ox}): {got} vs {acc}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pad_and_upsample_on_non_square_input() {
        let x = Tensor::from_vec([1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut g = Graph::new();
        let xv = g.input(x);
        let p = g.reflect_pad(xv, 1);
        assert_eq!(g.value(p).shape(), [1, 1, 4, 5]);
        assert_eq!(&g.value(p).data()[..5], &[5.0, 4.0, 5.0, 6.0, 5.0]);
        assert_eq!(&g.value(p).data()[5..10], &[2.0, 1.0, 2.0, 3.0, 2.0]);
        let u = g.upsample2x(xv);
        assert_eq!(g.value(u).shape(), [1, 1, 4, 6]);
        assert_eq!(&g.value(u).data()[..6], &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert_eq!(&g.value(u).data()[12..18], &[4.0, 4.0, 5.0, 5.0, 6.0, 6.0]);
    }

    #[test]
    fn conv_transpose_gradients() {
        check_grad(
            vec![rand_tensor([2, 3, 3, 4], 4), rand_tensor([3, 2, 4, 4], 5), rand_tensor([2, 1, 1, 1], 6)],
            |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1);
                assert_eq!(g.value(y).shape(), [2, 2, 6, 8]);
                weighted_probe(g, y, 10)
            },
        );
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        let x = rand_tensor([1, 2, 8, 8], 11);
        let w = rand_tensor([3, 2, 4, 4], 12);
        let y = rand_tensor([1, 3, 4, 4], 13);
        let mut g = Graph::new();
        let (xv, wv, yv) = (g.input(x.clone()), g.input(w), g.input(y.clone()));
        let cx = g.conv2d(xv, wv, None, 2, 1);
        let ty = g.conv_transpose2d(yv, wv, None, 2, 1);
        let l: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| (a * b) as f64).sum();
        let r: f64 = x.data().iter().zip(g.value(ty).data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((l - r).abs() < 1e-4, "{l} vs {r}");
    }

    #[test]
    fn elementwise_gradients() {
        check_grad(vec![rand_tensor([2, 3, 4, 4], 20)], |g, v| {
            let p = g.reflect_pad(v[0], 2);
            let n = g.instance_norm(p);
            let a = g.leaky_relu(n, 0.2);
            let t = g.tanh(a);
            weighted_probe(g, t, 21)
        });
        check_grad(vec![rand_tensor([2, 3, 3, 4], 25)], |g, v| {
            let u = g.upsample2x(v[0]);
            assert_eq!(g.value(u).shape(), [2, 3, 6, 8]);
            weighted_probe(g, u, 26)
        });
        check_grad(vec![rand_tensor([2, 2, 3, 3], 22), rand_tensor([2, 1, 3, 3], 23)], |g, v| {
            let c = g.concat(v[0], v[1]);
            let s = g.scale(c, 1.5);
            weighted_probe(g, s, 24)
        });
    }

    #[test]
    fn loss_gradients() {
        // offset keeps |a - b| away from the L1 kink
        let mut b = rand_tensor([1, 1, 4, 4], 31);
        b.data_mut().iter_mut().for_each(|v| *v += 2.5);
        check_grad(vec![rand_tensor([1, 1, 4, 4], 30), b], |g, v| {
            let a = g.bce_logits_const(v[0], 1.0);
            let b = g.mse_const(v[1], 0.0);
            let c = g.l1(v[0], v[1]);
            g.weighted_sum(&[(a, 0.5), (b, 2.0), (c, 3.0)])
        });
    }

    #[test]
    fn dropout_masks_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.input(Tensor::full([1, 1, 100, 100], 1.0));
        let y = g.dropout(x, 0.5, &mut rng);
        let v = g.value(y).data();
        assert!(v.iter().all(|&a| a == 0.0 || a == 2.0));
        let kept = v.iter().filter(|&&a| a > 0.0).count();
        assert!((4700..5300).contains(&kept));
    }

    #[test]
    fn shared_leaf_gradients_accumulate() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let y = g.add(x, x);
        let l = g.mse_const(y, 0.0);
        let grads = g.backward(l);
        // d/dx (2x)^2 = 8x
        assert!((grads.get(x).unwrap().item() - 24.0).abs() < 1e-5);
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(rand_tensor([1, 1, 4, 4], 1), true);
        let w = g.leaf(rand_tensor([1, 1, 3, 3], 2), false);
        let y = g.conv2d(x, w, None, 1, 1);
        let l = g.mse_const(y, 1.0);
        let grads = g.backward(l);
        assert!(grads.get(w).is_none());
        assert!(grads.get(x).is_some());
    }
}
