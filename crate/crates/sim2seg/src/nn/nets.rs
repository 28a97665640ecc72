//! Network architectures: residual encoder-decoder, U-Net and patch discriminator.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::ParamSet;
use super::tensor::Tensor;

pub const INIT_STD: f32 = 0.02;
const LRELU: f32 = 0.2;

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: Option<usize>,
    stride: usize,
    pad: usize,
    reflect: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let w = ps.normal(format!("{name}.weight"), [cout, cin, k, k], INIT_STD, rng);
        let b = bias.then(|| ps.zeros(format!("{name}.bias"), [cout, 1, 1, 1]));
        Self {
            w,
            b,
            stride,
            pad,
            reflect: 0,
        }
    }

    /// Reflection padding instead of zero padding.
    fn reflected(mut self) -> Self {
        self.reflect = self.pad;
        self.pad = 0;
        self
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let x = if self.reflect > 0 { g.reflect_pad(x, self.reflect) } else { x };
        g.conv2d(x, p[self.w], self.b.map(|b| p[b]), self.stride, self.pad)
    }
}

/// Stride-2, kernel-4 transposed convolution doubling the resolution.
#[derive(Debug, Clone, Copy)]
struct Up {
    w: usize,
    b: Option<usize>,
}

impl Up {
    fn new<R: Rng + ?Sized>(ps: &mut ParamSet, rng: &mut R, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        let w = ps.normal(format!("{name}.weight"), [cin, cout, 4, 4], INIT_STD, rng);
        let b = bias.then(|| ps.zeros(format!("{name}.bias"), [cout, 1, 1, 1]));
        Self { w, b }
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        g.conv_transpose2d(x, p[self.w], self.b.map(|b| p[b]), 2, 1)
    }
}

/// How the residual generator doubles its resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    /// Stride-2 transposed convolution, kernel 4.
    Transposed,
    /// Nearest-neighbour doubling followed by a 3 x 3 convolution.
    #[default]
    NearestConv,
}

#[derive(Debug, Clone, Copy)]
enum UpLayer {
    Transposed(Up),
    NearestConv(Conv),
}

impl UpLayer {
    fn new<R: Rng + ?Sized>(mode: Upsampling, ps: &mut ParamSet, rng: &mut R, name: &str, cin: usize, cout: usize) -> Self {
        match mode {
            Upsampling::Transposed => UpLayer::Transposed(Up::new(ps, rng, name, cin, cout, false)),
            Upsampling::NearestConv => UpLayer::NearestConv(Conv::new(ps, rng, name, cin, cout, 3, 1, 1, false).reflected()),
        }
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        match self {
            UpLayer::Transposed(u) => u.forward(g, p, x),
            UpLayer::NearestConv(c) => {
                let u = g.upsample2x(x);
                c.forward(g, p, u)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResnetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub ngf: usize,
    pub n_blocks: usize,
    /// Add a 1 x 1 convolution of the input to the head output, initialized
    /// to pass matching channels through.
    #[serde(default)]
    pub input_skip: bool,
    #[serde(default)]
    pub upsampling: Upsampling,
}

/// Encoder, residual blocks, decoder; `tanh` output.
#[derive(Debug, Clone)]
pub struct ResnetGenerator {
    pub spec: ResnetSpec,
    pub params: ParamSet,
    layers: ResnetLayers,
}

#[derive(Debug, Clone)]
struct ResnetLayers {
    stem: Conv,
    downs: Vec<Conv>,
    blocks: Vec<(Conv, Conv)>,
    ups: Vec<UpLayer>,
    head: Conv,
    /// 1 x 1 input path added before `tanh`.
    skip: Option<usize>,
}

impl ResnetGenerator {
    pub fn new<R: Rng + ?Sized>(spec: ResnetSpec, rng: &mut R) -> Self {
        let mut ps = ParamSet::new();
        let f = spec.ngf;
        let stem = Conv::new(&mut ps, rng, "stem", spec.in_channels, f, 7, 1, 3, false).reflected();
        let downs = (0..2)
            .map(|i| Conv::new(&mut ps, rng, &format!("down{i}"), f << i, f << (i + 1), 3, 2, 1, false))
            .collect();
        let c = f * 4;
        let blocks = (0..spec.n_blocks)
            .map(|i| {
                let a = Conv::new(&mut ps, rng, &format!("block{i}.conv0"), c, c, 3, 1, 1, false).reflected();
                let b = Conv::new(&mut ps, rng, &format!("block{i}.conv1"), c, c, 3, 1, 1, false).reflected();
                (a, b)
            })
            .collect();
        let ups = (0..2)
            .map(|i| UpLayer::new(spec.upsampling, &mut ps, rng, &format!("up{i}"), c >> i, c >> (i + 1)))
            .collect();
        let head = Conv::new(&mut ps, rng, "head", f, spec.out_channels, 7, 1, 3, true).reflected();
        let skip = spec.input_skip.then(|| {
            let (cin, cout) = (spec.in_channels, spec.out_channels);
            let mut w = Tensor::zeros([cout, cin, 1, 1]);
            for c in 0..cout.min(cin) {
                w.data_mut()[c * cin + c] = 1.0;
            }
            ps.push("skip.weight", w)
        });
        Self {
            spec,
            params: ps,
            layers: ResnetLayers {
                stem,
                downs,
                blocks,
                ups,
                head,
                skip,
            },
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let l = &self.layers;
        let mut h = l.stem.forward(g, p, x);
        h = g.instance_norm(h);
        h = g.relu(h);
        for d in &l.downs {
            h = d.forward(g, p, h);
            h = g.instance_norm(h);
            h = g.relu(h);
        }
        for (a, b) in &l.blocks {
            let mut r = a.forward(g, p, h);
            r = g.instance_norm(r);
            r = g.relu(r);
            r = b.forward(g, p, r);
            r = g.instance_norm(r);
            h = g.add(h, r);
        }
        for u in &l.ups {
            h = u.forward(g, p, h);
            h = g.instance_norm(h);
            h = g.relu(h);
        }
        h = l.head.forward(g, p, h);
        if let Some(w) = l.skip {
            let s = g.conv2d(x, p[w], None, 1, 0);
            h = g.add(h, s);
        }
        g.tanh(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub in_channels: usize,
    pub ndf: usize,
    /// Number of stride-2 layers.
    pub n_layers: usize,
}

/// Fully convolutional classifier emitting one logit per overlapping patch.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    pub spec: PatchSpec,
    pub params: ParamSet,
    layers: Vec<(Conv, bool)>,
}

impl PatchDiscriminator {
    pub fn new<R: Rng + ?Sized>(spec: PatchSpec, rng: &mut R) -> Self {
        let mut ps = ParamSet::new();
        let mut layers = Vec::new();
        let width = |i: usize| spec.ndf * (1usize << i.min(3));
        layers.push((Conv::new(&mut ps, rng, "conv0", spec.in_channels, spec.ndf, 4, 2, 1, true), false));
        for i in 1..spec.n_layers {
            let c = Conv::new(&mut ps, rng, &format!("conv{i}"), width(i - 1), width(i), 4, 2, 1, false);
            layers.push((c, true));
        }
        let n = spec.n_layers;
        let c = Conv::new(&mut ps, rng, &format!("conv{n}"), width(n - 1), width(n), 4, 1, 1, false);
        layers.push((c, true));
        let out = Conv::new(&mut ps, rng, "out", width(n), 1, 4, 1, 1, true);
        layers.push((out, false));
        Self { spec, params: ps, layers }
    }

    /// Patch logits (or least-squares scores).
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (c, norm)) in self.layers.iter().enumerate() {
            h = c.forward(g, p, h);
            if i == last {
                break;
            }
            if *norm {
                h = g.instance_norm(h);
            }
            h = g.leaky_relu(h, LRELU);
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub ngf: usize,
    /// Down/up level pairs; the input side must be divisible by `2^levels`.
    pub levels: usize,
    /// Train-time dropout on the inner decoder levels.
    pub dropout: f32,
}

/// Activations the U-Net can be asked to drop, for probing its topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Knockout {
    None,
    Bottleneck,
    OuterSkip,
}

/// Encoder-decoder with skip connections between mirrored levels; `tanh` output.
#[derive(Debug, Clone)]
pub struct UnetGenerator {
    pub spec: UnetSpec,
    pub params: ParamSet,
    downs: Vec<Conv>,
    ups: Vec<Up>,
}

impl UnetGenerator {
    pub fn new<R: Rng + ?Sized>(spec: UnetSpec, rng: &mut R) -> Self {
        assert!(spec.levels >= 2, "a U-Net needs at least two levels");
        let l = spec.levels;
        let width = |i: usize| spec.ngf * (1usize << i.min(3));
        let mut ps = ParamSet::new();
        let downs = (0..l)
            .map(|i| {
                let cin = if i == 0 { spec.in_channels } else { width(i - 1) };
                let bias = i == 0 || i == l - 1;
                Conv::new(&mut ps, rng, &format!("down{i}"), cin, width(i), 4, 2, 1, bias)
            })
            .collect();
        let ups = (0..l)
            .map(|i| {
                let cin = if i == l - 1 { width(i) } else { 2 * width(i) };
                let cout = if i == 0 { spec.out_channels } else { width(i - 1) };
                Up::new(&mut ps, rng, &format!("up{i}"), cin, cout, i == 0)
            })
            .collect();
        Self {
            spec,
            params: ps,
            downs,
            ups,
        }
    }

    fn dropout_at(&self, i: usize) -> bool {
        self.spec.dropout > 0.0 && i >= 4 && i + 2 <= self.spec.levels
    }

    /// With `rng` set, dropout layers are active (training mode).
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, rng: Option<&mut dyn RngCore>) -> Var {
        self.forward_probe(g, p, x, rng, Knockout::None)
    }

    pub fn forward_probe(
        &self,
        g: &mut Graph,
        p: &[Var],
        x: Var,
        mut rng: Option<&mut dyn RngCore>,
        knockout: Knockout,
    ) -> Var {
        let l = self.spec.levels;
        let mut skips = Vec::with_capacity(l);
        let mut h = x;
        for (i, d) in self.downs.iter().enumerate() {
            if i > 0 {
                h = g.leaky_relu(h, LRELU);
            }
            h = d.forward(g, p, h);
            if i > 0 && i < l - 1 {
                h = g.instance_norm(h);
            }
            skips.push(h);
        }
        if knockout == Knockout::Bottleneck {
            h = zeros_like(g, h);
        }
        for i in (0..l).rev() {
            h = g.relu(h);
            h = self.ups[i].forward(g, p, h);
            if i == 0 {
                break;
            }
            h = g.instance_norm(h);
            if self.dropout_at(i) {
                if let Some(r) = rng.as_deref_mut() {
                    h = g.dropout(h, self.spec.dropout, r);
                }
            }
            let mut skip = skips[i - 1];
            if knockout == Knockout::OuterSkip && i == 1 {
                skip = zeros_like(g, skip);
            }
            h = g.concat(skip, h);
        }
        g.tanh(h)
    }
}

fn zeros_like(g: &mut Graph, v: Var) -> Var {
    let s = g.value(v).shape();
    g.input(Tensor::zeros(s))
}
