//! Unpaired image translation between the synthetic domain (A) and the
//! real domain (B) with two generators, two patch discriminators,
//! adversarial and cycle-consistency objectives.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sim2seg_core::replay::ReplayBuffer;
use sim2seg_core::{DomainDataset, ImageBuffer};

use crate::checkpoint::{self, RngState};
use crate::convert::{image_to_tensor, tensor_to_image};
use crate::error::{Error, Result};
use crate::losses::{l1, AdvMode};
use crate::nn::{linear_decay_lr, Adam, Archive, Graph, ParamSet, PatchDiscriminator, PatchSpec, ResnetGenerator, ResnetSpec, Tensor, Upsampling, Var};

pub const CHECKPOINT_FILE: &str = "translation.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationHyper {
    pub lambda_cycle: f32,
    pub lambda_identity: f32,
    pub adv_mode: AdvMode,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    /// Capacity of each fake-image history.
    pub replay_buffer: usize,
    pub image_size: usize,
    pub iterations: u64,
    pub batch_size: usize,
    pub ngf: usize,
    pub ndf: usize,
    /// Residual blocks; 9 at 256 px and above, 6 below when unset.
    pub n_blocks: Option<usize>,
    /// Identity-initialized 1 x 1 path from the input to the generator output.
    pub input_skip: bool,
    pub upsampling: Upsampling,
    pub disc_layers: usize,
    pub checkpoint_every: u64,
}

impl Default for TranslationHyper {
    fn default() -> Self {
        Self {
            lambda_cycle: 10.0,
            lambda_identity: 0.0,
            adv_mode: AdvMode::LeastSquares,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            replay_buffer: 50,
            image_size: 256,
            iterations: 200_000,
            batch_size: 1,
            ngf: 64,
            ndf: 64,
            n_blocks: None,
            input_skip: true,
            upsampling: Upsampling::NearestConv,
            disc_layers: 3,
            checkpoint_every: 5_000,
        }
    }
}

impl TranslationHyper {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, reason: &str| Err(Error::config(format!("translation.{name}"), reason));
        if !(self.lambda_cycle >= 0.0) {
            return f("lambda_cycle", "must be >= 0");
        }
        if !(self.lambda_identity >= 0.0) {
            return f("lambda_identity", "must be >= 0");
        }
        if !(self.learning_rate > 0.0) {
            return f("learning_rate", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return f("adam_beta1", "must lie in [0, 1)");
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return f("image_size", "must be a positive multiple of 4");
        }
        if self.image_size >> self.disc_layers < 4 {
            return f("disc_layers", "too many stride-2 layers for the image size");
        }
        if self.batch_size == 0 || self.ngf == 0 || self.ndf == 0 || self.disc_layers == 0 {
            return f("batch_size/ngf/ndf/disc_layers", "must be >= 1");
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.n_blocks.unwrap_or(if self.image_size >= 256 { 9 } else { 6 })
    }
}

/// Architecture of one generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorArch {
    Resnet(ResnetSpec),
    /// Passes its input through unchanged.
    Identity,
}

#[derive(Debug, Clone)]
pub enum Generator {
    Resnet(ResnetGenerator),
    Identity(ParamSet),
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(arch: GeneratorArch, rng: &mut R) -> Self {
        match arch {
            GeneratorArch::Resnet(spec) => Generator::Resnet(ResnetGenerator::new(spec, rng)),
            GeneratorArch::Identity => Generator::Identity(ParamSet::new()),
        }
    }

    pub fn arch(&self) -> GeneratorArch {
        match self {
            Generator::Resnet(g) => GeneratorArch::Resnet(g.spec),
            Generator::Identity(_) => GeneratorArch::Identity,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Generator::Resnet(g) => &g.params,
            Generator::Identity(p) => p,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Generator::Resnet(g) => &mut g.params,
            Generator::Identity(p) => p,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        match self {
            Generator::Resnet(net) => net.forward(g, p, x),
            Generator::Identity(_) => x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TranslationModel {
    /// Synthetic to real.
    pub gen_a2b: Generator,
    /// Real to synthetic; the adaptation map used at inference.
    pub gen_b2a: Generator,
    /// Judges synthetic-domain images.
    pub disc_a: PatchDiscriminator,
    /// Judges real-domain images.
    pub disc_b: PatchDiscriminator,
    pub hyper: TranslationHyper,
    pub step: u64,
}

/// Fresh model with N(0, 0.02) weights.
pub fn init_translation_model<R: Rng + ?Sized>(hyper: &TranslationHyper, rng: &mut R) -> Result<TranslationModel> {
    hyper.validate()?;
    let arch = GeneratorArch::Resnet(ResnetSpec {
        in_channels: 3,
        out_channels: 3,
        ngf: hyper.ngf,
        n_blocks: hyper.blocks(),
        input_skip: hyper.input_skip,
        upsampling: hyper.upsampling,
    });
    Ok(TranslationModel::with_arch(hyper, arch, rng))
}

impl TranslationModel {
    pub fn with_arch<R: Rng + ?Sized>(hyper: &TranslationHyper, arch: GeneratorArch, rng: &mut R) -> Self {
        let disc = PatchSpec {
            in_channels: 3,
            ndf: hyper.ndf,
            n_layers: hyper.disc_layers,
        };
        Self {
            gen_a2b: Generator::new(arch, rng),
            gen_b2a: Generator::new(arch, rng),
            disc_a: PatchDiscriminator::new(disc, rng),
            disc_b: PatchDiscriminator::new(disc, rng),
            hyper: hyper.clone(),
            step: 0,
        }
    }

    /// Both generators pass images through unchanged.
    pub fn identity(hyper: &TranslationHyper, seed: u64) -> Self {
        Self::with_arch(hyper, GeneratorArch::Identity, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn nets(&self) -> [(&'static str, &ParamSet); 4] {
        [
            ("gen_a2b", self.gen_a2b.params()),
            ("gen_b2a", self.gen_b2a.params()),
            ("disc_a", &self.disc_a.params),
            ("disc_b", &self.disc_b.params),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.nets().iter().all(|(_, p)| p.all_finite())
    }

    fn check_input(&self, t: &Tensor) -> Result<()> {
        let s = self.hyper.image_size;
        if t.c() != 3 || t.h() != s || t.w() != s {
            return Err(sim2seg_core::CoreError::Shape(format!(
                "translation expects 3x{s}x{s} input, got {}x{}x{}",
                t.c(),
                t.h(),
                t.w()
            ))
            .into());
        }
        Ok(())
    }

    /// Real to synthetic translation of a batch tensor.
    pub fn translate_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let p = self.gen_b2a.params().bind(&mut g, false);
        let xv = g.input(x.clone());
        let y = self.gen_b2a.forward(&mut g, &p, xv);
        Ok(g.value(y).clone())
    }

    /// `G_B2A(G_A2B(a))` and `G_A2B(G_B2A(b))` mean absolute errors.
    pub fn cycle_errors(&self, a: &Tensor, b: &Tensor) -> Result<(f32, f32)> {
        self.check_input(a)?;
        self.check_input(b)?;
        let mut g = Graph::new();
        let pa2b = self.gen_a2b.params().bind(&mut g, false);
        let pb2a = self.gen_b2a.params().bind(&mut g, false);
        let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
        let fb = self.gen_a2b.forward(&mut g, &pa2b, av);
        let ra = self.gen_b2a.forward(&mut g, &pb2a, fb);
        let fa = self.gen_b2a.forward(&mut g, &pb2a, bv);
        let rb = self.gen_a2b.forward(&mut g, &pa2b, fa);
        Ok((g.value(ra).mean_abs_diff(a), g.value(rb).mean_abs_diff(b)))
    }
}

/// Map a normalized real-domain RGB image into the synthetic style.
pub fn translate_to_sim(image: &ImageBuffer, model: &TranslationModel) -> Result<ImageBuffer> {
    let t = image_to_tensor(image)?;
    let y = model.translate_tensor(&t)?;
    tensor_to_image(&y, 0)
}

/// Loss values of one evaluation or training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationLosses {
    pub adv_g_a2b: f32,
    pub adv_g_b2a: f32,
    pub cyc_a: f32,
    pub cyc_b: f32,
    pub idt: Option<f32>,
    pub total_g: f32,
    pub disc_a: f32,
    pub disc_b: f32,
}

impl TranslationLosses {
    pub fn all_finite(&self) -> bool {
        [self.adv_g_a2b, self.adv_g_b2a, self.cyc_a, self.cyc_b, self.idt.unwrap_or(0.0), self.total_g, self.disc_a, self.disc_b]
            .iter()
            .all(|v| v.is_finite())
    }
}

struct GenTerms {
    adv_a2b: Var,
    adv_b2a: Var,
    cyc_a: Var,
    cyc_b: Var,
    idt: Option<Var>,
    total: Var,
    fake_a: Var,
    fake_b: Var,
}

struct Bound {
    a2b: Vec<Var>,
    b2a: Vec<Var>,
    da: Vec<Var>,
    db: Vec<Var>,
}

fn generator_terms(g: &mut Graph, m: &TranslationModel, p: &Bound, a: Var, b: Var) -> GenTerms {
    let h = &m.hyper;
    let fake_b = m.gen_a2b.forward(g, &p.a2b, a);
    let rec_a = m.gen_b2a.forward(g, &p.b2a, fake_b);
    let fake_a = m.gen_b2a.forward(g, &p.b2a, b);
    let rec_b = m.gen_a2b.forward(g, &p.a2b, fake_a);
    let sb = m.disc_b.forward(g, &p.db, fake_b);
    let sa = m.disc_a.forward(g, &p.da, fake_a);
    let adv_a2b = h.adv_mode.generator(g, sb);
    let adv_b2a = h.adv_mode.generator(g, sa);
    let cyc_a = l1(g, rec_a, a);
    let cyc_b = l1(g, rec_b, b);
    let mut terms = vec![(adv_a2b, 1.0), (adv_b2a, 1.0), (cyc_a, h.lambda_cycle), (cyc_b, h.lambda_cycle)];
    let idt = (h.lambda_identity > 0.0).then(|| {
        let ib = m.gen_a2b.forward(g, &p.a2b, b);
        let ia = m.gen_b2a.forward(g, &p.b2a, a);
        let lb = l1(g, ib, b);
        let la = l1(g, ia, a);
        g.weighted_sum(&[(la, 1.0), (lb, 1.0)])
    });
    if let Some(i) = idt {
        terms.push((i, h.lambda_identity));
    }
    let total = g.weighted_sum(&terms);
    GenTerms {
        adv_a2b,
        adv_b2a,
        cyc_a,
        cyc_b,
        idt,
        total,
        fake_a,
        fake_b,
    }
}

/// Every loss term on one pair of batches, without updating the model.
/// Discriminator terms use the current fakes directly.
pub fn translation_losses(batch_a: &Tensor, batch_b: &Tensor, model: &TranslationModel) -> Result<TranslationLosses> {
    model.check_input(batch_a)?;
    model.check_input(batch_b)?;
    if batch_a.shape() != batch_b.shape() {
        return Err(sim2seg_core::CoreError::Shape("domain batches differ in shape".into()).into());
    }
    let mut g = Graph::new();
    let p = Bound {
        a2b: model.gen_a2b.params().bind(&mut g, false),
        b2a: model.gen_b2a.params().bind(&mut g, false),
        da: model.disc_a.params.bind(&mut g, false),
        db: model.disc_b.params.bind(&mut g, false),
    };
    let (a, b) = (g.input(batch_a.clone()), g.input(batch_b.clone()));
    let t = generator_terms(&mut g, model, &p, a, b);
    let adv = model.hyper.adv_mode;
    let (ra, fa) = (model.disc_a.forward(&mut g, &p.da, a), model.disc_a.forward(&mut g, &p.da, t.fake_a));
    let da = adv.discriminator(&mut g, ra, fa);
    let (rb, fb) = (model.disc_b.forward(&mut g, &p.db, b), model.disc_b.forward(&mut g, &p.db, t.fake_b));
    let db = adv.discriminator(&mut g, rb, fb);
    Ok(TranslationLosses {
        adv_g_a2b: g.value(t.adv_a2b).item(),
        adv_g_b2a: g.value(t.adv_b2a).item(),
        cyc_a: g.value(t.cyc_a).item(),
        cyc_b: g.value(t.cyc_b).item(),
        idt: t.idt.map(|v| g.value(v).item()),
        total_g: g.value(t.total).item(),
        disc_a: g.value(da).item(),
        disc_b: g.value(db).item(),
    })
}

/// Model plus everything needed to continue training bit-exactly.
pub struct TranslationTrainer {
    pub model: TranslationModel,
    opt: [Adam; 4],
    pool_a: ReplayBuffer<Tensor>,
    pool_b: ReplayBuffer<Tensor>,
    rng: ChaCha8Rng,
    pub last_losses: Option<TranslationLosses>,
}

impl TranslationTrainer {
    pub fn new(model: TranslationModel, seed: u64) -> Self {
        let b1 = model.hyper.adam_beta1;
        let opt = model.nets().map(|(_, p)| Adam::new(p, b1));
        let cap = model.hyper.replay_buffer;
        Self {
            model,
            opt,
            pool_a: ReplayBuffer::new(cap),
            pool_b: ReplayBuffer::new(cap),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7472_616e_736c_6174),
            last_losses: None,
        }
    }

    /// Fresh model and trainer from one seed.
    pub fn init(hyper: &TranslationHyper, seed: u64) -> Result<Self> {
        let model = init_translation_model(hyper, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self::new(model, seed))
    }

    fn batch(&mut self, data: &[Tensor]) -> Tensor {
        let n = self.model.hyper.batch_size;
        let picks: Vec<&Tensor> = (0..n).map(|_| &data[self.rng.random_range(0..data.len())]).collect();
        Tensor::stack(&picks)
    }

    /// One generator update followed by one discriminator update.
    pub fn step(&mut self, data_a: &[Tensor], data_b: &[Tensor]) -> Result<TranslationLosses> {
        if data_a.is_empty() || data_b.is_empty() {
            return Err(Error::Data("translation needs images in both domains".into()));
        }
        let a = self.batch(data_a);
        let b = self.batch(data_b);
        self.model.check_input(&a)?;
        self.model.check_input(&b)?;
        let m = &self.model;
        let lr = linear_decay_lr(m.hyper.learning_rate, m.step, m.hyper.iterations);
        let step = m.step;

        let mut g = Graph::new();
        let p = Bound {
            a2b: m.gen_a2b.params().bind(&mut g, true),
            b2a: m.gen_b2a.params().bind(&mut g, true),
            da: m.disc_a.params.bind(&mut g, false),
            db: m.disc_b.params.bind(&mut g, false),
        };
        let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
        let t = generator_terms(&mut g, m, &p, av, bv);
        let total_g = g.value(t.total).item();
        if !total_g.is_finite() {
            return Err(Error::TrainingFault {
                step,
                reason: format!("non-finite generator loss {total_g}"),
            });
        }
        let mut grads = g.backward(t.total);
        let ga2b = ParamSet::collect_grads(&mut grads, &p.a2b);
        let gb2a = ParamSet::collect_grads(&mut grads, &p.b2a);
        let fake_a = g.value(t.fake_a).clone();
        let fake_b = g.value(t.fake_b).clone();
        let mut losses = TranslationLosses {
            adv_g_a2b: g.value(t.adv_a2b).item(),
            adv_g_b2a: g.value(t.adv_b2a).item(),
            cyc_a: g.value(t.cyc_a).item(),
            cyc_b: g.value(t.cyc_b).item(),
            idt: t.idt.map(|v| g.value(v).item()),
            total_g,
            disc_a: 0.0,
            disc_b: 0.0,
        };
        drop(g);
        self.opt[0].step(self.model.gen_a2b.params_mut(), &ga2b, lr);
        self.opt[1].step(self.model.gen_b2a.params_mut(), &gb2a, lr);

        let fake_a = self.query_pool(true, fake_a);
        let fake_b = self.query_pool(false, fake_b);
        let adv = self.model.hyper.adv_mode;
        for (which, real, fake) in [(0, &a, fake_a), (1, &b, fake_b)] {
            let disc = if which == 0 { &self.model.disc_a } else { &self.model.disc_b };
            let mut g = Graph::new();
            let pd = disc.params.bind(&mut g, true);
            let (rv, fv) = (g.input(real.clone()), g.input(fake));
            let (rs, fs) = (disc.forward(&mut g, &pd, rv), disc.forward(&mut g, &pd, fv));
            let loss = adv.discriminator(&mut g, rs, fs);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::TrainingFault {
                    step,
                    reason: format!("non-finite discriminator loss {lv}"),
                });
            }
            let mut grads = g.backward(loss);
            let gd = ParamSet::collect_grads(&mut grads, &pd);
            if which == 0 {
                losses.disc_a = lv;
                self.opt[2].step(&mut self.model.disc_a.params, &gd, lr);
            } else {
                losses.disc_b = lv;
                self.opt[3].step(&mut self.model.disc_b.params, &gd, lr);
            }
        }
        if !self.model.all_finite() {
            return Err(Error::TrainingFault {
                step,
                reason: "non-finite parameters after update".into(),
            });
        }
        self.model.step += 1;
        self.last_losses = Some(losses);
        Ok(losses)
    }

    fn query_pool(&mut self, domain_a: bool, fakes: Tensor) -> Tensor {
        let pool = if domain_a { &mut self.pool_a } else { &mut self.pool_b };
        let items: Vec<Tensor> = (0..fakes.n()).map(|i| pool.query(fakes.select(i), &mut self.rng)).collect();
        Tensor::stack(&items.iter().collect::<Vec<_>>())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let mut ar = model_archive(&self.model);
        for (i, (name, p)) in self.model.nets().iter().enumerate() {
            ar.insert_adam(&format!("opt.{name}"), p, &self.opt[i]);
        }
        for (tag, pool) in [("pool_a", &self.pool_a), ("pool_b", &self.pool_b)] {
            for (i, t) in pool.items().iter().enumerate() {
                ar.insert(format!("{tag}.{i:04}"), t.clone());
            }
            ar.set_meta(format!("{tag}.len"), pool.len().to_string());
        }
        ar.set_meta("rng", serde_json::to_string(&RngState::capture(&self.rng)).expect("rng state serializes"));
        let path = dir.join(CHECKPOINT_FILE);
        ar.save(&path)?;
        checkpoint::write_sidecar(dir, "translation", self.model.step, &self.model.hyper, &self.last_losses)?;
        Ok(path)
    }

    pub fn resume(dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_FILE);
        if !path.exists() {
            return Err(Error::missing("translation", &path));
        }
        let ar = Archive::load(&path)?;
        let model = model_from_archive(&ar, &path)?;
        let mut tr = Self::new(model, 0);
        let nets = tr.model.nets().map(|(n, p)| (n, p.clone()));
        for (i, (name, p)) in nets.iter().enumerate() {
            ar.load_adam(&format!("opt.{name}"), p, &mut tr.opt[i]).map_err(|e| Error::checkpoint(&path, e))?;
        }
        for (tag, domain_a) in [("pool_a", true), ("pool_b", false)] {
            let n: usize = ar.meta(&format!("{tag}.len")).and_then(|s| s.parse().ok()).unwrap_or(0);
            let items = (0..n)
                .map(|i| {
                    ar.tensors
                        .get(&format!("{tag}.{i:04}"))
                        .cloned()
                        .ok_or_else(|| Error::checkpoint(&path, format!("missing {tag} item {i}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let pool = ReplayBuffer::from_items(tr.model.hyper.replay_buffer, items);
            if domain_a {
                tr.pool_a = pool;
            } else {
                tr.pool_b = pool;
            }
        }
        let rng: RngState = ar
            .meta("rng")
            .and_then(|s| serde_json::from_str(s).ok())
            .ok_or_else(|| Error::checkpoint(&path, "missing rng state"))?;
        tr.rng = rng.restore();
        Ok(tr)
    }
}

fn model_archive(m: &TranslationModel) -> Archive {
    let mut ar = Archive::new();
    for (name, p) in m.nets() {
        ar.insert_params(name, p);
    }
    ar.set_meta("kind", "translation");
    ar.set_meta("step", m.step.to_string());
    ar.set_meta("hyper", serde_json::to_string(&m.hyper).expect("hyper serializes"));
    ar.set_meta("gen_a2b.arch", serde_json::to_string(&m.gen_a2b.arch()).expect("arch serializes"));
    ar.set_meta("gen_b2a.arch", serde_json::to_string(&m.gen_b2a.arch()).expect("arch serializes"));
    ar.set_meta("disc.arch", serde_json::to_string(&m.disc_a.spec).expect("arch serializes"));
    ar
}

fn model_from_archive(ar: &Archive, path: &Path) -> Result<TranslationModel> {
    let bad = |e: String| Error::checkpoint(path, e);
    if ar.meta("kind") != Some("translation") {
        return Err(bad("not a translation checkpoint".into()));
    }
    let meta_json = |key: &str| -> Result<serde_json::Value> {
        let s = ar.meta(key).ok_or_else(|| bad(format!("missing `{key}`")))?;
        serde_json::from_str(s).map_err(|e| bad(format!("`{key}`: {e}")))
    };
    let hyper: TranslationHyper = serde_json::from_value(meta_json("hyper")?).map_err(|e| bad(e.to_string()))?;
    let arch_a2b: GeneratorArch = serde_json::from_value(meta_json("gen_a2b.arch")?).map_err(|e| bad(e.to_string()))?;
    let arch_b2a: GeneratorArch = serde_json::from_value(meta_json("gen_b2a.arch")?).map_err(|e| bad(e.to_string()))?;
    let disc: PatchSpec = serde_json::from_value(meta_json("disc.arch")?).map_err(|e| bad(e.to_string()))?;
    let step = ar.meta("step").and_then(|s| s.parse().ok()).ok_or_else(|| bad("missing step".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut m = TranslationModel {
        gen_a2b: Generator::new(arch_a2b, &mut rng),
        gen_b2a: Generator::new(arch_b2a, &mut rng),
        disc_a: PatchDiscriminator::new(disc, &mut rng),
        disc_b: PatchDiscriminator::new(disc, &mut rng),
        hyper,
        step,
    };
    ar.load_params("gen_a2b", m.gen_a2b.params_mut()).map_err(bad)?;
    ar.load_params("gen_b2a", m.gen_b2a.params_mut()).map_err(bad)?;
    ar.load_params("disc_a", &mut m.disc_a.params).map_err(bad)?;
    ar.load_params("disc_b", &mut m.disc_b.params).map_err(bad)?;
    Ok(m)
}

/// Persist a model without optimizer state.
pub fn save_model(model: &TranslationModel, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(CHECKPOINT_FILE);
    model_archive(model).save(&path)?;
    checkpoint::write_sidecar(dir, "translation", model.step, &model.hyper, &None::<TranslationLosses>)?;
    Ok(path)
}

pub fn load_model(dir: &Path) -> Result<TranslationModel> {
    let path = dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Error::missing("translation", &path));
    }
    let ar = Archive::load(&path)?;
    model_from_archive(&ar, &path)
}

/// Domain images as normalized one-item tensors of the model resolution.
pub fn dataset_tensors(ds: &DomainDataset, size: usize) -> Result<Vec<Tensor>> {
    ds.items
        .iter()
        .map(|it| {
            if it.rgb.width() != size || it.rgb.height() != size || it.rgb.channels() != 3 {
                return Err(Error::Data(format!(
                    "image `{}` is {}x{}x{}, expected {size}x{size}x3",
                    it.name,
                    it.rgb.width(),
                    it.rgb.height(),
                    it.rgb.channels()
                )));
            }
            image_to_tensor(&it.rgb)
        })
        .collect()
}

/// Train from scratch for `hyper.iterations` steps, checkpointing into `checkpoint_dir`.
pub fn train_translation(
    dataset_synth: &DomainDataset,
    dataset_real: &DomainDataset,
    hyper: &TranslationHyper,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TranslationModel> {
    let trainer = TranslationTrainer::init(hyper, seed)?;
    continue_translation(trainer, dataset_synth, dataset_real, checkpoint_dir)
}

/// Run a (possibly resumed) trainer to `hyper.iterations`.
pub fn continue_translation(
    mut trainer: TranslationTrainer,
    dataset_synth: &DomainDataset,
    dataset_real: &DomainDataset,
    checkpoint_dir: Option<&Path>,
) -> Result<TranslationModel> {
    let hyper = trainer.model.hyper.clone();
    if dataset_synth.is_empty() || dataset_real.is_empty() {
        return Err(Error::Data("translation needs non-empty synthetic and real datasets".into()));
    }
    let a = dataset_tensors(dataset_synth, hyper.image_size)?;
    let b = dataset_tensors(dataset_real, hyper.image_size)?;
    let mut log = match checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("translation_losses.jsonl");
            Some((fs::OpenOptions::new().create(true).append(true).open(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };
    while trainer.model.step < hyper.iterations {
        let losses = trainer.step(&a, &b)?;
        let step = trainer.model.step;
        if let Some((f, p)) = &mut log {
            let rec = serde_json::json!({ "step": step, "losses": losses });
            writeln!(f, "{rec}").map_err(|e| Error::io(&*p, e))?;
        }
        if step % 100 == 0 {
            log::info!("translation step {step}: G {:.4} cyc {:.4}/{:.4} D {:.4}/{:.4}", losses.total_g, losses.cyc_a, losses.cyc_b, losses.disc_a, losses.disc_b);
        }
        if let Some(dir) = checkpoint_dir {
            if hyper.checkpoint_every > 0 && step % hyper.checkpoint_every == 0 && step < hyper.iterations {
                trainer.save(dir)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        trainer.save(dir)?;
    }
    Ok(trainer.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_hyper() -> TranslationHyper {
        TranslationHyper {
            image_size: 16,
            iterations: 4,
            ngf: 4,
            ndf: 4,
            n_blocks: Some(1),
            disc_layers: 2,
            replay_buffer: 3,
            ..TranslationHyper::default()
        }
    }

    fn img(seed: u64, s: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec([1, 3, s, s], (0..3 * s * s).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())
    }

    #[test]
    fn init_is_seeded_finite_and_small() {
        let h = tiny_hyper();
        let a = init_translation_model(&h, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_translation_model(&h, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for ((_, pa), (_, pb)) in a.nets().iter().zip(b.nets().iter()) {
            assert_eq!(*pa, *pb);
            assert!(pa.iter().all(|p| p.value.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0)));
        }
        assert_eq!(a.step, 0);
        let x = img(3, 16);
        let y = a.translate_tensor(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(y, a.translate_tensor(&x).unwrap());
    }

    #[test]
    fn wrong_size_is_a_shape_error() {
        let m = init_translation_model(&tiny_hyper(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(m.translate_tensor(&img(0, 8)), Err(Error::Core(_))));
    }

    #[test]
    fn identity_generators_have_zero_cycle_loss() {
        let m = TranslationModel::identity(&tiny_hyper(), 0);
        let l = translation_losses(&img(1, 16), &img(2, 16), &m).unwrap();
        assert_eq!(l.cyc_a, 0.0);
        assert_eq!(l.cyc_b, 0.0);
        assert_eq!(l.total_g, l.adv_g_a2b + l.adv_g_b2a);
    }

    #[test]
    fn zero_cycle_weight_leaves_adversarial_terms() {
        let h = TranslationHyper {
            lambda_cycle: 0.0,
            ..tiny_hyper()
        };
        let m = init_translation_model(&h, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let l = translation_losses(&img(1, 16), &img(2, 16), &m).unwrap();
        assert!(l.cyc_a > 0.0);
        assert!((l.total_g - (l.adv_g_a2b + l.adv_g_b2a)).abs() < 1e-6);
        let h = TranslationHyper {
            lambda_identity: 0.5,
            ..tiny_hyper()
        };
        let m = init_translation_model(&h, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let l = translation_losses(&img(1, 16), &img(2, 16), &m).unwrap();
        let want = l.adv_g_a2b + l.adv_g_b2a + 10.0 * (l.cyc_a + l.cyc_b) + 0.5 * l.idt.unwrap();
        assert!((l.total_g - want).abs() < 1e-5);
    }

    #[test]
    fn one_step_smoke_and_resume_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let a: Vec<Tensor> = (0..3).map(|i| img(10 + i, 16)).collect();
        let b: Vec<Tensor> = (0..3).map(|i| img(20 + i, 16)).collect();
        let mut t = TranslationTrainer::init(&tiny_hyper(), 9).unwrap();
        let l = t.step(&a, &b).unwrap();
        assert!(l.all_finite());
        assert_eq!(t.model.step, 1);
        t.step(&a, &b).unwrap();
        t.save(dir.path()).unwrap();
        let next = t.step(&a, &b).unwrap();
        let mut resumed = TranslationTrainer::resume(dir.path()).unwrap();
        assert_eq!(resumed.model.step, 2);
        assert_eq!(resumed.step(&a, &b).unwrap(), next);
        let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("checkpoint.json")).unwrap()).unwrap();
        assert_eq!(sidecar["step"], 2);
    }

    #[test]
    fn model_only_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = init_translation_model(&tiny_hyper(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        save_model(&m, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        let x = img(5, 16);
        assert_eq!(m.translate_tensor(&x).unwrap(), back.translate_tensor(&x).unwrap());
        let id = TranslationModel::identity(&tiny_hyper(), 0);
        save_model(&id, dir.path()).unwrap();
        assert_eq!(load_model(dir.path()).unwrap().translate_tensor(&x).unwrap(), x);
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::MissingArtifact { .. })));
    }
}
