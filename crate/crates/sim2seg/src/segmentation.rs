//! Paired image-to-mask generator: a U-Net conditioned on the edge image,
//! trained against a patch discriminator over (input, mask) stacks.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sim2seg_core::encode::{mask_to_gray, TargetEncoding};
use sim2seg_core::imaging::{denormalize, normalize, preprocess_for_segmentation, InputMode, PreprocessSpec};
use sim2seg_core::{CoreError, DomainDataset, ImageBuffer, ValueDomain};

use crate::checkpoint::{self, RngState};
use crate::convert::{image_to_tensor, tensor_to_image};
use crate::error::{Error, Result};
use crate::losses::{l1, AdvMode};
use crate::nn::{linear_decay_lr, Adam, Archive, Graph, ParamSet, PatchDiscriminator, PatchSpec, Tensor, UnetGenerator, UnetSpec, Var};

pub const CHECKPOINT_FILE: &str = "segmentation.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegHyper {
    pub lambda_l1: f32,
    pub adv_mode: AdvMode,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub input_mode: InputMode,
    pub target_encoding: TargetEncoding,
    pub image_size: usize,
    pub iterations: u64,
    pub batch_size: usize,
    /// U-Net levels; 8 at 256 px and above, 6 below when unset.
    pub levels: Option<usize>,
    pub ngf: usize,
    pub ndf: usize,
    pub disc_layers: usize,
    pub dropout: f32,
    pub checkpoint_every: u64,
}

impl Default for SegHyper {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            adv_mode: AdvMode::BinaryCrossEntropy,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            input_mode: InputMode::Sobel,
            target_encoding: TargetEncoding::Levels,
            image_size: 256,
            iterations: 200_000,
            batch_size: 1,
            levels: None,
            ngf: 64,
            ndf: 64,
            disc_layers: 3,
            dropout: 0.5,
            checkpoint_every: 5_000,
        }
    }
}

impl SegHyper {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, reason: &str| Err(Error::config(format!("segmentation.{name}"), reason));
        if !(self.lambda_l1 >= 0.0) {
            return f("lambda_l1", "must be >= 0");
        }
        if !(self.learning_rate > 0.0) {
            return f("learning_rate", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return f("adam_beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return f("dropout", "must lie in [0, 1)");
        }
        let l = self.unet_levels();
        if l < 2 || l > 16 || self.image_size == 0 || self.image_size % (1 << l) != 0 {
            return f("levels", "image_size must be a positive multiple of 2^levels, levels >= 2");
        }
        if self.image_size >> self.disc_layers < 4 {
            return f("disc_layers", "too many stride-2 layers for the image size");
        }
        if self.batch_size == 0 || self.ngf == 0 || self.ndf == 0 || self.disc_layers == 0 {
            return f("batch_size/ngf/ndf/disc_layers", "must be >= 1");
        }
        Ok(())
    }

    pub fn unet_levels(&self) -> usize {
        self.levels.unwrap_or(if self.image_size >= 256 { 8 } else { 6 })
    }
}

#[derive(Debug, Clone)]
pub struct SegmentationModel {
    pub gen: UnetGenerator,
    /// Scores `input ‖ mask` channel stacks.
    pub disc: PatchDiscriminator,
    pub hyper: SegHyper,
    pub step: u64,
}

pub fn init_segmentation_model<R: Rng + ?Sized>(hyper: &SegHyper, rng: &mut R) -> Result<SegmentationModel> {
    hyper.validate()?;
    let cin = hyper.input_mode.channels();
    let gen = UnetGenerator::new(
        UnetSpec {
            in_channels: cin,
            out_channels: 1,
            ngf: hyper.ngf,
            levels: hyper.unet_levels(),
            dropout: hyper.dropout,
        },
        rng,
    );
    let disc = PatchDiscriminator::new(
        PatchSpec {
            in_channels: cin + 1,
            ndf: hyper.ndf,
            n_layers: hyper.disc_layers,
        },
        rng,
    );
    Ok(SegmentationModel {
        gen,
        disc,
        hyper: hyper.clone(),
        step: 0,
    })
}

impl SegmentationModel {
    pub fn all_finite(&self) -> bool {
        self.gen.params.all_finite() && self.disc.params.all_finite()
    }

    fn check_input(&self, t: &Tensor) -> Result<()> {
        let (s, c) = (self.hyper.image_size, self.hyper.input_mode.channels());
        if t.c() != c || t.h() != s || t.w() != s {
            return Err(CoreError::Shape(format!(
                "mask generator expects {c}x{s}x{s} input, got {}x{}x{}",
                t.c(),
                t.h(),
                t.w()
            ))
            .into());
        }
        Ok(())
    }

    /// Deterministic generator output in `[-1, 1]`.
    pub fn generate(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut g = Graph::new();
        let p = self.gen.params.bind(&mut g, false);
        let x = g.input(input.clone());
        let y = self.gen.forward(&mut g, &p, x, None);
        Ok(g.value(y).clone())
    }
}

/// Preprocessed generator input and its target mask image, both NORM.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub name: String,
    pub input: ImageBuffer,
    pub target: ImageBuffer,
}

pub fn make_training_pairs(dataset: &DomainDataset, spec: &PreprocessSpec, hyper: &SegHyper) -> Result<Vec<TrainingPair>> {
    dataset
        .items
        .iter()
        .map(|it| {
            let mask = it
                .mask
                .as_ref()
                .ok_or_else(|| Error::Data(format!("sample `{}` has no mask", it.name)))?;
            let rgb = match it.rgb.domain() {
                ValueDomain::U8 => it.rgb.clone(),
                ValueDomain::Norm => denormalize(&it.rgb)?,
            };
            Ok(TrainingPair {
                name: it.name.clone(),
                input: preprocess_for_segmentation(&rgb, spec, hyper.input_mode)?,
                target: normalize(&mask_to_gray(mask, hyper.target_encoding))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegLosses {
    pub adv_g: f32,
    pub l1: f32,
    pub total_g: f32,
    pub disc: f32,
}

impl SegLosses {
    pub fn all_finite(&self) -> bool {
        [self.adv_g, self.l1, self.total_g, self.disc].iter().all(|v| v.is_finite())
    }
}

struct GenTerms {
    adv: Var,
    l1: Var,
    total: Var,
    fake: Var,
}

fn generator_terms(g: &mut Graph, m: &SegmentationModel, pg: &[Var], pd: &[Var], x: Var, y: Var, rng: Option<&mut dyn RngCore>) -> GenTerms {
    let fake = m.gen.forward(g, pg, x, rng);
    let stack = g.concat(x, fake);
    let scores = m.disc.forward(g, pd, stack);
    let adv = m.hyper.adv_mode.generator(g, scores);
    let l1 = l1(g, fake, y);
    let total = g.weighted_sum(&[(adv, 1.0), (l1, m.hyper.lambda_l1)]);
    GenTerms { adv, l1, total, fake }
}

fn disc_loss(g: &mut Graph, m: &SegmentationModel, pd: &[Var], x: Var, real: Var, fake: Var) -> Var {
    let rs = g.concat(x, real);
    let fs = g.concat(x, fake);
    let r = m.disc.forward(g, pd, rs);
    let f = m.disc.forward(g, pd, fs);
    m.hyper.adv_mode.discriminator(g, r, f)
}

/// Every loss term in inference mode, without updating the model.
pub fn segmentation_losses(input: &Tensor, target: &Tensor, model: &SegmentationModel) -> Result<SegLosses> {
    model.check_input(input)?;
    if target.c() != 1 || target.h() != input.h() || target.w() != input.w() || target.n() != input.n() {
        return Err(CoreError::Shape("target must be one channel matching the input".into()).into());
    }
    let mut g = Graph::new();
    let pg = model.gen.params.bind(&mut g, false);
    let pd = model.disc.params.bind(&mut g, false);
    let (x, y) = (g.input(input.clone()), g.input(target.clone()));
    let t = generator_terms(&mut g, model, &pg, &pd, x, y, None);
    let d = disc_loss(&mut g, model, &pd, x, y, t.fake);
    let out = SegLosses {
        adv_g: g.value(t.adv).item(),
        l1: g.value(t.l1).item(),
        total_g: g.value(t.total).item(),
        disc: g.value(d).item(),
    };
    if !out.all_finite() {
        return Err(Error::TrainingFault {
            step: model.step,
            reason: format!("non-finite segmentation loss {out:?}"),
        });
    }
    Ok(out)
}

/// Raw grayscale mask image (U8, one channel) for one preprocessed input.
pub fn predict_mask(input: &ImageBuffer, model: &SegmentationModel) -> Result<ImageBuffer> {
    let t = image_to_tensor(input)?;
    let y = model.generate(&t)?;
    Ok(denormalize(&tensor_to_image(&y, 0)?)?)
}

pub struct SegTrainer {
    pub model: SegmentationModel,
    opt_gen: Adam,
    opt_disc: Adam,
    rng: ChaCha8Rng,
    pub last_losses: Option<SegLosses>,
}

impl SegTrainer {
    pub fn new(model: SegmentationModel, seed: u64) -> Self {
        let b1 = model.hyper.adam_beta1;
        Self {
            opt_gen: Adam::new(&model.gen.params, b1),
            opt_disc: Adam::new(&model.disc.params, b1),
            model,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7365_676d_656e_7421),
            last_losses: None,
        }
    }

    pub fn init(hyper: &SegHyper, seed: u64) -> Result<Self> {
        let model = init_segmentation_model(hyper, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self::new(model, seed))
    }

    /// One generator update followed by one discriminator update.
    pub fn step(&mut self, pairs: &[(Tensor, Tensor)]) -> Result<SegLosses> {
        if pairs.is_empty() {
            return Err(Error::Data("segmentation training needs at least one pair".into()));
        }
        let n = self.model.hyper.batch_size;
        let picks: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..pairs.len())).collect();
        let x = Tensor::stack(&picks.iter().map(|&i| &pairs[i].0).collect::<Vec<_>>());
        let y = Tensor::stack(&picks.iter().map(|&i| &pairs[i].1).collect::<Vec<_>>());
        self.model.check_input(&x)?;
        let step = self.model.step;
        let h = &self.model.hyper;
        let lr = linear_decay_lr(h.learning_rate, step, h.iterations);

        let mut g = Graph::new();
        let pg = self.model.gen.params.bind(&mut g, true);
        let pd = self.model.disc.params.bind(&mut g, false);
        let (xv, yv) = (g.input(x.clone()), g.input(y.clone()));
        let t = generator_terms(&mut g, &self.model, &pg, &pd, xv, yv, Some(&mut self.rng));
        let total_g = g.value(t.total).item();
        if !total_g.is_finite() {
            return Err(Error::TrainingFault {
                step,
                reason: format!("non-finite generator loss {total_g}"),
            });
        }
        let mut grads = g.backward(t.total);
        let gg = ParamSet::collect_grads(&mut grads, &pg);
        let fake = g.value(t.fake).clone();
        let mut losses = SegLosses {
            adv_g: g.value(t.adv).item(),
            l1: g.value(t.l1).item(),
            total_g,
            disc: 0.0,
        };
        drop(g);
        self.opt_gen.step(&mut self.model.gen.params, &gg, lr);

        let mut g = Graph::new();
        let pd = self.model.disc.params.bind(&mut g, true);
        let (xv, yv, fv) = (g.input(x), g.input(y), g.input(fake));
        let d = disc_loss(&mut g, &self.model, &pd, xv, yv, fv);
        losses.disc = g.value(d).item();
        if !losses.disc.is_finite() {
            return Err(Error::TrainingFault {
                step,
                reason: format!("non-finite discriminator loss {}", losses.disc),
            });
        }
        let mut grads = g.backward(d);
        let gd = ParamSet::collect_grads(&mut grads, &pd);
        self.opt_disc.step(&mut self.model.disc.params, &gd, lr);
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

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let mut ar = model_archive(&self.model);
        ar.insert_adam("opt.gen", &self.model.gen.params, &self.opt_gen);
        ar.insert_adam("opt.disc", &self.model.disc.params, &self.opt_disc);
        ar.set_meta("rng", serde_json::to_string(&RngState::capture(&self.rng)).expect("rng state serializes"));
        let path = dir.join(CHECKPOINT_FILE);
        ar.save(&path)?;
        checkpoint::write_sidecar(dir, "segmentation", self.model.step, &self.model.hyper, &self.last_losses)?;
        Ok(path)
    }

    pub fn resume(dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_FILE);
        if !path.exists() {
            return Err(Error::missing("segmentation", &path));
        }
        let ar = Archive::load(&path)?;
        let model = model_from_archive(&ar, &path)?;
        let mut tr = Self::new(model, 0);
        let bad = |e: String| Error::checkpoint(&path, e);
        ar.load_adam("opt.gen", &tr.model.gen.params, &mut tr.opt_gen).map_err(bad)?;
        ar.load_adam("opt.disc", &tr.model.disc.params, &mut tr.opt_disc).map_err(bad)?;
        let rng: RngState = ar
            .meta("rng")
            .and_then(|s| serde_json::from_str(s).ok())
            .ok_or_else(|| Error::checkpoint(&path, "missing rng state"))?;
        tr.rng = rng.restore();
        Ok(tr)
    }
}

fn model_archive(m: &SegmentationModel) -> Archive {
    let mut ar = Archive::new();
    ar.insert_params("gen", &m.gen.params);
    ar.insert_params("disc", &m.disc.params);
    ar.set_meta("kind", "segmentation");
    ar.set_meta("step", m.step.to_string());
    ar.set_meta("hyper", serde_json::to_string(&m.hyper).expect("hyper serializes"));
    ar.set_meta("gen.arch", serde_json::to_string(&m.gen.spec).expect("arch serializes"));
    ar.set_meta("disc.arch", serde_json::to_string(&m.disc.spec).expect("arch serializes"));
    ar
}

fn model_from_archive(ar: &Archive, path: &Path) -> Result<SegmentationModel> {
    let bad = |e: String| Error::checkpoint(path, e);
    if ar.meta("kind") != Some("segmentation") {
        return Err(bad("not a segmentation checkpoint".into()));
    }
    let meta = |key: &str| ar.meta(key).ok_or_else(|| bad(format!("missing `{key}`")));
    let hyper: SegHyper = serde_json::from_str(meta("hyper")?).map_err(|e| bad(e.to_string()))?;
    let gspec: UnetSpec = serde_json::from_str(meta("gen.arch")?).map_err(|e| bad(e.to_string()))?;
    let dspec: PatchSpec = serde_json::from_str(meta("disc.arch")?).map_err(|e| bad(e.to_string()))?;
    let step = meta("step")?.parse().map_err(|_| bad("bad step".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut m = SegmentationModel {
        gen: UnetGenerator::new(gspec, &mut rng),
        disc: PatchDiscriminator::new(dspec, &mut rng),
        hyper,
        step,
    };
    ar.load_params("gen", &mut m.gen.params).map_err(bad)?;
    ar.load_params("disc", &mut m.disc.params).map_err(bad)?;
    Ok(m)
}

pub fn save_model(model: &SegmentationModel, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(CHECKPOINT_FILE);
    model_archive(model).save(&path)?;
    checkpoint::write_sidecar(dir, "segmentation", model.step, &model.hyper, &None::<SegLosses>)?;
    Ok(path)
}

pub fn load_model(dir: &Path) -> Result<SegmentationModel> {
    let path = dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Error::missing("segmentation", &path));
    }
    model_from_archive(&Archive::load(&path)?, &path)
}

pub fn pair_tensors(pairs: &[TrainingPair]) -> Result<Vec<(Tensor, Tensor)>> {
    pairs
        .iter()
        .map(|p| Ok((image_to_tensor(&p.input)?, image_to_tensor(&p.target)?)))
        .collect()
}

/// Train from scratch for `hyper.iterations` steps.
pub fn train_segmentation(pairs: &[TrainingPair], hyper: &SegHyper, seed: u64, checkpoint_dir: Option<&Path>) -> Result<SegmentationModel> {
    let trainer = SegTrainer::init(hyper, seed)?;
    continue_segmentation(trainer, pairs, checkpoint_dir)
}

pub fn continue_segmentation(mut trainer: SegTrainer, pairs: &[TrainingPair], checkpoint_dir: Option<&Path>) -> Result<SegmentationModel> {
    if pairs.is_empty() {
        return Err(Error::Data("segmentation training needs at least one pair".into()));
    }
    let hyper = trainer.model.hyper.clone();
    let data = pair_tensors(pairs)?;
    let mut log = match checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("segmentation_losses.jsonl");
            Some((fs::OpenOptions::new().create(true).append(true).open(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };
    while trainer.model.step < hyper.iterations {
        let losses = trainer.step(&data)?;
        let step = trainer.model.step;
        if let Some((f, p)) = &mut log {
            let rec = serde_json::json!({ "step": step, "losses": losses });
            writeln!(f, "{rec}").map_err(|e| Error::io(&*p, e))?;
        }
        if step % 100 == 0 {
            log::info!("segmentation step {step}: G {:.4} l1 {:.4} D {:.4}", losses.total_g, losses.l1, losses.disc);
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
    use crate::nn::Knockout;
    use sim2seg_core::sample::{DomainItem, DomainTag};
    use sim2seg_core::InstanceMask;

    fn tiny() -> SegHyper {
        SegHyper {
            image_size: 16,
            iterations: 5,
            levels: Some(4),
            ngf: 4,
            ndf: 4,
            disc_layers: 2,
            ..SegHyper::default()
        }
    }

    fn rand_t(seed: u64, c: usize, s: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec([1, c, s, s], (0..c * s * s).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())
    }

    fn dataset(n: usize) -> DomainDataset {
        let mut ds = DomainDataset::new(DomainTag::Synth);
        for k in 0..n {
            let mut ids = vec![0u32; 16 * 16];
            let mut rgb = vec![30u8; 16 * 16 * 3];
            for (j, (x0, y0)) in [(2usize, 2usize), (9, 3), (4, 10)].into_iter().enumerate() {
                for y in y0..y0 + 4 + k % 2 {
                    for x in x0..x0 + 4 {
                        ids[y * 16 + x] = j as u32 + 1;
                        rgb[(y * 16 + x) * 3..][..3].copy_from_slice(&[200, 60 * j as u8, 90]);
                    }
                }
            }
            ds.items.push(DomainItem {
                name: format!("{k:06}"),
                rgb: ImageBuffer::from_u8(16, 16, 3, &rgb).unwrap(),
                mask: Some(InstanceMask::new(16, 16, ids).unwrap()),
            });
        }
        ds
    }

    #[test]
    fn pairs_follow_the_encoding() {
        let ds = dataset(3);
        let pairs = make_training_pairs(&ds, &PreprocessSpec::default(), &tiny()).unwrap();
        assert_eq!(pairs.len(), 3);
        let mut levels: Vec<i32> = pairs[0].target.data().iter().map(|v| (v * 1000.0) as i32).collect();
        levels.sort();
        levels.dedup();
        assert_eq!(levels.len(), 4, "background plus three instance levels");
        assert_eq!(pairs[0].input.channels(), 1);
        assert_eq!(pairs[0].input.domain(), ValueDomain::Norm);

        let mut empty = ds.clone();
        empty.items[0].mask = Some(InstanceMask::new(16, 16, vec![0; 256]).unwrap());
        let p = make_training_pairs(&empty, &PreprocessSpec::default(), &tiny()).unwrap();
        assert!(p[0].target.data().iter().all(|&v| v == -1.0));
        empty.items[1].mask = None;
        assert!(matches!(make_training_pairs(&empty, &PreprocessSpec::default(), &tiny()), Err(Error::Data(_))));
    }

    #[test]
    fn loss_terms() {
        let m = init_segmentation_model(&tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = rand_t(2, 1, 16);
        let out = m.generate(&x).unwrap();
        let l = segmentation_losses(&x, &out, &m).unwrap();
        assert_eq!(l.l1, 0.0);
        assert_eq!(l.total_g, l.adv_g);
        let shifted = Tensor::from_vec(out.shape(), out.data().iter().map(|v| v + 0.1).collect());
        let l = segmentation_losses(&x, &shifted, &m).unwrap();
        assert!((100.0 * l.l1 - 10.0).abs() < 1e-4);
        assert!((l.total_g - (l.adv_g + 100.0 * l.l1)).abs() < 1e-4);
        let h = SegHyper { lambda_l1: 0.0, ..tiny() };
        let m0 = init_segmentation_model(&h, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let l = segmentation_losses(&x, &shifted, &m0).unwrap();
        assert_eq!(l.total_g, l.adv_g);
    }

    #[test]
    fn predict_is_deterministic_and_shaped() {
        let m = init_segmentation_model(&tiny(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let pairs = make_training_pairs(&dataset(1), &PreprocessSpec::default(), &tiny()).unwrap();
        let a = predict_mask(&pairs[0].input, &m).unwrap();
        assert_eq!((a.width(), a.height(), a.channels(), a.domain()), (16, 16, 1, ValueDomain::U8));
        assert_eq!(a, predict_mask(&pairs[0].input, &m).unwrap());
        let wrong = ImageBuffer::from_u8(8, 8, 1, &[0; 64]).unwrap();
        assert!(predict_mask(&wrong, &m).is_err());
    }

    #[test]
    fn skip_topology() {
        // Probed after brief training: at init the unnormalized outer skip is tiny.
        let pairs = make_training_pairs(&dataset(4), &PreprocessSpec::default(), &tiny()).unwrap();
        let h = SegHyper { iterations: 300, ..tiny() };
        let m = train_segmentation(&pairs, &h, 8, None).unwrap();
        for seed in 0..3 {
            let x = rand_t(seed, 1, 16);
            let run = |k: Knockout| {
                let mut g = Graph::new();
                let p = m.gen.params.bind(&mut g, false);
                let xv = g.input(x.clone());
                let y = m.gen.forward_probe(&mut g, &p, xv, None, k);
                g.value(y).clone()
            };
            let base = run(Knockout::None);
            let deep = base.mean_abs_diff(&run(Knockout::Bottleneck));
            let skip = base.mean_abs_diff(&run(Knockout::OuterSkip));
            assert!(deep < skip, "bottleneck {deep} vs outer skip {skip}");
        }
    }

    #[test]
    fn smoke_resume_and_learning() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = make_training_pairs(&dataset(4), &PreprocessSpec::default(), &tiny()).unwrap();
        let data = pair_tensors(&pairs).unwrap();
        let mut t = SegTrainer::init(&tiny(), 5).unwrap();
        let l = t.step(&data).unwrap();
        assert!(l.all_finite());
        assert_eq!(t.model.step, 1);
        t.save(dir.path()).unwrap();
        let next = t.step(&data).unwrap();
        let mut r = SegTrainer::resume(dir.path()).unwrap();
        assert_eq!(r.step(&data).unwrap(), next);
        assert!(matches!(load_model(tempfile::tempdir().unwrap().path()), Err(Error::MissingArtifact { .. })));

        let h = SegHyper { iterations: 150, ..tiny() };
        let untrained = init_segmentation_model(&h, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let trained = train_segmentation(&pairs[..3], &h, 8, Some(dir.path())).unwrap();
        let held = &data[3];
        let err = |m: &SegmentationModel| m.generate(&held.0).unwrap().mean_abs_diff(&held.1);
        assert!(err(&trained) < err(&untrained), "{} vs {}", err(&trained), err(&untrained));
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back.generate(&held.0).unwrap(), trained.generate(&held.0).unwrap());
    }
}
