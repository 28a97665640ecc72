//! Command implementations: dataset generation, both trainings, inference,
//! evaluation and the with/without translation ablation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sim2seg_core::eval::{evaluate_dataset, render_table, EvalReport};
use sim2seg_core::imaging::{denormalize, normalize, preprocess_for_segmentation, resize_bilinear};
use sim2seg_core::postproc::{colorize, watershed_instances};
use sim2seg_core::{DomainDataset, ImageBuffer, InstanceMask};

use crate::config::PipelineConfig;
use crate::dataset::{self, IngestReport, SkipFile, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::io;
use crate::segmentation::{self, SegTrainer, SegmentationModel};
use crate::translation::{self, translate_to_sim, TranslationModel, TranslationTrainer};

pub const WORKERS_ENV: &str = "SIM2SEG_WORKERS";
pub const WITHOUT_LABEL: &str = "without Domain Adaptation";
pub const WITH_LABEL: &str = "with Domain Adaptation";

/// `SIM2SEG_WORKERS`, then `workers` from the config, then the logical core count.
pub fn worker_count(cfg: &PipelineConfig) -> Result<usize> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::config(WORKERS_ENV, format!("`{v}` is not a positive integer"))),
        };
    }
    Ok(cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)))
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg)?)
        .build()
        .map_err(|e| Error::Data(format!("worker pool: {e}")))
}

pub fn translation_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.checkpoints.join("translation")
}

pub fn segmentation_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.checkpoints.join("segmentation")
}

/// A fresh directory `<reports>/<UTC timestamp>-<kind>`.
pub fn new_report_dir(cfg: &PipelineConfig, kind: &str) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = cfg.paths.reports.join(format!("{stamp}-{kind}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Generate `count` samples into `paths.synth_dataset`; returns the manifest path.
pub fn cmd_gen_data(cfg: &PipelineConfig, count: u64, seed: Option<u64>) -> Result<PathBuf> {
    let mut scene = cfg.scene.clone();
    if let Some(s) = seed {
        scene.seed = s;
    }
    let out = &cfg.paths.synth_dataset;
    let manifest = dataset::generate_dataset(&scene, cfg.render_backend, count, out, worker_count(cfg)?)?;
    log::info!(
        "wrote {} samples ({} skipped) to {}",
        manifest.samples.len(),
        manifest.skipped.len(),
        out.display()
    );
    Ok(out.join(MANIFEST_FILE))
}

/// The synthetic dataset with images and masks resampled to `size`.
pub fn load_synth_resized(cfg: &PipelineConfig, size: usize) -> Result<DomainDataset> {
    let root = &cfg.paths.synth_dataset;
    if !root.join(MANIFEST_FILE).exists() {
        return Err(Error::missing("synthetic dataset", root.join(MANIFEST_FILE)));
    }
    let mut ds = dataset::load_dataset(root)?;
    for it in &mut ds.items {
        it.rgb = resize_bilinear(&it.rgb, size, size)?;
        it.mask = it.mask.as_ref().map(|m| dataset::resize_mask_nearest(m, size, size));
    }
    Ok(ds)
}

fn check_resume<H: PartialEq + Serialize>(stage: &str, stored: &H, wanted: &H) -> Result<()> {
    if stored != wanted {
        return Err(Error::config(
            stage,
            "checkpoint was trained with different hyperparameters; start without --resume or restore the matching config",
        ));
    }
    Ok(())
}

/// Train the translation pair on the synthetic and real image sets.
pub fn cmd_train_translate(cfg: &PipelineConfig, resume: bool) -> Result<PathBuf> {
    let hyper = &cfg.translation;
    let size = hyper.image_size;
    let synth = load_synth_resized(cfg, size)?;
    let (real, report) = dataset::ingest_real_images(&cfg.paths.real_images, [size, size])?;
    if !report.skipped.is_empty() {
        log::warn!("{} real images skipped", report.skipped.len());
    }
    let dir = translation_dir(cfg);
    let trainer = if resume {
        let mut t = TranslationTrainer::resume(&dir)?;
        let mut stored = t.model.hyper.clone();
        stored.iterations = hyper.iterations;
        stored.checkpoint_every = hyper.checkpoint_every;
        check_resume("translation", &stored, hyper)?;
        t.model.hyper = stored;
        log::info!("resuming translation at step {}", t.model.step);
        t
    } else {
        TranslationTrainer::init(hyper, cfg.seed)?
    };
    translation::continue_translation(trainer, &synth, &real, Some(&dir))?;
    Ok(dir.join(translation::CHECKPOINT_FILE))
}

/// Train the mask generator on the synthetic dataset.
pub fn cmd_train_seg(cfg: &PipelineConfig, resume: bool) -> Result<PathBuf> {
    let hyper = &cfg.segmentation;
    let synth = load_synth_resized(cfg, hyper.image_size)?;
    let pairs = segmentation::make_training_pairs(&synth, &cfg.preprocess, hyper)?;
    let dir = segmentation_dir(cfg);
    let trainer = if resume {
        let mut t = SegTrainer::resume(&dir)?;
        let mut stored = t.model.hyper.clone();
        stored.iterations = hyper.iterations;
        stored.checkpoint_every = hyper.checkpoint_every;
        check_resume("segmentation", &stored, hyper)?;
        t.model.hyper = stored;
        log::info!("resuming segmentation at step {}", t.model.step);
        t
    } else {
        SegTrainer::init(hyper, cfg.seed)?
    };
    segmentation::continue_segmentation(trainer, &pairs, Some(&dir))?;
    Ok(dir.join(segmentation::CHECKPOINT_FILE))
}

/// Loaded inference models; no translation model means the translation stage is skipped.
#[derive(Debug, Clone)]
pub struct Models {
    pub translation: Option<TranslationModel>,
    pub segmentation: SegmentationModel,
}

/// Load both checkpoints, segmentation first. Translation is loaded unless skipped.
pub fn load_models(cfg: &PipelineConfig, with_translation: bool) -> Result<Models> {
    let segmentation = segmentation::load_model(&segmentation_dir(cfg))?;
    let translation = if with_translation {
        Some(translation::load_model(&translation_dir(cfg))?)
    } else {
        None
    };
    if let Some(t) = &translation {
        if t.hyper.image_size != segmentation.hyper.image_size {
            return Err(Error::Data(format!(
                "translation checkpoint is {} px but segmentation checkpoint is {} px",
                t.hyper.image_size, segmentation.hyper.image_size
            )));
        }
    }
    Ok(Models {
        translation,
        segmentation,
    })
}

/// Intermediate and final results for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Input resized to the model resolution, U8 RGB.
    pub input: ImageBuffer,
    /// Synthetic-style image fed to the mask generator, U8 RGB.
    pub translated: ImageBuffer,
    /// Generator output, U8 single-channel.
    pub raw: ImageBuffer,
    pub instances: InstanceMask,
}

/// Resize, translate, grayscale, Sobel, normalize, generate, post-process.
pub fn infer_image(rgb: &ImageBuffer, models: &Models, cfg: &PipelineConfig) -> Result<Inference> {
    let size = models.segmentation.hyper.image_size;
    let input = if rgb.width() == size && rgb.height() == size {
        rgb.clone()
    } else {
        resize_bilinear(rgb, size, size)?
    };
    let translated = match &models.translation {
        Some(t) => denormalize(&translate_to_sim(&normalize(&input)?, t)?)?,
        None => input.clone(),
    };
    let gen_in = preprocess_for_segmentation(&translated, &cfg.preprocess, models.segmentation.hyper.input_mode)?;
    let raw = segmentation::predict_mask(&gen_in, &models.segmentation)?;
    let instances = watershed_instances(&raw, &cfg.postproc)?;
    Ok(Inference {
        input,
        translated,
        raw,
        instances,
    })
}

/// Images placed left to right on a black canvas, top-aligned.
pub fn hconcat(images: &[ImageBuffer]) -> ImageBuffer {
    let w: usize = images.iter().map(|i| i.width()).sum();
    let h = images.iter().map(|i| i.height()).max().unwrap_or(0);
    let mut data = vec![0u8; w * h * 3];
    let mut x0 = 0;
    for img in images {
        let px = img.to_u8();
        for y in 0..img.height() {
            for x in 0..img.width() {
                for c in 0..3 {
                    let src = if img.channels() == 1 { px[y * img.width() + x] } else { px[(y * img.width() + x) * 3 + c] };
                    data[(y * w + x0 + x) * 3 + c] = src;
                }
            }
        }
        x0 += img.width();
    }
    ImageBuffer::from_u8(w.max(1), h.max(1), 3, if w * h == 0 { &[0, 0, 0] } else { &data }).expect("canvas size")
}

/// Rows stacked top to bottom, left-aligned.
pub fn vconcat(rows: &[ImageBuffer]) -> ImageBuffer {
    let w = rows.iter().map(|i| i.width()).max().unwrap_or(0);
    let h: usize = rows.iter().map(|i| i.height()).sum();
    if w * h == 0 {
        return ImageBuffer::from_u8(1, 1, 3, &[0, 0, 0]).expect("canvas size");
    }
    let mut data = vec![0u8; w * h * 3];
    let mut y0 = 0;
    for img in rows {
        let px = hconcat(std::slice::from_ref(img)).to_u8();
        for y in 0..img.height() {
            let dst = ((y0 + y) * w) * 3;
            data[dst..dst + img.width() * 3].copy_from_slice(&px[y * img.width() * 3..(y + 1) * img.width() * 3]);
        }
        y0 += img.height();
    }
    ImageBuffer::from_u8(w, h, 3, &data).expect("canvas size")
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

fn write_inference(out: &Path, name: &str, r: &Inference) -> Result<()> {
    let file = format!("{}.png", stem(name));
    io::write_png(&out.join("translated").join(&file), &r.translated)?;
    io::write_png(&out.join("raw").join(&file), &r.raw)?;
    io::write_mask(&out.join("instances").join(&file), &r.instances)?;
    let composite = hconcat(&[r.input.clone(), r.translated.clone(), colorize(&r.instances)]);
    io::write_png(&out.join("composite").join(&file), &composite)
}

/// Outcome of [`cmd_infer`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferSummary {
    pub translation: bool,
    pub written: Vec<String>,
    pub skipped: Vec<SkipFile>,
}

/// Run inference on one image file or every image of a directory. Per image,
/// `<stem>.png` is written under `translated/`, `raw/`, `instances/` (16-bit
/// ids) and `composite/` (input | translated | instances).
pub fn cmd_infer(cfg: &PipelineConfig, input: &Path, out_dir: &Path, skip_translation: bool) -> Result<InferSummary> {
    let models = load_models(cfg, !skip_translation)?;
    let files = if input.is_dir() {
        dataset::list_files(input)?
    } else if input.is_file() {
        vec![input.to_path_buf()]
    } else {
        return Err(Error::missing("input images", input));
    };
    let mut seen = BTreeMap::new();
    for f in &files {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(prev) = seen.insert(stem(&name), name.clone()) {
            return Err(Error::Data(format!("`{prev}` and `{name}` share the output name `{}.png`", stem(&name))));
        }
    }
    let results: Vec<(String, Result<()>)> = pool(cfg)?.install(|| {
        files
            .par_iter()
            .map(|f| {
                let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let r = io::read_rgb(f)
                    .and_then(|rgb| infer_image(&rgb, &models, cfg))
                    .and_then(|r| write_inference(out_dir, &name, &r));
                (name, r)
            })
            .collect()
    });
    let mut summary = InferSummary {
        translation: !skip_translation,
        ..Default::default()
    };
    for (name, r) in results {
        match r {
            Ok(()) => summary.written.push(name),
            Err(e @ (Error::Data(_) | Error::Core(_))) => {
                log::warn!("skipping {name}: {e}");
                summary.skipped.push(SkipFile {
                    file: name,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    io::write_json(&out_dir.join("infer_summary.json"), &summary)?;
    Ok(summary)
}

fn read_mask_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for f in dataset::list_files(dir)? {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with(".json") {
            continue;
        }
        if let Some(prev) = out.insert(stem(&name), f.clone()) {
            return Err(Error::Data(format!("{} and {} share a file stem", prev.display(), f.display())));
        }
    }
    Ok(out)
}

/// Ground-truth masks keyed by sample name: a generated dataset root, a
/// directory with `masks/`, or a directory of mask files.
fn ground_truth_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if dir.join(MANIFEST_FILE).exists() {
        let m = dataset::read_manifest(dir)?;
        return Ok(m
            .samples
            .into_iter()
            .map(|s| (format!("{:06}", s.index), dir.join(&s.dir).join("mask.png")))
            .collect());
    }
    if dir.join("masks").is_dir() {
        return read_mask_dir(&dir.join("masks"));
    }
    read_mask_dir(dir)
}

/// Predictions keyed by stem; the `instances/` directory written by [`cmd_infer`] is used when present.
fn prediction_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if dir.join("instances").is_dir() {
        return read_mask_dir(&dir.join("instances"));
    }
    read_mask_dir(dir)
}

/// Report files for one or more conditions.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<String> {
    let table = render_table(reports);
    io::write_json(&dir.join("report.json"), reports)?;
    fs::write(dir.join("table.txt"), &table).map_err(|e| Error::io(dir.join("table.txt"), e))?;
    let csv_path = dir.join("per_sample.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", csv_path.display()));
    w.write_record(["condition", "sample", "mPA", "mIoU", "gt_objects", "false_positives"])
        .map_err(csv_err)?;
    for r in reports {
        for s in &r.per_sample {
            w.write_record([
                r.condition_label.clone(),
                s.sample_ref.clone(),
                format!("{:.6}", s.mpa),
                format!("{:.6}", s.miou),
                s.gt_objects.to_string(),
                s.false_positives.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(table)
}

/// Outcome of an evaluation or ablation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub dir: PathBuf,
    pub reports: Vec<EvalReport>,
    pub table: String,
}

/// Score predicted instance masks against ground truth paired by file stem.
/// Predictions are resampled to the ground-truth size when they differ.
pub fn cmd_eval(cfg: &PipelineConfig, pred_dir: &Path, gt_dir: &Path, label: &str) -> Result<EvalOutcome> {
    let preds = prediction_files(pred_dir)?;
    let gts = ground_truth_files(gt_dir)?;
    let only_pred: Vec<&String> = preds.keys().filter(|k| !gts.contains_key(*k)).collect();
    let only_gt: Vec<&String> = gts.keys().filter(|k| !preds.contains_key(*k)).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        return Err(Error::Data(format!(
            "{} predictions vs {} ground-truth masks; unpaired predictions {:?}, unpaired ground truth {:?}",
            preds.len(),
            gts.len(),
            only_pred,
            only_gt
        )));
    }
    let names: Vec<String> = gts.keys().cloned().collect();
    let pairs: Vec<(InstanceMask, InstanceMask)> = pool(cfg)?.install(|| {
        names
            .par_iter()
            .map(|n| {
                let gt = io::read_mask(&gts[n])?;
                let pred = io::read_mask(&preds[n])?;
                let pred = dataset::resize_mask_nearest(&pred, gt.width(), gt.height());
                Ok((pred, gt))
            })
            .collect::<Result<_>>()
    })?;
    let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let report = evaluate_dataset(&p, &g, &names, label, &cfg.eval)?;
    let dir = new_report_dir(cfg, "eval")?;
    let reports = vec![report];
    let table = write_reports(&dir, &reports)?;
    Ok(EvalOutcome { dir, reports, table })
}

/// Run inference with and without translation on a labeled set, score both
/// and write the two-row table plus a composite grid (input | translated |
/// instances without | instances with | ground truth).
pub fn cmd_ablate(cfg: &PipelineConfig, labeled_dir: &Path) -> Result<EvalOutcome> {
    let with = load_models(cfg, true)?;
    let without = Models {
        translation: None,
        segmentation: with.segmentation.clone(),
    };
    let size = with.segmentation.hyper.image_size;
    let (ds, ingest): (DomainDataset, IngestReport) = dataset::load_labeled(labeled_dir, [size, size])?;
    if ds.is_empty() {
        return Err(Error::Data(format!("no labeled images in {}", labeled_dir.display())));
    }
    let dir = new_report_dir(cfg, "ablate")?;
    let runs: Vec<(Inference, Inference)> = pool(cfg)?.install(|| {
        ds.items
            .par_iter()
            .map(|it| {
                let a = infer_image(&it.rgb, &without, cfg)?;
                let b = infer_image(&it.rgb, &with, cfg)?;
                write_inference(&dir.join("without"), &it.name, &a)?;
                write_inference(&dir.join("with"), &it.name, &b)?;
                Ok((a, b))
            })
            .collect::<Result<_>>()
    })?;
    let names: Vec<String> = ds.items.iter().map(|it| stem(&it.name)).collect();
    let gts: Vec<InstanceMask> = ds
        .items
        .iter()
        .map(|it| it.mask.clone().ok_or_else(|| Error::Data(format!("`{}` has no mask", it.name))))
        .collect::<Result<_>>()?;
    let preds_without: Vec<InstanceMask> = runs.iter().map(|(a, _)| a.instances.clone()).collect();
    let preds_with: Vec<InstanceMask> = runs.iter().map(|(_, b)| b.instances.clone()).collect();
    let reports = vec![
        evaluate_dataset(&preds_without, &gts, &names, WITHOUT_LABEL, &cfg.eval)?,
        evaluate_dataset(&preds_with, &gts, &names, WITH_LABEL, &cfg.eval)?,
    ];
    let table = write_reports(&dir, &reports)?;
    let rows: Vec<ImageBuffer> = runs
        .iter()
        .zip(&gts)
        .map(|((a, b), gt)| hconcat(&[a.input.clone(), b.translated.clone(), colorize(&a.instances), colorize(&b.instances), colorize(gt)]))
        .collect();
    io::write_png(&dir.join("grid.png"), &vconcat(&rows))?;
    if !ingest.skipped.is_empty() {
        io::write_json(&dir.join("skipped.json"), &ingest.skipped)?;
    }
    Ok(EvalOutcome { dir, reports, table })
}
