//! Synthetic dataset generation and loading, and real-image ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sim2seg_core::imaging::resize_bilinear;
use sim2seg_core::synth::{
    hidden_objects, render_sample, sample_scene, sample_seed, settle_scene, BoxStackingSettler, FallbackRenderer,
    RaycastRenderer, RenderProvider, SceneConfig, SceneSpec,
};
use sim2seg_core::{
    point_cloud_from_depth, CameraModel, CoreError, DomainDataset, DomainItem, DomainTag, InstanceMask, LightSpec,
    ObjectPose, SyntheticSample,
};

use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderBackend {
    /// Flat-shaded top-down box footprints.
    #[default]
    Fallback,
    /// Per-pixel ray casting with Lambert shading.
    Raycast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub dir: String,
    pub seed: u64,
    pub n_objects: usize,
    pub light: LightSpec,
    pub asset_draws: Vec<String>,
    /// Settled objects that ended up fully occluded.
    pub hidden_objects: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub index: u64,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub config: SceneConfig,
    pub backend: RenderBackend,
    pub count: u64,
    pub samples: Vec<ManifestEntry>,
    pub skipped: Vec<SkipEntry>,
}

/// Contents of a sample's `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: u64,
    pub seed: u64,
    pub camera: CameraModel,
    pub light: LightSpec,
    pub hidden_objects: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub index: u64,
    pub seed: u64,
    pub spec: SceneSpec,
    pub sample: SyntheticSample,
    pub hidden: Vec<u32>,
}

pub fn sample_dir_name(index: u64) -> String {
    format!("samples/{index:06}")
}

/// One sample of the dataset; depth is snapped to the stored millimeter grid
/// and the point cloud is computed from the snapped depth.
pub fn generate_sample(config: &SceneConfig, backend: RenderBackend, index: u64) -> Result<GeneratedSample> {
    let seed = sample_seed(config.seed, index);
    let spec = sample_scene(config, seed)?;
    let settled = settle_scene(&spec, &BoxStackingSettler::from_config(config))?;
    let camera = config.camera();
    let renderer: Box<dyn RenderProvider> = match backend {
        RenderBackend::Fallback => Box::new(FallbackRenderer::new(config.asset_pool.clone())),
        RenderBackend::Raycast => Box::new(RaycastRenderer::from_config(config)),
    };
    let mut sample = render_sample(&settled, &camera, &spec.light, renderer.as_ref())?;
    sample.depth = io::quantize_depth(&sample.depth);
    sample.cloud = point_cloud_from_depth(&sample.depth, &camera)?;
    let hidden = hidden_objects(&settled, &sample);
    Ok(GeneratedSample {
        index,
        seed,
        spec,
        sample,
        hidden,
    })
}

pub fn write_sample(dir: &Path, g: &GeneratedSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = &g.sample;
    io::write_png(&dir.join("rgb.png"), &s.rgb)?;
    io::write_mask(&dir.join("mask.png"), &s.mask)?;
    io::write_depth(&dir.join("depth.png"), &s.depth)?;
    io::write_ply(&dir.join("cloud.ply"), &s.cloud)?;
    io::write_json(&dir.join("poses.json"), &s.poses)?;
    io::write_json(
        &dir.join("meta.json"),
        &SampleMeta {
            index: g.index,
            seed: g.seed,
            camera: s.camera.clone(),
            light: s.light,
            hidden_objects: g.hidden.clone(),
        },
    )
}

/// Every modality of one stored sample.
pub fn read_sample(dir: &Path) -> Result<SyntheticSample> {
    let meta: SampleMeta = io::read_json(&dir.join("meta.json"))?;
    let poses: Vec<ObjectPose> = io::read_json(&dir.join("poses.json"))?;
    Ok(SyntheticSample {
        rgb: io::read_rgb(&dir.join("rgb.png"))?,
        depth: io::read_depth(&dir.join("depth.png"))?,
        mask: io::read_mask(&dir.join("mask.png"))?,
        cloud: io::read_ply(&dir.join("cloud.ply"))?,
        poses,
        camera: meta.camera,
        light: meta.light,
    })
}

enum Outcome {
    Written(ManifestEntry),
    Skipped(SkipEntry),
}

fn prepare_out_dir(out_dir: &Path) -> Result<()> {
    if out_dir.exists() {
        let has_entries = fs::read_dir(out_dir).map_err(|e| Error::io(out_dir, e))?.next().is_some();
        if has_entries {
            if !out_dir.join(MANIFEST_FILE).exists() {
                return Err(Error::config(
                    "paths.synth_dataset",
                    format!("{} is not empty and holds no dataset manifest", out_dir.display()),
                ));
            }
            let samples = out_dir.join("samples");
            if samples.exists() {
                fs::remove_dir_all(&samples).map_err(|e| Error::io(&samples, e))?;
            }
            let manifest = out_dir.join(MANIFEST_FILE);
            fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))
}

/// Generate and persist `count` samples using `workers` threads. Output
/// bytes do not depend on the worker count. An existing dataset under
/// `out_dir` is replaced.
pub fn generate_dataset(
    config: &SceneConfig,
    backend: RenderBackend,
    count: u64,
    out_dir: &Path,
    workers: usize,
) -> Result<DatasetManifest> {
    config.validate()?;
    prepare_out_dir(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Data(format!("worker pool: {e}")))?;
    let results: Vec<Result<Outcome>> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|index| {
                let g = match generate_sample(config, backend, index) {
                    Ok(g) => g,
                    Err(Error::Core(CoreError::Settling { reason, .. })) => {
                        log::warn!("sample {index}: settling failed, skipped: {reason}");
                        return Ok(Outcome::Skipped(SkipEntry {
                            index,
                            seed: sample_seed(config.seed, index),
                            reason: format!("settling failed: {reason}"),
                        }));
                    }
                    Err(e) => return Err(e),
                };
                let dir = sample_dir_name(index);
                write_sample(&out_dir.join(&dir), &g)?;
                Ok(Outcome::Written(ManifestEntry {
                    index,
                    dir,
                    seed: g.seed,
                    n_objects: g.sample.poses.len(),
                    light: g.sample.light,
                    asset_draws: g.spec.object_draws.iter().map(|d| d.asset_ref.clone()).collect(),
                    hidden_objects: g.hidden,
                }))
            })
            .collect()
    });
    let mut manifest = DatasetManifest {
        config: config.clone(),
        backend,
        count,
        samples: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results {
        match r {
            Ok(Outcome::Written(e)) => manifest.samples.push(e),
            Ok(Outcome::Skipped(s)) => manifest.skipped.push(s),
            Err(e) => {
                let samples = out_dir.join("samples");
                if samples.exists() {
                    let _ = fs::remove_dir_all(&samples);
                }
                return Err(e);
            }
        }
    }
    if count == 0 {
        log::warn!("generated an empty dataset");
    }
    io::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::missing("dataset", &path));
    }
    io::read_json(&path)
}

/// The RGB images and masks of a generated dataset, in manifest order.
pub fn load_dataset(root: &Path) -> Result<DomainDataset> {
    let manifest = read_manifest(root)?;
    let mut ds = DomainDataset::new(DomainTag::Synth);
    ds.camera = Some(manifest.config.camera());
    for e in &manifest.samples {
        let dir = root.join(&e.dir);
        ds.items.push(DomainItem {
            name: format!("{:06}", e.index),
            rgb: io::read_rgb(&dir.join("rgb.png"))?,
            mask: Some(io::read_mask(&dir.join("mask.png"))?),
        });
    }
    Ok(ds)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: Vec<String>,
    pub skipped: Vec<SkipFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipFile {
    pub file: String,
    pub reason: String,
}

/// Regular, non-hidden files of `dir` sorted by file name.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::missing("input images", dir));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Read every image in `in_dir`, bilinear-resized to `size`, as a REAL dataset.
pub fn ingest_real_images(in_dir: &Path, size: [usize; 2]) -> Result<(DomainDataset, IngestReport)> {
    let mut ds = DomainDataset::new(DomainTag::Real);
    ds.noise.label = "real".into();
    let mut report = IngestReport::default();
    for path in list_files(in_dir)? {
        let name = file_name(&path);
        match io::read_rgb(&path).and_then(|img| Ok(resize_bilinear(&img, size[0], size[1])?)) {
            Ok(rgb) => {
                report.accepted.push(name.clone());
                ds.items.push(DomainItem { name, rgb, mask: None });
            }
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                report.skipped.push(SkipFile {
                    file: name,
                    reason: e.to_string(),
                });
            }
        }
    }
    if ds.is_empty() {
        log::warn!("no readable images in {}", in_dir.display());
    }
    Ok((ds, report))
}

/// Nearest-neighbour resampling of an id map.
pub fn resize_mask_nearest(mask: &InstanceMask, width: usize, height: usize) -> InstanceMask {
    if mask.width() == width && mask.height() == height {
        return mask.clone();
    }
    let mut ids = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = ((y as f64 + 0.5) * mask.height() as f64 / height as f64) as usize;
        for x in 0..width {
            let sx = ((x as f64 + 0.5) * mask.width() as f64 / width as f64) as usize;
            ids.push(mask.get(sx.min(mask.width() - 1), sy.min(mask.height() - 1)));
        }
    }
    InstanceMask::new(width, height, ids).expect("size matches")
}

/// A labeled evaluation set: either a generated dataset root, or a directory
/// with `images/` and `masks/` holding files of matching stems. Masks are
/// resized to `size` with nearest-neighbour sampling.
pub fn load_labeled(dir: &Path, size: [usize; 2]) -> Result<(DomainDataset, IngestReport)> {
    if dir.join(MANIFEST_FILE).exists() {
        let mut ds = load_dataset(dir)?;
        let mut report = IngestReport::default();
        for it in &mut ds.items {
            it.rgb = resize_bilinear(&it.rgb, size[0], size[1])?;
            it.mask = it.mask.as_ref().map(|m| resize_mask_nearest(m, size[0], size[1]));
            report.accepted.push(it.name.clone());
        }
        ds.tag = DomainTag::Real;
        return Ok((ds, report));
    }
    let (mut ds, mut report) = ingest_real_images(&dir.join("images"), size)?;
    let masks = list_files(&dir.join("masks"))?;
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut kept = Vec::new();
    for mut it in ds.items.drain(..) {
        let s = stem(Path::new(&it.name));
        let found = masks.iter().find(|m| stem(m) == s);
        match found.map(|m| io::read_mask(m)) {
            Some(Ok(m)) => {
                it.mask = Some(resize_mask_nearest(&m, size[0], size[1]));
                kept.push(it);
            }
            Some(Err(e)) => report.skipped.push(SkipFile {
                file: it.name.clone(),
                reason: format!("unreadable mask: {e}"),
            }),
            None => report.skipped.push(SkipFile {
                file: it.name.clone(),
                reason: "no mask with a matching name".into(),
            }),
        }
    }
    report.accepted.retain(|a| kept.iter().any(|k| &k.name == a));
    ds.items = kept;
    Ok((ds, report))
}
