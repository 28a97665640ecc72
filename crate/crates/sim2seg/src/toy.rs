//! Small self-contained tasks for checking that translation preserves
//! geometry and that the mask generator learns, at 64 x 64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sim2seg_core::imaging::{sobel_magnitude, to_grayscale, SobelMagnitude};
use sim2seg_core::noise::apply_noise;
use sim2seg_core::postproc::{PostprocMode, PostprocSpec};
use sim2seg_core::synth::{sample_seed, SceneConfig};
use sim2seg_core::{BinaryMap, DomainDataset, DomainItem, DomainTag, ImageBuffer, NoiseProfile, ValueDomain};

use crate::dataset::{generate_sample, RenderBackend};
use crate::error::Result;

pub const TOY_SIZE: usize = 64;

/// U8 Sobel magnitude at or above which a pixel counts as an edge.
pub const EDGE_THRESHOLD: f32 = 48.0;

/// Default scene protocol at 64 x 64, framed on the tray.
pub fn toy_scene_config(seed: u64) -> SceneConfig {
    SceneConfig {
        image_size: [TOY_SIZE, TOY_SIZE],
        view_extent: 0.45,
        seed,
        ..SceneConfig::default()
    }
}

/// Clean fallback-renderer scenes with masks.
pub fn toy_synth_domain(n: usize, seed: u64) -> Result<DomainDataset> {
    let config = toy_scene_config(seed);
    let mut ds = DomainDataset::new(DomainTag::Synth);
    ds.camera = Some(config.camera());
    for i in 0..n as u64 {
        let g = generate_sample(&config, RenderBackend::Fallback, i)?;
        ds.items.push(DomainItem {
            name: format!("{i:06}"),
            rgb: g.sample.rgb,
            mask: Some(g.sample.mask),
        });
    }
    Ok(ds)
}

/// Global color shift applied to the second toy domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorShift {
    pub gain: [f32; 3],
    pub offset: [f32; 3],
    pub noise_sigma: f64,
}

impl Default for ColorShift {
    fn default() -> Self {
        Self {
            gain: [0.55, 0.75, 0.9],
            offset: [70.0, 35.0, 20.0],
            noise_sigma: 6.0,
        }
    }
}

impl ColorShift {
    pub fn apply<R: Rng + ?Sized>(&self, rgb: &ImageBuffer, rng: &mut R) -> ImageBuffer {
        let data: Vec<u8> = rgb
            .to_u8()
            .chunks(3)
            .flat_map(|px| (0..3).map(move |c| (px[c] as f32 * self.gain[c] + self.offset[c]).round().clamp(0.0, 255.0) as u8))
            .collect();
        let shifted = ImageBuffer::from_u8(rgb.width(), rgb.height(), 3, &data).expect("same size");
        let profile = NoiseProfile {
            label: "toy-real".into(),
            gaussian_sigma: self.noise_sigma,
            salt_pepper_prob: 0.0,
        };
        apply_noise(&shifted, &profile, rng)
    }
}

/// Same scene law as [`toy_synth_domain`], color-shifted and noisy.
pub fn toy_real_domain(n: usize, seed: u64, shift: &ColorShift) -> Result<DomainDataset> {
    let mut ds = toy_synth_domain(n, seed)?;
    ds.tag = DomainTag::Real;
    ds.noise = NoiseProfile {
        label: "toy-real".into(),
        gaussian_sigma: shift.noise_sigma,
        salt_pepper_prob: 0.0,
    };
    for (i, it) in ds.items.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed ^ 0x6e6f_6973_65, i as u64));
        it.rgb = shift.apply(&it.rgb, &mut rng);
    }
    Ok(ds)
}

/// Thresholded Sobel magnitude of the grayscale image.
pub fn edge_map(rgb: &ImageBuffer, threshold: f32) -> Result<BinaryMap> {
    let u8img = match rgb.domain() {
        ValueDomain::U8 => rgb.clone(),
        ValueDomain::Norm => sim2seg_core::imaging::denormalize(rgb)?,
    };
    let gray = if u8img.channels() == 3 { to_grayscale(&u8img)? } else { u8img };
    let mag = sobel_magnitude(&gray, SobelMagnitude::Euclidean)?;
    Ok(BinaryMap::new(mag.width(), mag.height(), mag.data().iter().map(|&v| v >= threshold).collect())?)
}

/// IoU of two edge maps; 1 when both are empty.
pub fn edge_iou(a: &ImageBuffer, b: &ImageBuffer, threshold: f32) -> Result<f64> {
    Ok(sim2seg_core::eval::instance_iou(&edge_map(a, threshold)?, &edge_map(b, threshold)?)?)
}

/// Post-processing scaled to the 64 x 64 toy scenes.
pub fn toy_postproc() -> PostprocSpec {
    PostprocSpec {
        binarize_threshold: 32,
        marker_min_distance: 3.0,
        min_instance_area: 4,
        mode: PostprocMode::Watershed,
    }
}
