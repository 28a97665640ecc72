//! Raster containers: color/gray images, instance id maps, depth maps and
//! binary foreground maps. All are row-major.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

const NORM_SLACK: f32 = 1e-6;

/// Value range carried by an [`ImageBuffer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    /// Integral samples in `[0, 255]`.
    U8,
    /// Real samples in `[-1, 1]`.
    Norm,
}

/// An H×W×C raster with channel-interleaved samples.
///
/// U8 images keep their samples as integral `f32` so that both value domains
/// share one storage type.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    domain: ValueDomain,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        domain: ValueDomain,
        data: Vec<f32>,
    ) -> Result<Self, CoreError> {
        if channels == 0 {
            return Err(CoreError::Shape("image must have at least one channel".into()));
        }
        if data.len() != width * height * channels {
            return Err(CoreError::Shape(alloc::format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        match domain {
            ValueDomain::U8 => {
                if let Some(v) = data
                    .iter()
                    .find(|v| !(0.0..=255.0).contains(*v) || libm::truncf(**v) != **v)
                {
                    return Err(CoreError::Domain(alloc::format!(
                        "U8 sample {v} is not an integer in [0, 255]"
                    )));
                }
            }
            ValueDomain::Norm => {
                if let Some(v) = data
                    .iter()
                    .find(|v| !(-1.0 - NORM_SLACK..=1.0 + NORM_SLACK).contains(*v))
                {
                    return Err(CoreError::Domain(alloc::format!(
                        "NORM sample {v} outside [-1, 1]"
                    )));
                }
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            domain,
            data,
        })
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self, CoreError> {
        Self::new(
            width,
            height,
            channels,
            ValueDomain::U8,
            bytes.iter().map(|&b| b as f32).collect(),
        )
    }

    /// A U8 image filled with one value per channel.
    pub fn filled(width: usize, height: usize, pixel: &[u8]) -> Self {
        let channels = pixel.len().max(1);
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend(pixel.iter().map(|&p| p as f32));
        }
        Self {
            width,
            height,
            channels,
            domain: ValueDomain::U8,
            data,
        }
    }

    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        domain: ValueDomain,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            domain,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Samples as bytes. Only meaningful for U8 images.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v.clamp(0.0, 255.0) as u8).collect()
    }

    /// One channel as a contiguous plane.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Planar (CHW) copy of the samples.
    pub fn to_planar(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            out.extend(self.plane(c));
        }
        out
    }

    /// Build an interleaved image from planar (CHW) samples.
    pub fn from_planar(
        width: usize,
        height: usize,
        channels: usize,
        domain: ValueDomain,
        planar: &[f32],
    ) -> Result<Self, CoreError> {
        let n = width * height;
        if planar.len() != n * channels {
            return Err(CoreError::Shape(alloc::format!(
                "planar length {} != {}x{}x{}",
                planar.len(),
                width,
                height,
                channels
            )));
        }
        let mut data = vec![0.0; planar.len()];
        for c in 0..channels {
            for i in 0..n {
                data[i * channels + c] = planar[c * n + i];
            }
        }
        Self::new(width, height, channels, domain, data)
    }

    /// Rotate 90° counter-clockwise (x' = y, y' = W-1-x).
    pub fn rotate90(&self) -> Self {
        let (w, h, ch) = (self.width, self.height, self.channels);
        let mut data = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = (y, w - 1 - x);
                for c in 0..ch {
                    data[(ny * h + nx) * ch + c] = self.data[(y * w + x) * ch + c];
                }
            }
        }
        Self::from_parts_unchecked(h, w, ch, self.domain, data)
    }
}

/// Per-pixel instance ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    width: usize,
    height: usize,
    ids: Vec<u32>,
}

impl InstanceMask {
    pub fn new(width: usize, height: usize, ids: Vec<u32>) -> Result<Self, CoreError> {
        if ids.len() != width * height {
            return Err(CoreError::Shape(alloc::format!(
                "mask length {} != {}x{}",
                ids.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, ids })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn ids_mut(&mut self) -> &mut [u32] {
        &mut self.ids
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.ids[y * self.width + x]
    }

    /// Sorted set of non-zero ids.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.ids.iter().copied().filter(|&i| i != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn pixels_of(&self, id: u32) -> BinaryMap {
        BinaryMap {
            width: self.width,
            height: self.height,
            bits: self.ids.iter().map(|&i| i == id && id != 0).collect(),
        }
    }

    pub fn foreground(&self) -> BinaryMap {
        BinaryMap {
            width: self.width,
            height: self.height,
            bits: self.ids.iter().map(|&i| i != 0).collect(),
        }
    }

    pub fn area(&self, id: u32) -> usize {
        self.ids.iter().filter(|&&i| i == id).count()
    }

    /// Apply an id mapping (ids missing from `map` keep their value).
    pub fn relabeled(&self, map: impl Fn(u32) -> u32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            ids: self.ids.iter().map(|&i| if i == 0 { 0 } else { map(i) }).collect(),
        }
    }
}

/// Depth along the optical axis in meters; 0 means no hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    meters: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, meters: Vec<f64>) -> Result<Self, CoreError> {
        if meters.len() != width * height {
            return Err(CoreError::Shape(alloc::format!(
                "depth length {} != {}x{}",
                meters.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            meters,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            meters: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.meters
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.meters
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.meters[y * self.width + x]
    }
}

/// A foreground/background map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, CoreError> {
        if bits.len() != width * height {
            return Err(CoreError::Shape(alloc::format!(
                "binary map length {} != {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}
