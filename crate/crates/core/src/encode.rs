//! Grayscale rendering of instance masks used as the mask generator target.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::raster::{ImageBuffer, InstanceMask, ValueDomain};

pub const LEVEL_MIN: u32 = 64;
pub const LEVEL_MAX: u32 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetEncoding {
    /// One gray level per instance, evenly spaced in `[64, 255]` by id order.
    Levels,
    /// Every instance at 255.
    Binary,
}

/// Gray level of the `rank`-th of `count` instances.
pub fn instance_level(rank: usize, count: usize) -> u32 {
    if count <= 1 {
        return LEVEL_MAX;
    }
    let span = (LEVEL_MAX - LEVEL_MIN) as f64;
    LEVEL_MIN + math::round(rank as f64 * span / (count - 1) as f64) as u32
}

/// Render `mask` as a U8 gray image with background 0.
///
/// Pixels whose right or lower neighbour belongs to a different instance are
/// drawn as background, so touching instances stay separated by a one-pixel
/// gap.
pub fn mask_to_gray(mask: &InstanceMask, encoding: TargetEncoding) -> ImageBuffer {
    let ids = mask.instance_ids();
    let level_of = |id: u32| -> f32 {
        match encoding {
            TargetEncoding::Binary => LEVEL_MAX as f32,
            TargetEncoding::Levels => {
                let rank = ids.binary_search(&id).unwrap_or(0);
                instance_level(rank, ids.len()) as f32
            }
        }
    };
    let (w, h) = (mask.width(), mask.height());
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let id = mask.get(x, y);
            if id == 0 {
                data.push(0.0);
                continue;
            }
            let differs = |nx: usize, ny: usize| {
                let n = mask.get(nx, ny);
                n != 0 && n != id
            };
            let gap = (x + 1 < w && differs(x + 1, y)) || (y + 1 < h && differs(x, y + 1));
            data.push(if gap { 0.0 } else { level_of(id) });
        }
    }
    ImageBuffer::from_parts_unchecked(w, h, 1, ValueDomain::U8, data)
}
