//! Preprocessing in front of the mask generator: BT.601 grayscale, 3×3
//! Sobel magnitude, bilinear resizing and the `[-1, 1]` value mapping.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::math;
use crate::raster::{ImageBuffer, ValueDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SobelMagnitude {
    /// `sqrt(gx² + gy²)`
    Euclidean,
    /// `|gx| + |gy|`
    AbsSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderMode {
    Replicate,
}

/// Which preprocessed planes feed the mask generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Sobel,
    Gray,
    GraySobel,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Sobel | InputMode::Gray => 1,
            InputMode::GraySobel => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSpec {
    pub grayscale: bool,
    pub sobel: bool,
    pub sobel_magnitude: SobelMagnitude,
    pub border: BorderMode,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            grayscale: true,
            sobel: true,
            sobel_magnitude: SobelMagnitude::Euclidean,
            border: BorderMode::Replicate,
        }
    }
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.sobel && !self.grayscale {
            return Err(CoreError::config("preprocess.sobel", "sobel requires grayscale"));
        }
        Ok(())
    }
}

fn require_u8(img: &ImageBuffer) -> Result<(), CoreError> {
    if img.domain() != ValueDomain::U8 {
        return Err(CoreError::Domain("expected a U8 image".into()));
    }
    Ok(())
}

/// BT.601 luma, rounded half-up: `(299 R + 587 G + 114 B + 500) / 1000`.
pub fn to_grayscale(rgb: &ImageBuffer) -> Result<ImageBuffer, CoreError> {
    if rgb.channels() != 3 {
        return Err(CoreError::Shape(alloc::format!(
            "grayscale needs 3 channels, got {}",
            rgb.channels()
        )));
    }
    require_u8(rgb)?;
    let data = rgb
        .data()
        .chunks_exact(3)
        .map(|p| {
            let (r, g, b) = (p[0] as u32, p[1] as u32, p[2] as u32);
            ((299 * r + 587 * g + 114 * b + 500) / 1000) as f32
        })
        .collect();
    Ok(ImageBuffer::from_parts_unchecked(
        rgb.width(),
        rgb.height(),
        1,
        ValueDomain::U8,
        data,
    ))
}

/// Horizontal and vertical Sobel responses with replicate padding.
pub fn sobel_gradients(gray: &ImageBuffer) -> Result<(Vec<i32>, Vec<i32>), CoreError> {
    if gray.channels() != 1 {
        return Err(CoreError::Shape("sobel needs a single channel".into()));
    }
    require_u8(gray)?;
    let (w, h) = (gray.width(), gray.height());
    let px = |x: isize, y: isize| -> i32 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        gray.get(x, y, 0) as i32
    };
    let mut gx = vec![0; w * h];
    let mut gy = vec![0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (a, b, c) = (px(x - 1, y - 1), px(x, y - 1), px(x + 1, y - 1));
            let (d, f) = (px(x - 1, y), px(x + 1, y));
            let (g, hh, i) = (px(x - 1, y + 1), px(x, y + 1), px(x + 1, y + 1));
            let idx = y as usize * w + x as usize;
            gx[idx] = (c + 2 * f + i) - (a + 2 * d + g);
            gy[idx] = (g + 2 * hh + i) - (a + 2 * b + c);
        }
    }
    Ok((gx, gy))
}

/// Per-pixel magnitude of a gradient pair.
#[inline]
pub fn magnitude(gx: i32, gy: i32, mode: SobelMagnitude) -> f64 {
    match mode {
        SobelMagnitude::Euclidean => math::sqrt((gx * gx + gy * gy) as f64),
        SobelMagnitude::AbsSum => (gx.abs() + gy.abs()) as f64,
    }
}

/// Magnitude to U8: round half-up, clamp at 255.
#[inline]
pub fn magnitude_to_u8(m: f64) -> f32 {
    math::floor(m + 0.5).min(255.0) as f32
}

/// Sobel edge magnitude, rounded and clamped to a U8 image.
pub fn sobel_magnitude(gray: &ImageBuffer, mode: SobelMagnitude) -> Result<ImageBuffer, CoreError> {
    let (gx, gy) = sobel_gradients(gray)?;
    let data = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| magnitude_to_u8(magnitude(x, y, mode)))
        .collect();
    Ok(ImageBuffer::from_parts_unchecked(
        gray.width(),
        gray.height(),
        1,
        ValueDomain::U8,
        data,
    ))
}

/// Bilinear resampling with half-pixel-center alignment. U8 results are
/// rounded half-up.
pub fn resize_bilinear(img: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer, CoreError> {
    if width == 0 || height == 0 {
        return Err(CoreError::Shape("target size must be positive".into()));
    }
    if img.width() == width && img.height() == height {
        return Ok(img.clone());
    }
    let (sw, sh, ch) = (img.width(), img.height(), img.channels());
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;
    let taps = |dst: usize, scale: f64, src_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = math::floor(s) as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut data = Vec::with_capacity(width * height * ch);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, sh);
        for x in 0..width {
            let (x0, x1, fx) = taps(x, sx, sw);
            for c in 0..ch {
                let top = img.get(x0, y0, c) as f64 * (1.0 - fx) + img.get(x1, y0, c) as f64 * fx;
                let bot = img.get(x0, y1, c) as f64 * (1.0 - fx) + img.get(x1, y1, c) as f64 * fx;
                let v = top * (1.0 - fy) + bot * fy;
                data.push(match img.domain() {
                    ValueDomain::U8 => math::floor(v + 0.5).clamp(0.0, 255.0) as f32,
                    ValueDomain::Norm => v.clamp(-1.0, 1.0) as f32,
                });
            }
        }
    }
    Ok(ImageBuffer::from_parts_unchecked(width, height, ch, img.domain(), data))
}

/// `v / 127.5 - 1`
pub fn normalize(img: &ImageBuffer) -> Result<ImageBuffer, CoreError> {
    require_u8(img)?;
    let data = img
        .data()
        .iter()
        .map(|&v| (v as f64 / 127.5 - 1.0) as f32)
        .collect();
    Ok(ImageBuffer::from_parts_unchecked(
        img.width(),
        img.height(),
        img.channels(),
        ValueDomain::Norm,
        data,
    ))
}

/// `round(clamp(v, -1, 1) * 127.5 + 127.5)`
pub fn denormalize(img: &ImageBuffer) -> Result<ImageBuffer, CoreError> {
    if img.domain() != ValueDomain::Norm {
        return Err(CoreError::Domain("expected a NORM image".into()));
    }
    let data = img.data().iter().map(|&v| denormalize_value(v)).collect();
    Ok(ImageBuffer::from_parts_unchecked(
        img.width(),
        img.height(),
        img.channels(),
        ValueDomain::U8,
        data,
    ))
}

#[inline]
pub fn denormalize_value(v: f32) -> f32 {
    math::round((v as f64).clamp(-1.0, 1.0) * 127.5 + 127.5) as f32
}

/// Generator input for one RGB image: grayscale, optional Sobel, then the
/// `[-1, 1]` mapping. Returns a NORM image with `mode.channels()` channels.
pub fn preprocess_for_segmentation(
    rgb: &ImageBuffer,
    spec: &PreprocessSpec,
    mode: InputMode,
) -> Result<ImageBuffer, CoreError> {
    spec.validate()?;
    let gray = if spec.grayscale {
        to_grayscale(rgb)?
    } else if rgb.channels() == 1 {
        rgb.clone()
    } else {
        return Err(CoreError::config(
            "preprocess.grayscale",
            "the mask generator takes single-channel planes",
        ));
    };
    let edges = if spec.sobel {
        Some(sobel_magnitude(&gray, spec.sobel_magnitude)?)
    } else {
        None
    };
    let pick = |m: InputMode| -> Result<ImageBuffer, CoreError> {
        match m {
            InputMode::Gray => normalize(&gray),
            _ => match &edges {
                Some(e) => normalize(e),
                None => Err(CoreError::config("segmentation.input_mode", "sobel input needs preprocess.sobel")),
            },
        }
    };
    match mode {
        InputMode::Sobel | InputMode::Gray => pick(mode),
        InputMode::GraySobel => {
            let g = pick(InputMode::Gray)?;
            let s = pick(InputMode::Sobel)?;
            let data = g
                .data()
                .iter()
                .zip(s.data())
                .flat_map(|(&a, &b)| [a, b])
                .collect();
            Ok(ImageBuffer::from_parts_unchecked(
                rgb.width(),
                rgb.height(),
                2,
                ValueDomain::Norm,
                data,
            ))
        }
    }
}
