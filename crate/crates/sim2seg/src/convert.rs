//! Conversions between interleaved image buffers and planar tensors.

use sim2seg_core::imaging::normalize;
use sim2seg_core::{ImageBuffer, ValueDomain};

use crate::error::Result;
use crate::nn::Tensor;

/// One-item `[1, C, H, W]` tensor in the normalized domain; U8 input is normalized first.
pub fn image_to_tensor(img: &ImageBuffer) -> Result<Tensor> {
    let norm;
    let img = match img.domain() {
        ValueDomain::Norm => img,
        ValueDomain::U8 => {
            norm = normalize(img)?;
            &norm
        }
    };
    Ok(Tensor::from_vec([1, img.channels(), img.height(), img.width()], img.to_planar()))
}

/// Batch item `i` as a normalized image, clamped to `[-1, 1]`.
pub fn tensor_to_image(t: &Tensor, i: usize) -> Result<ImageBuffer> {
    let planar: Vec<f32> = t.item_slice(i).iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Ok(ImageBuffer::from_planar(t.w(), t.h(), t.c(), ValueDomain::Norm, &planar)?)
}
