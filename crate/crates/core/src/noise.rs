//! Sensor corruptions described by a [`NoiseProfile`].

use rand::Rng;

use crate::math;
use crate::raster::{ImageBuffer, ValueDomain};
use crate::sample::NoiseProfile;

/// One standard normal variate (Box–Muller).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * math::PI * u2)
}

/// Additive Gaussian noise followed by salt-and-pepper on a U8 image.
/// Salt-and-pepper acts per pixel on all channels at once.
pub fn apply_noise<R: Rng + ?Sized>(img: &ImageBuffer, profile: &NoiseProfile, rng: &mut R) -> ImageBuffer {
    if img.domain() != ValueDomain::U8 {
        return img.clone();
    }
    let ch = img.channels();
    let mut data = img.data().to_vec();
    if profile.gaussian_sigma > 0.0 {
        for v in data.iter_mut() {
            let n = standard_normal(rng) * profile.gaussian_sigma;
            *v = math::round(*v as f64 + n).clamp(0.0, 255.0) as f32;
        }
    }
    if profile.salt_pepper_prob > 0.0 {
        for px in data.chunks_mut(ch) {
            if rng.random::<f64>() < profile.salt_pepper_prob {
                let v = if rng.random::<bool>() { 255.0 } else { 0.0 };
                px.iter_mut().for_each(|c| *c = v);
            }
        }
    }
    ImageBuffer::from_parts_unchecked(img.width(), img.height(), ch, ValueDomain::U8, data)
}
