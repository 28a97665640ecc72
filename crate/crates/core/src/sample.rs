//! Synthetic samples, domain datasets and sample validation.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, Point3, Quaternion};
use crate::raster::{DepthMap, ImageBuffer, InstanceMask};

/// Sensor corruption attached to a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseProfile {
    pub label: String,
    /// Additive Gaussian noise, in intensity units of a U8 image.
    pub gaussian_sigma: f64,
    pub salt_pepper_prob: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            label: "sim-clean".into(),
            gaussian_sigma: 0.0,
            salt_pepper_prob: 0.0,
        }
    }
}

impl NoiseProfile {
    pub fn is_valid(&self) -> bool {
        self.gaussian_sigma >= 0.0 && (0.0..=1.0).contains(&self.salt_pepper_prob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPose {
    pub object_id: u32,
    pub asset_ref: String,
    pub position: Point3,
    #[serde(rename = "quaternion")]
    pub orientation: Quaternion,
}

/// Point light direction and strength for one rendered sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    /// Radians, counter-clockwise from world +x.
    pub azimuth: f64,
    /// Radians above the tray plane.
    pub elevation: f64,
    pub intensity: f64,
}

/// One pixel-aligned group of synthetic modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub rgb: ImageBuffer,
    pub depth: DepthMap,
    pub mask: InstanceMask,
    /// Camera-frame points in meters.
    pub cloud: Vec<Point3>,
    pub poses: Vec<ObjectPose>,
    pub camera: CameraModel,
    pub light: LightSpec,
}

/// A violated [`SyntheticSample`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RasterSizeMismatch,
    RgbChannels(usize),
    OrphanMaskId(u32),
    OrphanPose(u32),
    DuplicatePoseId(u32),
    InvalidPoseId,
    NegativeDepth,
    NonUnitQuaternion(u32),
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Violation::RasterSizeMismatch => "raster size mismatch",
            Violation::RgbChannels(_) => "rgb channel count",
            Violation::OrphanMaskId(_) => "orphan mask id",
            Violation::OrphanPose(_) => "orphan pose",
            Violation::DuplicatePoseId(_) => "duplicate pose id",
            Violation::InvalidPoseId => "invalid pose id",
            Violation::NegativeDepth => "negative depth",
            Violation::NonUnitQuaternion(_) => "non-unit quaternion",
        }
    }
}

/// Every violated invariant of `sample`; empty when the sample is consistent.
pub fn validate_sample(sample: &SyntheticSample) -> Vec<Violation> {
    let mut out = Vec::new();
    let (w, h) = (sample.rgb.width(), sample.rgb.height());
    if sample.rgb.channels() != 3 {
        out.push(Violation::RgbChannels(sample.rgb.channels()));
    }
    if (sample.mask.width(), sample.mask.height()) != (w, h)
        || (sample.depth.width(), sample.depth.height()) != (w, h)
        || (sample.camera.width, sample.camera.height) != (w, h)
    {
        out.push(Violation::RasterSizeMismatch);
    }
    if sample.depth.data().iter().any(|&d| !(d >= 0.0)) {
        out.push(Violation::NegativeDepth);
    }

    let mut pose_ids = BTreeSet::new();
    for pose in &sample.poses {
        if pose.object_id == 0 {
            out.push(Violation::InvalidPoseId);
            continue;
        }
        if !pose_ids.insert(pose.object_id) {
            out.push(Violation::DuplicatePoseId(pose.object_id));
        }
        if !pose.orientation.is_unit() {
            out.push(Violation::NonUnitQuaternion(pose.object_id));
        }
    }
    let mask_ids: BTreeSet<u32> = sample.mask.instance_ids().into_iter().collect();
    for id in mask_ids.difference(&pose_ids) {
        out.push(Violation::OrphanMaskId(*id));
    }
    for id in pose_ids.difference(&mask_ids) {
        out.push(Violation::OrphanPose(*id));
    }
    out
}

/// Which side of the reality gap a dataset lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Real,
    Synth,
    Translated,
}

/// One image of a domain dataset, with its label mask when available.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainItem {
    pub name: String,
    pub rgb: ImageBuffer,
    pub mask: Option<InstanceMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub tag: DomainTag,
    pub items: Vec<DomainItem>,
    pub noise: NoiseProfile,
    pub camera: Option<CameraModel>,
}

impl DomainDataset {
    pub fn new(tag: DomainTag) -> Self {
        Self {
            tag,
            items: Vec::new(),
            noise: NoiseProfile::default(),
            camera: None,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Synthetic datasets must carry a mask for every sample.
    pub fn check_labels(&self) -> Result<(), crate::CoreError> {
        if self.tag == DomainTag::Synth {
            if let Some(item) = self.items.iter().find(|i| i.mask.is_none()) {
                return Err(crate::CoreError::Data(alloc::format!(
                    "synthetic sample `{}` has no mask",
                    item.name
                )));
            }
        }
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageBuffer> {
        self.items.iter().map(|i| &i.rgb)
    }
}
