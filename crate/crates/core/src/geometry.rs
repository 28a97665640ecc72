//! Pinhole camera geometry and rigid rotations.
//!
//! Camera frame: +z forward along the optical axis, +x right, +y down.
//! Pixel `(u, v)` has its center at image coordinates `(u, v)`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::math;
use crate::raster::DepthMap;

pub type Point3 = [f64; 3];

pub const QUATERNION_TOLERANCE: f64 = 1e-6;

/// Rotation quaternion, serialized as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quaternion {
    fn from(q: [f64; 4]) -> Self {
        Self {
            w: q[0],
            x: q[1],
            y: q[2],
            z: q[3],
        }
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn norm(&self) -> f64 {
        math::sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
    }

    pub fn is_unit(&self) -> bool {
        let n = self.norm();
        n.is_finite() && (n - 1.0).abs() <= QUATERNION_TOLERANCE
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Uniform random rotation from three uniform `[0, 1)` variates
    /// (Shoemake's subgroup algorithm).
    pub fn from_uniform(u1: f64, u2: f64, u3: f64) -> Self {
        let a = math::sqrt(1.0 - u1);
        let b = math::sqrt(u1);
        let t2 = 2.0 * math::PI * u2;
        let t3 = 2.0 * math::PI * u3;
        Self {
            w: b * math::cos(t3),
            x: a * math::sin(t2),
            y: a * math::cos(t2),
            z: b * math::sin(t3),
        }
        .normalized()
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: Point3, angle: f64) -> Self {
        let s = math::sin(angle / 2.0);
        Self {
            w: math::cos(angle / 2.0),
            x: axis[0] * s,
            y: axis[1] * s,
            z: axis[2] * s,
        }
        .normalized()
    }

    pub fn rotate(&self, v: Point3) -> Point3 {
        // v' = v + 2w(q × v) + 2 q × (q × v)
        let q = [self.x, self.y, self.z];
        let t = scale(cross(q, v), 2.0);
        add(add(v, scale(t, self.w)), cross(q, t))
    }

    /// Columns are the rotated basis vectors.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let ex = self.rotate([1.0, 0.0, 0.0]);
        let ey = self.rotate([0.0, 1.0, 0.0]);
        let ez = self.rotate([0.0, 0.0, 1.0]);
        [
            [ex[0], ey[0], ez[0]],
            [ex[1], ey[1], ez[1]],
            [ex[2], ey[2], ez[2]],
        ]
    }
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn normalize(a: Point3) -> Point3 {
    let n = math::sqrt(dot(a, a));
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

/// Pinhole intrinsics plus the camera pose in the world frame.
///
/// `orientation` rotates camera-frame vectors into the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub position: Point3,
    pub orientation: Quaternion,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    /// Camera at `position` looking straight down (-z in the world) with
    /// image +x along world +x and image +y along world -y.
    pub fn looking_down(position: Point3, focal: f64, width: usize, height: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            position,
            orientation: Quaternion {
                w: 0.0,
                x: 1.0,
                y: 0.0,
                z: 0.0,
            },
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CoreError::config("camera.fx/fy", "focal lengths must be positive"));
        }
        if !self.orientation.is_unit() {
            return Err(CoreError::config("camera.orientation", "quaternion must have unit norm"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CoreError::config("camera.image_size", "must be positive"));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: Point3) -> Point3 {
        self.orientation.conjugate().rotate(sub(p, self.position))
    }

    pub fn camera_to_world(&self, p: Point3) -> Point3 {
        add(self.orientation.rotate(p), self.position)
    }

    /// Unnormalized camera-frame ray through pixel `(u, v)` with z = 1.
    #[inline]
    pub fn pixel_ray(&self, u: f64, v: f64) -> Point3 {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    /// Projection of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: Point3) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ))
    }
}

/// Back-project every positive-depth pixel into the camera frame.
pub fn point_cloud_from_depth(depth: &DepthMap, camera: &CameraModel) -> Result<Vec<Point3>, CoreError> {
    if depth.width() != camera.width || depth.height() != camera.height {
        return Err(CoreError::dims(
            (camera.width, camera.height),
            (depth.width(), depth.height()),
        ));
    }
    let mut cloud = Vec::new();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            let d = depth.get(u, v);
            if d > 0.0 {
                cloud.push([
                    d * (u as f64 - camera.cx) / camera.fx,
                    d * (v as f64 - camera.cy) / camera.fy,
                    d,
                ]);
            }
        }
    }
    Ok(cloud)
}

/// Z-buffer camera-frame points into a depth raster; nearest point wins.
pub fn project_cloud(cloud: &[Point3], camera: &CameraModel) -> DepthMap {
    let mut depth = DepthMap::zeros(camera.width, camera.height);
    for &p in cloud {
        let Some((u, v)) = camera.project(p) else {
            continue;
        };
        let (u, v) = (math::round(u), math::round(v));
        if u < 0.0 || v < 0.0 || u >= camera.width as f64 || v >= camera.height as f64 {
            continue;
        }
        let idx = v as usize * camera.width + u as usize;
        let cell = &mut depth.data_mut()[idx];
        if *cell == 0.0 || p[2] < *cell {
            *cell = p[2];
        }
    }
    depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn cam(fx: f64, cx: f64, w: usize, h: usize) -> CameraModel {
        CameraModel {
            fx,
            fy: fx,
            cx,
            cy: cx,
            position: [0.0; 3],
            orientation: Quaternion::IDENTITY,
            width: w,
            height: h,
        }
    }

    #[test]
    fn principal_point_ray() {
        let c = cam(100.0, 2.0, 5, 5);
        let mut d = DepthMap::zeros(5, 5);
        d.data_mut()[2 * 5 + 2] = 1.0;
        assert_eq!(point_cloud_from_depth(&d, &c).unwrap(), vec![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn zero_depth_gives_empty_cloud() {
        let c = cam(100.0, 2.0, 5, 5);
        assert!(point_cloud_from_depth(&DepthMap::zeros(5, 5), &c).unwrap().is_empty());
    }

    #[test]
    fn hand_evaluated_pinhole() {
        // fx = fy = 100, cx = cy = 50, pixel (150, 50), d = 2 -> (2, 0, 2)
        let c = cam(100.0, 50.0, 200, 100);
        let mut d = DepthMap::zeros(200, 100);
        d.data_mut()[50 * 200 + 150] = 2.0;
        assert_eq!(point_cloud_from_depth(&d, &c).unwrap(), vec![[2.0, 0.0, 2.0]]);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let c = cam(100.0, 2.0, 5, 5);
        assert!(matches!(
            point_cloud_from_depth(&DepthMap::zeros(4, 5), &c),
            Err(CoreError::Dimension { .. })
        ));
    }

    #[test]
    fn projection_single_point_and_nearest_wins() {
        let c = cam(100.0, 2.0, 5, 5);
        let d = project_cloud(&[[0.0, 0.0, 1.0]], &c);
        assert_eq!(d.get(2, 2), 1.0);
        let d = project_cloud(&[[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]], &c);
        assert_eq!(d.get(2, 2), 1.0);
        let d = project_cloud(&[[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]], &c);
        assert_eq!(d.get(2, 2), 1.0);
        assert_eq!(d.data().iter().filter(|&&z| z > 0.0).count(), 1);
    }

    #[test]
    fn looking_down_maps_depth_to_height() {
        let c = CameraModel::looking_down([0.1, 0.2, 0.7], 300.0, 64, 64);
        let p = c.world_to_camera([0.1, 0.2, 0.2]);
        assert!((p[0]).abs() < 1e-12 && (p[1]).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
        // world +x is image right, world +y is image up
        let p = c.world_to_camera([0.2, 0.3, 0.0]);
        assert!(p[0] > 0.0 && p[1] < 0.0);
        let back = c.camera_to_world(p);
        assert!((back[0] - 0.2).abs() < 1e-12 && (back[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn shoemake_quaternions_are_unit() {
        for i in 0..50 {
            let u = (i as f64 + 0.3) / 50.0;
            let q = Quaternion::from_uniform(u, 1.0 - u, (u * 7.0) % 1.0);
            assert!(q.is_unit());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn back_projection_round_trip(
            depths in proptest::collection::vec(prop_oneof![Just(0.0f64), 0.05f64..5.0], 24 * 16),
            fx in 20.0f64..400.0,
        ) {
            let c = CameraModel { fx, fy: fx * 1.1, cx: 11.5, cy: 7.5, position: [0.0; 3],
                orientation: Quaternion::IDENTITY, width: 24, height: 16 };
            let d = DepthMap::new(24, 16, depths).unwrap();
            let cloud = point_cloud_from_depth(&d, &c).unwrap();
            let back = project_cloud(&cloud, &c);
            for (a, b) in d.data().iter().zip(back.data()) {
                if *a > 0.0 {
                    prop_assert!((a - b).abs() < 1e-4);
                } else {
                    prop_assert_eq!(*b, 0.0);
                }
            }
        }

        #[test]
        fn rotation_preserves_length(u1 in 0.0f64..1.0, u2 in 0.0f64..1.0, u3 in 0.0f64..1.0,
                                     v in proptest::array::uniform3(-5.0f64..5.0)) {
            let q = Quaternion::from_uniform(u1, u2, u3);
            prop_assert!(q.is_unit());
            let r = q.rotate(v);
            prop_assert!((dot(r, r) - dot(v, v)).abs() < 1e-9);
            let back = q.conjugate().rotate(r);
            for i in 0..3 { prop_assert!((back[i] - v[i]).abs() < 1e-9); }
        }
    }
}
