//! Randomized bin-picking scenes: drawing object sets and spawn poses,
//! letting them come to rest, and rendering aligned RGB / depth / mask views.
//!
//! World frame: z up, tray floor at `tray_center[2]`. The camera hangs
//! `camera_height` above the floor looking straight down. Settling and
//! rendering go through provider traits; the box-stacking settler and the
//! footprint rasterizer are deterministic and need no simulator.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::geometry::{self, CameraModel, Point3, Quaternion};
use crate::math;
use crate::raster::{DepthMap, ImageBuffer, InstanceMask, ValueDomain};
use crate::sample::{LightSpec, ObjectPose, SyntheticSample};

/// A rigid box primitive with a name the scene can refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub name: String,
    /// Meters.
    pub half_extents: Point3,
}

/// Sixteen box kinds between 4 cm and 12 cm on a side.
pub fn default_asset_pool() -> Vec<AssetSpec> {
    const SIZES: [[f64; 3]; 16] = [
        [0.020, 0.020, 0.020],
        [0.030, 0.020, 0.015],
        [0.025, 0.025, 0.040],
        [0.045, 0.020, 0.020],
        [0.035, 0.030, 0.020],
        [0.060, 0.025, 0.030],
        [0.040, 0.040, 0.025],
        [0.050, 0.030, 0.015],
        [0.020, 0.050, 0.035],
        [0.030, 0.030, 0.030],
        [0.055, 0.040, 0.020],
        [0.025, 0.035, 0.025],
        [0.040, 0.020, 0.045],
        [0.030, 0.045, 0.020],
        [0.050, 0.050, 0.030],
        [0.020, 0.030, 0.050],
    ];
    SIZES
        .iter()
        .enumerate()
        .map(|(i, &half_extents)| AssetSpec {
            name: alloc::format!("box_{i:02}"),
            half_extents,
        })
        .collect()
}

/// Point-light randomization ranges, `[lo, hi]` each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightRandomization {
    pub azimuth: [f64; 2],
    pub elevation: [f64; 2],
    pub intensity: [f64; 2],
}

impl Default for LightRandomization {
    fn default() -> Self {
        Self {
            azimuth: [0.0, 2.0 * math::PI],
            elevation: [math::PI / 6.0, math::PI / 2.0],
            intensity: [0.7, 1.0],
        }
    }
}

impl LightRandomization {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LightSpec {
        let mut draw = |r: [f64; 2]| r[0] + (r[1] - r[0]) * rng.random::<f64>();
        LightSpec {
            azimuth: draw(self.azimuth),
            elevation: draw(self.elevation),
            intensity: draw(self.intensity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// World position of the tray floor center.
    pub tray_center: Point3,
    pub tray_inner_size: [f64; 2],
    pub spawn_box: Point3,
    /// Gap between the tray floor and the bottom of the spawn box.
    pub spawn_offset_z: f64,
    pub camera_height: f64,
    /// Width of the floor region seen by the camera, in meters.
    pub view_extent: f64,
    pub n_objects_choices: Vec<usize>,
    pub asset_pool: Vec<AssetSpec>,
    pub light: LightRandomization,
    /// `[width, height]` in pixels.
    pub image_size: [usize; 2],
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            tray_center: [0.0, 0.0, 0.0],
            tray_inner_size: [0.4, 0.4],
            spawn_box: [0.4, 0.4, 0.45],
            spawn_offset_z: 0.05,
            camera_height: 0.7,
            view_extent: 0.5,
            n_objects_choices: vec![7, 8, 9, 10, 11],
            asset_pool: default_asset_pool(),
            light: LightRandomization::default(),
            image_size: [256, 256],
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !self.spawn_box.iter().all(|&s| s > 0.0) {
            return Err(CoreError::config("scene.spawn_box", "must be strictly positive"));
        }
        if !self.tray_inner_size.iter().all(|&s| s > 0.0) {
            return Err(CoreError::config("scene.tray_inner_size", "must be strictly positive"));
        }
        if self.n_objects_choices.is_empty() || self.n_objects_choices.contains(&0) {
            return Err(CoreError::config(
                "scene.n_objects_choices",
                "must be non-empty with every entry >= 1",
            ));
        }
        if !(self.camera_height > self.spawn_offset_z + self.spawn_box[2]) {
            return Err(CoreError::config(
                "scene.camera_height",
                "camera must sit above the spawn box",
            ));
        }
        if !(self.view_extent > 0.0) {
            return Err(CoreError::config("scene.view_extent", "must be positive"));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(CoreError::config("scene.image_size", "must be positive"));
        }
        for (i, a) in self.asset_pool.iter().enumerate() {
            if !a.half_extents.iter().all(|&h| h > 0.0) {
                return Err(CoreError::config("scene.asset_pool", alloc::format!("asset `{}` needs positive half extents", a.name)));
            }
            if self.asset_pool[..i].iter().any(|b| b.name == a.name) {
                return Err(CoreError::config("scene.asset_pool", alloc::format!("duplicate asset `{}`", a.name)));
            }
        }
        let l = &self.light;
        if !(l.azimuth[0] <= l.azimuth[1] && l.elevation[0] <= l.elevation[1] && l.intensity[0] <= l.intensity[1]) {
            return Err(CoreError::config("scene.light", "ranges must be ordered [lo, hi]"));
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraModel {
        let [w, h] = self.image_size;
        let focal = w as f64 * self.camera_height / self.view_extent;
        let c = self.tray_center;
        CameraModel::looking_down([c[0], c[1], c[2] + self.camera_height], focal, w, h)
    }

    pub fn asset(&self, name: &str) -> Option<&AssetSpec> {
        self.asset_pool.iter().find(|a| a.name == name)
    }
}

/// Per-sample seed derived from the dataset seed and the sample index
/// (splitmix64 finalizer), so samples can be generated in any order.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDraw {
    pub object_id: u32,
    pub asset_ref: String,
    pub position: Point3,
    #[serde(rename = "quaternion")]
    pub orientation: Quaternion,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub object_draws: Vec<ObjectDraw>,
    pub light: LightSpec,
    pub seed_used: u64,
}

/// Draw a scene: `n` from the configured choices, `n` distinct asset kinds,
/// spawn positions uniform in the spawn box, uniform orientations, a random
/// flat color per object and a light direction.
pub fn sample_scene(config: &SceneConfig, seed: u64) -> Result<SceneSpec, CoreError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_objects_choices[rng.random_range(0..config.n_objects_choices.len())];
    if n > config.asset_pool.len() {
        return Err(CoreError::config(
            "scene.asset_pool",
            alloc::format!("{} asset kinds cannot supply {} distinct objects", config.asset_pool.len(), n),
        ));
    }
    let kinds = index::sample(&mut rng, config.asset_pool.len(), n);
    let (c, s) = (config.tray_center, config.spawn_box);
    let mut object_draws = Vec::with_capacity(n);
    for (i, k) in kinds.iter().enumerate() {
        let position = [
            c[0] + (rng.random::<f64>() - 0.5) * s[0],
            c[1] + (rng.random::<f64>() - 0.5) * s[1],
            c[2] + config.spawn_offset_z + rng.random::<f64>() * s[2],
        ];
        let orientation = Quaternion::from_uniform(rng.random(), rng.random(), rng.random());
        let color = [
            rng.random_range(20..=235u8),
            rng.random_range(20..=235u8),
            rng.random_range(20..=235u8),
        ];
        object_draws.push(ObjectDraw {
            object_id: i as u32 + 1,
            asset_ref: config.asset_pool[k].name.clone(),
            position,
            orientation,
            color,
        });
    }
    let light = config.light.sample(&mut rng);
    Ok(SceneSpec {
        object_draws,
        light,
        seed_used: seed,
    })
}

/// Objects at rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettledScene {
    pub poses: Vec<ObjectPose>,
    pub contact_ok: Vec<bool>,
    pub colors: Vec<[u8; 3]>,
}

pub trait SettlingProvider {
    fn settle(&self, spec: &SceneSpec) -> Result<SettledScene, CoreError>;
}

/// Pixel-aligned views produced by a renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedViews {
    pub rgb: ImageBuffer,
    pub depth: DepthMap,
    pub mask: InstanceMask,
}

pub trait RenderProvider {
    fn render(&self, scene: &SettledScene, camera: &CameraModel, light: &LightSpec) -> Result<RenderedViews, CoreError>;
}

pub fn settle_scene(spec: &SceneSpec, provider: &dyn SettlingProvider) -> Result<SettledScene, CoreError> {
    provider.settle(spec)
}

/// Render a settled scene and assemble the aligned sample.
///
/// Objects with no visible pixel are left out of `poses` so that mask ids
/// and poses stay in one-to-one correspondence; see [`hidden_objects`].
pub fn render_sample(
    settled: &SettledScene,
    camera: &CameraModel,
    light: &LightSpec,
    provider: &dyn RenderProvider,
) -> Result<SyntheticSample, CoreError> {
    let views = provider.render(settled, camera, light)?;
    let visible = views.mask.instance_ids();
    let poses = settled
        .poses
        .iter()
        .filter(|p| visible.binary_search(&p.object_id).is_ok())
        .cloned()
        .collect();
    let cloud = geometry::point_cloud_from_depth(&views.depth, camera)?;
    Ok(SyntheticSample {
        rgb: views.rgb,
        depth: views.depth,
        mask: views.mask,
        cloud,
        poses,
        camera: camera.clone(),
        light: *light,
    })
}

/// Ids of settled objects that do not show up in the sample.
pub fn hidden_objects(settled: &SettledScene, sample: &SyntheticSample) -> Vec<u32> {
    settled
        .poses
        .iter()
        .map(|p| p.object_id)
        .filter(|id| !sample.poses.iter().any(|q| q.object_id == *id))
        .collect()
}

fn lookup<'a>(assets: &'a [AssetSpec], name: &str) -> Result<&'a AssetSpec, CoreError> {
    assets
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| CoreError::Render(alloc::format!("unknown asset `{name}`")))
}

/// Drops each box straight down, in order of spawn height, until it rests on
/// the floor or on the highest already-settled box whose footprint overlaps
/// its own. Boxes keep an axis-aligned orientation.
#[derive(Debug, Clone)]
pub struct BoxStackingSettler {
    assets: Vec<AssetSpec>,
    floor_z: f64,
}

impl BoxStackingSettler {
    pub fn new(assets: Vec<AssetSpec>, floor_z: f64) -> Self {
        Self { assets, floor_z }
    }

    pub fn from_config(config: &SceneConfig) -> Self {
        Self::new(config.asset_pool.clone(), config.tray_center[2])
    }
}

/// Axis-aligned footprints overlap with positive area.
fn footprints_overlap(a: (Point3, Point3), b: (Point3, Point3)) -> bool {
    let (ca, ha) = a;
    let (cb, hb) = b;
    (ca[0] - cb[0]).abs() < ha[0] + hb[0] && (ca[1] - cb[1]).abs() < ha[1] + hb[1]
}

impl SettlingProvider for BoxStackingSettler {
    fn settle(&self, spec: &SceneSpec) -> Result<SettledScene, CoreError> {
        let mut order: Vec<usize> = (0..spec.object_draws.len()).collect();
        order.sort_by(|&a, &b| {
            let (da, db) = (&spec.object_draws[a], &spec.object_draws[b]);
            da.position[2]
                .partial_cmp(&db.position[2])
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(da.object_id.cmp(&db.object_id))
        });
        let mut rest: Vec<Option<(Point3, Point3)>> = vec![None; spec.object_draws.len()];
        let mut partial = Vec::new();
        for &i in &order {
            let d = &spec.object_draws[i];
            let h = match self.assets.iter().find(|a| a.name == d.asset_ref) {
                Some(a) => a.half_extents,
                None => {
                    return Err(CoreError::Settling {
                        reason: alloc::format!("unknown asset `{}`", d.asset_ref),
                        partial,
                    })
                }
            };
            let mut bottom = self.floor_z;
            for (c, hh) in rest.iter().flatten() {
                if footprints_overlap((d.position, h), (*c, *hh)) {
                    bottom = bottom.max(c[2] + hh[2]);
                }
            }
            let center = [d.position[0], d.position[1], bottom + h[2]];
            rest[i] = Some((center, h));
            partial.push(ObjectPose {
                object_id: d.object_id,
                asset_ref: d.asset_ref.clone(),
                position: center,
                orientation: Quaternion::IDENTITY,
            });
        }
        let mut poses = Vec::with_capacity(spec.object_draws.len());
        for (i, d) in spec.object_draws.iter().enumerate() {
            let (c, _) = rest[i].expect("every object settled");
            poses.push(ObjectPose {
                object_id: d.object_id,
                asset_ref: d.asset_ref.clone(),
                position: c,
                orientation: Quaternion::IDENTITY,
            });
        }
        Ok(SettledScene {
            contact_ok: vec![true; poses.len()],
            colors: spec.object_draws.iter().map(|d| d.color).collect(),
            poses,
        })
    }
}

fn shade(color: [u8; 3], factor: f64) -> [f32; 3] {
    color.map(|c| math::round((c as f64 * factor).clamp(0.0, 255.0)) as f32)
}

/// Flat-shaded top-down rasterizer for axis-aligned boxes.
///
/// Each pixel ray is tested against the top face of every box; the highest
/// face hit wins. Depth is `camera height - top face height`, 0 where no
/// object is hit. Top faces are lit by `intensity * (ambient + (1 - ambient)
/// * sin(elevation))`.
#[derive(Debug, Clone)]
pub struct FallbackRenderer {
    assets: Vec<AssetSpec>,
    pub background: [u8; 3],
    pub ambient: f64,
}

impl FallbackRenderer {
    pub fn new(assets: Vec<AssetSpec>) -> Self {
        Self {
            assets,
            background: [180, 170, 150],
            ambient: 0.35,
        }
    }
}

impl RenderProvider for FallbackRenderer {
    fn render(&self, scene: &SettledScene, camera: &CameraModel, light: &LightSpec) -> Result<RenderedViews, CoreError> {
        let (w, h) = (camera.width, camera.height);
        let factor = light.intensity * (self.ambient + (1.0 - self.ambient) * math::sin(light.elevation).max(0.0));
        let mut faces = Vec::with_capacity(scene.poses.len());
        for (i, p) in scene.poses.iter().enumerate() {
            let a = lookup(&self.assets, &p.asset_ref)?;
            let top = p.position[2] + a.half_extents[2];
            let depth = camera.position[2] - top;
            faces.push((p.object_id, p.position, a.half_extents, depth, scene.colors.get(i).copied().unwrap_or([128; 3])));
        }
        let bg = shade(self.background, factor);
        let mut rgb = Vec::with_capacity(w * h * 3);
        let mut depth = vec![0.0; w * h];
        let mut ids = vec![0u32; w * h];
        for v in 0..h {
            for u in 0..w {
                let ray = camera.pixel_ray(u as f64, v as f64);
                let mut best: Option<(f64, u32, [u8; 3])> = None;
                for &(id, c, he, d, color) in &faces {
                    if d <= 0.0 {
                        continue;
                    }
                    let hit = camera.camera_to_world(geometry::scale(ray, d));
                    if (hit[0] - c[0]).abs() <= he[0] && (hit[1] - c[1]).abs() <= he[1] {
                        let better = match best {
                            None => true,
                            Some((bd, bid, _)) => d < bd || (d == bd && id < bid),
                        };
                        if better {
                            best = Some((d, id, color));
                        }
                    }
                }
                let idx = v * w + u;
                match best {
                    Some((d, id, color)) => {
                        depth[idx] = d;
                        ids[idx] = id;
                        rgb.extend(shade(color, factor));
                    }
                    None => rgb.extend(bg),
                }
            }
        }
        Ok(RenderedViews {
            rgb: ImageBuffer::from_parts_unchecked(w, h, 3, ValueDomain::U8, rgb),
            depth: DepthMap::new(w, h, depth)?,
            mask: InstanceMask::new(w, h, ids)?,
        })
    }
}

/// Ray-cast renderer for arbitrarily oriented boxes with Lambertian shading
/// from a point light placed `light_distance` from the tray center along the
/// light direction.
#[derive(Debug, Clone)]
pub struct RaycastRenderer {
    assets: Vec<AssetSpec>,
    pub floor_z: f64,
    pub target: Point3,
    pub background: [u8; 3],
    pub ambient: f64,
    pub light_distance: f64,
}

impl RaycastRenderer {
    pub fn from_config(config: &SceneConfig) -> Self {
        Self {
            assets: config.asset_pool.clone(),
            floor_z: config.tray_center[2],
            target: config.tray_center,
            background: [180, 170, 150],
            ambient: 0.3,
            light_distance: 1.0,
        }
    }
}

/// Entry distance and local-frame normal of a ray hitting an origin-centered box.
fn ray_box(origin: Point3, dir: Point3, half: Point3) -> Option<(f64, Point3)> {
    let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut normal = [0.0; 3];
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if origin[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let t1 = (-half[k] - origin[k]) / dir[k];
        let t2 = (half[k] - origin[k]) / dir[k];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_near {
            t_near = lo;
            normal = [0.0; 3];
            normal[k] = if dir[k] > 0.0 { -1.0 } else { 1.0 };
        }
        t_far = t_far.min(hi);
    }
    (t_near <= t_far && t_near > 0.0).then_some((t_near, normal))
}

impl RenderProvider for RaycastRenderer {
    fn render(&self, scene: &SettledScene, camera: &CameraModel, light: &LightSpec) -> Result<RenderedViews, CoreError> {
        let (w, h) = (camera.width, camera.height);
        let light_pos = geometry::add(
            self.target,
            geometry::scale(
                [
                    math::cos(light.elevation) * math::cos(light.azimuth),
                    math::cos(light.elevation) * math::sin(light.azimuth),
                    math::sin(light.elevation),
                ],
                self.light_distance,
            ),
        );
        let mut boxes = Vec::with_capacity(scene.poses.len());
        for (i, p) in scene.poses.iter().enumerate() {
            let a = lookup(&self.assets, &p.asset_ref)?;
            boxes.push((p.object_id, p.position, p.orientation, a.half_extents, scene.colors.get(i).copied().unwrap_or([128; 3])));
        }
        let lit = |color: [u8; 3], hit: Point3, n: Point3| {
            let l = geometry::normalize(geometry::sub(light_pos, hit));
            let lambert = geometry::dot(n, l).max(0.0);
            shade(color, light.intensity * (self.ambient + (1.0 - self.ambient) * lambert))
        };
        let mut rgb = Vec::with_capacity(w * h * 3);
        let mut depth = vec![0.0; w * h];
        let mut ids = vec![0u32; w * h];
        for v in 0..h {
            for u in 0..w {
                let dir = camera.orientation.rotate(camera.pixel_ray(u as f64, v as f64));
                let mut best: Option<(f64, u32, Point3, [u8; 3])> = None;
                for &(id, c, q, he, color) in &boxes {
                    let inv = q.conjugate();
                    let o = inv.rotate(geometry::sub(camera.position, c));
                    let d = inv.rotate(dir);
                    if let Some((t, n)) = ray_box(o, d, he) {
                        if best.map_or(true, |(bt, bid, _, _)| t < bt || (t == bt && id < bid)) {
                            best = Some((t, id, q.rotate(n), color));
                        }
                    }
                }
                let idx = v * w + u;
                match best {
                    Some((t, id, n, color)) => {
                        depth[idx] = t;
                        ids[idx] = id;
                        let hit = geometry::add(camera.position, geometry::scale(dir, t));
                        rgb.extend(lit(color, hit, n));
                    }
                    None => {
                        let t = if dir[2] < 0.0 { (self.floor_z - camera.position[2]) / dir[2] } else { 0.0 };
                        let hit = geometry::add(camera.position, geometry::scale(dir, t));
                        rgb.extend(lit(self.background, hit, [0.0, 0.0, 1.0]));
                    }
                }
            }
        }
        Ok(RenderedViews {
            rgb: ImageBuffer::from_parts_unchecked(w, h, 3, ValueDomain::U8, rgb),
            depth: DepthMap::new(w, h, depth)?,
            mask: InstanceMask::new(w, h, ids)?,
        })
    }
}
