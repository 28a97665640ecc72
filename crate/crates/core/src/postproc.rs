//! Instance extraction from a generated grayscale mask: threshold, exact
//! Euclidean distance transform, marker selection and watershed flooding.

use alloc::collections::{BinaryHeap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::raster::{BinaryMap, ImageBuffer, InstanceMask, ValueDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostprocMode {
    Watershed,
    ConnectedComponents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocSpec {
    pub binarize_threshold: u8,
    /// Minimum separation of two markers inside one connected component.
    pub marker_min_distance: f64,
    /// Instances smaller than this are dropped; 0 keeps everything.
    pub min_instance_area: usize,
    pub mode: PostprocMode,
}

impl Default for PostprocSpec {
    fn default() -> Self {
        Self {
            binarize_threshold: 32,
            marker_min_distance: 9.0,
            min_instance_area: 50,
            mode: PostprocMode::Watershed,
        }
    }
}

impl PostprocSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.marker_min_distance >= 1.0) {
            return Err(CoreError::config("postproc.marker_min_distance", "must be >= 1"));
        }
        Ok(())
    }
}

/// `pixel >= threshold` is foreground.
pub fn binarize(gray: &ImageBuffer, threshold: u8) -> Result<BinaryMap, CoreError> {
    if gray.channels() != 1 {
        return Err(CoreError::Shape("binarize needs a single channel".into()));
    }
    let t = threshold as f32;
    let bits = match gray.domain() {
        ValueDomain::U8 => gray.data().iter().map(|&v| v >= t).collect(),
        ValueDomain::Norm => gray
            .data()
            .iter()
            .map(|&v| crate::imaging::denormalize_value(v) >= t)
            .collect(),
    };
    BinaryMap::new(gray.width(), gray.height(), bits)
}

/// 4-connected labeling; ids follow the raster order of each component's
/// first pixel.
pub fn connected_components(binary: &BinaryMap) -> InstanceMask {
    let (w, h) = (binary.width(), binary.height());
    let mut ids = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !binary.bits()[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbors4(p, w, h) {
                if binary.bits()[q] && ids[q] == 0 {
                    ids[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    InstanceMask::new(w, h, ids).expect("length matches")
}

fn neighbors4(p: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % w, p / w);
    let mut out = [usize::MAX; 4];
    if y > 0 {
        out[0] = p - w;
    }
    if x > 0 {
        out[1] = p - 1;
    }
    if x + 1 < w {
        out[2] = p + 1;
    }
    if y + 1 < h {
        out[3] = p + w;
    }
    out.into_iter().filter(|&q| q != usize::MAX)
}

fn neighbors8(p: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = ((p % w) as isize, (p / w) as isize);
    (-1isize..=1)
        .flat_map(move |dy| (-1isize..=1).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx != 0 || dy != 0)
        .filter_map(move |(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize)
                .then(|| ny as usize * w + nx as usize)
        })
}

const EDT_INF: f64 = 1e20;

/// One-dimensional squared distance transform of sampled function `f`
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -EDT_INF;
    z[1] = EDT_INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else if s <= z[k] {
                // k == 0 and the new parabola dominates from -inf
                v[0] = q;
                z[0] = -EDT_INF;
                z[1] = EDT_INF;
                break;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = EDT_INF;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every foreground pixel to the
/// nearest background pixel; pixels outside the image count as background.
pub fn squared_distance_transform(binary: &BinaryMap) -> Vec<f64> {
    let (w, h) = (binary.width(), binary.height());
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if binary.get(x, y) {
                grid[(y + 1) * pw + x + 1] = EDT_INF;
            }
        }
    }
    let n = pw.max(ph);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        edt_1d(&f[..ph], &mut out[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    for y in 0..ph {
        f[..pw].copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        edt_1d(&f[..pw], &mut out[..pw], &mut v, &mut z);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&out[..pw]);
    }
    let mut result = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            result[y * w + x] = grid[(y + 1) * pw + x + 1];
        }
    }
    result
}

/// Euclidean distance transform (see [`squared_distance_transform`]).
pub fn distance_transform(binary: &BinaryMap) -> Vec<f64> {
    squared_distance_transform(binary)
        .into_iter()
        .map(crate::math::sqrt)
        .collect()
}

/// A marker: a regional-maximum plateau of the distance map.
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    /// First plateau pixel in raster order.
    pub seed: usize,
    pub pixels: Vec<usize>,
    pub squared_distance: f64,
}

/// Regional maxima of the distance map, one per plateau, suppressed so that
/// markers within one component are at least `min_distance` apart. Returns
/// markers sorted by decreasing distance, ties by raster index.
pub fn find_markers(binary: &BinaryMap, sq_dist: &[f64], components: &InstanceMask, min_distance: f64) -> Vec<Marker> {
    let (w, h) = (binary.width(), binary.height());
    let cc = components.ids();
    let mut visited = vec![false; w * h];
    let mut plateaus = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !binary.bits()[start] || visited[start] {
            continue;
        }
        let d = sq_dist[start];
        let mut pixels = Vec::new();
        let mut is_max = true;
        visited[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            pixels.push(p);
            for q in neighbors8(p, w, h) {
                if cc[q] != cc[start] {
                    continue;
                }
                if sq_dist[q] > d {
                    is_max = false;
                } else if sq_dist[q] == d && !visited[q] {
                    visited[q] = true;
                    stack.push(q);
                }
            }
        }
        if is_max {
            pixels.sort_unstable();
            plateaus.push(Marker {
                seed: pixels[0],
                pixels,
                squared_distance: d,
            });
        }
    }
    plateaus.sort_by(|a, b| {
        b.squared_distance
            .partial_cmp(&a.squared_distance)
            .unwrap_or(Ordering::Equal)
            .then(a.seed.cmp(&b.seed))
    });
    let min_sq = min_distance * min_distance;
    let mut accepted: Vec<Marker> = Vec::new();
    for m in plateaus {
        let (mx, my) = ((m.seed % w) as f64, (m.seed / w) as f64);
        let clash = accepted.iter().any(|a| {
            if cc[a.seed] != cc[m.seed] {
                return false;
            }
            let (ax, ay) = ((a.seed % w) as f64, (a.seed / w) as f64);
            (ax - mx) * (ax - mx) + (ay - my) * (ay - my) < min_sq
        });
        if !clash {
            accepted.push(m);
        }
    }
    accepted
}

#[derive(PartialEq)]
struct FloodEntry {
    sq_dist: f64,
    pixel: usize,
    seq: u64,
    label: u32,
}

impl Eq for FloodEntry {}

impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: larger distance first, then smaller raster index, then FIFO
        self.sq_dist
            .partial_cmp(&other.sq_dist)
            .unwrap_or(Ordering::Equal)
            .then(other.pixel.cmp(&self.pixel))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Marker-controlled watershed of the negated distance map over the
/// foreground of `binary`, 4-connected.
pub fn watershed_binary(binary: &BinaryMap, spec: &PostprocSpec) -> Result<InstanceMask, CoreError> {
    spec.validate()?;
    let (w, h) = (binary.width(), binary.height());
    let components = connected_components(binary);
    let sq = squared_distance_transform(binary);
    let markers = find_markers(binary, &sq, &components, spec.marker_min_distance);

    let mut labels = vec![0u32; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, m) in markers.iter().enumerate() {
        for &p in &m.pixels {
            labels[p] = i as u32 + 1;
        }
    }
    for p in 0..w * h {
        if labels[p] == 0 {
            continue;
        }
        for q in neighbors4(p, w, h) {
            if binary.bits()[q] && labels[q] == 0 {
                heap.push(FloodEntry {
                    sq_dist: sq[q],
                    pixel: q,
                    seq,
                    label: labels[p],
                });
                seq += 1;
            }
        }
    }
    while let Some(e) = heap.pop() {
        if labels[e.pixel] != 0 {
            continue;
        }
        labels[e.pixel] = e.label;
        for q in neighbors4(e.pixel, w, h) {
            if binary.bits()[q] && labels[q] == 0 {
                heap.push(FloodEntry {
                    sq_dist: sq[q],
                    pixel: q,
                    seq,
                    label: e.label,
                });
                seq += 1;
            }
        }
    }
    let mask = InstanceMask::new(w, h, labels)?;
    Ok(filter_and_relabel(&mask, spec.min_instance_area))
}

/// Drop instances below `min_area` and renumber the rest 1..K in raster
/// order of their first pixel.
pub fn filter_and_relabel(mask: &InstanceMask, min_area: usize) -> InstanceMask {
    let max_id = mask.ids().iter().copied().max().unwrap_or(0) as usize;
    let mut area = vec![0usize; max_id + 1];
    for &id in mask.ids() {
        area[id as usize] += 1;
    }
    let mut map = vec![0u32; max_id + 1];
    let mut next = 0u32;
    let ids = mask
        .ids()
        .iter()
        .map(|&id| {
            if id == 0 || area[id as usize] < min_area {
                return 0;
            }
            if map[id as usize] == 0 {
                next += 1;
                map[id as usize] = next;
            }
            map[id as usize]
        })
        .collect();
    InstanceMask::new(mask.width(), mask.height(), ids).expect("length matches")
}

/// Threshold a generated grayscale mask and split it into instances.
pub fn watershed_instances(gray: &ImageBuffer, spec: &PostprocSpec) -> Result<InstanceMask, CoreError> {
    let binary = binarize(gray, spec.binarize_threshold)?;
    match spec.mode {
        PostprocMode::Watershed => watershed_binary(&binary, spec),
        PostprocMode::ConnectedComponents => {
            spec.validate()?;
            Ok(filter_and_relabel(&connected_components(&binary), spec.min_instance_area))
        }
    }
}

/// Color-coded RGB view of an instance mask; background stays black.
pub fn colorize(mask: &InstanceMask) -> ImageBuffer {
    let mut data = Vec::with_capacity(mask.ids().len() * 3);
    for &id in mask.ids() {
        if id == 0 {
            data.extend([0.0, 0.0, 0.0]);
        } else {
            let hsh = (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let c = |s: u32| (64 + ((hsh >> s) & 0xFF) % 192) as f32;
            data.extend([c(8), c(24), c(40)]);
        }
    }
    ImageBuffer::from_parts_unchecked(mask.width(), mask.height(), 3, ValueDomain::U8, data)
}
