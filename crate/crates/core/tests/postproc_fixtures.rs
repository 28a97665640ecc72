use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sim2seg_core::postproc::{connected_components, watershed_instances, PostprocSpec};
use sim2seg_core::ImageBuffer;

fn gray(w: usize, h: usize, inside: impl Fn(f64, f64) -> bool) -> ImageBuffer {
    let px: Vec<u8> = (0..w * h)
        .map(|i| if inside((i % w) as f64, (i / w) as f64) { 255 } else { 0 })
        .collect();
    ImageBuffer::from_u8(w, h, 1, &px).unwrap()
}

fn no_filter() -> PostprocSpec {
    PostprocSpec {
        min_instance_area: 0,
        ..PostprocSpec::default()
    }
}

/// Discs of radius 3..8 centered in their own 20 x 20 cell.
fn disc_field(seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut discs = Vec::new();
    for k in 0..9 {
        if !rng.random_bool(0.7) {
            continue;
        }
        let r = rng.random_range(3.0..8.0);
        let cx = (k % 3) as f64 * 20.0 + 10.0 + rng.random_range(-1.0..1.0);
        let cy = (k / 3) as f64 * 20.0 + 10.0 + rng.random_range(-1.0..1.0);
        discs.push((cx, cy, r));
    }
    gray(60, 60, |x, y| discs.iter().any(|&(cx, cy, r): &(f64, f64, f64)| (x - cx).powi(2) + (y - cy).powi(2) <= r * r))
}

/// Share of foreground pixels whose label agrees with the nearest center.
fn nearest_center_agreement(r: f64, sep: f64, angle: f64) -> (usize, f64) {
    let (w, h) = (80, 80);
    let (dx, dy) = (angle.cos() * sep / 2.0, angle.sin() * sep / 2.0);
    let (c1, c2) = ((40.0 - dx, 40.0 - dy), (40.0 + dx, 40.0 + dy));
    let inside = |x: f64, y: f64, c: (f64, f64)| (x - c.0).powi(2) + (y - c.1).powi(2) <= r * r;
    let img = gray(w, h, |x, y| inside(x, y, c1) || inside(x, y, c2));
    let m = watershed_instances(&img, &PostprocSpec::default()).unwrap();
    let left = m.get(c1.0.round() as usize, c1.1.round() as usize);
    let (mut agree, mut total) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            if !(inside(fx, fy, c1) || inside(fx, fy, c2)) {
                continue;
            }
            total += 1;
            let d1 = (fx - c1.0).powi(2) + (fy - c1.1).powi(2);
            let d2 = (fx - c2.0).powi(2) + (fy - c2.1).powi(2);
            if (d1 <= d2) == (m.get(x, y) == left) {
                agree += 1;
            }
        }
    }
    (m.instance_ids().len(), agree as f64 / total as f64)
}

#[test]
fn separated_discs_equal_connected_components() {
    for seed in 0..30 {
        let img = disc_field(seed);
        let ws = watershed_instances(&img, &no_filter()).unwrap();
        let cc = connected_components(&sim2seg_core::postproc::binarize(&img, 32).unwrap());
        assert_eq!(ws, cc, "seed {seed}");
    }
}

#[test]
fn overlapping_disc_pairs_follow_nearest_center() {
    for r in [10.0, 12.0, 14.0] {
        for sep_ratio in [1.3, 1.5, 1.7] {
            for angle in [0.0, 0.4, std::f64::consts::FRAC_PI_4, 1.2] {
                let (n, share) = nearest_center_agreement(r, r * sep_ratio, angle);
                assert_eq!(n, 2, "r {r} sep {sep_ratio} angle {angle}");
                assert!(share >= 0.95, "r {r} sep {sep_ratio} angle {angle}: {share}");
            }
        }
    }
}

#[test]
fn connected_components_mode_never_splits() {
    let img = gray(80, 40, |x, y| {
        ((x - 25.0).powi(2) + (y - 20.0).powi(2) <= 144.0) || ((x - 45.0).powi(2) + (y - 20.0).powi(2) <= 144.0)
    });
    let spec = PostprocSpec {
        mode: sim2seg_core::postproc::PostprocMode::ConnectedComponents,
        ..PostprocSpec::default()
    };
    assert_eq!(watershed_instances(&img, &spec).unwrap().instance_ids(), vec![1]);
    assert_eq!(watershed_instances(&img, &PostprocSpec::default()).unwrap().instance_ids(), vec![1, 2]);
}

proptest! {
    #[test]
    fn labels_cover_exactly_the_thresholded_pixels(seed in any::<u64>(), t in 1u8..255) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px: Vec<u8> = (0..24 * 24).map(|_| rng.random()).collect();
        let img = ImageBuffer::from_u8(24, 24, 1, &px).unwrap();
        let spec = PostprocSpec { binarize_threshold: t, ..no_filter() };
        let m = watershed_instances(&img, &spec).unwrap();
        for (v, id) in px.iter().zip(m.ids()) {
            prop_assert_eq!(*v >= t, *id != 0);
        }
        let ids = m.instance_ids();
        prop_assert_eq!(ids, (1..=m.instance_ids().len() as u32).collect::<Vec<_>>());
    }

    #[test]
    fn watershed_refines_components(seed in any::<u64>()) {
        let img = disc_field(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        // random bridges may merge neighbouring discs
        let mut px = img.to_u8();
        for _ in 0..3 {
            let y = rng.random_range(0..60);
            for x in rng.random_range(0..30)..rng.random_range(30..60) {
                px[y * 60 + x] = 255;
            }
        }
        let img = ImageBuffer::from_u8(60, 60, 1, &px).unwrap();
        let ws = watershed_instances(&img, &no_filter()).unwrap();
        let cc = connected_components(&sim2seg_core::postproc::binarize(&img, 32).unwrap());
        // every watershed instance sits inside one component
        for id in ws.instance_ids() {
            let mut owner = None;
            for (a, b) in ws.ids().iter().zip(cc.ids()) {
                if *a == id {
                    prop_assert!(owner.is_none() || owner == Some(*b));
                    owner = Some(*b);
                }
            }
        }
    }
}
