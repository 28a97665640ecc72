use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sim2seg_core::eval::{evaluate_dataset, greedy_match, instance_iou, match_instances, sample_metrics, EvalOptions};
use sim2seg_core::InstanceMask;

const SIDE: usize = 16;

/// Up to four overlapping rectangles painted in order, with sparse ids.
fn random_mask(rng: &mut ChaCha8Rng) -> InstanceMask {
    let mut ids = vec![0u32; SIDE * SIDE];
    let n = rng.random_range(0..=4);
    for _ in 0..n {
        let id = rng.random_range(1..40u32);
        let (x0, y0) = (rng.random_range(0..SIDE), rng.random_range(0..SIDE));
        let (w, h) = (rng.random_range(1..8), rng.random_range(1..8));
        for y in y0..(y0 + h).min(SIDE) {
            for x in x0..(x0 + w).min(SIDE) {
                ids[y * SIDE + x] = id;
            }
        }
    }
    InstanceMask::new(SIDE, SIDE, ids).unwrap()
}

/// Exact rational `num / den`.
#[derive(Clone, Copy)]
struct Frac {
    num: u128,
    den: u128,
}

impl Frac {
    fn zero() -> Self {
        Frac { num: 0, den: 1 }
    }
    fn add(self, n: u64, d: u64) -> Self {
        Frac {
            num: self.num * d as u128 + n as u128 * self.den,
            den: self.den * d as u128,
        }
    }
    fn cmp(self, o: Frac) -> std::cmp::Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }
}

struct Counts {
    gt: Vec<u32>,
    pred: Vec<u32>,
    gt_area: Vec<u64>,
    inter: Vec<Vec<u64>>,
    union: Vec<Vec<u64>>,
}

fn counts(pred: &InstanceMask, gt: &InstanceMask) -> Counts {
    let gt_ids = gt.instance_ids();
    let pred_ids = pred.instance_ids();
    let area = |m: &InstanceMask, id: u32| m.ids().iter().filter(|&&v| v == id).count() as u64;
    let mut inter = vec![vec![0; pred_ids.len()]; gt_ids.len()];
    let mut union = vec![vec![0; pred_ids.len()]; gt_ids.len()];
    for (g, &gid) in gt_ids.iter().enumerate() {
        for (p, &pid) in pred_ids.iter().enumerate() {
            let both = gt.ids().iter().zip(pred.ids()).filter(|(&a, &b)| a == gid && b == pid).count() as u64;
            inter[g][p] = both;
            union[g][p] = area(gt, gid) + area(pred, pid) - both;
        }
    }
    Counts {
        gt_area: gt_ids.iter().map(|&id| area(gt, id)).collect(),
        gt: gt_ids,
        pred: pred_ids,
        inter,
        union,
    }
}

/// Every one-to-one partial assignment over positive-overlap pairs; best
/// exact total IoU, ties to the lexicographically smallest gt-ordered choice
/// vector with "unmatched" ranked after every prediction.
fn oracle_assignment(c: &Counts) -> Vec<Option<usize>> {
    fn rec(c: &Counts, g: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, total: Frac, best: &mut Option<(Frac, Vec<usize>, Vec<Option<usize>>)>) {
        if g == c.gt.len() {
            let key: Vec<usize> = cur.iter().map(|o| o.unwrap_or(usize::MAX)).collect();
            let better = match best {
                None => true,
                Some((bt, bk, _)) => match total.cmp(*bt) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Equal => key < *bk,
                    std::cmp::Ordering::Less => false,
                },
            };
            if better {
                *best = Some((total, key, cur.clone()));
            }
            return;
        }
        for p in 0..c.pred.len() {
            if used[p] || c.inter[g][p] == 0 {
                continue;
            }
            used[p] = true;
            cur.push(Some(p));
            rec(c, g + 1, used, cur, total.add(c.inter[g][p], c.union[g][p]), best);
            cur.pop();
            used[p] = false;
        }
        cur.push(None);
        rec(c, g + 1, used, cur, total, best);
        cur.pop();
    }
    let mut best = None;
    rec(c, 0, &mut vec![false; c.pred.len()], &mut Vec::new(), Frac::zero(), &mut best);
    best.unwrap().2
}

fn oracle_metrics(pred: &InstanceMask, gt: &InstanceMask) -> Option<(f64, f64, Vec<(u32, u32)>)> {
    let c = counts(pred, gt);
    if c.gt.is_empty() {
        return None;
    }
    let a = oracle_assignment(&c);
    let (mut pa, mut iou) = (0.0, 0.0);
    let mut pairs = Vec::new();
    for (g, m) in a.iter().enumerate() {
        if let Some(p) = *m {
            pa += c.inter[g][p] as f64 / c.gt_area[g] as f64;
            iou += c.inter[g][p] as f64 / c.union[g][p] as f64;
            pairs.push((c.gt[g], c.pred[p]));
        }
    }
    let n = c.gt.len() as f64;
    Some((pa / n, iou / n, pairs))
}

#[test]
fn metrics_equal_exhaustive_oracle_on_200_pairs() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let (pred, gt) = (random_mask(&mut rng), random_mask(&mut rng));
        let m = match_instances(&pred, &gt).unwrap();
        let got = sample_metrics(&pred, &gt, &m, &EvalOptions::default()).unwrap();
        let want = oracle_metrics(&pred, &gt);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some((pa, iou, pairs))) => {
                assert_eq!(g.mpa, pa, "case {case}: mPA");
                assert_eq!(g.miou, iou, "case {case}: mIoU");
                let got_pairs: Vec<(u32, u32)> = m.pairs.iter().map(|p| (p.gt_id, p.pred_id)).collect();
                assert_eq!(got_pairs, pairs, "case {case}: pairs");
            }
            other => panic!("case {case}: {other:?}"),
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn hungarian_never_loses_to_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let total = |m: &sim2seg_core::eval::MatchResult| m.pairs.iter().map(|p| p.iou).sum::<f64>();
    for _ in 0..200 {
        let (pred, gt) = (random_mask(&mut rng), random_mask(&mut rng));
        let h = match_instances(&pred, &gt).unwrap();
        let g = greedy_match(&pred, &gt).unwrap();
        assert!(total(&h) >= total(&g) - 1e-12);
    }
}

#[test]
fn hand_computed_reports() {
    let gt = InstanceMask::new(4, 2, vec![1, 1, 2, 2, 1, 1, 2, 2]).unwrap();
    let pred = InstanceMask::new(4, 2, vec![5, 5, 9, 0, 5, 5, 9, 0]).unwrap();
    let r = evaluate_dataset(&[pred], &[gt], &["a".into()], "x", &EvalOptions::default()).unwrap();
    assert_eq!(r.aggregate.mpa_mean, 0.75);
    assert_eq!(r.aggregate.miou_mean, 0.75);
}

fn mask_strategy() -> impl Strategy<Value = InstanceMask> {
    any::<u64>().prop_map(|s| random_mask(&mut ChaCha8Rng::seed_from_u64(s)))
}

proptest! {
    #[test]
    fn metrics_lie_in_unit_interval(pred in mask_strategy(), gt in mask_strategy()) {
        let m = match_instances(&pred, &gt).unwrap();
        for opts in [EvalOptions { count_unmatched_pred: false }, EvalOptions { count_unmatched_pred: true }] {
            if let Some(s) = sample_metrics(&pred, &gt, &m, &opts).unwrap() {
                prop_assert!((0.0..=1.0).contains(&s.mpa));
                prop_assert!((0.0..=1.0).contains(&s.miou));
            }
        }
        for p in &m.pairs {
            prop_assert!(p.iou > 0.0 && p.iou <= 1.0);
        }
    }

    #[test]
    fn relabeling_ids_changes_nothing(pred in mask_strategy(), gt in mask_strategy(), shift in 1u32..1000) {
        let base = sample_metrics(&pred, &gt, &match_instances(&pred, &gt).unwrap(), &EvalOptions::default()).unwrap();
        let pred2 = pred.relabeled(|id| if id == 0 { 0 } else { 5000 - id * 3 + shift });
        let gt2 = gt.relabeled(|id| if id == 0 { 0 } else { id * 7 + shift });
        let moved = sample_metrics(&pred2, &gt2, &match_instances(&pred2, &gt2).unwrap(), &EvalOptions::default()).unwrap();
        match (base, moved) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                prop_assert!((a.mpa - b.mpa).abs() < 1e-12);
                prop_assert!((a.miou - b.miou).abs() < 1e-12);
            }
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn iou_is_symmetric(a in mask_strategy(), b in mask_strategy()) {
        let (fa, fb) = (a.foreground(), b.foreground());
        prop_assert_eq!(instance_iou(&fa, &fb).unwrap(), instance_iou(&fb, &fa).unwrap());
    }

    #[test]
    fn adding_correct_pixels_never_hurts(gt in mask_strategy(), seed in any::<u64>()) {
        let ids = gt.instance_ids();
        prop_assume!(!ids.is_empty());
        let target = ids[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // prediction: a random subset of the first object's pixels
        let mut pred: Vec<u32> = gt.ids().iter().map(|&v| if v == target && rng.random_bool(0.5) { 1 } else { 0 }).collect();
        prop_assume!(pred.contains(&1));
        let score = |p: &[u32]| {
            let pm = InstanceMask::new(SIDE, SIDE, p.to_vec()).unwrap();
            let m = match_instances(&pm, &gt).unwrap();
            let pair = m.pairs.iter().find(|x| x.gt_id == target).map(|x| x.iou).unwrap_or(0.0);
            let s = sample_metrics(&pm, &gt, &m, &EvalOptions::default()).unwrap().unwrap();
            (s.mpa, pair)
        };
        let before = score(&pred);
        for (i, &v) in gt.ids().iter().enumerate() {
            if v == target && pred[i] == 0 {
                pred[i] = 1;
                break;
            }
        }
        let after = score(&pred);
        prop_assert!(after.0 >= before.0 && after.1 >= before.1);
    }
}
