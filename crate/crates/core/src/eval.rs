//! Per-object segmentation metrics.
//!
//! Predicted instances are matched one-to-one to ground-truth instances by
//! maximum total IoU. Among optimal assignments, ground-truth ids are
//! resolved in ascending order, each taking the smallest predicted id that
//! still admits an optimal completion (or staying unmatched if none does).
//!
//! * PA(o) = |pred(o) ∩ gt(o)| / |gt(o)|, IoU(o) = |∩| / |∪|, both 0 for an
//!   unmatched ground-truth object.
//! * mPA and mIoU average over ground-truth objects; background is not an
//!   object. Unmatched predictions are counted as false positives and, unless
//!   `count_unmatched_pred` is set, stay out of the means.
//! * Dataset aggregates are mean and population standard deviation over
//!   per-sample values.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::math;
use crate::raster::{BinaryMap, InstanceMask};

const TIE_EPS: f64 = 1e-12;

/// `|a ∩ b| / |a ∪ b|`; two empty sets agree vacuously (1.0).
pub fn instance_iou(a: &BinaryMap, b: &BinaryMap) -> Result<f64, CoreError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(CoreError::dims((a.width(), a.height()), (b.width(), b.height())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Pixel counts shared between ground-truth and predicted instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    pub gt_ids: Vec<u32>,
    pub pred_ids: Vec<u32>,
    pub gt_area: Vec<u64>,
    pub pred_area: Vec<u64>,
    /// `inter[g][p]`
    pub inter: Vec<Vec<u64>>,
}

impl Overlap {
    pub fn compute(pred: &InstanceMask, gt: &InstanceMask) -> Result<Self, CoreError> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(CoreError::dims((gt.width(), gt.height()), (pred.width(), pred.height())));
        }
        let gt_ids = gt.instance_ids();
        let pred_ids = pred.instance_ids();
        let mut gt_area = vec![0u64; gt_ids.len()];
        let mut pred_area = vec![0u64; pred_ids.len()];
        let mut inter = vec![vec![0u64; pred_ids.len()]; gt_ids.len()];
        let gi = |id: u32| gt_ids.binary_search(&id).ok();
        let pi = |id: u32| pred_ids.binary_search(&id).ok();
        for (&g, &p) in gt.ids().iter().zip(pred.ids()) {
            let (g, p) = (if g == 0 { None } else { gi(g) }, if p == 0 { None } else { pi(p) });
            if let Some(g) = g {
                gt_area[g] += 1;
            }
            if let Some(p) = p {
                pred_area[p] += 1;
            }
            if let (Some(g), Some(p)) = (g, p) {
                inter[g][p] += 1;
            }
        }
        Ok(Self {
            gt_ids,
            pred_ids,
            gt_area,
            pred_area,
            inter,
        })
    }

    pub fn iou(&self, g: usize, p: usize) -> f64 {
        let i = self.inter[g][p];
        let u = self.gt_area[g] + self.pred_area[p] - i;
        if u == 0 {
            1.0
        } else {
            i as f64 / u as f64
        }
    }

    pub fn pixel_accuracy(&self, g: usize, p: usize) -> f64 {
        self.inter[g][p] as f64 / self.gt_area[g] as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gt_id: u32,
    pub pred_id: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_gt: Vec<u32>,
    pub unmatched_pred: Vec<u32>,
}

/// Minimum-cost perfect assignment on a square matrix (shortest augmenting
/// paths with potentials). Returns `row -> column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Best total weight over the given rows/columns (zero-weight pairs are as
/// good as leaving both sides unmatched).
fn max_total(weights: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    let n = rows.len().max(cols.len());
    if n == 0 || rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let mut cost = vec![vec![0.0; n]; n];
    for (a, &r) in rows.iter().enumerate() {
        for (b, &c) in cols.iter().enumerate() {
            cost[a][b] = -weights[r][c];
        }
    }
    let assign = min_cost_assignment(&cost);
    assign
        .iter()
        .enumerate()
        .filter(|&(a, &b)| a < rows.len() && b < cols.len())
        .map(|(a, &b)| weights[rows[a]][cols[b]])
        .sum()
}

/// Optimal one-to-one assignment of row indices to column indices under
/// `weights` (non-negative), with the deterministic tie-break described in
/// the module docs. `None` marks an unmatched row.
pub fn optimal_assignment(weights: &[Vec<f64>], n_cols: usize) -> Vec<Option<usize>> {
    let n_rows = weights.len();
    let all_rows: Vec<usize> = (0..n_rows).collect();
    let all_cols: Vec<usize> = (0..n_cols).collect();
    let best = max_total(weights, &all_rows, &all_cols);
    let mut fixed = 0.0;
    let mut taken = vec![false; n_cols];
    let mut out = vec![None; n_rows];
    for r in 0..n_rows {
        let rest_rows: Vec<usize> = (r + 1..n_rows).collect();
        let mut choice = None;
        for c in 0..n_cols {
            if taken[c] || weights[r][c] <= 0.0 {
                continue;
            }
            let cols: Vec<usize> = (0..n_cols).filter(|&k| !taken[k] && k != c).collect();
            let total = fixed + weights[r][c] + max_total(weights, &rest_rows, &cols);
            if total >= best - TIE_EPS {
                choice = Some(c);
                break;
            }
        }
        if let Some(c) = choice {
            taken[c] = true;
            fixed += weights[r][c];
        }
        out[r] = choice;
    }
    out
}

fn build_match(overlap: &Overlap, assignment: &[Option<usize>]) -> MatchResult {
    let mut result = MatchResult::default();
    let mut pred_used = vec![false; overlap.pred_ids.len()];
    for (g, a) in assignment.iter().enumerate() {
        match a {
            Some(p) => {
                pred_used[*p] = true;
                result.pairs.push(MatchPair {
                    gt_id: overlap.gt_ids[g],
                    pred_id: overlap.pred_ids[*p],
                    iou: overlap.iou(g, *p),
                });
            }
            None => result.unmatched_gt.push(overlap.gt_ids[g]),
        }
    }
    for (p, used) in pred_used.iter().enumerate() {
        if !used {
            result.unmatched_pred.push(overlap.pred_ids[p]);
        }
    }
    result
}

/// Maximum-total-IoU one-to-one matching; zero-IoU pairs are left unmatched.
pub fn match_instances(pred: &InstanceMask, gt: &InstanceMask) -> Result<MatchResult, CoreError> {
    let overlap = Overlap::compute(pred, gt)?;
    let weights: Vec<Vec<f64>> = (0..overlap.gt_ids.len())
        .map(|g| (0..overlap.pred_ids.len()).map(|p| overlap.iou(g, p)).collect())
        .collect();
    let assignment = optimal_assignment(&weights, overlap.pred_ids.len());
    Ok(build_match(&overlap, &assignment))
}

/// Greedy matching by descending IoU; a baseline for comparisons.
pub fn greedy_match(pred: &InstanceMask, gt: &InstanceMask) -> Result<MatchResult, CoreError> {
    let overlap = Overlap::compute(pred, gt)?;
    let mut cands = Vec::new();
    for g in 0..overlap.gt_ids.len() {
        for p in 0..overlap.pred_ids.len() {
            let iou = overlap.iou(g, p);
            if iou > 0.0 {
                cands.push((iou, g, p));
            }
        }
    }
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assignment = vec![None; overlap.gt_ids.len()];
    let mut used = vec![false; overlap.pred_ids.len()];
    for (_, g, p) in cands {
        if assignment[g].is_none() && !used[p] {
            assignment[g] = Some(p);
            used[p] = true;
        }
    }
    Ok(build_match(&overlap, &assignment))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub mpa: f64,
    pub miou: f64,
    pub gt_objects: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Count each unmatched prediction as an extra object scoring 0.
    pub count_unmatched_pred: bool,
}

/// mPA / mIoU of one sample; `None` when the ground truth has no objects.
pub fn sample_metrics(
    pred: &InstanceMask,
    gt: &InstanceMask,
    matches: &MatchResult,
    options: &EvalOptions,
) -> Result<Option<SampleMetrics>, CoreError> {
    let overlap = Overlap::compute(pred, gt)?;
    if overlap.gt_ids.is_empty() {
        return Ok(None);
    }
    let (mut pa_sum, mut iou_sum) = (0.0, 0.0);
    for (g, &gid) in overlap.gt_ids.iter().enumerate() {
        if let Some(pair) = matches.pairs.iter().find(|m| m.gt_id == gid) {
            let p = overlap
                .pred_ids
                .binary_search(&pair.pred_id)
                .map_err(|_| CoreError::Data(alloc::format!("matched prediction {} not in mask", pair.pred_id)))?;
            pa_sum += overlap.pixel_accuracy(g, p);
            iou_sum += overlap.iou(g, p);
        }
    }
    let fp = matches.unmatched_pred.len();
    let n = overlap.gt_ids.len() + if options.count_unmatched_pred { fp } else { 0 };
    Ok(Some(SampleMetrics {
        mpa: pa_sum / n as f64,
        miou: iou_sum / n as f64,
        gt_objects: overlap.gt_ids.len(),
        false_positives: fp,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub sample_ref: String,
    #[serde(rename = "mPA")]
    pub mpa: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    pub gt_objects: usize,
    pub false_positives: usize,
    pub matches: MatchResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(rename = "mPA_mean")]
    pub mpa_mean: f64,
    #[serde(rename = "mPA_std")]
    pub mpa_std: f64,
    #[serde(rename = "mIoU_mean")]
    pub miou_mean: f64,
    #[serde(rename = "mIoU_std")]
    pub miou_std: f64,
    pub n_samples: usize,
}

/// Conventions printed with every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub matching: String,
    pub unmatched_gt: String,
    pub unmatched_pred: String,
    pub std: String,
}

impl Conventions {
    fn for_options(options: &EvalOptions) -> Self {
        Self {
            matching: "one-to-one Hungarian, maximum total IoU".into(),
            unmatched_gt: "scores 0 in mPA and mIoU".into(),
            unmatched_pred: if options.count_unmatched_pred {
                "counted as objects scoring 0".into()
            } else {
                "reported as false positives, excluded from means".into()
            },
            std: "population (divide by n)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition_label: String,
    pub conventions: Conventions,
    pub per_sample: Vec<SampleEval>,
    /// Samples whose ground truth has no objects.
    pub skipped: Vec<String>,
    pub aggregate: Aggregate,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

pub fn evaluate_dataset(
    preds: &[InstanceMask],
    gts: &[InstanceMask],
    sample_refs: &[String],
    condition_label: &str,
    options: &EvalOptions,
) -> Result<EvalReport, CoreError> {
    if preds.len() != gts.len() || sample_refs.len() != gts.len() {
        return Err(CoreError::Data(alloc::format!(
            "length mismatch: {} predictions, {} ground truths, {} names",
            preds.len(),
            gts.len(),
            sample_refs.len()
        )));
    }
    let mut per_sample = Vec::new();
    let mut skipped = Vec::new();
    for ((pred, gt), name) in preds.iter().zip(gts).zip(sample_refs) {
        let matches = match_instances(pred, gt)?;
        match sample_metrics(pred, gt, &matches, options)? {
            Some(m) => per_sample.push(SampleEval {
                sample_ref: name.clone(),
                mpa: m.mpa,
                miou: m.miou,
                gt_objects: m.gt_objects,
                false_positives: m.false_positives,
                matches,
            }),
            None => skipped.push(name.clone()),
        }
    }
    let mpa: Vec<f64> = per_sample.iter().map(|s| s.mpa).collect();
    let miou: Vec<f64> = per_sample.iter().map(|s| s.miou).collect();
    let (mpa_mean, mpa_std) = mean_std(&mpa);
    let (miou_mean, miou_std) = mean_std(&miou);
    Ok(EvalReport {
        condition_label: condition_label.into(),
        conventions: Conventions::for_options(options),
        per_sample,
        skipped,
        aggregate: Aggregate {
            mpa_mean,
            mpa_std,
            miou_mean,
            miou_std,
            n_samples: mpa.len(),
        },
    })
}

impl EvalReport {
    /// `"0.81±0.07 / 0.69±0.10"`
    pub fn summary(&self) -> String {
        let a = &self.aggregate;
        alloc::format!(
            "{:.2}±{:.2} / {:.2}±{:.2}",
            a.mpa_mean, a.mpa_std, a.miou_mean, a.miou_std
        )
    }
}

/// Plain-text table with one row per condition and columns mPA, mIoU.
pub fn render_table(reports: &[EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.condition_label.chars().count())
        .chain(core::iter::once(6))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:<11}  {:<11}", "Method", "mPA", "mIoU");
    for r in reports {
        let a = &r.aggregate;
        let pad = width - r.condition_label.chars().count();
        let _ = writeln!(
            out,
            "{}{}  {:<11}  {:<11}",
            r.condition_label,
            " ".repeat(pad),
            alloc::format!("{:.2}±{:.2}", a.mpa_mean, a.mpa_std),
            alloc::format!("{:.2}±{:.2}", a.miou_mean, a.miou_std),
        );
    }
    if let Some(r) = reports.first() {
        let c = &r.conventions;
        let _ = writeln!(
            out,
            "matching: {}; unmatched gt: {}; unmatched pred: {}; std: {}",
            c.matching, c.unmatched_gt, c.unmatched_pred, c.std
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, ids: &[u32]) -> InstanceMask {
        InstanceMask::new(w, h, ids.to_vec()).unwrap()
    }

    #[test]
    fn iou_basics() {
        let a = mask(4, 1, &[1, 1, 0, 0]).foreground();
        let b = mask(4, 1, &[0, 0, 1, 1]).foreground();
        assert_eq!(instance_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(instance_iou(&a, &b).unwrap(), 0.0);
        assert_eq!(instance_iou(&b, &a).unwrap(), 0.0);
        let e = mask(4, 1, &[0; 4]).foreground();
        assert_eq!(instance_iou(&e, &e).unwrap(), 1.0);
        assert!(instance_iou(&a, &mask(2, 1, &[0, 0]).foreground()).is_err());
    }

    #[test]
    fn shifted_block_iou_is_one_third() {
        #[rustfmt::skip]
        let gt = mask(4, 2, &[1, 1, 0, 0,
                              1, 1, 0, 0]);
        #[rustfmt::skip]
        let pr = mask(4, 2, &[0, 1, 1, 0,
                              0, 1, 1, 0]);
        let iou = instance_iou(&gt.foreground(), &pr.foreground()).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn permuted_ids_match_perfectly() {
        let gt = mask(6, 1, &[1, 1, 2, 2, 3, 0]);
        let pr = mask(6, 1, &[7, 7, 4, 4, 9, 0]);
        let m = match_instances(&pr, &gt).unwrap();
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|p| p.iou == 1.0));
        assert!(m.unmatched_gt.is_empty() && m.unmatched_pred.is_empty());
        let s = sample_metrics(&pr, &gt, &m, &EvalOptions::default()).unwrap().unwrap();
        assert_eq!((s.mpa, s.miou), (1.0, 1.0));
    }

    #[test]
    fn one_prediction_over_two_objects() {
        let gt = mask(6, 1, &[1, 1, 1, 1, 2, 2]);
        let pr = mask(6, 1, &[5, 5, 5, 5, 5, 5]);
        let m = match_instances(&pr, &gt).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].gt_id, 1);
        assert_eq!(m.unmatched_gt, alloc::vec![2]);
    }

    #[test]
    fn all_unmatched_scores_zero() {
        let gt = mask(4, 1, &[1, 1, 0, 0]);
        let pr = mask(4, 1, &[0, 0, 3, 3]);
        let m = match_instances(&pr, &gt).unwrap();
        let s = sample_metrics(&pr, &gt, &m, &EvalOptions::default()).unwrap().unwrap();
        assert_eq!((s.mpa, s.miou, s.false_positives), (0.0, 0.0, 1));
    }

    #[test]
    fn half_covered_object() {
        // object 1 perfect, object 2 half-covered from inside
        let gt = mask(8, 1, &[1, 1, 0, 2, 2, 2, 2, 0]);
        let pr = mask(8, 1, &[3, 3, 0, 4, 4, 0, 0, 0]);
        let m = match_instances(&pr, &gt).unwrap();
        let s = sample_metrics(&pr, &gt, &m, &EvalOptions::default()).unwrap().unwrap();
        assert_eq!(s.mpa, 0.75);
        assert_eq!(s.miou, 0.75);
    }

    #[test]
    fn unmatched_predictions_optionally_counted() {
        let gt = mask(4, 1, &[1, 1, 0, 0]);
        let pr = mask(4, 1, &[1, 1, 0, 2]);
        let m = match_instances(&pr, &gt).unwrap();
        let default = sample_metrics(&pr, &gt, &m, &EvalOptions::default()).unwrap().unwrap();
        assert_eq!(default.miou, 1.0);
        let strict = EvalOptions {
            count_unmatched_pred: true,
        };
        let s = sample_metrics(&pr, &gt, &m, &strict).unwrap().unwrap();
        assert_eq!(s.miou, 0.5);
    }

    #[test]
    fn empty_gt_is_skipped() {
        let gt = mask(2, 1, &[0, 0]);
        let pr = mask(2, 1, &[1, 0]);
        let r = evaluate_dataset(&[pr], &[gt], &["a".into()], "x", &EvalOptions::default()).unwrap();
        assert_eq!(r.skipped, alloc::vec![String::from("a")]);
        assert_eq!(r.aggregate.n_samples, 0);
    }

    #[test]
    fn aggregate_population_std() {
        assert!((mean_std(&[0.4, 0.8]).0 - 0.6).abs() < 1e-15);
        assert!((mean_std(&[0.4, 0.8]).1 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn perfect_dataset_renders_ones() {
        let gt = mask(3, 1, &[1, 0, 2]);
        let r = evaluate_dataset(
            &[gt.clone(), gt.clone()],
            &[gt.clone(), gt],
            &["a".into(), "b".into()],
            "with Domain Adaptation",
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r.summary(), "1.00±0.00 / 1.00±0.00");
        let t = render_table(&[r]);
        assert!(t.lines().nth(1).unwrap().starts_with("with Domain Adaptation  1.00±0.00"));
        assert!(evaluate_dataset(&[], &[mask(1, 1, &[0])], &["a".into()], "x", &EvalOptions::default()).is_err());
    }

    #[test]
    fn assignment_solver_small_cases() {
        let cost = alloc::vec![alloc::vec![4.0, 1.0, 3.0], alloc::vec![2.0, 0.0, 5.0], alloc::vec![3.0, 2.0, 2.0]];
        let a = min_cost_assignment(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn tie_break_prefers_smaller_pred_id() {
        // gt 1 is split evenly between predictions 1 and 2
        let gt = mask(4, 1, &[1, 1, 1, 1]);
        let pr = mask(4, 1, &[2, 2, 1, 1]);
        let m = match_instances(&pr, &gt).unwrap();
        assert_eq!(m.pairs[0].pred_id, 1);
        assert_eq!(m.unmatched_pred, alloc::vec![2]);
    }
}
