//! OKS-based AP/AR evaluation following the COCO keypoint protocol.
//!
//! Per image, detections (score-descending, at most `max_detections`) are
//! greedily matched to the unmatched ground truth of highest OKS at or above
//! each threshold. Ground truths outside the area range, crowd regions, and
//! instances without labeled keypoints are ignored: detections matched to them
//! count neither as TP nor FP, and unmatched detections whose keypoint extent
//! lies outside the area range are dropped as well. Precision is interpolated
//! on the 101-point recall grid.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::oks;
use crate::pose::{Detection, KptWeights, PoseInstance};
use crate::postprocess::score_order;
use crate::scalar::Scalar;

pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AreaRange {
    #[default]
    All,
    Medium,
    Large,
}

impl AreaRange {
    /// Inclusive `[lo, hi]` bounds in pixels².
    pub fn bounds(self) -> (f64, f64) {
        match self {
            AreaRange::All => (0.0, 1e10),
            AreaRange::Medium => (32.0 * 32.0, 96.0 * 96.0),
            AreaRange::Large => (96.0 * 96.0, 1e10),
        }
    }

    fn contains(self, area: f64) -> bool {
        let (lo, hi) = self.bounds();
        area >= lo && area <= hi
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(AreaRange::All),
            "medium" => Some(AreaRange::Medium),
            "large" => Some(AreaRange::Large),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub thresholds: Vec<f64>,
    pub max_detections: usize,
    pub kpt_weights: KptWeights<f64>,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            // 0.50:0.05:0.95, built from exact hundredths
            thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            max_detections: 20,
            kpt_weights: KptWeights::default(),
        }
    }
}

/// Precision-recall summary at one OKS threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub threshold: f64,
    /// Interpolated precision at recall 0.00, 0.01, …, 1.00; empty when undefined.
    pub precision: Vec<f64>,
    /// Final recall, −1 when no ground truth is in range.
    pub recall: f64,
    /// Mean of `precision`, −1 when undefined.
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_large: f64,
    pub ar: f64,
    pub curves: Vec<PrCurve>,
}

/// Greedy matching of score-sorted detections against ground truths at one threshold.
///
/// `oks[d][g]` is the similarity of detection `d` to ground truth `g`; ground
/// truths must be ordered non-ignored first. Returns, per detection, the index of
/// the matched ground truth.
pub fn match_image(oks: &[Vec<f64>], gt_ignore: &[bool], gt_crowd: &[bool], threshold: f64) -> Vec<Option<usize>> {
    let n_gt = gt_ignore.len();
    let mut gt_taken = vec![false; n_gt];
    let mut out = Vec::with_capacity(oks.len());
    for row in oks {
        let mut best = threshold.min(1.0 - 1e-10);
        let mut m: Option<usize> = None;
        for g in 0..n_gt {
            if gt_taken[g] && !gt_crowd[g] {
                continue;
            }
            // a real match is never traded for an ignored one
            if let Some(mg) = m {
                if !gt_ignore[mg] && gt_ignore[g] {
                    break;
                }
            }
            if row[g] < best {
                continue;
            }
            best = row[g];
            m = Some(g);
        }
        if let Some(g) = m {
            gt_taken[g] = true;
        }
        out.push(m);
    }
    out
}

struct ImageEval {
    /// per threshold, per kept detection: (score, matched, ignored)
    dets: Vec<Vec<(f64, bool, bool)>>,
    n_positive: usize,
}

fn keypoint_extent_area<T: Scalar>(d: &Detection<T>) -> f64 {
    let xs = d.keypoints.iter().map(|k| k.x.as_f64());
    let ys = d.keypoints.iter().map(|k| k.y.as_f64());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    (x1 - x0) * (y1 - y0)
}

fn evaluate_image<T: Scalar>(
    gts: &[&PoseInstance<T>],
    dets: &[&Detection<T>],
    range: AreaRange,
    params: &EvalParams,
    kw: &KptWeights<T>,
) -> ImageEval {
    let ignore_of = |g: &PoseInstance<T>| g.iscrowd || g.num_labeled() == 0 || !range.contains(g.area.as_f64());
    let mut gts: Vec<&PoseInstance<T>> = gts.to_vec();
    gts.sort_by_key(|g| ignore_of(g));
    let gt_ignore: Vec<bool> = gts.iter().map(|g| ignore_of(g)).collect();
    let gt_crowd: Vec<bool> = gts.iter().map(|g| g.iscrowd).collect();
    let n_positive = gt_ignore.iter().filter(|&&i| !i).count();

    let owned: Vec<Detection<T>> = dets.iter().map(|d| (*d).clone()).collect();
    let mut order = score_order(&owned);
    order.truncate(params.max_detections);
    let dets: Vec<&Detection<T>> = order.iter().map(|&i| dets[i]).collect();

    let oks_rows: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| {
            gts.iter()
                .map(|g| oks(&d.keypoints, g, kw).map(|v| v.as_f64()).unwrap_or(0.0))
                .collect()
        })
        .collect();

    let per_thr = params
        .thresholds
        .iter()
        .map(|&t| {
            let m = match_image(&oks_rows, &gt_ignore, &gt_crowd, t);
            dets.iter()
                .zip(m)
                .map(|(d, mg)| {
                    let ignored = match mg {
                        Some(g) => gt_ignore[g],
                        None => !range.contains(keypoint_extent_area(d)),
                    };
                    (d.score().as_f64(), mg.is_some(), ignored)
                })
                .collect()
        })
        .collect();
    ImageEval {
        dets: per_thr,
        n_positive,
    }
}

/// Builds the curve for one threshold from pooled `(score, matched, ignored)` triples
/// (already concatenated in image order).
fn accumulate(threshold: f64, pooled: &[(f64, bool, bool)], n_positive: usize) -> PrCurve {
    if n_positive == 0 {
        return PrCurve {
            threshold,
            precision: Vec::new(),
            recall: -1.0,
            ap: -1.0,
        };
    }
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    // stable: equal scores keep image order
    order.sort_by(|&a, &b| pooled[b].0.partial_cmp(&pooled[a].0).unwrap_or(std::cmp::Ordering::Equal));

    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        let (_, matched, ignored) = pooled[i];
        if ignored {
            continue;
        }
        if matched {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_positive as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for k in (1..precision.len()).rev() {
        if precision[k] > precision[k - 1] {
            precision[k - 1] = precision[k];
        }
    }
    let mut q = vec![0.0; RECALL_POINTS];
    for (r, slot) in q.iter_mut().enumerate() {
        let thr = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&rc| rc < thr);
        if idx < precision.len() {
            *slot = precision[idx];
        }
    }
    let ap = q.iter().sum::<f64>() / RECALL_POINTS as f64;
    PrCurve {
        threshold,
        precision: q,
        recall: recall.last().copied().unwrap_or(0.0),
        ap,
    }
}

fn curves_for<T: Scalar>(
    gts: &BTreeMap<u64, Vec<&PoseInstance<T>>>,
    dets: &BTreeMap<u64, Vec<&Detection<T>>>,
    images: &BTreeSet<u64>,
    range: AreaRange,
    params: &EvalParams,
    kw: &KptWeights<T>,
) -> Vec<PrCurve> {
    let empty_g = Vec::new();
    let empty_d = Vec::new();
    let evals: Vec<ImageEval> = images
        .iter()
        .map(|id| {
            evaluate_image(
                gts.get(id).unwrap_or(&empty_g),
                dets.get(id).unwrap_or(&empty_d),
                range,
                params,
                kw,
            )
        })
        .collect();
    let n_positive: usize = evals.iter().map(|e| e.n_positive).sum();
    params
        .thresholds
        .iter()
        .enumerate()
        .map(|(t, &thr)| {
            let pooled: Vec<(f64, bool, bool)> = evals.iter().flat_map(|e| e.dets[t].iter().copied()).collect();
            accumulate(thr, &pooled, n_positive)
        })
        .collect()
}

fn mean_valid(v: impl Iterator<Item = f64>) -> f64 {
    let valid: Vec<f64> = v.filter(|&x| x > -1.0).collect();
    if valid.is_empty() {
        -1.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    }
}

fn ap_at(curves: &[PrCurve], threshold: f64) -> f64 {
    curves
        .iter()
        .find(|c| (c.threshold - threshold).abs() < 1e-12)
        .map(|c| c.ap)
        .unwrap_or(-1.0)
}

/// Evaluates detections against ground truths over the images present in `gts`
/// (plus `extra_images`, which contribute only false positives or nothing).
pub fn evaluate_with<T: Scalar>(
    gts: &[PoseInstance<T>],
    dets: &[Detection<T>],
    extra_images: &[u64],
    range: AreaRange,
    params: &EvalParams,
) -> Result<EvalReport> {
    let kw = KptWeights {
        k: params.kpt_weights.k.map(T::lit),
    };
    let mut images: BTreeSet<u64> = gts.iter().map(|g| g.image_id).collect();
    images.extend(extra_images.iter().copied());
    let mut by_img_g: BTreeMap<u64, Vec<&PoseInstance<T>>> = BTreeMap::new();
    for g in gts {
        if !(g.area > T::zero()) && !g.iscrowd {
            return Err(Error::Config(format!("annotation {} has non-positive area", g.id)));
        }
        by_img_g.entry(g.image_id).or_default().push(g);
    }
    let mut by_img_d: BTreeMap<u64, Vec<&Detection<T>>> = BTreeMap::new();
    for d in dets {
        if !images.contains(&d.image_id) {
            return Err(Error::Config(format!("detection refers to unknown image {}", d.image_id)));
        }
        by_img_d.entry(d.image_id).or_default().push(d);
    }

    let curves = curves_for(&by_img_g, &by_img_d, &images, range, params, &kw);
    let large = curves_for(&by_img_g, &by_img_d, &images, AreaRange::Large, params, &kw);
    Ok(EvalReport {
        ap: mean_valid(curves.iter().map(|c| c.ap)),
        ap50: ap_at(&curves, 0.5),
        ap75: ap_at(&curves, 0.75),
        ap_large: mean_valid(large.iter().map(|c| c.ap)),
        ar: mean_valid(curves.iter().map(|c| c.recall)),
        curves,
    })
}

/// [`evaluate_with`] using the default thresholds, 20 detections per image and
/// the default keypoint constants.
pub fn evaluate<T: Scalar>(gts: &[PoseInstance<T>], dets: &[Detection<T>], range: AreaRange) -> Result<EvalReport> {
    evaluate_with(gts, dets, &[], range, &EvalParams::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_are_exact_hundredths() {
        let p = EvalParams::default();
        assert_eq!(p.thresholds[4], 0.7);
        assert_eq!(p.thresholds[9], 0.95);
    }

    #[test]
    fn match_prefers_higher_oks_and_score_order() {
        // two dets competing for one gt: first (higher score) wins
        let m = match_image(&[vec![0.8], vec![0.9]], &[false], &[false], 0.5);
        assert_eq!(m, vec![Some(0), None]);
        // det picks the best of two gts
        let m = match_image(&[vec![0.6, 0.9]], &[false, false], &[false, false], 0.5);
        assert_eq!(m, vec![Some(1)]);
        // threshold comparison is inclusive
        let m = match_image(&[vec![0.7]], &[false], &[false], 0.7);
        assert_eq!(m, vec![Some(0)]);
        let m = match_image(&[vec![0.7]], &[false], &[false], 0.75);
        assert_eq!(m, vec![None]);
    }

    #[test]
    fn crowd_can_absorb_multiple_detections() {
        let m = match_image(&[vec![0.9], vec![0.9]], &[true], &[true], 0.5);
        assert_eq!(m, vec![Some(0), Some(0)]);
    }

    #[test]
    fn accumulate_simple() {
        // TP, FP, TP over 2 positives
        let c = accumulate(0.5, &[(0.9, true, false), (0.8, false, false), (0.7, true, false)], 2);
        // envelope: [1, 2/3, 2/3]; recall [0.5, 0.5, 1.0]
        let expect = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((c.ap - expect).abs() < 1e-12);
        assert_eq!(c.recall, 1.0);
        assert_eq!(accumulate(0.5, &[], 0).ap, -1.0);
        assert_eq!(accumulate(0.5, &[], 3).ap, 0.0);
    }
}
