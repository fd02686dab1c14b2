//! Score filtering, greedy class-agnostic NMS, keypoint-confidence filtering
//! and mapping back to source-image coordinates.

use serde::{Deserialize, Serialize};

use crate::codec::{unletterbox, LetterboxTransform};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::pose::Detection;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub conf_threshold: f64,
    pub nms_iou_threshold: f64,
    /// Keypoints with confidence at or below this are flagged absent.
    pub kpt_conf_threshold: f64,
    pub max_detections: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            conf_threshold: 0.25,
            nms_iou_threshold: 0.65,
            kpt_conf_threshold: 0.5,
            max_detections: 20,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.conf_threshold) || !unit(self.nms_iou_threshold) || !unit(self.kpt_conf_threshold) {
            return Err(Error::Config("post-processing thresholds must lie in [0, 1]".into()));
        }
        if self.max_detections == 0 {
            return Err(Error::Config("max_detections must be positive".into()));
        }
        Ok(())
    }
}

/// Indices of `dets` in descending score order; ties keep input order.
pub fn score_order<T: Scalar>(dets: &[Detection<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score()
            .partial_cmp(&dets[a].score())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// Greedy NMS on box IoU. Returns the kept indices, score-descending.
pub fn nms_indices<T: Scalar>(dets: &[Detection<T>], iou_threshold: f64) -> Vec<usize> {
    let thr = T::lit(iou_threshold);
    let order = score_order(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox) > thr {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Greedy NMS returning the kept detections, score-descending.
pub fn nms<T: Scalar>(dets: &[Detection<T>], iou_threshold: f64) -> Vec<Detection<T>> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

/// Full post-processing of one image's decoded cells (in letterboxed coordinates).
pub fn postprocess<T: Scalar>(
    dets: &[Detection<T>],
    cfg: &PostprocessConfig,
    t: &LetterboxTransform<T>,
) -> Vec<Detection<T>> {
    let conf = T::lit(cfg.conf_threshold);
    let kpt_thr = T::lit(cfg.kpt_conf_threshold);
    let candidates: Vec<Detection<T>> = dets.iter().filter(|d| d.score() >= conf).cloned().collect();
    let mut kept = nms(&candidates, cfg.nms_iou_threshold);
    kept.truncate(cfg.max_detections);
    kept.iter_mut()
        .map(|d| {
            for k in d.keypoints.iter_mut() {
                k.retained = k.conf > kpt_thr;
            }
            unletterbox(d, t)
        })
        .collect()
}
