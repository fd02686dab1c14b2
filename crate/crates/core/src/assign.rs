//! Ground-truth to anchor-cell matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorSpec, ANCHORS_PER_SCALE};
use crate::codec::Slot;
use crate::error::{Error, Result};
use crate::pose::PoseInstance;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub slot: Slot,
    pub gt_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignConfig {
    /// Upper bound (exclusive) on `max(w/a_w, a_w/w, h/a_h, a_h/h)`; must lie in (1, 4].
    pub ratio_threshold: f64,
    /// Also assign the two neighbouring cells nearest to the center.
    pub neighbor_cells: bool,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            ratio_threshold: 4.0,
            neighbor_cells: false,
        }
    }
}

/// Shape ratio between a box and an anchor.
pub fn anchor_ratio<T: Scalar>(w: T, h: T, anchor: [T; 2]) -> T {
    let rw = w / anchor[0];
    let rh = h / anchor[1];
    rw.max(T::one() / rw).max(rh.max(T::one() / rh))
}

/// Matches every non-crowd ground truth to the anchor cells whose shape ratio
/// passes the threshold, at the cell containing its center on each scale.
///
/// When two ground truths claim the same slot the one with the larger area keeps
/// it (lower index on ties). Output is ordered by gt index, then scale, anchor, row, col.
pub fn assign<T: Scalar>(
    gts: &[PoseInstance<T>],
    spec: &AnchorSpec<T>,
    input_size: u32,
    cfg: &AssignConfig,
) -> Result<Vec<Assignment>> {
    if !(cfg.ratio_threshold > 1.0 && cfg.ratio_threshold <= 4.0) {
        return Err(Error::Config(format!(
            "ratio_threshold {} outside (1, 4]",
            cfg.ratio_threshold
        )));
    }
    let thr = T::lit(cfg.ratio_threshold);
    let size = T::lit(input_size as f64);
    let mut owner: BTreeMap<Slot, usize> = BTreeMap::new();

    for (g, gt) in gts.iter().enumerate() {
        if gt.iscrowd {
            continue;
        }
        let b = gt.bbox;
        if !(b.w > T::zero() && b.h > T::zero()) {
            return Err(Error::DegenerateBox {
                w: b.w.as_f64(),
                h: b.h.as_f64(),
            });
        }
        if !(b.cx >= T::zero() && b.cx < size && b.cy >= T::zero() && b.cy < size) {
            return Err(Error::GtOutsideImage {
                cx: b.cx.as_f64(),
                cy: b.cy.as_f64(),
                size: input_size,
            });
        }
        for (s, scale) in spec.scales().iter().enumerate() {
            let st = T::lit(scale.stride as f64);
            let n = (input_size / scale.stride) as usize;
            let gx = b.cx / st;
            let gy = b.cy / st;
            let j = gx.floor().as_f64() as usize;
            let i = gy.floor().as_f64() as usize;
            let mut cells = vec![(i, j)];
            if cfg.neighbor_cells {
                let half = T::lit(0.5);
                let fx = gx - gx.floor();
                let fy = gy - gy.floor();
                if fx < half && j > 0 {
                    cells.push((i, j - 1));
                } else if fx > half && j + 1 < n {
                    cells.push((i, j + 1));
                }
                if fy < half && i > 0 {
                    cells.push((i - 1, j));
                } else if fy > half && i + 1 < n {
                    cells.push((i + 1, j));
                }
            }
            for anchor in 0..ANCHORS_PER_SCALE {
                if !(anchor_ratio(b.w, b.h, scale.anchors[anchor]) < thr) {
                    continue;
                }
                for &(i, j) in &cells {
                    let slot = Slot { scale: s, i, j, anchor };
                    match owner.get(&slot) {
                        Some(&prev) if gts[prev].area >= gt.area => {}
                        _ => {
                            owner.insert(slot, g);
                        }
                    }
                }
            }
        }
    }

    let mut out: Vec<Assignment> = owner
        .into_iter()
        .map(|(slot, gt_index)| Assignment { slot, gt_index })
        .collect();
    out.sort_by_key(|a| (a.gt_index, a.slot.scale, a.slot.anchor, a.slot.i, a.slot.j));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode;
    use crate::geometry::BBox;
    use crate::pose::{GtKeypoint, Visibility, NUM_KEYPOINTS};
    use proptest::prelude::*;

    fn gt(cx: f64, cy: f64, w: f64, h: f64) -> PoseInstance<f64> {
        let mut keypoints = [GtKeypoint::default(); NUM_KEYPOINTS];
        for k in keypoints.iter_mut() {
            *k = GtKeypoint { x: cx, y: cy, v: Visibility::Visible };
        }
        PoseInstance { id: 0, image_id: 0, bbox: BBox::new(cx, cy, w, h), keypoints, area: w * h, iscrowd: false }
    }

    #[test]
    fn center_cell_and_exact_anchor() {
        let spec = AnchorSpec::<f64>::default();
        let a = assign(&[gt(100.0, 100.0, 19.0, 27.0)], &spec, 320, &AssignConfig::default()).unwrap();
        let s0: Vec<_> = a.iter().filter(|a| a.slot.scale == 0).collect();
        assert!(s0.iter().all(|a| a.slot.i == 12 && a.slot.j == 12));
        assert!(s0.iter().any(|a| a.slot.anchor == 0));
    }

    #[test]
    fn oversized_gt_skips_scale() {
        let spec = AnchorSpec::<f64>::default();
        let a = assign(&[gt(500.0, 500.0, 950.0, 950.0)], &spec, 1024, &AssignConfig::default()).unwrap();
        assert!(!a.is_empty());
        assert!(a.iter().all(|a| a.slot.scale >= 2));
        // 100x larger than every P3 anchor
        let a = assign(&[gt(500.0, 500.0, 4400.0, 9400.0)], &spec, 1024, &AssignConfig::default()).unwrap();
        assert!(a.iter().all(|a| a.slot.scale != 0));
    }

    #[test]
    fn rejects_center_outside_image() {
        let spec = AnchorSpec::<f64>::default();
        assert!(matches!(
            assign(&[gt(330.0, 10.0, 20.0, 20.0)], &spec, 320, &AssignConfig::default()),
            Err(Error::GtOutsideImage { .. })
        ));
        let bad = AssignConfig { ratio_threshold: 1.0, ..Default::default() };
        assert!(assign(&[gt(30.0, 10.0, 20.0, 20.0)], &spec, 320, &bad).is_err());
    }

    #[test]
    fn collisions_go_to_larger_area() {
        let spec = AnchorSpec::<f64>::default();
        let small = gt(100.0, 100.0, 19.0, 27.0);
        let large = gt(101.0, 101.0, 30.0, 40.0);
        let a = assign(&[small, large], &spec, 320, &AssignConfig::default()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for x in &a {
            assert!(seen.insert(x.slot));
        }
        let s0a0 = a.iter().find(|x| x.slot == Slot { scale: 0, i: 12, j: 12, anchor: 0 }).unwrap();
        assert_eq!(s0a0.gt_index, 1);
    }

    #[test]
    fn crowd_is_not_assigned() {
        let spec = AnchorSpec::<f64>::default();
        let mut c = gt(100.0, 100.0, 19.0, 27.0);
        c.iscrowd = true;
        assert!(assign(&[c], &spec, 320, &AssignConfig::default()).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn assignments_are_checkable_and_encodable(
            cx in 0.0..320.0f64, cy in 0.0..320.0f64, w in 4.0..600.0f64, h in 4.0..600.0f64, nb in any::<bool>()
        ) {
            let spec = AnchorSpec::<f64>::default();
            let cfg = AssignConfig { neighbor_cells: nb, ..Default::default() };
            let g = gt(cx, cy, w, h);
            let a = assign(std::slice::from_ref(&g), &spec, 320, &cfg).unwrap();
            let again = assign(std::slice::from_ref(&g), &spec, 320, &cfg).unwrap();
            prop_assert_eq!(&a, &again);
            for x in &a {
                let sc = spec.scale(x.slot.scale);
                prop_assert!(anchor_ratio(w, h, sc.anchors[x.slot.anchor]) < 4.0);
                let st = sc.stride as f64;
                if !nb {
                    prop_assert_eq!(x.slot.j, (cx / st).floor() as usize);
                    prop_assert_eq!(x.slot.i, (cy / st).floor() as usize);
                }
                prop_assert!(encode(&g, x.slot, &spec).is_ok());
            }
        }
    }
}
