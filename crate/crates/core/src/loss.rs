//! Training losses over raw head channels with analytic gradients.
//!
//! Every gradient here is taken with respect to the raw (pre-activation)
//! channel values of the anchor cell, i.e. it already includes the decode
//! Jacobian. `gradcheck` verifies all of them against central differences.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSpec;
use crate::assign::Assignment;
use crate::codec::{
    decode_cell, kpt_conf, kpt_x, kpt_y, HeadTensor, Slot, CH_CLS, CH_H, CH_OBJ, CH_W, CH_X, CH_Y,
    NUM_CHANNELS,
};
use crate::error::{Error, Result};
use crate::geometry::{ciou_with_grad, BBox};
use crate::pose::{GtKeypoint, KptWeights, PoseInstance, PredKeypoint, NUM_KEYPOINTS};
use crate::scalar::{bce_with_logit, sigmoid, Scalar};

/// Gradient of a per-cell loss with respect to its 57 raw channels.
pub type CellGrad<T> = [T; NUM_CHANNELS];

/// Loss-term weights of the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<T> {
    pub cls: T,
    #[serde(rename = "box")]
    pub bbox: T,
    pub kpts: T,
    pub kpts_conf: T,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            cls: T::lit(0.5),
            bbox: T::lit(0.05),
            kpts: T::lit(0.1),
            kpts_conf: T::lit(0.5),
        }
    }
}

impl<T: Scalar> LossWeights<T> {
    /// `λ_cls·cls + λ_box·box + λ_kpts·kpts + λ_kpts_conf·kpts_conf`.
    pub fn combine(&self, cls: T, bbox: T, kpts: T, kpts_conf: T) -> T {
        self.cls * cls + self.bbox * bbox + self.kpts * kpts + self.kpts_conf * kpts_conf
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.cls, self.bbox, self.kpts, self.kpts_conf] {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Config("loss weights must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Keypoint regression loss used in place of the OKS term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KptLossKind {
    /// `1 − OKS`.
    #[default]
    Oks,
    /// `Σ |Δx| + |Δy|` over labeled keypoints, in pixels.
    L1,
    /// L1 divided by the object scale `s = √area`.
    ScaleL1,
}

impl KptLossKind {
    pub const ALL: [KptLossKind; 3] = [KptLossKind::Oks, KptLossKind::ScaleL1, KptLossKind::L1];

    pub fn name(self) -> &'static str {
        match self {
            KptLossKind::Oks => "oks",
            KptLossKind::L1 => "l1",
            KptLossKind::ScaleL1 => "scale_l1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Object keypoint similarity over labeled keypoints, with `s² = gt.area`.
pub fn oks<T: Scalar>(pred: &[PredKeypoint<T>; NUM_KEYPOINTS], gt: &PoseInstance<T>, weights: &KptWeights<T>) -> Result<T> {
    oks_xy(pred.iter().map(|k| (k.x, k.y)), &gt.keypoints, gt.area, weights)
}

/// [`oks`] over bare coordinates.
pub fn oks_xy<T: Scalar>(
    pred: impl IntoIterator<Item = (T, T)>,
    gt: &[GtKeypoint<T>; NUM_KEYPOINTS],
    area: T,
    weights: &KptWeights<T>,
) -> Result<T> {
    let mut sum = T::zero();
    let mut count = 0usize;
    let two = T::lit(2.0);
    for (((x, y), g), k) in pred.into_iter().zip(gt.iter()).zip(weights.k.iter()) {
        if !g.v.is_labeled() {
            continue;
        }
        let d2 = (x - g.x) * (x - g.x) + (y - g.y) * (y - g.y);
        sum += (-d2 / (two * area * *k * *k)).exp();
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoVisibleKeypoints);
    }
    Ok(sum / T::lit(count as f64))
}

/// Keypoint loss of one assigned cell and its gradient w.r.t. the raw channels.
///
/// Only the coordinate channels of labeled keypoints receive gradient.
pub fn loss_kpts<T: Scalar>(
    kind: KptLossKind,
    raw: &[T],
    slot: Slot,
    spec: &AnchorSpec<T>,
    gt: &PoseInstance<T>,
    weights: &KptWeights<T>,
) -> Result<(T, CellGrad<T>)> {
    let n_vis = gt.num_labeled();
    if n_vis == 0 {
        return Err(Error::NoVisibleKeypoints);
    }
    if !(gt.area > T::zero()) {
        return Err(Error::DegenerateBox {
            w: gt.bbox.w.as_f64(),
            h: gt.bbox.h.as_f64(),
        });
    }
    let det = decode_cell(raw, slot, spec, gt.image_id);
    let slope = T::lit(2.0 * spec.scale(slot.scale).stride as f64);
    let mut grad = [T::zero(); NUM_CHANNELS];
    let mut value = T::zero();
    let nv = T::lit(n_vis as f64);
    let s = gt.area.sqrt();

    for (n, (p, g)) in det.keypoints.iter().zip(gt.keypoints.iter()).enumerate() {
        if !g.v.is_labeled() {
            continue;
        }
        let dx = p.x - g.x;
        let dy = p.y - g.y;
        let (gx, gy) = match kind {
            KptLossKind::Oks => {
                let s2k2 = gt.area * weights.k[n] * weights.k[n];
                let term = (-(dx * dx + dy * dy) / (T::lit(2.0) * s2k2)).exp();
                value += term;
                let c = term / (s2k2 * nv);
                (c * dx, c * dy)
            }
            KptLossKind::L1 => {
                value += dx.abs() + dy.abs();
                (sign(dx), sign(dy))
            }
            KptLossKind::ScaleL1 => {
                value += (dx.abs() + dy.abs()) / s;
                (sign(dx) / s, sign(dy) / s)
            }
        };
        grad[kpt_x(n)] = gx * slope;
        grad[kpt_y(n)] = gy * slope;
    }
    if kind == KptLossKind::Oks {
        value = T::one() - value / nv;
    }
    Ok((value, grad))
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `1 − CIoU(decoded box, gt box)` and its gradient through the logistic box decode.
pub fn loss_box<T: Scalar>(raw: &[T], slot: Slot, spec: &AnchorSpec<T>, gt_box: &BBox<T>) -> Result<(T, CellGrad<T>)> {
    if !(gt_box.w > T::zero() && gt_box.h > T::zero()) {
        return Err(Error::DegenerateBox {
            w: gt_box.w.as_f64(),
            h: gt_box.h.as_f64(),
        });
    }
    let scale = spec.scale(slot.scale);
    let st = T::lit(scale.stride as f64);
    let [aw, ah] = scale.anchors[slot.anchor];
    let two = T::lit(2.0);
    let half = T::lit(0.5);

    let sx = sigmoid(raw[CH_X]);
    let sy = sigmoid(raw[CH_Y]);
    let sw = sigmoid(raw[CH_W]);
    let sh = sigmoid(raw[CH_H]);
    let pred = BBox::new(
        (two * sx - half + T::lit(slot.j as f64)) * st,
        (two * sy - half + T::lit(slot.i as f64)) * st,
        T::lit(4.0) * sw * sw * aw,
        T::lit(4.0) * sh * sh * ah,
    );
    let (c, dc) = ciou_with_grad(&pred, gt_box);

    // d decoded / d raw
    let dcx = two * sx * (T::one() - sx) * st;
    let dcy = two * sy * (T::one() - sy) * st;
    let dw = T::lit(8.0) * sw * sw * (T::one() - sw) * aw;
    let dh = T::lit(8.0) * sh * sh * (T::one() - sh) * ah;

    let mut grad = [T::zero(); NUM_CHANNELS];
    grad[CH_X] = -dc[0] * dcx;
    grad[CH_Y] = -dc[1] * dcy;
    grad[CH_W] = -dc[2] * dw;
    grad[CH_H] = -dc[3] * dh;
    Ok((T::one() - c, grad))
}

/// Keypoint-confidence BCE over all 17 keypoints, target `δ(v > 0)`.
pub fn loss_kpt_conf<T: Scalar>(raw: &[T], gt: &[GtKeypoint<T>; NUM_KEYPOINTS]) -> (T, CellGrad<T>) {
    let mut grad = [T::zero(); NUM_CHANNELS];
    let mut value = T::zero();
    for (n, g) in gt.iter().enumerate() {
        let y = if g.v.is_labeled() { T::one() } else { T::zero() };
        let t = raw[kpt_conf(n)];
        value += bce_with_logit(t, y);
        grad[kpt_conf(n)] = sigmoid(t) - y;
    }
    (value, grad)
}

/// Objectness + class BCE for a matched cell, objectness only otherwise.
/// Returns the value and `[∂/∂t_obj, ∂/∂t_cls]`.
pub fn loss_cls<T: Scalar>(t_obj: T, t_cls: T, matched: bool) -> (T, [T; 2]) {
    if matched {
        (
            bce_with_logit(t_obj, T::one()) + bce_with_logit(t_cls, T::one()),
            [sigmoid(t_obj) - T::one(), sigmoid(t_cls) - T::one()],
        )
    } else {
        (bce_with_logit(t_obj, T::zero()), [sigmoid(t_obj), T::zero()])
    }
}

/// Settings for [`total_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    pub weights: LossWeights<T>,
    pub kpt_weights: KptWeights<T>,
    pub kpt_loss: KptLossKind,
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            kpt_weights: KptWeights::default(),
            kpt_loss: KptLossKind::Oks,
        }
    }
}

/// Sparse gradient of the total loss over a head tensor.
///
/// Assigned cells carry a full 57-channel gradient; every other cell only has
/// an objectness gradient, stored densely in flat cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad<T> {
    pub assigned: Vec<(Slot, CellGrad<T>)>,
    /// Objectness gradient of unassigned cells (zero at assigned cells).
    pub unassigned_obj: Vec<T>,
}

impl<T: Scalar> HeadGrad<T> {
    /// Dense gradient with the same layout as `heads`.
    pub fn to_dense(&self, heads: &HeadTensor<T>) -> HeadTensor<T> {
        let mut out = heads.clone();
        let mut flat = 0usize;
        for st in out.scales.iter_mut() {
            for v in st.data.iter_mut() {
                *v = T::zero();
            }
            for c in 0..st.num_cells() {
                st.data[c * NUM_CHANNELS + CH_OBJ] = self.unassigned_obj[flat + c];
            }
            flat += st.num_cells();
        }
        for (slot, g) in &self.assigned {
            let cell = out.slot_mut(*slot);
            for (d, v) in cell.iter_mut().zip(g.iter()) {
                *d += *v;
            }
        }
        out
    }

    /// `heads ← heads − step · grad`.
    pub fn descend(&self, heads: &mut HeadTensor<T>, step: T) {
        let mut flat = 0usize;
        for st in heads.scales.iter_mut() {
            let n = st.num_cells();
            for (c, g) in self.unassigned_obj[flat..flat + n].iter().enumerate() {
                st.data[c * NUM_CHANNELS + CH_OBJ] -= step * *g;
            }
            flat += n;
        }
        for (slot, g) in &self.assigned {
            for (d, v) in heads.slot_mut(*slot).iter_mut().zip(g.iter()) {
                *d -= step * *v;
            }
        }
    }
}

/// Component sums (unweighted) and the weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub cls: T,
    pub bbox: T,
    pub kpts: T,
    pub kpts_conf: T,
    pub total: T,
    pub grad: HeadGrad<T>,
    /// Indices of ground truths without labeled keypoints (no keypoint loss).
    pub flagged: Vec<usize>,
}

/// Weighted total loss summed over every assigned cell, plus objectness over
/// unassigned cells.
pub fn total_loss<T: Scalar>(
    heads: &HeadTensor<T>,
    spec: &AnchorSpec<T>,
    assignments: &[Assignment],
    gts: &[PoseInstance<T>],
    cfg: &LossConfig<T>,
) -> Result<LossBreakdown<T>> {
    let w = &cfg.weights;
    let n_cells = heads.num_cells();
    let mut assigned_mask = vec![false; n_cells];
    let (mut cls, mut bbox, mut kpts, mut kpts_conf) = (T::zero(), T::zero(), T::zero(), T::zero());
    let mut assigned = Vec::with_capacity(assignments.len());
    let mut flagged = Vec::new();

    for a in assignments {
        let gt = gts
            .get(a.gt_index)
            .ok_or_else(|| Error::Config(format!("assignment references missing gt {}", a.gt_index)))?;
        let raw = heads.slot(a.slot);
        let flat = heads.flat_index(a.slot);
        if assigned_mask[flat] {
            return Err(Error::Config(format!("slot {:?} assigned twice", a.slot)));
        }
        assigned_mask[flat] = true;

        let mut g = [T::zero(); NUM_CHANNELS];
        let (lc, gc) = loss_cls(raw[CH_OBJ], raw[CH_CLS], true);
        cls += lc;
        g[CH_OBJ] = w.cls * gc[0];
        g[CH_CLS] = w.cls * gc[1];

        let (lb, gb) = loss_box(raw, a.slot, spec, &gt.bbox)?;
        bbox += lb;
        for c in [CH_X, CH_Y, CH_W, CH_H] {
            g[c] += w.bbox * gb[c];
        }

        if gt.num_labeled() > 0 {
            let (lk, gk) = loss_kpts(cfg.kpt_loss, raw, a.slot, spec, gt, &cfg.kpt_weights)?;
            kpts += lk;
            for (d, v) in g.iter_mut().zip(gk.iter()) {
                *d += w.kpts * *v;
            }
        } else if !flagged.contains(&a.gt_index) {
            flagged.push(a.gt_index);
        }

        let (lkc, gkc) = loss_kpt_conf(raw, &gt.keypoints);
        kpts_conf += lkc;
        for (d, v) in g.iter_mut().zip(gkc.iter()) {
            *d += w.kpts_conf * *v;
        }
        assigned.push((a.slot, g));
    }

    let mut unassigned_obj = vec![T::zero(); n_cells];
    let mut flat = 0usize;
    for st in &heads.scales {
        for c in 0..st.num_cells() {
            if !assigned_mask[flat] {
                let t = st.data[c * NUM_CHANNELS + CH_OBJ];
                let (l, g) = loss_cls(t, T::zero(), false);
                cls += l;
                unassigned_obj[flat] = w.cls * g[0];
            }
            flat += 1;
        }
    }

    let total = w.combine(cls, bbox, kpts, kpts_conf);
    Ok(LossBreakdown {
        cls,
        bbox,
        kpts,
        kpts_conf,
        total,
        grad: HeadGrad {
            assigned,
            unassigned_obj,
        },
        flagged,
    })
}
