//! Axis-aligned boxes in center form, IoU and Complete-IoU.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Guard added to the CIoU trade-off denominator.
const ALPHA_EPS: f64 = 1e-9;
/// Floor applied to heights inside the aspect-ratio arctangent.
const ASPECT_H_EPS: f64 = 1e-9;

/// Axis-aligned box stored as center, width and height in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox<T> {
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(cx: T, cy: T, w: T, h: T) -> Self {
        BBox { cx, cy, w, h }
    }

    /// Builds a box from COCO `[x_topleft, y_topleft, w, h]`.
    pub fn from_xywh(x: T, y: T, w: T, h: T) -> Self {
        let half = T::lit(0.5);
        BBox::new(x + w * half, y + h * half, w, h)
    }

    /// COCO `[x_topleft, y_topleft, w, h]`.
    pub fn to_xywh(&self) -> [T; 4] {
        let (x1, y1, _, _) = self.corners();
        [x1, y1, self.w, self.h]
    }

    pub fn corners(&self) -> (T, T, T, T) {
        let half = T::lit(0.5);
        (
            self.cx - self.w * half,
            self.cy - self.h * half,
            self.cx + self.w * half,
            self.cy + self.h * half,
        )
    }

    pub fn area(&self) -> T {
        self.w.max(T::zero()) * self.h.max(T::zero())
    }

    pub fn contains(&self, x: T, y: T) -> bool {
        let (x1, y1, x2, y2) = self.corners();
        x >= x1 && x <= x2 && y >= y1 && y <= y2
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        BBox::new(self.cx + dx, self.cy + dy, self.w, self.h)
    }

    pub fn scaled(&self, gamma: T) -> Self {
        BBox::new(self.cx * gamma, self.cy * gamma, self.w * gamma, self.h * gamma)
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox::new(self.cx.cast(), self.cy.cast(), self.w.cast(), self.h.cast())
    }
}

fn intersection<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(T::zero());
    let ih = (ay2.min(by2) - ay1.max(by1)).max(T::zero());
    iw * ih
}

/// Intersection over union; 0 when the union is empty.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union > T::zero() {
        inter / union
    } else {
        T::zero()
    }
}

/// Complete IoU: `IoU - ρ²/c² - α·v`.
pub fn ciou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    ciou_with_grad(a, b).0
}

/// CIoU together with its gradient with respect to `pred` as `[∂cx, ∂cy, ∂w, ∂h]`.
///
/// The trade-off weight α is differentiated as well (it is not treated as a
/// constant), so the gradient is the exact derivative of the returned value.
/// At the measure-zero kinks of `min`/`max` the derivative of the `gt` side is used.
pub fn ciou_with_grad<T: Scalar>(pred: &BBox<T>, gt: &BBox<T>) -> (T, [T; 4]) {
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    let half = T::lit(0.5);

    let (px1, py1, px2, py2) = pred.corners();
    let (gx1, gy1, gx2, gy2) = gt.corners();

    // corner derivatives w.r.t. (cx, cy, w, h)
    let d_px1 = [one, zero, -half, zero];
    let d_px2 = [one, zero, half, zero];
    let d_py1 = [zero, one, zero, -half];
    let d_py2 = [zero, one, zero, half];
    let none = [zero; 4];

    let pick = |cond: bool, d: [T; 4]| if cond { d } else { none };
    let sub = |a: [T; 4], b: [T; 4]| [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]];
    let axpy = |s: T, a: [T; 4], t: T, b: [T; 4]| {
        [
            s * a[0] + t * b[0],
            s * a[1] + t * b[1],
            s * a[2] + t * b[2],
            s * a[3] + t * b[3],
        ]
    };

    // intersection
    let iw_raw = px2.min(gx2) - px1.max(gx1);
    let ih_raw = py2.min(gy2) - py1.max(gy1);
    let (iw, d_iw) = if iw_raw > zero {
        (iw_raw, sub(pick(px2 < gx2, d_px2), pick(px1 > gx1, d_px1)))
    } else {
        (zero, none)
    };
    let (ih, d_ih) = if ih_raw > zero {
        (ih_raw, sub(pick(py2 < gy2, d_py2), pick(py1 > gy1, d_py1)))
    } else {
        (zero, none)
    };
    let inter = iw * ih;
    let d_inter = axpy(ih, d_iw, iw, d_ih);

    let area_p = pred.area();
    let d_area_p = [zero, zero, pred.h, pred.w];
    let union = area_p + gt.area() - inter;
    let d_union = sub(d_area_p, d_inter);
    let (iou_v, d_iou) = if union > zero {
        let u2 = union * union;
        (inter / union, axpy(one / union, d_inter, -inter / u2, d_union))
    } else {
        (zero, none)
    };

    // normalized center distance
    let cw = px2.max(gx2) - px1.min(gx1);
    let ch = py2.max(gy2) - py1.min(gy1);
    let d_cw = sub(pick(px2 > gx2, d_px2), pick(px1 < gx1, d_px1));
    let d_ch = sub(pick(py2 > gy2, d_py2), pick(py1 < gy1, d_py1));
    let c2 = cw * cw + ch * ch;
    let d_c2 = axpy(two * cw, d_cw, two * ch, d_ch);
    let dx = pred.cx - gt.cx;
    let dy = pred.cy - gt.cy;
    let rho2 = dx * dx + dy * dy;
    let d_rho2 = [two * dx, two * dy, zero, zero];
    let (dist, d_dist) = if c2 > zero {
        (rho2 / c2, axpy(one / c2, d_rho2, -rho2 / (c2 * c2), d_c2))
    } else {
        (zero, none)
    };

    // aspect-ratio consistency
    let h_eps = T::lit(ASPECT_H_EPS);
    let hp = pred.h.max(h_eps);
    let hg = gt.h.max(h_eps);
    let theta_p = (pred.w / hp).atan();
    let theta_g = (gt.w / hg).atan();
    let denom = hp * hp + pred.w * pred.w;
    let d_theta_p = [
        zero,
        zero,
        hp / denom,
        if pred.h > h_eps { -pred.w / denom } else { zero },
    ];
    let k = T::lit(4.0) / (T::PI() * T::PI());
    let diff = theta_g - theta_p;
    let v = k * diff * diff;
    let d_v = axpy(-two * k * diff, d_theta_p, zero, none);
    let alpha = v / (one - iou_v + v + T::lit(ALPHA_EPS));

    let value = iou_v - dist - alpha * v;
    let mut grad = [zero; 4];
    for c in 0..4 {
        grad[c] = (one - alpha * alpha) * d_iou[c] - d_dist[c] - alpha * (two - alpha) * d_v[c];
    }
    (value, grad)
}
