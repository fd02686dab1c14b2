//! Raw head tensors, the anchor-relative decode/encode pair, and letterbox geometry.
//!
//! Channel layout of one anchor cell:
//! `[t_x, t_y, t_w, t_h, t_obj, t_cls, (t_kx, t_ky, t_kconf) × 17]`.
//!
//! Box center and size go through the logistic decode of the base detector,
//! which bounds the center to (−0.5, 1.5) cells and the size to (0, 4)× the anchor.
//! Keypoint coordinates are affine in the raw value and therefore unbounded,
//! so a keypoint may land anywhere, including outside its own box.

use crate::anchors::{build_grid, AnchorSpec, GridDims, ANCHORS_PER_SCALE, NUM_SCALES};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::pose::{Detection, PoseInstance, PredKeypoint, NUM_KEYPOINTS};
use crate::scalar::{logit, sigmoid, Scalar};

pub const NUM_CHANNELS: usize = 6 + 3 * NUM_KEYPOINTS;
pub const CH_X: usize = 0;
pub const CH_Y: usize = 1;
pub const CH_W: usize = 2;
pub const CH_H: usize = 3;
pub const CH_OBJ: usize = 4;
pub const CH_CLS: usize = 5;
pub const CH_KPT: usize = 6;

#[inline]
pub const fn kpt_x(n: usize) -> usize {
    CH_KPT + 3 * n
}
#[inline]
pub const fn kpt_y(n: usize) -> usize {
    CH_KPT + 3 * n + 1
}
#[inline]
pub const fn kpt_conf(n: usize) -> usize {
    CH_KPT + 3 * n + 2
}

/// Address of one anchor cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot {
    pub scale: usize,
    pub i: usize,
    pub j: usize,
    pub anchor: usize,
}

/// Raw output of one scale, `[anchor, row, col, channel]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTensor<T> {
    pub dims: GridDims,
    pub data: Vec<T>,
}

impl<T: Scalar> ScaleTensor<T> {
    pub fn zeros(dims: GridDims) -> Self {
        ScaleTensor {
            dims,
            data: vec![T::zero(); ANCHORS_PER_SCALE * dims.cells() * NUM_CHANNELS],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [ANCHORS_PER_SCALE, self.dims.rows, self.dims.cols, NUM_CHANNELS]
    }

    #[inline]
    pub fn cell_index(&self, anchor: usize, i: usize, j: usize) -> usize {
        (anchor * self.dims.rows + i) * self.dims.cols + j
    }

    #[inline]
    pub fn cell(&self, anchor: usize, i: usize, j: usize) -> &[T] {
        let o = self.cell_index(anchor, i, j) * NUM_CHANNELS;
        &self.data[o..o + NUM_CHANNELS]
    }

    #[inline]
    pub fn cell_mut(&mut self, anchor: usize, i: usize, j: usize) -> &mut [T] {
        let o = self.cell_index(anchor, i, j) * NUM_CHANNELS;
        &mut self.data[o..o + NUM_CHANNELS]
    }

    pub fn num_cells(&self) -> usize {
        ANCHORS_PER_SCALE * self.dims.cells()
    }
}

/// Raw per-scale head outputs for one square input image.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor<T> {
    pub input_size: u32,
    pub scales: Vec<ScaleTensor<T>>,
}

impl<T: Scalar> HeadTensor<T> {
    pub fn zeros(spec: &AnchorSpec<T>, input_size: u32) -> Result<Self> {
        let grid = build_grid(spec, input_size)?;
        Ok(HeadTensor {
            input_size,
            scales: grid.iter().map(|&d| ScaleTensor::zeros(d)).collect(),
        })
    }

    pub fn slot(&self, slot: Slot) -> &[T] {
        self.scales[slot.scale].cell(slot.anchor, slot.i, slot.j)
    }

    pub fn slot_mut(&mut self, slot: Slot) -> &mut [T] {
        self.scales[slot.scale].cell_mut(slot.anchor, slot.i, slot.j)
    }

    /// Total number of anchor cells over all scales.
    pub fn num_cells(&self) -> usize {
        self.scales.iter().map(|s| s.num_cells()).sum()
    }

    /// Flat anchor-cell index across scales (scale-major, then memory order).
    pub fn flat_index(&self, slot: Slot) -> usize {
        let before: usize = self.scales[..slot.scale].iter().map(|s| s.num_cells()).sum();
        before + self.scales[slot.scale].cell_index(slot.anchor, slot.i, slot.j)
    }

    /// Iterates slots in flat-index order.
    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.scales.iter().enumerate().flat_map(|(scale, t)| {
            let (rows, cols) = (t.dims.rows, t.dims.cols);
            (0..ANCHORS_PER_SCALE).flat_map(move |anchor| {
                (0..rows).flat_map(move |i| (0..cols).map(move |j| Slot { scale, i, j, anchor }))
            })
        })
    }

    /// Verifies the tensor agrees with `spec` and holds only finite values.
    pub fn validate(&self, spec: &AnchorSpec<T>) -> Result<()> {
        if self.scales.len() != NUM_SCALES {
            return Err(Error::ShapeMismatch {
                scale: self.scales.len().min(NUM_SCALES),
                detail: format!("expected {NUM_SCALES} scales, found {}", self.scales.len()),
            });
        }
        let grid = build_grid(spec, self.input_size)?;
        for (s, (t, g)) in self.scales.iter().zip(grid.iter()).enumerate() {
            if t.dims != *g {
                return Err(Error::ShapeMismatch {
                    scale: s,
                    detail: format!(
                        "expected stride {} grid {}x{}, found stride {} grid {}x{}",
                        g.stride, g.rows, g.cols, t.dims.stride, t.dims.rows, t.dims.cols
                    ),
                });
            }
            let expect = ANCHORS_PER_SCALE * g.cells() * NUM_CHANNELS;
            if t.data.len() != expect {
                return Err(Error::ShapeMismatch {
                    scale: s,
                    detail: format!("expected {expect} values, found {}", t.data.len()),
                });
            }
            if let Some(pos) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch {
                    scale: s,
                    detail: format!("non-finite value at flat position {pos}"),
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> HeadTensor<U> {
        HeadTensor {
            input_size: self.input_size,
            scales: self
                .scales
                .iter()
                .map(|s| ScaleTensor {
                    dims: s.dims,
                    data: s.data.iter().map(|v| v.cast()).collect(),
                })
                .collect(),
        }
    }
}

/// Decodes the 57 raw channels of one anchor cell.
pub fn decode_cell<T: Scalar>(raw: &[T], slot: Slot, spec: &AnchorSpec<T>, image_id: u64) -> Detection<T> {
    debug_assert_eq!(raw.len(), NUM_CHANNELS);
    let scale = spec.scale(slot.scale);
    let st = T::lit(scale.stride as f64);
    let [aw, ah] = scale.anchors[slot.anchor];
    let (j, i) = (T::lit(slot.j as f64), T::lit(slot.i as f64));
    let two = T::lit(2.0);
    let half = T::lit(0.5);

    let sx = sigmoid(raw[CH_X]);
    let sy = sigmoid(raw[CH_Y]);
    let sw = two * sigmoid(raw[CH_W]);
    let sh = two * sigmoid(raw[CH_H]);
    let bbox = BBox::new(
        (two * sx - half + j) * st,
        (two * sy - half + i) * st,
        sw * sw * aw,
        sh * sh * ah,
    );
    let mut keypoints = [PredKeypoint::default(); NUM_KEYPOINTS];
    for (n, k) in keypoints.iter_mut().enumerate() {
        k.x = (two * raw[kpt_x(n)] - half + j) * st;
        k.y = (two * raw[kpt_y(n)] - half + i) * st;
        k.conf = sigmoid(raw[kpt_conf(n)]);
    }
    Detection {
        image_id,
        bbox,
        box_conf: sigmoid(raw[CH_OBJ]),
        class_conf: sigmoid(raw[CH_CLS]),
        keypoints,
    }
}

/// One un-filtered detection per anchor cell, in flat-index order.
pub fn decode<T: Scalar>(heads: &HeadTensor<T>, spec: &AnchorSpec<T>, image_id: u64) -> Result<Vec<Detection<T>>> {
    heads.validate(spec)?;
    Ok(heads
        .slots()
        .map(|slot| decode_cell(heads.slot(slot), slot, spec, image_id))
        .collect())
}

/// Training target for one assigned anchor cell.
///
/// Geometry channels hold raw (pre-activation) values whose decode reproduces
/// the ground truth. The objectness, class and keypoint-confidence channels hold
/// target probabilities in {0, 1}. `mask[c]` is false for channels excluded from
/// the loss (coordinates of keypoints with `v = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodedTarget<T> {
    pub values: [T; NUM_CHANNELS],
    pub mask: [bool; NUM_CHANNELS],
}

impl<T: Scalar> EncodedTarget<T> {
    /// Replaces probability targets by logits of `±saturation`, yielding a raw
    /// vector that can be written into a head tensor.
    pub fn to_raw(&self, saturation: T) -> [T; NUM_CHANNELS] {
        let mut raw = self.values;
        let conf = |p: T| if p > T::lit(0.5) { saturation } else { -saturation };
        raw[CH_OBJ] = conf(raw[CH_OBJ]);
        raw[CH_CLS] = conf(raw[CH_CLS]);
        for n in 0..NUM_KEYPOINTS {
            raw[kpt_conf(n)] = conf(raw[kpt_conf(n)]);
            if !self.mask[kpt_x(n)] {
                raw[kpt_x(n)] = T::zero();
                raw[kpt_y(n)] = T::zero();
            }
        }
        raw
    }
}

/// Inverse of [`decode_cell`] for an assigned ground truth.
pub fn encode<T: Scalar>(gt: &PoseInstance<T>, slot: Slot, spec: &AnchorSpec<T>) -> Result<EncodedTarget<T>> {
    if slot.scale >= NUM_SCALES || slot.anchor >= ANCHORS_PER_SCALE {
        return Err(Error::Encode(format!("slot {slot:?} outside the anchor spec")));
    }
    let scale = spec.scale(slot.scale);
    let st = T::lit(scale.stride as f64);
    let [aw, ah] = scale.anchors[slot.anchor];
    let (j, i) = (T::lit(slot.j as f64), T::lit(slot.i as f64));
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let lo = -half;
    let hi = T::lit(1.5);
    let four = T::lit(4.0);

    let ox = gt.bbox.cx / st - j;
    let oy = gt.bbox.cy / st - i;
    if !(ox > lo && ox < hi && oy > lo && oy < hi) {
        return Err(Error::Encode(format!(
            "center offset ({}, {}) cells outside (-0.5, 1.5) for {slot:?}",
            ox.as_f64(),
            oy.as_f64()
        )));
    }
    let rw = gt.bbox.w / aw;
    let rh = gt.bbox.h / ah;
    if !(rw > T::zero() && rw < four && rh > T::zero() && rh < four) {
        return Err(Error::Encode(format!(
            "size ratio ({}, {}) to anchor outside (0, 4) for {slot:?}",
            rw.as_f64(),
            rh.as_f64()
        )));
    }

    let mut values = [T::zero(); NUM_CHANNELS];
    let mut mask = [true; NUM_CHANNELS];
    values[CH_X] = logit((ox + half) / two);
    values[CH_Y] = logit((oy + half) / two);
    values[CH_W] = logit(rw.sqrt() / two);
    values[CH_H] = logit(rh.sqrt() / two);
    values[CH_OBJ] = T::one();
    values[CH_CLS] = T::one();
    for (n, k) in gt.keypoints.iter().enumerate() {
        if k.v.is_labeled() {
            values[kpt_x(n)] = (k.x / st - j + half) / two;
            values[kpt_y(n)] = (k.y / st - i + half) / two;
            values[kpt_conf(n)] = T::one();
        } else {
            mask[kpt_x(n)] = false;
            mask[kpt_y(n)] = false;
            values[kpt_conf(n)] = T::zero();
        }
    }
    Ok(EncodedTarget { values, mask })
}

/// Aspect-preserving resize of the long side to `dst`, padding the short side
/// at the bottom (landscape) or right (portrait).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetterboxTransform<T> {
    pub scale: T,
    pub pad_right: T,
    pub pad_bottom: T,
    pub src_w: T,
    pub src_h: T,
    pub dst: T,
}

pub fn letterbox<T: Scalar>(src_w: T, src_h: T, dst: T) -> LetterboxTransform<T> {
    let scale = dst / src_w.max(src_h);
    let pad = |side: T| if side >= src_w.max(src_h) { T::zero() } else { dst - side * scale };
    LetterboxTransform {
        scale,
        pad_right: pad(src_w),
        pad_bottom: pad(src_h),
        src_w,
        src_h,
        dst,
    }
}

impl<T: Scalar> LetterboxTransform<T> {
    pub fn identity(size: T) -> Self {
        letterbox(size, size, size)
    }

    /// Source image point to letterboxed input point.
    pub fn forward(&self, x: T, y: T) -> (T, T) {
        (x * self.scale, y * self.scale)
    }

    /// Letterboxed input point back to the source image.
    pub fn inverse(&self, x: T, y: T) -> (T, T) {
        (x / self.scale, y / self.scale)
    }

    /// Maps a source-image ground truth into letterboxed coordinates.
    pub fn forward_instance(&self, gt: &PoseInstance<T>) -> PoseInstance<T> {
        gt.scaled(self.scale)
    }
}

/// Maps a detection from letterboxed input coordinates to the source image.
pub fn unletterbox<T: Scalar>(det: &Detection<T>, t: &LetterboxTransform<T>) -> Detection<T> {
    let mut out = det.clone();
    let b = det.bbox;
    out.bbox = BBox::new(b.cx / t.scale, b.cy / t.scale, b.w / t.scale, b.h / t.scale);
    for k in out.keypoints.iter_mut() {
        let (x, y) = t.inverse(k.x, k.y);
        k.x = x;
        k.y = y;
    }
    out
}
