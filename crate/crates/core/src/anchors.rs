//! Anchor priors per detection scale and grid construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NUM_SCALES: usize = 4;
pub const ANCHORS_PER_SCALE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec<T> {
    /// Input pixels per grid cell.
    pub stride: u32,
    /// Anchor shapes as `[w, h]` in pixels.
    pub anchors: [[T; 2]; ANCHORS_PER_SCALE],
}

/// Four detection scales with three anchors each, strides strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec<T> {
    scales: [ScaleSpec<T>; NUM_SCALES],
}

impl<T: Scalar> AnchorSpec<T> {
    pub fn new(scales: [ScaleSpec<T>; NUM_SCALES]) -> Result<Self> {
        for (s, scale) in scales.iter().enumerate() {
            if scale.stride == 0 {
                return Err(Error::AnchorSpec(format!("scale {s}: stride must be positive")));
            }
            if s > 0 && scale.stride <= scales[s - 1].stride {
                return Err(Error::AnchorSpec(format!(
                    "scale {s}: strides must be strictly increasing ({} after {})",
                    scale.stride,
                    scales[s - 1].stride
                )));
            }
            for a in &scale.anchors {
                if !(a[0] > T::zero() && a[1] > T::zero()) || !a[0].is_finite() || !a[1].is_finite() {
                    return Err(Error::AnchorSpec(format!("scale {s}: anchor sizes must be positive")));
                }
            }
        }
        Ok(AnchorSpec { scales })
    }

    pub fn scales(&self) -> &[ScaleSpec<T>; NUM_SCALES] {
        &self.scales
    }

    pub fn scale(&self, s: usize) -> &ScaleSpec<T> {
        &self.scales[s]
    }

    pub fn max_stride(&self) -> u32 {
        self.scales[NUM_SCALES - 1].stride
    }

    /// Multiplies strides and anchor sizes by an integer factor.
    pub fn scaled(&self, factor: u32) -> Self {
        let f = T::lit(factor as f64);
        AnchorSpec {
            scales: self.scales.map(|s| ScaleSpec {
                stride: s.stride * factor,
                anchors: s.anchors.map(|[w, h]| [w * f, h * f]),
            }),
        }
    }

    pub fn cast<U: Scalar>(&self) -> AnchorSpec<U> {
        AnchorSpec {
            scales: self.scales.map(|s| ScaleSpec {
                stride: s.stride,
                anchors: s.anchors.map(|[w, h]| [w.cast(), h.cast()]),
            }),
        }
    }
}

impl<T: Scalar> Default for AnchorSpec<T> {
    /// P3–P6 strides {8, 16, 32, 64} with the base detector's 4-scale anchor set.
    fn default() -> Self {
        let mk = |stride: u32, a: [[f64; 2]; 3]| ScaleSpec {
            stride,
            anchors: a.map(|[w, h]| [T::lit(w), T::lit(h)]),
        };
        AnchorSpec {
            scales: [
                mk(8, [[19.0, 27.0], [44.0, 40.0], [38.0, 94.0]]),
                mk(16, [[96.0, 68.0], [86.0, 152.0], [180.0, 137.0]]),
                mk(32, [[140.0, 301.0], [303.0, 264.0], [238.0, 542.0]]),
                mk(64, [[436.0, 615.0], [739.0, 380.0], [925.0, 792.0]]),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub stride: u32,
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Square grid per scale for a square input of `input_size` pixels.
pub fn build_grid<T: Scalar>(spec: &AnchorSpec<T>, input_size: u32) -> Result<[GridDims; NUM_SCALES]> {
    for s in spec.scales() {
        if input_size == 0 || !input_size.is_multiple_of(s.stride) {
            return Err(Error::IndivisibleInput {
                input_size,
                stride: s.stride,
            });
        }
    }
    Ok(spec.scales().map(|s| {
        let n = (input_size / s.stride) as usize;
        GridDims {
            stride: s.stride,
            rows: n,
            cols: n,
        }
    }))
}
