//! Person-level domain types: ground-truth instances, decoded detections and
//! the per-keypoint OKS falloff constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::Scalar;

pub const NUM_KEYPOINTS: usize = 17;

/// COCO keypoint order used for every fixed-length keypoint array.
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Published COCO per-keypoint sigmas, in [`KEYPOINT_NAMES`] order.
pub const COCO_SIGMAS: [f64; NUM_KEYPOINTS] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

/// COCO person skeleton (1-based keypoint indices).
pub const COCO_SKELETON: [[u32; 2]; 19] = [
    [16, 14],
    [14, 12],
    [17, 15],
    [15, 13],
    [12, 13],
    [6, 12],
    [7, 13],
    [6, 7],
    [6, 8],
    [7, 9],
    [8, 10],
    [9, 11],
    [2, 3],
    [1, 2],
    [1, 3],
    [2, 4],
    [3, 5],
    [4, 6],
    [5, 7],
];

/// COCO visibility flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Visibility {
    /// Outside the field of view or not annotated.
    #[default]
    Unlabeled,
    /// Annotated but occluded.
    Occluded,
    Visible,
}

impl Visibility {
    pub fn from_flag(v: u8) -> Option<Self> {
        match v {
            0 => Some(Visibility::Unlabeled),
            1 => Some(Visibility::Occluded),
            2 => Some(Visibility::Visible),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Visibility::Unlabeled => 0,
            Visibility::Occluded => 1,
            Visibility::Visible => 2,
        }
    }

    /// `δ(v > 0)`.
    pub fn is_labeled(self) -> bool {
        self != Visibility::Unlabeled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GtKeypoint<T> {
    pub x: T,
    pub y: T,
    pub v: Visibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseInstance<T> {
    pub id: u64,
    pub image_id: u64,
    pub bbox: BBox<T>,
    pub keypoints: [GtKeypoint<T>; NUM_KEYPOINTS],
    /// Object scale squared (`s²` in OKS).
    pub area: T,
    pub iscrowd: bool,
}

impl<T: Scalar> PoseInstance<T> {
    pub fn num_labeled(&self) -> usize {
        self.keypoints.iter().filter(|k| k.v.is_labeled()).count()
    }

    /// Scales coordinates by `gamma` and the area by `gamma²`.
    pub fn scaled(&self, gamma: T) -> Self {
        let mut out = self.clone();
        out.bbox = self.bbox.scaled(gamma);
        for k in out.keypoints.iter_mut() {
            k.x *= gamma;
            k.y *= gamma;
        }
        out.area *= gamma * gamma;
        out
    }

    pub fn cast<U: Scalar>(&self) -> PoseInstance<U> {
        PoseInstance {
            id: self.id,
            image_id: self.image_id,
            bbox: self.bbox.cast(),
            keypoints: self.keypoints.map(|k| GtKeypoint {
                x: k.x.cast(),
                y: k.y.cast(),
                v: k.v,
            }),
            area: self.area.cast(),
            iscrowd: self.iscrowd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredKeypoint<T> {
    pub x: T,
    pub y: T,
    pub conf: T,
    /// Cleared by post-processing when `conf` falls at or below the keypoint threshold.
    pub retained: bool,
}

impl<T: Scalar> Default for PredKeypoint<T> {
    fn default() -> Self {
        PredKeypoint {
            x: T::zero(),
            y: T::zero(),
            conf: T::zero(),
            retained: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub image_id: u64,
    pub bbox: BBox<T>,
    pub box_conf: T,
    pub class_conf: T,
    pub keypoints: [PredKeypoint<T>; NUM_KEYPOINTS],
}

impl<T: Scalar> Detection<T> {
    /// Detection score, `box_conf · class_conf`.
    pub fn score(&self) -> T {
        self.box_conf * self.class_conf
    }

    pub fn cast<U: Scalar>(&self) -> Detection<U> {
        Detection {
            image_id: self.image_id,
            bbox: self.bbox.cast(),
            box_conf: self.box_conf.cast(),
            class_conf: self.class_conf.cast(),
            keypoints: self.keypoints.map(|k| PredKeypoint {
                x: k.x.cast(),
                y: k.y.cast(),
                conf: k.conf.cast(),
                retained: k.retained,
            }),
        }
    }
}

/// Per-keypoint falloff constants `k_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KptWeights<T> {
    pub k: [T; NUM_KEYPOINTS],
}

impl<T: Scalar> KptWeights<T> {
    pub fn new(k: [T; NUM_KEYPOINTS]) -> Result<Self> {
        if k.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::Config("keypoint weights must be positive and finite".into()));
        }
        Ok(KptWeights { k })
    }
}

impl<T: Scalar> Default for KptWeights<T> {
    /// Twice the COCO sigmas.
    fn default() -> Self {
        KptWeights {
            k: COCO_SIGMAS.map(|s| T::lit(2.0 * s)),
        }
    }
}
