//! Seeded synthetic scenes of articulated stick-figure persons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSpec;
use crate::assign::{assign, AssignConfig};
use crate::codec::{encode, HeadTensor, CH_CLS, CH_OBJ, NUM_CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::io::{CocoImage, GtSet};
use crate::pose::{GtKeypoint, PoseInstance, Visibility, NUM_KEYPOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    /// Inclusive range of persons per image.
    pub persons: (usize, usize),
    /// Inclusive range of person box heights in pixels, sampled log-uniformly.
    pub heights: (f64, f64),
    pub image_size: u32,
    /// Probability that a labeled keypoint is flagged occluded (`v = 1`).
    pub occlusion_rate: f64,
    /// Probability that a keypoint is unlabeled (`v = 0`); takes precedence over occlusion.
    pub out_of_view_rate: f64,
    /// Probability that a person has one wrist pushed outside its box.
    pub outside_box_rate: f64,
    /// Maximum IoU between the boxes of two persons in one image.
    pub max_overlap_iou: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_images: 10,
            persons: (1, 4),
            heights: (64.0, 160.0),
            image_size: 320,
            occlusion_rate: 0.1,
            out_of_view_rate: 0.05,
            outside_box_rate: 0.0,
            max_overlap_iou: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.persons.0 > self.persons.1 {
            return bad(format!("persons range {:?} is empty", self.persons));
        }
        let (lo, hi) = self.heights;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("height range {:?} is invalid", self.heights));
        }
        if hi > 0.9 * self.image_size as f64 {
            return bad(format!(
                "max height {hi} exceeds 90% of the {} px image",
                self.image_size
            ));
        }
        for (name, r) in [
            ("occlusion_rate", self.occlusion_rate),
            ("out_of_view_rate", self.out_of_view_rate),
            ("outside_box_rate", self.outside_box_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        if !(self.max_overlap_iou >= 0.0 && self.max_overlap_iou < 1.0) {
            return bad(format!("max_overlap_iou {} outside [0, 1)", self.max_overlap_iou));
        }
        Ok(())
    }
}

/// One synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub image_id: u64,
    pub image_size: u32,
    pub rng_seed: u64,
    pub instances: Vec<PoseInstance<f64>>,
}

impl SynthScene {
    /// The same scene with every coordinate, area and the image size scaled by `factor`.
    pub fn scaled(&self, factor: u32) -> Self {
        let f = factor as f64;
        SynthScene {
            image_id: self.image_id,
            image_size: self.image_size * factor,
            rng_seed: self.rng_seed,
            instances: self.instances.iter().map(|g| g.scaled(f)).collect(),
        }
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Keypoints of a random pose in body units (hip center at the origin, y down,
/// roughly one unit tall), plus the margin-padded extent `[x0, y0, x1, y1]`.
fn stick_figure(rng: &mut ChaCha8Rng) -> ([[f64; 2]; NUM_KEYPOINTS], [f64; 4]) {
    let yaw: f64 = rng.gen_range(-1.0..1.0);
    let mut p = [[0.0; 2]; NUM_KEYPOINTS];
    p[0] = [0.04 * yaw, -0.43];
    p[1] = [0.03 * yaw + 0.025, -0.455];
    p[2] = [0.03 * yaw - 0.025, -0.455];
    p[3] = [0.05 - 0.02 * yaw.max(0.0), -0.445];
    p[4] = [-0.05 - 0.02 * yaw.min(0.0), -0.445];
    for (side, sh, el, wr) in [(1.0, 5, 7, 9), (-1.0, 6, 8, 10)] {
        p[sh] = [0.11 * side, -0.33];
        let a1: f64 = rng.gen_range(-0.3..1.8);
        let a2 = a1 + rng.gen_range(-1.2..1.2);
        p[el] = [p[sh][0] + side * 0.16 * a1.sin(), p[sh][1] + 0.16 * a1.cos()];
        p[wr] = [p[el][0] + side * 0.14 * a2.sin(), p[el][1] + 0.14 * a2.cos()];
    }
    for (side, hip, kn, an) in [(1.0, 11, 13, 15), (-1.0, 12, 14, 16)] {
        p[hip] = [0.08 * side, 0.0];
        let a1: f64 = rng.gen_range(-0.15..0.45);
        let a2 = a1 + rng.gen_range(-0.4..0.3);
        p[kn] = [p[hip][0] + side * 0.23 * a1.sin(), 0.23 * a1.cos()];
        p[an] = [p[kn][0] + side * 0.23 * a2.sin(), p[kn][1] + 0.23 * a2.cos()];
    }
    let lean: f64 = rng.gen_range(-0.15..0.15);
    let (s, c) = lean.sin_cos();
    for q in p.iter_mut() {
        *q = [c * q[0] - s * q[1], s * q[0] + c * q[1]];
    }
    let fold = |f: fn(f64, f64) -> f64, axis: usize, init: f64| p.iter().map(|q| q[axis]).fold(init, f);
    let extent = [
        fold(f64::min, 0, f64::INFINITY) - 0.03,
        fold(f64::min, 1, f64::INFINITY) - 0.08,
        fold(f64::max, 0, f64::NEG_INFINITY) + 0.03,
        fold(f64::max, 1, f64::NEG_INFINITY) + 0.03,
    ];
    (p, extent)
}

/// Places one person of the given height with its box inside the image.
fn person(rng: &mut ChaCha8Rng, cfg: &SynthConfig, height: f64, id: u64, image_id: u64) -> PoseInstance<f64> {
    let size = cfg.image_size as f64;
    let (pts, [x0, y0, x1, y1]) = stick_figure(rng);
    let scale = height / (y1 - y0);
    let w = round2((x1 - x0) * scale).min(size);
    let h = round2(height);
    let left = round2(rng.gen_range(0.0..=(size - w)));
    let top = round2(rng.gen_range(0.0..=(size - h)));
    let mut keypoints = [GtKeypoint::default(); NUM_KEYPOINTS];
    for (k, q) in keypoints.iter_mut().zip(pts.iter()) {
        let v = if rng.gen_bool(cfg.out_of_view_rate) {
            Visibility::Unlabeled
        } else if rng.gen_bool(cfg.occlusion_rate) {
            Visibility::Occluded
        } else {
            Visibility::Visible
        };
        *k = GtKeypoint {
            x: round2(left + (q[0] - x0) * scale),
            y: round2(top + (q[1] - y0) * scale),
            v,
        };
    }
    if rng.gen_bool(cfg.outside_box_rate) {
        let (n, dir) = if rng.gen_bool(0.5) { (9, 1.0) } else { (10, -1.0) };
        let edge = if dir > 0.0 { left + w } else { left };
        let x = edge + dir * rng.gen_range(0.05..0.25) * w;
        keypoints[n].x = round2(x.clamp(0.0, size - 0.01));
        if !keypoints[n].v.is_labeled() {
            keypoints[n].v = Visibility::Visible;
        }
    }
    PoseInstance {
        id,
        image_id,
        bbox: BBox::from_xywh(left, top, w, h),
        keypoints,
        area: w * h,
        iscrowd: false,
    }
}

const PLACEMENT_TRIES: usize = 100;

/// Generates `cfg.n_images` scenes. Image `i` (id `i + 1`) draws from stream
/// `i` of a generator seeded with `cfg.seed`, so scenes are reproducible
/// independently of each other. Every instance keeps at least one anchor
/// assignment in its scene.
pub fn synth(cfg: &SynthConfig, spec: &AnchorSpec<f64>, assign_cfg: &AssignConfig) -> Result<Vec<SynthScene>> {
    cfg.validate()?;
    crate::anchors::build_grid(spec, cfg.image_size)?;
    let mut scenes = Vec::with_capacity(cfg.n_images);
    let mut next_id = 1u64;
    let (hlo, hhi) = (cfg.heights.0.ln(), cfg.heights.1.ln());
    for idx in 0..cfg.n_images {
        let image_id = idx as u64 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(idx as u64);
        let count = rng.gen_range(cfg.persons.0..=cfg.persons.1);
        let mut instances: Vec<PoseInstance<f64>> = Vec::with_capacity(count);
        let mut unfit = 0usize;
        for _ in 0..count {
            for attempt in 0.. {
                if attempt == PLACEMENT_TRIES {
                    break;
                }
                let height = if hhi > hlo { rng.gen_range(hlo..=hhi).exp() } else { cfg.heights.0 };
                let cand = person(&mut rng, cfg, height, next_id, image_id);
                if assign(std::slice::from_ref(&cand), spec, cfg.image_size, assign_cfg)?.is_empty() {
                    unfit += 1;
                    continue;
                }
                if instances.iter().any(|g| iou(&g.bbox, &cand.bbox) > cfg.max_overlap_iou) {
                    continue;
                }
                instances.push(cand);
                let a = assign(&instances, spec, cfg.image_size, assign_cfg)?;
                if (0..instances.len()).all(|g| a.iter().any(|x| x.gt_index == g)) {
                    next_id += 1;
                    break;
                }
                instances.pop();
            }
        }
        if count > 0 && instances.is_empty() && unfit > 0 {
            return Err(Error::Config(format!(
                "persons with heights in {:?} match no anchor",
                cfg.heights
            )));
        }
        scenes.push(SynthScene {
            image_id,
            image_size: cfg.image_size,
            rng_seed: cfg.seed,
            instances,
        });
    }
    Ok(scenes)
}

pub fn to_gt_set(scenes: &[SynthScene]) -> GtSet {
    GtSet {
        images: scenes
            .iter()
            .map(|s| CocoImage {
                id: s.image_id,
                width: s.image_size,
                height: s.image_size,
                file_name: format!("synth_{:06}.png", s.image_id),
            })
            .collect(),
        instances: scenes.iter().flat_map(|s| s.instances.iter().cloned()).collect(),
    }
}

/// Head tensor whose decode reproduces the scene: every assigned cell holds its
/// encoded target with confidences at `±saturation` logits, and every other
/// cell has objectness and class logits at `−saturation`.
pub fn ideal_heads(scene: &SynthScene, spec: &AnchorSpec<f64>, assign_cfg: &AssignConfig, saturation: f64) -> Result<HeadTensor<f64>> {
    let mut heads = HeadTensor::zeros(spec, scene.image_size)?;
    for st in heads.scales.iter_mut() {
        for c in 0..st.num_cells() {
            st.data[c * NUM_CHANNELS + CH_OBJ] = -saturation;
            st.data[c * NUM_CHANNELS + CH_CLS] = -saturation;
        }
    }
    for a in assign(&scene.instances, spec, scene.image_size, assign_cfg)? {
        let raw = encode(&scene.instances[a.gt_index], a.slot, spec)?.to_raw(saturation);
        heads.slot_mut(a.slot).copy_from_slice(&raw);
    }
    Ok(heads)
}
