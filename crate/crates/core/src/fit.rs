//! Gradient-descent fitting of raw head channels against ground truth, and the
//! keypoint-loss ablation built on it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSpec;
use crate::assign::{assign, AssignConfig, Assignment};
use crate::codec::{decode, encode, kpt_x, kpt_y, letterbox, HeadTensor, LetterboxTransform};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, AreaRange, EvalParams, EvalReport};
use crate::io::{GtSet, TrajectoryRow};
use crate::loss::{total_loss, KptLossKind, LossConfig, LossWeights};
use crate::pose::{Detection, KptWeights, PoseInstance, NUM_KEYPOINTS};
use crate::postprocess::{postprocess, PostprocessConfig};
use crate::synth::SynthScene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// `lr · (1 + cos(π k / steps)) / 2` at step `k`.
    Cosine,
}

impl Schedule {
    pub fn rate(self, base: f64, step: usize, steps: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos()),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(Schedule::Constant),
            "cosine" => Some(Schedule::Cosine),
            _ => None,
        }
    }
}

/// Initial value of the keypoint coordinate channels of assigned cells.
///
/// Every other channel starts at zero. Under `Prior` keypoints start at the
/// cell prior. The Gaussian OKS gradient vanishes numerically for keypoints many
/// falloff widths away, so `Jitter` starts each labeled keypoint at its target
/// plus isotropic noise of `rel_sigma · √area` pixels per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KptInit {
    Prior,
    Jitter { rel_sigma: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub kpt_loss: KptLossKind,
    pub loss_weights: LossWeights<f64>,
    pub init: KptInit,
    pub input_size: u32,
    pub assign: AssignConfig,
    pub postprocess: PostprocessConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 2000,
            learning_rate: 0.05,
            schedule: Schedule::Constant,
            kpt_loss: KptLossKind::Oks,
            loss_weights: LossWeights::default(),
            init: KptInit::Jitter {
                rel_sigma: 0.05,
                seed: 0,
            },
            input_size: 320,
            assign: AssignConfig::default(),
            postprocess: PostprocessConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if let KptInit::Jitter { rel_sigma, .. } = self.init {
            if !(rel_sigma >= 0.0 && rel_sigma.is_finite()) {
                return Err(Error::Config(format!("jitter {rel_sigma} must be non-negative")));
            }
        }
        self.loss_weights.validate()?;
        self.postprocess.validate()
    }
}

/// One image to fit, with ground truth in source-image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FitImage {
    pub image_id: u64,
    pub width: f64,
    pub height: f64,
    pub gts: Vec<PoseInstance<f64>>,
}

impl FitImage {
    pub fn from_scene(s: &SynthScene) -> Self {
        FitImage {
            image_id: s.image_id,
            width: s.image_size as f64,
            height: s.image_size as f64,
            gts: s.instances.clone(),
        }
    }

    pub fn from_gt_set(gt: &GtSet) -> Vec<Self> {
        gt.images
            .iter()
            .map(|im| FitImage {
                image_id: im.id,
                width: im.width as f64,
                height: im.height as f64,
                gts: gt.instances_of(im.id),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Loss summed over images before step 0 and after every step.
    pub trajectory: Vec<TrajectoryRow>,
    /// Post-processed detections in source-image coordinates.
    pub detections: Vec<Detection<f64>>,
    pub report: EvalReport,
    pub heads: Vec<HeadTensor<f64>>,
    /// Ids of instances without labeled keypoints (no keypoint loss).
    pub flagged: Vec<u64>,
}

struct Problem {
    image_id: u64,
    transform: LetterboxTransform<f64>,
    gts: Vec<PoseInstance<f64>>,
    assignments: Vec<Assignment>,
    heads: HeadTensor<f64>,
}

fn prepare(images: &[FitImage], spec: &AnchorSpec<f64>, cfg: &FitConfig) -> Result<Vec<Problem>> {
    let size = cfg.input_size as f64;
    let mut rng = match cfg.init {
        KptInit::Jitter { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        KptInit::Prior => None,
    };
    let mut problems = Vec::with_capacity(images.len());
    let mut any_gt = false;
    let mut any_assignment = false;
    for im in images {
        let transform = letterbox(im.width, im.height, size);
        let gts: Vec<PoseInstance<f64>> = im.gts.iter().map(|g| transform.forward_instance(g)).collect();
        let assignments = assign(&gts, spec, cfg.input_size, &cfg.assign)?;
        any_gt |= gts.iter().any(|g| !g.iscrowd);
        any_assignment |= !assignments.is_empty();
        let mut heads = HeadTensor::zeros(spec, cfg.input_size)?;
        if let (Some(rng), KptInit::Jitter { rel_sigma, .. }) = (rng.as_mut(), cfg.init) {
            for a in &assignments {
                let gt = &gts[a.gt_index];
                let target = encode(gt, a.slot, spec)?;
                let per_px = 1.0 / (2.0 * spec.scale(a.slot.scale).stride as f64);
                let sigma = rel_sigma * gt.area.sqrt() * per_px;
                let cell = heads.slot_mut(a.slot);
                for n in 0..NUM_KEYPOINTS {
                    for c in [kpt_x(n), kpt_y(n)] {
                        let z: f64 = StandardNormal.sample(rng);
                        if target.mask[c] {
                            cell[c] = target.values[c] + sigma * z;
                        }
                    }
                }
            }
        }
        problems.push(Problem {
            image_id: im.image_id,
            transform,
            gts,
            assignments,
            heads,
        });
    }
    if any_gt && !any_assignment {
        return Err(Error::Config("no ground truth could be assigned to an anchor".into()));
    }
    Ok(problems)
}

/// Plain gradient descent on the summed loss of every image.
pub fn fit(images: &[FitImage], spec: &AnchorSpec<f64>, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let mut problems = prepare(images, spec, cfg)?;
    let lcfg = LossConfig {
        weights: cfg.loss_weights,
        kpt_weights: KptWeights::default(),
        kpt_loss: cfg.kpt_loss,
    };
    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    let mut flagged = Vec::new();
    let mut initial = None;
    for step in 0..=cfg.steps {
        let mut row = TrajectoryRow {
            step,
            cls: 0.0,
            bbox: 0.0,
            kpts: 0.0,
            kpts_conf: 0.0,
            total: 0.0,
        };
        let lr = cfg.schedule.rate(cfg.learning_rate, step, cfg.steps.max(1));
        for p in problems.iter_mut() {
            let b = total_loss(&p.heads, spec, &p.assignments, &p.gts, &lcfg)?;
            row.cls += b.cls;
            row.bbox += b.bbox;
            row.kpts += b.kpts;
            row.kpts_conf += b.kpts_conf;
            row.total += b.total;
            if step == 0 {
                flagged.extend(b.flagged.iter().map(|&g| p.gts[g].id));
            }
            if step < cfg.steps {
                b.grad.descend(&mut p.heads, lr);
            }
        }
        let init = *initial.get_or_insert(row.total);
        if !row.total.is_finite() || row.total > 10.0 * init {
            return Err(Error::Divergence {
                step,
                total: row.total,
                initial: init,
            });
        }
        trajectory.push(row);
    }

    let mut detections = Vec::new();
    for p in &problems {
        let cells = decode(&p.heads, spec, p.image_id)?;
        detections.extend(postprocess(&cells, &cfg.postprocess, &p.transform));
    }
    let gts: Vec<PoseInstance<f64>> = images.iter().flat_map(|im| im.gts.iter().cloned()).collect();
    let ids: Vec<u64> = images.iter().map(|im| im.image_id).collect();
    let params = EvalParams {
        max_detections: cfg.postprocess.max_detections,
        ..EvalParams::default()
    };
    let report = evaluate_with(&gts, &detections, &ids, AreaRange::All, &params)?;
    Ok(FitOutcome {
        trajectory,
        detections,
        report,
        heads: problems.into_iter().map(|p| p.heads).collect(),
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
    pub final_kpts_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn ap_of(&self, kind: KptLossKind) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == kind.name()).map(|r| r.ap)
    }
}

/// Fits once per keypoint-loss variant with otherwise identical settings.
/// Variants run on separate threads.
pub fn ablate(images: &[FitImage], spec: &AnchorSpec<f64>, base: &FitConfig) -> Result<AblationTable> {
    let outcomes: Vec<Result<FitOutcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = KptLossKind::ALL
            .iter()
            .map(|&kind| {
                let cfg = FitConfig { kpt_loss: kind, ..*base };
                s.spawn(move || fit(images, spec, &cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fit thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(outcomes.len());
    for (kind, out) in KptLossKind::ALL.iter().zip(outcomes) {
        let out = out?;
        rows.push(AblationRow {
            variant: kind.name().into(),
            ap: out.report.ap,
            ap50: out.report.ap50,
            ap75: out.report.ap75,
            ar: out.report.ar,
            final_kpts_loss: out.trajectory.last().map_or(0.0, |r| r.kpts),
        });
    }
    Ok(AblationTable {
        steps: base.steps,
        learning_rate: base.learning_rate,
        schedule: base.schedule,
        rows,
    })
}
