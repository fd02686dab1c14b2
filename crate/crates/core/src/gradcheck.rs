//! Central finite-difference checks of every analytic loss gradient on seeded
//! random configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::anchors::{AnchorSpec, ANCHORS_PER_SCALE, NUM_SCALES};
use crate::assign::{assign, AssignConfig};
use crate::codec::{decode_cell, kpt_x, kpt_y, HeadTensor, Slot, CH_OBJ, NUM_CHANNELS};
use crate::geometry::BBox;
use crate::loss::{loss_box, loss_cls, loss_kpt_conf, loss_kpts, total_loss, KptLossKind, LossConfig};
use crate::pose::{GtKeypoint, KptWeights, PoseInstance, Visibility, NUM_KEYPOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 100,
            seed: 1,
            step: 1e-4,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
        }
    }
}

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    pub channels_checked: usize,
    pub max_abs_err: f64,
    /// Largest relative error among channels whose gradient magnitude is at least 1e-3.
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` for each index in `which`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64, which: &[usize]) -> Vec<f64> {
    let mut xp = x.to_vec();
    which
        .iter()
        .map(|&i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error, or `None` when both values agree within the absolute floor.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> Option<f64> {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        None
    } else {
        Some(diff / analytic.abs().max(numeric.abs()))
    }
}

struct Tally {
    report: SuiteReport,
    rel_tol: f64,
    abs_floor: f64,
}

impl Tally {
    fn new(name: &str, cfg: &GradCheckConfig) -> Self {
        Tally {
            report: SuiteReport {
                name: name.into(),
                trials: 0,
                failures: 0,
                channels_checked: 0,
                max_abs_err: 0.0,
                max_rel_err: 0.0,
                passed: true,
            },
            rel_tol: cfg.rel_tol,
            abs_floor: cfg.abs_floor,
        }
    }

    fn trial(&mut self, analytic: &[f64], numeric: &[f64]) {
        let mut ok = true;
        for (a, n) in analytic.iter().zip(numeric) {
            self.report.channels_checked += 1;
            let r = &mut self.report;
            r.max_abs_err = r.max_abs_err.max((a - n).abs());
            if a.abs().max(n.abs()) >= 1e-3 {
                r.max_rel_err = r.max_rel_err.max((a - n).abs() / a.abs().max(n.abs()));
            }
            if let Some(e) = relative_error(*a, *n, self.abs_floor) {
                if !(e < self.rel_tol) {
                    ok = false;
                }
            }
        }
        self.report.trials += 1;
        if !ok {
            self.report.failures += 1;
            self.report.passed = false;
        }
    }
}

struct Case {
    spec: AnchorSpec<f64>,
    slot: Slot,
    raw: Vec<f64>,
    gt: PoseInstance<f64>,
    kw: KptWeights<f64>,
}

fn random_slot(rng: &mut ChaCha8Rng) -> Slot {
    Slot {
        scale: rng.gen_range(0..NUM_SCALES),
        anchor: rng.gen_range(0..ANCHORS_PER_SCALE),
        i: rng.gen_range(0..8),
        j: rng.gen_range(0..8),
    }
}

/// Random raw cell and a ground truth of anchor-compatible size whose keypoints
/// sit within a few falloff widths of the decoded ones.
fn random_case(rng: &mut ChaCha8Rng, min_sep: f64) -> Case {
    let spec = AnchorSpec::default();
    let slot = random_slot(rng);
    let scale = spec.scale(slot.scale);
    let [aw, ah] = scale.anchors[slot.anchor];
    let mut raw: Vec<f64> = (0..NUM_CHANNELS).map(|_| rng.gen_range(-1.5..1.5)).collect();
    for n in 0..NUM_KEYPOINTS {
        raw[kpt_x(n)] = rng.gen_range(-0.5..1.0);
        raw[kpt_y(n)] = rng.gen_range(-0.5..1.0);
    }
    let det = decode_cell(&raw, slot, &spec, 0);
    let w = aw * rng.gen_range(0.4f64..2.5);
    let h = ah * rng.gen_range(0.4f64..2.5);
    let bbox = BBox::new(
        det.bbox.cx + rng.gen_range(-0.5..0.5) * w,
        det.bbox.cy + rng.gen_range(-0.5..0.5) * h,
        w,
        h,
    );
    let area = w * h;
    let kw = KptWeights::default();
    let mut keypoints = [GtKeypoint::default(); NUM_KEYPOINTS];
    for (n, k) in keypoints.iter_mut().enumerate() {
        let sk = area.sqrt() * kw.k[n];
        let spread = Normal::new(0.0, sk * rng.gen_range(0.2..1.5)).expect("positive sigma");
        // keep clear of the |Δ| kink of the L1 variants
        let offset = |rng: &mut ChaCha8Rng| loop {
            let d: f64 = spread.sample(rng);
            if d.abs() > min_sep {
                return d;
            }
        };
        let (ox, oy) = (offset(rng), offset(rng));
        let v = match rng.gen_range(0..10) {
            0 | 1 => Visibility::Unlabeled,
            2 | 3 => Visibility::Occluded,
            _ => Visibility::Visible,
        };
        *k = GtKeypoint {
            x: det.keypoints[n].x + ox,
            y: det.keypoints[n].y + oy,
            v,
        };
    }
    if keypoints.iter().all(|k| !k.v.is_labeled()) {
        keypoints[0].v = Visibility::Visible;
    }
    Case {
        spec,
        slot,
        raw,
        gt: PoseInstance {
            id: 1,
            image_id: 0,
            bbox,
            keypoints,
            area,
            iscrowd: false,
        },
        kw,
    }
}

fn cell_suite<F>(name: &str, cfg: &GradCheckConfig, rng: &mut ChaCha8Rng, min_sep: f64, eval: F) -> SuiteReport
where
    F: Fn(&Case, &[f64]) -> (f64, [f64; NUM_CHANNELS]),
{
    let mut tally = Tally::new(name, cfg);
    let all: Vec<usize> = (0..NUM_CHANNELS).collect();
    for _ in 0..cfg.trials {
        let case = random_case(rng, min_sep);
        let (_, analytic) = eval(&case, &case.raw);
        let numeric = central_difference(|x| eval(&case, x).0, &case.raw, cfg.step, &all);
        tally.trial(&analytic, &numeric);
    }
    tally.report
}

fn kpt_suite(name: &str, kind: KptLossKind, cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> SuiteReport {
    // the largest stride moves a keypoint 2·64·h pixels per step h
    let min_sep = if kind == KptLossKind::Oks { 0.0 } else { 1e3 * cfg.step };
    cell_suite(name, cfg, rng, min_sep, |c, x| {
        loss_kpts(kind, x, c.slot, &c.spec, &c.gt, &c.kw).expect("valid case")
    })
}

fn cls_suite(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut tally = Tally::new("cls", cfg);
    for t in 0..cfg.trials {
        let x = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
        let matched = t % 2 == 0;
        let (_, g) = loss_cls(x[0], x[1], matched);
        let numeric = central_difference(|v| loss_cls(v[0], v[1], matched).0, &x, cfg.step, &[0, 1]);
        tally.trial(&g, &numeric);
    }
    tally.report
}

fn total_suite(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut tally = Tally::new("total", cfg);
    let spec = AnchorSpec::<f64>::default();
    let input = 128u32;
    let noise = Normal::new(0.0, 0.5).expect("positive sigma");
    let mut done = 0;
    while done < cfg.trials {
        let n_gt = rng.gen_range(1..=2);
        let gts: Vec<PoseInstance<f64>> = (0..n_gt)
            .map(|g| {
                let w = rng.gen_range(20.0..90.0);
                let h = rng.gen_range(30.0..110.0);
                let cx = rng.gen_range(w / 2.0..input as f64 - w / 2.0);
                let cy = rng.gen_range(h / 2.0..input as f64 - h / 2.0);
                let mut keypoints = [GtKeypoint::default(); NUM_KEYPOINTS];
                for k in keypoints.iter_mut() {
                    *k = GtKeypoint {
                        x: cx + rng.gen_range(-0.5..0.5) * w,
                        y: cy + rng.gen_range(-0.5..0.5) * h,
                        v: if rng.gen_bool(0.2) { Visibility::Unlabeled } else { Visibility::Visible },
                    };
                }
                PoseInstance {
                    id: g as u64,
                    image_id: 0,
                    bbox: BBox::new(cx, cy, w, h),
                    keypoints,
                    area: w * h,
                    iscrowd: false,
                }
            })
            .collect();
        let assignments = assign(&gts, &spec, input, &AssignConfig::default()).expect("in-image gts");
        if assignments.is_empty() {
            continue;
        }
        let mut heads = HeadTensor::zeros(&spec, input).expect("divisible input");
        for st in heads.scales.iter_mut() {
            for v in st.data.iter_mut() {
                *v = noise.sample(rng);
            }
        }
        // keypoint channels of assigned cells start near their targets
        for a in &assignments {
            let target = crate::codec::encode(&gts[a.gt_index], a.slot, &spec).expect("assignable");
            let cell = heads.slot_mut(a.slot);
            for n in 0..NUM_KEYPOINTS {
                for c in [kpt_x(n), kpt_y(n)] {
                    cell[c] = target.values[c] + 0.02 * noise.sample(rng);
                }
            }
        }
        let lcfg = LossConfig::default();
        let base = total_loss(&heads, &spec, &assignments, &gts, &lcfg).expect("valid");
        let dense = base.grad.to_dense(&heads);

        // every channel of the assigned cells plus a sample of other cells
        let mut idx: Vec<(usize, usize)> = Vec::new();
        for a in &assignments {
            let off = cell_offset(&heads, a.slot);
            idx.extend((0..NUM_CHANNELS).map(|c| (a.slot.scale, off + c)));
        }
        for _ in 0..20 {
            let s = rng.gen_range(0..NUM_SCALES);
            let cell = rng.gen_range(0..heads.scales[s].num_cells());
            let c = if rng.gen_bool(0.5) { CH_OBJ } else { rng.gen_range(0..NUM_CHANNELS) };
            idx.push((s, cell * NUM_CHANNELS + c));
        }
        let analytic: Vec<f64> = idx.iter().map(|&(s, k)| dense.scales[s].data[k]).collect();
        let numeric: Vec<f64> = idx
            .iter()
            .map(|&(s, k)| {
                let mut h = heads.clone();
                let orig = h.scales[s].data[k];
                h.scales[s].data[k] = orig + cfg.step;
                let up = total_loss(&h, &spec, &assignments, &gts, &lcfg).expect("valid").total;
                h.scales[s].data[k] = orig - cfg.step;
                let down = total_loss(&h, &spec, &assignments, &gts, &lcfg).expect("valid").total;
                (up - down) / (2.0 * cfg.step)
            })
            .collect();
        tally.trial(&analytic, &numeric);
        done += 1;
    }
    tally.report
}

fn cell_offset(heads: &HeadTensor<f64>, slot: Slot) -> usize {
    heads.scales[slot.scale].cell_index(slot.anchor, slot.i, slot.j) * NUM_CHANNELS
}

/// Runs every suite; each draws from its own stream of the seeded generator.
pub fn run_all(cfg: &GradCheckConfig) -> Vec<SuiteReport> {
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(k);
        r
    };
    vec![
        kpt_suite("kpts_oks", KptLossKind::Oks, cfg, &mut stream(0)),
        kpt_suite("kpts_l1", KptLossKind::L1, cfg, &mut stream(1)),
        kpt_suite("kpts_scale_l1", KptLossKind::ScaleL1, cfg, &mut stream(2)),
        cell_suite("box_ciou", cfg, &mut stream(3), 0.0, |c, x| {
            loss_box(x, c.slot, &c.spec, &c.gt.bbox).expect("valid box")
        }),
        cell_suite("kpt_conf", cfg, &mut stream(4), 0.0, |c, x| loss_kpt_conf(x, &c.gt.keypoints)),
        cls_suite(cfg, &mut stream(5)),
        total_suite(cfg, &mut stream(6)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_a_cubic() {
        let g = central_difference(|x| x[0].powi(3) + 2.0 * x[1], &[2.0, 5.0], 1e-4, &[0, 1]);
        assert!((g[0] - 12.0).abs() < 1e-7);
        assert!((g[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 5e-8, 1e-7), None);
        assert!((relative_error(1.0, 1.001, 1e-7).unwrap() - 0.001 / 1.001).abs() < 1e-12);
    }

    #[test]
    fn all_suites_pass_small() {
        let cfg = GradCheckConfig {
            trials: 20,
            seed: 7,
            ..Default::default()
        };
        for r in run_all(&cfg) {
            assert!(r.passed, "{r:?}");
        }
    }
}
