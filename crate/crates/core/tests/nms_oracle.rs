use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yolopose::pose::{Detection, PredKeypoint, NUM_KEYPOINTS};
use yolopose::{nms, BBox};

fn det(cx: f64, cy: f64, w: f64, h: f64, score: f64) -> Detection<f64> {
    Detection {
        image_id: 0,
        bbox: BBox::new(cx, cy, w, h),
        box_conf: score,
        class_conf: 1.0,
        keypoints: [PredKeypoint::default(); NUM_KEYPOINTS],
    }
}

/// IoU from corner coordinates, written independently of the library.
fn corner_iou(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let (ax0, ax1, ay0, ay1) = (a.cx - a.w / 2.0, a.cx + a.w / 2.0, a.cy - a.h / 2.0, a.cy + a.h / 2.0);
    let (bx0, bx1, by0, by1) = (b.cx - b.w / 2.0, b.cx + b.w / 2.0, b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Suppression-marking NMS: repeatedly take the best unmarked detection
/// (earliest on ties) and mark everything overlapping it.
fn reference_nms(dets: &[Detection<f64>], thr: f64) -> Vec<Detection<f64>> {
    let mut marked = vec![false; dets.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if marked[i] {
                continue;
            }
            match best {
                Some(b) if dets[b].score() >= dets[i].score() => {}
                _ => best = Some(i),
            }
        }
        let Some(b) = best else { break };
        marked[b] = true;
        out.push(dets[b].clone());
        for i in 0..dets.len() {
            if !marked[i] && corner_iou(&dets[b].bbox, &dets[i].bbox) > thr {
                marked[i] = true;
            }
        }
    }
    out
}

fn random_set(rng: &mut ChaCha8Rng) -> Vec<Detection<f64>> {
    let n = rng.gen_range(0..=20);
    (0..n)
        .map(|_| {
            // coarse grids make exact score ties and identical boxes common
            let score = rng.gen_range(1..=10) as f64 / 10.0;
            det(
                rng.gen_range(0..8) as f64 * 5.0,
                rng.gen_range(0..8) as f64 * 5.0,
                rng.gen_range(2..12) as f64 * 3.0,
                rng.gen_range(2..12) as f64 * 3.0,
                score,
            )
        })
        .collect()
}

#[test]
fn greedy_nms_matches_reference_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..1000 {
        let dets = random_set(&mut rng);
        for thr in [0.3, 0.65] {
            let got = nms(&dets, thr);
            assert_eq!(got, reference_nms(&dets, thr), "case {case}, threshold {thr}");
            assert_eq!(nms(&got, thr), got, "idempotence, case {case}");
        }
    }
}

#[test]
fn survivors_are_pairwise_separated() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let got = nms(&random_set(&mut rng), 0.65);
        for (i, a) in got.iter().enumerate() {
            for b in &got[i + 1..] {
                assert!(corner_iou(&a.bbox, &b.bbox) <= 0.65);
            }
        }
    }
}
