use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yolopose::codec::decode_cell;
use yolopose::pose::{GtKeypoint, PoseInstance, Visibility, NUM_KEYPOINTS};
use yolopose::{encode, AnchorSpec, BBox, Slot};

/// Random ground truth whose center falls in the encodable window of `slot`
/// and whose size is within 4× of its anchor.
fn in_range_instance(rng: &mut ChaCha8Rng, spec: &AnchorSpec<f64>, slot: Slot) -> PoseInstance<f64> {
    let sc = spec.scale(slot.scale);
    let st = sc.stride as f64;
    let [aw, ah] = sc.anchors[slot.anchor];
    let cx = (slot.j as f64 + rng.gen_range(-0.49..1.49)) * st;
    let cy = (slot.i as f64 + rng.gen_range(-0.49..1.49)) * st;
    let w = aw * rng.gen_range(0.26..3.9);
    let h = ah * rng.gen_range(0.26..3.9);
    let mut keypoints = [GtKeypoint::default(); NUM_KEYPOINTS];
    for k in keypoints.iter_mut() {
        *k = GtKeypoint {
            // keypoints may sit well outside the box
            x: cx + rng.gen_range(-0.8..0.8) * w,
            y: cy + rng.gen_range(-0.8..0.8) * h,
            v: Visibility::from_flag(rng.gen_range(0..3)).unwrap(),
        };
    }
    PoseInstance {
        id: 1,
        image_id: 0,
        bbox: BBox::new(cx, cy, w, h),
        keypoints,
        area: w * h,
        iscrowd: false,
    }
}

#[test]
fn decode_inverts_encode() {
    let spec = AnchorSpec::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let slot = Slot {
            scale: rng.gen_range(0..4),
            anchor: rng.gen_range(0..3),
            i: rng.gen_range(0..10),
            j: rng.gen_range(0..10),
        };
        let gt = in_range_instance(&mut rng, &spec, slot);
        let target = encode(&gt, slot, &spec).unwrap();
        let det = decode_cell(&target.to_raw(10.0), slot, &spec, 0);
        let b = det.bbox;
        for e in [b.cx - gt.bbox.cx, b.cy - gt.bbox.cy, b.w - gt.bbox.w, b.h - gt.bbox.h] {
            worst = worst.max(e.abs());
        }
        for (p, g) in det.keypoints.iter().zip(gt.keypoints.iter()) {
            if g.v.is_labeled() {
                worst = worst.max((p.x - g.x).abs()).max((p.y - g.y).abs());
                assert!(p.conf > 0.99);
            } else {
                assert!(p.conf < 0.01);
            }
        }
    }
    assert!(worst <= 1e-6, "worst error {worst} px");
}

#[test]
fn f32_round_trip_is_close() {
    let spec = AnchorSpec::<f64>::default();
    let spec32 = spec.cast::<f32>();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let slot = Slot { scale: 1, anchor: 2, i: 3, j: 4 };
        let gt = in_range_instance(&mut rng, &spec, slot);
        let raw = encode(&gt.cast::<f32>(), slot, &spec32).unwrap().to_raw(8.0);
        let det = decode_cell(&raw, slot, &spec32, 0);
        for (p, g) in det.keypoints.iter().zip(gt.keypoints.iter()) {
            if g.v.is_labeled() {
                assert!((p.x as f64 - g.x).abs() < 1e-3);
            }
        }
    }
}

#[test]
fn keypoints_decode_outside_their_box() {
    let spec = AnchorSpec::<f64>::default();
    let slot = Slot { scale: 0, anchor: 0, i: 5, j: 5 };
    let mut raw = [0.0; yolopose::codec::NUM_CHANNELS];
    raw[yolopose::codec::kpt_x(9)] = 10.0;
    raw[yolopose::codec::kpt_y(9)] = -4.0;
    let det = decode_cell(&raw, slot, &spec, 0);
    let k = det.keypoints[9];
    assert!(!det.bbox.contains(k.x, k.y));
    assert_eq!(k.x, (2.0 * 10.0 - 0.5 + 5.0) * 8.0);
}
