use std::fs;

use yolopose::codec::NUM_CHANNELS;
use yolopose::io::{
    load_coco, load_manifest, load_results, save_coco, save_manifest, save_results, write_heads,
    write_trajectory, ResultEntry, TrajectoryRow,
};
use yolopose::pose::{Detection, PredKeypoint, NUM_KEYPOINTS};
use yolopose::synth::{synth, to_gt_set, SynthConfig};
use yolopose::{AnchorSpec, AssignConfig, BBox, HeadTensor};

const MINIMAL: &str = r#"{
  "images": [{"id": 7, "width": 640, "height": 480, "file_name": "a.jpg"}],
  "annotations": [{
    "id": 42, "image_id": 7, "category_id": 1, "bbox": [10, 20, 100, 200],
    "keypoints": [KPTS], "area": 15000.5, "iscrowd": 0, "num_keypoints": 17
  }],
  "categories": [{"id": 1, "name": "person"}]
}"#;

fn minimal(n_values: usize, category: u32) -> String {
    let kpts: Vec<String> = (0..n_values)
        .map(|i| if i % 3 == 2 { "2".to_string() } else { format!("{}.25", 30 + i) })
        .collect();
    MINIMAL.replace("KPTS", &kpts.join(", ")).replace("\"category_id\": 1", &format!("\"category_id\": {category}"))
}

#[test]
fn minimal_file_loads_one_instance() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gt.json");
    fs::write(&p, minimal(51, 1)).unwrap();
    let gt = load_coco(&p).unwrap();
    assert_eq!(gt.instances.len(), 1);
    let g = &gt.instances[0];
    assert_eq!((g.id, g.image_id), (42, 7));
    assert_eq!(g.bbox, BBox::new(60.0, 120.0, 100.0, 200.0));
    assert_eq!(g.area, 15000.5);
    assert_eq!(g.keypoints[1].x, 33.25);
}

#[test]
fn wrong_arity_names_the_annotation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gt.json");
    fs::write(&p, minimal(50, 1)).unwrap();
    let err = load_coco(&p).unwrap_err();
    assert_eq!(err.kind(), "format");
    let msg = err.to_string();
    assert!(msg.contains("annotation 42") && msg.contains("found 50"), "{msg}");
}

#[test]
fn unknown_category_and_malformed_json_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gt.json");
    fs::write(&p, minimal(51, 3)).unwrap();
    assert!(load_coco(&p).unwrap_err().to_string().contains("unknown category 3"));
    fs::write(&p, "{\"images\": [").unwrap();
    let msg = load_coco(&p).unwrap_err().to_string();
    assert!(msg.contains("malformed JSON") && msg.contains("line"), "{msg}");
}

#[test]
fn coco_round_trip_is_lossless() {
    let scenes = synth(&SynthConfig { n_images: 4, ..Default::default() }, &AnchorSpec::default(), &AssignConfig::default()).unwrap();
    let gt = to_gt_set(&scenes);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    save_coco(&a, &gt).unwrap();
    let loaded = load_coco(&a).unwrap();
    assert_eq!(loaded, gt);
    let b = dir.path().join("b.json");
    save_coco(&b, &loaded).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

fn detection(score: f64) -> Detection<f64> {
    let mut keypoints = [PredKeypoint::default(); NUM_KEYPOINTS];
    for (n, k) in keypoints.iter_mut().enumerate() {
        *k = PredKeypoint {
            x: 10.0 + n as f64 / 3.0,
            y: 50.0 - n as f64,
            conf: 0.1 * (n % 10) as f64,
            retained: n % 10 >= 5,
        };
    }
    Detection {
        image_id: 3,
        bbox: BBox::new(20.0, 40.0, 10.0, 30.0),
        box_conf: score,
        class_conf: 0.5,
        keypoints,
    }
}

#[test]
fn results_keep_filtered_keypoints_with_their_confidence() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("dets.json");
    save_results(&p, &[detection(0.9)]).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.contains("10.3333") && !text.contains("10.33333"), "6 significant digits");
    let back = load_results(&p).unwrap();
    assert_eq!(back.len(), 1);
    let e = &back[0];
    assert_eq!(e.keypoints.len(), 51);
    assert_eq!(e.score, 0.45);
    assert_eq!(e.keypoints[2], 0.0);
    assert_eq!(e.keypoints[3 * 3 + 2], 0.3);
}

#[test]
fn results_reject_bad_entries() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("dets.json");
    let mut e = ResultEntry::from_detection(&detection(0.9));
    e.keypoints.pop();
    fs::write(&p, serde_json::to_string(&vec![e]).unwrap()).unwrap();
    assert!(load_results(&p).unwrap_err().to_string().contains("found 50"));
    let mut e = ResultEntry::from_detection(&detection(0.9));
    e.score = 1.5;
    fs::write(&p, serde_json::to_string(&vec![e]).unwrap()).unwrap();
    assert!(load_results(&p).is_err());
}

#[test]
fn head_tensors_round_trip_through_manifest() {
    let spec = AnchorSpec::<f32>::default();
    let mut heads = HeadTensor::zeros(&spec, 128).unwrap();
    for (s, st) in heads.scales.iter_mut().enumerate() {
        for (k, v) in st.data.iter_mut().enumerate() {
            *v = (k as f32 * 0.001 + s as f32).sin();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let m = write_heads(dir.path(), "img", &heads, &spec, Some(9), Some((256.0, 200.0))).unwrap();
    assert_eq!(m.scales[0].shape, [3, 16, 16, NUM_CHANNELS]);
    let mp = dir.path().join("manifest.json");
    save_manifest(&mp, &[m]).unwrap();
    let loaded = load_manifest(&mp).unwrap();
    assert_eq!(loaded.len(), 1);
    assert_eq!(loaded[0].heads, heads);
    assert_eq!(loaded[0].manifest.image_id, Some(9));
}

#[test]
fn truncated_tensor_names_the_scale() {
    let spec = AnchorSpec::<f32>::default();
    let heads = HeadTensor::zeros(&spec, 128).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_heads(dir.path(), "img", &heads, &spec, None, None).unwrap();
    let mp = dir.path().join("manifest.json");
    save_manifest(&mp, std::slice::from_ref(&m)).unwrap();
    let f = dir.path().join(&m.scales[2].file);
    let bytes = fs::read(&f).unwrap();
    fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
    let err = load_manifest(&mp).unwrap_err();
    assert_eq!(err.kind(), "shape_mismatch");
    assert!(err.to_string().contains("scale 2"), "{err}");
}

#[test]
fn single_manifest_object_is_accepted() {
    let spec = AnchorSpec::<f32>::default();
    let heads = HeadTensor::zeros(&spec, 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_heads(dir.path(), "one", &heads, &spec, None, None).unwrap();
    let mp = dir.path().join("m.json");
    fs::write(&mp, serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(load_manifest(&mp).unwrap().len(), 1);
}

#[test]
fn trajectory_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    let row = TrajectoryRow { step: 0, cls: 1.0, bbox: 2.0, kpts: 3.0, kpts_conf: 4.0, total: 5.0 };
    write_trajectory(&p, &[row]).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,cls,box,kpts,kpts_conf,total");
    assert_eq!(text.lines().nth(1).unwrap(), "0,1.0,2.0,3.0,4.0,5.0");
}
