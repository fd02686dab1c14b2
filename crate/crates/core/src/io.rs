//! File formats: COCO keypoint annotations, keypoint results, binary head
//! tensors with their JSON manifest, and the fit trajectory CSV.
//!
//! Emitted JSON has sorted keys and floats rounded to 6 significant digits,
//! except ground-truth annotation files, which keep full precision so that a
//! load/save/load cycle is lossless.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::anchors::{AnchorSpec, GridDims, ScaleSpec, ANCHORS_PER_SCALE, NUM_SCALES};
use crate::codec::{HeadTensor, ScaleTensor, NUM_CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::pose::{
    Detection, GtKeypoint, PoseInstance, PredKeypoint, Visibility, COCO_SKELETON, KEYPOINT_NAMES,
    NUM_KEYPOINTS,
};

pub const PERSON_CATEGORY: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    #[serde(default = "person")]
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub keypoints: Vec<f64>,
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default)]
    pub num_keypoints: u32,
}

fn person() -> u64 {
    PERSON_CATEGORY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    #[serde(default)]
    pub keypoints: Vec<String>,
    #[serde(default)]
    pub skeleton: Vec<[u32; 2]>,
}

impl CocoCategory {
    pub fn person() -> Self {
        CocoCategory {
            id: PERSON_CATEGORY,
            name: "person".into(),
            keypoints: KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            skeleton: COCO_SKELETON.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoKeypointFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// Ground truth loaded from a COCO keypoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct GtSet {
    pub images: Vec<CocoImage>,
    pub instances: Vec<PoseInstance<f64>>,
}

impl GtSet {
    pub fn image(&self, id: u64) -> Option<&CocoImage> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn instances_of(&self, image_id: u64) -> Vec<PoseInstance<f64>> {
        self.instances.iter().filter(|g| g.image_id == image_id).cloned().collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::format(path.display().to_string(), format!("malformed JSON: {e}")))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Converts a parsed COCO file into ground-truth instances.
pub fn gt_from_coco(file: &CocoKeypointFile, origin: &str) -> Result<GtSet> {
    let known_cats: Vec<u64> = file.categories.iter().map(|c| c.id).collect();
    let mut instances = Vec::with_capacity(file.annotations.len());
    for ann in &file.annotations {
        let at = |detail: String| Error::format(origin, format!("annotation {}: {detail}", ann.id));
        if !known_cats.contains(&ann.category_id) || ann.category_id != PERSON_CATEGORY {
            return Err(at(format!("unknown category {}", ann.category_id)));
        }
        if !file.images.iter().any(|i| i.id == ann.image_id) {
            return Err(at(format!("unknown image {}", ann.image_id)));
        }
        if ann.keypoints.len() != 3 * NUM_KEYPOINTS {
            return Err(at(format!(
                "expected {} keypoint values, found {}",
                3 * NUM_KEYPOINTS,
                ann.keypoints.len()
            )));
        }
        let iscrowd = ann.iscrowd != 0;
        if !iscrowd && !(ann.area > 0.0) {
            return Err(at(format!("non-positive area {}", ann.area)));
        }
        let [x, y, w, h] = ann.bbox;
        if !(w >= 0.0 && h >= 0.0) {
            return Err(at(format!("negative bbox size {w}x{h}")));
        }
        let mut keypoints = [GtKeypoint::default(); NUM_KEYPOINTS];
        for (n, k) in keypoints.iter_mut().enumerate() {
            let flag = ann.keypoints[3 * n + 2];
            let v = if flag.fract() == 0.0 && (0.0..=2.0).contains(&flag) {
                Visibility::from_flag(flag as u8)
            } else {
                None
            }
            .ok_or_else(|| at(format!("invalid visibility flag {flag} for keypoint {n}")))?;
            *k = GtKeypoint {
                x: ann.keypoints[3 * n],
                y: ann.keypoints[3 * n + 1],
                v,
            };
        }
        instances.push(PoseInstance {
            id: ann.id,
            image_id: ann.image_id,
            bbox: BBox::from_xywh(x, y, w, h),
            keypoints,
            area: ann.area,
            iscrowd,
        });
    }
    Ok(GtSet {
        images: file.images.clone(),
        instances,
    })
}

pub fn coco_from_gt(gt: &GtSet) -> CocoKeypointFile {
    let annotations = gt
        .instances
        .iter()
        .map(|g| CocoAnnotation {
            id: g.id,
            image_id: g.image_id,
            category_id: PERSON_CATEGORY,
            bbox: g.bbox.to_xywh(),
            keypoints: g
                .keypoints
                .iter()
                .flat_map(|k| [k.x, k.y, k.v.flag() as f64])
                .collect(),
            area: g.area,
            iscrowd: g.iscrowd as u8,
            num_keypoints: g.num_labeled() as u32,
        })
        .collect();
    CocoKeypointFile {
        images: gt.images.clone(),
        annotations,
        categories: vec![CocoCategory::person()],
    }
}

pub fn load_coco(path: impl AsRef<Path>) -> Result<GtSet> {
    let path = path.as_ref();
    let file: CocoKeypointFile = parse_json(path, &read_text(path)?)?;
    gt_from_coco(&file, &path.display().to_string())
}

pub fn save_coco(path: impl AsRef<Path>, gt: &GtSet) -> Result<()> {
    let text = serde_json::to_string_pretty(&coco_from_gt(gt)).expect("serializable");
    write_text(path.as_ref(), &(text + "\n"))
}

/// Rounds to 6 significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with sorted keys and 6-significant-digit floats.
pub fn to_json_rounded<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable");
    round_value(&mut v);
    serde_json::to_string_pretty(&v).expect("serializable") + "\n"
}

pub fn write_json_rounded<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_text(path.as_ref(), &to_json_rounded(value))
}

/// One entry of a keypoint results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub image_id: u64,
    pub category_id: u64,
    /// `(x, y, conf) × 17`.
    pub keypoints: Vec<f64>,
    pub score: f64,
}

impl ResultEntry {
    /// Serializes every keypoint, retained or not, with its confidence in the third slot.
    pub fn from_detection(d: &Detection<f64>) -> Self {
        ResultEntry {
            image_id: d.image_id,
            category_id: PERSON_CATEGORY,
            keypoints: d.keypoints.iter().flat_map(|k| [k.x, k.y, k.conf]).collect(),
            score: d.score(),
        }
    }

    /// Detection with its box set to the keypoint extent and `box_conf = score`.
    pub fn to_detection(&self) -> Detection<f64> {
        let mut keypoints = [PredKeypoint::default(); NUM_KEYPOINTS];
        for (n, k) in keypoints.iter_mut().enumerate() {
            k.x = self.keypoints[3 * n];
            k.y = self.keypoints[3 * n + 1];
            k.conf = self.keypoints[3 * n + 2];
        }
        let (x0, x1) = keypoints.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), k| (a.min(k.x), b.max(k.x)));
        let (y0, y1) = keypoints.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), k| (a.min(k.y), b.max(k.y)));
        Detection {
            image_id: self.image_id,
            bbox: BBox::from_xywh(x0, y0, x1 - x0, y1 - y0),
            box_conf: self.score,
            class_conf: 1.0,
            keypoints,
        }
    }
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<ResultEntry>> {
    let path = path.as_ref();
    let entries: Vec<ResultEntry> = parse_json(path, &read_text(path)?)?;
    for (idx, e) in entries.iter().enumerate() {
        let at = |d: String| Error::format(path.display().to_string(), format!("result {idx}: {d}"));
        if e.keypoints.len() != 3 * NUM_KEYPOINTS {
            return Err(at(format!(
                "expected {} keypoint values, found {}",
                3 * NUM_KEYPOINTS,
                e.keypoints.len()
            )));
        }
        if e.category_id != PERSON_CATEGORY {
            return Err(at(format!("unknown category {}", e.category_id)));
        }
        if !(0.0..=1.0).contains(&e.score) {
            return Err(at(format!("score {} outside [0, 1]", e.score)));
        }
    }
    Ok(entries)
}

pub fn save_results(path: impl AsRef<Path>, dets: &[Detection<f64>]) -> Result<()> {
    let entries: Vec<ResultEntry> = dets.iter().map(ResultEntry::from_detection).collect();
    write_json_rounded(path, &entries)
}

/// One scale of a head-tensor manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScale {
    pub stride: u32,
    pub anchors: [[f64; 2]; ANCHORS_PER_SCALE],
    pub file: String,
    pub shape: [usize; 4],
}

/// Describes the four per-scale binary tensors of one image.
///
/// `image_id` and the source size are optional extensions; without a source
/// size the input is taken to be the unpadded image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadManifest {
    pub input_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_height: Option<f64>,
    pub scales: Vec<ManifestScale>,
}

impl HeadManifest {
    pub fn anchor_spec(&self) -> Result<AnchorSpec<f32>> {
        if self.scales.len() != NUM_SCALES {
            return Err(Error::AnchorSpec(format!(
                "manifest lists {} scales, expected {NUM_SCALES}",
                self.scales.len()
            )));
        }
        let mk = |s: &ManifestScale| ScaleSpec {
            stride: s.stride,
            anchors: s.anchors.map(|[w, h]| [w as f32, h as f32]),
        };
        AnchorSpec::new([
            mk(&self.scales[0]),
            mk(&self.scales[1]),
            mk(&self.scales[2]),
            mk(&self.scales[3]),
        ])
    }
}

/// Manifest files hold either one manifest object or an array of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    One(HeadManifest),
    Many(Vec<HeadManifest>),
}

/// A manifest entry with its tensors loaded.
#[derive(Debug, Clone)]
pub struct LoadedHeads {
    pub manifest: HeadManifest,
    pub spec: AnchorSpec<f32>,
    pub heads: HeadTensor<f32>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<LoadedHeads>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifests = match parse_json::<ManifestFile>(path, &read_text(path)?)? {
        ManifestFile::One(m) => vec![m],
        ManifestFile::Many(v) => v,
    };
    manifests
        .into_iter()
        .map(|m| load_heads(&m, &base, &path.display().to_string()))
        .collect()
}

fn load_heads(m: &HeadManifest, base: &Path, origin: &str) -> Result<LoadedHeads> {
    let spec = m.anchor_spec()?;
    let mut scales = Vec::with_capacity(NUM_SCALES);
    for (s, entry) in m.scales.iter().enumerate() {
        let mismatch = |detail: String| Error::ShapeMismatch {
            scale: s,
            detail: format!("{origin}: stride {}: {detail}", entry.stride),
        };
        if entry.stride == 0 || !m.input_size.is_multiple_of(entry.stride) {
            return Err(mismatch(format!("input size {} not divisible", m.input_size)));
        }
        let n = (m.input_size / entry.stride) as usize;
        let expect = [ANCHORS_PER_SCALE, n, n, NUM_CHANNELS];
        if entry.shape != expect {
            return Err(mismatch(format!("shape {:?}, expected {:?}", entry.shape, expect)));
        }
        let file = base.join(&entry.file);
        let bytes = fs::read(&file).map_err(|e| Error::io(file.display().to_string(), e))?;
        let count: usize = expect.iter().product();
        if bytes.len() != count * 4 {
            return Err(mismatch(format!(
                "shape {:?} needs {} bytes but {} has {}",
                entry.shape,
                count * 4,
                entry.file,
                bytes.len()
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        scales.push(ScaleTensor {
            dims: GridDims {
                stride: entry.stride,
                rows: n,
                cols: n,
            },
            data,
        });
    }
    let heads = HeadTensor {
        input_size: m.input_size,
        scales,
    };
    heads.validate(&spec)?;
    Ok(LoadedHeads {
        manifest: m.clone(),
        spec,
        heads,
    })
}

/// Writes the four binary tensors of `heads` into `dir` and returns their manifest.
pub fn write_heads(
    dir: impl AsRef<Path>,
    stem: &str,
    heads: &HeadTensor<f32>,
    spec: &AnchorSpec<f32>,
    image_id: Option<u64>,
    src_size: Option<(f64, f64)>,
) -> Result<HeadManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut scales = Vec::with_capacity(NUM_SCALES);
    for (s, t) in heads.scales.iter().enumerate() {
        let name = format!("{stem}_s{s}.bin");
        let mut bytes = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let file: PathBuf = dir.join(&name);
        fs::write(&file, bytes).map_err(|e| Error::io(file.display().to_string(), e))?;
        scales.push(ManifestScale {
            stride: t.dims.stride,
            anchors: spec.scale(s).anchors.map(|[w, h]| [w as f64, h as f64]),
            file: name,
            shape: t.shape(),
        });
    }
    Ok(HeadManifest {
        input_size: heads.input_size,
        image_id,
        src_width: src_size.map(|s| s.0),
        src_height: src_size.map(|s| s.1),
        scales,
    })
}

pub fn save_manifest(path: impl AsRef<Path>, manifests: &[HeadManifest]) -> Result<()> {
    write_json_rounded(path, &manifests)
}

/// One row of the fit trajectory CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub cls: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub kpts: f64,
    pub kpts_conf: f64,
    pub total: f64,
}

pub fn write_trajectory(path: impl AsRef<Path>, rows: &[TrajectoryRow]) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let err = |e: csv::Error| Error::format(path.display().to_string(), e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_rounding() {
        assert_eq!(round_sig6(123.4567891), 123.457);
        assert_eq!(round_sig6(0.000123456789), 0.000123457);
        assert_eq!(round_sig6(1.0), 1.0);
        assert_eq!(round_sig6(-2.5e-12), -2.5e-12);
    }

    #[test]
    fn rounded_json_has_sorted_keys() {
        #[derive(Serialize)]
        struct S {
            zeta: f64,
            alpha: f64,
        }
        let s = to_json_rounded(&S { zeta: 1.0 / 3.0, alpha: 2.0 });
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
        assert!(s.contains("0.333333"));
        assert!(!s.contains("0.3333333"));
    }
}
