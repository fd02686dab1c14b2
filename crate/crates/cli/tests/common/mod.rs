//! Helpers shared by the CLI test targets: process runner, golden-file
//! comparison and the failure-path table.
//!
//! Set `YOLOPOSE_BLESS=1` to rewrite the golden files from the current output.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yolopose"))
        .args(args)
        .output()
        .expect("spawn yolopose")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs and requires exit 0.
pub fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Result<Output, String> {
    let o = run(args);
    if o.status.success() {
        Ok(o)
    } else {
        Err(format!("exit {:?}: {}", o.status.code(), stderr(&o)))
    }
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Compares `actual` with `tests/golden/{name}`, with `dir` replaced by `$OUT`.
pub fn check_golden(name: &str, actual: &str, dir: &Path) -> Result<(), String> {
    let actual = actual.replace(&p(dir), "$OUT");
    let path = golden_dir().join(name);
    if std::env::var_os("YOLOPOSE_BLESS").is_some() {
        fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        fs::write(&path, &actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", p(&path)))?;
    if expected == actual {
        Ok(())
    } else {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| expected.lines().count().min(actual.lines().count()));
        Err(format!("{name}: differs from golden at line {}", line + 1))
    }
}

pub fn check_golden_file(name: &str, file: &Path, dir: &Path) -> Result<(), String> {
    let text = fs::read_to_string(file).map_err(|e| format!("{}: {e}", p(file)))?;
    check_golden(name, &text, dir)
}

/// Requires a failed run with the given exit code and exactly one stderr line
/// of the form `{"error":{"kind":..,"message":..}}` with the given kind.
pub fn expect_error(o: &Output, kind: &str, code: i32) -> Result<String, String> {
    let err = stderr(o);
    if o.status.code() != Some(code) {
        return Err(format!("expected exit {code}, got {:?} ({err})", o.status.code()));
    }
    let lines: Vec<&str> = err.lines().collect();
    if lines.len() != 1 {
        return Err(format!("expected one stderr line, got {}: {err}", lines.len()));
    }
    let v: Value = serde_json::from_str(lines[0]).map_err(|e| format!("not JSON ({e}): {}", lines[0]))?;
    let got = v["error"]["kind"].as_str().ok_or("missing error.kind")?;
    let message = v["error"]["message"].as_str().ok_or("missing error.message")?;
    if got != kind {
        return Err(format!("expected kind {kind}, got {got}: {message}"));
    }
    Ok(message.to_string())
}

/// synth -> decode -> eval on a small scene set, plus a short gradcheck, all
/// against golden files. Returns the AP of the decoded ideal heads.
pub fn golden_pipeline() -> Result<f64, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let synth_args = ["synth", "--seed", "7", "--images", "2", "--image-size", "256", "--out"];

    let o = ok(&[&synth_args[..], &[&p(dir)]].concat())?;
    check_golden("synth.stdout", &stdout(&o), dir)?;
    check_golden_file("synth_gt.json", &dir.join("gt.json"), dir)?;
    check_golden_file("synth_manifest.json", &dir.join("manifest.json"), dir)?;

    let again = dir.join("again");
    ok(&[&synth_args[..], &[&p(&again)]].concat())?;
    for f in ["gt.json", "heads/img000001_s0.bin", "heads/img000002_s3.bin"] {
        if fs::read(dir.join(f)).ok() != fs::read(again.join(f)).ok() {
            return Err(format!("synth output {f} is not deterministic"));
        }
    }

    let dets = dir.join("dets.json");
    let o = ok(&["decode", "--manifest", &p(&dir.join("manifest.json")), "--out", &p(&dets)])?;
    check_golden("decode.stdout", &stdout(&o), dir)?;
    check_golden_file("decode_results.json", &dets, dir)?;

    let report = dir.join("report.json");
    let o = ok(&["eval", "--gt", &p(&dir.join("gt.json")), "--dt", &p(&dets), "--out", &p(&report)])?;
    check_golden("eval.stdout", &stdout(&o), dir)?;
    check_golden_file("eval_report.json", &report, dir)?;

    let o = ok(&["gradcheck", "--trials", "10", "--seed", "3"])?;
    check_golden("gradcheck.stdout", &stdout(&o), dir)?;

    let r: Value = serde_json::from_str(&fs::read_to_string(&report).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    r["ap"].as_f64().ok_or_else(|| "report has no ap".into())
}

/// `eval` on results copied verbatim from the ground truth with score 1.
pub fn verbatim_results_ap() -> Result<f64, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    ok(&["synth", "--seed", "11", "--images", "3", "--no-heads", "--out", &p(dir)])?;
    let gt: Value = serde_json::from_str(&fs::read_to_string(dir.join("gt.json")).unwrap()).unwrap();
    let results: Vec<Value> = gt["annotations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            serde_json::json!({
                "image_id": a["image_id"],
                "category_id": 1,
                "keypoints": a["keypoints"],
                "score": 1.0,
            })
        })
        .collect();
    let dt = dir.join("copy.json");
    fs::write(&dt, serde_json::to_string(&results).unwrap()).unwrap();
    let report = dir.join("r.json");
    ok(&["eval", "--gt", &p(&dir.join("gt.json")), "--dt", &p(&dt), "--out", &p(&report)])?;
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    r["ap"].as_f64().ok_or_else(|| "report has no ap".into())
}

pub struct FailureCase {
    pub name: &'static str,
    pub args: Vec<String>,
    pub kind: &'static str,
    pub code: i32,
    /// Substring the error message must contain.
    pub mentions: &'static str,
}

fn case(name: &'static str, args: &[&str], kind: &'static str, code: i32, mentions: &'static str) -> FailureCase {
    FailureCase {
        name,
        args: args.iter().map(|s| s.to_string()).collect(),
        kind,
        code,
        mentions,
    }
}

/// Builds the inputs for every failure case inside `dir`.
pub fn failure_cases(dir: &Path) -> Vec<FailureCase> {
    let good = dir.join("good");
    let o = run(&["synth", "--seed", "1", "--images", "1", "--image-size", "128", "--min-height", "32", "--max-height", "96", "--out", &p(&good)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gt = p(&good.join("gt.json"));

    let truncated = dir.join("truncated");
    copy_dir(&good, &truncated);
    let bin = truncated.join("heads").join("img000001_s1.bin");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();

    let text = fs::read_to_string(good.join("gt.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["annotations"][0]["keypoints"].as_array_mut().unwrap().pop();
    let arity = dir.join("arity.json");
    fs::write(&arity, v.to_string()).unwrap();
    let malformed = dir.join("malformed.json");
    fs::write(&malformed, &text[..text.len() / 2]).unwrap();
    let bad_score = dir.join("bad_score.json");
    fs::write(&bad_score, format!(r#"[{{"image_id":1,"category_id":1,"keypoints":[{}],"score":2.0}}]"#, vec!["1"; 51].join(","))).unwrap();

    let unknown_key = dir.join("unknown.toml");
    fs::write(&unknown_key, "[fit]\nlearning_rate = 0.1\n").unwrap();
    let bad_toml = dir.join("bad.toml");
    fs::write(&bad_toml, "[fit\nlr = \n").unwrap();
    let bad_type = dir.join("type.toml");
    fs::write(&bad_type, "[fit]\nsteps = \"many\"\n").unwrap();

    let out = p(&dir.join("out"));
    let missing = p(&dir.join("missing.json"));
    let m = |d: &Path| p(&d.join("manifest.json"));
    vec![
        case("no subcommand", &[], "usage", 2, ""),
        case("unknown subcommand", &["train"], "usage", 2, "train"),
        case("unknown flag", &["decode", "--bogus"], "usage", 2, "--bogus"),
        case("non-numeric flag", &["fit", "--steps", "ten"], "usage", 2, "ten"),
        case("decode without manifest", &["decode", "--out", &out], "usage", 2, "--manifest"),
        case("decode missing manifest", &["decode", "--manifest", &missing, "--out", &out], "io", 1, "missing.json"),
        case("decode truncated tensor", &["decode", "--manifest", &m(&truncated), "--out", &out], "shape_mismatch", 1, "scale 1"),
        case("decode bad threshold", &["decode", "--manifest", &m(&good), "--conf", "1.5", "--out", &out], "config", 1, "[0, 1]"),
        case("decode gt as manifest", &["decode", "--manifest", &gt, "--out", &out], "format", 1, "gt.json"),
        case("eval malformed gt", &["eval", "--gt", &p(&malformed), "--dt", &gt, "--out", &out], "format", 1, "malformed JSON"),
        case("eval keypoint arity", &["eval", "--gt", &p(&arity), "--dt", &gt, "--out", &out], "format", 1, "found 50"),
        case("eval bad score", &["eval", "--gt", &gt, "--dt", &p(&bad_score), "--out", &out], "format", 1, "score 2"),
        case("eval unknown area range", &["eval", "--gt", &gt, "--dt", &gt, "--area-range", "tiny", "--out", &out], "usage", 2, "tiny"),
        case("synth empty person range", &["synth", "--min-persons", "3", "--max-persons", "1", "--out", &out], "config", 1, ""),
        case("synth unfittable heights", &["synth", "--min-height", "1", "--max-height", "1.5", "--out", &out], "config", 1, "anchor"),
        case("fit unknown loss", &["fit", "--gt", &gt, "--loss", "l2", "--out", &out], "usage", 2, "l2"),
        case("fit zero steps", &["fit", "--gt", &gt, "--steps", "0", "--out", &out], "usage", 2, "--steps"),
        case("fit unknown schedule", &["fit", "--gt", &gt, "--schedule", "linear", "--out", &out], "usage", 2, "linear"),
        case("fit divergence", &["fit", "--gt", &gt, "--input-size", "128", "--steps", "20", "--loss", "l1", "--lr", "1e6", "--out", &out], "divergence", 1, "10x"),
        case("fit non-positive rate", &["fit", "--gt", &gt, "--lr=0", "--out", &out], "config", 1, "learning rate"),
        case("ablate missing gt", &["ablate", "--gt", &missing, "--out", &out], "io", 1, "missing.json"),
        case("gradcheck zero trials", &["gradcheck", "--trials", "0"], "usage", 2, "--trials"),
        case("config unknown key", &["--config", &p(&unknown_key), "fit", "--print-config"], "config", 1, "learning_rate"),
        case("config malformed", &["--config", &p(&bad_toml), "fit", "--print-config"], "config", 1, "bad.toml"),
        case("config wrong type", &["--config", &p(&bad_type), "fit", "--print-config"], "config", 1, "[fit]"),
        case("config missing", &["--config", &missing, "fit", "--print-config"], "io", 1, "missing.json"),
    ]
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dest);
        } else {
            fs::copy(e.path(), dest).unwrap();
        }
    }
}

/// Runs every failure case; returns the number checked or the first mismatch.
pub fn failure_paths() -> Result<usize, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases = failure_cases(tmp.path());
    for c in &cases {
        let o = run(&c.args);
        let msg = expect_error(&o, c.kind, c.code).map_err(|e| format!("{}: {e}", c.name))?;
        if !msg.contains(c.mentions) {
            return Err(format!("{}: message {msg:?} does not mention {:?}", c.name, c.mentions));
        }
    }
    Ok(cases.len())
}
