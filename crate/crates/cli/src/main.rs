//! `yolopose` command line: decode head tensors, evaluate keypoint results,
//! generate synthetic scenes, fit raw head channels and check gradients.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{
    pick, render, AblateSettings, ConfigFile, DecodeSettings, EvalSettings, FitSettings, GradcheckSettings,
    SynthSettings,
};
use yolopose::eval::{evaluate_with, EvalParams, EvalReport};
use yolopose::fit::{ablate, fit, FitConfig, FitImage, KptInit, Schedule};
use yolopose::gradcheck::{run_all, GradCheckConfig};
use yolopose::io::{
    load_coco, load_manifest, load_results, save_coco, save_manifest, save_results, write_heads,
    write_json_rounded, write_trajectory,
};
use yolopose::synth::{ideal_heads, synth, to_gt_set, SynthConfig};
use yolopose::{
    decode, letterbox, AnchorSpec, AreaRange, AssignConfig, Detection, KptLossKind, LetterboxTransform,
    PostprocessConfig,
};

/// Failure reported as one JSON line on stderr.
#[derive(Debug)]
pub struct CliError {
    kind: String,
    message: String,
}

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.into(),
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        CliError::new("usage", message)
    }

    fn exit_code(&self) -> u8 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = json!({"error": {"kind": self.kind, "message": self.message}});
        write!(f, "{line}")
    }
}

impl From<yolopose::Error> for CliError {
    fn from(e: yolopose::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "yolopose", version, about = "Anchor-based pose decoding, losses, fitting and OKS evaluation")]
struct Cli {
    /// TOML file with one table per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective settings of the subcommand and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode head tensors into post-processed keypoint results.
    Decode(DecodeArgs),
    /// Evaluate keypoint results against COCO-format ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic COCO-format scene set.
    Synth(SynthArgs),
    /// Fit raw head channels to ground truth by gradient descent.
    Fit(FitArgs),
    /// Compare keypoint losses under identical fitting settings.
    Ablate(AblateArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    conf: Option<f64>,
    #[arg(long)]
    iou: Option<f64>,
    #[arg(long)]
    kpt_conf: Option<f64>,
    #[arg(long)]
    max_det: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    dt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// all, medium or large.
    #[arg(long)]
    area_range: Option<String>,
    #[arg(long)]
    max_det: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    min_persons: Option<usize>,
    #[arg(long)]
    max_persons: Option<usize>,
    #[arg(long)]
    min_height: Option<f64>,
    #[arg(long)]
    max_height: Option<f64>,
    #[arg(long)]
    image_size: Option<u32>,
    #[arg(long)]
    occlusion: Option<f64>,
    #[arg(long)]
    out_of_view: Option<f64>,
    #[arg(long)]
    outside_box: Option<f64>,
    /// Skip writing head tensors.
    #[arg(long)]
    no_heads: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    /// oks, l1 or scale_l1.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// constant or cosine.
    #[arg(long)]
    schedule: Option<String>,
    /// jitter or prior.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    input_size: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    input_size: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the per-suite report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    v.as_deref()
        .ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let err = CliError::usage(first);
            eprintln!("{err}");
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let print = cli.print_config;
    match cli.command {
        Command::Decode(a) => {
            let base: DecodeSettings = file.section("decode")?;
            let s = DecodeSettings {
                conf: pick(a.conf, base.conf),
                iou: pick(a.iou, base.iou),
                kpt_conf: pick(a.kpt_conf, base.kpt_conf),
                max_det: pick(a.max_det, base.max_det),
            };
            if print {
                print!("{}", render("decode", &s));
                return Ok(());
            }
            cmd_decode(&a, &s)
        }
        Command::Eval(a) => {
            let base: EvalSettings = file.section("eval")?;
            let s = EvalSettings {
                area_range: pick(a.area_range.clone(), base.area_range),
                max_det: pick(a.max_det, base.max_det),
            };
            if print {
                print!("{}", render("eval", &s));
                return Ok(());
            }
            cmd_eval(&a, &s)
        }
        Command::Synth(a) => {
            let base: SynthSettings = file.section("synth")?;
            let s = SynthSettings {
                seed: pick(a.seed, base.seed),
                images: pick(a.images, base.images),
                min_persons: pick(a.min_persons, base.min_persons),
                max_persons: pick(a.max_persons, base.max_persons),
                min_height: pick(a.min_height, base.min_height),
                max_height: pick(a.max_height, base.max_height),
                image_size: pick(a.image_size, base.image_size),
                occlusion: pick(a.occlusion, base.occlusion),
                out_of_view: pick(a.out_of_view, base.out_of_view),
                outside_box: pick(a.outside_box, base.outside_box),
                heads: base.heads && !a.no_heads,
                saturation: base.saturation,
            };
            if print {
                print!("{}", render("synth", &s));
                return Ok(());
            }
            cmd_synth(&a, &s)
        }
        Command::Fit(a) => {
            let base: FitSettings = file.section("fit")?;
            let s = FitSettings {
                loss: pick(a.loss.clone(), base.loss),
                steps: pick(a.steps, base.steps),
                lr: pick(a.lr, base.lr),
                schedule: pick(a.schedule.clone(), base.schedule),
                init: pick(a.init.clone(), base.init),
                jitter: pick(a.jitter, base.jitter),
                seed: pick(a.seed, base.seed),
                input_size: pick(a.input_size, base.input_size),
            };
            if print {
                print!("{}", render("fit", &s));
                return Ok(());
            }
            cmd_fit(&a, &s)
        }
        Command::Ablate(a) => {
            let base: AblateSettings = file.section("ablate")?;
            let s = AblateSettings {
                steps: pick(a.steps, base.steps),
                lr: pick(a.lr, base.lr),
                schedule: pick(a.schedule.clone(), base.schedule),
                init: pick(a.init.clone(), base.init),
                jitter: pick(a.jitter, base.jitter),
                seed: pick(a.seed, base.seed),
                input_size: pick(a.input_size, base.input_size),
            };
            if print {
                print!("{}", render("ablate", &s));
                return Ok(());
            }
            cmd_ablate(&a, &s)
        }
        Command::Gradcheck(a) => {
            let base: GradcheckSettings = file.section("gradcheck")?;
            let s = GradcheckSettings {
                trials: pick(a.trials, base.trials),
                seed: pick(a.seed, base.seed),
            };
            if print {
                print!("{}", render("gradcheck", &s));
                return Ok(());
            }
            cmd_gradcheck(&a, &s)
        }
    }
}

fn cmd_decode(a: &DecodeArgs, s: &DecodeSettings) -> CliResult {
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let pp = PostprocessConfig {
        conf_threshold: s.conf,
        nms_iou_threshold: s.iou,
        kpt_conf_threshold: s.kpt_conf,
        max_detections: s.max_det,
    };
    pp.validate()?;
    let mut all: Vec<Detection<f64>> = Vec::new();
    for (idx, loaded) in load_manifest(manifest)?.into_iter().enumerate() {
        let m = &loaded.manifest;
        let image_id = m.image_id.unwrap_or(idx as u64);
        let size = m.input_size as f32;
        let t = match (m.src_width, m.src_height) {
            (Some(w), Some(h)) => letterbox(w as f32, h as f32, size),
            (None, None) => LetterboxTransform::identity(size),
            _ => {
                return Err(CliError::new(
                    "format",
                    format!("{}: src_width and src_height must be given together", manifest.display()),
                ))
            }
        };
        let cells = decode(&loaded.heads, &loaded.spec, image_id)?;
        let kept = yolopose::postprocess(&cells, &pp, &t);
        all.extend(kept.iter().map(Detection::cast::<f64>));
    }
    save_results(out, &all)?;
    println!("decoded {} detections -> {}", all.len(), out.display());
    Ok(())
}

fn area_range(name: &str) -> CliResult<AreaRange> {
    AreaRange::parse(name).ok_or_else(|| CliError::usage(format!("unknown area range '{name}' (all, medium, large)")))
}

/// Fixed-format summary lines, one per metric.
pub fn summary_lines(r: &EvalReport, range: &str, max_det: usize) -> Vec<String> {
    let line = |label: &str, oks: &str, area: &str, v: f64| {
        format!("{label:<8} @[ OKS={oks:<9} | area={area:>6} | maxDets={max_det:>3} ] = {v:.6}")
    };
    vec![
        line("AP", "0.50:0.95", range, r.ap),
        line("AP50", "0.50", range, r.ap50),
        line("AP75", "0.75", range, r.ap75),
        line("APL", "0.50:0.95", "large", r.ap_large),
        line("AR", "0.50:0.95", range, r.ar),
    ]
}

fn cmd_eval(a: &EvalArgs, s: &EvalSettings) -> CliResult {
    let gt_path = required(&a.gt, "gt")?;
    let dt_path = required(&a.dt, "dt")?;
    let out = required(&a.out, "out")?;
    let range = area_range(&s.area_range)?;
    let gt = load_coco(gt_path)?;
    let dets: Vec<Detection<f64>> = load_results(dt_path)?.iter().map(|r| r.to_detection()).collect();
    let ids: Vec<u64> = gt.images.iter().map(|i| i.id).collect();
    let params = EvalParams {
        max_detections: s.max_det,
        ..EvalParams::default()
    };
    let report = evaluate_with(&gt.instances, &dets, &ids, range, &params)?;
    write_json_rounded(out, &report)?;
    for l in summary_lines(&report, &s.area_range, s.max_det) {
        println!("{l}");
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, s: &SynthSettings) -> CliResult {
    let out = required(&a.out, "out")?;
    let cfg = SynthConfig {
        seed: s.seed,
        n_images: s.images,
        persons: (s.min_persons, s.max_persons),
        heights: (s.min_height, s.max_height),
        image_size: s.image_size,
        occlusion_rate: s.occlusion,
        out_of_view_rate: s.out_of_view,
        outside_box_rate: s.outside_box,
        ..SynthConfig::default()
    };
    let spec = AnchorSpec::<f64>::default();
    let assign_cfg = AssignConfig::default();
    let scenes = synth(&cfg, &spec, &assign_cfg)?;
    let gt_path = out.join("gt.json");
    save_coco(&gt_path, &to_gt_set(&scenes))?;
    let persons: usize = scenes.iter().map(|s| s.instances.len()).sum();
    if s.heads {
        let spec32 = spec.cast::<f32>();
        let mut manifests = Vec::with_capacity(scenes.len());
        for scene in &scenes {
            let heads = ideal_heads(scene, &spec, &assign_cfg, s.saturation)?.cast::<f32>();
            manifests.push(write_heads(
                out.join("heads"),
                &format!("img{:06}", scene.image_id),
                &heads,
                &spec32,
                Some(scene.image_id),
                None,
            )?);
        }
        for m in manifests.iter_mut() {
            for sc in m.scales.iter_mut() {
                sc.file = format!("heads/{}", sc.file);
            }
        }
        save_manifest(out.join("manifest.json"), &manifests)?;
    }
    println!(
        "synthesized {} images, {} persons -> {}",
        scenes.len(),
        persons,
        gt_path.display()
    );
    Ok(())
}

fn parse_schedule(s: &str) -> CliResult<Schedule> {
    Schedule::parse(s).ok_or_else(|| CliError::usage(format!("unknown schedule '{s}' (constant, cosine)")))
}

fn parse_init(init: &str, jitter: f64, seed: u64) -> CliResult<KptInit> {
    match init {
        "prior" => Ok(KptInit::Prior),
        "jitter" => Ok(KptInit::Jitter { rel_sigma: jitter, seed }),
        other => Err(CliError::usage(format!("unknown init '{other}' (jitter, prior)"))),
    }
}

fn cmd_fit(a: &FitArgs, s: &FitSettings) -> CliResult {
    let gt_path = required(&a.gt, "gt")?;
    let out = required(&a.out, "out")?;
    let kpt_loss = KptLossKind::parse(&s.loss)
        .ok_or_else(|| CliError::usage(format!("unknown loss '{}' (oks, l1, scale_l1)", s.loss)))?;
    if s.steps == 0 {
        return Err(CliError::usage("--steps must be positive"));
    }
    let cfg = FitConfig {
        steps: s.steps,
        learning_rate: s.lr,
        schedule: parse_schedule(&s.schedule)?,
        kpt_loss,
        init: parse_init(&s.init, s.jitter, s.seed)?,
        input_size: s.input_size,
        ..FitConfig::default()
    };
    let gt = load_coco(gt_path)?;
    let images = FitImage::from_gt_set(&gt);
    let outcome = fit(&images, &AnchorSpec::default(), &cfg)?;
    write_trajectory(out.join("trajectory.csv"), &outcome.trajectory)?;
    save_results(out.join("results.json"), &outcome.detections)?;
    write_json_rounded(out.join("report.json"), &outcome.report)?;
    let last = outcome.trajectory.last().expect("at least the initial row");
    println!(
        "fit {} steps, loss {} -> {:.6}, AP {:.6} -> {}",
        s.steps,
        s.loss,
        last.total,
        outcome.report.ap,
        out.display()
    );
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, s: &AblateSettings) -> CliResult {
    let gt_path = required(&a.gt, "gt")?;
    let out = required(&a.out, "out")?;
    if s.steps == 0 {
        return Err(CliError::usage("--steps must be positive"));
    }
    let cfg = FitConfig {
        steps: s.steps,
        learning_rate: s.lr,
        schedule: parse_schedule(&s.schedule)?,
        init: parse_init(&s.init, s.jitter, s.seed)?,
        input_size: s.input_size,
        ..FitConfig::default()
    };
    let gt = load_coco(gt_path)?;
    let table = ablate(&FitImage::from_gt_set(&gt), &AnchorSpec::default(), &cfg)?;
    write_json_rounded(out, &table)?;
    for r in &table.rows {
        println!("{:<9} AP {:.6}  AP50 {:.6}  AR {:.6}", r.variant, r.ap, r.ap50, r.ar);
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, s: &GradcheckSettings) -> CliResult {
    if s.trials == 0 {
        return Err(CliError::usage("--trials must be positive"));
    }
    let cfg = GradCheckConfig {
        trials: s.trials,
        seed: s.seed,
        ..GradCheckConfig::default()
    };
    let reports = run_all(&cfg);
    for r in &reports {
        println!(
            "{:<14} trials={:<4} failures={:<3} max_abs_err={:.3e} max_rel_err={:.3e} {}",
            r.name,
            r.trials,
            r.failures,
            r.max_abs_err,
            r.max_rel_err,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        write_json_rounded(out, &reports)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new("gradcheck", format!("suites failed: {}", failed.join(", "))))
    }
}
