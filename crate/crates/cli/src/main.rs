use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use linsplat::bench::{run_bench, BenchConfig};
use linsplat::densify::DensifyThresholds;
use linsplat::geometry::{project_scene, CameraRecord};
use linsplat::gradcheck::{compare, random_scene, summarize, Tolerance};
use linsplat::gradients::{AgsDistance, AgsScope};
use linsplat::io::{
    load_dataset, load_ply, load_png, save_ply, save_png, save_raw, write_run_config, RunLog,
};
use linsplat::kernel::{KernelConfig, KernelSpec};
use linsplat::losses::{loss_terms, psnr, ssim};
use linsplat::pattern::{generate_pattern, STUDY_PATTERNS};
use linsplat::raster::{rasterize, ExecMode, Precision};
use linsplat::train::{fit2d, fit3d, kernel_study, TrainConfig, TrainSink};
use linsplat::{Error, Image, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "linsplat", version, about = "Differentiable multi-kernel splatting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a fixed budget of image-space splats to a PNG or a built-in pattern.
    Fit2d(Fit2dArgs),
    /// Fit primitives to a multi-view scene manifest.
    Fit3d(Fit3dArgs),
    /// Render a PLY scene from one camera.
    Render(RenderArgs),
    /// Score images, or a PLY scene against a manifest.
    Eval(EvalArgs),
    /// Run fit2d for every (pattern, kernel) pair.
    Study(StudyArgs),
    /// Compare analytic gradients with central finite differences.
    CheckGrads(CheckGradsArgs),
    /// Time forward and backward passes per kernel.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    KernelPath,
    AllPaths,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Aligned,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Deterministic,
    Parallel,
}

#[derive(Args, Clone, Default)]
struct KernelArgs {
    /// Kernel family: gaussian, laplacian, cosine, quadratic, linear.
    #[arg(long)]
    kernel: Option<String>,
    /// Distribution alignment factor; defaults to the family's value.
    #[arg(long)]
    lambda: Option<f64>,
    /// Truncation radius of unbounded kernels, in aligned distance units.
    #[arg(long)]
    gaussian_cutoff: Option<f64>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Args, Clone, Default)]
struct TrainArgs {
    /// JSON training config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, value_enum)]
    ags: Option<Toggle>,
    #[arg(long, value_enum)]
    ags_scope: Option<ScopeArg>,
    /// Distance fed to the AGS weight: aligned (D/λ) or raw (D).
    #[arg(long, value_enum)]
    ags_distance: Option<DistanceArg>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Output directory for run.json, log.jsonl and results.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Fit2dArgs {
    /// PNG path or `pattern:NAME` (stripes8, checker4, circles4, radial, testcard, ...).
    #[arg(long)]
    target: String,
    #[arg(long)]
    budget: Option<usize>,
    /// Side length of generated patterns.
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    #[value(name = "7k")]
    Short,
    #[value(name = "30k-desk")]
    Long,
}

#[derive(Args)]
struct Fit3dArgs {
    #[arg(long)]
    scene: PathBuf,
    /// 7k: 7000 iterations; 30k-desk: 30000 iterations. `--iters` wins.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    sh_degree: Option<usize>,
    #[arg(long, value_enum)]
    densify: Option<Toggle>,
    /// Threshold table: 3dls or 3dgs.
    #[arg(long)]
    densify_preset: Option<String>,
    #[arg(long)]
    tau_grad: Option<f64>,
    #[arg(long)]
    tau_grow_2d: Option<f64>,
    #[arg(long)]
    tau_grow_3d: Option<f64>,
    #[arg(long)]
    tau_prune_2d: Option<f64>,
    #[arg(long)]
    tau_prune_3d: Option<f64>,
    #[arg(long)]
    tau_opacity: Option<f64>,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ply: PathBuf,
    /// Camera JSON: world_to_camera (16 row-major), fx, fy, cx, cy, width, height.
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also dump final transmittance (LSRAWF32: magic, u32 width, u32 height, f32 LE row-major).
    #[arg(long)]
    transmittance: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Rendered image to score against `--reference`.
    #[arg(long, requires = "reference", conflicts_with_all = ["ply", "scene"])]
    image: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// PLY scene to render through every camera of `--scene`.
    #[arg(long, requires = "scene")]
    ply: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Args)]
struct StudyArgs {
    /// Comma-separated pattern names.
    #[arg(long, value_delimiter = ',')]
    patterns: Option<Vec<String>>,
    /// Comma-separated kernel names.
    #[arg(long, value_delimiter = ',', default_value = "gaussian,laplacian,cosine,quadratic,linear")]
    kernels: Vec<String>,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long)]
    budget: Option<usize>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct CheckGradsArgs {
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 4)]
    splats: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    sh_degree: usize,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    splats: usize,
    #[arg(long, value_delimiter = ',', default_value = "gaussian,linear")]
    kernels: Vec<String>,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Optional CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit2d(a) => cmd_fit2d(a),
        Command::Fit3d(a) => cmd_fit3d(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Study(a) => cmd_study(a),
        Command::CheckGrads(a) => cmd_check_grads(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn base_config(train: &TrainArgs) -> Result<TrainConfig> {
    let Some(path) = &train.config else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn apply_kernel(cfg: &mut TrainConfig, k: &KernelArgs) {
    if let Some(name) = &k.kernel {
        cfg.kernel = KernelConfig::named(name);
    }
    if k.lambda.is_some() {
        cfg.kernel.lambda = k.lambda;
    }
    if k.gaussian_cutoff.is_some() {
        cfg.kernel.gaussian_cutoff = k.gaussian_cutoff;
    }
    if let Some(p) = k.precision {
        cfg.render.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(m) = k.mode {
        cfg.render.mode = exec_mode(m);
    }
}

fn exec_mode(m: ModeArg) -> ExecMode {
    match m {
        ModeArg::Deterministic => ExecMode::Deterministic,
        ModeArg::Parallel => ExecMode::Parallel,
    }
}

fn apply_train(cfg: &mut TrainConfig, t: &TrainArgs) {
    if let Some(s) = t.seed {
        cfg.seed = s;
    }
    if let Some(n) = t.iters {
        cfg.iterations = n;
    }
    if let Some(a) = t.ags {
        cfg.ags.enabled = matches!(a, Toggle::On);
    }
    if let Some(s) = t.ags_scope {
        cfg.ags.scope = match s {
            ScopeArg::KernelPath => AgsScope::KernelPath,
            ScopeArg::AllPaths => AgsScope::AllPaths,
        };
    }
    if let Some(d) = t.ags_distance {
        cfg.ags.distance = match d {
            DistanceArg::Aligned => AgsDistance::Aligned,
            DistanceArg::Raw => AgsDistance::Raw,
        };
    }
    if let Some(n) = t.snapshot_every {
        cfg.snapshot_every = n;
    }
}

fn kernel_spec(k: &KernelArgs) -> Result<KernelSpec> {
    let mut cfg = TrainConfig::default();
    apply_kernel(&mut cfg, k);
    cfg.kernel.resolve()
}

fn render_settings(k: &KernelArgs) -> linsplat::raster::RenderSettings {
    let mut cfg = TrainConfig::default();
    apply_kernel(&mut cfg, k);
    cfg.render
}

/// Pins λ and the cutoff so run.json records the values actually used.
fn resolved(cfg: &TrainConfig) -> Result<TrainConfig> {
    let mut out = cfg.clone();
    out.kernel = cfg.kernel.resolve()?.to_config();
    Ok(out)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_target(target: &str, size: usize) -> Result<Image> {
    match target.strip_prefix("pattern:") {
        Some(name) => generate_pattern(name, size),
        None => load_png(Path::new(target)),
    }
}

fn cmd_fit2d(a: Fit2dArgs) -> Result<()> {
    let mut cfg = base_config(&a.train)?;
    apply_kernel(&mut cfg, &a.kernel);
    apply_train(&mut cfg, &a.train);
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    cfg.validate()?;
    let target = load_target(&a.target, a.size)?;
    let out = &a.train.out;
    prepare_out(out)?;
    let mut run_cfg = serde_json::to_value(resolved(&cfg)?).map_err(|e| Error::Internal(e.to_string()))?;
    run_cfg["target"] = json!(a.target);
    write_run_config(&out.join("run.json"), &run_cfg)?;
    let mut log = RunLog::create(&out.join("log.jsonl"))?;
    let fit = fit2d(&target, &cfg, &mut log)?;
    log.flush()?;
    save_png(&out.join("fit.png"), &fit.image)?;
    save_png(&out.join("target.png"), &target)?;
    let flat: Vec<_> = fit.prims.iter().map(|p| p.to_primitive3d()).collect();
    save_ply(&out.join("final.ply"), &flat)?;
    println!("psnr {:.4} ssim {:.5} splats {}", fit.psnr, fit.ssim, fit.prims.len());
    Ok(())
}

fn cmd_fit3d(a: Fit3dArgs) -> Result<()> {
    let mut cfg = base_config(&a.train)?;
    if let Some(p) = a.preset {
        cfg.iterations = match p {
            Preset::Short => 7_000,
            Preset::Long => 30_000,
        };
    }
    apply_kernel(&mut cfg, &a.kernel);
    apply_train(&mut cfg, &a.train);
    if let Some(d) = a.sh_degree {
        cfg.sh_degree = d;
    }
    if let Some(d) = a.densify {
        cfg.densify.enabled = matches!(d, Toggle::On);
    }
    if let Some(p) = &a.densify_preset {
        cfg.densify.thresholds = DensifyThresholds::preset(p)?;
    }
    let th = &mut cfg.densify.thresholds;
    let overrides = [
        (a.tau_grad, &mut th.grad_threshold),
        (a.tau_grow_2d, &mut th.grow_scale2d),
        (a.tau_grow_3d, &mut th.grow_scale3d),
        (a.tau_prune_2d, &mut th.prune_scale2d),
        (a.tau_prune_3d, &mut th.prune_scale3d),
        (a.tau_opacity, &mut th.prune_opacity),
    ];
    for (flag, slot) in overrides {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    cfg.validate()?;
    let data = load_dataset(&a.scene)?;
    let out = &a.train.out;
    prepare_out(out)?;
    let mut run_cfg = serde_json::to_value(resolved(&cfg)?).map_err(|e| Error::Internal(e.to_string()))?;
    run_cfg["scene"] = json!(a.scene);
    write_run_config(&out.join("run.json"), &run_cfg)?;
    let mut sink = TrainSink {
        log: RunLog::create(&out.join("log.jsonl"))?,
        snapshot_dir: Some(out.join("snapshots")),
    };
    let fit = fit3d(&data, &cfg, &mut sink)?;
    save_ply(&out.join("final.ply"), &fit.prims)?;
    println!(
        "test psnr {:.4} ssim {:.5} primitives {} held-out cameras {:?}",
        fit.test_psnr,
        fit.test_ssim,
        fit.prims.len(),
        fit.test_cameras
    );
    Ok(())
}

fn read_camera(path: &Path) -> Result<CameraRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let spec = kernel_spec(&a.kernel)?;
    let settings = render_settings(&a.kernel);
    let prims = load_ply(&a.ply)?;
    let camera = read_camera(&a.camera)?.to_camera()?;
    let proj = project_scene(&prims, &camera, &spec)?;
    let out = rasterize(&proj.splats, &spec, &settings, camera.width, camera.height)?;
    save_png(&a.out, &out.image)?;
    if let Some(path) = &a.transmittance {
        save_raw(path, camera.width, camera.height, &out.final_transmittance)?;
    }
    println!("rendered {} of {} primitives", proj.splats.len(), prims.len());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if let (Some(img), Some(reference)) = (&a.image, &a.reference) {
        let pred = load_png(img)?;
        let gt = load_png(reference)?;
        let t = loss_terms(&pred, &gt)?;
        let report = json!({"psnr": psnr(&pred, &gt)?, "ssim": t.ssim, "l1": t.l1, "l2": t.l2});
        println!("{report}");
        return Ok(());
    }
    let (Some(ply), Some(scene)) = (&a.ply, &a.scene) else {
        return Err(config_err("eval needs --image/--reference or --ply/--scene"));
    };
    let spec = kernel_spec(&a.kernel)?;
    let settings = render_settings(&a.kernel);
    let prims = load_ply(ply)?;
    let data = load_dataset(scene)?;
    let mut rows = Vec::new();
    for (i, (cam, gt)) in data.cameras.iter().zip(&data.images).enumerate() {
        let proj = project_scene(&prims, cam, &spec)?;
        let out = rasterize(&proj.splats, &spec, &settings, cam.width, cam.height)?;
        rows.push(json!({"camera": i, "psnr": psnr(&out.image, gt)?, "ssim": ssim(&out.image, gt)?}));
    }
    for r in &rows {
        println!("{r}");
    }
    Ok(())
}

fn cmd_study(a: StudyArgs) -> Result<()> {
    let mut cfg = base_config(&a.train)?;
    apply_train(&mut cfg, &a.train);
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    cfg.validate()?;
    let patterns = a
        .patterns
        .unwrap_or_else(|| STUDY_PATTERNS.iter().map(|s| s.to_string()).collect());
    let kernels: Vec<KernelConfig> = a.kernels.iter().map(|k| KernelConfig::named(k)).collect();
    let out = &a.train.out;
    prepare_out(out)?;
    let run_cfg = json!({"train": resolved(&cfg)?, "patterns": patterns, "kernels": kernels, "size": a.size});
    write_run_config(&out.join("run.json"), &run_cfg)?;
    let rows = kernel_study(&patterns, &kernels, a.size, &cfg, Some(out))?;
    let mut log = RunLog::create(&out.join("log.jsonl"))?;
    for r in &rows {
        log.event("study_row", r)?;
        println!("{}", r.csv());
    }
    log.flush()
}

fn cmd_check_grads(a: CheckGradsArgs) -> Result<()> {
    if a.scenes == 0 || a.splats == 0 || !(a.step > 0.0) {
        return Err(config_err("check-grads needs positive --scenes, --splats and --step"));
    }
    let spec = kernel_spec(&a.kernel)?;
    let mut rows = Vec::new();
    for i in 0..a.scenes {
        let scene = random_scene(a.seed + i as u64, a.splats, a.size, a.sh_degree);
        rows.extend(compare(&scene, &spec, a.step, Tolerance::default())?);
    }
    let summary = summarize(&rows);
    println!("{:<10} {:>8} {:>7} {:>12}  result", "group", "checked", "failed", "max_rel");
    for s in &summary {
        let verdict = if s.failed == 0 { "PASS" } else { "FAIL" };
        println!("{:<10} {:>8} {:>7} {:>12.3e}  {verdict}", s.group, s.checked, s.failed, s.max_rel_error);
    }
    let failed: usize = summary.iter().map(|s| s.failed).sum();
    if failed > 0 {
        return Err(Error::Internal(format!("{failed} gradient components disagree")));
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let kernels = a
        .kernels
        .iter()
        .map(|k| KernelSpec::named(k))
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = BenchConfig {
        splats: a.splats,
        width: a.width,
        height: a.height,
        seed: a.seed,
        repeats: a.repeats,
        ..BenchConfig::default()
    };
    if let Some(m) = a.mode {
        cfg.render.mode = exec_mode(m);
    }
    let rows = run_bench(&cfg, &kernels)?;
    let mut text = String::from(linsplat::bench::CSV_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    print!("{text}");
    if let Some(path) = &a.out {
        fs::write(path, text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(())
}
