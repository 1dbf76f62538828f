use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use avatar_recon::body::BodyModel;
use avatar_recon::geometry::io::read_ply;
use avatar_recon::metrics::{evaluate_pair, format_table, MetricConfig};
use avatar_recon::normals::ProviderKind;
use avatar_recon::pipeline::{
    compare_aggregate, compare_runs, run_label, run_pipeline, PipelineConfig, RunManifest, RunOptions, Stage,
    ViewSelection,
};
use avatar_recon::synth::{generate_scene, load_ground_truth, write_scene, PoseKind, SceneConfig, SceneMeta};
use avatar_recon::{Error, Result};

const DEFAULT_OUT: &str = "avatar-recon-out";

/// Multi-view clothed avatar reconstruction on synthetic scenes.
#[derive(Debug, Parser)]
#[command(name = "avatar-recon", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Root seed. Subject seed for `synth`, metric sampling seed otherwise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config: a scene config for `synth`, a pipeline config otherwise.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "AVATAR_RECON_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
    /// `all`, a view count such as `2`, or indices such as `0,2,4`.
    /// For `synth`, the number of rig cameras.
    #[arg(long, global = true)]
    views: Option<String>,
    /// Image resolution of synthesized scenes.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// More log output; repeat for debug detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene directory, or the ten-subject suite.
    Synth(SynthArgs),
    /// Fit the body model to the selected views.
    FitBody(RunArgs),
    /// Run every stage up to the fused mesh, without evaluation.
    Reconstruct(RunArgs),
    /// Score a mesh against a scene's ground truth.
    Evaluate(EvaluateArgs),
    /// Full run including evaluation; synthesizes a scene when none is given.
    Pipeline(PipelineArgs),
    /// Tabulate metrics of finished runs and check the view-count ordering.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct SceneArgs {
    /// Clothing displacement range in metres.
    #[arg(long)]
    amplitude: Option<f64>,
    /// rest, walking or arms-raised.
    #[arg(long)]
    pose: Option<String>,
    /// Height of a bump on the back, in metres.
    #[arg(long, value_name = "METRES")]
    hood: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Write the ten benchmark subjects into `subject_0` .. `subject_9`.
    #[arg(long)]
    suite: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scene directory written by `synth`.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Source of clothed normal maps: file or oracle.
    #[arg(long)]
    provider: Option<String>,
    /// Reuse finished stages of an earlier run in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this stage.
    #[arg(long)]
    until: Option<String>,
    #[arg(long)]
    lambda_n: Option<f64>,
    #[arg(long)]
    lambda_l: Option<f64>,
    #[arg(long)]
    lambda_h: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Same as `--lambda-h 0`.
    #[arg(long)]
    no_head_loss: bool,
    /// Surface samples per mesh for the metrics.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    synth: SceneArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Reconstructed mesh (binary or ASCII PLY).
    mesh: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Run directories or manifest files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Average runs with equal view counts, one row per view count.
    #[arg(long)]
    aggregate: bool,
    /// Also write the table as CSV.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth(args) => synth(g, args),
        Command::FitBody(args) => {
            let cfg = pipeline_config(g, args, None)?;
            finish(run_pipeline(&cfg, &run_options(args, Some(Stage::Fit))?)?)
        }
        Command::Reconstruct(args) => {
            let mut cfg = pipeline_config(g, args, None)?;
            cfg.evaluate = false;
            finish(run_pipeline(&cfg, &run_options(args, None)?)?)
        }
        Command::Evaluate(args) => evaluate(g, args),
        Command::Pipeline(args) => {
            let out = out_dir(g);
            let scene = match (&args.run.scene, configured_scene(g)?) {
                (Some(s), _) => s.clone(),
                (None, Some(s)) => s,
                (None, None) => synth_for_pipeline(g, &args.synth, &out.join("scene"))?,
            };
            let cfg = pipeline_config(g, &args.run, Some(scene))?;
            finish(run_pipeline(&cfg, &run_options(&args.run, None)?)?)
        }
        Command::Compare(args) => compare(args),
    }
}

fn out_dir(g: &Global) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn configured_scene(g: &Global) -> Result<Option<PathBuf>> {
    Ok(match &g.config {
        Some(p) => Some(PipelineConfig::read(p)?.scene).filter(|s| !s.as_os_str().is_empty()),
        None => None,
    })
}

fn scene_config(g: &Global, args: &SceneArgs, base: SceneConfig) -> Result<SceneConfig> {
    let mut sc = base;
    if let Some(seed) = g.seed {
        sc.subject_seed = seed;
        sc.noise_seed = seed.wrapping_add(1);
    }
    if let Some(r) = g.resolution {
        sc.resolution = r;
    }
    if let Some(v) = &g.views {
        sc.views = v
            .parse()
            .map_err(|_| Error::Config(format!("--views {v:?} must be a camera count when synthesizing")))?;
    }
    if let Some(a) = args.amplitude {
        sc.amplitude = a;
    }
    if let Some(h) = args.hood {
        sc.hood_height = Some(h);
    }
    if let Some(p) = &args.pose {
        sc.pose = serde_json::from_value::<PoseKind>(serde_json::Value::String(p.clone()))
            .map_err(|_| Error::Config(format!("unknown pose {p:?}; expected rest, walking or arms-raised")))?;
    }
    sc.validate()?;
    Ok(sc)
}

fn synth(g: &Global, args: &SynthArgs) -> Result<()> {
    let out = out_dir(g);
    let model = BodyModel::standard();
    if args.suite {
        for (i, sc) in SceneConfig::suite().into_iter().enumerate() {
            let mut sc = sc;
            if let Some(r) = g.resolution {
                sc.resolution = r;
            }
            let dir = out.join(format!("subject_{i}"));
            write_scene(&generate_scene(model, &sc)?, &dir)?;
            println!("{}", dir.display());
        }
        return Ok(());
    }
    let base = match &g.config {
        Some(p) => read_json(p)?,
        None => SceneConfig::default(),
    };
    let sc = scene_config(g, &args.scene, base)?;
    write_scene(&generate_scene(model, &sc)?, &out)?;
    println!("{}", out.display());
    Ok(())
}

/// Synthesizes the pipeline's own scene unless an identical one is
/// already on disk.
fn synth_for_pipeline(g: &Global, args: &SceneArgs, dir: &Path) -> Result<PathBuf> {
    let sc = scene_config(g, args, SceneConfig::default())?;
    let existing = dir.join("scene.json");
    if existing.is_file() {
        if let Ok(meta) = read_json::<SceneMeta>(&existing) {
            if meta.config == sc {
                log::info!("reusing scene in {}", dir.display());
                return Ok(dir.to_path_buf());
            }
        }
    }
    write_scene(&generate_scene(BodyModel::standard(), &sc)?, dir)?;
    Ok(dir.to_path_buf())
}

fn pipeline_config(g: &Global, args: &RunArgs, scene: Option<PathBuf>) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = scene.or_else(|| args.scene.clone()) {
        cfg.scene = s;
    }
    if g.out.is_some() || cfg.out.as_os_str().is_empty() {
        cfg.out = out_dir(g);
    }
    if let Some(v) = &g.views {
        cfg.views = v.parse::<ViewSelection>()?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &args.provider {
        cfg.provider = match p.as_str() {
            "file" => ProviderKind::File,
            "oracle" => ProviderKind::Oracle,
            other => {
                return Err(Error::Config(format!(
                    "unknown provider {other:?}; expected file or oracle"
                )))
            }
        };
    }
    if let Some(l) = args.lambda_n {
        cfg.jmbo.lambda_n = l;
    }
    if let Some(l) = args.lambda_l {
        cfg.jmbo.lambda_l = l;
    }
    if let Some(l) = args.lambda_h {
        cfg.jmbo.lambda_h = l;
    }
    if args.no_head_loss {
        cfg.jmbo.lambda_h = 0.0;
    }
    if let Some(n) = args.max_iters {
        cfg.jmbo.max_iterations = n;
    }
    if let Some(n) = args.samples {
        cfg.metric_samples = n;
    }
    if cfg.scene.as_os_str().is_empty() {
        return Err(Error::Config("a scene directory is required (--scene)".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_options(args: &RunArgs, until: Option<Stage>) -> Result<RunOptions> {
    Ok(RunOptions {
        resume: args.resume,
        until: match &args.until {
            Some(s) => Some(s.parse()?),
            None => until,
        },
    })
}

fn finish(manifest: RunManifest) -> Result<()> {
    for r in &manifest.stages {
        let how = if r.resumed { "reused" } else { "ran" };
        println!("{:<10} {how:<6} {:>8.2} s", r.stage, r.seconds);
    }
    if manifest.metric_report.is_some() {
        let rows = vec![(run_label(manifest.views.len()), manifest.metrics()?)];
        print!("{}", format_table(&rows));
    }
    println!(
        "manifest: {}",
        manifest.root.join(avatar_recon::pipeline::MANIFEST_FILE).display()
    );
    Ok(())
}

fn evaluate(g: &Global, args: &EvaluateArgs) -> Result<()> {
    let rec = read_ply(&args.mesh)?;
    let gt = load_ground_truth(&args.scene)?;
    let metric = MetricConfig {
        samples: args.samples,
        seed: g.seed.unwrap_or(0),
    };
    let report = evaluate_pair(&rec, &gt.clothed, &metric)?;
    print!("{}", format_table(&[(args.mesh.display().to_string(), report.clone())]));
    if let Some(out) = &g.out {
        fs::create_dir_all(out).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        report.write_json(&out.join("metrics.json"))?;
    }
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<()> {
    let manifests = args
        .runs
        .iter()
        .map(|p| RunManifest::read(p))
        .collect::<Result<Vec<_>>>()?;
    let comparison = if args.aggregate {
        let mut groups: Vec<Vec<RunManifest>> = Vec::new();
        for m in manifests {
            match groups.iter_mut().find(|g| g[0].views.len() == m.views.len()) {
                Some(g) => g.push(m),
                None => groups.push(vec![m]),
            }
        }
        compare_aggregate(&groups)?
    } else {
        compare_runs(&manifests)?
    };
    print!("{}", comparison.table());
    if let Some(csv) = &args.csv {
        comparison.write_csv(csv)?;
    }
    Ok(())
}
