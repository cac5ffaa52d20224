use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod failure;
mod manifest;

use failure::Failure;

#[derive(Debug, Parser, Serialize)]
#[command(name = "floorloc", version, about = "Floor-plan localisation from panoramic depth")]
struct Cli {
    /// Root seed; every random component derives a named sub-seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads. Outputs do not depend on this value.
    #[arg(long, global = true)]
    #[serde(skip)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate floor plans, optionally furnished.
    Generate(GenerateArgs),
    /// Train the layout branch, or the query branch against a frozen layout branch.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Localize one query depth image in a floor plan.
    Localize(LocalizeArgs),
    /// Run an evaluation suite on a seeded corpus.
    Eval(EvalArgs),
    /// Render a panoramic depth image at a pose.
    Render(RenderArgs),
    /// Draw the distance field of a query over the pose grid as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    scenes: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    width: f64,
    #[arg(long, default_value_t = 8.0)]
    height: f64,
    #[arg(long, default_value_t = 3)]
    min_rooms: usize,
    #[arg(long, default_value_t = 6)]
    max_rooms: usize,
    /// Probability of merging two rooms into an L shape.
    #[arg(long, default_value_t = 0.3)]
    merge: f64,
    /// Probability that a split lands at the midpoint.
    #[arg(long, default_value_t = 0.0)]
    symmetric: f64,
    #[arg(long, default_value = "empty")]
    furniture: String,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TrainCommand {
    Layout(TrainLayoutArgs),
    Query(TrainQueryArgs),
}

#[derive(Debug, Args, Serialize, Clone)]
struct TrainShared {
    /// Directory of plan files written by `generate`.
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    poses_per_scene: Option<usize>,
    #[arg(long)]
    n_neg: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct TrainLayoutArgs {
    #[command(flatten)]
    shared: TrainShared,
}

#[derive(Debug, Args, Serialize)]
struct TrainQueryArgs {
    #[command(flatten)]
    shared: TrainShared,
    /// Trained layout-branch params; the teacher is never modified.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long, default_value = "l2")]
    loss: String,
    #[arg(long, value_delimiter = ',', default_value = "empty,simple,full")]
    levels: Vec<String>,
    /// Number of trailing plans held out to measure the distillation gap.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
}

#[derive(Debug, Args, Serialize)]
struct LocalizeArgs {
    /// Plan file written by `generate`.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    layout: PathBuf,
    /// Query-branch params. Without them the query is encoded by the layout branch.
    #[arg(long)]
    query: Option<PathBuf>,
    /// Query depth image written by `render`.
    #[arg(long)]
    depth: PathBuf,
    #[arg(long, default_value = "vdr+lpo")]
    stages: String,
    #[arg(long, default_value_t = 0.5)]
    grid: f64,
    #[arg(long, default_value_t = 0.3)]
    clearance: f64,
    #[arg(long, default_value_t = 200)]
    vdr_samples: usize,
    #[arg(long)]
    vdr_radius: Option<f64>,
    /// Ground-truth pose `x,y`, recorded with the error in the result.
    #[arg(long, value_parser = parse_pose)]
    gt: Option<(f64, f64)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Suite {
    Main,
    MetricAblation,
    Furniture,
    GridResolution,
    VdrSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CorpusKind {
    Desk,
    Ambiguity,
    SingleRoom,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(value_enum)]
    suite: Suite,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    query: Option<PathBuf>,
    /// Defaults to `ambiguity` for metric-ablation and `desk` otherwise.
    #[arg(long, value_enum)]
    corpus: Option<CorpusKind>,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 10)]
    queries: usize,
    #[arg(long, default_value_t = 0.5)]
    grid: f64,
    /// Grid resolutions for metric-ablation and grid-resolution.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1")]
    grids: Vec<f64>,
    /// Vogel sample counts for vdr-sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,10,50,200")]
    n: Vec<usize>,
    /// Furniture levels for the furniture suite.
    #[arg(long, value_delimiter = ',', default_value = "empty,simple,full")]
    levels: Vec<String>,
    /// Furniture level of the query renders for the other suites.
    #[arg(long, default_value = "empty")]
    furniture: String,
    /// Override the suite's method list, e.g. `icp,latent,oracle-depth`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Also write chamfer3d distance-field figures for the first query of each scene.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct RenderArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, value_parser = parse_pose)]
    pose: (f64, f64),
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    /// Render walls, floor and ceiling only, ignoring furniture.
    #[arg(long)]
    layout_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PlotArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, value_parser = parse_pose)]
    query: (f64, f64),
    /// A layout metric, or `latent` for embedding distance.
    #[arg(long, default_value = "chamfer3d")]
    metric: String,
    /// Layout-branch params, needed for `--metric latent`.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    grid: f64,
    #[arg(long, default_value_t = 0.3)]
    clearance: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_pose(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    let (x, y) = (p(x)?, p(y)?);
    if !(x.is_finite() && y.is_finite()) {
        return Err("pose must be finite".into());
    }
    Ok((x, y))
}

fn out_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new("internal", e.to_string()))?;
    }
    let seed = cli.seed;
    match &cli.command {
        Command::Generate(a) => commands::generate(seed, a),
        Command::Train(TrainCommand::Layout(a)) => commands::train_layout(seed, a),
        Command::Train(TrainCommand::Query(a)) => commands::train_query(seed, a),
        Command::Localize(a) => commands::localize(seed, a),
        Command::Eval(a) => commands::eval(seed, a),
        Command::Render(a) => commands::render(seed, a),
        Command::Plot(a) => commands::plot(seed, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            return Failure::usage(first.trim_start_matches("error: ")).report();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
