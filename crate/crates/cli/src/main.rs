use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use handeye::eval::{format_table, ReprojMode};
use handeye::factors::{JacobianConfig, Weights};
use handeye::graph::{build_multi_with, build_single_with, GraphOptions};
use handeye::init::InitStrategy;
use handeye::model::{covisibility, Dataset};
use handeye::pipeline::{calibrate_multi, calibrate_single, evaluate, CalibrationOptions};
use handeye::solver::{LinearSolver, SolverConfig};
use handeye::synth::{generate, noise_sweep, Method, NoiseAxis, NoiseSpec, Preset, SceneSpec};
use handeye::Error;

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "handeye", version, about = "Eye-on-base hand-eye calibration for static cameras")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate every camera of a dataset (or one with --camera).
    Calibrate(CalibrateArgs),
    /// Generate a synthetic dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Run a noise sweep over synthetic scenes and write a CSV.
    Sweep(SweepArgs),
    /// Print the graph a dataset would produce.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Identity,
    Pnp,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Reduced,
    Dense,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    PaperScale,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::PaperScale => Preset::PaperScale,
        }
    }
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Camera to calibrate alone; implies --mode single.
    #[arg(long)]
    camera: Option<usize>,
    /// Reprojection weight.
    #[arg(long, default_value_t = 1e-6)]
    lambda1: f64,
    /// Cross-observation weight.
    #[arg(long, default_value_t = 1e-3)]
    lambda2: f64,
    /// One cross factor per ordered camera pair instead of per unordered pair.
    #[arg(long)]
    cross_ordered_pairs: bool,
}

impl GraphArgs {
    fn options(&self) -> handeye::Result<GraphOptions> {
        Ok(GraphOptions {
            weights: Weights::new(self.lambda1, self.lambda2)?,
            cross_ordered_pairs: self.cross_ordered_pairs,
        })
    }

    fn single_camera(&self) -> anyhow::Result<Option<usize>> {
        match (self.mode, self.camera) {
            (Some(Mode::Single), None) => Err(input("--mode single needs --camera <id>")),
            (Some(Mode::Multi), Some(_)) => Err(input("--camera conflicts with --mode multi")),
            (_, c) => Ok(c),
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum, default_value = "identity")]
    init: InitArg,
    /// Evaluate reprojection with board poses composed from the camera pose,
    /// robot pose and hand-board transform.
    #[arg(long)]
    chain_reproj: bool,
    /// Use finite-difference Jacobians for every factor family.
    #[arg(long)]
    numeric_jacobians: bool,
    #[arg(long, value_enum, default_value = "reduced")]
    linear_solver: SolverArg,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long, default_value = "result.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the preset's camera count.
    #[arg(long)]
    cameras: Option<usize>,
    /// Override the preset's number of robot poses.
    #[arg(long)]
    poses: Option<usize>,
}

impl SceneArgs {
    fn spec(&self) -> SceneSpec {
        let base = SceneSpec::preset(self.preset.into(), self.seed);
        match (self.cameras, self.poses) {
            (None, None) => base,
            (c, m) => SceneSpec::ring(c.unwrap_or(base.cameras.len()), m.unwrap_or(base.n_poses), self.seed),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Pixel noise per corner coordinate, px.
    #[arg(long, default_value_t = 0.0)]
    pixel_sigma: f64,
    /// Robot translation noise per axis, m.
    #[arg(long, default_value_t = 0.0)]
    trans_sigma: f64,
    /// Robot rotation noise per axis, rad.
    #[arg(long, default_value_t = 0.0)]
    rot_sigma: f64,
    /// Output directory for dataset.json and truth.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Visual,
    Translation,
    Rotation,
}

impl From<AxisArg> for NoiseAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Visual => NoiseAxis::Visual,
            AxisArg::Translation => NoiseAxis::Translation,
            AxisArg::Rotation => NoiseAxis::Rotation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    GraphSingle,
    GraphMulti,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::GraphSingle => Method::GraphSingle,
            MethodArg::GraphMulti => Method::GraphMulti,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated noise levels: px for visual, mm for translation,
    /// degrees for rotation.
    #[arg(long, value_delimiter = ',', required = true)]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["graph-single", "graph-multi"])]
    methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 1e-6)]
    lambda1: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda2: f64,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
}

/// Error carrying the process exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn input(message: impl Into<String>) -> anyhow::Error {
    Exit {
        code: EXIT_INPUT,
        message: message.into(),
    }
    .into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Exit>() {
        return e.code;
    }
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::LinearSolve { .. }) | Some(Error::NonFiniteResidual { .. }) => EXIT_NOT_CONVERGED,
        _ => EXIT_INPUT,
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    if !path.exists() {
        return Err(input(format!("dataset not found: {}", path.display())));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Dataset::from_json(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_calibrate(args: &CalibrateArgs) -> anyhow::Result<u8> {
    let dataset = load_dataset(&args.dataset)?;
    let camera = args.graph.single_camera()?;
    let mut solver = SolverConfig {
        max_iterations: args.max_iterations,
        linear_solver: match args.linear_solver {
            SolverArg::Reduced => LinearSolver::Reduced,
            SolverArg::Dense => LinearSolver::Dense,
        },
        ..Default::default()
    };
    if args.numeric_jacobians {
        solver.jacobians = JacobianConfig::numeric();
    }
    let opts = CalibrationOptions {
        graph: args.graph.options()?,
        init: match args.init {
            InitArg::Identity => InitStrategy::Identity,
            InitArg::Pnp => InitStrategy::Pnp,
        },
        solver,
    };
    let calibration = match camera {
        Some(c) => calibrate_single(&dataset, c, &opts)?,
        None => calibrate_multi(&dataset, &opts)?,
    };
    let mode = if args.chain_reproj {
        ReprojMode::Chain
    } else {
        ReprojMode::Direct
    };
    let result = evaluate(&dataset, calibration, mode);
    write_json(&args.out, &result)?;

    let report = &result.calibration.report;
    print!("{}", format_table(&result.reprojection, "calibration"));
    println!(
        "objective {:.6e} -> {:.6e} in {} iterations ({:?}, init {:?})",
        report.initial_objective,
        report.final_objective,
        report.iterations,
        report.termination,
        result.calibration.init
    );
    if !report.converged() {
        eprintln!("solver stopped after {} iterations without converging", report.iterations);
        return Ok(EXIT_NOT_CONVERGED);
    }
    if !result.reprojection.converged {
        eprintln!("reprojection statistics are implausible for a converged calibration");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<u8> {
    let spec = args.scene.spec();
    let noise = NoiseSpec {
        pixel_sigma: args.pixel_sigma,
        trans_sigma: args.trans_sigma,
        rot_sigma: args.rot_sigma,
    };
    let (dataset, truth) = generate(&spec, &noise)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut text = dataset.to_json()?;
    text.push('\n');
    fs::write(args.out.join("dataset.json"), text)?;
    write_json(&args.out.join("truth.json"), &truth)?;
    println!(
        "{} cameras, {} robot poses, {} detections",
        dataset.cameras.len(),
        dataset.robot_poses.len(),
        dataset.detections.len()
    );
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<u8> {
    let opts = CalibrationOptions {
        graph: GraphOptions {
            weights: Weights::new(args.lambda1, args.lambda2)?,
            cross_ordered_pairs: false,
        },
        ..Default::default()
    };
    let methods: Vec<Method> = args.methods.iter().map(|m| (*m).into()).collect();
    let table = noise_sweep(&args.scene.spec(), args.axis.into(), &args.levels, args.trials, &methods, &opts)?;
    let file = fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    table.write_csv(std::io::BufWriter::new(file))?;

    println!(
        "{:>8} {:<13} {:>14} {:>14} {:>10} {:>6}",
        "level", "method", "median_t_m", "median_r_rad", "rms_px", "conv"
    );
    for s in table.summary() {
        println!(
            "{:>8} {:<13} {:>14.6e} {:>14.6e} {:>10.4} {:>6.2}",
            s.level,
            s.method.as_str(),
            s.median_trans_err_m,
            s.median_rot_err_rad,
            s.median_reproj_rms_px,
            s.converged_fraction
        );
    }
    for f in &table.failures {
        eprintln!("level {} trial {} {}: {}", f.level, f.trial, f.method.as_str(), f.error);
    }
    if table.completion_ratio() < 0.9 {
        eprintln!(
            "only {} of {} cells completed",
            table.cells_completed(),
            table.cells_total
        );
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn cmd_inspect(args: &InspectArgs) -> anyhow::Result<u8> {
    let dataset = load_dataset(&args.dataset)?;
    let opts = args.graph.options()?;
    let problem = match args.graph.single_camera()? {
        Some(c) => build_single_with(&dataset, c, &opts)?,
        None => build_multi_with(&dataset, &opts)?,
    };
    let covisible: Vec<usize> = (0..dataset.num_timesteps())
        .map(|t| covisibility(&dataset, t).pair_count())
        .collect();
    let out = serde_json::json!({
        "summary": problem.summary(),
        "covisible_pairs_per_timestep": covisible,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
