use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lapflow::apps::{densify, segment_by_motion, FrameSequence};
use lapflow::graph::cloud_laplacian;
use lapflow::io::{read_ply, write_metrics_json, write_ply, PlyFormat};
use lapflow::synth::{generate, SceneSpec};
use lapflow::{
    evaluate, icp_align, rigid_flow, solve_with_laplacian, ChamferMode, Error, FlowMetrics,
    IcpConfig, RigidTransform, SolverConfig, Vec3,
};
use serde::Serialize;

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

/// Scene flow between two point clouds by graph-Laplacian regularized
/// Chamfer minimization.
#[derive(Parser, Debug)]
#[command(name = "lapflow", version)]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = "FLOW_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate flow from SOURCE to TARGET.
    Flow(FlowArgs),
    /// Compare an estimated flow PLY against ground truth; JSON on stdout.
    Eval {
        est: PathBuf,
        gt: PathBuf,
    },
    /// Rigid ICP baseline; prints the transform as JSON.
    Icp(IcpArgs),
    /// Label points as static (0) or dynamic (1) by flow magnitude.
    Segment {
        /// PLY with flow_x/flow_y/flow_z properties.
        flow: PathBuf,
        /// Motion magnitude threshold in meters; strictly larger is dynamic.
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long, default_value = "labels.ply")]
        out: PathBuf,
        #[arg(long, default_value_t = PlyFormat::Ascii)]
        format: PlyFormat,
    },
    /// Accumulate neighboring frames into the center frame's coordinates.
    Densify(DensifyArgs),
    /// Generate a synthetic scene with ground-truth flow.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Neighbors per point in the kNN graph.
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Laplacian regularizer weight.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Optimization iterations.
    #[arg(long, default_value_t = 1500)]
    iters: usize,
    /// Use the symmetric normalized Laplacian.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalized: bool,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Recorded in the report; the solver itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Chamfer directions: both or forward.
    #[arg(long, default_value_t = ChamferMode::Both)]
    chamfer_mode: ChamferMode,
    /// Per-iteration multiplicative learning-rate decay.
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            alpha: self.alpha,
            lr: self.lr,
            iters: self.iters,
            k: self.k,
            normalized_laplacian: self.normalized,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed: self.seed,
            chamfer_mode: self.chamfer_mode,
            lr_decay: self.lr_decay,
        }
    }
}

#[derive(Args, Debug)]
struct FlowArgs {
    source: PathBuf,
    target: PathBuf,
    /// Source points with the estimated flow.
    #[arg(long, default_value = "flow.ply")]
    out: PathBuf,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Ground-truth flow PLY; adds metrics to the report.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Write the Laplacian as Matrix Market text.
    #[arg(long)]
    dump_laplacian: Option<PathBuf>,
    #[arg(long, default_value_t = PlyFormat::Ascii)]
    format: PlyFormat,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct IcpArgs {
    source: PathBuf,
    target: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Stop once the RMSE improves by less than this, in meters.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Fraction of worst correspondences dropped each iteration.
    #[arg(long, default_value_t = 0.0)]
    icp_trim: f64,
    /// Write the source points with the induced rigid flow.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth flow PLY; adds metrics to the output.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = PlyFormat::Ascii)]
    format: PlyFormat,
}

#[derive(Args, Debug)]
struct DensifyArgs {
    /// Frames in temporal order.
    #[arg(required = true)]
    frames: Vec<PathBuf>,
    /// Index of the center frame; defaults to the middle one.
    #[arg(long)]
    center: Option<usize>,
    /// Frames carried from each side of the center.
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value = "dense.ply")]
    out: PathBuf,
    #[arg(long, default_value_t = PlyFormat::Ascii)]
    format: PlyFormat,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON scene description; overrides --preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built-in scene: translation or two-cluster.
    #[arg(long, default_value = "translation")]
    preset: Preset,
    /// Overrides the seed of the scene.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives source.ply, target.ply and gt.ply.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = PlyFormat::Ascii)]
    format: PlyFormat,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum Preset {
    Translation,
    TwoCluster,
}

#[derive(Serialize)]
struct IcpOutput {
    transform: RigidTransform,
    rmse: f64,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<FlowMetrics>,
}

fn print_json<T: Serialize>(value: &T) -> lapflow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_gt(path: &Path) -> lapflow::Result<lapflow::FlowField> {
    Ok(read_ply(path)?.require_flow("ground truth")?.clone())
}

fn run_flow(a: &FlowArgs) -> lapflow::Result<()> {
    let config = a.solver.config();
    config.validate()?;
    let source = read_ply(&a.source)?.cloud;
    let target = read_ply(&a.target)?.cloud;
    let gt = a.gt.as_deref().map(read_gt).transpose()?;
    if config.k >= source.len() {
        return Err(Error::InvalidParameter(format!(
            "--k {} needs more than {} source points",
            config.k,
            source.len()
        )));
    }
    let l = cloud_laplacian(&source, config.k, config.normalized_laplacian)?;
    if let Some(path) = &a.dump_laplacian {
        std::fs::write(path, l.to_matrix_market())?;
    }
    let report = solve_with_laplacian(&source, &target, &l, &config)?;
    let metrics = gt.map(|g| evaluate(&report.flow, &g)).transpose()?;
    log::info!(
        "{} iterations, energy {:.6} -> {:.6}, {:.2}s",
        report.iterations_run,
        report.initial_energy().total,
        report.final_energy.total,
        report.wall_time
    );
    write_ply(&a.out, &source, Some(&report.flow), None, a.format)?;
    write_metrics_json(&a.report, metrics.as_ref(), &report, &config)
}

fn run_icp(a: &IcpArgs) -> lapflow::Result<()> {
    let config = IcpConfig {
        max_iters: a.max_iters,
        tol: a.tol,
        trim: a.icp_trim,
    };
    let source = read_ply(&a.source)?.cloud;
    let target = read_ply(&a.target)?.cloud;
    let gt = a.gt.as_deref().map(read_gt).transpose()?;
    let result = icp_align(&source, &target, &config)?;
    let flow = rigid_flow(&source, &result.transform);
    let metrics = gt.map(|g| evaluate(&flow, &g)).transpose()?;
    if let Some(out) = &a.out {
        write_ply(out, &source, Some(&flow), None, a.format)?;
    }
    print_json(&IcpOutput {
        transform: result.transform,
        rmse: result.rmse,
        iterations: result.iterations,
        metrics,
    })
}

fn run_densify(a: &DensifyArgs) -> lapflow::Result<()> {
    let config = a.solver.config();
    config.validate()?;
    let frames = a
        .frames
        .iter()
        .map(|p| read_ply(p).map(|d| d.cloud))
        .collect::<lapflow::Result<Vec<_>>>()?;
    let center = a.center.unwrap_or(frames.len() / 2);
    let seq = FrameSequence::new(frames, center)?;
    let dense = densify(&seq, &config, a.window)?;
    log::info!("densified {} frames into {} points", seq.window(a.window).count(), dense.len());
    write_ply(&a.out, &dense, None, None, a.format)
}

fn run_synth(a: &SynthArgs) -> lapflow::Result<()> {
    let mut spec = match &a.spec {
        Some(path) => serde_json::from_str::<SceneSpec>(&std::fs::read_to_string(path)?)?,
        None => match a.preset {
            Preset::Translation => SceneSpec::single_translation(500, 1.0, Vec3::new(0.5, 0.0, 0.0), 0),
            Preset::TwoCluster => SceneSpec::two_clusters(250, 8.0, 0.02, 0),
        },
    };
    spec.seed = a.seed;
    let scene = generate(&spec)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_ply(a.out_dir.join("source.ply"), &scene.source, None, None, a.format)?;
    write_ply(a.out_dir.join("target.ply"), &scene.target, None, None, a.format)?;
    write_ply(a.out_dir.join("gt.ply"), &scene.source, Some(&scene.gt_flow), None, a.format)
}

fn run(cli: &Cli) -> lapflow::Result<()> {
    lapflow::parallel::configure_threads(cli.threads)?;
    match &cli.command {
        Command::Flow(a) => run_flow(a),
        Command::Eval { est, gt } => {
            let est = read_ply(est)?.require_flow("estimate")?.clone();
            print_json(&evaluate(&est, &read_gt(gt)?)?)
        }
        Command::Icp(a) => run_icp(a),
        Command::Segment { flow, threshold, out, format } => {
            let data = read_ply(flow)?;
            let labels = segment_by_motion(data.require_flow("input")?, *threshold)?;
            log::info!("{} of {} points dynamic", labels.dynamic_count(), data.cloud.len());
            write_ply(out, &data.cloud, data.flow.as_ref(), Some(&labels.codes()), *format)
        }
        Command::Densify(a) => run_densify(a),
        Command::Synth(a) => run_synth(a),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_BAD_INPUT,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_BAD_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
