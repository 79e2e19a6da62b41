//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for invalid input (bad flags, unreadable or
//! malformed files, invalid configuration), 3 when the solver reports
//! degenerate geometry, a disconnected graph, or does not converge within
//! `max_outer` iterations.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::correspondence::{multiview_icp, IcpConfig};
use crate::error::{Error, Result};
use crate::io::{
    list_ply_files, parse_edge_list, read_correspondences, read_ply, read_view_graph,
    write_trajectory,
};
use crate::liegroup::RigidMotion;
use crate::multiview::estimate_multiview;
use crate::pairwise::{estimate_pairwise, Parametrization, SolverConfig};
use crate::robust_loss::{AnnealSchedule, LossKind};
use crate::synthbench::{
    convergence_compare, generate_camera_frame_pair, generate_model, run_bench, summarize,
    write_bench_csv, BenchConfig, ModelKind,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable consulted when no thread count is given.
pub const THREADS_ENV: &str = "SE3REG_THREADS";

#[derive(Parser, Debug)]
#[command(name = "se3reg", version, about = "Robust rigid registration of 3D scans on SE(3)")]
pub struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (falls back to SE3REG_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate the motion mapping SRC onto DST from correspondences.
    RegisterPair(RegisterPairArgs),
    /// Joint registration of all scans in a view graph.
    RegisterMultiview(RegisterMultiviewArgs),
    /// Multiview ICP over a directory of PLY scans.
    IcpMultiview(IcpMultiviewArgs),
    /// Batch of synthetic pairwise trials.
    BenchSynthetic(BenchArgs),
    /// Outer-iteration counts of the update variants on one synthetic pair.
    ConvergenceCompare(CompareArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct SolverArgs {
    /// l12, l1 or gm.
    #[arg(long)]
    pub loss: Option<String>,
    /// Initial Geman-McClure scale (length²; default: diameter²).
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Annealing divisor applied to the Geman-McClure scale.
    #[arg(long)]
    pub divisor: Option<f64>,
    /// Outer iterations between annealing steps.
    #[arg(long)]
    pub period: Option<usize>,
    /// Lower bound of the annealed scale.
    #[arg(long)]
    pub mu_floor: Option<f64>,
    /// IRLS rounds per outer iteration.
    #[arg(long)]
    pub k_irls: Option<usize>,
    /// Stop once the update norm drops to this value.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Cap on outer iterations.
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Use the extrinsic (ω, t) update instead of the exponential map.
    #[arg(long)]
    pub extrinsic: bool,
}

#[derive(Args, Debug)]
pub struct RegisterPairArgs {
    /// Source cloud (PLY).
    pub src: PathBuf,
    /// Destination cloud (PLY).
    pub dst: PathBuf,
    /// Index pairs "src_index dst_index" or JSON point pairs.
    #[arg(long)]
    pub corrs: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RegisterMultiviewArgs {
    /// View graph JSON.
    pub view_graph: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Trajectory output (stdout when absent).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Write 16 values per line instead of 12.
    #[arg(long)]
    pub full: bool,
}

#[derive(Args, Debug)]
pub struct IcpMultiviewArgs {
    /// Directory of .ply scans, taken in file-name order.
    pub dir: PathBuf,
    /// Edge list file ("i j" per line) or "all".
    #[arg(long)]
    pub edges: Option<String>,
    /// Pipeline rounds of pairwise ICP followed by averaging.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Trajectory output (stdout when absent).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Write 16 values per line instead of 12.
    #[arg(long)]
    pub full: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// sphere, cube or blobs.
    #[arg(long)]
    pub model: Option<String>,
    /// Noise std in diameter units.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Fraction of correspondences replaced by outliers.
    #[arg(long)]
    pub outliers: Option<f64>,
    /// Number of trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed; trial seeds are derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model size.
    #[arg(long)]
    pub points: Option<usize>,
    /// Maximum rotation angle in degrees.
    #[arg(long)]
    pub angle: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// CSV output (stdout when absent).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Summary JSON output (stderr when absent).
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Write 0 in the ms column so repeated runs are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Pair seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rotation angle in degrees.
    #[arg(long)]
    pub angle: Option<f64>,
    /// Comma-separated convergence thresholds.
    #[arg(long, value_delimiter = ',')]
    pub eps_list: Option<Vec<f64>>,
    /// sphere, cube or blobs.
    #[arg(long)]
    pub model: Option<String>,
    /// Model size.
    #[arg(long)]
    pub points: Option<usize>,
    /// Noise std in diameter units.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Fraction of correspondences replaced by outliers.
    #[arg(long)]
    pub outliers: Option<f64>,
    /// Cap on outer iterations.
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// K_outer table output (stdout when absent).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-iteration cost trace (appended to stdout when absent).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

/// Contents of a `--config` file. Every key is optional; unknown keys are
/// rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub loss: Option<String>,
    pub mu0: Option<f64>,
    pub divisor: Option<f64>,
    pub period: Option<usize>,
    pub mu_floor: Option<f64>,
    pub epsilon: Option<f64>,
    pub k_irls: Option<usize>,
    pub max_outer: Option<usize>,
    /// "intrinsic" or "extrinsic".
    pub parametrization: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub model: Option<String>,
    pub points: Option<usize>,
    pub sigma: Option<f64>,
    pub outliers: Option<f64>,
    pub trials: Option<usize>,
    /// Degrees.
    pub angle: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub rounds: Option<usize>,
    pub edges: Option<String>,
    pub full: Option<bool>,
    pub no_timing: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
        })
    }

    /// Solver settings from `base`, overridden by this file and then by
    /// the flags. `diameter` sets the default Geman-McClure schedule.
    pub fn solver(&self, flags: &SolverArgs, base: SolverConfig, diameter: f64) -> Result<SolverConfig> {
        let mut cfg = base;
        let loss = flags.loss.as_deref().or(self.loss.as_deref());
        let defaults = AnnealSchedule::for_diameter(diameter);
        let schedule = AnnealSchedule {
            mu0: flags.mu0.or(self.mu0).unwrap_or(defaults.mu0),
            divisor: flags.divisor.or(self.divisor).unwrap_or(defaults.divisor),
            period: flags.period.or(self.period).unwrap_or(defaults.period),
            mu_floor: flags.mu_floor.or(self.mu_floor).unwrap_or(defaults.mu_floor),
        };
        if let Some(name) = loss {
            cfg.loss = match name {
                "l12" | "lhalf" => LossKind::LHalf,
                "l1" => LossKind::L1,
                "gm" => LossKind::GemanMcClure { mu: schedule.mu0 },
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown loss '{other}' (expected l12, l1 or gm)"
                    )))
                }
            };
        }
        cfg.anneal = match cfg.loss {
            LossKind::GemanMcClure { .. } => Some(schedule),
            _ => None,
        };
        if let Some(k) = flags.k_irls.or(self.k_irls) {
            cfg.k_irls = k;
        }
        if let Some(e) = flags.epsilon.or(self.epsilon) {
            cfg.epsilon = e;
        }
        if let Some(m) = flags.max_outer.or(self.max_outer) {
            cfg.max_outer = m;
        }
        cfg.parametrization = if flags.extrinsic {
            Parametrization::Extrinsic
        } else {
            match self.parametrization.as_deref() {
                None => cfg.parametrization,
                Some("intrinsic") => Parametrization::Intrinsic,
                Some("extrinsic") => Parametrization::Extrinsic,
                Some(other) => {
                    return Err(Error::InvalidInput(format!(
                        "unknown parametrization '{other}'"
                    )))
                }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome of a command that ran to completion.
enum Status {
    Done,
    NotConverged,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(Status::Done) => EXIT_OK,
        Ok(Status::NotConverged) => {
            eprintln!("se3reg: solver stopped at max_outer without converging");
            EXIT_NUMERICAL
        }
        Err(e) => {
            eprintln!("se3reg: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn thread_count(flag: Option<usize>, file: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag.or(file) {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidInput(format!("{THREADS_ENV}='{v}' is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn execute(cli: &Cli) -> Result<Status> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let threads = thread_count(cli.threads, file.threads)?;
    if threads == Some(0) {
        return Err(Error::InvalidInput("thread count must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::RegisterPair(a) => register_pair(a, &file),
        Command::RegisterMultiview(a) => register_multiview(a, &file),
        Command::IcpMultiview(a) => icp_multiview(a, &file),
        Command::BenchSynthetic(a) => bench_synthetic(a, &file),
        Command::ConvergenceCompare(a) => compare(a, &file),
    })
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn format_matrix(m: &RigidMotion) -> String {
    m.to_row_major_4x4()
        .chunks(4)
        .map(|row| {
            row.iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn parametrization_name(p: Parametrization) -> &'static str {
    match p {
        Parametrization::Intrinsic => "intrinsic",
        Parametrization::Extrinsic => "extrinsic",
    }
}

fn register_pair(a: &RegisterPairArgs, file: &RunConfig) -> Result<Status> {
    let src = read_ply(&a.src)?;
    let dst = read_ply(&a.dst)?;
    let corrs = read_correspondences(&a.corrs, Some(&src), Some(&dst))?;
    let cfg = file.solver(&a.solver, SolverConfig::pairwise(), corrs.extent())?;
    let result = estimate_pairwise(&corrs, &cfg)?;
    let report = json!({
        "converged": result.converged,
        "iterations": result.trace.len(),
        "initial_cost": result.trace.initial_cost,
        "final_cost": result.trace.costs().last().unwrap_or(result.trace.initial_cost),
        "correspondences": corrs.len(),
        "loss": cfg.loss.name(),
        "k_irls": cfg.k_irls,
        "epsilon": cfg.epsilon,
        "parametrization": parametrization_name(cfg.parametrization),
        "elapsed_ms": result.trace.iterations.last().map_or(0.0, |r| r.elapsed.as_secs_f64() * 1e3),
    });
    let report = serde_json::to_string_pretty(&report).expect("serializable");
    write_out(None, format!("{}\n{report}\n", format_matrix(&result.motion)).as_bytes())?;
    if let Some(p) = a.report.as_ref().or(file.report.as_ref()) {
        fs::write(p, format!("{report}\n")).map_err(|e| Error::io(p, e))?;
    }
    Ok(if result.converged { Status::Done } else { Status::NotConverged })
}

fn trajectory_bytes(motions: &[RigidMotion], full: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trajectory(motions, &mut buf, full).expect("writing to memory");
    buf
}

fn register_multiview(a: &RegisterMultiviewArgs, file: &RunConfig) -> Result<Status> {
    let graph = read_view_graph(&a.view_graph)?;
    let diameter = graph
        .edges
        .iter()
        .map(|e| e.corrs.extent())
        .fold(0.0, f64::max);
    let cfg = file.solver(&a.solver, SolverConfig::multiview(), diameter)?;
    let result = estimate_multiview(&graph, &cfg)?;
    let full = a.full || file.full.unwrap_or(false);
    write_out(
        a.output.as_deref().or(file.output.as_deref()),
        &trajectory_bytes(&result.graph.motions, full),
    )?;
    eprintln!(
        "{}",
        json!({
            "converged": result.converged,
            "iterations": result.trace.len(),
            "initial_cost": result.trace.initial_cost,
            "final_cost": result.trace.costs().last().unwrap_or(result.trace.initial_cost),
            "scans": graph.n(),
            "edges": graph.edges.len(),
        })
    );
    Ok(if result.converged { Status::Done } else { Status::NotConverged })
}

fn icp_multiview(a: &IcpMultiviewArgs, file: &RunConfig) -> Result<Status> {
    let paths = list_ply_files(&a.dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no .ply files in {}", a.dir.display())));
    }
    let scans = paths.iter().map(read_ply).collect::<Result<Vec<_>>>()?;
    let n = scans.len();
    let edges = match a.edges.as_deref().or(file.edges.as_deref()).unwrap_or("all") {
        "all" => (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect(),
        path => {
            let p = Path::new(path);
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_edge_list(&text, p)?
        }
    };
    let diameter = scans
        .iter()
        .filter_map(|s| s.bounds())
        .map(|(lo, hi)| (hi - lo).norm())
        .fold(0.0, f64::max);
    let defaults = IcpConfig::default();
    let cfg = IcpConfig {
        solver: file.solver(&a.solver, defaults.solver, diameter)?,
        outer_pipeline_rounds: a.rounds.or(file.rounds).unwrap_or(defaults.outer_pipeline_rounds),
        ..defaults
    };
    let motions = multiview_icp(&scans, &edges, &cfg)?;
    let full = a.full || file.full.unwrap_or(false);
    write_out(
        a.output.as_deref().or(file.output.as_deref()),
        &trajectory_bytes(&motions, full),
    )?;
    Ok(Status::Done)
}

fn parse_model(name: Option<&str>) -> Result<ModelKind> {
    name.unwrap_or("blobs").parse()
}

fn bench_synthetic(a: &BenchArgs, file: &RunConfig) -> Result<Status> {
    let defaults = BenchConfig::default();
    let model = parse_model(a.model.as_deref().or(file.model.as_deref()))?;
    let angle = a.angle.or(file.angle).map_or(defaults.angle_max, f64::to_radians);
    let cfg = BenchConfig {
        model,
        points: a.points.or(file.points).unwrap_or(defaults.points),
        sigma_rel: a.sigma.or(file.sigma).unwrap_or(defaults.sigma_rel),
        outlier_fraction: a.outliers.or(file.outliers).unwrap_or(defaults.outlier_fraction),
        trials: a.trials.or(file.trials).unwrap_or(defaults.trials),
        seed: a.seed.or(file.seed).unwrap_or(defaults.seed),
        angle_max: angle,
        // models have unit diameter
        solver: file.solver(&a.solver, SolverConfig::pairwise(), 1.0)?,
    };
    if !(cfg.sigma_rel >= 0.0) || !(0.0..=1.0).contains(&cfg.outlier_fraction) {
        return Err(Error::InvalidInput("sigma must be ≥ 0 and outliers in [0, 1]".into()));
    }
    if !(0.0..=180.0).contains(&angle.to_degrees()) {
        return Err(Error::InvalidInput("angle must lie in [0, 180] degrees".into()));
    }
    let rows = run_bench(&cfg)?;
    let timing = !(a.no_timing || file.no_timing.unwrap_or(false));
    let mut csv = Vec::new();
    write_bench_csv(&rows, &mut csv, timing).expect("writing to memory");
    write_out(a.csv.as_deref().or(file.csv.as_deref()), &csv)?;
    let summary = serde_json::to_string_pretty(&summarize(&rows)).expect("serializable");
    match a.summary.as_ref().or(file.summary.as_ref()) {
        Some(p) => fs::write(p, format!("{summary}\n")).map_err(|e| Error::io(p, e))?,
        None => eprintln!("{summary}"),
    }
    Ok(Status::Done)
}

fn compare(a: &CompareArgs, file: &RunConfig) -> Result<Status> {
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let angle = a.angle.or(file.angle).unwrap_or(30.0);
    if !(0.0..=180.0).contains(&angle) {
        return Err(Error::InvalidInput("angle must lie in [0, 180] degrees".into()));
    }
    let eps_list = a
        .eps_list
        .clone()
        .or(file.eps_list.clone())
        .unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7]);
    let model = generate_model(
        parse_model(a.model.as_deref().or(file.model.as_deref()))?,
        a.points.or(file.points).unwrap_or(1000),
        seed,
    );
    let pair = generate_camera_frame_pair(
        &model,
        angle.to_radians(),
        a.sigma.or(file.sigma).unwrap_or(0.0025),
        a.outliers.or(file.outliers).unwrap_or(0.3),
        seed,
    )?;
    let max_outer = a.max_outer.or(file.max_outer).unwrap_or(100);
    if max_outer == 0 {
        return Err(Error::InvalidInput("max_outer must be at least 1".into()));
    }
    let cmp = convergence_compare(&pair, &eps_list, max_outer)?;
    let mut table = Vec::new();
    cmp.write_k_outer_csv(&mut table).expect("writing to memory");
    let mut trace = Vec::new();
    cmp.write_trace_csv(&mut trace).expect("writing to memory");
    let table_path = a.csv.as_deref().or(file.csv.as_deref());
    let trace_path = a.trace.as_deref().or(file.trace.as_deref());
    write_out(table_path, &table)?;
    match trace_path {
        Some(p) => fs::write(p, &trace).map_err(|e| Error::io(p, e))?,
        None if table_path.is_none() => {
            write_out(None, b"\n")?;
            write_out(None, &trace)?;
        }
        None => write_out(None, &trace)?,
    }
    Ok(Status::Done)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"k_irls": 2, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig {
            k_irls: Some(5),
            epsilon: Some(1e-3),
            loss: Some("l1".into()),
            ..Default::default()
        };
        let flags = SolverArgs {
            k_irls: Some(1),
            ..Default::default()
        };
        let cfg = file.solver(&flags, SolverConfig::pairwise(), 1.0).unwrap();
        assert_eq!(cfg.k_irls, 1);
        assert_eq!(cfg.epsilon, 1e-3);
        assert_eq!(cfg.loss, LossKind::L1);
    }

    #[test]
    fn gm_gets_a_diameter_schedule() {
        let flags = SolverArgs {
            loss: Some("gm".into()),
            ..Default::default()
        };
        let cfg = RunConfig::default().solver(&flags, SolverConfig::pairwise(), 2.0).unwrap();
        assert_eq!(cfg.anneal, Some(AnnealSchedule::for_diameter(2.0)));
        assert_eq!(cfg.loss, LossKind::GemanMcClure { mu: 4.0 });
    }

    #[test]
    fn invalid_settings_fail_validation() {
        let flags = SolverArgs {
            k_irls: Some(0),
            ..Default::default()
        };
        assert!(RunConfig::default().solver(&flags, SolverConfig::pairwise(), 1.0).is_err());
        let flags = SolverArgs {
            loss: Some("huber".into()),
            ..Default::default()
        };
        assert!(RunConfig::default().solver(&flags, SolverConfig::pairwise(), 1.0).is_err());
    }

    #[test]
    fn bad_flag_exits_with_usage_code() {
        assert_eq!(run(["se3reg", "register-pair", "--no-such-flag"]), EXIT_INPUT);
    }
}
