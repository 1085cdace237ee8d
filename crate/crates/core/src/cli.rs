//! Command-line entry point.
//!
//! Exit status: 0 on success, 1 when the requested work failed (including a
//! study with more than 10% failed runs), 2 on bad input. Repeated flags
//! take their last value.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::Error;
use crate::harness::{estimate, render_tables, run_study, Method, MethodSettings, Scenario};
use crate::simulate::{read_csv, write_csv};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SDE_IDENT_OUT";

#[derive(Debug, Parser)]
#[command(name = "sde-ident", version, about = "Identify linear SDE parameters from noisy sampled data")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a trajectory and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate parameters from a trajectory CSV.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study and write JSON and text tables.
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in scenario id (a-f) or scenario JSON path.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path; defaults to `traj_<scenario>_<seed>.csv` in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MethodArgs {
    /// BO iterations after the initial design.
    #[arg(long, default_value_t = 60)]
    pub budget: usize,
    /// Size of the Latin hypercube initial design.
    #[arg(long, default_value_t = 10)]
    pub n_initial: usize,
    /// Run BO in log coordinates of the search box.
    #[arg(long)]
    pub log_space: bool,
    /// EM damping factor.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 50)]
    pub em_iterations: usize,
    /// MLE multi-start count.
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
}

impl MethodArgs {
    fn settings(&self) -> Result<MethodSettings, String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("--alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.starts == 0 || self.n_initial == 0 {
            return Err("--starts and --n-initial must be positive".into());
        }
        Ok(MethodSettings {
            budget: self.budget,
            n_initial: self.n_initial,
            log_space: self.log_space,
            em_alpha: self.alpha,
            em_iterations: self.em_iterations,
            mle_starts: self.starts,
        })
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// One of bo-egp, bo-rbf, bo-matern15, bo-matern25, em, mle.
    #[arg(long)]
    pub method: String,
    /// Trajectory CSV written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Scenario supplying the sampling interval, order and search box.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON path; defaults to `estimate_<method>_<seed>.json` in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub method_args: MethodArgs,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub scenario: String,
    /// Comma-separated method list.
    #[arg(long, default_value = "bo-egp,mle,em")]
    pub methods: String,
    /// Monte Carlo runs.
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory; defaults to $SDE_IDENT_OUT or the working directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub method_args: MethodArgs,
}

enum Failure {
    Input(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Run(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Run(m) => m,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn run_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Run(e.to_string())
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("output directory {}: {e}", dir.display())))
}

fn prepare_file(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => prepare_dir(p),
        _ => Ok(()),
    }
}

fn scenario(spec: &str) -> Result<Scenario, Failure> {
    Scenario::resolve(spec).map_err(|e| Failure::Input(format!("scenario `{spec}`: {e}")))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let s = scenario(&a.scenario)?;
    let path = a.out.clone().unwrap_or_else(|| default_out_dir().join(format!("traj_{}_{}.csv", s.id, a.seed)));
    prepare_file(&path)?;
    let traj = s.simulate(a.seed).map_err(run_err)?;
    let file = File::create(&path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    write_csv(&traj, file).map_err(run_err)?;
    println!("N={} d={} seed={} -> {}", traj.len(), traj.dim(), a.seed, path.display());
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs) -> Result<(), Failure> {
    let method = Method::parse(&a.method).map_err(input)?;
    let s = scenario(&a.scenario)?;
    let settings = a.method_args.settings().map_err(Failure::Input)?;
    let file = File::open(&a.data).map_err(|e| Failure::Input(format!("{}: {e}", a.data.display())))?;
    let traj = read_csv(BufReader::new(file)).map_err(|e| Failure::Input(format!("{}: {e}", a.data.display())))?;
    if traj.len() < s.kind.order() + 2 {
        return Err(Failure::Input(format!("{} holds too few observations", a.data.display())));
    }
    let path =
        a.out.clone().unwrap_or_else(|| default_out_dir().join(format!("estimate_{}_{}.json", method.name(), a.seed)));
    prepare_file(&path)?;
    let e = estimate(method, &s, &traj.observations, a.seed, &settings).map_err(run_err)?;
    let names = s.kind.param_names();
    let doc = json!({
        "method": method.name(),
        "scenario": s.id,
        "seed": a.seed,
        "n": traj.len(),
        "param_names": names,
        "theta": e.theta.values,
        "nll": -e.loglik,
        "evaluations": e.evaluations,
        "settings": settings,
        "trace": e.trace,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(run_err)?;
    fs::write(&path, text + "\n").map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let summary: Vec<String> = names.iter().zip(&e.theta.values).map(|(n, v)| format!("{n}={v:.6e}")).collect();
    println!("{} {} nll={:.6} -> {}", method.name(), summary.join(" "), -e.loglik, path.display());
    Ok(())
}

fn cmd_study(a: &StudyArgs) -> Result<(), Failure> {
    if a.runs < 1 {
        return Err(Failure::Input("--runs must be at least 1".into()));
    }
    if a.jobs == Some(0) {
        return Err(Failure::Input("--jobs must be at least 1".into()));
    }
    let methods = Method::parse_list(&a.methods).map_err(input)?;
    let s = scenario(&a.scenario)?;
    let settings = a.method_args.settings().map_err(Failure::Input)?;
    let dir = a.out_dir.clone().unwrap_or_else(default_out_dir);
    prepare_dir(&dir)?;

    let start = Instant::now();
    let result = run_study(&s, &methods, a.runs, a.seed, &settings, a.jobs).map_err(run_err)?;
    let tables = render_tables(&result);
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let stem = dir.join(format!("study_{}_{}", s.id, stamp));
    let json_path = stem.with_extension("json");
    let txt_path = stem.with_extension("txt");
    let doc = json!({ "study": result, "table": tables.json });
    let text = serde_json::to_string_pretty(&doc).map_err(run_err)?;
    fs::write(&json_path, text + "\n").map_err(|e| Failure::Input(format!("{}: {e}", json_path.display())))?;
    fs::write(&txt_path, &tables.text).map_err(|e| Failure::Input(format!("{}: {e}", txt_path.display())))?;

    print!("{}", tables.text);
    for m in &result.methods {
        eprintln!(
            "{}: {:.2} s total, {:.2} s mean per run, {:.2} s max",
            m.method.name(),
            m.timing.total.as_secs_f64(),
            m.timing.mean_per_run.as_secs_f64(),
            m.timing.max_per_run.as_secs_f64()
        );
    }
    eprintln!("wall clock {:.2} s", start.elapsed().as_secs_f64());
    println!("-> {} and {}", json_path.display(), txt_path.display());
    result.check_failures().map_err(|e: Error| Failure::Run(e.to_string()))
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Study(a) => cmd_study(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}
