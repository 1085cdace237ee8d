//! Scenario registry, Monte Carlo studies and report tables.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bo::{run_bo, BoConfig, SurrogateKind};
use crate::consistency::{consistency_report, nees_nis_run, ConsistencyReport, ConsistencyRun, DEFAULT_CONFIDENCE};
use crate::em::{run_em, structural_params, EmConfig};
use crate::error::{Error, Result};
use crate::kalman::{log_likelihood_value, objective_or_sentinel, FilterInit};
use crate::mle::{run_mle, MleConfig};
use crate::model::{params_to_discrete, DiscreteModel, ParamVector, ScenarioKind, SearchBox};
use crate::rng::derive_seed;
use crate::simulate::{simulate, steps_for, InitialState, Trajectory, DEFAULT_DURATION_HR};

/// Largest tolerated share of failed runs per method.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub kind: ScenarioKind,
    pub truth: ParamVector,
    pub step: f64,
    pub duration_hr: f64,
    pub bounds: SearchBox,
    /// Reference CRLB standard deviations per parameter (reference values,
    /// not computed here).
    pub crlb_sigma: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BoxSpec {
    Pair([f64; 2]),
    Bounds { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    id: Option<String>,
    order: usize,
    a: Vec<f64>,
    qtilde_or_q: f64,
    r: f64,
    #[serde(rename = "T")]
    step: f64,
    #[serde(default)]
    duration_hr: Option<f64>,
    #[serde(default, rename = "box")]
    bounds: Option<BoxSpec>,
}

impl Scenario {
    pub const BUILTIN_IDS: [&'static str; 6] = ["a", "b", "c", "d", "e", "f"];

    pub fn new(
        id: &str,
        truth: ParamVector,
        step: f64,
        duration_hr: f64,
        bounds: SearchBox,
        crlb_sigma: Option<Vec<f64>>,
    ) -> Result<Self> {
        let s = Self { id: id.to_string(), kind: truth.kind, truth, step, duration_hr, bounds, crlb_sigma };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.duration_hr > 0.0) {
            return Err(Error::InvalidArgument("sampling interval and duration must be positive".into()));
        }
        if self.n_steps() < 10 {
            return Err(Error::InvalidArgument(format!("scenario needs at least 10 samples, got {}", self.n_steps())));
        }
        if self.bounds.dim() != self.kind.n_params() {
            return Err(Error::DimensionMismatch("search box does not match the parameter count".into()));
        }
        if !self.bounds.contains(&self.truth.values) {
            return Err(Error::InvalidArgument("true parameters lie outside the search box".into()));
        }
        if let Some(c) = &self.crlb_sigma {
            if c.len() != self.kind.n_params() {
                return Err(Error::DimensionMismatch("CRLB reference does not match the parameter count".into()));
            }
        }
        params_to_discrete(&self.truth, self.step)?;
        Ok(())
    }

    /// Built-in scenarios `a`–`f`.
    pub fn builtin(id: &str) -> Result<Self> {
        let first = |a: f64, q: f64, r: f64, t: f64, crlb: [f64; 3]| {
            let truth = ParamVector::new(ScenarioKind::FirstOrder, vec![a, q, r])?;
            Self::new(
                id,
                truth,
                t,
                DEFAULT_DURATION_HR,
                SearchBox::default_for(ScenarioKind::FirstOrder),
                Some(crlb.to_vec()),
            )
        };
        let second = |a0: f64, a1: f64, q: f64, r: f64| {
            let truth = ParamVector::new(ScenarioKind::SecondOrder, vec![a0, a1, q, r])?;
            Self::new(id, truth, 1e-2, DEFAULT_DURATION_HR, SearchBox::default_for(ScenarioKind::SecondOrder), None)
        };
        match id {
            "a" => first(2.0, 4e-2, 1e-1, 1e-2, [6.93e-1, 5.22e-3, 6.83e-3]),
            "b" => first(1.0, 3e-2, 5e-2, 1e-2, [4.75e-1, 3.51e-3, 3.77e-3]),
            "c" => first(5.0, 3e-2, 5e-2, 1e-2, [1.18, 3.82e-4, 3.95e-3]),
            "d" => first(2.0, 2e-2, 2e-1, 5e-3, [6.88e-1, 2.49e-3, 7.65e-3]),
            "e" => second(3.0, 5.0, 2e-2, 5e-2),
            "f" => second(7.0, 2.0, 2e-2, 6e-2),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }

    /// Parses `{order, a, qtilde_or_q, r, T, duration_hr, box}`. `box` is
    /// either `[lo, hi]` for every parameter or `{lower, upper}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: ScenarioFile = serde_json::from_str(text)?;
        let kind = ScenarioKind::from_order(f.order)?;
        if f.a.len() != f.order {
            return Err(Error::DimensionMismatch(format!(
                "order {} needs {} coefficients, got {}",
                f.order,
                f.order,
                f.a.len()
            )));
        }
        let mut values = f.a.clone();
        values.extend([f.qtilde_or_q, f.r]);
        let truth = ParamVector::new(kind, values)?;
        let bounds = match f.bounds {
            None => SearchBox::default_for(kind),
            Some(BoxSpec::Pair([lo, hi])) => SearchBox::uniform(kind.n_params(), lo, hi)?,
            Some(BoxSpec::Bounds { lower, upper }) => SearchBox::new(lower, upper)?,
        };
        let id = f.id.unwrap_or_else(|| "custom".to_string());
        Self::new(&id, truth, f.step, f.duration_hr.unwrap_or(DEFAULT_DURATION_HR), bounds, None)
    }

    /// A built-in id, or else a path to a scenario JSON file.
    pub fn resolve(spec: &str) -> Result<Self> {
        if Self::BUILTIN_IDS.contains(&spec) {
            return Self::builtin(spec);
        }
        match std::fs::read_to_string(spec) {
            Ok(text) => Self::from_json(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::UnknownScenario(spec.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn n_steps(&self) -> usize {
        steps_for(self.duration_hr, self.step)
    }

    pub fn model(&self) -> Result<DiscreteModel> {
        params_to_discrete(&self.truth, self.step)
    }

    pub fn simulate(&self, seed: u64) -> Result<Trajectory> {
        simulate(&self.model()?, self.n_steps(), seed, &InitialState::Stationary)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "bo-egp")]
    BoEgp,
    #[serde(rename = "bo-rbf")]
    BoRbf,
    #[serde(rename = "bo-matern15")]
    BoMatern15,
    #[serde(rename = "bo-matern25")]
    BoMatern25,
    #[serde(rename = "em")]
    Em,
    #[serde(rename = "mle")]
    Mle,
    /// Returns the true parameters; used to check the study plumbing.
    #[serde(rename = "oracle-true-theta")]
    OracleTrueTheta,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::BoEgp,
        Method::BoRbf,
        Method::BoMatern15,
        Method::BoMatern25,
        Method::Em,
        Method::Mle,
        Method::OracleTrueTheta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BoEgp => "bo-egp",
            Method::BoRbf => "bo-rbf",
            Method::BoMatern15 => "bo-matern15",
            Method::BoMatern25 => "bo-matern25",
            Method::Em => "em",
            Method::Mle => "mle",
            Method::OracleTrueTheta => "oracle-true-theta",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }

    /// Parses a comma-separated list; duplicates are rejected.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim) {
            let m = Self::parse(part)?;
            if out.contains(&m) {
                return Err(Error::InvalidArgument(format!("method `{part}` listed twice")));
            }
            out.push(m);
        }
        Ok(out)
    }

    fn surrogate(self) -> Option<SurrogateKind> {
        match self {
            Method::BoEgp => Some(SurrogateKind::Egp),
            Method::BoRbf => Some(SurrogateKind::Rbf),
            Method::BoMatern15 => Some(SurrogateKind::Matern15),
            Method::BoMatern25 => Some(SurrogateKind::Matern25),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    /// BO iterations after the initial design.
    pub budget: usize,
    pub n_initial: usize,
    /// Search BO in log coordinates.
    pub log_space: bool,
    pub em_alpha: f64,
    pub em_iterations: usize,
    pub mle_starts: usize,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self { budget: 60, n_initial: 10, log_space: false, em_alpha: 1.0, em_iterations: 50, mle_starts: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub method: Method,
    pub theta: ParamVector,
    /// Exact-filter log-likelihood at `theta`.
    pub loglik: f64,
    pub evaluations: usize,
    pub trace: Value,
}

/// Data log-likelihood of structural parameters under the stationary prior.
pub fn loglik_at(theta: &ParamVector, step: f64, z: &[f64]) -> Result<f64> {
    let model = params_to_discrete(theta, step)?;
    log_likelihood_value(&model, z, &FilterInit::stationary(&model))
}

/// Runs one estimator on one observation record.
pub fn estimate(
    method: Method,
    scenario: &Scenario,
    z: &[f64],
    seed: u64,
    settings: &MethodSettings,
) -> Result<Estimate> {
    let kind = scenario.kind;
    let step = scenario.step;
    let (values, evaluations, trace) = match method {
        Method::OracleTrueTheta => (scenario.truth.values.clone(), 0, Value::Null),
        Method::Em => {
            let cfg = EmConfig { max_iter: settings.em_iterations, alpha: settings.em_alpha, ..EmConfig::default() };
            let tr = run_em(z, kind, step, &cfg)?;
            if tr.failed {
                return Err(Error::InvalidArgument(format!(
                    "EM failed: {}",
                    tr.failure.as_deref().unwrap_or("unknown")
                )));
            }
            let theta = structural_params(&tr.model(step)?, kind, &scenario.bounds)?;
            let n = tr.iterations.len() - 1;
            (theta.values, n, serde_json::to_value(&tr)?)
        }
        Method::Mle => {
            let mut cfg = MleConfig::new(scenario.bounds.clone(), seed);
            cfg.starts = settings.mle_starts;
            let r = run_mle(z, kind, step, &cfg)?;
            let evals = r.report.starts.iter().map(|s| s.evaluations).sum();
            (r.theta_hat.values.clone(), evals, serde_json::to_value(&r.report)?)
        }
        m => {
            let surrogate = m.surrogate().expect("remaining methods are BO variants");
            let mut cfg = BoConfig::new(scenario.bounds.clone(), surrogate, seed);
            cfg.budget = settings.budget;
            cfg.n_initial = settings.n_initial;
            cfg.log_space = settings.log_space;
            let objective =
                |th: &[f64]| match ParamVector::new(kind, th.to_vec()).and_then(|p| params_to_discrete(&p, step)) {
                    Ok(model) => objective_or_sentinel(&model, z, &FilterInit::stationary(&model)),
                    Err(_) => crate::kalman::FAILED_OBJECTIVE,
                };
            let h = run_bo(objective, &cfg)?;
            (h.theta_hat.clone(), h.evaluations, serde_json::to_value(&h)?)
        }
    };
    let theta = ParamVector::new(kind, values)?;
    let loglik = loglik_at(&theta, step, z)?;
    Ok(Estimate { method, theta, loglik, evaluations, trace })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub data_seed: u64,
    pub theta: Option<Vec<f64>>,
    pub loglik: Option<f64>,
    pub evaluations: usize,
    pub error: Option<String>,
}

/// Wall-clock statistics. Not serialized so study JSON stays reproducible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimingStats {
    pub total: Duration,
    pub mean_per_run: Duration,
    pub max_per_run: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub param_names: Vec<String>,
    pub average: Vec<f64>,
    pub rmse: Vec<f64>,
    pub consistency: Option<ConsistencyReport>,
    pub mean_loglik: Option<f64>,
    pub successes: usize,
    pub failures: usize,
    pub runs: Vec<RunRecord>,
    #[serde(skip)]
    pub timing: TimingStats,
}

impl MethodSummary {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / (self.successes + self.failures).max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub scenario: Scenario,
    pub n: usize,
    pub n_mc: usize,
    pub seed: u64,
    pub confidence: f64,
    pub settings: MethodSettings,
    pub methods: Vec<MethodSummary>,
}

impl StudyResult {
    /// Errors when any method lost more than [`MAX_FAILURE_RATE`] of its runs.
    pub fn check_failures(&self) -> Result<()> {
        for m in &self.methods {
            if m.failure_rate() > MAX_FAILURE_RATE {
                return Err(Error::TooManyFailures { failed: m.failures, total: m.successes + m.failures });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Root-mean-square error per parameter over the estimates.
pub fn rmse(estimates: &[Vec<f64>], truth: &[f64]) -> Vec<f64> {
    let n = estimates.len() as f64;
    (0..truth.len()).map(|p| (estimates.iter().map(|e| (e[p] - truth[p]).powi(2)).sum::<f64>() / n).sqrt()).collect()
}

fn average(estimates: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = estimates.len() as f64;
    (0..dim).map(|p| estimates.iter().map(|e| e[p]).sum::<f64>() / n).collect()
}

struct RunOutcome {
    estimate: Result<(Estimate, ConsistencyRun)>,
    elapsed: Duration,
}

fn run_one(method: Method, scenario: &Scenario, traj: &Trajectory, seed: u64, settings: &MethodSettings) -> RunOutcome {
    let start = Instant::now();
    let estimate = estimate(method, scenario, &traj.observations, seed, settings).and_then(|e| {
        let model = params_to_discrete(&e.theta, scenario.step)?;
        let c = nees_nis_run(traj, &model)?;
        if c.nees.iter().chain(&c.nis).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("consistency statistics"));
        }
        Ok((e, c))
    });
    RunOutcome { estimate, elapsed: start.elapsed() }
}

/// Simulates `n_mc` records from `scenario` and runs every method on each.
/// Run `j` draws its data from the substream `("simulate", j)` of `seed`.
/// Failed runs are recorded and excluded from the aggregates; use
/// [`StudyResult::check_failures`] to enforce the failure limit.
/// `jobs` caps the worker pool; `None` uses all available cores.
pub fn run_study(
    scenario: &Scenario,
    methods: &[Method],
    n_mc: usize,
    seed: u64,
    settings: &MethodSettings,
    jobs: Option<usize>,
) -> Result<StudyResult> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("a study needs at least one method".into()));
    }
    if n_mc == 0 {
        return Err(Error::InvalidArgument("a study needs at least one run".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;

    let per_run: Vec<(u64, Result<Vec<RunOutcome>>)> = pool.install(|| {
        (0..n_mc)
            .into_par_iter()
            .map(|j| {
                let data_seed = derive_seed(seed, "simulate", j as u64);
                let outcomes = scenario.simulate(data_seed).map(|traj| {
                    methods
                        .iter()
                        .map(|m| {
                            let method_seed = derive_seed(seed, m.name(), j as u64);
                            run_one(*m, scenario, &traj, method_seed, settings)
                        })
                        .collect()
                });
                (data_seed, outcomes)
            })
            .collect()
    });
    let per_run = per_run.into_iter().map(|(s, r)| r.map(|o| (s, o))).collect::<Result<Vec<_>>>()?;

    let names: Vec<String> = scenario.kind.param_names().iter().map(|s| s.to_string()).collect();
    let mut summaries = Vec::with_capacity(methods.len());
    for (mi, method) in methods.iter().enumerate() {
        let mut records = Vec::with_capacity(n_mc);
        let mut thetas = Vec::new();
        let mut lls = Vec::new();
        let mut cons = Vec::new();
        let mut timing = TimingStats::default();
        for (j, (data_seed, outcomes)) in per_run.iter().enumerate() {
            let o = &outcomes[mi];
            timing.total += o.elapsed;
            timing.max_per_run = timing.max_per_run.max(o.elapsed);
            match &o.estimate {
                Ok((e, c)) => {
                    thetas.push(e.theta.values.clone());
                    lls.push(e.loglik);
                    cons.push(c.clone());
                    records.push(RunRecord {
                        run: j,
                        data_seed: *data_seed,
                        theta: Some(e.theta.values.clone()),
                        loglik: Some(e.loglik),
                        evaluations: e.evaluations,
                        error: None,
                    });
                }
                Err(err) => records.push(RunRecord {
                    run: j,
                    data_seed: *data_seed,
                    theta: None,
                    loglik: None,
                    evaluations: 0,
                    error: Some(err.to_string()),
                }),
            }
        }
        timing.mean_per_run = timing.total / n_mc as u32;
        let dim = names.len();
        let ok = !thetas.is_empty();
        summaries.push(MethodSummary {
            method: *method,
            param_names: names.clone(),
            average: if ok { average(&thetas, dim) } else { Vec::new() },
            rmse: if ok { rmse(&thetas, &scenario.truth.values) } else { Vec::new() },
            consistency: if ok {
                Some(consistency_report(&cons, scenario.kind.order(), DEFAULT_CONFIDENCE)?)
            } else {
                None
            },
            mean_loglik: ok.then(|| lls.iter().sum::<f64>() / lls.len() as f64),
            successes: thetas.len(),
            failures: n_mc - thetas.len(),
            runs: records,
            timing,
        });
    }
    Ok(StudyResult {
        scenario: scenario.clone(),
        n: scenario.n_steps(),
        n_mc,
        seed,
        confidence: DEFAULT_CONFIDENCE,
        settings: settings.clone(),
        methods: summaries,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedTables {
    pub text: String,
    pub json: Value,
}

fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

fn fixed(v: f64) -> String {
    format!("{v:.4}")
}

/// Aligned text table and JSON rows: one row per method and parameter.
/// The smallest RMSE per parameter is marked with `*`.
pub fn render_tables(result: &StudyResult) -> RenderedTables {
    let names = result.scenario.kind.param_names();
    let crlb = result.scenario.crlb_sigma.as_ref();
    let best: Vec<Option<f64>> = (0..names.len())
        .map(|p| {
            result
                .methods
                .iter()
                .filter_map(|m| m.rmse.get(p).copied())
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        })
        .collect();

    let mut header = vec!["method", "param", "avg", "RMSE"];
    if crlb.is_some() {
        header.push("CRLB sigma");
    }
    header.extend(["NEES", "NIS", "mean LL", "failed"]);

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut json_rows = Vec::new();
    for m in &result.methods {
        let c = m.consistency.as_ref();
        for (p, name) in names.iter().enumerate() {
            let first = p == 0;
            let avg = m.average.get(p).copied();
            let r = m.rmse.get(p).copied();
            let mark = matches!((r, best[p]), (Some(a), Some(b)) if a == b);
            let mut row = vec![
                if first { m.method.name().to_string() } else { String::new() },
                name.to_string(),
                avg.map_or("-".into(), sci),
                r.map_or("-".into(), |v| format!("{}{}", sci(v), if mark { "*" } else { "" })),
            ];
            if let Some(cr) = crlb {
                row.push(sci(cr[p]));
            }
            if first {
                row.push(c.map_or("-".into(), |c| fixed(c.mean_nees)));
                row.push(c.map_or("-".into(), |c| fixed(c.mean_nis)));
                row.push(m.mean_loglik.map_or("-".into(), |v| format!("{v:.2}")));
                row.push(format!("{}/{}", m.failures, m.failures + m.successes));
            } else {
                row.extend([String::new(), String::new(), String::new(), String::new()]);
            }
            rows.push(row);
            json_rows.push(json!({
                "method": m.method.name(),
                "param": name,
                "avg": avg,
                "rmse": r,
                "min_rmse": mark,
                "crlb_sigma": crlb.map(|c| c[p]),
                "nees": c.map(|c| c.mean_nees),
                "nis": c.map(|c| c.mean_nis),
                "mean_loglik": m.mean_loglik,
                "failures": m.failures,
            }));
        }
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| -> String {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };

    let mut text = String::new();
    let _ = writeln!(
        text,
        "scenario {} (order {}, T={}, N={}, N_MC={}, seed={})",
        result.scenario.id,
        result.scenario.kind.order(),
        result.scenario.step,
        result.n,
        result.n_mc,
        result.seed
    );
    if let Some(c) = result.methods.iter().find_map(|m| m.consistency.as_ref()) {
        let _ = writeln!(
            text,
            "{:.0}% regions: NEES [{:.3}, {:.3}], NIS [{:.3}, {:.3}]",
            result.confidence * 100.0,
            c.nees_region.0,
            c.nees_region.1,
            c.nis_region.0,
            c.nis_region.1
        );
    }
    let header_cells: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(text, "{}", line(&header_cells));
    let _ = writeln!(text, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for r in &rows {
        let _ = writeln!(text, "{}", line(r));
    }
    if crlb.is_some() {
        let _ = writeln!(text, "CRLB sigma: reference values, not computed");
    }
    RenderedTables {
        text,
        json: json!({
            "scenario": result.scenario.id,
            "columns": header,
            "rows": json_rows,
        }),
    }
}
