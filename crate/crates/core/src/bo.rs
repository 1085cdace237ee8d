//! Bayesian optimization of a black-box objective over a box.

use serde::{Deserialize, Serialize};

use crate::egp::EnsembleSurrogate;
use crate::error::{Error, Result};
use crate::gp::{halton, GpFitOptions, GpPosterior, KernelKind, PRIMES};
use crate::kalman::FAILED_OBJECTIVE;
use crate::model::SearchBox;
use crate::numerics::normal_pdf_cdf;
use crate::rng::{derive_seed, RandomStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Egp,
    Rbf,
    Matern15,
    Matern25,
}

impl SurrogateKind {
    pub fn kernels(self) -> Vec<KernelKind> {
        match self {
            SurrogateKind::Egp => KernelKind::ALL.to_vec(),
            SurrogateKind::Rbf => vec![KernelKind::Rbf],
            SurrogateKind::Matern15 => vec![KernelKind::Matern15],
            SurrogateKind::Matern25 => vec![KernelKind::Matern25],
        }
    }
}

/// Monotone transform applied to observed objective values before the
/// surrogate sees them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputWarp {
    /// Values are used as observed.
    Identity,
    /// `−ln(1 + (y_max − y)/s)` with `s` the median gap to the best value.
    #[default]
    Log,
}

impl OutputWarp {
    pub fn apply(self, y: &[f64]) -> Vec<f64> {
        match self {
            OutputWarp::Identity => y.to_vec(),
            OutputWarp::Log => {
                let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut gaps: Vec<f64> = y.iter().map(|v| top - v).collect();
                gaps.sort_by(f64::total_cmp);
                let median = gaps[gaps.len() / 2];
                let s = if median > 0.0 { median } else { 1.0 };
                y.iter().map(|v| -((top - v) / s).ln_1p()).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    /// Acquisitions after the initial design.
    pub budget: usize,
    pub n_initial: usize,
    pub bounds: SearchBox,
    pub surrogate: SurrogateKind,
    /// Probes refined locally during acquisition maximization.
    pub restarts: usize,
    /// Quasi-random probes scored during acquisition maximization.
    pub probes: usize,
    pub seed: u64,
    /// Model the surrogate over log-parameters instead of the linear box.
    pub log_space: bool,
    pub warp: OutputWarp,
    pub gp: GpFitOptions,
}

impl BoConfig {
    pub fn new(bounds: SearchBox, surrogate: SurrogateKind, seed: u64) -> Self {
        Self {
            budget: 60,
            n_initial: 10,
            bounds,
            surrogate,
            restarts: 8,
            probes: 1024,
            seed,
            log_space: false,
            warp: OutputWarp::default(),
            gp: GpFitOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_initial < 2 {
            return Err(Error::InvalidArgument("BO needs at least two initial points".into()));
        }
        if self.log_space && self.bounds.lower.iter().any(|l| *l <= 0.0) {
            return Err(Error::InvalidArgument("log-space search needs a positive box".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoIteration {
    pub index: usize,
    pub theta: Vec<f64>,
    pub y: f64,
    /// Best objective seen so far.
    pub incumbent: f64,
    /// Ensemble weights after this observation (EGP only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoHistory {
    pub iterations: Vec<BoIteration>,
    pub theta_hat: Vec<f64>,
    pub y_hat: f64,
    pub evaluations: usize,
}

/// Latin hypercube design: one point per stratum in every dimension.
pub fn lhs_init(bounds: &SearchBox, n: usize, rng: &mut RandomStream) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let mut points = vec![vec![0.0; d]; n];
    for j in 0..d {
        let perm = rng.permutation(n);
        let width = bounds.upper[j] - bounds.lower[j];
        for (i, p) in points.iter_mut().enumerate() {
            let u = (perm[i] as f64 + rng.uniform()) / n as f64;
            p[j] = (bounds.lower[j] + u * width).min(bounds.upper[j]);
        }
    }
    points
}

/// `σφ(Δ/σ) + ΔΦ(Δ/σ)` with `Δ = mean − best`; `max(Δ, 0)` when `σ = 0`.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let delta = mean - best;
    let sigma = var.max(0.0).sqrt();
    if sigma == 0.0 {
        return delta.max(0.0);
    }
    let z = delta / sigma;
    let (pdf, cdf) = normal_pdf_cdf(z);
    sigma * pdf + delta * cdf
}

/// `log EI`, accurate far into the lower tail where EI underflows.
pub fn log_expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let delta = mean - best;
    let sigma = var.max(0.0).sqrt();
    if sigma == 0.0 {
        return if delta > 0.0 { delta.ln() } else { f64::NEG_INFINITY };
    }
    let z = delta / sigma;
    if z > -6.0 {
        return expected_improvement(mean, var, best).ln();
    }
    // EI = σφ(z)(1 − xR(x)) with x = −z and R the Mills ratio
    let x = -z;
    let log_phi = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let tail = if x > 1e4 {
        let x2 = x * x;
        (1.0 - 3.0 / x2 + 15.0 / (x2 * x2)) / x2
    } else {
        1.0 - x * mills_ratio(x)
    };
    sigma.ln() + log_phi + tail.ln()
}

/// `(1 − Φ(x)) / φ(x)` for `x > 0` by continued fraction.
fn mills_ratio(x: f64) -> f64 {
    let mut frac = 0.0;
    for k in (1..=200).rev() {
        frac = k as f64 / (x + frac);
    }
    1.0 / (x + frac)
}

/// Something that yields a predictive mean and variance.
pub trait Surrogate {
    fn predict(&self, x: &[f64]) -> (f64, f64);
}

impl Surrogate for GpPosterior {
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        GpPosterior::predict(self, x)
    }
}

impl Surrogate for EnsembleSurrogate {
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        EnsembleSurrogate::predict(self, x)
    }
}

/// Best-effort global maximization of `f` over a box: shifted Halton probes
/// followed by coordinate pattern search from the top `restarts` probes.
pub fn maximize_in_box<F: Fn(&[f64]) -> f64>(
    f: F,
    bounds: &SearchBox,
    probes: usize,
    restarts: usize,
    seed: u64,
) -> Vec<f64> {
    let d = bounds.dim();
    let mut rng = RandomStream::new(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
    let score = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut cands: Vec<(f64, Vec<f64>)> = (1..=probes.max(1) as u64)
        .map(|i| {
            let x: Vec<f64> = (0..d)
                .map(|j| {
                    let u = (halton(i, PRIMES[j % PRIMES.len()]) + shift[j]).fract();
                    bounds.lower[j] + u * (bounds.upper[j] - bounds.lower[j])
                })
                .collect();
            (score(&x), x)
        })
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best = cands[0].clone();
    for (v0, x0) in cands.iter().take(restarts) {
        let mut x = x0.clone();
        let mut v = *v0;
        let mut steps: Vec<f64> = (0..d).map(|j| 0.05 * (bounds.upper[j] - bounds.lower[j])).collect();
        let min_step: Vec<f64> = (0..d).map(|j| 1e-7 * (bounds.upper[j] - bounds.lower[j])).collect();
        for _ in 0..60 {
            let mut moved = false;
            for j in 0..d {
                for dir in [1.0, -1.0] {
                    let mut t = x.clone();
                    t[j] = (t[j] + dir * steps[j]).clamp(bounds.lower[j], bounds.upper[j]);
                    let tv = score(&t);
                    if tv > v {
                        x = t;
                        v = tv;
                        moved = true;
                        break;
                    }
                }
            }
            if !moved {
                steps.iter_mut().for_each(|s| *s *= 0.5);
                if steps.iter().zip(&min_step).all(|(s, m)| s < m) {
                    break;
                }
            }
        }
        if v > best.0 {
            best = (v, x);
        }
    }
    best.1
}

/// Maximizes `log EI` of `surrogate` against the incumbent `best`.
pub fn maximize_acquisition<S: Surrogate>(
    surrogate: &S,
    best: f64,
    bounds: &SearchBox,
    probes: usize,
    restarts: usize,
    seed: u64,
) -> Vec<f64> {
    maximize_in_box(
        |x| {
            let (m, v) = surrogate.predict(x);
            log_expected_improvement(m, v, best)
        },
        bounds,
        probes,
        restarts,
        seed,
    )
}

/// Affine (or log-affine) map between the parameter box and the unit cube.
struct CubeMap {
    lower: Vec<f64>,
    upper: Vec<f64>,
    log: bool,
}

impl CubeMap {
    fn new(bounds: &SearchBox, log: bool) -> Self {
        let f = |v: &f64| if log { v.ln() } else { *v };
        Self { lower: bounds.lower.iter().map(f).collect(), upper: bounds.upper.iter().map(f).collect(), log }
    }

    fn to_param(&self, u: &[f64], bounds: &SearchBox) -> Vec<f64> {
        let mut x: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let t = self.lower[j] + v * (self.upper[j] - self.lower[j]);
                if self.log {
                    t.exp()
                } else {
                    t
                }
            })
            .collect();
        bounds.clamp(&mut x);
        x
    }
}

enum Model {
    Single(GpPosterior),
    Ensemble(EnsembleSurrogate),
}

impl Surrogate for Model {
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        match self {
            Model::Single(g) => g.predict(x),
            Model::Ensemble(e) => e.predict(x),
        }
    }
}

/// Replaces failure sentinels and non-finite values with the worst valid
/// observation so they do not dominate the surrogate's output scale.
fn sanitize(y: &[f64]) -> Vec<f64> {
    let valid = |v: f64| v.is_finite() && v > FAILED_OBJECTIVE / 2.0;
    let worst = y.iter().copied().filter(|v| valid(*v)).fold(f64::INFINITY, f64::min);
    let fill = if worst.is_finite() { worst } else { FAILED_OBJECTIVE };
    y.iter().map(|v| if valid(*v) { *v } else { fill }).collect()
}

fn fit_model(
    kind: SurrogateKind,
    u: &[Vec<f64>],
    y: &[f64],
    opts: &GpFitOptions,
    prev: Option<Model>,
) -> Result<Model> {
    match (kind, prev) {
        (SurrogateKind::Egp, Some(Model::Ensemble(mut e))) => {
            e.refit(u, y, opts)?;
            Ok(Model::Ensemble(e))
        }
        (SurrogateKind::Egp, _) => Ok(Model::Ensemble(EnsembleSurrogate::fit(u, y, &KernelKind::ALL, opts)?)),
        (k, prev) => {
            let warm = match prev {
                Some(Model::Single(g)) => Some(g.hyper().clone()),
                _ => None,
            };
            Ok(Model::Single(GpPosterior::fit(u, y, k.kernels()[0], opts, warm.as_ref())?))
        }
    }
}

/// Runs the BO loop maximizing `objective`: a Latin hypercube design, then
/// `budget` rounds of fit, acquire, evaluate. Returns the best observed point.
pub fn run_bo<F: FnMut(&[f64]) -> f64>(mut objective: F, config: &BoConfig) -> Result<BoHistory> {
    config.validate()?;
    let bounds = &config.bounds;
    let d = bounds.dim();
    let cube = CubeMap::new(bounds, config.log_space);
    let unit = SearchBox::uniform(d, 0.0, 1.0)?;

    let mut init_rng = RandomStream::new(derive_seed(config.seed, "bo-lhs", 0));
    let mut us = lhs_init(&unit, config.n_initial, &mut init_rng);
    let mut ys = Vec::with_capacity(config.n_initial + config.budget);
    let mut iterations = Vec::new();
    let mut incumbent = f64::NEG_INFINITY;
    let uniform_weights = (config.surrogate == SurrogateKind::Egp).then(|| vec![1.0 / 3.0; 3]);
    for (i, u) in us.iter().enumerate() {
        let theta = cube.to_param(u, bounds);
        let y = objective(&theta);
        let y = if y.is_nan() { FAILED_OBJECTIVE } else { y };
        incumbent = incumbent.max(y);
        ys.push(y);
        iterations.push(BoIteration { index: i, theta, y, incumbent, weights: uniform_weights.clone() });
    }

    let mut model: Option<Model> = None;
    for it in 0..config.budget {
        let clean = config.warp.apply(&sanitize(&ys));
        let fitted = fit_model(config.surrogate, &us, &clean, &config.gp, model.take())?;
        let best = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let seed = derive_seed(config.seed, "bo-acquisition", it as u64);
        let u = maximize_acquisition(&fitted, best, &unit, config.probes, config.restarts, seed);
        let theta = cube.to_param(&u, bounds);
        let y = objective(&theta);
        let y = if y.is_nan() { FAILED_OBJECTIVE } else { y };

        let mut fitted = fitted;
        let weights = match &mut fitted {
            Model::Ensemble(e) => {
                let mut all = ys.clone();
                all.push(y);
                let y_clean = *config.warp.apply(&sanitize(&all)).last().unwrap_or(&y);
                e.observe(&u, y_clean)?;
                Some(e.weights().to_vec())
            }
            Model::Single(_) => None,
        };
        model = Some(fitted);
        incumbent = incumbent.max(y);
        us.push(u);
        ys.push(y);
        iterations.push(BoIteration { index: iterations.len(), theta, y, incumbent, weights });
    }

    let best_idx = (0..ys.len()).fold(0, |b, i| if ys[i] > ys[b] { i } else { b });
    Ok(BoHistory {
        theta_hat: iterations[best_idx].theta.clone(),
        y_hat: ys[best_idx],
        evaluations: ys.len(),
        iterations,
    })
}
