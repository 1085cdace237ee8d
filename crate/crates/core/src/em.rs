//! Expectation–maximization for the linear Gaussian state-space model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{log_likelihood, rts_smooth, FilterInit};
use crate::model::{companion, nilpotent_process_cov, DiscreteModel, ParamVector, ScenarioKind, SearchBox};
use crate::numerics::{floor_eigenvalues, log_2x2, mat_exp, CholeskyFactor, Matrix};

/// Smallest eigenvalue allowed in an M-step process covariance.
pub const Q_EIGEN_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Damping `θ ← (1 − α)θ_prev + α θ_new`.
    pub alpha: f64,
    /// Stop once the largest entry change in `(A, Q, R)` is below this.
    pub tol: f64,
    /// Starting model; moment-based when absent.
    pub init: Option<DiscreteModel>,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iter: 50, alpha: 1.0, tol: 1e-6, init: None }
    }
}

/// Smoothed sufficient statistics summed over `n = 1..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// `Σ Pₙ|N + x̂ₙ|N x̂ₙ|Nᵀ`
    pub s11: Matrix,
    /// `Σ Pₙ,ₙ₋₁|N + x̂ₙ|N x̂ₙ₋₁|Nᵀ`
    pub s10: Matrix,
    /// `Σ Pₙ₋₁|N + x̂ₙ₋₁|N x̂ₙ₋₁|Nᵀ`
    pub s00: Matrix,
    /// `Σ (zₙ − Hx̂ₙ|N)² + HPₙ|NHᵀ`
    pub residual: f64,
    pub n: usize,
    /// Data log-likelihood of the model the statistics were computed under.
    pub loglik: f64,
}

/// Runs the filter and smoother under `model` and accumulates the
/// statistics needed by the M-step.
pub fn em_estep(model: &DiscreteModel, z: &[f64], init: &FilterInit) -> Result<SufficientStats> {
    let (loglik, filter) = log_likelihood(model, z, init)?;
    let smooth = rts_smooth(model, &filter)?;
    let d = model.dim();
    let h = &model.observation;
    let mut s11 = Matrix::zeros(d, d);
    let mut s10 = Matrix::zeros(d, d);
    let mut s00 = Matrix::zeros(d, d);
    let mut residual = 0.0;
    for n in 1..=z.len() {
        let xn = &smooth.means[n];
        let xp = &smooth.means[n - 1];
        s11 = &s11 + &(&smooth.covs[n] + &Matrix::outer(xn, xn));
        s10 = &s10 + &(&smooth.lag_one[n - 1] + &Matrix::outer(xn, xp));
        s00 = &s00 + &(&smooth.covs[n - 1] + &Matrix::outer(xp, xp));
        let hx: f64 = h.iter().zip(xn).map(|(a, b)| a * b).sum();
        residual += (z[n - 1] - hx).powi(2) + smooth.covs[n].quad_form(h);
    }
    Ok(SufficientStats { s11, s10, s00, residual, n: z.len(), loglik })
}

/// Closed-form maximizers `A = S₁₀S₀₀⁻¹`,
/// `Q = (S₁₁ − AS₁₀ᵀ − S₁₀Aᵀ + AS₀₀Aᵀ)/N` and `R = residual/N`.
pub fn em_mstep(stats: &SufficientStats) -> Result<(Matrix, Matrix, f64)> {
    if stats.n == 0 {
        return Err(Error::InvalidArgument("M-step needs at least one observation".into()));
    }
    let (chol, _) = CholeskyFactor::with_jitter(&stats.s00).map_err(|_| Error::Singular)?;
    // A = S₁₀ S₀₀⁻¹, so Aᵀ = S₀₀⁻¹ S₁₀ᵀ
    let a = chol.solve_mat(&stats.s10.transpose()).transpose();
    let cross = &a * &stats.s10.transpose();
    let q_raw = &(&(&stats.s11 - &cross) - &cross.transpose()) + &a.sandwich(&stats.s00);
    let q = floor_eigenvalues(&q_raw.scale(1.0 / stats.n as f64).symmetrize(), Q_EIGEN_FLOOR)?;
    let r = (stats.residual / stats.n as f64).max(0.0);
    Ok((a, q, r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmIteration {
    pub transition: Matrix,
    pub process_cov: Matrix,
    pub measurement_var: f64,
    pub loglik: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    /// Iterate 0 is the starting model.
    pub iterations: Vec<EmIteration>,
    pub converged: bool,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl EmTrace {
    pub fn last(&self) -> &EmIteration {
        self.iterations.last().expect("trace holds the starting model")
    }

    pub fn model(&self, step: f64) -> Result<DiscreteModel> {
        let it = self.last();
        DiscreteModel::new(it.transition.clone(), it.process_cov.clone(), it.measurement_var, step)
    }
}

fn autocov(z: &[f64], lag: usize) -> f64 {
    let n = z.len();
    let mean = z.iter().sum::<f64>() / n as f64;
    (lag..n).map(|i| (z[i] - mean) * (z[i - lag] - mean)).sum::<f64>() / n as f64
}

/// Moment-based starting model: `R₀` from half the gap between the lag-0
/// and lag-1 autocovariances, the state variance from the remainder, and
/// the transition from the lag-1 correlation of the state.
pub fn moment_init(z: &[f64], kind: ScenarioKind, step: f64) -> Result<DiscreteModel> {
    if z.len() < 3 {
        return Err(Error::InvalidArgument("moment initialization needs at least three samples".into()));
    }
    let c0 = autocov(z, 0);
    let c1 = autocov(z, 1);
    if !(c0 > 0.0) {
        return Err(Error::InvalidArgument("observations have zero variance".into()));
    }
    let r0 = (0.5 * (c0 - c1)).clamp(1e-3 * c0, 0.9 * c0);
    let px = c0 - r0;
    match kind {
        ScenarioKind::FirstOrder => {
            let a0 = (c1 / px).clamp(0.5, 0.9999);
            DiscreteModel::scalar(a0, px * (1.0 - a0 * a0), r0, step)
        }
        ScenarioKind::SecondOrder => {
            let (a0, a1) = (1.0, 2.0);
            let transition = mat_exp(&companion(&[a0, a1]), step)?;
            DiscreteModel::new(transition, nilpotent_process_cov(px * 2.0 * a0 * a1, step), r0, step)
        }
    }
}

fn max_change(a: &EmIteration, b: &EmIteration) -> f64 {
    let da = (&a.transition - &b.transition).max_abs();
    let dq = (&a.process_cov - &b.process_cov).max_abs();
    da.max(dq).max((a.measurement_var - b.measurement_var).abs())
}

/// Alternates E- and M-steps from the configured (or moment-based)
/// starting model. The filter prior stays fixed at the starting model's
/// stationary law so every iterate is scored against the same likelihood.
pub fn run_em(z: &[f64], kind: ScenarioKind, step: f64, config: &EmConfig) -> Result<EmTrace> {
    let d = kind.order();
    if z.len() < d + 2 {
        return Err(Error::InvalidArgument(format!("EM needs at least {} observations", d + 2)));
    }
    if !(0.0..=1.0).contains(&config.alpha) || !(config.tol > 0.0) {
        return Err(Error::InvalidArgument("EM needs 0 ≤ α ≤ 1 and a positive tolerance".into()));
    }
    let start = match &config.init {
        Some(m) => m.clone(),
        None => moment_init(z, kind, step)?,
    };
    if start.dim() != d {
        return Err(Error::DimensionMismatch("EM starting model has the wrong order".into()));
    }
    let init = FilterInit::stationary(&start);

    let mut model = start;
    let mut trace = EmTrace { iterations: Vec::new(), converged: false, failed: false, failure: None };
    let fail = |mut trace: EmTrace, msg: String| {
        trace.failed = true;
        trace.failure = Some(msg);
        Ok(trace)
    };
    for i in 0..=config.max_iter {
        let stats = match em_estep(&model, z, &init) {
            Ok(s) if s.loglik.is_finite() => s,
            Ok(_) => return fail(trace, "non-finite log-likelihood".into()),
            Err(e) => return fail(trace, e.to_string()),
        };
        let current = EmIteration {
            transition: model.transition.clone(),
            process_cov: model.process_cov.clone(),
            measurement_var: model.measurement_var,
            loglik: stats.loglik,
        };
        if let Some(prev) = trace.iterations.last() {
            if max_change(prev, &current) < config.tol {
                trace.converged = true;
            }
        }
        trace.iterations.push(current);
        if trace.converged || i == config.max_iter {
            break;
        }
        let (a, q, r) = match em_mstep(&stats) {
            Ok(v) => v,
            Err(e) => return fail(trace, e.to_string()),
        };
        let w = config.alpha;
        let blend = |old: &Matrix, new: &Matrix| &old.scale(1.0 - w) + &new.scale(w);
        let next = DiscreteModel::new(
            blend(&model.transition, &a),
            blend(&model.process_cov, &q).symmetrize(),
            (1.0 - w) * model.measurement_var + w * r,
            step,
        );
        model = match next {
            Ok(m) => m,
            Err(e) => return fail(trace, e.to_string()),
        };
    }
    Ok(trace)
}

/// Maps an unconstrained `(A, Q, R)` estimate to structural parameters.
///
/// First order: `a = −ln A / T`. Second order: `F̂ = log(A)/T`, then
/// `a₁ = −tr F̂` and `a₀ = det F̂` (the companion coefficients, unchanged
/// by a change of state basis) and `Q̃` by least squares against the
/// closed-form covariance template. Results are clamped into `bounds`.
pub fn structural_params(model: &DiscreteModel, kind: ScenarioKind, bounds: &SearchBox) -> Result<ParamVector> {
    let t = model.step;
    let mut values = match kind {
        ScenarioKind::FirstOrder => {
            let a = model.transition[(0, 0)];
            if !(a > 0.0) {
                return Err(Error::NoRealLogarithm);
            }
            vec![-a.ln() / t, model.process_cov[(0, 0)], model.measurement_var]
        }
        ScenarioKind::SecondOrder => {
            let f = log_2x2(&model.transition)?.scale(1.0 / t);
            let a1 = -f.trace();
            let a0 = f[(0, 0)] * f[(1, 1)] - f[(0, 1)] * f[(1, 0)];
            let tmpl = nilpotent_process_cov(1.0, t);
            let num: f64 = tmpl.as_slice().iter().zip(model.process_cov.as_slice()).map(|(a, b)| a * b).sum();
            let den: f64 = tmpl.as_slice().iter().map(|a| a * a).sum();
            vec![a0, a1, num / den, model.measurement_var]
        }
    };
    bounds.clamp(&mut values);
    ParamVector::new(kind, values)
}
