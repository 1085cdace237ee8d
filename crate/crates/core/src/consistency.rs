//! Normalized estimation-error and innovation statistics with chi-squared
//! acceptance regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{log_likelihood, FilterInit};
use crate::model::DiscreteModel;
use crate::numerics::{chi2_quantile, CholeskyFactor};
use crate::simulate::Trajectory;

/// Default two-sided confidence level.
pub const DEFAULT_CONFIDENCE: f64 = 0.90;

/// Per-step `εₙ` and `νₙ` for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRun {
    pub nees: Vec<f64>,
    pub nis: Vec<f64>,
}

/// Filters `truth.observations` with `model` and returns
/// `εₙ = eₙᵀPₙ|ₙ⁻¹eₙ` (with `eₙ = xₙ − x̂ₙ|ₙ`) and `νₙ = (zₙ − ẑₙ|ₙ₋₁)²/Sₙ`.
pub fn nees_nis_run(truth: &Trajectory, model: &DiscreteModel) -> Result<ConsistencyRun> {
    if truth.dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "trajectory state has {} components, filter has {}",
            truth.dim(),
            model.dim()
        )));
    }
    let (_, f) = log_likelihood(model, &truth.observations, &FilterInit::stationary(model))?;
    let mut nees = Vec::with_capacity(f.len());
    for ((x, xh), p) in truth.states.iter().zip(&f.filt_means).zip(&f.filt_covs) {
        let e: Vec<f64> = x.iter().zip(xh).map(|(a, b)| a - b).collect();
        let (chol, _) = CholeskyFactor::with_jitter(p)?;
        let w = chol.forward(&e);
        nees.push(w.iter().map(|v| v * v).sum());
    }
    let nis = f.innovations.iter().zip(&f.innovation_vars).map(|(v, s)| v * v / s).collect();
    Ok(ConsistencyRun { nees, nis })
}

/// `[χ²_k(α/2), χ²_k(1 − α/2)] / (N_MC·N)` with `k = dof·N_MC·N` and
/// `α = 1 − confidence`.
pub fn acceptance_region(dof: usize, n_mc: usize, n: usize, confidence: f64) -> Result<(f64, f64)> {
    if dof == 0 || n_mc == 0 || n == 0 {
        return Err(Error::InvalidArgument("acceptance region needs positive counts".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidProbability(confidence));
    }
    let samples = (n_mc * n) as f64;
    let k = (dof * n_mc * n) as u64;
    let alpha = 1.0 - confidence;
    Ok((chi2_quantile(k, alpha / 2.0)? / samples, chi2_quantile(k, 1.0 - alpha / 2.0)? / samples))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub mean_nees: f64,
    pub mean_nis: f64,
    pub state_dim: usize,
    pub meas_dim: usize,
    pub n_mc: usize,
    pub n: usize,
    pub confidence: f64,
    pub nees_region: (f64, f64),
    pub nis_region: (f64, f64),
    pub nees_pass: bool,
    pub nis_pass: bool,
}

/// Averages `ε` and `ν` over every step of every run and tests them
/// against their regions. Runs must share one length.
pub fn consistency_report(runs: &[ConsistencyRun], state_dim: usize, confidence: f64) -> Result<ConsistencyReport> {
    let n = runs.first().map_or(0, |r| r.nees.len());
    if runs.is_empty() || n == 0 || runs.iter().any(|r| r.nees.len() != n || r.nis.len() != n) {
        return Err(Error::InvalidArgument("consistency needs non-empty runs of equal length".into()));
    }
    let total = (runs.len() * n) as f64;
    let mean_nees = runs.iter().flat_map(|r| &r.nees).sum::<f64>() / total;
    let mean_nis = runs.iter().flat_map(|r| &r.nis).sum::<f64>() / total;
    let nees_region = acceptance_region(state_dim, runs.len(), n, confidence)?;
    let nis_region = acceptance_region(1, runs.len(), n, confidence)?;
    Ok(ConsistencyReport {
        mean_nees,
        mean_nis,
        state_dim,
        meas_dim: 1,
        n_mc: runs.len(),
        n,
        confidence,
        nees_pass: (nees_region.0..=nees_region.1).contains(&mean_nees),
        nis_pass: (nis_region.0..=nis_region.1).contains(&mean_nis),
        nees_region,
        nis_region,
    })
}
