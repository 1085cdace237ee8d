//! Direct maximum-likelihood baseline by multi-start Nelder–Mead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bo::lhs_init;
use crate::error::{Error, Result};
use crate::kalman::{log_likelihood_value, FilterInit};
use crate::model::{params_to_discrete, ParamVector, ScenarioKind, SearchBox};
use crate::numerics::{nelder_mead, NelderMeadOptions};
use crate::rng::{derive_seed, RandomStream};

/// Objective value assigned to parameters the filter cannot evaluate.
pub const FAILED_NLL: f64 = 1e12;

/// Nelder–Mead restarts from each converged point.
const MAX_RESTARTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub starts: usize,
    /// Iteration cap per start.
    pub max_iter: usize,
    pub tol: f64,
    pub bounds: SearchBox,
    pub seed: u64,
    /// Search over `ln θ` instead of `θ`.
    pub log_coords: bool,
}

impl MleConfig {
    pub fn new(bounds: SearchBox, seed: u64) -> Self {
        Self { starts: 8, max_iter: 400, tol: 1e-8, bounds, seed, log_coords: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub start: Vec<f64>,
    pub start_value: f64,
    pub theta: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeReport {
    pub theta: Vec<f64>,
    pub value: f64,
    pub best_start: usize,
    pub starts: Vec<StartRecord>,
}

/// Minimizes `f` over `config.bounds` from Latin-hypercube starts. The
/// lowest value wins, ties going to the lowest start index.
pub fn minimize_multistart<F>(f: F, config: &MleConfig) -> Result<MinimizeReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if config.starts == 0 {
        return Err(Error::InvalidArgument("at least one start is required".into()));
    }
    let b = &config.bounds;
    if config.log_coords && b.lower.iter().any(|l| *l <= 0.0) {
        return Err(Error::InvalidArgument("log coordinates need a positive box".into()));
    }
    let to_inner = |x: &[f64]| -> Vec<f64> {
        if config.log_coords {
            x.iter().map(|v| v.ln()).collect()
        } else {
            x.to_vec()
        }
    };
    let to_outer = |u: &[f64]| -> Vec<f64> {
        let mut x: Vec<f64> = if config.log_coords { u.iter().map(|v| v.exp()).collect() } else { u.to_vec() };
        b.clamp(&mut x);
        x
    };
    let inner_box = SearchBox::new(to_inner(&b.lower), to_inner(&b.upper))?;
    let mut rng = RandomStream::new(derive_seed(config.seed, "mle-starts", 0));
    let starts = lhs_init(&inner_box, config.starts, &mut rng);
    let opts = NelderMeadOptions {
        max_iter: config.max_iter,
        max_evals: usize::MAX,
        f_tol: config.tol,
        x_tol: config.tol,
        initial_step: (0..b.dim()).map(|j| 0.1 * (inner_box.upper[j] - inner_box.lower[j])).collect(),
    };
    let eval = |u: &[f64]| {
        let v = f(&to_outer(u));
        if v.is_finite() {
            v
        } else {
            FAILED_NLL
        }
    };

    let records: Vec<StartRecord> = starts
        .par_iter()
        .map(|s| {
            let bounds = Some((inner_box.lower.as_slice(), inner_box.upper.as_slice()));
            let mut r = nelder_mead(eval, s, bounds, &opts);
            let mut evaluations = r.evaluations;
            // fresh simplices recover from collapse onto a box face
            for _ in 0..MAX_RESTARTS {
                let next = nelder_mead(eval, &r.x, bounds, &opts);
                evaluations += next.evaluations;
                let gain = r.f - next.f;
                if next.f < r.f {
                    r = next;
                }
                if !(gain > config.tol) {
                    break;
                }
            }
            StartRecord {
                start: to_outer(s),
                start_value: eval(s),
                theta: to_outer(&r.x),
                value: r.f,
                evaluations,
                converged: r.converged,
            }
        })
        .collect();
    let best = (0..records.len()).fold(0, |b, i| if records[i].value < records[b].value { i } else { b });
    if records[best].value >= FAILED_NLL {
        return Err(Error::AllStartsFailed(records.len()));
    }
    Ok(MinimizeReport {
        theta: records[best].theta.clone(),
        value: records[best].value,
        best_start: best,
        starts: records,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub theta_hat: ParamVector,
    pub nll: f64,
    pub report: MinimizeReport,
}

/// Negative exact-filter log-likelihood of `theta`, or [`FAILED_NLL`].
pub fn negative_log_likelihood(theta: &[f64], kind: ScenarioKind, step: f64, z: &[f64]) -> f64 {
    let eval = || -> Result<f64> {
        let model = params_to_discrete(&ParamVector::new(kind, theta.to_vec())?, step)?;
        Ok(-log_likelihood_value(&model, z, &FilterInit::stationary(&model))?)
    };
    eval().unwrap_or(FAILED_NLL)
}

/// Maximum-likelihood estimate of the structural parameters.
pub fn run_mle(z: &[f64], kind: ScenarioKind, step: f64, config: &MleConfig) -> Result<MleResult> {
    if z.len() < kind.order() + 2 {
        return Err(Error::InvalidArgument(format!("MLE needs at least {} observations", kind.order() + 2)));
    }
    if config.bounds.dim() != kind.n_params() {
        return Err(Error::DimensionMismatch("search box does not match the parameter count".into()));
    }
    let report = minimize_multistart(|th| negative_log_likelihood(th, kind, step, z), config)?;
    Ok(MleResult { theta_hat: ParamVector::new(kind, report.theta.clone())?, nll: report.value, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_quadratic_minimum() {
        let b = SearchBox::uniform(3, 1e-3, 10.0).unwrap();
        let target = [0.5, 2.0, 7.5];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, t)| (a - t).powi(2)).sum::<f64>();
        let r = minimize_multistart(f, &MleConfig::new(b.clone(), 1)).unwrap();
        for (v, t) in r.theta.iter().zip(&target) {
            assert!((v - t).abs() < 1e-4, "{:?}", r.theta);
        }
        for s in &r.starts {
            assert!(r.value <= s.start_value);
            assert!(b.contains(&s.theta));
        }
    }

    #[test]
    fn corner_minimum_stays_in_box() {
        let b = SearchBox::uniform(2, 0.0, 1.0).unwrap();
        let mut cfg = MleConfig::new(b.clone(), 3);
        cfg.log_coords = false;
        let r = minimize_multistart(|x| x[0] + x[1], &cfg).unwrap();
        assert!(r.value < 1e-6);
        assert!(b.contains(&r.theta));
    }

    #[test]
    fn all_failures_error() {
        let b = SearchBox::uniform(1, 1.0, 2.0).unwrap();
        let err = minimize_multistart(|_| f64::NAN, &MleConfig::new(b, 0)).unwrap_err();
        assert!(matches!(err, Error::AllStartsFailed(8)));
    }
}
