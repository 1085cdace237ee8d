//! Ensemble of GP experts with Bayesian model-averaging weights.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpFitOptions, GpPosterior, KernelKind, NOISE_FLOOR};

/// Lower bound applied to every weight after an update.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Largest loss gap (after shifting by the minimum) fed to the exponential.
pub const LOSS_CAP: f64 = 1e3;

/// Outcome of a Bayes weight update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightUpdate {
    pub weights: Vec<f64>,
    /// Set when every loss was non-finite and the weights were left as is.
    pub skipped: bool,
}

/// `w′ₘ = wₘ e^{−lₘ} / Σⱼ wⱼ e^{−lⱼ}`, evaluated after shifting losses by
/// their minimum and capping the shifted values at [`LOSS_CAP`].
pub fn weight_update(w: &[f64], losses: &[f64]) -> Result<WeightUpdate> {
    if w.len() != losses.len() || w.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} losses", w.len(), losses.len())));
    }
    let finite_min = losses.iter().copied().filter(|l| l.is_finite()).fold(f64::INFINITY, f64::min);
    if !finite_min.is_finite() {
        return Ok(WeightUpdate { weights: w.to_vec(), skipped: true });
    }
    let log_post: Vec<f64> = w
        .iter()
        .zip(losses)
        .map(|(wi, l)| {
            let shifted = if l.is_finite() { (l - finite_min).min(LOSS_CAP) } else { LOSS_CAP };
            wi.ln() - shifted
        })
        .collect();
    let top = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_post.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(WeightUpdate { weights: unnorm.iter().map(|v| v / total).collect(), skipped: false })
}

/// Raises weights to at least `floor` and renormalizes.
pub fn floor_weights(w: &[f64], floor: f64) -> Vec<f64> {
    let raised: Vec<f64> = w.iter().map(|v| v.max(floor)).collect();
    let total: f64 = raised.iter().sum();
    raised.iter().map(|v| v / total).collect()
}

/// `−log N(y; μ, σ² + σe²)` with the total variance floored at `floor`.
pub fn gaussian_loss(mean: f64, var: f64, noise_var: f64, y: f64, floor: f64) -> f64 {
    let v = (var + noise_var).max(floor);
    0.5 * (2.0 * PI * v).ln() + 0.5 * (y - mean).powi(2) / v
}

/// Negative log predictive density of `(θ, y)` under a fitted expert.
pub fn per_expert_loss(expert: &GpPosterior, theta: &[f64], y: f64) -> f64 {
    let (m, v) = expert.predict(theta);
    let (_, scale) = expert.standardization();
    gaussian_loss(m, v, expert.noise_var(), y, NOISE_FLOOR * scale * scale)
}

/// Mixture mean `Σ wₘ μₘ` and variance `Σ wₘ [σₘ² + (μₘ − mean)²]`.
pub fn mixture_moments(weights: &[f64], preds: &[(f64, f64)]) -> (f64, f64) {
    let mean: f64 = weights.iter().zip(preds).map(|(w, (m, _))| w * m).sum();
    let var: f64 = weights.iter().zip(preds).map(|(w, (m, v))| w * (v + (m - mean).powi(2))).sum();
    (mean, var.max(0.0))
}

#[derive(Clone, Debug)]
pub struct EnsembleSurrogate {
    experts: Vec<GpPosterior>,
    weights: Vec<f64>,
}

impl EnsembleSurrogate {
    /// Uniform prior weights.
    pub fn new(experts: Vec<GpPosterior>) -> Result<Self> {
        let m = experts.len();
        Self::with_weights(experts, vec![1.0 / m as f64; m])
    }

    pub fn with_weights(experts: Vec<GpPosterior>, weights: Vec<f64>) -> Result<Self> {
        if experts.is_empty() || experts.len() != weights.len() {
            return Err(Error::DimensionMismatch("ensemble needs one weight per expert".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("ensemble weights must lie on the simplex".into()));
        }
        Ok(Self { experts, weights })
    }

    /// Fits one expert per kernel kind on the same data.
    pub fn fit(x: &[Vec<f64>], y: &[f64], kinds: &[KernelKind], opts: &GpFitOptions) -> Result<Self> {
        let experts = kinds.iter().map(|k| GpPosterior::fit(x, y, *k, opts, None)).collect::<Result<Vec<_>>>()?;
        Self::new(experts)
    }

    /// Refits every expert on new data, keeping the weights. Each expert
    /// warm-starts from its previous hyperparameters.
    pub fn refit(&mut self, x: &[Vec<f64>], y: &[f64], opts: &GpFitOptions) -> Result<()> {
        let experts = self
            .experts
            .iter()
            .map(|e| GpPosterior::fit(x, y, e.kind(), opts, Some(e.hyper())))
            .collect::<Result<Vec<_>>>()?;
        self.experts = experts;
        Ok(())
    }

    pub fn experts(&self) -> &[GpPosterior] {
        &self.experts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Bayes update from a new observation scored by the current experts,
    /// followed by the weight floor. Returns whether the update was skipped.
    pub fn observe(&mut self, theta: &[f64], y: f64) -> Result<bool> {
        let losses: Vec<f64> = self.experts.iter().map(|e| per_expert_loss(e, theta, y)).collect();
        let upd = weight_update(&self.weights, &losses)?;
        self.weights = floor_weights(&upd.weights, WEIGHT_FLOOR);
        Ok(upd.skipped)
    }

    pub fn predict(&self, theta: &[f64]) -> (f64, f64) {
        let preds: Vec<(f64, f64)> = self.experts.iter().map(|e| e.predict(theta)).collect();
        mixture_moments(&self.weights, &preds)
    }
}
