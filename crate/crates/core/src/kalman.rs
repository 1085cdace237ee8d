//! Kalman filter log-likelihood and Rauch–Tung–Striebel smoothing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DiscreteModel;
use crate::numerics::{discrete_lyapunov, CholeskyFactor, Matrix};

/// Objective value reported for parameter sets the filter cannot evaluate.
pub const FAILED_OBJECTIVE: f64 = -1e12;

/// Diagonal prior covariance used when the model has no stationary law.
pub const DIFFUSE_PRIOR_VAR: f64 = 1e3;

/// Prior `x̂₀|₀`, `P₀|₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterInit {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl FilterInit {
    /// Zero mean with the stationary covariance, or `10³ I` when the
    /// transition is (numerically) not stable.
    pub fn stationary(model: &DiscreteModel) -> Self {
        let d = model.dim();
        let cov = discrete_lyapunov(&model.transition, &model.process_cov)
            .ok()
            .filter(|p| p.is_finite())
            .unwrap_or_else(|| Matrix::identity(d).scale(DIFFUSE_PRIOR_VAR));
        Self { mean: vec![0.0; d], cov }
    }
}

/// Per-step filter quantities for `n = 1..=N`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterOutput {
    pub init: FilterInit,
    pub pred_means: Vec<Vec<f64>>,
    pub pred_covs: Vec<Matrix>,
    pub filt_means: Vec<Vec<f64>>,
    pub filt_covs: Vec<Matrix>,
    /// `zₙ − ẑₙ|ₙ₋₁`
    pub innovations: Vec<f64>,
    /// `Sₙ`
    pub innovation_vars: Vec<f64>,
    pub gains: Vec<Vec<f64>>,
    /// `ℓₙ`
    pub step_loglik: Vec<f64>,
    pub loglik: f64,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.innovations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.innovations.is_empty()
    }
}

/// One predict/update cycle. Returns `(x̂ₙ|ₙ₋₁, Pₙ|ₙ₋₁, ν, S, K, x̂ₙ|ₙ, Pₙ|ₙ)`.
struct Step {
    pred_mean: Vec<f64>,
    pred_cov: Matrix,
    innovation: f64,
    s: f64,
    gain: Vec<f64>,
    filt_mean: Vec<f64>,
    filt_cov: Matrix,
}

fn step(model: &DiscreteModel, mean: &[f64], cov: &Matrix, z: f64, n: usize) -> Result<Step> {
    let a = &model.transition;
    let h = &model.observation;
    let d = model.dim();
    let pred_mean = a.mul_vec(mean);
    let pred_cov = (&a.sandwich(cov) + &model.process_cov).symmetrize();
    let ph = pred_cov.mul_vec(h);
    let s = h.iter().zip(&ph).map(|(x, y)| x * y).sum::<f64>() + model.measurement_var;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::DegenerateInnovation { step: n, value: s });
    }
    let zhat: f64 = h.iter().zip(&pred_mean).map(|(x, y)| x * y).sum();
    let innovation = z - zhat;
    let gain: Vec<f64> = ph.iter().map(|v| v / s).collect();
    let filt_mean: Vec<f64> = pred_mean.iter().zip(&gain).map(|(m, k)| m + k * innovation).collect();
    // Joseph form: (I − KH) P (I − KH)ᵀ + K R Kᵀ
    let mut ikh = Matrix::identity(d);
    for i in 0..d {
        for j in 0..d {
            ikh[(i, j)] -= gain[i] * h[j];
        }
    }
    let filt_cov = (&ikh.sandwich(&pred_cov) + &Matrix::outer(&gain, &gain).scale(model.measurement_var)).symmetrize();
    Ok(Step { pred_mean, pred_cov, innovation, s, gain, filt_mean, filt_cov })
}

fn step_loglik(innovation: f64, s: f64) -> f64 {
    -0.5 * ((2.0 * PI * s).ln() + innovation * innovation / s)
}

fn check_inputs(model: &DiscreteModel, z: &[f64], init: &FilterInit) -> Result<()> {
    if init.mean.len() != model.dim() || init.cov.rows() != model.dim() || !init.cov.is_square() {
        return Err(Error::DimensionMismatch("filter prior does not match the model dimension".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observations"));
    }
    Ok(())
}

/// `ℓ = Σₙ −½ [log 2πSₙ + (zₙ − ẑₙ|ₙ₋₁)² / Sₙ]` together with every
/// intermediate filter quantity.
pub fn log_likelihood(model: &DiscreteModel, z: &[f64], init: &FilterInit) -> Result<(f64, FilterOutput)> {
    check_inputs(model, z, init)?;
    let n = z.len();
    let mut out = FilterOutput {
        init: init.clone(),
        pred_means: Vec::with_capacity(n),
        pred_covs: Vec::with_capacity(n),
        filt_means: Vec::with_capacity(n),
        filt_covs: Vec::with_capacity(n),
        innovations: Vec::with_capacity(n),
        innovation_vars: Vec::with_capacity(n),
        gains: Vec::with_capacity(n),
        step_loglik: Vec::with_capacity(n),
        loglik: 0.0,
    };
    let mut mean = init.mean.clone();
    let mut cov = init.cov.clone();
    let mut total = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        let st = step(model, &mean, &cov, zi, i + 1)?;
        let l = step_loglik(st.innovation, st.s);
        total += l;
        mean = st.filt_mean.clone();
        cov = st.filt_cov.clone();
        out.pred_means.push(st.pred_mean);
        out.pred_covs.push(st.pred_cov);
        out.filt_means.push(st.filt_mean);
        out.filt_covs.push(st.filt_cov);
        out.innovations.push(st.innovation);
        out.innovation_vars.push(st.s);
        out.gains.push(st.gain);
        out.step_loglik.push(l);
    }
    out.loglik = total;
    Ok((total, out))
}

/// Log-likelihood only; avoids storing the per-step history.
pub fn log_likelihood_value(model: &DiscreteModel, z: &[f64], init: &FilterInit) -> Result<f64> {
    check_inputs(model, z, init)?;
    if model.dim() == 1 {
        return scalar_log_likelihood(model, z, init);
    }
    let mut mean = init.mean.clone();
    let mut cov = init.cov.clone();
    let mut total = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        let st = step(model, &mean, &cov, zi, i + 1)?;
        total += step_loglik(st.innovation, st.s);
        mean = st.filt_mean;
        cov = st.filt_cov;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("log-likelihood"));
    }
    Ok(total)
}

fn scalar_log_likelihood(model: &DiscreteModel, z: &[f64], init: &FilterInit) -> Result<f64> {
    let a = model.transition[(0, 0)];
    let q = model.process_cov[(0, 0)];
    let r = model.measurement_var;
    let h = model.observation[0];
    let mut x = init.mean[0];
    let mut p = init.cov[(0, 0)];
    let mut total = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        let xp = a * x;
        let pp = a * a * p + q;
        let s = h * h * pp + r;
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegenerateInnovation { step: i + 1, value: s });
        }
        let nu = zi - h * xp;
        total += step_loglik(nu, s);
        let k = pp * h / s;
        x = xp + k * nu;
        let l = 1.0 - k * h;
        p = l * l * pp + k * k * r;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("log-likelihood"));
    }
    Ok(total)
}

/// Total objective: the log-likelihood, or [`FAILED_OBJECTIVE`] when the
/// filter fails.
pub fn objective_or_sentinel(model: &DiscreteModel, z: &[f64], init: &FilterInit) -> f64 {
    log_likelihood_value(model, z, init).unwrap_or(FAILED_OBJECTIVE)
}

/// Smoothed moments for `n = 0..=N` (index 0 is the prior state `x₀`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmootherOutput {
    /// `x̂ₙ|N`, `n = 0..=N`
    pub means: Vec<Vec<f64>>,
    /// `Pₙ|N`, `n = 0..=N`
    pub covs: Vec<Matrix>,
    /// `Pₙ,ₙ₋₁|N` stored at index `n − 1`, `n = 1..=N`
    pub lag_one: Vec<Matrix>,
    /// `Jₙ`, `n = 0..N−1`
    pub gains: Vec<Matrix>,
}

/// Backward RTS pass with lag-one covariances.
pub fn rts_smooth(model: &DiscreteModel, filter: &FilterOutput) -> Result<SmootherOutput> {
    let n = filter.len();
    let d = model.dim();
    let a = &model.transition;

    // filtered moments indexed 0..=N with the prior at 0
    let mut f_means = Vec::with_capacity(n + 1);
    let mut f_covs = Vec::with_capacity(n + 1);
    f_means.push(filter.init.mean.clone());
    f_covs.push(filter.init.cov.clone());
    f_means.extend(filter.filt_means.iter().cloned());
    f_covs.extend(filter.filt_covs.iter().cloned());

    let mut means = f_means.clone();
    let mut covs = f_covs.clone();
    let mut gains = vec![Matrix::zeros(d, d); n];

    for k in (0..n).rev() {
        // J_k = P_{k|k} Aᵀ P_{k+1|k}⁻¹
        let pred_cov = &filter.pred_covs[k];
        let (chol, _) = CholeskyFactor::with_jitter(pred_cov)?;
        let j = chol.solve_mat(&(a * &f_covs[k])).transpose();
        let pred_mean = &filter.pred_means[k];
        let diff: Vec<f64> = means[k + 1].iter().zip(pred_mean).map(|(s, p)| s - p).collect();
        let corr = j.mul_vec(&diff);
        means[k] = f_means[k].iter().zip(&corr).map(|(m, c)| m + c).collect();
        covs[k] = (&f_covs[k] + &j.sandwich(&(&covs[k + 1] - pred_cov))).symmetrize();
        gains[k] = j;
    }

    let mut lag_one = vec![Matrix::zeros(d, d); n];
    if n > 0 {
        // P_{N,N−1|N} = (I − K_N H) A P_{N−1|N−1}
        let k_last = &filter.gains[n - 1];
        let mut ikh = Matrix::identity(d);
        for i in 0..d {
            for c in 0..d {
                ikh[(i, c)] -= k_last[i] * model.observation[c];
            }
        }
        lag_one[n - 1] = &(&ikh * a) * &f_covs[n - 1];
        // P_{m−1,m−2|N} = P_{m−1|m−1} J_{m−2}ᵀ + J_{m−1} (P_{m,m−1|N} − A P_{m−1|m−1}) J_{m−2}ᵀ
        for m in (2..=n).rev() {
            let jt_prev = gains[m - 2].transpose();
            let inner = &lag_one[m - 1] - &(a * &f_covs[m - 1]);
            let term = &(&gains[m - 1] * &inner) * &jt_prev;
            lag_one[m - 2] = &(&f_covs[m - 1] * &jt_prev) + &term;
        }
    }
    Ok(SmootherOutput { means, covs, lag_one, gains })
}
