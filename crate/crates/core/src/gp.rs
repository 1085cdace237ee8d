//! Gaussian-process regression with stationary kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{nelder_mead, CholeskyFactor, Matrix, NelderMeadOptions};

/// Noise variance floor in standardized output units.
pub const NOISE_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Matern15,
    Matern25,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::Rbf, KernelKind::Matern15, KernelKind::Matern25];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Matern15 => "matern15",
            KernelKind::Matern25 => "matern25",
        }
    }

    /// Unit-variance correlation at distance `r` with length-scale `l`.
    pub fn correlation(self, r: f64, l: f64) -> f64 {
        match self {
            KernelKind::Rbf => (-0.5 * (r / l).powi(2)).exp(),
            KernelKind::Matern15 => {
                let s = 3f64.sqrt() * r / l;
                (1.0 + s) * (-s).exp()
            }
            KernelKind::Matern25 => {
                let s = 5f64.sqrt() * r / l;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub sigma_k2: f64,
    pub sigma_l: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind, sigma_k2: f64, sigma_l: f64) -> Result<Self> {
        if !(sigma_k2 > 0.0 && sigma_l > 0.0) || !sigma_k2.is_finite() || !sigma_l.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel hyperparameters must be positive, got σk²={sigma_k2}, σl={sigma_l}"
            )));
        }
        Ok(Self { kind, sigma_k2, sigma_l })
    }

    pub fn eval_distance(&self, r: f64) -> f64 {
        self.sigma_k2 * self.kind.correlation(r, self.sigma_l)
    }
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `κ(x, x′)` with `r = ‖x − x′‖`.
pub fn kernel_eval(k: &Kernel, x: &[f64], y: &[f64]) -> f64 {
    k.eval_distance(distance(x, y))
}

/// Fitted posterior. Outputs are standardized internally; predictions are
/// returned in the original units.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    kind: KernelKind,
    hyper: GpHyper,
    /// Training inputs divided by the length scales.
    scaled: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    chol: CholeskyFactor,
    alpha: Vec<f64>,
    lml: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpFitOptions {
    /// Quasi-random seeds scored in log-hyperparameter space.
    pub seeds: usize,
    /// Best seeds refined by Nelder–Mead.
    pub refine: usize,
    /// Objective evaluations allowed per refinement.
    pub refine_evals: usize,
    /// One length scale per input dimension instead of a shared one.
    pub ard: bool,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        Self { seeds: 16, refine: 4, refine_evals: 120, ard: false }
    }
}

/// Standardized hyperparameters. A single length scale is shared by all
/// input dimensions; otherwise there is one per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub sigma_k2: f64,
    pub length_scales: Vec<f64>,
    pub sigma_e2: f64,
}

impl GpHyper {
    pub fn isotropic(sigma_k2: f64, sigma_l: f64, sigma_e2: f64) -> Self {
        Self { sigma_k2, length_scales: vec![sigma_l], sigma_e2 }
    }
}

fn standardize(y: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-12 * mean.abs().max(1.0) { var.sqrt() } else { 1.0 };
    let ys = y.iter().map(|v| (v - mean) / scale).collect();
    (mean, scale, ys)
}

fn check_design(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} inputs for {} outputs", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|p| p.len() != d) {
        return Err(Error::DimensionMismatch("inputs must share one positive dimension".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gp training data"));
    }
    Ok(d)
}

fn scale_inputs(x: &[Vec<f64>], ls: &[f64]) -> Vec<Vec<f64>> {
    x.iter().map(|p| scale_point(p, ls)).collect()
}

fn scale_point(p: &[f64], ls: &[f64]) -> Vec<f64> {
    p.iter().enumerate().map(|(j, v)| v / ls[if ls.len() == 1 { 0 } else { j }]).collect()
}

/// Per-dimension squared differences, `diffs[j][i·n + k]`.
fn squared_diffs(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let mut out = vec![vec![0.0; n * n]; d];
    for (j, m) in out.iter_mut().enumerate() {
        for i in 0..n {
            for k in 0..i {
                let v = (x[i][j] - x[k][j]).powi(2);
                m[i * n + k] = v;
                m[k * n + i] = v;
            }
        }
    }
    out
}

fn gram_from_diffs(kind: KernelKind, sigma_k2: f64, ls: &[f64], diffs: &[Vec<f64>], n: usize, noise: f64) -> Matrix {
    let inv: Vec<f64> = (0..diffs.len()).map(|j| 1.0 / ls[if ls.len() == 1 { 0 } else { j }].powi(2)).collect();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for c in 0..i {
            let r2: f64 = diffs.iter().zip(&inv).map(|(m, w)| m[i * n + c] * w).sum();
            let v = sigma_k2 * kind.correlation(r2.sqrt(), 1.0);
            k[(i, c)] = v;
            k[(c, i)] = v;
        }
        k[(i, i)] = sigma_k2 + noise;
    }
    k
}

/// `−½yᵀ(K+σe²I)⁻¹y − ½log|K+σe²I| − (i/2)log 2π` together with the factor
/// and the solve `(K+σe²I)⁻¹y`.
fn lml_from_gram(gram: &Matrix, ys: &[f64]) -> Result<(f64, CholeskyFactor, Vec<f64>)> {
    let n = ys.len();
    let (chol, _) = CholeskyFactor::with_jitter(gram)?;
    let alpha = chol.solve_vec(ys);
    let quad: f64 = ys.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let lml = -0.5 * quad - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok((lml, chol, alpha))
}

/// Log marginal likelihood of standardized outputs `y` at fixed
/// hyperparameters.
pub fn log_marginal_likelihood(x: &[Vec<f64>], y: &[f64], kernel: &Kernel, noise_var: f64) -> Result<f64> {
    check_design(x, y)?;
    let g = gram_from_diffs(kernel.kind, kernel.sigma_k2, &[kernel.sigma_l], &squared_diffs(x), x.len(), noise_var);
    Ok(lml_from_gram(&g, y)?.0)
}

/// Radical-inverse Halton coordinate.
pub(crate) fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

pub(crate) const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

impl GpPosterior {
    /// Posterior at fixed standardized hyperparameters.
    pub fn with_hyper(x: &[Vec<f64>], y: &[f64], kind: KernelKind, hyper: GpHyper) -> Result<Self> {
        let d = check_design(x, y)?;
        if hyper.length_scales.len() != 1 && hyper.length_scales.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} length scales for {d}-dimensional inputs",
                hyper.length_scales.len()
            )));
        }
        for l in &hyper.length_scales {
            Kernel::new(kind, hyper.sigma_k2, *l)?;
        }
        let (y_mean, y_scale, ys) = standardize(y);
        let hyper = GpHyper { sigma_e2: hyper.sigma_e2.max(NOISE_FLOOR), ..hyper };
        let g = gram_from_diffs(kind, hyper.sigma_k2, &hyper.length_scales, &squared_diffs(x), x.len(), hyper.sigma_e2);
        let (lml, chol, alpha) = lml_from_gram(&g, &ys)?;
        Ok(Self { kind, scaled: scale_inputs(x, &hyper.length_scales), hyper, y_mean, y_scale, chol, alpha, lml })
    }

    /// Fits hyperparameters by maximizing the log marginal likelihood.
    /// `warm` adds an extra starting point, typically the previous fit.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[f64],
        kind: KernelKind,
        opts: &GpFitOptions,
        warm: Option<&GpHyper>,
    ) -> Result<Self> {
        let d = check_design(x, y)?;
        let distinct = {
            let mut uniq: Vec<&Vec<f64>> = Vec::new();
            for p in x {
                if !uniq.iter().any(|q| distance(p, q) <= 1e-12) {
                    uniq.push(p);
                }
            }
            uniq.len()
        };
        if distinct < 2 {
            return Err(Error::DegenerateDesign);
        }
        let (_, _, ys) = standardize(y);
        let diffs = squared_diffs(x);
        let n = x.len();

        let spans: Vec<f64> = (0..d)
            .map(|j| {
                let lo = x.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
                let hi = x.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .collect();
        let ls_spans: Vec<f64> = if opts.ard {
            // a dimension with no spread still needs a usable range
            let top = spans.iter().copied().fold(0.0, f64::max);
            spans.iter().map(|s| if *s > 0.0 { *s } else { top }).collect()
        } else {
            vec![spans.iter().map(|s| s * s).sum::<f64>().sqrt()]
        };
        let nl = ls_spans.len();
        let mut lower = vec![0.05f64.ln()];
        let mut upper = vec![20f64.ln()];
        for s in &ls_spans {
            lower.push((1e-2 * s).ln());
            upper.push((10.0 * s).ln());
        }
        lower.push(NOISE_FLOOR.ln());
        upper.push(0.0);
        let dim = nl + 2;

        let objective = |p: &[f64]| -> f64 {
            let ls: Vec<f64> = p[1..=nl].iter().map(|v| v.exp()).collect();
            let g = gram_from_diffs(kind, p[0].exp(), &ls, &diffs, n, p[nl + 1].exp());
            match lml_from_gram(&g, &ys) {
                Ok((lml, _, _)) => -lml,
                Err(_) => f64::INFINITY,
            }
        };

        let mut seeds: Vec<Vec<f64>> = (1..=opts.seeds as u64)
            .map(|i| (0..dim).map(|k| lower[k] + halton(i, PRIMES[k % PRIMES.len()]) * (upper[k] - lower[k])).collect())
            .collect();
        if let Some(w) = warm.filter(|w| w.length_scales.len() == nl) {
            let mut p = vec![w.sigma_k2.ln()];
            p.extend(w.length_scales.iter().map(|l| l.ln()));
            p.push(w.sigma_e2.max(NOISE_FLOOR).ln());
            seeds.push((0..dim).map(|k| p[k].clamp(lower[k], upper[k])).collect());
        }
        let mut scored: Vec<(f64, Vec<f64>)> = seeds.into_iter().map(|s| (objective(&s), s)).collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut best = scored[0].clone();
        let nm = NelderMeadOptions {
            max_iter: opts.refine_evals,
            max_evals: opts.refine_evals,
            f_tol: 1e-7,
            x_tol: 1e-4,
            initial_step: vec![0.5; dim],
        };
        for (_, start) in scored.iter().take(opts.refine) {
            let r = nelder_mead(objective, start, Some((&lower, &upper)), &nm);
            if r.f < best.0 {
                best = (r.f, r.x);
            }
        }
        if !best.0.is_finite() {
            return Err(Error::NotPositiveDefinite { row: 0, pivot: f64::NAN });
        }
        let p = &best.1;
        let hyper = GpHyper {
            sigma_k2: p[0].exp(),
            length_scales: p[1..=nl].iter().map(|v| v.exp()).collect(),
            sigma_e2: p[nl + 1].exp(),
        };
        Self::with_hyper(x, y, kind, hyper)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    /// Log marginal likelihood of the standardized outputs.
    pub fn lml(&self) -> f64 {
        self.lml
    }

    pub fn len(&self) -> usize {
        self.scaled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaled.is_empty()
    }

    /// Output mean and scale used for standardization.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    /// Observation noise variance in original units.
    pub fn noise_var(&self) -> f64 {
        self.hyper.sigma_e2 * self.y_scale * self.y_scale
    }

    /// Latent mean and variance at `x` in original units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_standardized(x);
        (self.y_mean + self.y_scale * m, v * self.y_scale * self.y_scale)
    }

    fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        let unit = Kernel { kind: self.kind, sigma_k2: self.hyper.sigma_k2, sigma_l: 1.0 };
        let q = scale_point(x, &self.hyper.length_scales);
        let k: Vec<f64> = self.scaled.iter().map(|p| kernel_eval(&unit, &q, p)).collect();
        let mean: f64 = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = self.chol.forward(&k);
        let var = self.hyper.sigma_k2 - v.iter().map(|t| t * t).sum::<f64>();
        (mean, var.clamp(0.0, self.hyper.sigma_k2))
    }
}
