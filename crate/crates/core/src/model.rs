//! Continuous-time SDE models and their discrete-time state-space form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mat_exp, Matrix};

/// Noise intensity given either as a continuous-time power spectral density
/// or directly as a discrete-time variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Psd(f64),
    Discrete(f64),
}

/// `x⁽ⁿ⁾ + a_{n−1} x⁽ⁿ⁻¹⁾ + … + a₀ x = ṽ`, observed as `z = x + w̃`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousModel {
    /// `[a₀, a₁, …, a_{n−1}]`
    pub coefficients: Vec<f64>,
    pub process_noise: NoiseSpec,
    pub measurement_noise: NoiseSpec,
    /// Sampling interval `T`.
    pub step: f64,
}

impl ContinuousModel {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.order();
        if n != 1 && n != 2 {
            return Err(Error::UnsupportedOrder(n));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("sampling interval must be positive, got {}", self.step)));
        }
        if self.coefficients.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("model coefficients"));
        }
        for noise in [self.process_noise, self.measurement_noise] {
            let (NoiseSpec::Psd(v) | NoiseSpec::Discrete(v)) = noise;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("noise intensity must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `xₙ = A xₙ₋₁ + vₙ, vₙ ~ N(0, Q)`, `zₙ = H xₙ + wₙ, wₙ ~ N(0, R)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pub transition: Matrix,
    pub process_cov: Matrix,
    /// Observation row `H = [1, 0, …, 0]`.
    pub observation: Vec<f64>,
    pub measurement_var: f64,
    pub step: f64,
}

impl DiscreteModel {
    pub fn new(transition: Matrix, process_cov: Matrix, measurement_var: f64, step: f64) -> Result<Self> {
        let d = transition.rows();
        if !transition.is_square() {
            return Err(Error::NotSquare { rows: d, cols: transition.cols() });
        }
        if process_cov.rows() != d || process_cov.cols() != d {
            return Err(Error::DimensionMismatch("process covariance must match the transition".into()));
        }
        if !transition.is_finite() || !process_cov.is_finite() || !measurement_var.is_finite() {
            return Err(Error::NonFinite("discrete model"));
        }
        if measurement_var < 0.0 {
            return Err(Error::InvalidArgument(format!("negative measurement variance {measurement_var}")));
        }
        let mut observation = vec![0.0; d];
        observation[0] = 1.0;
        Ok(Self { transition, process_cov, observation, measurement_var, step })
    }

    /// Scalar model `x' = a x + v`, `z = x + w`.
    pub fn scalar(a: f64, q: f64, r: f64, step: f64) -> Result<Self> {
        Self::new(Matrix::scalar(a), Matrix::scalar(q), r, step)
    }

    pub fn dim(&self) -> usize {
        self.transition.rows()
    }
}

/// Companion matrix with `[0 1 0 …]` shifts above and `[−a₀ … −a_{n−1}]` as
/// the last row.
pub fn companion(coefficients: &[f64]) -> Matrix {
    let n = coefficients.len();
    let mut f = Matrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        f[(i, i + 1)] = 1.0;
    }
    for (j, a) in coefficients.iter().enumerate() {
        f[(n - 1, j)] = -a;
    }
    f
}

/// First-order process variance `Q̃ (1 − e^{−2aT}) / (2a)`, with the
/// `Q̃ T` limit at `a = 0`.
pub fn ou_process_variance(a: f64, q_psd: f64, step: f64) -> f64 {
    let x = 2.0 * a * step;
    if x.abs() < 1e-12 {
        q_psd * step
    } else {
        q_psd * step * (-(-x).exp_m1() / x)
    }
}

/// Second-order process covariance under the nilpotent approximation
/// `e^{F₀ s} = I + F₀ s`: `Q̃ [[T³/3, T²/2], [T²/2, T]]`.
pub fn nilpotent_process_cov(q_psd: f64, step: f64) -> Matrix {
    let t = step;
    Matrix::from_rows(&[[t * t * t / 3.0, t * t / 2.0], [t * t / 2.0, t]]).scale(q_psd)
}

pub fn discretize(model: &ContinuousModel) -> Result<DiscreteModel> {
    model.validate()?;
    let t = model.step;
    let f = companion(&model.coefficients);
    let transition = mat_exp(&f, t)?;
    let process_cov = match (model.order(), model.process_noise) {
        (_, NoiseSpec::Discrete(q)) if model.order() == 1 => Matrix::scalar(q),
        (1, NoiseSpec::Psd(q)) => Matrix::scalar(ou_process_variance(model.coefficients[0], q, t)),
        (2, NoiseSpec::Psd(q)) => nilpotent_process_cov(q, t),
        (n, NoiseSpec::Discrete(_)) => {
            return Err(Error::InvalidArgument(format!("order-{n} models need the process noise as a PSD")))
        }
        (n, _) => return Err(Error::UnsupportedOrder(n)),
    };
    let measurement_var = match model.measurement_noise {
        NoiseSpec::Psd(r) => r / t,
        NoiseSpec::Discrete(r) => r,
    };
    DiscreteModel::new(transition, process_cov, measurement_var, t)
}

/// Which parameterization an estimate vector uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// `(a, Q, R)`, `Q` and `R` discrete-time.
    FirstOrder,
    /// `(a₀, a₁, Q̃, R)`, `Q̃` a PSD and `R` discrete-time.
    SecondOrder,
}

impl ScenarioKind {
    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            1 => Ok(Self::FirstOrder),
            2 => Ok(Self::SecondOrder),
            n => Err(Error::UnsupportedOrder(n)),
        }
    }

    pub fn order(self) -> usize {
        match self {
            Self::FirstOrder => 1,
            Self::SecondOrder => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Self::FirstOrder => &["a", "Q", "R"],
            Self::SecondOrder => &["a0", "a1", "Qtilde", "R"],
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }
}

/// Named estimate vector in the ordering of [`ScenarioKind::param_names`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub kind: ScenarioKind,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(kind: ScenarioKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != kind.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} takes {} parameters, got {}",
                kind,
                kind.n_params(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { kind, values })
    }

    pub fn names(&self) -> &'static [&'static str] {
        self.kind.param_names()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names().iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

/// Axis-aligned search region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub const DEFAULT_BOX_LOWER: f64 = 1e-4;
pub const DEFAULT_BOX_UPPER: f64 = 10.0;

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch("box bounds differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("box needs finite lower < upper in every dimension".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    /// `[1e-4, 10]` in every dimension.
    pub fn default_for(kind: ScenarioKind) -> Self {
        Self { lower: vec![DEFAULT_BOX_LOWER; kind.n_params()], upper: vec![DEFAULT_BOX_UPPER; kind.n_params()] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Maps an estimate vector to the discrete model it parameterizes.
pub fn params_to_discrete(theta: &ParamVector, step: f64) -> Result<DiscreteModel> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling interval must be positive, got {step}")));
    }
    let v = &theta.values;
    let model = match theta.kind {
        ScenarioKind::FirstOrder => {
            let a = (-v[0] * step).exp();
            DiscreteModel::scalar(a, v[1], v[2], step)?
        }
        ScenarioKind::SecondOrder => {
            let f = companion(&v[0..2]);
            let transition = mat_exp(&f, step)?;
            DiscreteModel::new(transition, nilpotent_process_cov(v[2], step), v[3], step)?
        }
    };
    if !model.transition.is_finite() || !model.process_cov.is_finite() {
        return Err(Error::NonFinite("mapped discrete model"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_order_with_discrete_noise() {
        let m = ContinuousModel {
            coefficients: vec![2.0],
            process_noise: NoiseSpec::Discrete(4e-2),
            measurement_noise: NoiseSpec::Discrete(1e-1),
            step: 0.01,
        };
        let d = discretize(&m).unwrap();
        assert!((d.transition[(0, 0)] - 0.980_198_673_306_755_3).abs() < 1e-15);
        assert_eq!(d.process_cov[(0, 0)], 4e-2);
        assert_eq!(d.measurement_var, 1e-1);
        assert_eq!(d.observation, vec![1.0]);
    }

    #[test]
    fn first_order_psd_matches_quadrature() {
        let m = ContinuousModel {
            coefficients: vec![1.0],
            process_noise: NoiseSpec::Psd(1.0),
            measurement_noise: NoiseSpec::Psd(0.5),
            step: 1.0,
        };
        let d = discretize(&m).unwrap();
        // Simpson on e^{-2(T-τ)} over [0, 1]
        let n = 2000;
        let h = 1.0 / n as f64;
        let f = |tau: f64| (-2.0 * (1.0 - tau)).exp();
        let mut s = f(0.0) + f(1.0);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = s * h / 3.0;
        assert!((d.process_cov[(0, 0)] - quad).abs() < 1e-12);
        assert!((d.process_cov[(0, 0)] - 0.432_332).abs() < 1e-6);
        assert_eq!(d.measurement_var, 0.5);
    }

    #[test]
    fn second_order_closed_form_values() {
        let m = ContinuousModel {
            coefficients: vec![3.0, 5.0],
            process_noise: NoiseSpec::Psd(2e-2),
            measurement_noise: NoiseSpec::Discrete(5e-2),
            step: 1e-2,
        };
        let d = discretize(&m).unwrap();
        let q = &d.process_cov;
        assert!((q[(0, 0)] - 6.666_666_666_666_667e-9).abs() < 1e-22);
        assert!((q[(0, 1)] - 1.0e-6).abs() < 1e-20);
        assert!((q[(1, 0)] - 1.0e-6).abs() < 1e-20);
        assert!((q[(1, 1)] - 2.0e-4).abs() < 1e-18);
        assert_eq!(d.observation, vec![1.0, 0.0]);
    }

    #[test]
    fn small_rate_limit() {
        for (a, t) in [(1e-3, 1e-1), (0.05, 0.01), (2.0, 5e-4)] {
            let q = ou_process_variance(a, 1.0, t);
            assert!(((q - t) / t).abs() <= 2.0 * a * t);
        }
        assert_eq!(ou_process_variance(0.0, 3.0, 0.5), 1.5);
    }

    #[test]
    fn params_to_discrete_paths() {
        let theta = ParamVector::new(ScenarioKind::FirstOrder, vec![0.0, 1.0, 1.0]).unwrap();
        let d = params_to_discrete(&theta, 0.1).unwrap();
        assert_eq!(d.transition[(0, 0)], 1.0);
        assert_eq!(d.process_cov[(0, 0)], 1.0);

        let theta = ParamVector::new(ScenarioKind::FirstOrder, vec![2.0, 4e-2, 0.1]).unwrap();
        let via_params = params_to_discrete(&theta, 0.01).unwrap();
        let via_model = discretize(&ContinuousModel {
            coefficients: vec![2.0],
            process_noise: NoiseSpec::Discrete(4e-2),
            measurement_noise: NoiseSpec::Discrete(0.1),
            step: 0.01,
        })
        .unwrap();
        assert_eq!(via_params, via_model);
    }

    #[test]
    fn rejects_bad_models() {
        let bad_order = ContinuousModel {
            coefficients: vec![1.0, 2.0, 3.0],
            process_noise: NoiseSpec::Psd(1.0),
            measurement_noise: NoiseSpec::Psd(1.0),
            step: 0.1,
        };
        assert!(matches!(discretize(&bad_order), Err(Error::UnsupportedOrder(3))));
        let discrete_second = ContinuousModel {
            coefficients: vec![1.0, 2.0],
            process_noise: NoiseSpec::Discrete(1.0),
            measurement_noise: NoiseSpec::Psd(1.0),
            step: 0.1,
        };
        assert!(discretize(&discrete_second).is_err());
        assert!(ParamVector::new(ScenarioKind::SecondOrder, vec![1.0, 2.0, 3.0]).is_err());
        let huge = ParamVector::new(ScenarioKind::SecondOrder, vec![1e300, 1e300, 1.0, 1.0]).unwrap();
        assert!(params_to_discrete(&huge, 1.0).is_err());
    }
}
