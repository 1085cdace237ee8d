//! Ground-truth trajectories and noisy observations.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DiscreteModel;
use crate::numerics::{discrete_lyapunov, psd_factor, Matrix};
use crate::rng::RandomStream;

/// Default record length in hours.
pub const DEFAULT_DURATION_HR: f64 = 10.0;

/// Number of samples covering `duration` at interval `step`.
pub fn steps_for(duration: f64, step: f64) -> usize {
    (duration / step).round() as usize
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `x₀ ~ N(0, P∞)` with `P∞` the stationary covariance.
    #[default]
    Stationary,
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// True states `x₁ … x_N`, one `d`-vector per step.
    pub states: Vec<Vec<f64>>,
    /// Observations `z₁ … z_N`.
    pub observations: Vec<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// Draws `x₀` by `policy`, then `xₙ = A xₙ₋₁ + vₙ`, `zₙ = H xₙ + wₙ` for
/// `n = 1..=N`. Variates are consumed in a fixed order: `x₀` (d draws),
/// then per step `vₙ` (d draws) followed by `wₙ` (one draw).
pub fn simulate(model: &DiscreteModel, n: usize, seed: u64, policy: &InitialState) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::InvalidArgument("trajectory needs at least one step".into()));
    }
    let d = model.dim();
    let mut rng = RandomStream::new(seed);

    let mut x = match policy {
        InitialState::Stationary => {
            let p0 = discrete_lyapunov(&model.transition, &model.process_cov).map_err(|e| match e {
                Error::Unstable(rho) => Error::InvalidArgument(format!(
                    "transition is not stable (spectral radius {rho}); use a fixed initial state"
                )),
                other => other,
            })?;
            sample(&psd_factor(&p0)?, &mut rng)
        }
        InitialState::Fixed(x0) => {
            if x0.len() != d {
                return Err(Error::DimensionMismatch(format!("initial state has {} entries, model has {d}", x0.len())));
            }
            x0.clone()
        }
    };

    let q_factor = psd_factor(&model.process_cov)?;
    let r_sd = model.measurement_var.max(0.0).sqrt();
    let mut states = Vec::with_capacity(n);
    let mut observations = Vec::with_capacity(n);
    for _ in 0..n {
        let noise = sample(&q_factor, &mut rng);
        x = model.transition.mul_vec(&x).iter().zip(&noise).map(|(a, b)| a + b).collect();
        let hx: f64 = model.observation.iter().zip(&x).map(|(h, v)| h * v).sum();
        observations.push(hx + r_sd * rng.gaussian());
        states.push(x.clone());
    }
    if observations.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("simulated trajectory"));
    }
    Ok(Trajectory { states, observations, seed })
}

fn sample(factor: &Matrix, rng: &mut RandomStream) -> Vec<f64> {
    let g: Vec<f64> = (0..factor.cols()).map(|_| rng.gaussian()).collect();
    factor.mul_vec(&g)
}

/// Writes `n,x1[,x2],z` rows with 17 significant digits.
pub fn write_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = traj.dim();
    let mut header = vec!["n".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.push("z".into());
    w.write_record(&header)?;
    for (i, (x, z)) in traj.states.iter().zip(&traj.observations).enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(x.iter().map(|v| format!("{v:.16e}")));
        row.push(format!("{z:.16e}"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the format produced by [`write_csv`]. The seed is not stored in
/// the file and comes back as 0.
pub fn read_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let d = cols.len().saturating_sub(2);
    let well_formed =
        cols.len() >= 3 && cols[0] == "n" && cols[cols.len() - 1] == "z" && (1..=d).all(|i| cols[i] == format!("x{i}"));
    if !well_formed {
        return Err(Error::InvalidArgument(format!("unexpected trajectory header {cols:?}")));
    }
    let mut states = Vec::new();
    let mut observations = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse =
            |s: &str| s.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number `{s}`: {e}")));
        states.push((1..=d).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?);
        observations.push(parse(&rec[d + 1])?);
    }
    if observations.is_empty() {
        return Err(Error::InvalidArgument("trajectory file has no rows".into()));
    }
    Ok(Trajectory { states, observations, seed: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou(q: f64, r: f64) -> DiscreteModel {
        DiscreteModel::scalar(0.980_198_673_306_755_3, q, r, 0.01).unwrap()
    }

    #[test]
    fn noiseless_zero_dynamics() {
        let t = simulate(&ou(0.0, 0.0), 50, 1, &InitialState::Fixed(vec![0.0])).unwrap();
        assert!(t.states.iter().all(|x| x[0] == 0.0));
        assert!(t.observations.iter().all(|z| *z == 0.0));
    }

    #[test]
    fn zero_measurement_noise_observes_first_component() {
        let m = DiscreteModel::new(
            Matrix::from_rows(&[[0.99, 0.01], [-0.03, 0.95]]),
            Matrix::from_rows(&[[1e-6, 1e-5], [1e-5, 2e-4]]),
            0.0,
            0.01,
        )
        .unwrap();
        let t = simulate(&m, 200, 5, &InitialState::Stationary).unwrap();
        for (x, z) in t.states.iter().zip(&t.observations) {
            assert_eq!(x[0], *z);
        }
    }

    #[test]
    fn reproducible() {
        let a = simulate(&ou(4e-2, 0.1), 100, 42, &InitialState::Stationary).unwrap();
        let b = simulate(&ou(4e-2, 0.1), 100, 42, &InitialState::Stationary).unwrap();
        let c = simulate(&ou(4e-2, 0.1), 100, 43, &InitialState::Stationary).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn unstable_stationary_policy_errors() {
        let m = DiscreteModel::scalar(1.0, 1.0, 1.0, 1.0).unwrap();
        let err = simulate(&m, 10, 0, &InitialState::Stationary).unwrap_err();
        assert!(err.to_string().contains("fixed initial state"));
        assert!(simulate(&m, 10, 0, &InitialState::Fixed(vec![0.0])).is_ok());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = simulate(&ou(4e-2, 0.1), 20, 9, &InitialState::Stationary).unwrap();
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,x1,z\n1,"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.observations, t.observations);
        assert_eq!(back.states, t.states);
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
