//! Brute-force oracles shared by the integration tests. They build the full
//! joint Gaussian of states and observations and never call the filter.
#![allow(dead_code)]

use sde_ident::model::DiscreteModel;
use sde_ident::numerics::Matrix;
use sde_ident::rng::RandomStream;

pub type Dense = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            out[i][j] = (0..k).map(|t| a[i][t] * b[t][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting and
/// returns `(X, log|det A|)`.
pub fn solve(a: &Dense, b: &Dense) -> (Dense, f64) {
    let n = a.len();
    let m = b[0].len();
    let mut aa = a.clone();
    let mut bb = b.clone();
    let mut logdet = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| aa[i][col].abs().total_cmp(&aa[j][col].abs())).unwrap();
        aa.swap(col, piv);
        bb.swap(col, piv);
        let p = aa[col][col];
        logdet += p.abs().ln();
        for r in col + 1..n {
            let f = aa[r][col] / p;
            for c in col..n {
                aa[r][c] -= f * aa[col][c];
            }
            for c in 0..m {
                bb[r][c] -= f * bb[col][c];
            }
        }
    }
    let mut x = zeros(n, m);
    for c in 0..m {
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| aa[r][k] * x[k][c]).sum();
            x[r][c] = (bb[r][c] - s) / aa[r][r];
        }
    }
    (x, logdet)
}

pub fn to_dense(m: &Matrix) -> Dense {
    m.to_rows()
}

/// Joint moments of `X = (x₀, …, x_N)` (stacked, length `d(N+1)`) and
/// `Z = (z₁, …, z_N)`.
pub struct Joint {
    pub d: usize,
    pub mean_x: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub cov_xx: Dense,
    pub cov_xz: Dense,
    pub cov_zz: Dense,
}

pub fn joint(model: &DiscreteModel, m0: &[f64], p0: &Matrix, n: usize) -> Joint {
    let d = model.dim();
    let a = to_dense(&model.transition);
    let q = to_dense(&model.process_cov);
    let h: Dense = vec![model.observation.clone()];
    // marginal means and covariances, and cross covariances C[i][j] = Cov(x_i, x_j)
    let mut means = vec![m0.to_vec()];
    let mut cov_blocks: Vec<Vec<Dense>> = vec![vec![zeros(d, d); n + 1]; n + 1];
    cov_blocks[0][0] = to_dense(p0);
    for t in 1..=n {
        let prev = &means[t - 1];
        means.push((0..d).map(|i| (0..d).map(|k| a[i][k] * prev[k]).sum()).collect());
        let apa = matmul(&matmul(&a, &cov_blocks[t - 1][t - 1]), &transpose(&a));
        cov_blocks[t][t] = (0..d).map(|i| (0..d).map(|j| apa[i][j] + q[i][j]).collect()).collect();
        for s in 0..t {
            // Cov(x_t, x_s) = A Cov(x_{t-1}, x_s)
            cov_blocks[t][s] = matmul(&a, &cov_blocks[t - 1][s]);
            cov_blocks[s][t] = transpose(&cov_blocks[t][s]);
        }
    }
    let dim = d * (n + 1);
    let mut cov_xx = zeros(dim, dim);
    for i in 0..=n {
        for j in 0..=n {
            for r in 0..d {
                for c in 0..d {
                    cov_xx[i * d + r][j * d + c] = cov_blocks[i][j][r][c];
                }
            }
        }
    }
    let mut cov_xz = zeros(dim, n);
    let mut cov_zz = zeros(n, n);
    for j in 1..=n {
        for i in 0..=n {
            let ch = matmul(&cov_blocks[i][j], &transpose(&h));
            for r in 0..d {
                cov_xz[i * d + r][j - 1] = ch[r][0];
            }
        }
        for i in 1..=n {
            let v = matmul(&matmul(&h, &cov_blocks[i][j]), &transpose(&h))[0][0];
            cov_zz[i - 1][j - 1] = v + if i == j { model.measurement_var } else { 0.0 };
        }
    }
    let mean_x = means.iter().flatten().copied().collect();
    let mean_z = means[1..].iter().map(|m| m.iter().zip(&h[0]).map(|(x, y)| x * y).sum()).collect();
    Joint { d, mean_x, mean_z, cov_xx, cov_xz, cov_zz }
}

/// `log N(z; μ_z, Σ_zz)`.
pub fn dense_loglik(j: &Joint, z: &[f64]) -> f64 {
    let n = z.len();
    if n == 0 {
        return 0.0;
    }
    let resid: Dense = z.iter().zip(&j.mean_z).map(|(a, b)| vec![a - b]).collect();
    let (sol, logdet) = solve(&j.cov_zz, &resid);
    let quad: f64 = resid.iter().zip(&sol).map(|(r, s)| r[0] * s[0]).sum();
    -0.5 * (quad + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Posterior mean and covariance of the stacked states given `z`.
pub fn dense_posterior(j: &Joint, z: &[f64]) -> (Vec<f64>, Dense) {
    let resid: Dense = z.iter().zip(&j.mean_z).map(|(a, b)| vec![a - b]).collect();
    let (gain_t, _) = solve(&j.cov_zz, &transpose(&j.cov_xz));
    let (sol, _) = solve(&j.cov_zz, &resid);
    let mean: Vec<f64> = j
        .mean_x
        .iter()
        .enumerate()
        .map(|(i, m)| m + (0..z.len()).map(|k| j.cov_xz[i][k] * sol[k][0]).sum::<f64>())
        .collect();
    let corr = matmul(&j.cov_xz, &gain_t);
    let cov = (0..j.cov_xx.len()).map(|r| (0..j.cov_xx.len()).map(|c| j.cov_xx[r][c] - corr[r][c]).collect()).collect();
    (mean, cov)
}

/// Random model with spectral radius below 0.95 (d = 2 uses a random
/// rotation-scaled transition).
pub fn random_model(rng: &mut RandomStream, d: usize) -> DiscreteModel {
    let u = |rng: &mut RandomStream, lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
    if d == 1 {
        let a = u(rng, -0.95, 0.95);
        return DiscreteModel::scalar(a, u(rng, 0.05, 2.0), u(rng, 0.05, 2.0), 1.0).unwrap();
    }
    let rho = u(rng, 0.1, 0.95);
    let ang = u(rng, 0.0, std::f64::consts::PI);
    let skew = u(rng, 0.5, 2.0);
    let a = Matrix::from_rows(&[[rho * ang.cos(), -rho * ang.sin() * skew], [rho * ang.sin() / skew, rho * ang.cos()]]);
    let l = Matrix::from_rows(&[[u(rng, 0.2, 1.5), 0.0], [u(rng, -1.0, 1.0), u(rng, 0.2, 1.5)]]);
    let q = &l * &l.transpose();
    DiscreteModel::new(a, q, u(rng, 0.05, 2.0), 1.0).unwrap()
}

pub fn random_prior(rng: &mut RandomStream, d: usize) -> (Vec<f64>, Matrix) {
    let mean: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
    let mut l = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = if i == j { 0.3 + rng.uniform() } else { rng.gaussian() * 0.5 };
        }
    }
    (mean, &l * &l.transpose())
}

/// Largest absolute gap between the filter log-likelihood and the dense
/// oracle for one random instance.
pub fn loglik_gap(seed: u64, d: usize, n: usize) -> f64 {
    use sde_ident::kalman::{log_likelihood, FilterInit};
    let mut rng = RandomStream::new(seed);
    let model = random_model(&mut rng, d);
    let (m0, p0) = random_prior(&mut rng, d);
    let z: Vec<f64> = (0..n).map(|_| 2.0 * rng.gaussian()).collect();
    let (ll, _) = log_likelihood(&model, &z, &FilterInit { mean: m0.clone(), cov: p0.clone() }).unwrap();
    (ll - dense_loglik(&joint(&model, &m0, &p0, n), &z)).abs()
}

/// Largest absolute gap over smoothed means, covariances and lag-one
/// covariances against the dense posterior.
pub fn smoother_gap(seed: u64, d: usize, n: usize) -> f64 {
    use sde_ident::kalman::{log_likelihood, rts_smooth, FilterInit};
    let mut rng = RandomStream::new(seed);
    let model = random_model(&mut rng, d);
    let (m0, p0) = random_prior(&mut rng, d);
    let z: Vec<f64> = (0..n).map(|_| 2.0 * rng.gaussian()).collect();
    let (_, f) = log_likelihood(&model, &z, &FilterInit { mean: m0.clone(), cov: p0.clone() }).unwrap();
    let s = rts_smooth(&model, &f).unwrap();
    let (mean, cov) = dense_posterior(&joint(&model, &m0, &p0, n), &z);
    let mut gap: f64 = 0.0;
    for t in 0..=n {
        for r in 0..d {
            gap = gap.max((s.means[t][r] - mean[t * d + r]).abs());
            for c in 0..d {
                gap = gap.max((s.covs[t][(r, c)] - cov[t * d + r][t * d + c]).abs());
                if t >= 1 {
                    // Cov(x_t, x_{t-1} | z)
                    gap = gap.max((s.lag_one[t - 1][(r, c)] - cov[t * d + r][(t - 1) * d + c]).abs());
                }
            }
        }
    }
    gap
}
