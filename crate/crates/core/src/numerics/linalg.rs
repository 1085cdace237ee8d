use crate::error::{Error, Result};

use super::Matrix;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: Matrix,
}

const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

impl CholeskyFactor {
    pub fn new(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare { rows: m.rows(), cols: m.cols() });
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("cholesky input"));
        }
        let n = m.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { row: j, pivot: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    /// Factorizes `M`, retrying with `M + εI` for ε escalating from 1e-10 to
    /// 1e-6 (relative to the mean diagonal) when `M` is numerically
    /// indefinite. Returns the factor and the jitter that was added.
    pub fn with_jitter(m: &Matrix) -> Result<(Self, f64)> {
        match Self::new(m) {
            Ok(c) => Ok((c, 0.0)),
            Err(first @ Error::NotPositiveDefinite { .. }) => {
                let n = m.rows() as f64;
                let mean_diag = m.trace().abs() / n;
                let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
                for eps in JITTER_LADDER {
                    let jitter = eps * scale;
                    if let Ok(c) = Self::new(&m.add_diagonal(jitter)) {
                        return Ok((c, jitter));
                    }
                }
                Err(first)
            }
            Err(e) => Err(e),
        }
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// `L⁻¹ b`
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let mut s = y[i];
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s / row[i];
        }
        y
    }

    /// `L⁻ᵀ y`
    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// `M⁻¹ b`
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    /// `M⁻¹ B`, column by column.
    pub fn solve_mat(&self, b: &Matrix) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n, b.cols());
        for j in 0..b.cols() {
            let col: Vec<f64> = (0..n).map(|i| b[(i, j)]).collect();
            for (i, v) in self.solve_vec(&col).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix {
        self.solve_mat(&Matrix::identity(self.dim()))
    }

    /// `log |M|`
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn reconstruct(&self) -> Matrix {
        &self.l * &self.l.transpose()
    }
}

/// General inverse by Gauss-Jordan elimination with partial pivoting.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    let n = m.rows();
    if n == 1 {
        let v = m[(0, 0)];
        if v == 0.0 || !v.is_finite() {
            return Err(Error::Singular);
        }
        return Ok(Matrix::scalar(1.0 / v));
    }
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    let scale = m.max_abs();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs())).unwrap_or(col);
        if !(a[(pivot, col)].abs() > 1e-300_f64.max(scale * 1e-15)) {
            return Err(Error::Singular);
        }
        if pivot != col {
            for j in 0..n {
                let (x, y) = (a[(col, j)], a[(pivot, j)]);
                a[(col, j)] = y;
                a[(pivot, j)] = x;
                let (x, y) = (inv[(col, j)], inv[(pivot, j)]);
                inv[(col, j)] = y;
                inv[(pivot, j)] = x;
            }
        }
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(i, j)] -= f * a[(col, j)];
                inv[(i, j)] -= f * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !m.is_square() {
        return Err(Error::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    let n = m.rows();
    let mut a = m.symmetrize();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off <= 1e-30 * (1.0 + a.max_abs().powi(2)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok((a.diag(), v))
}

/// Symmetric square-root factor `S` with `S Sᵀ = M` for a positive
/// semidefinite `M`. Negative eigenvalues (round-off) are clamped to zero,
/// so singular covariances such as `Q = 0` are accepted.
pub fn psd_factor(m: &Matrix) -> Result<Matrix> {
    if m.rows() == 1 && m.cols() == 1 {
        return Ok(Matrix::scalar(m[(0, 0)].max(0.0).sqrt()));
    }
    let (vals, vecs) = symmetric_eigen(m)?;
    let n = vals.len();
    let mut s = Matrix::zeros(n, n);
    for j in 0..n {
        let r = vals[j].max(0.0).sqrt();
        for i in 0..n {
            s[(i, j)] = vecs[(i, j)] * r;
        }
    }
    Ok(s)
}

/// Symmetrizes and floors the eigenvalues of `m` at `floor`.
pub fn floor_eigenvalues(m: &Matrix, floor: f64) -> Result<Matrix> {
    let (vals, vecs) = symmetric_eigen(m)?;
    if vals.iter().all(|&v| v >= floor) {
        return Ok(m.symmetrize());
    }
    let clamped: Vec<f64> = vals.iter().map(|v| v.max(floor)).collect();
    Ok(vecs.sandwich(&Matrix::diagonal(&clamped)).symmetrize())
}

/// `τ = tr/2` and `τ² − det` for a 2x2 matrix; the eigenvalues are
/// `τ ± sqrt(τ² − det)`.
fn trace_discriminant(m: &Matrix) -> (f64, f64) {
    let tau = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    (tau, tau * tau - det)
}

/// Largest eigenvalue modulus. Exact for d ≤ 2, Gelfand estimate otherwise.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    match m.rows() {
        1 => Ok(m[(0, 0)].abs()),
        2 => {
            let (tau, disc) = trace_discriminant(m);
            if disc >= 0.0 {
                let r = disc.sqrt();
                Ok((tau + r).abs().max((tau - r).abs()))
            } else {
                // complex pair: |λ|² = det
                Ok((tau * tau - disc).sqrt())
            }
        }
        _ => {
            // ‖A^k‖^(1/k) with k = 2^20, renormalizing each squaring
            let mut p = m.clone();
            let mut log_norm = 0.0;
            let mut power = 1.0_f64;
            for _ in 0..20 {
                let n = p.norm_inf();
                if n == 0.0 {
                    return Ok(0.0);
                }
                let unit = p.scale(1.0 / n);
                log_norm = 2.0 * (log_norm + n.ln());
                power *= 2.0;
                p = &unit * &unit;
            }
            Ok(((log_norm + p.norm_inf().ln()) / power).exp())
        }
    }
}

/// `e^{F t}`.
///
/// 1x1 and 2x2 inputs use the closed form
/// `e^{M} = e^{τ} (c(δ²) I + s(δ²) (M − τI))` with `τ = tr M / 2` and
/// `δ² = τ² − det M`, which covers distinct, complex and repeated
/// eigenvalues without a separate defective branch. Larger matrices use
/// scaling and squaring of a Taylor series.
pub fn mat_exp(f: &Matrix, t: f64) -> Result<Matrix> {
    if !f.is_square() {
        return Err(Error::NotSquare { rows: f.rows(), cols: f.cols() });
    }
    if !f.is_finite() || !t.is_finite() {
        return Err(Error::NonFinite("matrix exponential input"));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("negative duration {t}")));
    }
    let m = f.scale(t);
    match m.rows() {
        1 => Ok(Matrix::scalar(m[(0, 0)].exp())),
        2 => {
            let (tau, disc) = trace_discriminant(&m);
            let (c, s) = cosh_sinhc(disc);
            let shifted = m.add_diagonal(-tau);
            let e = tau.exp();
            let mut out = shifted.scale(s * e);
            for i in 0..2 {
                out[(i, i)] += c * e;
            }
            Ok(out)
        }
        n => {
            let norm = m.norm_inf();
            let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
            let scaled = m.scale(0.5_f64.powi(squarings));
            let mut sum = Matrix::identity(n);
            let mut term = Matrix::identity(n);
            for k in 1..60 {
                term = (&term * &scaled).scale(1.0 / k as f64);
                sum = &sum + &term;
                if term.max_abs() <= 1e-17 * sum.max_abs() {
                    break;
                }
            }
            for _ in 0..squarings {
                sum = &sum * &sum;
            }
            Ok(sum)
        }
    }
}

/// `(cosh δ, sinh δ / δ)` as functions of `δ²` (analytically continued to
/// `cos`/`sin` for negative arguments).
fn cosh_sinhc(d2: f64) -> (f64, f64) {
    if d2.abs() < 1e-3 {
        let c = 1.0 + d2 / 2.0 * (1.0 + d2 / 12.0 * (1.0 + d2 / 30.0 * (1.0 + d2 / 56.0)));
        let s = 1.0 + d2 / 6.0 * (1.0 + d2 / 20.0 * (1.0 + d2 / 42.0 * (1.0 + d2 / 72.0)));
        (c, s)
    } else if d2 > 0.0 {
        let d = d2.sqrt();
        (d.cosh(), d.sinh() / d)
    } else {
        let w = (-d2).sqrt();
        (w.cos(), w.sin() / w)
    }
}

/// Principal real logarithm of a 2x2 (or 1x1) matrix, the inverse of the
/// closed-form exponential above.
pub fn log_2x2(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    match a.rows() {
        1 => {
            let v = a[(0, 0)];
            if v > 0.0 {
                Ok(Matrix::scalar(v.ln()))
            } else {
                Err(Error::NoRealLogarithm)
            }
        }
        2 => {
            let (tau, disc) = trace_discriminant(a);
            let det = tau * tau - disc;
            if !(det > 0.0) || !(tau > 0.0) {
                return Err(Error::NoRealLogarithm);
            }
            let g = if disc.abs() < 1e-14 * tau * tau {
                1.0 / tau
            } else if disc > 0.0 {
                let d = disc.sqrt();
                if d >= tau {
                    return Err(Error::NoRealLogarithm);
                }
                libm::atanh(d / tau) / d
            } else {
                let w = (-disc).sqrt();
                w.atan2(tau) / w
            };
            let mut out = a.add_diagonal(-tau).scale(g);
            let half_log_det = 0.5 * det.ln();
            for i in 0..2 {
                out[(i, i)] += half_log_det;
            }
            Ok(out)
        }
        n => Err(Error::InvalidArgument(format!("matrix logarithm implemented for d <= 2, got {n}"))),
    }
}

/// Stationary covariance `P = A P Aᵀ + Q`.
///
/// Scalar case uses `Q / (1 − A²)`; otherwise the doubling form of the
/// fixed-point iteration, `P ← P + Aₖ P Aₖᵀ`, `Aₖ ← Aₖ²`.
pub fn discrete_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    if q.rows() != a.rows() || q.cols() != a.cols() {
        return Err(Error::DimensionMismatch("lyapunov: A and Q differ in shape".into()));
    }
    if !a.is_finite() || !q.is_finite() {
        return Err(Error::NonFinite("lyapunov input"));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 - 1e-9 {
        return Err(Error::Unstable(rho));
    }
    if a.rows() == 1 {
        let x = a[(0, 0)];
        return Ok(Matrix::scalar(q[(0, 0)] / (1.0 - x * x)));
    }
    let mut p = q.symmetrize();
    let mut ak = a.clone();
    for _ in 0..200 {
        let inc = ak.sandwich(&p);
        p = (&p + &inc).symmetrize();
        ak = &ak * &ak;
        if inc.max_abs() <= 1e-16 * p.max_abs() || ak.max_abs() == 0.0 {
            break;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_exp(m: &Matrix) -> Matrix {
        let n = m.rows();
        let mut sum = Matrix::identity(n);
        let mut term = Matrix::identity(n);
        for k in 1..80 {
            term = (&term * m).scale(1.0 / k as f64);
            sum = &sum + &term;
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = mat_exp(&Matrix::zeros(2, 2), 3.7).unwrap();
        assert_eq!(e, Matrix::identity(2));
    }

    #[test]
    fn exp_of_nilpotent_is_affine() {
        let f = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]);
        for t in [0.0, 0.01, 1.0, 5.0] {
            let e = mat_exp(&f, t).unwrap();
            let expect = Matrix::from_rows(&[[1.0, t], [0.0, 1.0]]);
            assert!((&e - &expect).max_abs() < 1e-15, "t={t}: {e:?}");
        }
    }

    #[test]
    fn scalar_exp_matches_series() {
        let e = mat_exp(&Matrix::scalar(-2.0), 0.01).unwrap();
        let mut s = 0.0;
        let mut term = 1.0;
        for k in 1..40 {
            s += term;
            term *= -0.02 / k as f64;
        }
        assert!((e[(0, 0)] - s).abs() < 1e-15);
        assert!((e[(0, 0)] - 0.980_199).abs() < 1e-6);
    }

    #[test]
    fn two_by_two_exp_matches_series_for_all_eigen_regimes() {
        let cases = [
            [[0.0, 1.0], [-3.0, -5.0]], // real distinct
            [[0.0, 1.0], [-7.0, -2.0]], // complex
            [[-1.0, 1.0], [0.0, -1.0]], // defective
            [[0.3, -0.2], [0.5, 0.1]],
        ];
        for c in cases {
            let f = Matrix::from_rows(&c);
            for t in [0.01, 0.3, 1.0] {
                let e = mat_exp(&f, t).unwrap();
                let s = series_exp(&f.scale(t));
                assert!((&e - &s).max_abs() < 1e-13, "{c:?} t={t}");
            }
        }
    }

    #[test]
    fn three_by_three_exp_matches_series() {
        let f = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -3.0, -3.0]]);
        let e = mat_exp(&f, 2.0).unwrap();
        let s = series_exp(&f.scale(2.0));
        assert!((&e - &s).max_abs() < 1e-12);
    }

    #[test]
    fn exp_rejects_bad_input() {
        assert!(matches!(mat_exp(&Matrix::zeros(2, 3), 1.0), Err(Error::NotSquare { .. })));
        assert!(matches!(mat_exp(&Matrix::scalar(f64::NAN), 1.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn log_inverts_exp() {
        for c in [[[0.0, 1.0], [-3.0, -5.0]], [[0.0, 1.0], [-7.0, -2.0]], [[-1.0, 1.0], [0.0, -1.0]]] {
            let f = Matrix::from_rows(&c);
            let a = mat_exp(&f, 0.01).unwrap();
            let l = log_2x2(&a).unwrap().scale(100.0);
            assert!((&l - &f).max_abs() < 1e-9, "{c:?} -> {l:?}");
        }
        assert!(log_2x2(&Matrix::from_rows(&[[-1.0, 0.0], [0.0, 2.0]])).is_err());
    }

    #[test]
    fn lyapunov_cases() {
        let p = discrete_lyapunov(&Matrix::scalar(0.0), &Matrix::scalar(1.0)).unwrap();
        assert_eq!(p[(0, 0)], 1.0);
        let p = discrete_lyapunov(&Matrix::scalar(0.98), &Matrix::scalar(4e-4)).unwrap();
        assert!((p[(0, 0)] - 4e-4 / (1.0 - 0.98 * 0.98)).abs() < 1e-15);
        assert!((p[(0, 0)] - 0.010_101).abs() < 1e-6);
        let p = discrete_lyapunov(&Matrix::zeros(2, 2), &Matrix::identity(2)).unwrap();
        assert_eq!(p, Matrix::identity(2));
        assert!(matches!(discrete_lyapunov(&Matrix::scalar(1.0), &Matrix::scalar(1.0)), Err(Error::Unstable(_))));
    }

    #[test]
    fn lyapunov_residual_second_order() {
        let f = Matrix::from_rows(&[[0.0, 1.0], [-3.0, -5.0]]);
        let a = mat_exp(&f, 0.01).unwrap();
        let q = Matrix::from_rows(&[[6.6667e-9, 1e-6], [1e-6, 2e-4]]);
        let p = discrete_lyapunov(&a, &q).unwrap();
        let resid = &(&p - &a.sandwich(&p)) - &q;
        assert!(resid.norm_inf() <= 1e-10 * p.norm_inf().max(1.0));
    }

    #[test]
    fn cholesky_jitter_rescues_semidefinite() {
        let m = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(CholeskyFactor::new(&m).is_err());
        let (c, jitter) = CholeskyFactor::with_jitter(&m).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-6);
        assert!((&c.reconstruct() - &m).max_abs() < 1e-5);
    }

    #[test]
    fn gauss_jordan_inverse() {
        let m = Matrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, 0.0, 0.0], [3.0, 1.0, 1.0]]);
        let inv = inverse(&m).unwrap();
        assert!((&(&m * &inv) - &Matrix::identity(3)).max_abs() < 1e-14);
        assert!(matches!(inverse(&Matrix::zeros(2, 2)), Err(Error::Singular)));
    }

    #[test]
    fn eigen_and_psd_factor() {
        let m = Matrix::from_rows(&[[4.0, 1.0], [1.0, 3.0]]);
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        let rebuilt = vecs.sandwich(&Matrix::diagonal(&vals));
        assert!((&rebuilt - &m).max_abs() < 1e-13);
        let s = psd_factor(&m).unwrap();
        assert!((&(&s * &s.transpose()) - &m).max_abs() < 1e-13);
        let z = psd_factor(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let floored = floor_eigenvalues(&Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]), 1e-12).unwrap();
        assert!((floored[(1, 1)] - 1e-12).abs() < 1e-20);
    }
}
