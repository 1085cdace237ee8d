//! Derivative-free local minimization.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    pub max_evals: usize,
    /// Stop once the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop once every vertex lies within this distance of the best one.
    pub x_tol: f64,
    /// Initial edge length per coordinate.
    pub initial_step: Vec<f64>,
}

impl NelderMeadOptions {
    pub fn new(dim: usize, step: f64) -> Self {
        Self { max_iter: 400, max_evals: usize::MAX, f_tol: 1e-8, x_tol: 1e-8, initial_step: vec![step; dim] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex search. Non-finite objective values are treated as
/// `+∞`. With `bounds` the search runs in coordinates `u` with
/// `x = lo + (hi − lo)(sin u + 1)/2`, so every evaluated and returned point
/// lies in the box and bound-touching minima stay reachable.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    bounds: Option<(&[f64], &[f64])>,
    opts: &NelderMeadOptions,
) -> MinimizeResult
where
    F: FnMut(&[f64]) -> f64,
{
    let Some((lo, hi)) = bounds else {
        return simplex_search(f, x0, opts);
    };
    let to_x = |u: &[f64]| -> Vec<f64> {
        u.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| (l + (h - l) * (v.sin() + 1.0) / 2.0).clamp(*l, *h)).collect()
    };
    let u0: Vec<f64> = x0
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| (2.0 * (v.clamp(*l, *h) - l) / (h - l) - 1.0).clamp(-1.0, 1.0).asin())
        .collect();
    let mut u_opts = opts.clone();
    u_opts.initial_step = (0..x0.len())
        .map(|i| {
            let step = opts.initial_step.get(i).copied().unwrap_or(0.1);
            (2.0 * step / (hi[i] - lo[i])).min(std::f64::consts::FRAC_PI_2)
        })
        .collect();
    let mut r = simplex_search(|u| f(&to_x(u)), &u0, &u_opts);
    r.x = to_x(&r.x);
    r
}

fn simplex_search<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> MinimizeResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let start = x0.to_vec();
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        v[i] += opts.initial_step.get(i).copied().unwrap_or(0.1);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter && evals < opts.max_evals {
        // order by value, lowest index first on ties
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread <= opts.f_tol) || size <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect() };

        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let p = along(-0.5);
            let v = eval(&p, &mut evals);
            (p, v)
        } else {
            let p = along(0.5);
            let v = eval(&p, &mut evals);
            (p, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let p: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
            values[i] = eval(&p, &mut evals);
            simplex[i] = p;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))).unwrap_or(0);
    MinimizeResult { x: simplex[best].clone(), f: values[best], iterations, evaluations: evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let mut opts = NelderMeadOptions::new(2, 0.5);
        opts.max_iter = 5000;
        opts.f_tol = 1e-16;
        opts.x_tol = 1e-10;
        let r = nelder_mead(f, &[-1.2, 1.0], None, &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r);
    }

    #[test]
    fn bounded_minimum_on_the_boundary() {
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 0.5).powi(2);
        let lo = [0.0, 0.0];
        let hi = [1.0, 1.0];
        let mut seen_outside = false;
        let r = nelder_mead(
            |x: &[f64]| {
                seen_outside |= x.iter().any(|v| !(0.0..=1.0).contains(v));
                f(x)
            },
            &[1.0, 1.0],
            Some((&lo, &hi)),
            &NelderMeadOptions::new(2, 0.3),
        );
        assert!(!seen_outside);
        assert!(r.x[0].abs() < 1e-6 && (r.x[1] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn non_finite_values_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let r = nelder_mead(f, &[0.5], None, &NelderMeadOptions::new(1, 1.0));
        assert!((r.x[0] - 2.0).abs() < 1e-4);
    }
}
