mod common;

use proptest::prelude::*;
use sde_ident::kalman::{log_likelihood, rts_smooth, FilterInit};
use sde_ident::model::DiscreteModel;
use sde_ident::numerics::symmetric_eigen;
use sde_ident::rng::RandomStream;
use sde_ident::simulate::{simulate, InitialState};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loglik_matches_dense_density(seed in any::<u64>(), d in 1usize..=2, n in 0usize..=6) {
        prop_assert!(common::loglik_gap(seed, d, n) < 1e-8);
    }

    #[test]
    fn smoother_matches_dense_posterior(seed in any::<u64>(), d in 1usize..=2, n in 1usize..=6) {
        prop_assert!(common::smoother_gap(seed, d, n) < 1e-8);
    }

    #[test]
    fn smoothed_covariance_below_filtered(seed in any::<u64>(), d in 1usize..=2, n in 1usize..=30) {
        let mut rng = RandomStream::new(seed);
        let model = common::random_model(&mut rng, d);
        let z: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let (_, f) = log_likelihood(&model, &z, &FilterInit::stationary(&model)).unwrap();
        let s = rts_smooth(&model, &f).unwrap();
        for (ps, pf) in s.covs[1..].iter().zip(&f.filt_covs) {
            prop_assert_eq!(ps, &ps.symmetrize());
            let (vals, _) = symmetric_eigen(&(pf - ps)).unwrap();
            prop_assert!(vals.iter().all(|v| *v >= -1e-10));
            let (own, _) = symmetric_eigen(ps).unwrap();
            prop_assert!(own.iter().all(|v| *v >= -1e-10));
        }
    }
}

#[test]
fn three_step_scalar_posterior() {
    assert!(common::smoother_gap(3, 1, 3) < 1e-8);
    assert!(common::loglik_gap(3, 1, 3) < 1e-8);
}

#[test]
fn innovations_are_white_under_truth() {
    let model = DiscreteModel::scalar((-0.02f64).exp(), 4e-2, 0.1, 0.01).unwrap();
    let traj = simulate(&model, 10_000, 17, &InitialState::Stationary).unwrap();
    let (_, f) = log_likelihood(&model, &traj.observations, &FilterInit::stationary(&model)).unwrap();
    let nis: f64 = f.innovations.iter().zip(&f.innovation_vars).map(|(v, s)| v * v / s).sum::<f64>() / f.len() as f64;
    assert!((0.95..=1.05).contains(&nis), "mean NIS {nis}");
}
