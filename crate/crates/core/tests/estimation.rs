use pclq::estimators::{estimate, estimate_b_second_moment, fit_model, semiparametric_entry, EstimatorKind};
use pclq::linalg::Mat;
use pclq::synth::{gen_pclq, sample_transitions, Covariance, NoiseSpec, PcLqSpec, QMode};
use pclq::Rng;

fn toeplitz(d: usize, r: f64) -> Mat {
    Mat::from_fn(d, d, |i, j| r.powi((i as i32 - j as i32).abs()))
}

#[test]
fn input_matrix_is_consistent() {
    let g = gen_pclq(&PcLqSpec::new(2, 2, 6, 1, 1), QMode::IOneTwo, &mut Rng::new(1)).unwrap();
    let ds = sample_transitions(&g.system, 100_000, &NoiseSpec::default(), &mut Rng::new(2)).unwrap();
    let b_hat = estimate_b_second_moment(&ds);
    assert!((&b_hat - g.system.b()).max_abs() < 0.05);
}

#[test]
fn noiseless_estimators_recover_the_dynamics() {
    let g = gen_pclq(&PcLqSpec::new(2, 2, 6, 1, 3), QMode::IOneTwo, &mut Rng::new(3)).unwrap();
    let ds = sample_transitions(&g.system, 40, &NoiseSpec::isotropic(1.0, 1.0, 0.0), &mut Rng::new(4)).unwrap();
    let ols = estimate(&ds, EstimatorKind::Ols, None).unwrap();
    assert!((&ols.a_hat - g.system.a()).max_abs() < 1e-8);
    assert!((&ols.b_hat - g.system.b()).max_abs() < 1e-8);
    let semi = estimate(&ds, EstimatorKind::Semiparametric, Some(g.system.b())).unwrap();
    assert!((&semi.a_hat - &ols.a_hat).max_abs() < 1e-6);
}

#[test]
fn correlated_design_biases_the_moment_estimator_only() {
    let d = 6;
    let g = gen_pclq(&PcLqSpec::new(2, 2, d, 1, 5), QMode::IOneTwo, &mut Rng::new(5)).unwrap();
    let noise = NoiseSpec {
        covariance: Covariance::GeneralPd(toeplitz(d, 0.6)),
        ..NoiseSpec::default()
    };
    let ds = sample_transitions(&g.system, 20_000, &noise, &mut Rng::new(6)).unwrap();
    let b = g.system.b();
    let semi = estimate(&ds, EstimatorKind::Semiparametric, Some(b)).unwrap();
    assert!((&semi.a_hat - g.system.a()).max_abs() < 0.06);

    // Pretend the design is isotropic: the moment estimate mixes columns.
    let iso = pclq::estimators::Dataset::new(ds.x0().clone(), ds.u0().clone(), ds.x1().clone(), 1.0).unwrap();
    let moment = estimate(&iso, EstimatorKind::SecondMoment, Some(b)).unwrap();
    assert!((&moment.a_hat - g.system.a()).max_abs() > 0.2);
}

#[test]
fn thresholded_estimate_keeps_true_zeros_with_enough_data() {
    let g = gen_pclq(&PcLqSpec::new(3, 3, 12, 1, 7), QMode::IOneTwo, &mut Rng::new(7)).unwrap();
    let ds = sample_transitions(&g.system, 4000, &NoiseSpec::default(), &mut Rng::new(8)).unwrap();
    let model = fit_model(&ds, 0.1, EstimatorKind::Semiparametric, Some(g.system.b())).unwrap();
    let a = g.system.a();
    for i in 0..12 {
        for j in 0..12 {
            if a[(i, j)] == 0.0 {
                assert_eq!(model.a_bar[(i, j)], 0.0, "({i}, {j})");
            }
        }
    }
}

#[test]
fn single_entry_matches_direct_regression_under_orthogonal_design() {
    let g = gen_pclq(&PcLqSpec::new(1, 1, 3, 1, 9), QMode::IOneTwo, &mut Rng::new(9)).unwrap();
    let ds = sample_transitions(&g.system, 64, &NoiseSpec::isotropic(1.0, 1.0, 0.0), &mut Rng::new(10)).unwrap();
    let ds = ds.without_input(g.system.b()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let w = semiparametric_entry(&ds, i, j, None).unwrap();
            assert!((w - g.system.a()[(i, j)]).abs() < 1e-6);
        }
    }
}
