use pclq::linalg::Mat;
use pclq::lqr::{solve_dare, spectral_radius_estimate, LqSystem};
use pclq::synth::{gen_counterexample, gen_pclq, PcLqSpec, QMode};
use pclq::Rng;

/// Replaces `A_32` and `A_3` with fresh draws, keeping `rho(A_3)`.
fn resample_irrelevant(sys: &LqSystem, s: usize, s_c: usize, rho3: f64, rng: &mut Rng) -> LqSystem {
    let d = sys.d();
    let m = d - s;
    let g = Mat::from_fn(m, m, |_, _| rng.standard_normal());
    let radius = spectral_radius_estimate(&g, 12).unwrap().radius_estimate;
    let a32 = Mat::from_fn(m, s - s_c, |_, _| rng.standard_normal());
    let mut a = sys.a().clone();
    a.set_block(s, s, &g.scale(rho3 / radius));
    a.set_block(s, s_c, &a32);
    LqSystem::new(a, sys.b().clone(), sys.q().clone(), sys.r().clone()).unwrap()
}

#[test]
fn gain_ignores_the_irrelevant_block() {
    for seed in 0..10 {
        let spec = PcLqSpec::new(3, 3, 12, 1, seed);
        let mut rng = Rng::new(seed);
        let g = gen_pclq(&spec, QMode::IOneTwo, &mut rng).unwrap();
        let k = solve_dare(&g.system).unwrap().k;

        let other = resample_irrelevant(&g.system, 6, 3, 0.9, &mut rng);
        assert!(
            (&solve_dare(&other).unwrap().k - &k).max_abs() < 1e-6,
            "seed {seed}: resampled block"
        );

        let full_q = g.system.with_q(Mat::identity(12)).unwrap();
        assert!(
            (&solve_dare(&full_q).unwrap().k - &k).max_abs() < 1e-6,
            "seed {seed}: Q = I"
        );

        // Irrelevant coordinates get zero feedback.
        for j in 6..12 {
            assert!(k[(0, j)].abs() < 1e-8);
        }
    }
}

#[test]
fn relevant_block_changes_the_gain() {
    let spec = PcLqSpec::new(3, 3, 9, 1, 4);
    let g = gen_pclq(&spec, QMode::IOneTwo, &mut Rng::new(4)).unwrap();
    let k = solve_dare(&g.system).unwrap().k;
    let mut a = g.system.a().clone();
    a[(3, 3)] += 0.2;
    let perturbed = LqSystem::new(a, g.system.b().clone(), g.system.q().clone(), g.system.r().clone()).unwrap();
    assert!((&solve_dare(&perturbed).unwrap().k - &k).max_abs() > 1e-4);
}

fn counterexample_gain(rho: f64) -> [f64; 2] {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let lead = golden / (1.0 + golden);
    [-lead, -lead * golden * golden / (golden * golden - rho)]
}

#[test]
fn counterexample_gain_tracks_the_closed_form() {
    for rho in [0.0, 0.1, 0.5, 0.9, -0.7] {
        let sol = solve_dare(&gen_counterexample(2, &[rho]).unwrap()).unwrap();
        let expected = counterexample_gain(rho);
        assert!((sol.k[(0, 0)] - expected[0]).abs() < 1e-8, "rho {rho}");
        assert!((sol.k[(0, 1)] - expected[1]).abs() < 1e-8, "rho {rho}");
    }
    let low = solve_dare(&gen_counterexample(2, &[0.1]).unwrap()).unwrap().k;
    let high = solve_dare(&gen_counterexample(2, &[0.9]).unwrap()).unwrap().k;
    assert!((low[(0, 1)] - high[(0, 1)]).abs() > 1e-3);
}
