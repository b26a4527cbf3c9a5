//! Discrete-time LQ systems: Riccati solutions, policy evaluation and the
//! norm-power stability certificate.
//!
//! Gains follow the `u = K x` convention with `K = -(R + B'PB)^{-1} B'PA`, so
//! `A + BK` is the closed loop everywhere in the crate.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Mat};

pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 100_000;
/// Squarings used by the stability certificate (powers up to `2^14`).
pub const STABILITY_SQUARINGS: u32 = 14;
/// Doubling steps allowed when summing a Lyapunov series.
pub const LYAPUNOV_MAX_DOUBLINGS: usize = 64;

/// Value iteration gives up once `|P|_F` exceeds this multiple of
/// `1 + |Q|_F`; an unstabilizable mode makes the iterates grow without bound.
const DIVERGENCE_FACTOR: f64 = 1e14;

const SYMMETRY_TOL: f64 = 1e-12;

/// The LQ problem `(A, B, Q, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqSystem {
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
}

impl LqSystem {
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat) -> Result<LqSystem> {
        if !a.is_square() {
            return Err(Error::Shape(format!("A is {:?}, expected square", a.shape())));
        }
        let d = a.rows();
        if b.rows() != d {
            return Err(Error::Shape(format!("B has {} rows, A has {d}", b.rows())));
        }
        if q.shape() != (d, d) {
            return Err(Error::Shape(format!("Q is {:?}, expected {d}x{d}", q.shape())));
        }
        let du = b.cols();
        if r.shape() != (du, du) {
            return Err(Error::Shape(format!("R is {:?}, expected {du}x{du}", r.shape())));
        }
        for (name, m) in [("A", &a), ("B", &b), ("Q", &q), ("R", &r)] {
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("{name} has non-finite entries")));
            }
        }
        if q.asymmetry() > SYMMETRY_TOL {
            return Err(Error::InvalidParameter("Q is not symmetric".into()));
        }
        if r.asymmetry() > SYMMETRY_TOL {
            return Err(Error::InvalidParameter("R is not symmetric".into()));
        }
        Ok(LqSystem { a, b, q, r })
    }

    /// System with `Q = I_d` and `R = I_du`.
    pub fn with_identity_costs(a: Mat, b: Mat) -> Result<LqSystem> {
        let (d, du) = (a.rows(), b.cols());
        LqSystem::new(a, b, Mat::identity(d), Mat::identity(du))
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }

    /// State dimension.
    pub fn d(&self) -> usize {
        self.a.rows()
    }

    /// Input dimension.
    pub fn du(&self) -> usize {
        self.b.cols()
    }

    /// Same dynamics with a different state cost.
    pub fn with_q(&self, q: Mat) -> Result<LqSystem> {
        LqSystem::new(self.a.clone(), self.b.clone(), q, self.r.clone())
    }
}

/// Value matrix and gain of an LQ problem.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub p: Mat,
    pub k: Mat,
    pub iterations: usize,
    /// `|Ric(P) - P|_F / (1 + |P|_F)`.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityReport {
    pub is_stable: bool,
    /// Gelfand estimate `|M^(2^j)|_F^(1/2^j)` at the last squaring.
    pub radius_estimate: f64,
    /// Smallest power `2^j` with `|M^(2^j)|_F < 1`.
    pub certified_power: Option<u64>,
}

/// Estimates the spectral radius by repeated squaring and certifies
/// `rho(M) < 1` when some power has Frobenius norm below one.
///
/// Each squaring is rescaled to unit norm and the logarithm of the scale is
/// carried separately, so neither overflow nor underflow can occur.
pub fn spectral_radius_estimate(m: &Mat, max_squarings: u32) -> Result<StabilityReport> {
    if !m.is_square() {
        return Err(Error::Shape(format!("spectral radius of {:?}", m.shape())));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("spectral radius input".into()));
    }
    if max_squarings == 0 {
        return Err(Error::InvalidParameter("max_squarings must be at least 1".into()));
    }
    let n0 = m.frobenius();
    if n0 == 0.0 {
        return Ok(StabilityReport {
            is_stable: true,
            radius_estimate: 0.0,
            certified_power: Some(1),
        });
    }
    let mut log_norm = n0.ln();
    let mut current = m.scale(1.0 / n0);
    let mut certified = (log_norm < 0.0).then_some(1u64);
    let mut radius = n0;
    for j in 1..=max_squarings {
        let power = 1u64 << j;
        let sq = current.matmul(&current);
        let nn = sq.frobenius();
        if nn == 0.0 {
            // Nilpotent: M^(2^j) vanishes.
            return Ok(StabilityReport {
                is_stable: true,
                radius_estimate: 0.0,
                certified_power: certified.or(Some(power)),
            });
        }
        log_norm = 2.0 * log_norm + nn.ln();
        current = sq.scale(1.0 / nn);
        if certified.is_none() && log_norm < 0.0 {
            certified = Some(power);
        }
        radius = (log_norm / power as f64).exp();
    }
    Ok(StabilityReport {
        is_stable: certified.is_some(),
        radius_estimate: radius,
        certified_power: certified,
    })
}

/// Stability verdict with the default squaring budget.
pub fn is_stable(m: &Mat) -> Result<bool> {
    Ok(spectral_radius_estimate(m, STABILITY_SQUARINGS)?.is_stable)
}

/// `A + B K`.
pub fn closed_loop(sys: &LqSystem, k: &Mat) -> Result<Mat> {
    if k.shape() != (sys.du(), sys.d()) {
        return Err(Error::Shape(format!(
            "gain is {:?}, expected {}x{}",
            k.shape(),
            sys.du(),
            sys.d()
        )));
    }
    Ok(sys.a() + &sys.b().matmul(k))
}

/// Gain `-(R + B'PB)^{-1} B'PA` for a value matrix `P`.
pub fn gain_from_value(sys: &LqSystem, p: &Mat) -> Result<Mat> {
    Ok(riccati_map(sys, p)?.1)
}

/// One application of the Riccati map. Returns the symmetrized
/// `A'PA + Q - (B'PA)'(R + B'PB)^{-1} B'PA` together with the gain at `P`.
pub fn riccati_map(sys: &LqSystem, p: &Mat) -> Result<(Mat, Mat)> {
    let (a, b) = (sys.a(), sys.b());
    let bp = b.t_matmul(p);
    let inner = sys.r() + &bp.matmul(b);
    let bpa = bp.matmul(a);
    let chol = Cholesky::factor(&inner.symmetrize()).map_err(|_| Error::SingularInnerSolve)?;
    let k = -&chol.solve(&bpa);
    let next = &(&a.t_matmul(&p.matmul(a)) + sys.q()) + &bpa.t_matmul(&k);
    Ok((next.symmetrize(), k))
}

pub fn riccati_residual(sys: &LqSystem, p: &Mat) -> Result<f64> {
    let (next, _) = riccati_map(sys, p)?;
    Ok((&next - p).frobenius() / (1.0 + p.frobenius()))
}

/// Solves the DARE by value iteration from `P_0 = Q`, stopping once the
/// relative change `|Ric(P) - P|_F / (1 + |P|_F)` falls below `tol`.
pub fn solve_dare_value_iteration(sys: &LqSystem, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let bound = DIVERGENCE_FACTOR * (1.0 + sys.q().frobenius());
    let mut p = sys.q().clone();
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let (next, k) = riccati_map(sys, &p)?;
        let p_norm = p.frobenius();
        residual = (&next - &p).frobenius() / (1.0 + p_norm);
        if residual < tol {
            return Ok(RiccatiSolution {
                p,
                k,
                iterations: iteration,
                residual,
            });
        }
        if !next.is_finite() || next.frobenius() > bound || !residual.is_finite() {
            return Err(Error::MaxIterExceeded {
                iterations: iteration,
                residual,
            });
        }
        p = next;
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual,
    })
}

/// DARE with the default tolerance and iteration budget.
pub fn solve_dare(sys: &LqSystem) -> Result<RiccatiSolution> {
    solve_dare_value_iteration(sys, DARE_TOL, DARE_MAX_ITER)
}

/// Value matrix of the fixed policy `u = K x`: the solution of
/// `P = M'PM + Q + K'RK` with `M = A + BK`.
///
/// The series `sum_t (M')^t C M^t` is summed by doubling:
/// `S <- S + M'SM`, `M <- M^2`, until the increment drops below `tol`.
/// `max_iter` bounds the number of doublings.
pub fn policy_value(sys: &LqSystem, k: &Mat, tol: f64, max_iter: usize) -> Result<Mat> {
    let m = closed_loop(sys, k)?;
    if !is_stable(&m)? {
        return Err(Error::UnstablePolicy);
    }
    let mut s = sys.q() + &k.t_matmul(&sys.r().matmul(k));
    let mut power = m;
    let mut last = f64::INFINITY;
    for _ in 0..max_iter {
        let increment = power.t_matmul(&s.matmul(&power));
        last = increment.frobenius();
        s = &s + &increment;
        if last < tol {
            return Ok(s.symmetrize());
        }
        if !last.is_finite() {
            break;
        }
        power = power.matmul(&power);
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual: last,
    })
}

/// Policy iteration (Hewer's algorithm) from a stabilizing gain.
pub fn policy_iteration(sys: &LqSystem, k0: &Mat, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    let mut p_prev = match policy_value(sys, k0, tol, LYAPUNOV_MAX_DOUBLINGS) {
        Err(Error::UnstablePolicy) => return Err(Error::UnstableInitialPolicy),
        other => other?,
    };
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let k = gain_from_value(sys, &p_prev)?;
        let p = policy_value(sys, &k, tol, LYAPUNOV_MAX_DOUBLINGS)?;
        let change = (&p - &p_prev).frobenius() / (1.0 + p_prev.frobenius());
        let (next, k_next) = riccati_map(sys, &p)?;
        residual = (&next - &p).frobenius() / (1.0 + p.frobenius());
        if change < tol && residual <= tol {
            return Ok(RiccatiSolution {
                p,
                k: k_next,
                iterations: iteration,
                residual,
            });
        }
        p_prev = p;
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual,
    })
}

/// Steady-state per-step cost `trace(P W)` under noise covariance `W`.
pub fn average_cost(p: &Mat, w: &Mat) -> Result<f64> {
    if !p.is_square() || p.shape() != w.shape() {
        return Err(Error::Shape(format!(
            "average cost of {:?} and {:?}",
            p.shape(),
            w.shape()
        )));
    }
    let n = p.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += p[(i, j)] * w[(j, i)];
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 1.618_033_988_749_895;

    fn scalar(a: f64, b: f64, q: f64, r: f64) -> LqSystem {
        let m = |v: f64| Mat::from_rows(&[[v]]).unwrap();
        LqSystem::new(m(a), m(b), m(q), m(r)).unwrap()
    }

    fn counterexample_system(rho: f64) -> LqSystem {
        LqSystem::new(
            Mat::from_rows(&[[1.0, 1.0], [0.0, rho]]).unwrap(),
            Mat::column(&[1.0, 0.0]),
            Mat::from_diag(&[1.0, 0.0]),
            Mat::identity(1),
        )
        .unwrap()
    }

    #[test]
    fn radius_of_identity_is_one_and_unstable() {
        let r = spectral_radius_estimate(&Mat::identity(3), STABILITY_SQUARINGS).unwrap();
        assert!(!r.is_stable);
        assert!(r.certified_power.is_none());
        // |I^k|_F = sqrt(3) for every k, so the estimate is 3^(1/2^15).
        assert!((r.radius_estimate - 1.0).abs() < 1e-4);
    }

    #[test]
    fn radius_of_zero_and_nilpotent() {
        let r = spectral_radius_estimate(&Mat::zeros(3, 3), 4).unwrap();
        assert_eq!(
            r,
            StabilityReport {
                is_stable: true,
                radius_estimate: 0.0,
                certified_power: Some(1)
            }
        );
        let shift = Mat::from_rows(&[[0.0, 5.0], [0.0, 0.0]]).unwrap();
        let r = spectral_radius_estimate(&shift, 4).unwrap();
        assert!(r.is_stable);
        assert_eq!(r.radius_estimate, 0.0);
        assert_eq!(r.certified_power, Some(2));
    }

    #[test]
    fn radius_of_diagonal() {
        let r = spectral_radius_estimate(&Mat::from_diag(&[0.9, 0.5]), STABILITY_SQUARINGS).unwrap();
        assert!(r.is_stable);
        assert!((r.radius_estimate - 0.9).abs() < 1e-6);
        // |M|_F = sqrt(0.81 + 0.25) > 1, |M^2|_F = sqrt(0.6561 + 0.0625) < 1.
        assert_eq!(r.certified_power, Some(2));
    }

    #[test]
    fn radius_rejects_bad_input() {
        assert!(spectral_radius_estimate(&Mat::zeros(2, 3), 3).is_err());
        assert!(spectral_radius_estimate(&Mat::identity(2), 0).is_err());
    }

    #[test]
    fn large_norm_stable_matrix_is_certified_without_overflow() {
        let m = Mat::from_rows(&[[0.5, 1e6], [0.0, 0.5]]).unwrap();
        let r = spectral_radius_estimate(&m, STABILITY_SQUARINGS).unwrap();
        assert!(r.is_stable);
        assert!((r.radius_estimate - 0.5).abs() < 1e-2);
    }

    #[test]
    fn dare_scalar_without_dynamics() {
        let sol = solve_dare(&scalar(0.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(sol.k[(0, 0)], 0.0);
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        let sol = solve_dare(&scalar(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((sol.p[(0, 0)] - GOLDEN).abs() < 1e-9);
        assert!((sol.k[(0, 0)] + GOLDEN / (1.0 + GOLDEN)).abs() < 1e-9);
        assert!(sol.residual < DARE_TOL);
    }

    #[test]
    fn dare_two_dimensional_closed_form() {
        let sol = solve_dare(&counterexample_system(0.5)).unwrap();
        let p12 = GOLDEN / (GOLDEN * GOLDEN - 0.5);
        assert!((sol.p[(0, 0)] - GOLDEN).abs() < 1e-9);
        assert!((sol.p[(0, 1)] - p12).abs() < 1e-9);
        assert!((p12 - 0.763_932_022_5).abs() < 1e-9);
    }

    #[test]
    fn dare_reports_unstabilizable_system() {
        // Uncontrollable mode with |a| > 1.
        let sys = LqSystem::new(
            Mat::from_diag(&[0.5, 1.2]),
            Mat::column(&[1.0, 0.0]),
            Mat::identity(2),
            Mat::identity(1),
        )
        .unwrap();
        assert!(matches!(
            solve_dare_value_iteration(&sys, 1e-10, 100_000),
            Err(Error::MaxIterExceeded { .. })
        ));
    }

    #[test]
    fn dare_reports_singular_inner_matrix() {
        let sys = scalar(1.0, 0.0, 1.0, 0.0);
        assert!(matches!(solve_dare(&sys), Err(Error::SingularInnerSolve)));
    }

    #[test]
    fn system_validation() {
        let bad_q = Mat::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(LqSystem::new(Mat::identity(2), Mat::column(&[1.0, 0.0]), bad_q, Mat::identity(1)).is_err());
        assert!(LqSystem::new(
            Mat::identity(2),
            Mat::column(&[1.0]),
            Mat::identity(2),
            Mat::identity(1)
        )
        .is_err());
        assert!(LqSystem::new(
            Mat::identity(2),
            Mat::column(&[1.0, 0.0]),
            Mat::identity(2),
            Mat::identity(2)
        )
        .is_err());
    }

    #[test]
    fn policy_value_examples() {
        let sys = LqSystem::new(
            Mat::zeros(2, 2),
            Mat::column(&[1.0, 0.0]),
            Mat::identity(2),
            Mat::identity(1),
        )
        .unwrap();
        let p = policy_value(&sys, &Mat::zeros(1, 2), 1e-12, 64).unwrap();
        assert!((&p - &Mat::identity(2)).max_abs() < 1e-15);

        let p = policy_value(&scalar(0.5, 1.0, 1.0, 1.0), &Mat::zeros(1, 1), 1e-14, 64).unwrap();
        assert!((p[(0, 0)] - 4.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn policy_value_at_dare_gain_matches_dare() {
        let sys = counterexample_system(0.5);
        let sol = solve_dare(&sys).unwrap();
        let p = policy_value(&sys, &sol.k, 1e-12, 64).unwrap();
        assert!((&p - &sol.p).max_abs() < 10.0 * DARE_TOL * (1.0 + sol.p.frobenius()));
    }

    #[test]
    fn policy_value_rejects_unstable_gain() {
        let sys = scalar(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            policy_value(&sys, &Mat::zeros(1, 1), 1e-10, 64),
            Err(Error::UnstablePolicy)
        ));
    }

    #[test]
    fn policy_iteration_examples() {
        let sys = scalar(1.0, 1.0, 1.0, 1.0);
        let sol = policy_iteration(&sys, &Mat::from_rows(&[[-0.9]]).unwrap(), 1e-10, 100).unwrap();
        assert!((sol.p[(0, 0)] - GOLDEN).abs() < 1e-9);

        let sys = counterexample_system(0.5);
        let vi = solve_dare(&sys).unwrap();
        let pi = policy_iteration(&sys, &Mat::from_rows(&[[-0.9, 0.0]]).unwrap(), 1e-10, 100).unwrap();
        assert!((&vi.p - &pi.p).max_abs() < 100.0 * 1e-10);

        let warm = policy_iteration(&sys, &vi.k, 1e-10, 100).unwrap();
        assert!(warm.iterations <= 2);

        assert!(matches!(
            policy_iteration(&sys, &Mat::zeros(1, 2), 1e-10, 100),
            Err(Error::UnstableInitialPolicy)
        ));
    }

    #[test]
    fn average_cost_examples() {
        assert_eq!(average_cost(&Mat::identity(3), &Mat::identity(3)).unwrap(), 3.0);
        assert_eq!(
            average_cost(&Mat::from_diag(&[2.0, 0.0]), &Mat::from_diag(&[1.0, 5.0])).unwrap(),
            2.0
        );
        let sol = solve_dare(&counterexample_system(0.5)).unwrap();
        let cost = average_cost(&sol.p, &Mat::from_diag(&[1.0, 0.0])).unwrap();
        assert!((cost - GOLDEN).abs() < 1e-9);
        assert!(average_cost(&Mat::identity(2), &Mat::identity(3)).is_err());
    }

    #[test]
    fn closed_loop_examples() {
        let sys = scalar(1.0, 1.0, 1.0, 1.0);
        assert_eq!(closed_loop(&sys, &Mat::zeros(1, 1)).unwrap(), *sys.a());
        let m = closed_loop(&sys, &Mat::from_rows(&[[-0.618034]]).unwrap()).unwrap();
        assert!((m[(0, 0)] - 0.381966).abs() < 1e-12);
        let sys = LqSystem::new(Mat::identity(2), Mat::zeros(2, 1), Mat::identity(2), Mat::identity(1)).unwrap();
        let k = Mat::from_rows(&[[3.0, -7.0]]).unwrap();
        assert_eq!(closed_loop(&sys, &k).unwrap(), Mat::identity(2));
        assert!(closed_loop(&sys, &Mat::zeros(2, 1)).is_err());
    }
}
