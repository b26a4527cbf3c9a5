//! Seeded generation of three-block PC-LQ systems, the two-block
//! counterexample family, and one-step transition datasets.

use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::linalg::{Cholesky, Mat, Svd};
use crate::lqr::{spectral_radius_estimate, LqSystem};
use crate::rng::Rng;
use crate::structure::{linf_block_norm, SparsityBlocks};

/// Squarings used when normalizing sampled blocks to a target spectral radius.
pub const NORMALIZE_SQUARINGS: u32 = 12;
const DEGENERATE_RADIUS: f64 = 1e-12;
const MAX_BLOCK_ATTEMPTS: usize = 5;

/// Which state cost the generated system carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QMode {
    /// Ones on blocks 1-2, zeros on block 3.
    #[default]
    IOneTwo,
    Identity,
}

impl QMode {
    pub fn parse(s: &str) -> Result<QMode> {
        match s {
            "i_onetwo" => Ok(QMode::IOneTwo),
            "identity" => Ok(QMode::Identity),
            other => Err(Error::InvalidParameter(format!(
                "unknown q mode {other:?} (expected i_onetwo or identity)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QMode::IOneTwo => "i_onetwo",
            QMode::Identity => "identity",
        }
    }
}

/// How a sampled diagonal block is rescaled to its target `rho`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the spectral radius, so `rho(A_i) = rho`.
    #[default]
    SpectralRadius,
    /// Divide by the largest singular value, so `|A_i|_2 = rho`.
    TopSingular,
}

impl Normalization {
    pub fn parse(s: &str) -> Result<Normalization> {
        match s {
            "spectral_radius" => Ok(Normalization::SpectralRadius),
            "top_singular" => Ok(Normalization::TopSingular),
            other => Err(Error::InvalidParameter(format!(
                "unknown normalization {other:?} (expected spectral_radius or top_singular)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Normalization::SpectralRadius => "spectral_radius",
            Normalization::TopSingular => "top_singular",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcLqSpec {
    pub s_c: usize,
    pub s_e: usize,
    pub d: usize,
    pub d_u: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub normalization: Normalization,
    pub seed: u64,
}

impl PcLqSpec {
    /// Defaults matching the reference experiment: `rho = (1, 0.9, 0.9)`.
    pub fn new(s_c: usize, s_e: usize, d: usize, d_u: usize, seed: u64) -> PcLqSpec {
        PcLqSpec {
            s_c,
            s_e,
            d,
            d_u,
            rho1: 1.0,
            rho2: 0.9,
            rho3: 0.9,
            normalization: Normalization::SpectralRadius,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_c + self.s_e > self.d {
            return Err(Error::InvalidParameter(format!(
                "s_c + s_e = {} exceeds d = {}",
                self.s_c + self.s_e,
                self.d
            )));
        }
        if self.d_u == 0 {
            return Err(Error::InvalidParameter("d_u must be positive".into()));
        }
        for rho in [self.rho1, self.rho2, self.rho3] {
            if !(rho >= 0.0) || !rho.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "spectral radius target {rho} must be >= 0"
                )));
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> SparsityBlocks {
        SparsityBlocks::contiguous(self.s_c, self.s_e, self.d)
    }
}

/// A generated system together with its known block labels.
#[derive(Clone, Debug)]
pub struct GeneratedSystem {
    pub system: LqSystem,
    pub blocks: SparsityBlocks,
    /// `|A_3|_inf`; the L-infinity stability assumption holds when this is < 1.
    pub linf_a3: f64,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.standard_normal())
}

/// Square Gaussian block rescaled so its Gelfand radius estimate (or top
/// singular value) equals `rho`.
fn normalized_block(n: usize, rho: f64, how: Normalization, rng: &mut Rng) -> Result<Mat> {
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    for _ in 0..MAX_BLOCK_ATTEMPTS {
        let g = gaussian_matrix(n, n, rng);
        let radius = match how {
            Normalization::SpectralRadius => spectral_radius_estimate(&g, NORMALIZE_SQUARINGS)?.radius_estimate,
            Normalization::TopSingular => Svd::new(&g)?.sigma_max(),
        };
        if radius >= DEGENERATE_RADIUS {
            return Ok(g.scale(rho / radius));
        }
    }
    Err(Error::DegenerateBlock {
        attempts: MAX_BLOCK_ATTEMPTS,
    })
}

/// Samples a PC-LQ system with the three-block zero pattern.
///
/// Draw order is `A_1, A_2, A_3, A_12, A_32, B_1`; the zero blocks are never
/// written and stay exactly zero.
pub fn gen_pclq(spec: &PcLqSpec, q_mode: QMode, rng: &mut Rng) -> Result<GeneratedSystem> {
    spec.validate()?;
    let (s_c, s_e, d) = (spec.s_c, spec.s_e, spec.d);
    let s = s_c + s_e;
    let irrelevant = d - s;
    let how = spec.normalization;
    let a1 = normalized_block(s_c, spec.rho1, how, rng)?;
    let a2 = normalized_block(s_e, spec.rho2, how, rng)?;
    let a3 = normalized_block(irrelevant, spec.rho3, how, rng)?;
    let a12 = gaussian_matrix(s_c, s_e, rng);
    let a32 = gaussian_matrix(irrelevant, s_e, rng);
    let b1 = gaussian_matrix(s_c, spec.d_u, rng);

    let mut a = Mat::zeros(d, d);
    a.set_block(0, 0, &a1);
    a.set_block(0, s_c, &a12);
    a.set_block(s_c, s_c, &a2);
    a.set_block(s, s_c, &a32);
    a.set_block(s, s, &a3);
    let mut b = Mat::zeros(d, spec.d_u);
    b.set_block(0, 0, &b1);

    let blocks = spec.blocks();
    let q = match q_mode {
        QMode::IOneTwo => blocks.relevant_indicator(),
        QMode::Identity => Mat::identity(d),
    };
    let system = LqSystem::new(a, b, q, Mat::identity(spec.d_u))?;
    Ok(GeneratedSystem {
        system,
        blocks,
        linf_a3: linf_block_norm(&a3),
    })
}

/// Counterexample family: first row of ones, `diag(1, rho)` below,
/// `B = e_1`, `Q = diag(1, 0, ..., 0)`, `R = 1`.
pub fn gen_counterexample(d: usize, rho: &[f64]) -> Result<LqSystem> {
    if d < 2 || rho.len() != d - 1 {
        return Err(Error::InvalidParameter(format!(
            "need d >= 2 and d - 1 = {} radii, got {}",
            d.saturating_sub(1),
            rho.len()
        )));
    }
    if let Some(r) = rho.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(Error::InvalidParameter(format!("|rho| must be < 1, got {r}")));
    }
    let a = Mat::from_fn(d, d, |i, j| match (i, j) {
        (0, _) => 1.0,
        (i, j) if i == j => rho[i - 1],
        _ => 0.0,
    });
    let mut b = Mat::zeros(d, 1);
    b[(0, 0)] = 1.0;
    let mut q = Mat::zeros(d, d);
    q[(0, 0)] = 1.0;
    LqSystem::new(a, b, q, Mat::identity(1))
}

/// Distribution of the initial state.
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    /// `x0 ~ N(0, sigma0^2 I)`.
    Isotropic,
    /// `x0 ~ N(0, Sigma)` for a positive definite `Sigma`.
    GeneralPd(Mat),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma0: f64,
    pub sigma_u: f64,
    pub sigma_xi: f64,
    pub covariance: Covariance,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma0: 1.0,
            sigma_u: 1.0,
            sigma_xi: 1.0,
            covariance: Covariance::Isotropic,
        }
    }
}

impl NoiseSpec {
    pub fn isotropic(sigma0: f64, sigma_u: f64, sigma_xi: f64) -> NoiseSpec {
        NoiseSpec {
            sigma0,
            sigma_u,
            sigma_xi,
            covariance: Covariance::Isotropic,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma0", self.sigma0),
            ("sigma_u", self.sigma_u),
            ("sigma_xi", self.sigma_xi),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Draws `n` transitions `x1 = A x0 + B u0 + xi`. Per row the draw order is
/// `x0`, `u0`, `xi`.
pub fn sample_transitions(sys: &LqSystem, n: usize, noise: &NoiseSpec, rng: &mut Rng) -> Result<Dataset> {
    noise.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one transition".into()));
    }
    let (d, du) = (sys.d(), sys.du());
    let factor = match &noise.covariance {
        Covariance::Isotropic => None,
        Covariance::GeneralPd(sigma) => {
            if sigma.shape() != (d, d) || sigma.asymmetry() > 1e-12 {
                return Err(Error::InvalidParameter(
                    "covariance must be a symmetric d x d matrix".into(),
                ));
            }
            Some(Cholesky::factor(sigma)?)
        }
    };
    let mut x0 = Mat::zeros(n, d);
    let mut u0 = Mat::zeros(n, du);
    let mut x1 = Mat::zeros(n, d);
    for row in 0..n {
        let z = rng.normals(d);
        let state: Vec<f64> = match &factor {
            None => z.iter().map(|v| noise.sigma0 * v).collect(),
            Some(chol) => chol.lower().matvec(&z),
        };
        let input: Vec<f64> = rng.normals(du).into_iter().map(|v| noise.sigma_u * v).collect();
        let xi = rng.normals(d);
        let ax = sys.a().matvec(&state);
        let bu = sys.b().matvec(&input);
        x0.row_mut(row).copy_from_slice(&state);
        u0.row_mut(row).copy_from_slice(&input);
        for (i, out) in x1.row_mut(row).iter_mut().enumerate() {
            *out = ax[i] + bu[i] + noise.sigma_xi * xi[i];
        }
    }
    let sigma0 = match noise.covariance {
        Covariance::Isotropic => noise.sigma0,
        Covariance::GeneralPd(_) => 0.0,
    };
    Dataset::new(x0, u0, x1, sigma0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::solve_dare;

    #[test]
    fn zero_blocks_are_exact() {
        let spec = PcLqSpec::new(5, 5, 20, 1, 42);
        let g = gen_pclq(&spec, QMode::IOneTwo, &mut Rng::new(spec.seed)).unwrap();
        let a = g.system.a();
        for i in 0..20 {
            for j in 0..20 {
                let (bi, bj) = (i / 5, j / 5);
                let block_row = bi.min(2);
                let block_col = bj.min(2);
                let zero = matches!((block_row, block_col), (0, 2) | (1, 0) | (1, 2) | (2, 0));
                if zero {
                    assert_eq!(a[(i, j)].to_bits(), 0.0f64.to_bits(), "A({i},{j})");
                }
            }
            if i >= 5 {
                assert_eq!(g.system.b()[(i, 0)].to_bits(), 0.0f64.to_bits());
            }
        }
        assert_eq!(g.system.q().trace(), 10.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = PcLqSpec::new(5, 5, 20, 1, 42);
        let a = gen_pclq(&spec, QMode::IOneTwo, &mut Rng::new(42)).unwrap();
        let b = gen_pclq(&spec, QMode::IOneTwo, &mut Rng::new(42)).unwrap();
        assert_eq!(a.system, b.system);
    }

    #[test]
    fn controllable_block_is_normalized() {
        let spec = PcLqSpec::new(5, 5, 20, 1, 42);
        let g = gen_pclq(&spec, QMode::IOneTwo, &mut Rng::new(42)).unwrap();
        let a1 = g.system.a().select(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4]);
        let r = spectral_radius_estimate(&a1, NORMALIZE_SQUARINGS).unwrap();
        assert!((r.radius_estimate - 1.0).abs() < 1e-3);
    }

    #[test]
    fn singular_value_normalization() {
        let spec = PcLqSpec {
            normalization: Normalization::TopSingular,
            ..PcLqSpec::new(4, 3, 12, 1, 8)
        };
        let g = gen_pclq(&spec, QMode::IOneTwo, &mut Rng::new(8)).unwrap();
        let a = g.system.a();
        let a1 = a.select(&[0, 1, 2, 3], &[0, 1, 2, 3]);
        let a3: Vec<usize> = (7..12).collect();
        assert!((Svd::new(&a1).unwrap().sigma_max() - 1.0).abs() < 1e-12);
        assert!((Svd::new(&a.select(&a3, &a3)).unwrap().sigma_max() - 0.9).abs() < 1e-12);
        assert_eq!(
            Normalization::parse("top_singular").unwrap(),
            Normalization::TopSingular
        );
        assert!(Normalization::parse("frobenius").is_err());
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = PcLqSpec::new(5, 5, 8, 1, 0);
        assert!(gen_pclq(&spec, QMode::IOneTwo, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn counterexample_matches_two_dimensional_form() {
        let sys = gen_counterexample(2, &[0.5]).unwrap();
        assert_eq!(*sys.a(), Mat::from_rows(&[[1.0, 1.0], [0.0, 0.5]]).unwrap());
        assert_eq!(*sys.b(), Mat::column(&[1.0, 0.0]));
        assert_eq!(*sys.q(), Mat::from_diag(&[1.0, 0.0]));
        assert!(gen_counterexample(2, &[1.0]).is_err());
        assert!(gen_counterexample(3, &[0.5]).is_err());
    }

    #[test]
    fn counterexample_at_zero_radius() {
        let sol = solve_dare(&gen_counterexample(2, &[0.0]).unwrap()).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 1)] - 1.0 / golden).abs() < 1e-9);
    }

    #[test]
    fn noiseless_samples_follow_dynamics() {
        let spec = PcLqSpec::new(2, 2, 6, 1, 3);
        let g = gen_pclq(&spec, QMode::IOneTwo, &mut Rng::new(3)).unwrap();
        let ds = sample_transitions(&g.system, 50, &NoiseSpec::isotropic(1.0, 1.0, 0.0), &mut Rng::new(9)).unwrap();
        let predicted = &ds.x0().matmul_t(g.system.a()) + &ds.u0().matmul_t(g.system.b());
        assert!((&predicted - ds.x1()).max_abs() < 1e-12);
    }

    #[test]
    fn degenerate_noise_gives_zero_data() {
        let sys = gen_counterexample(3, &[0.2, 0.4]).unwrap();
        let ds = sample_transitions(&sys, 4, &NoiseSpec::isotropic(0.0, 0.0, 0.0), &mut Rng::new(1)).unwrap();
        assert_eq!(ds.x1().max_abs(), 0.0);
    }

    #[test]
    fn isotropic_covariance_is_identity() {
        let sys = gen_counterexample(3, &[0.2, 0.4]).unwrap();
        let n = 100_000;
        let ds = sample_transitions(&sys, n, &NoiseSpec::default(), &mut Rng::new(5)).unwrap();
        let cov = ds.x0().t_matmul(ds.x0()).scale(1.0 / n as f64);
        assert!((&cov - &Mat::identity(3)).max_abs() < 0.05);
    }

    #[test]
    fn general_covariance_uses_cholesky_factor() {
        let sys = gen_counterexample(2, &[0.3]).unwrap();
        let sigma = Mat::from_rows(&[[2.0, 0.8], [0.8, 1.0]]).unwrap();
        let noise = NoiseSpec {
            covariance: Covariance::GeneralPd(sigma.clone()),
            ..NoiseSpec::default()
        };
        let n = 100_000;
        let ds = sample_transitions(&sys, n, &noise, &mut Rng::new(8)).unwrap();
        assert_eq!(ds.sigma0(), 0.0);
        let cov = ds.x0().t_matmul(ds.x0()).scale(1.0 / n as f64);
        assert!((&cov - &sigma).max_abs() < 0.05);
    }
}
