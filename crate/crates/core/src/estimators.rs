//! System identification from one-step transitions `(x0, u0, x1)`.
//!
//! Three entrywise estimators are provided: minimum-norm least squares, the
//! second-moment product estimator (isotropic `x0`), and semiparametric
//! least squares, which estimates each `A(i, j)` by a two-stage
//! orthogonalized regression on split halves of the data. [`learn_policy`]
//! soft-thresholds an estimate and solves the Riccati equation for it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Svd, DEFAULT_RANK_TOL};
use crate::lqr::{solve_dare_value_iteration, LqSystem, RiccatiSolution, DARE_MAX_ITER};

/// `N` transitions stored row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x0: Mat,
    u0: Mat,
    x1: Mat,
    sigma0: f64,
}

impl Dataset {
    /// `sigma0` is the per-coordinate standard deviation of `x0` under
    /// isotropic sampling, or `0` when the covariance is general.
    pub fn new(x0: Mat, u0: Mat, x1: Mat, sigma0: f64) -> Result<Dataset> {
        if x0.shape() != x1.shape() {
            return Err(Error::Shape(format!("x0 {:?} vs x1 {:?}", x0.shape(), x1.shape())));
        }
        if u0.rows() != x0.rows() {
            return Err(Error::Shape(format!("u0 has {} rows, x0 has {}", u0.rows(), x0.rows())));
        }
        if x0.rows() == 0 {
            return Err(Error::InvalidParameter("dataset needs at least one sample".into()));
        }
        if !(sigma0 >= 0.0) || !sigma0.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma0 must be >= 0, got {sigma0}")));
        }
        Ok(Dataset { x0, u0, x1, sigma0 })
    }

    pub fn x0(&self) -> &Mat {
        &self.x0
    }

    pub fn u0(&self) -> &Mat {
        &self.u0
    }

    pub fn x1(&self) -> &Mat {
        &self.x1
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn n(&self) -> usize {
        self.x0.rows()
    }

    pub fn d(&self) -> usize {
        self.x0.cols()
    }

    pub fn du(&self) -> usize {
        self.u0.cols()
    }

    /// Same samples with the known input response removed:
    /// `x1 <- x1 - u0 B^T`.
    pub fn without_input(&self, b: &Mat) -> Result<Dataset> {
        if b.shape() != (self.d(), self.du()) {
            return Err(Error::Shape(format!(
                "known B is {:?}, expected {}x{}",
                b.shape(),
                self.d(),
                self.du()
            )));
        }
        let x1 = &self.x1 - &self.u0.matmul_t(b);
        Dataset::new(self.x0.clone(), self.u0.clone(), x1, self.sigma0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Ols,
    SecondMoment,
    Semiparametric,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Result<EstimatorKind> {
        match s {
            "ols" => Ok(EstimatorKind::Ols),
            "moment" => Ok(EstimatorKind::SecondMoment),
            "semiparam" => Ok(EstimatorKind::Semiparametric),
            other => Err(Error::InvalidParameter(format!(
                "unknown estimator {other:?} (expected ols, moment or semiparam)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ols => "ols",
            EstimatorKind::SecondMoment => "moment",
            EstimatorKind::Semiparametric => "semiparam",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EstimateResult {
    pub a_hat: Mat,
    pub b_hat: Mat,
    pub kind: EstimatorKind,
    /// Entries the semiparametric estimator could not compute (set to zero).
    pub failed_entries: usize,
}

/// Entrywise soft threshold: `sign(x) * max(|x| - eps, 0)`.
pub fn soft_threshold(m: &Mat, eps: f64) -> Result<Mat> {
    if !(eps >= 0.0) {
        return Err(Error::NegativeThreshold(eps));
    }
    Ok(m.map(|x| soft_threshold_scalar(x, eps)))
}

pub fn soft_threshold_scalar(x: f64, eps: f64) -> f64 {
    if x.abs() > eps {
        x - x.signum() * eps
    } else {
        0.0
    }
}

/// Minimum-norm least squares. Without `known_b`, regresses `x1` on the
/// stacked features `[x0, u0]`; with it, regresses `x1 - u0 B^T` on `x0`
/// and reports `B` unchanged.
pub fn ols_estimate(ds: &Dataset, known_b: Option<&Mat>) -> Result<EstimateResult> {
    let d = ds.d();
    let (a_hat, b_hat) = match known_b {
        Some(b) => {
            let reduced = ds.without_input(b)?;
            let theta = linalg::pinv(ds.x0())?.matmul(reduced.x1());
            (theta.transpose(), b.clone())
        }
        None => {
            let features = ds.x0().hcat(ds.u0());
            let theta = linalg::pinv(&features)?.matmul(ds.x1()).transpose();
            let rows: Vec<usize> = (0..d).collect();
            let a_cols: Vec<usize> = (0..d).collect();
            let b_cols: Vec<usize> = (d..d + ds.du()).collect();
            (theta.select(&rows, &a_cols), theta.select(&rows, &b_cols))
        }
    };
    Ok(EstimateResult {
        a_hat,
        b_hat,
        kind: EstimatorKind::Ols,
        failed_entries: 0,
    })
}

/// `A_hat = (1 / (N sigma0^2)) sum x1 x0^T`, `B_hat = (1 / N) sum x1 u0^T`.
pub fn second_moment_estimate(ds: &Dataset) -> Result<EstimateResult> {
    if ds.sigma0() == 0.0 {
        return Err(Error::SigmaZeroUnknown);
    }
    let n = ds.n() as f64;
    let a_hat = ds.x1().t_matmul(ds.x0()).scale(1.0 / (n * ds.sigma0() * ds.sigma0()));
    Ok(EstimateResult {
        a_hat,
        b_hat: estimate_b_second_moment(ds),
        kind: EstimatorKind::SecondMoment,
        failed_entries: 0,
    })
}

/// `B_hat = (1 / N) sum x1 u0^T`, valid when `u0` has identity covariance.
pub fn estimate_b_second_moment(ds: &Dataset) -> Mat {
    ds.x1().t_matmul(ds.u0()).scale(1.0 / ds.n() as f64)
}

/// Partially linear model `y = <w, z1> + <e, z2> + noise`; only `w` is
/// estimated.
#[derive(Clone, Debug)]
pub struct SemiparamProblem {
    pub y: Vec<f64>,
    pub z1: Mat,
    pub z2: Mat,
}

impl SemiparamProblem {
    pub fn new(y: Vec<f64>, z1: Mat, z2: Mat) -> Result<SemiparamProblem> {
        if z1.rows() != y.len() || z2.rows() != y.len() {
            return Err(Error::Shape(format!(
                "y has {} rows, z1 {}, z2 {}",
                y.len(),
                z1.rows(),
                z2.rows()
            )));
        }
        if z1.cols() == 0 {
            return Err(Error::InvalidParameter("z1 needs at least one column".into()));
        }
        Ok(SemiparamProblem { y, z1, z2 })
    }
}

/// Rows `0..floor(N/2)` fit the nuisance regressions, the rest fit `w`.
pub fn split_point(n: usize) -> usize {
    n / 2
}

fn check_split(n: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "semiparametric estimation needs N >= 2, got {n}"
        )));
    }
    Ok(split_point(n))
}

/// Nuisance-stage quantities shared by every response regressed on the same
/// feature split.
#[derive(Clone, Debug)]
struct NuisanceFit {
    /// `(sum z2 z2^T)^+` over the first half.
    gram_pinv: Mat,
    /// Residualized `z1 - L_hat z2` over the second half (rows x d_w).
    residual: Mat,
    /// `(sum r r^T)^+` over the second half.
    residual_gram_pinv: Mat,
}

impl NuisanceFit {
    fn new(z1: &Mat, z2: &Mat, split: usize) -> Result<NuisanceFit> {
        let n = z1.rows();
        let (z1a, z1b) = (z1.row_range(0, split), z1.row_range(split, n));
        let (z2a, z2b) = (z2.row_range(0, split), z2.row_range(split, n));
        let gram_pinv = if z2.cols() == 0 {
            Mat::zeros(0, 0)
        } else {
            Svd::new(&z2a.t_matmul(&z2a))?.pinv(DEFAULT_RANK_TOL)
        };
        // L_hat = (sum z1 z2^T) G^+, shape d_w x d_e.
        let l_hat = z1a.t_matmul(&z2a).matmul(&gram_pinv);
        let residual = &z1b - &z2b.matmul_t(&l_hat);
        let residual_gram = residual.t_matmul(&residual);
        let scale = z1b.t_matmul(&z1b).trace();
        if !(residual_gram.trace() > 1e-14 * scale) {
            return Err(Error::DegenerateResidual);
        }
        let residual_gram_pinv = Svd::new(&residual_gram)?.pinv(DEFAULT_RANK_TOL);
        Ok(NuisanceFit {
            gram_pinv,
            residual,
            residual_gram_pinv,
        })
    }

    /// `w_hat` for each response column of `y` (rows x m), returned d_w x m.
    fn fit(&self, y: &Mat, z2: &Mat, split: usize) -> Mat {
        let n = y.rows();
        let (ya, yb) = (y.row_range(0, split), y.row_range(split, n));
        let (z2a, z2b) = (z2.row_range(0, split), z2.row_range(split, n));
        // c_hat = G^+ sum y z2, one column per response.
        let c_hat = self.gram_pinv.matmul(&z2a.t_matmul(&ya));
        let orthogonal = &yb - &z2b.matmul(&c_hat);
        self.residual_gram_pinv.matmul(&self.residual.t_matmul(&orthogonal))
    }
}

/// Semiparametric least squares for a general partially linear model.
pub fn semiparametric_ls(problem: &SemiparamProblem) -> Result<Vec<f64>> {
    let split = check_split(problem.y.len())?;
    let fit = NuisanceFit::new(&problem.z1, &problem.z2, split)?;
    let w = fit.fit(&Mat::column(&problem.y), &problem.z2, split);
    Ok(w.col(0))
}

/// Cached nuisance fit for one column `j` of `A`, reusable across rows `i`.
#[derive(Clone, Debug)]
pub struct ColumnCache {
    j: usize,
    n: usize,
    fit: NuisanceFit,
}

impl ColumnCache {
    pub fn new(ds: &Dataset, j: usize) -> Result<ColumnCache> {
        let split = check_split(ds.n())?;
        if j >= ds.d() {
            return Err(Error::InvalidParameter(format!(
                "column {j} out of range for d = {}",
                ds.d()
            )));
        }
        let (z1, z2) = column_features(ds, j);
        Ok(ColumnCache {
            j,
            n: ds.n(),
            fit: NuisanceFit::new(&z1, &z2, split)?,
        })
    }

    pub fn column(&self) -> usize {
        self.j
    }
}

/// `z1 = x0(j)`, `z2 = x0([d] \ j)`.
fn column_features(ds: &Dataset, j: usize) -> (Mat, Mat) {
    let others: Vec<usize> = (0..ds.d()).filter(|&k| k != j).collect();
    (ds.x0().select_cols(&[j]), ds.x0().select_cols(&others))
}

/// Semiparametric estimate of `A(i, j)` with `y = x1(i)`, `z1 = x0(j)`,
/// `z2 = x0([d] \ j)`.
pub fn semiparametric_entry(ds: &Dataset, i: usize, j: usize, cache: Option<&ColumnCache>) -> Result<f64> {
    let split = check_split(ds.n())?;
    if i >= ds.d() || j >= ds.d() {
        return Err(Error::InvalidParameter(format!(
            "entry ({i}, {j}) out of range for d = {}",
            ds.d()
        )));
    }
    let owned;
    let cache = match cache {
        Some(c) if c.j == j && c.n == ds.n() => c,
        Some(c) => {
            return Err(Error::InvalidParameter(format!(
                "cache is for column {} with N = {}, requested column {j} with N = {}",
                c.j,
                c.n,
                ds.n()
            )))
        }
        None => {
            owned = ColumnCache::new(ds, j)?;
            &owned
        }
    };
    let (_, z2) = column_features(ds, j);
    let y = ds.x1().select_cols(&[i]);
    Ok(cache.fit.fit(&y, &z2, split)[(0, 0)])
}

/// Full matrix of semiparametric entry estimates.
#[derive(Clone, Debug)]
pub struct SemiparamEstimate {
    pub a_hat: Mat,
    /// Entries zeroed because their residualized feature was degenerate.
    pub failed_entries: usize,
}

/// Estimates every entry of `A`. The nuisance fit for column `j` is computed
/// once and shared by all rows `i`; columns are processed in parallel.
pub fn semiparametric_estimate_a(ds: &Dataset) -> Result<SemiparamEstimate> {
    let split = check_split(ds.n())?;
    let d = ds.d();
    let columns: Vec<Option<Vec<f64>>> = (0..d)
        .into_par_iter()
        .map(|j| -> Result<Option<Vec<f64>>> {
            match ColumnCache::new(ds, j) {
                Ok(cache) => {
                    let (_, z2) = column_features(ds, j);
                    Ok(Some(cache.fit.fit(ds.x1(), &z2, split).row(0).to_vec()))
                }
                Err(Error::DegenerateResidual) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut a_hat = Mat::zeros(d, d);
    let mut failed_entries = 0;
    for (j, column) in columns.iter().enumerate() {
        match column {
            Some(values) => {
                for (i, &v) in values.iter().enumerate() {
                    a_hat[(i, j)] = v;
                }
            }
            None => failed_entries += d,
        }
    }
    Ok(SemiparamEstimate { a_hat, failed_entries })
}

/// Runs the selected estimator. With `known_b`, only `A` is estimated (on
/// the input-corrected responses) and `B` is passed through.
pub fn estimate(ds: &Dataset, kind: EstimatorKind, known_b: Option<&Mat>) -> Result<EstimateResult> {
    if kind == EstimatorKind::Ols {
        return ols_estimate(ds, known_b);
    }
    let reduced;
    let data = match known_b {
        Some(b) => {
            reduced = ds.without_input(b)?;
            &reduced
        }
        None => ds,
    };
    let (a_hat, failed_entries) = match kind {
        EstimatorKind::SecondMoment => (second_moment_estimate(data)?.a_hat, 0),
        _ => {
            let est = semiparametric_estimate_a(data)?;
            (est.a_hat, est.failed_entries)
        }
    };
    let b_hat = match known_b {
        Some(b) => b.clone(),
        None => estimate_b_second_moment(ds),
    };
    Ok(EstimateResult {
        a_hat,
        b_hat,
        kind,
        failed_entries,
    })
}

/// An estimate and its soft-thresholded model `(A_bar, B_bar)`.
#[derive(Clone, Debug)]
pub struct ThresholdedModel {
    pub raw: EstimateResult,
    pub a_bar: Mat,
    pub b_bar: Mat,
}

/// Estimates `(A, B)` and soft-thresholds both at `eps`. A known `B` is
/// exact and is left unthresholded.
pub fn fit_model(ds: &Dataset, eps: f64, kind: EstimatorKind, known_b: Option<&Mat>) -> Result<ThresholdedModel> {
    if !(eps >= 0.0) {
        return Err(Error::NegativeThreshold(eps));
    }
    let raw = estimate(ds, kind, known_b)?;
    let a_bar = soft_threshold(&raw.a_hat, eps)?;
    let b_bar = match known_b {
        Some(b) => b.clone(),
        None => soft_threshold(&raw.b_hat, eps)?,
    };
    Ok(ThresholdedModel { raw, a_bar, b_bar })
}

impl ThresholdedModel {
    /// Certainty-equivalent controller: the Riccati solution of
    /// `(A_bar, B_bar, I, I)`.
    pub fn controller(&self, dare_tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
        let sys = LqSystem::with_identity_costs(self.a_bar.clone(), self.b_bar.clone())?;
        solve_dare_value_iteration(&sys, dare_tol, max_iter)
    }

    /// Certainty-equivalent controller for known cost matrices `q`, `r`.
    pub fn controller_with_costs(&self, q: &Mat, r: &Mat, dare_tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
        let sys = LqSystem::new(self.a_bar.clone(), self.b_bar.clone(), q.clone(), r.clone())?;
        solve_dare_value_iteration(&sys, dare_tol, max_iter)
    }
}

/// Estimate, soft-threshold, and solve the DARE for the thresholded model
/// with `Q = I`, `R = I`.
pub fn learn_policy(
    ds: &Dataset,
    eps: f64,
    kind: EstimatorKind,
    dare_tol: f64,
    known_b: Option<&Mat>,
) -> Result<(RiccatiSolution, ThresholdedModel)> {
    let model = fit_model(ds, eps, kind, known_b)?;
    let solution = model.controller(dare_tol, DARE_MAX_ITER)?;
    Ok((solution, model))
}
