//! Dense row-major matrices and the handful of factorizations the rest of the
//! crate needs: Cholesky, one-sided Jacobi SVD, pseudo-inverse, and
//! orthonormal span/completion helpers.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Default relative tolerance used when deciding numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// A dense real matrix stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry ({}, {}) is {}",
                pos / cols.max(1),
                pos % cols.max(1),
                data[pos]
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Mat> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Mat::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Mat {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// A single column vector.
    pub fn column(values: &[f64]) -> Mat {
        Mat {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols,
            other.rows,
            "matmul shape mismatch: {:?} * {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.rows,
            other.rows,
            "t_matmul shape mismatch: {:?}^T * {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols,
            other.cols,
            "matmul_t shape mismatch: {:?} * {:?}^T",
            self.shape(),
            other.shape()
        );
        Mat::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        // Scaled accumulation so squaring large entries cannot overflow.
        let scale = self.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            return scale;
        }
        let sum: f64 = self.data.iter().map(|v| (v / scale) * (v / scale)).sum();
        scale * sum.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `(M + M^T) / 2`.
    pub fn symmetrize(&self) -> Mat {
        assert!(self.is_square());
        Mat::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    /// Largest asymmetry `|M_ij - M_ji|` relative to `max(1, max|M|)`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / self.max_abs().max(1.0)
    }

    /// Submatrix picking the given rows and columns, in order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Mat {
        Mat::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn select_cols(&self, cols: &[usize]) -> Mat {
        Mat::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    pub fn select_rows(&self, rows: &[usize]) -> Mat {
        Mat::from_fn(rows.len(), self.cols, |i, j| self[(rows[i], j)])
    }

    /// Contiguous row range `start..end`.
    pub fn row_range(&self, start: usize, end: usize) -> Mat {
        Mat {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// `[self | other]`.
    pub fn hcat(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "hcat row mismatch");
        Mat::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        })
    }

    /// `[self; other]`.
    pub fn vcat(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "vcat column mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Mat {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    /// Writes `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Mat) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for v in self.row(i) {
                write!(f, "{v:>12.6e} ")?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

fn zip_with(a: &Mat, b: &Mat, op: &str, f: impl Fn(f64, f64) -> f64) -> Mat {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in {op}");
    Mat {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        zip_with(self, rhs, "add", |x, y| x + y)
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        zip_with(self, rhs, "sub", |x, y| x - y)
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        self.matmul(rhs)
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lower-triangular Cholesky factor `L` with `M = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    pub fn factor(m: &Mat) -> Result<Cholesky> {
        if !m.is_square() {
            return Err(Error::Shape(format!("cholesky of {:?}", m.shape())));
        }
        let n = m.rows;
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut diag = m[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn lower(&self) -> &Mat {
        &self.l
    }

    /// Solves `M X = rhs` column by column.
    pub fn solve(&self, rhs: &Mat) -> Mat {
        let n = self.l.rows;
        assert_eq!(rhs.rows, n);
        let mut x = rhs.clone();
        for c in 0..rhs.cols {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
        }
        x
    }
}

/// Thin singular value decomposition `M = U diag(s) V^T`, singular values in
/// decreasing order. For an `m x n` input, `U` is `m x k`, `V` is `n x k`
/// with `k = min(m, n)`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

const JACOBI_MAX_SWEEPS: usize = 80;

impl Svd {
    pub fn new(m: &Mat) -> Result<Svd> {
        if !m.is_finite() {
            return Err(Error::NonFinite("svd input".into()));
        }
        if m.rows >= m.cols {
            Ok(jacobi_svd(m))
        } else {
            let t = jacobi_svd(&m.transpose());
            Ok(Svd { u: t.v, s: t.s, v: t.u })
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }

    /// Cut-off below which singular values are treated as zero.
    pub fn threshold(&self, tol_factor: f64) -> f64 {
        let dim = self.u.rows.max(self.v.rows) as f64;
        tol_factor * dim * self.sigma_max()
    }

    pub fn rank(&self, tol_factor: f64) -> usize {
        let cut = self.threshold(tol_factor);
        self.s.iter().filter(|&&s| s > cut).count()
    }

    /// Moore-Penrose pseudo-inverse `V diag(1/s) U^T` over the retained
    /// singular values.
    pub fn pinv(&self, tol_factor: f64) -> Mat {
        let r = self.rank(tol_factor);
        let (m, n) = (self.u.rows, self.v.rows);
        let mut out = Mat::zeros(n, m);
        for k in 0..r {
            let inv = 1.0 / self.s[k];
            for i in 0..n {
                let vik = self.v[(i, k)] * inv;
                if vik == 0.0 {
                    continue;
                }
                let row = out.row_mut(i);
                for (j, o) in row.iter_mut().enumerate() {
                    *o += vik * self.u[(j, k)];
                }
            }
        }
        out
    }

    /// Orthonormal basis (as columns) of the range, truncated at the rank.
    pub fn range_basis(&self, tol_factor: f64) -> Mat {
        let r = self.rank(tol_factor);
        let idx: Vec<usize> = (0..r).collect();
        self.u.select_cols(&idx)
    }
}

/// One-sided (Hestenes) Jacobi on the columns of a tall matrix.
fn jacobi_svd(m: &Mat) -> Svd {
    let (rows, n) = m.shape();
    // Tall inputs are first reduced to their triangular factor; the Jacobi
    // sweeps then run on short columns.
    if rows > 2 * n && n > 0 {
        let (q, r) = householder_qr(m);
        let inner = jacobi_svd(&r);
        return Svd {
            u: q.matmul(&inner.u),
            s: inner.s,
            v: inner.v,
        };
    }
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let eps = f64::EPSILON;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = a.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = a.iter().enumerate().map(|(j, col)| (norm(col), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut u = Mat::zeros(rows, n);
    let mut vm = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..rows {
                u[(i, k)] = a[j][i] / sigma;
            }
        }
        for i in 0..n {
            vm[(i, k)] = v[j][i];
        }
    }
    Svd { u, s, v: vm }
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*xi, *yi);
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

/// Thin Householder QR of a tall matrix: `m = q r` with `q` having
/// orthonormal columns (`rows x n`) and `r` upper triangular (`n x n`).
pub fn householder_qr(m: &Mat) -> (Mat, Mat) {
    let (rows, n) = m.shape();
    assert!(rows >= n, "householder_qr expects a tall matrix");
    // Work column-major for locality.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let x = &a[k][k..];
        let alpha = norm(x);
        let mut v = x.to_vec();
        if alpha == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = norm(&v);
        for vi in &mut v {
            *vi /= vnorm;
        }
        for col in a.iter_mut().skip(k) {
            let proj = 2.0 * dot(&v, &col[k..]);
            for (ci, vi) in col[k..].iter_mut().zip(&v) {
                *ci -= proj * vi;
            }
        }
        reflectors.push(v);
    }
    let r = Mat::from_fn(n, n, |i, j| if i <= j { a[j][i] } else { 0.0 });
    // Accumulate Q by applying the reflectors to the first n unit vectors.
    let mut q = Mat::zeros(rows, n);
    for j in 0..n {
        let mut e = vec![0.0; rows];
        e[j] = 1.0;
        for k in (0..n).rev() {
            let v = &reflectors[k];
            if v.is_empty() {
                continue;
            }
            let proj = 2.0 * dot(v, &e[k..]);
            for (ei, vi) in e[k..].iter_mut().zip(v) {
                *ei -= proj * vi;
            }
        }
        for i in 0..rows {
            q[(i, j)] = e[i];
        }
    }
    (q, r)
}

/// Pseudo-inverse with the crate-wide rank tolerance.
pub fn pinv(m: &Mat) -> Result<Mat> {
    Ok(Svd::new(m)?.pinv(DEFAULT_RANK_TOL))
}

/// Orthonormalizes `v` against the columns of `basis` (two passes of
/// modified Gram-Schmidt) and returns the residual vector.
pub fn orthogonalize(basis: &Mat, v: &[f64]) -> Vec<f64> {
    let mut r = v.to_vec();
    for _ in 0..2 {
        for k in 0..basis.cols {
            let col = basis.col(k);
            let c = dot(&col, &r);
            for (ri, bi) in r.iter_mut().zip(&col) {
                *ri -= c * bi;
            }
        }
    }
    r
}

/// Extends orthonormal columns to a full orthonormal basis of `R^d`, greedily
/// adding the coordinate direction with the largest residual at each step.
/// Returns only the new columns (`d x (d - r)`).
pub fn complete_basis(basis: &Mat) -> Mat {
    let d = basis.rows;
    let mut full = basis.clone();
    let mut added = Mat::zeros(d, 0);
    while full.cols < d {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            let r = orthogonalize(&full, &e);
            let n = norm(&r);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, r));
            }
        }
        let (n, r) = best.expect("d > 0 when the basis is incomplete");
        let unit: Vec<f64> = r.iter().map(|x| x / n).collect();
        let col = Mat::column(&unit);
        full = full.hcat(&col);
        added = added.hcat(&col);
    }
    added
}

/// Orthogonal projector `V V^T` for orthonormal columns `V`.
pub fn projector(basis: &Mat) -> Mat {
    basis.matmul_t(basis)
}
