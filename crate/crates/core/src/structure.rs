//! Structural analysis of `(A, B)`: controllability and relevant-disturbance
//! Krylov matrices, minimal invariant subspaces, and the three-block
//! (controllable / relevant / irrelevant) decomposition.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Svd};

/// Tolerance for orthonormality of stored bases.
const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative tolerance for the invariance check in
/// [`relevant_disturbances_matrix`].
pub const INVARIANCE_TOL: f64 = 1e-8;

/// An `r`-dimensional subspace of `R^d`, stored as `d x r` orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceBasis {
    basis: Mat,
}

impl SubspaceBasis {
    pub fn new(basis: Mat) -> Result<SubspaceBasis> {
        if basis.cols() > basis.rows() {
            return Err(Error::Shape(format!(
                "basis {:?} has more columns than rows",
                basis.shape()
            )));
        }
        let gram = basis.t_matmul(&basis);
        if (&gram - &Mat::identity(basis.cols())).max_abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidParameter("basis columns are not orthonormal".into()));
        }
        Ok(SubspaceBasis { basis })
    }

    /// The zero subspace of `R^d`.
    pub fn zero(d: usize) -> SubspaceBasis {
        SubspaceBasis {
            basis: Mat::zeros(d, 0),
        }
    }

    /// Span of the given coordinate axes.
    pub fn coordinates(d: usize, axes: &[usize]) -> SubspaceBasis {
        let mut basis = Mat::zeros(d, axes.len());
        for (k, &i) in axes.iter().enumerate() {
            basis[(i, k)] = 1.0;
        }
        SubspaceBasis { basis }
    }

    /// Orthonormal basis for the column span of `m`.
    pub fn span_of(m: &Mat, tol_factor: f64) -> Result<SubspaceBasis> {
        if m.cols() == 0 {
            return Ok(SubspaceBasis::zero(m.rows()));
        }
        let svd = Svd::new(m)?;
        if svd.sigma_max() == 0.0 {
            return Ok(SubspaceBasis::zero(m.rows()));
        }
        Ok(SubspaceBasis {
            basis: svd.range_basis(tol_factor),
        })
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn dim_ambient(&self) -> usize {
        self.basis.rows()
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// Orthogonal projector `V V^T`.
    pub fn projector(&self) -> Mat {
        linalg::projector(&self.basis)
    }

    /// `|P_other P_self - P_self|_F`, zero when `self` lies inside `other`.
    pub fn containment_residual(&self, other: &SubspaceBasis) -> f64 {
        let p_self = self.projector();
        (&other.projector().matmul(&p_self) - &p_self).frobenius()
    }
}

/// Orthonormal bases for the input span, the controllable subspace, and the
/// relevant subspace, with the block-form reconstruction residual.
#[derive(Clone, Debug)]
pub struct PcPartition {
    pub p_b: SubspaceBasis,
    pub p_c: SubspaceBasis,
    pub p_r: SubspaceBasis,
    /// `|A - (Pc A Pc + Pr A (Pr - Pc) + (I - Pr) A (I - Pc))|_F`.
    pub residual: f64,
}

impl PcPartition {
    /// Controllable dimension `s_c`.
    pub fn s_c(&self) -> usize {
        self.p_c.dim()
    }

    /// Relevant dimension `s = s_c + s_e`.
    pub fn s(&self) -> usize {
        self.p_r.dim()
    }

    /// Relevant-but-uncontrollable dimension `s_e`.
    pub fn s_e(&self) -> usize {
        self.s() - self.s_c()
    }
}

/// Coordinate-aligned view of the three blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityBlocks {
    pub block1: Vec<usize>,
    pub block2: Vec<usize>,
    pub block3: Vec<usize>,
}

impl SparsityBlocks {
    pub fn new(d: usize, block1: Vec<usize>, block2: Vec<usize>, block3: Vec<usize>) -> Result<SparsityBlocks> {
        let mut seen = vec![false; d];
        for &i in block1.iter().chain(&block2).chain(&block3) {
            if i >= d || seen[i] {
                return Err(Error::InvalidParameter(format!(
                    "blocks must partition 0..{d}; index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter(format!("blocks do not cover 0..{d}")));
        }
        Ok(SparsityBlocks { block1, block2, block3 })
    }

    /// Contiguous blocks of sizes `s_c`, `s_e`, `d - s_c - s_e`.
    pub fn contiguous(s_c: usize, s_e: usize, d: usize) -> SparsityBlocks {
        SparsityBlocks {
            block1: (0..s_c).collect(),
            block2: (s_c..s_c + s_e).collect(),
            block3: (s_c + s_e..d).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.block1.len() + self.block2.len() + self.block3.len()
    }

    /// Blocks 1 and 2 together.
    pub fn relevant(&self) -> Vec<usize> {
        let mut out = self.block1.clone();
        out.extend(&self.block2);
        out.sort_unstable();
        out
    }

    /// Diagonal matrix with ones on blocks 1-2 and zeros on block 3.
    pub fn relevant_indicator(&self) -> Mat {
        let mut diag = vec![0.0; self.d()];
        for i in self.relevant() {
            diag[i] = 1.0;
        }
        Mat::from_diag(&diag)
    }
}

/// `[B, AB, ..., A^{d-1} B]`.
pub fn controllability_matrix(a: &Mat, b: &Mat) -> Result<Mat> {
    if !a.is_square() || b.rows() != a.rows() {
        return Err(Error::Shape(format!(
            "controllability of A {:?} and B {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let d = a.rows();
    let du = b.cols();
    let mut out = Mat::zeros(d, d * du);
    let mut block = b.clone();
    for k in 0..d {
        out.set_block(0, k * du, &block);
        if k + 1 < d {
            block = a.matmul(&block);
        }
    }
    Ok(out)
}

/// Number of singular values above `tol_factor * max(rows, cols) * sigma_max`.
pub fn numeric_rank(m: &Mat, tol_factor: f64) -> Result<usize> {
    if !(tol_factor > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol_factor must be positive, got {tol_factor}"
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("numeric_rank input".into()));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(0);
    }
    Ok(Svd::new(m)?.rank(tol_factor))
}

/// Relevant-disturbances matrix for a controllable subspace `p_c`.
///
/// With `T = [V_c | V_perp]` the rotated dynamics `T'AT` has the
/// upper block-triangular form `[[X1, X12], [0, X2]]`; the result is
/// `[X12', X2' X12', ..., (X2')^{d - s_c} X12']`.
pub fn relevant_disturbances_matrix(a: &Mat, p_c: &SubspaceBasis) -> Result<Mat> {
    if !a.is_square() || p_c.dim_ambient() != a.rows() {
        return Err(Error::Shape(format!(
            "A {:?} with a subspace of R^{}",
            a.shape(),
            p_c.dim_ambient()
        )));
    }
    let d = a.rows();
    let pc = p_c.projector();
    let leak = (&Mat::identity(d) - &pc).matmul(a).matmul(&pc).frobenius();
    let tolerance = INVARIANCE_TOL * (1.0 + a.frobenius());
    if leak > tolerance {
        return Err(Error::InvariantViolation {
            residual: leak,
            tolerance,
        });
    }
    let s_c = p_c.dim();
    let m = d - s_c;
    let complement = linalg::complete_basis(p_c.basis());
    let t = p_c.basis().hcat(&complement);
    let rotated = t.t_matmul(&a.matmul(&t));
    let head: Vec<usize> = (0..s_c).collect();
    let tail: Vec<usize> = (s_c..d).collect();
    let x12_t = rotated.select(&head, &tail).transpose();
    let x2_t = rotated.select(&tail, &tail).transpose();
    let mut out = Mat::zeros(m, s_c * (m + 1));
    let mut block = x12_t;
    for k in 0..=m {
        out.set_block(0, k * s_c, &block);
        if k < m {
            block = x2_t.matmul(&block);
        }
    }
    Ok(out)
}

/// Smallest subspace containing `seed` and closed under `a`, built by an
/// Arnoldi-style sweep: every basis vector is mapped through `a`,
/// orthogonalized against the current basis, and kept when the residual
/// exceeds `tol_factor * d * max(|A|_F, 1)`.
pub fn minimal_invariant_subspace(a: &Mat, seed: &SubspaceBasis, tol_factor: f64) -> Result<SubspaceBasis> {
    if !a.is_square() || seed.dim_ambient() != a.rows() {
        return Err(Error::Shape(format!(
            "A {:?} with a subspace of R^{}",
            a.shape(),
            seed.dim_ambient()
        )));
    }
    let d = a.rows();
    let cut = tol_factor * d as f64 * a.frobenius().max(1.0);
    let mut basis = seed.basis().clone();
    let mut pending: VecDeque<usize> = (0..basis.cols()).collect();
    while let Some(k) = pending.pop_front() {
        if basis.cols() == d {
            break;
        }
        let image = a.matvec(&basis.col(k));
        let residual = linalg::orthogonalize(&basis, &image);
        let norm = linalg::dot(&residual, &residual).sqrt();
        if norm > cut {
            let unit: Vec<f64> = residual.iter().map(|x| x / norm).collect();
            basis = basis.hcat(&Mat::column(&unit));
            pending.push_back(basis.cols() - 1);
        }
    }
    Ok(SubspaceBasis { basis })
}

/// Controllable and relevant subspaces of `(A, B)` and the block-form
/// reconstruction residual.
pub fn pc_decompose(a: &Mat, b: &Mat, tol_factor: f64) -> Result<PcPartition> {
    if !a.is_square() || b.rows() != a.rows() {
        return Err(Error::Shape(format!("A {:?} and B {:?}", a.shape(), b.shape())));
    }
    let d = a.rows();
    let eye = Mat::identity(d);
    let p_b = SubspaceBasis::span_of(b, tol_factor)?;
    let p_c = minimal_invariant_subspace(a, &p_b, tol_factor)?;
    let pc = p_c.projector();
    let not_c = &eye - &pc;
    let reverse = not_c.matmul(&a.transpose());
    let p_r = minimal_invariant_subspace(&reverse, &p_c, tol_factor)?;
    let pr = p_r.projector();
    let not_r = &eye - &pr;
    let rebuilt = &(&pc.matmul(a).matmul(&pc) + &pr.matmul(a).matmul(&(&pr - &pc))) + &not_r.matmul(a).matmul(&not_c);
    let residual = (a - &rebuilt).frobenius();
    Ok(PcPartition {
        p_b,
        p_c,
        p_r,
        residual,
    })
}

/// Coordinate blocks read off the sparsity graph with edge `j -> i` whenever
/// `|A(i, j)| > zero_tol`.
///
/// Block 1 is everything reachable from the actuated coordinates (rows of
/// `B` with an entry above `zero_tol`); block 2 is every other coordinate
/// with a path into block 1; block 3 is the rest.
pub fn block_partition_sparsity(a: &Mat, b: &Mat, zero_tol: f64) -> SparsityBlocks {
    let d = a.rows();
    let mut in_block1 = vec![false; d];
    let mut stack: Vec<usize> = (0..d)
        .filter(|&i| i < b.rows() && b.row(i).iter().any(|v| v.abs() > zero_tol))
        .collect();
    for &i in &stack {
        in_block1[i] = true;
    }
    while let Some(j) = stack.pop() {
        for i in 0..d {
            if !in_block1[i] && a[(i, j)].abs() > zero_tol {
                in_block1[i] = true;
                stack.push(i);
            }
        }
    }
    // Backward search from block 1 along reversed edges.
    let mut reaches = in_block1.clone();
    let mut stack: Vec<usize> = (0..d).filter(|&i| in_block1[i]).collect();
    while let Some(i) = stack.pop() {
        for j in 0..d {
            if !reaches[j] && a[(i, j)].abs() > zero_tol {
                reaches[j] = true;
                stack.push(j);
            }
        }
    }
    let block1 = (0..d).filter(|&i| in_block1[i]).collect();
    let block2 = (0..d).filter(|&i| reaches[i] && !in_block1[i]).collect();
    let block3 = (0..d).filter(|&i| !reaches[i]).collect();
    SparsityBlocks { block1, block2, block3 }
}

/// `max_i sum_j |M(i, j)|`.
pub fn linf_block_norm(m: &Mat) -> f64 {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_RANK_TOL;

    fn m(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn controllability_examples() {
        let g = controllability_matrix(&Mat::identity(2), &Mat::column(&[1.0, 0.0])).unwrap();
        assert_eq!(g, m(&[&[1.0, 1.0], &[0.0, 0.0]]));

        let a = m(&[&[1.0, 1.0], &[0.0, 0.5]]);
        let g = controllability_matrix(&a, &Mat::column(&[1.0, 0.0])).unwrap();
        assert_eq!(g, m(&[&[1.0, 1.0], &[0.0, 0.0]]));
        assert_eq!(numeric_rank(&g, DEFAULT_RANK_TOL).unwrap(), 1);

        let shift = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let g = controllability_matrix(&shift, &Mat::column(&[0.0, 1.0])).unwrap();
        assert_eq!(g, m(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(numeric_rank(&g, DEFAULT_RANK_TOL).unwrap(), 2);

        assert!(controllability_matrix(&Mat::identity(2), &Mat::column(&[1.0])).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numeric_rank(&Mat::zeros(4, 3), DEFAULT_RANK_TOL).unwrap(), 0);
        assert_eq!(numeric_rank(&Mat::identity(5), DEFAULT_RANK_TOL).unwrap(), 5);
        let u = [0.3, -1.2, 2.0, 0.7, -0.1, 1.5];
        let v = [1.1, 0.4, -0.9, 2.2, -1.7, 0.05];
        let outer = Mat::from_fn(6, 6, |i, j| u[i] * v[j]);
        assert_eq!(numeric_rank(&outer, DEFAULT_RANK_TOL).unwrap(), 1);
        assert!(numeric_rank(&outer, 0.0).is_err());
    }

    #[test]
    fn invariant_subspace_examples() {
        let seed = SubspaceBasis::coordinates(3, &[1]);
        let same = minimal_invariant_subspace(&Mat::identity(3), &seed, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(same, seed);

        let shift = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let full = minimal_invariant_subspace(&shift, &SubspaceBasis::coordinates(2, &[1]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(full.dim(), 2);

        let a = m(&[&[1.0, 1.0], &[0.0, 0.5]]);
        let e1 = SubspaceBasis::coordinates(2, &[0]);
        assert_eq!(minimal_invariant_subspace(&a, &e1, DEFAULT_RANK_TOL).unwrap(), e1);
    }

    #[test]
    fn relevant_disturbances_examples() {
        // Decoupled: X12 = 0.
        let a = Mat::from_diag(&[1.0, 0.5, 0.3]);
        let pc = SubspaceBasis::coordinates(3, &[0]);
        let rd = relevant_disturbances_matrix(&a, &pc).unwrap();
        assert_eq!(numeric_rank(&rd, DEFAULT_RANK_TOL).unwrap(), 0);

        let counter = |r1: f64, r2: f64| m(&[&[1.0, 1.0, 1.0], &[0.0, r1, 0.0], &[0.0, 0.0, r2]]);
        let rd = relevant_disturbances_matrix(&counter(0.3, 0.7), &pc).unwrap();
        assert_eq!(rd.shape(), (2, 3));
        assert_eq!(numeric_rank(&rd, DEFAULT_RANK_TOL).unwrap(), 2);
        let rd = relevant_disturbances_matrix(&counter(0.5, 0.5), &pc).unwrap();
        assert_eq!(numeric_rank(&rd, DEFAULT_RANK_TOL).unwrap(), 1);
    }

    #[test]
    fn relevant_disturbances_rejects_non_invariant_subspace() {
        let a = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let err = relevant_disturbances_matrix(&a, &SubspaceBasis::coordinates(2, &[0])).unwrap_err();
        assert!(matches!(err, Error::InvariantViolation { .. }));
    }

    #[test]
    fn decompose_without_inputs() {
        let a = m(&[&[0.4, 0.2], &[-0.3, 0.9]]);
        let part = pc_decompose(&a, &Mat::zeros(2, 1), DEFAULT_RANK_TOL).unwrap();
        assert_eq!((part.s_c(), part.s()), (0, 0));
        assert_eq!(part.residual, 0.0);
    }

    #[test]
    fn decompose_counterexample_family() {
        let a = m(&[&[1.0, 1.0, 1.0], &[0.0, 0.3, 0.0], &[0.0, 0.0, 0.7]]);
        let part = pc_decompose(&a, &Mat::column(&[1.0, 0.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!((part.s_c(), part.s_e()), (1, 2));
        assert!(part.residual < 1e-12);
        assert!(part.p_b.containment_residual(&part.p_c) < 1e-8);
        assert!(part.p_c.containment_residual(&part.p_r) < 1e-8);
    }

    #[test]
    fn sparsity_blocks_of_three_block_exemplar() {
        let a = m(&[&[0.5, 0.7, 0.0], &[0.0, 0.9, 0.0], &[0.0, -0.4, 0.2]]);
        let blocks = block_partition_sparsity(&a, &Mat::column(&[1.0, 0.0, 0.0]), 0.0);
        assert_eq!(
            blocks,
            SparsityBlocks {
                block1: vec![0],
                block2: vec![1],
                block3: vec![2]
            }
        );
    }

    #[test]
    fn sparsity_blocks_of_diagonal_system() {
        let a = Mat::from_diag(&[0.5, 0.6, 0.7, 0.8]);
        let blocks = block_partition_sparsity(&a, &Mat::column(&[1.0, 0.0, 0.0, 0.0]), 0.0);
        assert_eq!(blocks.block1, vec![0]);
        assert!(blocks.block2.is_empty());
        assert_eq!(blocks.block3, vec![1, 2, 3]);
    }

    #[test]
    fn influence_out_of_block_two_lands_in_block_three() {
        // Only A(2,1) couples: coordinate 1 feeds coordinate 2, nothing feeds 0.
        let mut a = Mat::zeros(3, 3);
        a[(2, 1)] = 0.8;
        let blocks = block_partition_sparsity(&a, &Mat::column(&[1.0, 0.0, 0.0]), 0.0);
        assert_eq!(blocks.block1, vec![0]);
        assert!(blocks.block2.is_empty());
        assert_eq!(blocks.block3, vec![1, 2]);
    }

    #[test]
    fn linf_examples() {
        assert_eq!(linf_block_norm(&Mat::from_diag(&[0.9, -0.9])), 0.9);
        assert!((linf_block_norm(&m(&[&[0.5, 0.4], &[0.0, 0.3]])) - 0.9).abs() < 1e-15);
        assert_eq!(linf_block_norm(&Mat::zeros(3, 3)), 0.0);
    }

    #[test]
    fn blocks_must_partition() {
        assert!(SparsityBlocks::new(3, vec![0], vec![1], vec![2]).is_ok());
        assert!(SparsityBlocks::new(3, vec![0], vec![0], vec![2]).is_err());
        assert!(SparsityBlocks::new(3, vec![0], vec![1], vec![]).is_err());
    }
}
