//! Dense linear algebra for small filtering problems.
//!
//! Matrices and vectors are `nalgebra` dynamic types; this module adds the
//! handful of operations the filters need on top of them: checked products,
//! SPD solves with a single jitter retry, PSD square-root factors for
//! sampling, and spectral quantities of symmetric matrices.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance used when checking symmetry of an input.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Scale of the diagonal jitter added on a failed factorization,
/// relative to the mean diagonal entry.
pub const JITTER_SCALE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatError {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is not positive definite (after jitter)")]
    NotPositiveDefinite,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("block tiling is inconsistent: {0}")]
    InvalidTiling(String),
}

pub fn multiply(a: &Matrix, b: &Matrix) -> Result<Matrix, MatError> {
    if a.ncols() != b.nrows() {
        return Err(MatError::DimensionMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(a * b)
}

/// Replaces `m` by `(m + mᵀ) / 2` in place.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: Matrix) -> Matrix {
    symmetrize(&mut m);
    m
}

fn max_asymmetry(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(a: &Matrix) -> Result<(), MatError> {
    if a.nrows() != a.ncols() {
        return Err(MatError::DimensionMismatch {
            left: a.shape(),
            right: (a.ncols(), a.nrows()),
        });
    }
    let scale = a.amax().max(1.0);
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL * scale {
        return Err(MatError::NotSymmetric(asym));
    }
    Ok(())
}

fn jitter(a: &Matrix) -> f64 {
    let n = a.nrows().max(1) as f64;
    JITTER_SCALE * a.trace().abs() / n
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// On failure the factorization is retried once with `1e-9·tr(a)/n` added
/// to the diagonal.
pub fn cholesky(a: &Matrix) -> Result<Matrix, MatError> {
    check_symmetric(a)?;
    let sym = symmetrized(a.clone());
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.l());
    }
    let eps = jitter(&sym);
    if eps > 0.0 {
        let n = sym.nrows();
        let bumped = sym + Matrix::identity(n, n) * eps;
        if let Some(c) = bumped.cholesky() {
            return Ok(c.l());
        }
    }
    Err(MatError::NotPositiveDefinite)
}

/// Solves `a·x = b` for symmetric positive definite `a` via Cholesky.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Result<Matrix, MatError> {
    if a.nrows() != b.nrows() {
        return Err(MatError::DimensionMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    let l = cholesky(a)?;
    Ok(solve_with_factor(&l, b))
}

/// Solves `L·Lᵀ·x = b` given the lower factor `L`.
pub fn solve_with_factor(l: &Matrix, b: &Matrix) -> Matrix {
    let y = l
        .solve_lower_triangular(b)
        .expect("cholesky factor has a nonzero diagonal");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("cholesky factor has a nonzero diagonal")
}

/// Square-root factor `L` with `L·Lᵀ ≈ a` for a PSD covariance.
///
/// A zero matrix yields a zero factor so that degenerate covariances still
/// produce (degenerate) samples; otherwise the Cholesky jitter policy applies.
pub fn psd_factor(a: &Matrix) -> Result<Matrix, MatError> {
    check_symmetric(a)?;
    if a.iter().all(|&v| v == 0.0) {
        return Ok(Matrix::zeros(a.nrows(), a.ncols()));
    }
    cholesky(a)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_eig_extrema(a: &Matrix) -> Result<(f64, f64), MatError> {
    check_symmetric(a)?;
    if a.nrows() == 0 {
        return Err(MatError::DimensionMismatch {
            left: (0, 0),
            right: (1, 1),
        });
    }
    let eig = symmetrized(a.clone()).symmetric_eigenvalues();
    Ok((eig.min(), eig.max()))
}

/// Spectral radius of a symmetric matrix.
pub fn symmetric_spectral_radius(a: &Matrix) -> Result<f64, MatError> {
    let (lo, hi) = symmetric_eig_extrema(a)?;
    Ok(lo.abs().max(hi.abs()))
}

/// One tile of a block matrix, anchored at `(row, col)` of the full matrix.
#[derive(Debug, Clone)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub matrix: Matrix,
}

/// Upper bound `Σ ρ(AᵢⱼᵀAᵢⱼ)^{1/2}` on the spectral radius of a square
/// matrix given as a tiling of blocks.
///
/// The tiles must cover the matrix exactly once; every tile contributes its
/// largest singular value.
pub fn spectral_radius_bound_blocks(blocks: &[Block]) -> Result<f64, MatError> {
    if blocks.is_empty() {
        return Err(MatError::InvalidTiling("no blocks".into()));
    }
    let rows = blocks
        .iter()
        .map(|b| b.row + b.matrix.nrows())
        .max()
        .unwrap_or(0);
    let cols = blocks
        .iter()
        .map(|b| b.col + b.matrix.ncols())
        .max()
        .unwrap_or(0);
    if rows != cols {
        return Err(MatError::InvalidTiling(format!(
            "tiles span {rows}x{cols}, not square"
        )));
    }
    let mut cover = vec![0u8; rows * cols];
    for b in blocks {
        for i in b.row..b.row + b.matrix.nrows() {
            for j in b.col..b.col + b.matrix.ncols() {
                cover[i * cols + j] += 1;
            }
        }
    }
    if let Some(pos) = cover.iter().position(|&c| c != 1) {
        return Err(MatError::InvalidTiling(format!(
            "entry ({}, {}) covered {} times",
            pos / cols,
            pos % cols,
            cover[pos]
        )));
    }
    let mut total = 0.0;
    for b in blocks {
        if b.matrix.is_empty() {
            continue;
        }
        let gram = b.matrix.transpose() * &b.matrix;
        total += symmetric_spectral_radius(&gram)?.max(0.0).sqrt();
    }
    Ok(total)
}

/// Splits a square matrix into a regular tiling with the given block sizes
/// along each axis.
pub fn tile(a: &Matrix, sizes: &[usize]) -> Result<Vec<Block>, MatError> {
    let total: usize = sizes.iter().sum();
    if a.nrows() != total || a.ncols() != total {
        return Err(MatError::InvalidTiling(format!(
            "block sizes sum to {total}, matrix is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut blocks = Vec::with_capacity(sizes.len() * sizes.len());
    let mut r = 0;
    for &rs in sizes {
        let mut c = 0;
        for &cs in sizes {
            blocks.push(Block {
                row: r,
                col: c,
                matrix: a.view((r, c), (rs, cs)).into_owned(),
            });
            c += cs;
        }
        r += rs;
    }
    Ok(blocks)
}

/// Lower-triangular matrix-vector product `out = L·z` on raw slices.
#[inline]
pub fn lower_mul_into(l: &Matrix, z: &[f64], out: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += l[(i, j)] * z[j];
        }
        out[i] = acc;
    }
}
