//! Vector p-norms, induced matrix norms, matrix measures (logarithmic norms)
//! and the block-matrix bounds used to certify networks.
//!
//! Only `p ∈ {1, 2, ∞}` are supported. The 2-norm and 2-measure go through a
//! cyclic Jacobi eigen solver on a symmetric matrix, which is deterministic
//! and more than fast enough for the `3n × 3n` blocks this crate works with.
//!
//! The composite G-norm of a stacked vector `x = [x_1; …; x_N]` is
//! `|x|_G = max_i |x_i|_p`. The outer norm is always the (monotone) ∞-norm.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convergence tolerance of the Jacobi sweeps (relative off-diagonal mass).
pub const JACOBI_TOLERANCE: f64 = 1e-12;
/// Maximum number of full Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PNorm {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl PNorm {
    pub const ALL: [PNorm; 3] = [PNorm::One, PNorm::Two, PNorm::Inf];
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PNorm::One => f.write_str("1"),
            PNorm::Two => f.write_str("2"),
            PNorm::Inf => f.write_str("inf"),
        }
    }
}

/// Dense real matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries. Rejects non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// `s · I_n`
    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = s;
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Kronecker product `self ⊗ I_n`.
    pub fn kron_identity(&self, n: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows * n, self.cols * n);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self[(r, c)];
                if v != 0.0 {
                    for k in 0..n {
                        out[(r * n + k, c * n + k)] = v;
                    }
                }
            }
        }
        out
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        for r in 0..block.rows {
            for c in 0..block.cols {
                self[(r0 + r, c0 + c)] = block[(r, c)];
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out[(r, c)] = self[(r0 + r, c0 + c)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn vec_norm(p: PNorm, v: &[f64]) -> f64 {
    match p {
        PNorm::One => v.iter().map(|x| x.abs()).sum(),
        PNorm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        PNorm::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// Induced matrix norm. Works for rectangular matrices.
pub fn mat_norm(p: PNorm, a: &Matrix) -> Result<f64> {
    match p {
        PNorm::One => Ok((0..a.cols)
            .map(|c| (0..a.rows).map(|r| a[(r, c)].abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        PNorm::Inf => Ok((0..a.rows)
            .map(|r| a.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        PNorm::Two => {
            if a.is_zero() {
                return Ok(0.0);
            }
            let gram = a.transpose().matmul(a)?;
            let eig = symmetric_eigenvalues(&gram)?;
            let top = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(top.max(0.0).sqrt())
        }
    }
}

/// Matrix measure `μ_p(A) = lim_{h→0⁺} (‖I + hA‖_p − 1)/h`.
pub fn mat_measure(p: PNorm, a: &Matrix) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "matrix measure needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    match p {
        PNorm::One => Ok((0..n)
            .map(|j| {
                a[(j, j)]
                    + (0..n)
                        .filter(|&i| i != j)
                        .map(|i| a[(i, j)].abs())
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)),
        PNorm::Inf => Ok((0..n)
            .map(|i| {
                a[(i, i)]
                    + (0..n)
                        .filter(|&j| j != i)
                        .map(|j| a[(i, j)].abs())
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)),
        PNorm::Two => {
            let mut sym = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    sym[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
                }
            }
            let eig = symmetric_eigenvalues(&sym)?;
            Ok(eig.into_iter().fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
///
/// Only the upper triangle is trusted to be consistent with the lower one;
/// the caller is responsible for passing a symmetric matrix.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let mut m = a.clone();
    let total: f64 = m.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if total == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let off = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&m) <= JACOBI_TOLERANCE * total {
            return Ok((0..n).map(|i| m[(i, i)]).collect());
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    if off(&m) <= JACOBI_TOLERANCE * total {
        return Ok((0..n).map(|i| m[(i, i)]).collect());
    }
    Err(Error::Convergence {
        what: "Jacobi eigen solver",
        iterations: JACOBI_MAX_SWEEPS,
    })
}

/// Composite norm `|x|_G = max_i |x_i|_p` with per-block inner p-norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GNorm {
    pub inner: PNorm,
}

impl GNorm {
    pub fn new(inner: PNorm) -> Self {
        GNorm { inner }
    }
}

pub fn g_norm(g: GNorm, dims: &[usize], v: &[f64]) -> Result<f64> {
    let total: usize = dims.iter().sum();
    if total != v.len() {
        return Err(Error::Dimension(format!(
            "stacked vector has length {} but blocks sum to {total}",
            v.len()
        )));
    }
    let mut offset = 0;
    let mut best = 0.0f64;
    for &d in dims {
        best = best.max(vec_norm(g.inner, &v[offset..offset + d]));
        offset += d;
    }
    Ok(best)
}

/// N×N grid of blocks; block `(i, j)` is `dims[i] × dims[j]`.
/// `None` is the canonical zero block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    dims: Vec<usize>,
    blocks: Vec<Option<Matrix>>,
}

impl BlockMatrix {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.len();
        BlockMatrix {
            dims,
            blocks: vec![None; n * n],
        }
    }

    pub fn uniform(n_blocks: usize, block_dim: usize) -> Self {
        BlockMatrix::zeros(vec![block_dim; n_blocks])
    }

    pub fn block_diagonal(blocks: Vec<Matrix>) -> Result<Self> {
        let dims = blocks.iter().map(|b| b.rows()).collect();
        let mut out = BlockMatrix::zeros(dims);
        for (i, b) in blocks.into_iter().enumerate() {
            out.set(i, i, b)?;
        }
        Ok(out)
    }

    pub fn n_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&Matrix> {
        self.blocks[i * self.dims.len() + j].as_ref()
    }

    /// Block `(i, j)`, materialising zero blocks.
    pub fn block(&self, i: usize, j: usize) -> Matrix {
        self.get(i, j)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(self.dims[i], self.dims[j]))
    }

    pub fn set(&mut self, i: usize, j: usize, m: Matrix) -> Result<()> {
        let n = self.dims.len();
        if i >= n || j >= n {
            return Err(Error::Dimension(format!(
                "block index ({i}, {j}) outside {n}x{n} grid"
            )));
        }
        if m.rows() != self.dims[i] || m.cols() != self.dims[j] {
            return Err(Error::Dimension(format!(
                "block ({i}, {j}) must be {}x{}, got {}x{}",
                self.dims[i],
                self.dims[j],
                m.rows(),
                m.cols()
            )));
        }
        self.blocks[i * n + j] = if m.is_zero() { None } else { Some(m) };
        Ok(())
    }

    /// Nonzero blocks of block-row `i` as `(j, block)`.
    pub fn row_blocks(&self, i: usize) -> impl Iterator<Item = (usize, &Matrix)> {
        let n = self.dims.len();
        self.blocks[i * n..(i + 1) * n]
            .iter()
            .enumerate()
            .filter_map(|(j, b)| b.as_ref().map(|b| (j, b)))
    }

    pub fn to_dense(&self) -> Matrix {
        let total: usize = self.dims.iter().sum();
        let offsets: Vec<usize> = self
            .dims
            .iter()
            .scan(0, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect();
        let mut out = Matrix::zeros(total, total);
        for i in 0..self.n_blocks() {
            for (j, b) in self.row_blocks(i) {
                out.set_block(offsets[i], offsets[j], b);
            }
        }
        out
    }

    fn check_square_diagonal(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Dimension("empty block grid".into()));
        }
        Ok(())
    }
}

/// Upper bound on `μ_G(A)`: `max_i { μ_p(A_ii) + Σ_{j≠i} ‖A_ij‖_p }`.
pub fn lemma1_measure_bound(a: &BlockMatrix, inner: PNorm) -> Result<f64> {
    a.check_square_diagonal()?;
    let mut best = f64::NEG_INFINITY;
    for i in 0..a.n_blocks() {
        let mut row = mat_measure(inner, &a.block(i, i))?;
        for (j, b) in a.row_blocks(i) {
            if j != i {
                row += mat_norm(inner, b)?;
            }
        }
        best = best.max(row);
    }
    Ok(best)
}

/// Upper bound on `‖A‖_G`: `max_i Σ_j ‖A_ij‖_p`.
pub fn lemma1_norm_bound(a: &BlockMatrix, inner: PNorm) -> Result<f64> {
    a.check_square_diagonal()?;
    let mut best = 0.0f64;
    for i in 0..a.n_blocks() {
        let mut row = 0.0;
        for (_, b) in a.row_blocks(i) {
            row += mat_norm(inner, b)?;
        }
        best = best.max(row);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(r, c, data).unwrap()
    }

    fn nalgebra_norm2(a: &Matrix) -> f64 {
        let m = nalgebra::DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice());
        m.singular_values().max()
    }

    fn fd_measure(p: PNorm, a: &Matrix, h: f64) -> f64 {
        let n = a.rows();
        let m = Matrix::identity(n).add(&a.scale(h)).unwrap();
        let norm = match p {
            PNorm::Two => nalgebra_norm2(&m),
            _ => mat_norm(p, &m).unwrap(),
        };
        (norm - 1.0) / h
    }

    #[test]
    fn vec_norm_examples() {
        assert_eq!(vec_norm(PNorm::Inf, &[3.0, -4.0]), 4.0);
        assert_eq!(vec_norm(PNorm::Two, &[3.0, 4.0]), 5.0);
        assert_eq!(vec_norm(PNorm::One, &[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(vec_norm(PNorm::One, &[1.0, -2.0, 3.0]), 6.0);
    }

    #[test]
    fn matrix_rejects_non_finite() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn identity_norm_is_one() {
        for p in PNorm::ALL {
            for n in 1..5 {
                let v = mat_norm(p, &Matrix::identity(n)).unwrap();
                assert!((v - 1.0).abs() < 1e-14, "{p} {n} {v}");
            }
        }
    }

    #[test]
    fn inf_norm_row_sum() {
        let a = Matrix::from_rows(&[&[1.0, -2.0], &[0.0, 3.0]]).unwrap();
        assert_eq!(mat_norm(PNorm::Inf, &a).unwrap(), 3.0);
        assert_eq!(mat_norm(PNorm::One, &a).unwrap(), 5.0);
    }

    #[test]
    fn two_norm_dominates_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 5, 5);
        let norm = mat_norm(PNorm::Two, &a).unwrap();
        let mut est = 0.0f64;
        for _ in 0..10_000 {
            let mut x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nx = vec_norm(PNorm::Two, &x);
            x.iter_mut().for_each(|v| *v /= nx);
            est = est.max(vec_norm(PNorm::Two, &a.matvec(&x).unwrap()));
        }
        assert!(norm >= est - 1e-6, "{norm} < {est}");
        assert!((norm - nalgebra_norm2(&a)).abs() < 1e-10);
    }

    #[test]
    fn measure_examples() {
        let a = Matrix::from_rows(&[&[-2.0, 1.0], &[0.0, -3.0]]).unwrap();
        assert_eq!(mat_measure(PNorm::Inf, &a).unwrap(), -1.0);
        assert_eq!(mat_measure(PNorm::One, &a).unwrap(), -2.0);
        assert_eq!(mat_measure(PNorm::Two, &Matrix::zeros(3, 3)).unwrap(), 0.0);
        assert!(matches!(
            mat_measure(PNorm::Two, &Matrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn measure_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_matrix(&mut rng, 6, 6);
            for p in PNorm::ALL {
                let mu = mat_measure(p, &a).unwrap();
                let fd = fd_measure(p, &a, 1e-6);
                assert!((mu - fd).abs() < 1e-4, "{p}: {mu} vs {fd}");
            }
        }
    }

    #[test]
    fn closed_form_measures_converge_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 4, 4);
            let c = 10.0 * mat_norm(PNorm::Inf, &a).unwrap().powi(2).max(1.0);
            for p in [PNorm::One, PNorm::Inf] {
                let mu = mat_measure(p, &a).unwrap();
                for h in [1e-4, 1e-6] {
                    assert!((mu - fd_measure(p, &a, h)).abs() <= c * h);
                }
            }
        }
    }

    #[test]
    fn jacobi_diagonal_and_known_spectrum() {
        let a = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let mut e = symmetric_eigenvalues(&a).unwrap();
        e.sort_by(f64::total_cmp);
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn g_norm_examples() {
        let g2 = GNorm::new(PNorm::Two);
        assert_eq!(g_norm(g2, &[2, 2], &[3.0, 4.0, 0.0, 0.0]).unwrap(), 5.0);
        let gi = GNorm::new(PNorm::Inf);
        assert_eq!(g_norm(gi, &[1, 1, 1], &[-1.0, 2.0, -3.0]).unwrap(), 3.0);
        assert!(g_norm(g2, &[2, 2], &[1.0, 2.0, 3.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let direct = v[0].hypot(v[1]).max(v[2].hypot(v[3]));
        assert!((g_norm(g2, &[2, 2], &v).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn lemma1_simple_cases() {
        let blocks = vec![
            Matrix::diagonal(&[-1.0, -2.0]),
            Matrix::diagonal(&[-0.5, -3.0]),
        ];
        let a = BlockMatrix::block_diagonal(blocks).unwrap();
        for p in PNorm::ALL {
            assert!((lemma1_measure_bound(&a, p).unwrap() + 0.5).abs() < 1e-12);
        }
        let id = BlockMatrix::block_diagonal(vec![Matrix::identity(2); 3]).unwrap();
        assert!((lemma1_measure_bound(&id, PNorm::Two).unwrap() - 1.0).abs() < 1e-12);
        assert!((lemma1_norm_bound(&id, PNorm::Two).unwrap() - 1.0).abs() < 1e-12);

        let norms = BlockMatrix::block_diagonal(vec![
            Matrix::scaled_identity(2, 1.0),
            Matrix::scaled_identity(2, -3.0),
            Matrix::scaled_identity(2, 2.0),
        ])
        .unwrap();
        assert_eq!(lemma1_norm_bound(&norms, PNorm::Inf).unwrap(), 3.0);
        assert_eq!(lemma1_norm_bound(&BlockMatrix::uniform(3, 2), PNorm::Two).unwrap(), 0.0);
    }

    #[test]
    fn block_set_rejects_wrong_shape() {
        let mut a = BlockMatrix::uniform(2, 2);
        assert!(a.set(0, 1, Matrix::zeros(3, 2)).is_err());
        assert!(a.set(2, 0, Matrix::zeros(2, 2)).is_err());
    }

    proptest! {
        #[test]
        fn measure_bounded_by_norm(data in proptest::collection::vec(-10.0f64..10.0, 16)) {
            let a = Matrix::new(4, 4, data).unwrap();
            for p in PNorm::ALL {
                let mu = mat_measure(p, &a).unwrap();
                let nrm = mat_norm(p, &a).unwrap();
                prop_assert!(mu <= nrm + 1e-9);
                prop_assert!(mu >= -nrm - 1e-9);
            }
        }

        #[test]
        fn measure_subadditive(
            x in proptest::collection::vec(-5.0f64..5.0, 9),
            y in proptest::collection::vec(-5.0f64..5.0, 9),
        ) {
            let a = Matrix::new(3, 3, x).unwrap();
            let b = Matrix::new(3, 3, y).unwrap();
            let s = a.add(&b).unwrap();
            for p in PNorm::ALL {
                let lhs = mat_measure(p, &s).unwrap();
                let rhs = mat_measure(p, &a).unwrap() + mat_measure(p, &b).unwrap();
                prop_assert!(lhs <= rhs + 1e-9);
            }
        }

        #[test]
        fn g_norm_monotone(
            x in proptest::collection::vec(0.0f64..5.0, 6),
            bump in proptest::collection::vec(0.0f64..5.0, 6),
        ) {
            let y: Vec<f64> = x.iter().zip(&bump).map(|(a, b)| a + b).collect();
            for p in PNorm::ALL {
                let g = GNorm::new(p);
                prop_assert!(g_norm(g, &[2, 2, 2], &x).unwrap() <= g_norm(g, &[2, 2, 2], &y).unwrap());
            }
        }
    }
}
