//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalenet_core::dde::DelaySystem;
use scalenet_core::norms::{BlockMatrix, Matrix, PNorm};
use scalenet_core::Result;

/// `u̇ = a·u(t) + b·u(t − τ) + c`, constant history `u0`.
pub struct ScalarDde {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub tau: f64,
    pub u0: f64,
}

impl DelaySystem for ScalarDde {
    fn dim(&self) -> usize {
        1
    }
    fn t0(&self) -> f64 {
        0.0
    }
    fn delay(&self, _t: f64) -> f64 {
        self.tau
    }
    fn max_delay(&self) -> f64 {
        self.tau
    }
    fn has_delay_terms(&self) -> bool {
        self.b != 0.0
    }
    fn initial_state(&self, out: &mut [f64]) {
        out[0] = self.u0;
    }
    fn history(&self, _s: f64, out: &mut [f64]) {
        out[0] = self.u0;
    }
    fn rhs(&self, _t: f64, z: &[f64], zd: &[f64], dz: &mut [f64]) -> Result<()> {
        dz[0] = self.a * z[0] + self.b * zd[0] + self.c;
        Ok(())
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn to_na(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

/// Induced norm from first principles: column sums, SVD, row sums.
pub fn oracle_norm(p: PNorm, a: &DMatrix<f64>) -> f64 {
    match p {
        PNorm::One => (0..a.ncols()).map(|c| a.column(c).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max),
        PNorm::Inf => (0..a.nrows()).map(|r| a.row(r).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max),
        PNorm::Two => a.clone().svd(false, false).singular_values.max(),
    }
}

/// `(‖I + hA‖_p − 1)/h`.
pub fn fd_measure(p: PNorm, a: &Matrix, h: f64) -> f64 {
    let m = to_na(a);
    let n = m.nrows();
    let ih = DMatrix::<f64>::identity(n, n) + m * h;
    (oracle_norm(p, &ih) - 1.0) / h
}

pub fn random_block_matrix(rng: &mut ChaCha8Rng, blocks: usize, n: usize) -> BlockMatrix {
    let mut a = BlockMatrix::uniform(blocks, n);
    for i in 0..blocks {
        for j in 0..blocks {
            // leave some blocks empty to exercise sparsity
            if i == j || rng.random_range(0.0..1.0) < 0.7 {
                let scale = if i == j { 2.0 } else { 0.7 };
                a.set(i, j, random_matrix(rng, n, n).scale(scale)).unwrap();
            }
        }
    }
    a
}

fn block(a: &BlockMatrix, i: usize, j: usize) -> Matrix {
    a.block(i, j)
}

/// Limit of the cancellation-free difference quotient of `‖I + hA‖_G` for the
/// stacked norm `max_i |v_i|_p` with `n = 2` blocks.
///
/// * inner ∞: the G-norm is the flattened ∞-norm, so this is `μ_∞` of the dense matrix.
/// * inner 1: the unit G-ball is a product of cross-polytopes; the induced norm
///   is attained at a vertex, which are enumerated.
/// * inner 2: row `i` of the induced norm is `max_{|u|=1} Σ_j |M_ijᵀ u|`;
///   the unit circle is swept and the best angle refined by golden section.
pub fn fd_g_measure(a: &BlockMatrix, inner: PNorm, h: f64) -> f64 {
    let nb = a.n_blocks();
    let n = a.dims()[0];
    match inner {
        PNorm::Inf => {
            let d = a.to_dense();
            (0..d.rows())
                .map(|r| {
                    let row = d.row(r);
                    // (|1 + h a_rr| − 1)/h without cancellation
                    let diag = if h * row[r] > -1.0 { row[r] } else { ((1.0 + h * row[r]).abs() - 1.0) / h };
                    diag + row.iter().enumerate().filter(|(c, _)| *c != r).map(|(_, v)| v.abs()).sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max)
        }
        PNorm::One => {
            let mut best = f64::NEG_INFINITY;
            let verts = 2 * n;
            let total = verts.pow(nb as u32);
            for i in 0..nb {
                for mut code in 0..total {
                    // y = Σ_j A_ij v_j and the own-block vertex
                    let mut y = vec![0.0; n];
                    let mut own = (0usize, 1.0f64);
                    for j in 0..nb {
                        let v = code % verts;
                        code /= verts;
                        let (k, s) = (v / 2, if v % 2 == 0 { 1.0 } else { -1.0 });
                        if j == i {
                            own = (k, s);
                        }
                        let b = block(a, i, j);
                        for (r, yr) in y.iter_mut().enumerate() {
                            *yr += s * b[(r, k)];
                        }
                    }
                    // ‖e_k s + h y‖_1 − 1 over h
                    let (k, s) = own;
                    let mut val = 0.0;
                    for (r, yr) in y.iter().enumerate() {
                        if r == k {
                            val += if h * yr.abs() < 1.0 { s * yr } else { ((s + h * yr).abs() - 1.0) / h };
                        } else {
                            val += yr.abs();
                        }
                    }
                    best = best.max(val);
                }
            }
            best
        }
        PNorm::Two => {
            assert_eq!(n, 2, "the angle sweep oracle is two-dimensional");
            let mut best = f64::NEG_INFINITY;
            for i in 0..nb {
                let row = |phi: f64| {
                    let u = [phi.cos(), phi.sin()];
                    let mut val = 0.0;
                    for j in 0..nb {
                        let b = block(a, i, j);
                        // w = B_ijᵀ u
                        let w = [b[(0, 0)] * u[0] + b[(1, 0)] * u[1], b[(0, 1)] * u[0] + b[(1, 1)] * u[1]];
                        if j == i {
                            // (|u + h w| − 1)/h = (2 u·w + h |w|²)/(|u + h w| + 1)
                            let uw = u[0] * w[0] + u[1] * w[1];
                            let ww = w[0] * w[0] + w[1] * w[1];
                            let len = ((u[0] + h * w[0]).powi(2) + (u[1] + h * w[1]).powi(2)).sqrt();
                            val += (2.0 * uw + h * ww) / (len + 1.0);
                        } else {
                            val += w[0].hypot(w[1]);
                        }
                    }
                    val
                };
                let m = 20_000;
                let step = 2.0 * std::f64::consts::PI / m as f64;
                let (mut arg, mut val) = (0.0, f64::NEG_INFINITY);
                for k in 0..m {
                    let v = row(k as f64 * step);
                    if v > val {
                        val = v;
                        arg = k as f64 * step;
                    }
                }
                let (mut lo, mut hi) = (arg - step, arg + step);
                let g = 0.5 * (5f64.sqrt() - 1.0);
                for _ in 0..100 {
                    let x1 = hi - g * (hi - lo);
                    let x2 = lo + g * (hi - lo);
                    if row(x1) < row(x2) {
                        lo = x1;
                    } else {
                        hi = x2;
                    }
                }
                best = best.max(val.max(row(0.5 * (lo + hi))));
            }
            best
        }
    }
}

/// Richardson-extrapolated measure estimate.
pub fn g_measure_estimate(a: &BlockMatrix, inner: PNorm, h: f64) -> f64 {
    2.0 * fd_g_measure(a, inner, 0.5 * h) - fd_g_measure(a, inner, h)
}

/// Largest `‖Av‖_G` over random directions with `‖v‖_G = 1`.
pub fn random_direction_g_norm(a: &BlockMatrix, inner: PNorm, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = a.to_dense();
    let dims = a.dims().to_vec();
    let total: usize = dims.iter().sum();
    let g = scalenet_core::norms::GNorm::new(inner);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let mut v: Vec<f64> = (0..total).map(|_| rng.random_range(-1.0..1.0)).collect();
        // scale every block to unit inner norm
        let mut off = 0;
        for &dn in &dims {
            let nrm = scalenet_core::norms::vec_norm(inner, &v[off..off + dn]);
            if nrm > 0.0 {
                v[off..off + dn].iter_mut().for_each(|x| *x /= nrm);
            }
            off += dn;
        }
        let w = d.matvec(&v).unwrap();
        best = best.max(scalenet_core::norms::g_norm(g, &dims, &w).unwrap());
    }
    best
}
