//! Scalability / ramp-rejection certificate.
//!
//! With the augmented per-agent state `[x_i; ζ_i,1; ζ_i,2]` and the block
//! transformation `T = diag(T_1, …, T_N)`,
//!
//! ```text
//! T_i = [ I  α_i1·I   0     ]
//!       [ 0    I    α_i2·I  ]
//!       [ 0    0      I     ]
//! ```
//!
//! the closed loop is certified when, for all states,
//!
//! ```text
//! C2:  μ_p(T_i Ā_ii T_i⁻¹) + Σ_{j≠i} ‖T_i Ā_ij T_j⁻¹‖_p ≤ −σ̄
//! C3:  Σ_j ‖T_i B̄_ij T_j⁻¹‖_p ≤ σ̲
//! ```
//!
//! with `0 ≤ σ̲ < σ̄`. The decay rate `λ̂` solves `λ − σ̄ + σ̲·e^{λτ_max} = 0`
//! and the deviation obeys
//!
//! ```text
//! max_i |x_i − x*_i|_p ≤ κ e^{−λ̂(t−t0)} (init_dev + init_mplx) + κ/(σ̄ − σ̲) · w_sup
//! ```
//!
//! Two routes produce `σ̄, σ̲`: sampling the state space (a falsifier) and a
//! sample-free worst case for the diffusive `tanh` family (sound for all states).

use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halanay::halanay_rate;
use crate::network::{check_c1, C1Report, NetworkSystem, TanhFamily};
use crate::norms::{lemma1_norm_bound, mat_measure, mat_norm, vec_norm, BlockMatrix, Matrix, PNorm};

/// Number of violation witnesses kept in a report.
pub const MAX_WITNESSES: usize = 16;
/// Largest tensor grid the grid sampler will enumerate.
pub const MAX_GRID_POINTS: usize = 1_000_000;

/// Per-agent `(α_i1, α_i2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformT {
    alphas: Vec<(f64, f64)>,
}

impl TransformT {
    pub fn identity(agents: usize) -> Self {
        TransformT::homogeneous(agents, 0.0, 0.0)
    }

    pub fn homogeneous(agents: usize, alpha1: f64, alpha2: f64) -> Self {
        TransformT {
            alphas: vec![(alpha1, alpha2); agents],
        }
    }

    pub fn per_agent(alphas: Vec<(f64, f64)>) -> Self {
        TransformT { alphas }
    }

    pub fn agents(&self) -> usize {
        self.alphas.len()
    }

    pub fn alpha(&self, i: usize) -> (f64, f64) {
        self.alphas[i]
    }

    pub fn is_homogeneous(&self) -> bool {
        self.alphas.windows(2).all(|w| w[0] == w[1])
    }

    /// `T_i` of size `3n × 3n`.
    pub fn block(&self, i: usize, n: usize) -> Matrix {
        let (a1, a2) = self.alphas[i];
        small_t(a1, a2).kron_identity(n)
    }

    /// Closed-form `T_i⁻¹`: unit upper triangular with `(−α1, −α2, α1·α2)`.
    pub fn inverse_block(&self, i: usize, n: usize) -> Matrix {
        let (a1, a2) = self.alphas[i];
        Matrix::from_rows(&[&[1.0, -a1, a1 * a2], &[0.0, 1.0, -a2], &[0.0, 0.0, 1.0]])
            .expect("finite alpha")
            .kron_identity(n)
    }

    /// `κ_G(T) = ‖T‖_G ‖T⁻¹‖_G` via the block-diagonal norm bound.
    pub fn kappa(&self, n: usize, p: PNorm) -> Result<f64> {
        let t = BlockMatrix::block_diagonal((0..self.agents()).map(|i| self.block(i, n)).collect())?;
        let ti = BlockMatrix::block_diagonal(
            (0..self.agents()).map(|i| self.inverse_block(i, n)).collect(),
        )?;
        Ok(lemma1_norm_bound(&t, p)? * lemma1_norm_bound(&ti, p)?)
    }
}

fn small_t(a1: f64, a2: f64) -> Matrix {
    Matrix::from_rows(&[&[1.0, a1, 0.0], &[0.0, 1.0, a2], &[0.0, 0.0, 1.0]]).expect("finite alpha")
}

/// `Ā` and `B̄` evaluated at one point.
#[derive(Clone, Debug)]
pub struct AugmentedJacobians {
    pub abar: BlockMatrix,
    pub bbar: BlockMatrix,
    pub x: Vec<f64>,
    pub leader: Vec<f64>,
    pub t: f64,
}

/// Places a `3n × n` column block into the first block column of a `3n × 3n` matrix.
fn first_column(col: &Matrix, n: usize) -> Matrix {
    let mut m = Matrix::zeros(3 * n, 3 * n);
    m.set_block(0, 0, col);
    m
}

/// Builds `Ā_ii`, `Ā_ij` and `B̄_ij` at `(x, x_l, t)`.
pub fn assemble_blocks(
    sys: &NetworkSystem,
    x: &[f64],
    leader: &[f64],
    t: f64,
) -> Result<AugmentedJacobians> {
    let n = sys.n();
    let agents = sys.agent_count();
    if x.len() != n * agents {
        return Err(Error::Dimension(format!(
            "state has length {}, expected {}",
            x.len(),
            n * agents
        )));
    }
    if leader.len() != sys.leader().n * sys.leader().count {
        return Err(Error::Dimension("leader state length".into()));
    }
    let mut abar = BlockMatrix::uniform(agents, 3 * n);
    let mut bbar = BlockMatrix::uniform(agents, 3 * n);
    let chain = Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]])?.kron_identity(n);
    for i in 0..agents {
        let xi = &x[i * n..(i + 1) * n];
        let fj = sys.agents()[i].dynamics.jacobian(xi, t);
        let mut diag = chain.clone();
        diag.set_block(0, 0, &fj);
        for (j, col) in sys.couplings().delay_free_jacobian(i, x, leader, t) {
            if j == i {
                let cur = diag.block(0, 0, 3 * n, n);
                diag.set_block(0, 0, &cur.add(&col)?);
            } else {
                let existing = abar.block(i, j);
                abar.set(i, j, existing.add(&first_column(&col, n))?)?;
            }
        }
        abar.set(i, i, diag)?;
        for (j, col) in sys.couplings().delayed_jacobian(i, x, leader, t) {
            let existing = bbar.block(i, j);
            bbar.set(i, j, existing.add(&first_column(&col, n))?)?;
        }
    }
    Ok(AugmentedJacobians {
        abar,
        bbar,
        x: x.to_vec(),
        leader: leader.to_vec(),
        t,
    })
}

/// C2 row expression for agent `i`.
pub fn c2_row(jac: &AugmentedJacobians, t: &TransformT, i: usize, n: usize, p: PNorm) -> Result<f64> {
    let ti = t.block(i, n);
    let diag = ti.matmul(&jac.abar.block(i, i))?.matmul(&t.inverse_block(i, n))?;
    let mut row = mat_measure(p, &diag)?;
    for (j, b) in jac.abar.row_blocks(i) {
        if j != i {
            row += mat_norm(p, &ti.matmul(b)?.matmul(&t.inverse_block(j, n))?)?;
        }
    }
    Ok(row)
}

/// C3 row expression for agent `i`.
pub fn c3_row(jac: &AugmentedJacobians, t: &TransformT, i: usize, n: usize, p: PNorm) -> Result<f64> {
    let ti = t.block(i, n);
    let mut row = 0.0;
    for (j, b) in jac.bbar.row_blocks(i) {
        row += mat_norm(p, &ti.matmul(b)?.matmul(&t.inverse_block(j, n))?)?;
    }
    Ok(row)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampler {
    /// Full tensor grid with this many points per coordinate.
    Grid { points_per_axis: usize },
    Random { seed: u64, count: usize },
}

/// Box of states and sample times over which C2/C3 are checked.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub times: Vec<f64>,
    pub sampler: Sampler,
}

impl SampleRegion {
    /// Box `x*(t_ref) ± radius` on every coordinate.
    pub fn around_desired(sys: &NetworkSystem, t_ref: f64, radius: f64, times: Vec<f64>, sampler: Sampler) -> Self {
        let center = sys.desired_at(t_ref);
        SampleRegion {
            lower: center.iter().map(|c| c - radius).collect(),
            upper: center.iter().map(|c| c + radius).collect(),
            times,
            sampler,
        }
    }

    /// Sample states, deterministic for a given sampler.
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        let dim = self.lower.len();
        if dim == 0 || self.upper.len() != dim {
            return Err(Error::Dimension("region bounds must be nonempty and equal length".into()));
        }
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| !l.is_finite() || !u.is_finite() || l > u)
        {
            return Err(Error::Validation("region bounds must be finite with lower <= upper".into()));
        }
        if self.times.is_empty() {
            return Err(Error::Validation("region needs at least one sample time".into()));
        }
        match self.sampler {
            Sampler::Random { seed, count } => {
                if count == 0 {
                    return Err(Error::Validation("sample count must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..count)
                    .map(|_| {
                        self.lower
                            .iter()
                            .zip(&self.upper)
                            .map(|(&l, &u)| if u > l { rng.random_range(l..=u) } else { l })
                            .collect()
                    })
                    .collect())
            }
            Sampler::Grid { points_per_axis } => {
                if points_per_axis == 0 {
                    return Err(Error::Validation("grid needs at least one point per axis".into()));
                }
                let total = (points_per_axis as f64).powi(dim as i32);
                if total > MAX_GRID_POINTS as f64 {
                    return Err(Error::Validation(format!(
                        "grid of {points_per_axis}^{dim} points is too large; use the random sampler"
                    )));
                }
                let total = total as usize;
                let coord = |c: usize, k: usize| {
                    if points_per_axis == 1 {
                        0.5 * (self.lower[c] + self.upper[c])
                    } else {
                        self.lower[c]
                            + (self.upper[c] - self.lower[c]) * k as f64 / (points_per_axis - 1) as f64
                    }
                };
                Ok((0..total)
                    .map(|mut idx| {
                        (0..dim)
                            .map(|c| {
                                let k = idx % points_per_axis;
                                idx /= points_per_axis;
                                coord(c, k)
                            })
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViolationPoint {
    pub x: Vec<f64>,
    pub t: f64,
    pub agent: usize,
    /// Amount by which the condition is violated (positive).
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBound {
    /// `σ̄` candidate for C2, `σ̲` candidate for C3.
    pub value: f64,
    pub worst_agent: usize,
    pub worst_x: Vec<f64>,
    pub worst_t: f64,
    pub samples: usize,
    pub violations: Vec<ViolationPoint>,
}

fn sampled_rows<F>(sys: &NetworkSystem, region: &SampleRegion, mut row: F) -> Result<(f64, usize, Vec<f64>, f64, usize, Vec<ViolationPoint>)>
where
    F: FnMut(&AugmentedJacobians, usize) -> Result<f64>,
{
    if region.lower.len() != sys.n() * sys.agent_count() {
        return Err(Error::Dimension(format!(
            "region has {} coordinates, network state has {}",
            region.lower.len(),
            sys.n() * sys.agent_count()
        )));
    }
    let points = region.points()?;
    let mut worst = (f64::NEG_INFINITY, 0, Vec::new(), 0.0);
    let mut violations = Vec::new();
    let mut count = 0;
    for &t in &region.times {
        let leader = sys.leader().position_at(t);
        for x in &points {
            let jac = assemble_blocks(sys, x, &leader, t)?;
            count += 1;
            for i in 0..sys.agent_count() {
                let v = row(&jac, i)?;
                if v > worst.0 {
                    worst = (v, i, x.clone(), t);
                }
                if v >= 0.0 && violations.len() < MAX_WITNESSES {
                    violations.push(ViolationPoint {
                        x: x.clone(),
                        t,
                        agent: i,
                        margin: v,
                    });
                }
            }
        }
    }
    Ok((worst.0, worst.1, worst.2, worst.3, count, violations))
}

/// Sampled C2: `σ̄ = −max` of the row expression. Points with row ≥ 0 are witnesses.
pub fn check_c2(sys: &NetworkSystem, t: &TransformT, region: &SampleRegion, p: PNorm) -> Result<SampledBound> {
    check_transform(sys, t)?;
    let n = sys.n();
    let (worst, agent, x, wt, samples, violations) =
        sampled_rows(sys, region, |jac, i| c2_row(jac, t, i, n, p))?;
    Ok(SampledBound {
        value: -worst,
        worst_agent: agent,
        worst_x: x,
        worst_t: wt,
        samples,
        violations,
    })
}

/// Sampled C3: `σ̲ = max` of the delayed row sums.
pub fn check_c3(sys: &NetworkSystem, t: &TransformT, region: &SampleRegion, p: PNorm) -> Result<SampledBound> {
    check_transform(sys, t)?;
    let n = sys.n();
    let (worst, agent, x, wt, samples, _) =
        sampled_rows(sys, region, |jac, i| c3_row(jac, t, i, n, p))?;
    Ok(SampledBound {
        value: worst.max(0.0),
        worst_agent: agent,
        worst_x: x,
        worst_t: wt,
        samples,
        violations: Vec::new(),
    })
}

fn check_transform(sys: &NetworkSystem, t: &TransformT) -> Result<()> {
    if t.agents() != sys.agent_count() {
        return Err(Error::Dimension(format!(
            "transform has {} agents, network has {}",
            t.agents(),
            sys.agent_count()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticBounds {
    pub sigma_bar: f64,
    pub sigma_underbar: f64,
    pub worst_agent_c2: usize,
    pub worst_agent_c3: usize,
}

/// Sample-free bounds for the diffusive `tanh` family.
///
/// Every delayed Jacobian block is `k⁽τ⁾ ⊗ D` with `D` diagonal and entries in
/// `[0, k_ψ]` for neighbor blocks and `[−N̄ k_ψ, 0]` for the own block, because
/// `0 < tanh′ ≤ 1`. The C3 row is monotone in `|D|`, so its supremum is taken
/// at the slope cap with `N̄` neighbors. The delay-free part of this family is
/// linear, so C2 is state independent as long as the agent Jacobians are constant.
pub fn tanh_worstcase_bounds(sys: &NetworkSystem, t: &TransformT, p: PNorm) -> Result<AnalyticBounds> {
    check_transform(sys, t)?;
    let family: TanhFamily = sys.couplings().family().ok_or_else(|| {
        Error::NotApplicable("couplings are not of the diffusive tanh family".into())
    })?;
    let n = sys.n();
    let cap = family.neighbor_cap as f64;
    let col = |gains: &[f64; 3], scale: f64| -> Result<Matrix> {
        Ok(Matrix::new(3, 1, gains.iter().map(|g| g * scale).collect())?.kron_identity(n))
    };
    let off = first_column(&col(&family.delayed_gains, family.k_psi)?, n);
    let own = first_column(&col(&family.delayed_gains, -cap * family.k_psi)?, n);
    let x = sys.desired_at(sys.t0());
    let leader = sys.leader().position_at(sys.t0());
    let jac = assemble_blocks(sys, &x, &leader, sys.t0())?;

    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for i in 0..t.agents() {
        if !distinct.contains(&t.alpha(i)) {
            distinct.push(t.alpha(i));
        }
    }

    let mut c2 = (f64::NEG_INFINITY, 0);
    let mut c3 = (f64::NEG_INFINITY, 0);
    for i in 0..sys.agent_count() {
        if sys.agents()[i].dynamics.constant_jacobian().is_none() {
            return Err(Error::NotApplicable(format!("agent {i} has a state-dependent Jacobian")));
        }
        let row2 = c2_row(&jac, t, i, n, p)?;
        if row2 > c2.0 {
            c2 = (row2, i);
        }
        let ti = t.block(i, n);

        let mut worst_off = 0.0f64;
        for &(a1, a2) in &distinct {
            let tj_inv = TransformT::homogeneous(1, a1, a2).inverse_block(0, n);
            worst_off = worst_off.max(mat_norm(p, &ti.matmul(&off)?.matmul(&tj_inv)?)?);
        }
        let has_delay = family.k_psi > 0.0 && family.delayed_gains.iter().any(|&g| g != 0.0);
        let row3 = if has_delay {
            mat_norm(p, &ti.matmul(&own)?.matmul(&t.inverse_block(i, n))?)? + cap * worst_off
        } else {
            0.0
        };
        if row3 > c3.0 {
            c3 = (row3, i);
        }
    }
    Ok(AnalyticBounds {
        sigma_bar: -c2.0,
        sigma_underbar: c3.0.max(0.0),
        worst_agent_c2: c2.1,
        worst_agent_c3: c3.1,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Route {
    Sampled(SampleRegion),
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    Sampled,
    Analytic,
}

impl fmt::Display for RouteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteKind::Sampled => f.write_str("sampled"),
            RouteKind::Analytic => f.write_str("analytic"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificateReport {
    pub route: RouteKind,
    pub p: PNorm,
    pub alpha: Option<(f64, f64)>,
    pub tau_max: f64,
    pub c1: C1Report,
    pub sigma_bar: f64,
    pub sigma_underbar: f64,
    pub feasible: bool,
    pub lambda_hat: Option<f64>,
    pub kappa: f64,
    pub worst_agent_c2: usize,
    pub worst_agent_c3: usize,
    pub sample_count: usize,
    pub violation_points: Vec<ViolationPoint>,
}

impl CertificateReport {
    /// `σ̄ − σ̲`
    pub fn margin(&self) -> f64 {
        self.sigma_bar - self.sigma_underbar
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |v| format!("{v:.17e}"));
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(": ");
            s.push_str(&v);
            s.push('\n');
        };
        line("feasible", self.feasible.to_string());
        line("route", self.route.to_string());
        line("p", self.p.to_string());
        match self.alpha {
            Some((a1, a2)) => {
                line("alpha1", format!("{a1:.17e}"));
                line("alpha2", format!("{a2:.17e}"));
            }
            None => line("alpha", "per-agent".into()),
        }
        line("tau_max", format!("{:.17e}", self.tau_max));
        line("c1_pass", self.c1.pass.to_string());
        line("c1_residual", format!("{:.17e}", self.c1.max_residual));
        line("sigma_bar", format!("{:.17e}", self.sigma_bar));
        line("sigma_underbar", format!("{:.17e}", self.sigma_underbar));
        line("lambda_hat", opt(self.lambda_hat));
        line("kappa", format!("{:.17e}", self.kappa));
        line("worst_agent_c2", self.worst_agent_c2.to_string());
        line("worst_agent_c3", self.worst_agent_c3.to_string());
        line("sample_count", self.sample_count.to_string());
        line("violations", self.violation_points.len().to_string());
        for (k, v) in self.violation_points.iter().enumerate() {
            line(
                &format!("violation_{k}"),
                format!("agent={} t={:.17e} margin={:.17e}", v.agent, v.t, v.margin),
            );
        }
        s
    }
}

/// Combines C1, C2/C3, `λ̂` and `κ_G(T)` into a report.
pub fn certify(
    sys: &NetworkSystem,
    t: &TransformT,
    route: &Route,
    p: PNorm,
    tau_max: f64,
    c1_times: &[f64],
) -> Result<CertificateReport> {
    check_transform(sys, t)?;
    if !(tau_max.is_finite() && tau_max >= 0.0) {
        return Err(Error::Validation(format!("tau_max must be finite and >= 0, got {tau_max}")));
    }
    let c1 = check_c1(sys, c1_times, p);
    let (kind, sigma_bar, sigma_underbar, w2, w3, samples, violations) = match route {
        Route::Analytic => {
            let b = tanh_worstcase_bounds(sys, t, p)?;
            (RouteKind::Analytic, b.sigma_bar, b.sigma_underbar, b.worst_agent_c2, b.worst_agent_c3, 0, Vec::new())
        }
        Route::Sampled(region) => {
            let c2 = check_c2(sys, t, region, p)?;
            let c3 = check_c3(sys, t, region, p)?;
            (RouteKind::Sampled, c2.value, c3.value, c2.worst_agent, c3.worst_agent, c2.samples, c2.violations)
        }
    };
    let feasible = c1.pass && sigma_bar > 0.0 && sigma_underbar >= 0.0 && sigma_underbar < sigma_bar;
    let lambda_hat = if feasible {
        Some(halanay_rate(-sigma_bar, sigma_underbar, tau_max)?)
    } else {
        None
    };
    let alpha = if t.is_homogeneous() && t.agents() > 0 {
        Some(t.alpha(0))
    } else {
        None
    };
    Ok(CertificateReport {
        route: kind,
        p,
        alpha,
        tau_max,
        c1,
        sigma_bar,
        sigma_underbar,
        feasible,
        lambda_hat,
        kappa: t.kappa(sys.n(), p)?,
        worst_agent_c2: w2,
        worst_agent_c3: w3,
        sample_count: samples,
        violation_points: violations,
    })
}

/// Right-hand side of the deviation bound at `elapsed = t − t0`.
pub fn bound_eq5(
    report: &CertificateReport,
    init_dev: f64,
    init_mplx: f64,
    w_sup: f64,
    elapsed: f64,
) -> Result<f64> {
    let lambda = match (report.feasible, report.lambda_hat) {
        (true, Some(l)) => l,
        _ => return Err(Error::Infeasible("the bound needs a feasible certificate".into())),
    };
    if init_dev < 0.0 || init_mplx < 0.0 || w_sup < 0.0 || elapsed < 0.0 {
        return Err(Error::Validation("bound inputs must be nonnegative".into()));
    }
    Ok(report.kappa * (-lambda * elapsed).exp() * (init_dev + init_mplx)
        + report.kappa / report.margin() * w_sup)
}

/// Initial-window terms of the bound: `init_dev = max_i sup_s |x_i(s) − x*_i(t0)|_p`
/// and `init_mplx = max_i sup_s (|r_i,1(s) + d̄_i,0 + d̄_i,1·s|_p + |r_i,2(s) + d̄_i,1|_p)`
/// over `s ∈ [t0 − τ_max, t0]`, with `samples` points across the window.
pub fn initial_window_terms(sys: &NetworkSystem, p: PNorm, samples: usize) -> (f64, f64) {
    let layout = sys.layout();
    let n = layout.n;
    let t0 = sys.t0();
    let tau_max = sys.delay_function().tau_max();
    let desired = sys.desired_at(t0);
    let mut z = vec![0.0; layout.dim()];
    let mut dev = 0.0f64;
    let mut mplx = 0.0f64;
    let count = if tau_max > 0.0 { samples.max(2) } else { 1 };
    for k in 0..count {
        let s = if count == 1 {
            t0
        } else {
            t0 - tau_max + tau_max * k as f64 / (count - 1) as f64
        };
        if k + 1 == count {
            z.copy_from_slice(sys.initial());
        } else {
            sys.history_at(s, &mut z);
        }
        for (i, agent) in sys.agents().iter().enumerate() {
            let d = &agent.disturbance;
            let xi = &z[layout.x(i)];
            let e: Vec<f64> = (0..n).map(|c| xi[c] - desired[i * n + c]).collect();
            dev = dev.max(vec_norm(p, &e));
            let z1: Vec<f64> = (0..n).map(|c| z[layout.r1(i).start + c] + d.d0[c] + d.d1[c] * s).collect();
            let z2: Vec<f64> = (0..n).map(|c| z[layout.r2(i).start + c] + d.d1[c]).collect();
            mplx = mplx.max(vec_norm(p, &z1) + vec_norm(p, &z2));
        }
    }
    (dev, mplx)
}

/// `max_i sup_{t0 ≤ t ≤ t_end} |w_i(t)|_p`.
pub fn residual_sup(sys: &NetworkSystem, p: PNorm, t_end: f64, dt: f64) -> f64 {
    sys.agents()
        .iter()
        .map(|a| a.disturbance.residual_sup(p, sys.t0(), t_end, dt))
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid {
            lo: -2.0,
            hi: 2.0,
            points: 81,
        }
    }
}

impl AlphaGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.lo];
        }
        (0..self.points)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / (self.points - 1) as f64)
            .collect()
    }
}

/// Homogeneous `(α1, α2)` on the grid maximizing `σ̄ − σ̲`. Ties keep the first point.
pub fn search_alpha(sys: &NetworkSystem, route: &Route, p: PNorm, grid: AlphaGrid) -> Result<(f64, f64, f64)> {
    let vals = grid.values();
    let mut best: Option<(f64, f64, f64)> = None;
    for &a1 in &vals {
        for &a2 in &vals {
            let t = TransformT::homogeneous(sys.agent_count(), a1, a2);
            let margin = match route {
                Route::Analytic => {
                    let b = tanh_worstcase_bounds(sys, &t, p)?;
                    b.sigma_bar - b.sigma_underbar
                }
                Route::Sampled(region) => {
                    check_c2(sys, &t, region, p)?.value - check_c3(sys, &t, region, p)?.value
                }
            };
            if best.is_none_or(|b| margin > b.2) {
                best = Some((a1, a2, margin));
            }
        }
    }
    best.ok_or_else(|| Error::Validation("empty alpha grid".into()))
}
