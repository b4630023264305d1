//! Unicycle formation: hand-position feedback linearization, concentric-circle
//! formations and the tracking / ramp-rejection / sweep experiments.
//!
//! Each robot follows `ṗ = v·[cos θ, sin θ] + d(t)`, `θ̇ = Ω`. Its hand position
//! `η = p + l·[cos θ, sin θ]` obeys `η̇ = J(θ)·u + d` with
//! `J(θ) = [cos θ, −l sin θ; sin θ, l cos θ]`, so `u = J(θ)⁻¹ ν` turns every
//! robot into `η̇ = ν + d`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{
    certify, AlphaGrid, CertificateReport, Route, RouteKind, SampleRegion, Sampler, TransformT,
};
use crate::dde::{integrate_with, AgentRecord, DelaySystem, StepConfig, TraceRecord};
use crate::error::{Error, Result};
use crate::network::{
    DelayFunction, DiffusiveTanhCouplings, DriftDynamics, Disturbance, LeaderLink, LeaderSignal,
    NeighborLink, NetworkSystem, Residual,
};
use crate::norms::{vec_norm, PNorm};

/// Largest neighbor count of any robot in a concentric formation.
pub const NEIGHBOR_CAP: usize = 3;
/// Distance tolerance used when breaking ties between equally close robots.
const TIE_TOLERANCE: f64 = 1e-9;

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnicycleState {
    pub p: [f64; 2],
    pub theta: f64,
}

impl UnicycleState {
    pub fn new(p: [f64; 2], theta: f64) -> Self {
        UnicycleState {
            p,
            theta: wrap_angle(theta),
        }
    }

    /// State whose hand point sits at `eta`.
    pub fn from_hand(eta: [f64; 2], theta: f64, l: f64) -> Result<Self> {
        check_offset(l)?;
        Ok(UnicycleState::new(
            [eta[0] - l * theta.cos(), eta[1] - l * theta.sin()],
            theta,
        ))
    }

    pub fn hand(&self, l: f64) -> [f64; 2] {
        [self.p[0] + l * self.theta.cos(), self.p[1] + l * self.theta.sin()]
    }
}

fn check_offset(l: f64) -> Result<()> {
    if l.is_finite() && l > 0.0 {
        Ok(())
    } else {
        Err(Error::config("formation.hand_offset", format!("hand offset must be > 0, got {l}")))
    }
}

/// `η̇ = J(θ)·u + d` for `u = [v, Ω]`.
pub fn hand_dynamics(state: &UnicycleState, l: f64, u: [f64; 2], d: [f64; 2]) -> Result<[f64; 2]> {
    check_offset(l)?;
    let (s, c) = state.theta.sin_cos();
    Ok([c * u[0] - l * s * u[1] + d[0], s * u[0] + l * c * u[1] + d[1]])
}

/// `u = J(θ)⁻¹ ν`.
pub fn feedback_linearize(theta: f64, l: f64, nu: [f64; 2]) -> Result<[f64; 2]> {
    check_offset(l)?;
    let (s, c) = theta.sin_cos();
    Ok([c * nu[0] + s * nu[1], (-s * nu[0] + c * nu[1]) / l])
}

/// Circles `k = 1..=circles` of radius `k·radius_step`, with `4k` robots each.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormationSpec {
    pub circles: usize,
    pub radius_step: f64,
}

impl FormationSpec {
    pub fn new(circles: usize, radius_step: f64) -> Result<Self> {
        if circles == 0 {
            return Err(Error::config("formation.circles", "need at least one circle"));
        }
        if !(radius_step.is_finite() && radius_step > 0.0) {
            return Err(Error::config(
                "formation.radius_step",
                format!("radius step must be > 0, got {radius_step}"),
            ));
        }
        Ok(FormationSpec {
            circles,
            radius_step,
        })
    }

    pub fn robot_count(&self) -> usize {
        2 * self.circles * (self.circles + 1)
    }

    /// Index of the first robot on circle `k` (1-based circle).
    pub fn first_on(&self, k: usize) -> usize {
        2 * k * (k - 1)
    }

    /// 1-based circle of every robot.
    pub fn circle_labels(&self) -> Vec<usize> {
        (1..=self.circles).flat_map(|k| std::iter::repeat_n(k, 4 * k)).collect()
    }

    /// Offsets from the formation center, in robot order.
    pub fn positions(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.robot_count());
        for k in 1..=self.circles {
            let r = k as f64 * self.radius_step;
            let m = 4 * k;
            for j in 0..m {
                let phi = 2.0 * PI * j as f64 / m as f64;
                out.push([r * phi.cos(), r * phi.sin()]);
            }
        }
        out
    }

    /// Ahead and behind on the same circle, then the closest robot on the next
    /// inner circle (lowest index on ties).
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let pos = self.positions();
        let mut out = Vec::with_capacity(pos.len());
        for k in 1..=self.circles {
            let m = 4 * k;
            let first = self.first_on(k);
            for j in 0..m {
                let mut nb = vec![first + (j + 1) % m, first + (j + m - 1) % m];
                if k > 1 {
                    let me = pos[first + j];
                    let inner = self.first_on(k - 1)..first;
                    let mut best = (f64::INFINITY, inner.start);
                    for c in inner {
                        let d = (pos[c][0] - me[0]).hypot(pos[c][1] - me[1]);
                        if d < best.0 - TIE_TOLERANCE {
                            best = (d, c);
                        }
                    }
                    nb.push(best.1);
                }
                out.push(nb);
            }
        }
        out
    }

    /// `δ*_{li}`: desired leader-minus-robot offset.
    pub fn leader_offsets(&self) -> Vec<[f64; 2]> {
        self.positions().iter().map(|p| [-p[0], -p[1]]).collect()
    }
}

/// Checks `δ*_{ji} = δ*_{li} − δ*_{lj}` for every neighbor link.
pub fn validate_offsets(leader_offsets: &[[f64; 2]], links: &[Vec<NeighborLink>]) -> Result<()> {
    for (i, ls) in links.iter().enumerate() {
        for link in ls {
            let j = link.neighbor;
            for c in 0..2 {
                let expected = leader_offsets[i][c] - leader_offsets[j][c];
                if (link.offset[c] - expected).abs() > 1e-12 * (1.0 + expected.abs()) {
                    return Err(Error::Validation(format!(
                        "offset of neighbor pair (j = {j}, i = {i}) is inconsistent with the leader offsets"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Protocol gains: leader layer gains `k0..k2`, delayed neighbor gains
/// `k0_tau..k2_tau` and the `tanh` slope `k_psi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSet {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k0_tau: f64,
    pub k1_tau: f64,
    pub k2_tau: f64,
    pub k_psi: f64,
}

impl GainSet {
    pub fn reference() -> Self {
        GainSet {
            k0: 1.4342,
            k1: 1.536,
            k2: 0.4937,
            k0_tau: 0.321,
            k1_tau: 0.436,
            k2_tau: 0.213,
            k_psi: 0.1,
        }
    }

    pub fn leader(&self) -> [f64; 3] {
        [self.k0, self.k1, self.k2]
    }

    pub fn delayed(&self) -> [f64; 3] {
        [self.k0_tau, self.k1_tau, self.k2_tau]
    }

    /// All delayed gains multiplied by `factor`.
    pub fn with_delayed_scaled(&self, factor: f64) -> Self {
        GainSet {
            k0_tau: self.k0_tau * factor,
            k1_tau: self.k1_tau * factor,
            k2_tau: self.k2_tau * factor,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("k0", self.k0),
            ("k1", self.k1),
            ("k2", self.k2),
            ("k0_tau", self.k0_tau),
            ("k1_tau", self.k1_tau),
            ("k2_tau", self.k2_tau),
            ("k_psi", self.k_psi),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("gains.{name}"), format!("gain must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for GainSet {
    fn default() -> Self {
        GainSet::reference()
    }
}

/// Bessel function of the first kind, integer order, by its power series.
pub fn bessel_j(order: usize, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = half.powi(order as i32) / (1..=order).map(|v| v as f64).product::<f64>();
    let mut sum = term;
    for m in 1..60 {
        term *= -half * half / (m as f64 * (m + order) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Leader moving at constant speed with heading `A·sin(2πt/P)`.
///
/// Position is in closed form through the Jacobi–Anger expansion, so the
/// leader trajectory carries no integration error.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanderLeader {
    pub speed: f64,
    pub heading_amplitude: f64,
    pub heading_period: f64,
    pub start: [f64; 2],
    bessel: Vec<f64>,
}

const BESSEL_TERMS: usize = 24;

impl MeanderLeader {
    pub fn new(speed: f64, heading_amplitude: f64, heading_period: f64) -> Result<Self> {
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(Error::config("leader.speed", format!("speed must be >= 0, got {speed}")));
        }
        if !heading_amplitude.is_finite() {
            return Err(Error::config("leader.heading_amplitude", "must be finite"));
        }
        if !(heading_period.is_finite() && heading_period > 0.0) {
            return Err(Error::config(
                "leader.heading_period",
                format!("period must be > 0, got {heading_period}"),
            ));
        }
        Ok(MeanderLeader {
            speed,
            heading_amplitude,
            heading_period,
            start: [0.0, 0.0],
            bessel: (0..BESSEL_TERMS).map(|k| bessel_j(k, heading_amplitude)).collect(),
        })
    }

    fn omega(&self) -> f64 {
        2.0 * PI / self.heading_period
    }

    pub fn heading(&self, t: f64) -> f64 {
        self.heading_amplitude * (self.omega() * t).sin()
    }

    pub fn velocity(&self, t: f64) -> [f64; 2] {
        let h = self.heading(t);
        [self.speed * h.cos(), self.speed * h.sin()]
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        let w = self.omega();
        let j = &self.bessel;
        let mut x = j[0] * t;
        let mut k = 2;
        while k < BESSEL_TERMS {
            x += 2.0 * j[k] * (k as f64 * w * t).sin() / (k as f64 * w);
            k += 2;
        }
        let mut y = 0.0;
        let mut k = 1;
        while k < BESSEL_TERMS {
            y += 2.0 * j[k] * (1.0 - (k as f64 * w * t).cos()) / (k as f64 * w);
            k += 2;
        }
        [self.start[0] + self.speed * x, self.start[1] + self.speed * y]
    }

    pub fn signal(&self) -> LeaderSignal {
        let a = self.clone();
        let b = self.clone();
        LeaderSignal {
            count: 1,
            n: 2,
            position: Arc::new(move |t, out: &mut [f64]| out.copy_from_slice(&a.position(t))),
            velocity: Arc::new(move |t, out: &mut [f64]| out.copy_from_slice(&b.velocity(t))),
        }
    }
}

/// Disturbance `d(t) = a·sin(ω t)·e^{−r t} + d0 + d1·t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    /// Constant part (m/s).
    pub d0: [f64; 2],
    /// Ramp slope (m/s²).
    pub d1: [f64; 2],
    /// Residual amplitude `a` (m/s).
    pub residual_amplitude: [f64; 2],
    /// Residual decay `r` (1/s).
    pub residual_rate: f64,
    /// Residual angular frequency `ω` (rad/s).
    pub residual_omega: f64,
}

impl DisturbanceSpec {
    pub fn reference() -> Self {
        DisturbanceSpec {
            d0: [0.07, 0.06],
            d1: [0.02, -0.04],
            residual_amplitude: [0.05, 0.06],
            residual_rate: 0.3,
            residual_omega: 1.0,
        }
    }

    pub fn to_disturbance(&self) -> Disturbance {
        Disturbance {
            d0: self.d0.to_vec(),
            d1: self.d1.to_vec(),
            residual: Residual::DampedSine {
                amplitude: self.residual_amplitude.to_vec(),
                rate: self.residual_rate,
                omega: self.residual_omega,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = self.d0.iter().chain(&self.d1).chain(&self.residual_amplitude);
        if vals.clone().any(|v| !v.is_finite()) || !self.residual_omega.is_finite() {
            return Err(Error::config("disturbance", "values must be finite"));
        }
        if !(self.residual_rate.is_finite() && self.residual_rate >= 0.0) {
            return Err(Error::config("disturbance.residual_rate", "rate must be >= 0"));
        }
        Ok(())
    }
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        DisturbanceSpec::reference()
    }
}

/// Closed loop of hand positions: `f_i = v_l`, linear leader couplings on every
/// robot and delayed `tanh` couplings to the formation neighbors.
///
/// `initial_hands` (stacked, `2N`) sets the initial hand positions; the
/// multiplex states start at zero. Without it robots start on the formation.
pub fn build_formation(
    spec: &FormationSpec,
    gains: &GainSet,
    leader: &MeanderLeader,
    tau: f64,
    disturbances: &[(usize, Disturbance)],
    initial_hands: Option<&[f64]>,
) -> Result<NetworkSystem> {
    gains.validate()?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::config("delay.tau", format!("delay must be >= 0, got {tau}")));
    }
    let count = spec.robot_count();
    let pos = spec.positions();
    let lead_off = spec.leader_offsets();
    let neighbors = spec.neighbors();
    let neighbor_links: Vec<Vec<NeighborLink>> = neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            nb.iter()
                .map(|&j| NeighborLink {
                    neighbor: j,
                    offset: vec![pos[j][0] - pos[i][0], pos[j][1] - pos[i][1]],
                })
                .collect()
        })
        .collect();
    validate_offsets(&lead_off, &neighbor_links)?;
    let couplings = DiffusiveTanhCouplings {
        n: 2,
        leader_gains: gains.leader(),
        delayed_gains: gains.delayed(),
        k_psi: gains.k_psi,
        neighbor_cap: NEIGHBOR_CAP,
        leader_links: lead_off
            .iter()
            .map(|o| vec![LeaderLink { leader: 0, offset: o.to_vec() }])
            .collect(),
        neighbor_links,
    };
    couplings.validate()?;

    let signal = leader.signal();
    let velocity = signal.velocity.clone();
    let mut b = NetworkSystem::builder(2)
        .couplings(Arc::new(couplings))
        .leader(signal)
        .delay(DelayFunction::Constant(tau))
        .topology(neighbors, vec![vec![0]; count])
        .neighbor_cap(NEIGHBOR_CAP)
        .labels(spec.circle_labels());
    let mut per_agent: Vec<Disturbance> = (0..count).map(|_| Disturbance::zero(2)).collect();
    for (i, d) in disturbances {
        if *i >= count {
            return Err(Error::config("disturbance.target", format!("robot {i} does not exist")));
        }
        per_agent[*i] = d.clone();
    }
    for d in per_agent {
        b = b.agent(
            Arc::new(DriftDynamics {
                n: 2,
                velocity: velocity.clone(),
            }),
            d,
        );
    }
    let lp = leader.clone();
    let flat: Vec<f64> = pos.iter().flatten().copied().collect();
    b = b.desired(Arc::new(move |t, out: &mut [f64]| {
        let c = lp.position(t);
        for (k, o) in out.iter_mut().enumerate() {
            *o = c[k % 2] + flat[k];
        }
    }));
    if let Some(h) = initial_hands {
        if h.len() != 2 * count {
            return Err(Error::Dimension(format!(
                "initial hands have length {}, expected {}",
                h.len(),
                2 * count
            )));
        }
        let mut z0 = vec![0.0; 6 * count];
        for i in 0..count {
            z0[6 * i..6 * i + 2].copy_from_slice(&h[2 * i..2 * i + 2]);
        }
        b = b.initial_state(z0);
    }
    b.build()
}

/// Unicycle robots driven through feedback linearization by the protocol of a
/// hand-position network. State per robot: `[p_x, p_y, θ, r1 (2), r2 (2)]`.
pub struct UnicyclePlant {
    net: NetworkSystem,
    hand_offset: f64,
    initial: Vec<f64>,
}

pub const PLANT_STRIDE: usize = 7;

impl UnicyclePlant {
    /// Robots start with the network's initial hand positions and the given headings.
    pub fn new(net: NetworkSystem, hand_offset: f64, headings: &[f64]) -> Result<Self> {
        check_offset(hand_offset)?;
        let count = net.agent_count();
        if net.n() != 2 || headings.len() != count {
            return Err(Error::Dimension("plant needs n = 2 and one heading per robot".into()));
        }
        let z_net = net.initial();
        let mut initial = vec![0.0; PLANT_STRIDE * count];
        for i in 0..count {
            let eta = [z_net[6 * i], z_net[6 * i + 1]];
            let st = UnicycleState::from_hand(eta, headings[i], hand_offset)?;
            let o = PLANT_STRIDE * i;
            initial[o..o + 2].copy_from_slice(&st.p);
            initial[o + 2] = st.theta;
            initial[o + 3..o + 7].copy_from_slice(&z_net[6 * i + 2..6 * i + 6]);
        }
        Ok(UnicyclePlant {
            net,
            hand_offset,
            initial,
        })
    }

    pub fn network(&self) -> &NetworkSystem {
        &self.net
    }

    pub fn hand_offset(&self) -> f64 {
        self.hand_offset
    }

    /// Network-layout state `[η_i; r_i,1; r_i,2]` from a plant state.
    pub fn network_state_into(&self, z: &[f64], out: &mut [f64]) {
        let l = self.hand_offset;
        for i in 0..self.net.agent_count() {
            let o = PLANT_STRIDE * i;
            let (s, c) = z[o + 2].sin_cos();
            out[6 * i] = z[o] + l * c;
            out[6 * i + 1] = z[o + 1] + l * s;
            out[6 * i + 2..6 * i + 6].copy_from_slice(&z[o + 3..o + 7]);
        }
    }

    pub fn network_state(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 6 * self.net.agent_count()];
        self.network_state_into(z, &mut out);
        out
    }

    /// Deviations and states of all robots at `t`.
    pub fn record(&self, t: f64, z: &[f64], p: PNorm) -> TraceRecord {
        let zn = self.network_state(z);
        let desired = self.net.desired_at(t);
        let agents = (0..self.net.agent_count())
            .map(|i| {
                let x = zn[6 * i..6 * i + 2].to_vec();
                let e = [x[0] - desired[2 * i], x[1] - desired[2 * i + 1]];
                AgentRecord {
                    deviation: vec_norm(p, &e),
                    x,
                    r1: zn[6 * i + 2..6 * i + 4].to_vec(),
                    r2: zn[6 * i + 4..6 * i + 6].to_vec(),
                }
            })
            .collect();
        TraceRecord {
            t,
            agents,
            bound: None,
        }
    }
}

impl DelaySystem for UnicyclePlant {
    fn dim(&self) -> usize {
        PLANT_STRIDE * self.net.agent_count()
    }

    fn t0(&self) -> f64 {
        self.net.t0()
    }

    fn delay(&self, t: f64) -> f64 {
        self.net.delay_function().at(t)
    }

    fn max_delay(&self) -> f64 {
        self.net.delay_function().tau_max()
    }

    fn has_delay_terms(&self) -> bool {
        self.net.couplings().has_delayed()
    }

    fn initial_state(&self, out: &mut [f64]) {
        out.copy_from_slice(&self.initial);
    }

    fn history(&self, _s: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.initial);
    }

    fn rhs(&self, t: f64, z: &[f64], z_delayed: &[f64], dz: &mut [f64]) -> Result<()> {
        let count = self.net.agent_count();
        let mut zn = vec![0.0; 6 * count];
        let mut znd = vec![0.0; 6 * count];
        let mut dzn = vec![0.0; 6 * count];
        self.network_state_into(z, &mut zn);
        self.network_state_into(z_delayed, &mut znd);
        self.net.protocol(t, &zn, &znd, &mut dzn)?;
        let mut d = [0.0; 2];
        for (i, agent) in self.net.agents().iter().enumerate() {
            let o = PLANT_STRIDE * i;
            let theta = z[o + 2];
            let u = feedback_linearize(theta, self.hand_offset, [dzn[6 * i], dzn[6 * i + 1]])?;
            agent.disturbance.eval_into(t, &mut d);
            let (s, c) = theta.sin_cos();
            dz[o] = u[0] * c + d[0];
            dz[o + 1] = u[0] * s + d[1];
            dz[o + 2] = u[1];
            dz[o + 3..o + 7].copy_from_slice(&dzn[6 * i + 2..6 * i + 6]);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Track,
    RampReject,
    Sweep,
}

/// Everything needed to run one formation experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub formation: FormationSpec,
    pub hand_offset: f64,
    /// Half-width of the uniform noise on initial hand positions (m).
    pub initial_noise: f64,
    pub initial_heading: f64,
    pub gains: GainSet,
    pub tau: f64,
    pub tau_max: f64,
    pub leader: MeanderLeader,
    pub horizon: f64,
    pub dt: f64,
    pub record_every: usize,
    pub disturbance: DisturbanceSpec,
    /// Disturbed robot; `None` leaves every robot undisturbed.
    pub disturbance_target: Option<usize>,
    pub p: PNorm,
    /// Fixed `(α1, α2)`; searched on the default grid when absent.
    pub alpha: Option<(f64, f64)>,
    pub route: RouteKind,
    /// Random samples per sampled certificate.
    pub samples: usize,
    /// Half-width of the sampled box around the formation (m).
    pub sample_radius: f64,
}

impl Scenario {
    /// Ten circles, the reference gains, `τ = 0.33 s`, 60 s horizon and the ramp
    /// disturbance on the lowest-index robot of circle 1.
    pub fn reference(kind: ExperimentKind) -> Self {
        Scenario {
            kind,
            seed: 1,
            formation: FormationSpec {
                circles: 10,
                radius_step: 2.0,
            },
            hand_offset: 0.1,
            initial_noise: if kind == ExperimentKind::Track { 0.1 } else { 0.0 },
            initial_heading: 0.0,
            gains: GainSet::reference(),
            tau: 0.33,
            tau_max: 0.33,
            leader: MeanderLeader::new(0.3, 0.6, 40.0).expect("valid leader"),
            horizon: 60.0,
            dt: 1e-3,
            record_every: 100,
            disturbance: DisturbanceSpec::reference(),
            disturbance_target: if kind == ExperimentKind::Track { None } else { Some(0) },
            p: PNorm::Two,
            alpha: None,
            route: RouteKind::Analytic,
            samples: 200,
            sample_radius: 0.5,
        }
    }

    pub fn with_circles(&self, circles: usize) -> Self {
        Scenario {
            formation: FormationSpec {
                circles,
                ..self.formation
            },
            ..self.clone()
        }
    }

    /// Seeded initial hand positions: formation plus uniform noise.
    pub fn initial_hands(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let c = self.leader.position(0.0);
        let a = self.initial_noise;
        self.formation
            .positions()
            .iter()
            .flat_map(|p| [c[0] + p[0], c[1] + p[1]])
            .map(|v| if a > 0.0 { v + rng.random_range(-a..=a) } else { v })
            .collect()
    }

    pub fn network(&self) -> Result<NetworkSystem> {
        let dist: Vec<(usize, Disturbance)> = self
            .disturbance_target
            .map(|i| vec![(i, self.disturbance.to_disturbance())])
            .unwrap_or_default();
        build_formation(
            &self.formation,
            &self.gains,
            &self.leader,
            self.tau,
            &dist,
            Some(&self.initial_hands()),
        )
    }

    pub fn plant(&self) -> Result<UnicyclePlant> {
        let net = self.network()?;
        let headings = vec![self.initial_heading; net.agent_count()];
        UnicyclePlant::new(net, self.hand_offset, &headings)
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            t0: 0.0,
            t_end: self.horizon,
            dt: self.dt,
            record_every: self.record_every,
        }
    }

    /// Certificate on the configured route. When `α` is not fixed it is searched
    /// with the analytic route on the one-circle formation; the analytic
    /// certificate does not depend on the number of circles.
    pub fn certificate(&self) -> Result<CertificateReport> {
        let (a1, a2) = match self.alpha {
            Some(a) => a,
            None => {
                let small = build_formation(
                    &FormationSpec {
                        circles: 1,
                        ..self.formation
                    },
                    &self.gains,
                    &self.leader,
                    self.tau,
                    &[],
                    None,
                )?;
                let (a1, a2, _) =
                    crate::certificate::search_alpha(&small, &Route::Analytic, self.p, AlphaGrid::default())?;
                (a1, a2)
            }
        };
        let net = self.network()?;
        let t = TransformT::homogeneous(net.agent_count(), a1, a2);
        let times: Vec<f64> = (0..=20).map(|k| self.horizon * k as f64 / 20.0).collect();
        let route = match self.route {
            RouteKind::Analytic => Route::Analytic,
            RouteKind::Sampled => Route::Sampled(SampleRegion::around_desired(
                &net,
                net.t0(),
                self.sample_radius,
                vec![net.t0()],
                Sampler::Random {
                    seed: self.seed,
                    count: self.samples,
                },
            )),
        };
        certify(&net, &t, &route, self.p, self.tau_max, &times)
    }
}

/// Deviation bound `t ↦ bound` for a feasible certificate on this scenario.
pub struct DeviationBound {
    report: CertificateReport,
    init_dev: f64,
    init_mplx: f64,
    w_sup: f64,
}

impl DeviationBound {
    pub fn new(scenario: &Scenario, net: &NetworkSystem, report: CertificateReport) -> Result<Self> {
        if !report.feasible {
            return Err(Error::Infeasible("certificate is not feasible".into()));
        }
        let (init_dev, init_mplx) = crate::certificate::initial_window_terms(net, scenario.p, 64);
        let w_sup = crate::certificate::residual_sup(net, scenario.p, scenario.horizon, scenario.dt);
        Ok(DeviationBound {
            report,
            init_dev,
            init_mplx,
            w_sup,
        })
    }

    pub fn at(&self, elapsed: f64) -> Result<f64> {
        crate::certificate::bound_eq5(&self.report, self.init_dev, self.init_mplx, self.w_sup, elapsed)
    }

    pub fn report(&self) -> &CertificateReport {
        &self.report
    }

    pub fn terms(&self) -> (f64, f64, f64) {
        (self.init_dev, self.init_mplx, self.w_sup)
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<TraceRecord>,
    pub labels: Vec<usize>,
    pub certificate: Option<CertificateReport>,
}

/// Runs `track` or `ramp_reject`; records carry the deviation bound when the
/// certificate is feasible.
pub fn run_trace(scenario: &Scenario, certificate: Option<CertificateReport>) -> Result<RunOutput> {
    let plant = scenario.plant()?;
    let bound = match &certificate {
        Some(r) if r.feasible => Some(DeviationBound::new(scenario, plant.network(), r.clone())?),
        _ => None,
    };
    let mut records = Vec::new();
    integrate_with(&plant, scenario.step_config(), |_, t, z| {
        let mut rec = plant.record(t, z, scenario.p);
        if let Some(b) = &bound {
            rec.bound = Some(b.at(t - plant.t0())?);
        }
        records.push(rec);
        Ok(())
    })?;
    Ok(RunOutput {
        records,
        labels: plant.network().labels().to_vec(),
        certificate,
    })
}

/// Per-robot peak deviation over a run, evaluated at every step.
pub fn peak_deviations(scenario: &Scenario) -> Result<Vec<f64>> {
    let plant = scenario.plant()?;
    let count = plant.network().agent_count();
    let mut peaks = vec![0.0f64; count];
    let mut desired = vec![0.0; 2 * count];
    let mut zn = vec![0.0; 6 * count];
    let cfg = StepConfig {
        record_every: 1,
        ..scenario.step_config()
    };
    integrate_with(&plant, cfg, |_, t, z| {
        plant.network_state_into(z, &mut zn);
        plant.network().desired_into(t, &mut desired);
        for i in 0..count {
            let e = [zn[6 * i] - desired[2 * i], zn[6 * i + 1] - desired[2 * i + 1]];
            peaks[i] = peaks[i].max(vec_norm(scenario.p, &e));
        }
        Ok(())
    })?;
    Ok(peaks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub circles: usize,
    /// Maximum deviation over the run of the robots on each circle (m).
    pub per_circle: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Ramp-rejection runs for `1..=scenario.formation.circles` circles, in parallel.
pub fn run_sweep(scenario: &Scenario) -> Result<SweepResult> {
    let rows = (1..=scenario.formation.circles)
        .into_par_iter()
        .map(|k| {
            let s = scenario.with_circles(k);
            let peaks = peak_deviations(&s)?;
            let mut per_circle = vec![0.0f64; k];
            for (peak, c) in peaks.iter().zip(s.formation.circle_labels()) {
                per_circle[c - 1] = per_circle[c - 1].max(*peak);
            }
            Ok(SweepRow {
                circles: k,
                per_circle,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows })
}
