//! Fixed-step RK4 for delay systems with cubic Hermite history (method of steps).
//!
//! Delayed arguments are read from a sliding window of past samples. Each
//! sample keeps the state and the derivative evaluated at the start of the
//! following step, which is exactly what cubic Hermite interpolation needs.
//! With `dt ≤ min τ`, every delayed lookup of a step falls into history that
//! is already complete, so no stage depends on the step being computed.

use crate::error::{Error, Result};
use crate::network::NetworkSystem;
use crate::norms::{vec_norm, PNorm};

/// Relative distance to a grid point (in steps) below which a lookup uses the stored sample.
const GRID_SNAP: f64 = 1e-9;

/// A system `ż(t) = F(t, z(t), z(t − τ(t)))` with history on `[t0 − τ_max, t0]`.
pub trait DelaySystem {
    fn dim(&self) -> usize;
    fn t0(&self) -> f64;
    fn delay(&self, t: f64) -> f64;
    fn max_delay(&self) -> f64;
    /// False when the right-hand side ignores its delayed argument.
    fn has_delay_terms(&self) -> bool;
    fn initial_state(&self, out: &mut [f64]);
    /// Pre-horizon function, called for `s ≤ t0`.
    fn history(&self, s: f64, out: &mut [f64]);
    fn rhs(&self, t: f64, z: &[f64], z_delayed: &[f64], dz: &mut [f64]) -> Result<()>;
}

/// Uniformly spaced samples `t_k = t0 + k·dt` in a ring buffer, with
/// a pre-horizon function for `s ≤ t0`.
pub struct HistoryBuffer<'a> {
    t0: f64,
    dt: f64,
    dim: usize,
    tau_max: f64,
    capacity: usize,
    /// Index of the most recent sample; `None` before the first push.
    last: Option<usize>,
    /// Highest sample index whose derivative is known.
    deriv_known: Option<usize>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    prehistory: Box<dyn Fn(f64, &mut [f64]) + 'a>,
}

impl<'a> HistoryBuffer<'a> {
    /// `window` is the time span that must stay addressable behind the newest sample.
    pub fn new(
        t0: f64,
        dt: f64,
        dim: usize,
        tau_max: f64,
        window: f64,
        prehistory: Box<dyn Fn(f64, &mut [f64]) + 'a>,
    ) -> Self {
        let capacity = (window / dt).ceil() as usize + 3;
        HistoryBuffer {
            t0,
            dt,
            dim,
            tau_max,
            capacity,
            last: None,
            deriv_known: None,
            states: vec![0.0; capacity * dim],
            derivs: vec![0.0; capacity * dim],
            prehistory,
        }
    }

    pub fn time_of(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn current_time(&self) -> Option<f64> {
        self.last.map(|k| self.time_of(k))
    }

    fn first(&self) -> usize {
        match self.last {
            Some(l) => (l + 1).saturating_sub(self.capacity),
            None => 0,
        }
    }

    fn slot(&self, k: usize) -> std::ops::Range<usize> {
        let s = (k % self.capacity) * self.dim;
        s..s + self.dim
    }

    /// Appends the sample for the next grid index.
    pub fn push(&mut self, state: &[f64]) {
        let k = self.last.map_or(0, |l| l + 1);
        let slot = self.slot(k);
        self.states[slot].copy_from_slice(state);
        self.last = Some(k);
    }

    /// Records `ż(t_k)` for the newest sample.
    pub fn set_latest_derivative(&mut self, deriv: &[f64]) {
        if let Some(k) = self.last {
            let slot = self.slot(k);
            self.derivs[slot].copy_from_slice(deriv);
            self.deriv_known = Some(k);
        }
    }

    pub fn sample(&self, k: usize) -> Option<&[f64]> {
        let last = self.last?;
        if k > last || k < self.first() {
            return None;
        }
        Some(&self.states[self.slot(k)])
    }

    pub fn lookup(&self, s: f64, out: &mut [f64]) -> Result<()> {
        let lo_pre = self.t0 - self.tau_max;
        let hi = self.current_time().unwrap_or(self.t0);
        let err = || Error::Lookup {
            s,
            lo: lo_pre.max(self.time_of(self.first()).min(self.t0)),
            hi,
        };
        if s == self.t0 {
            if let Some(x) = self.sample(0) {
                out.copy_from_slice(x);
                return Ok(());
            }
        }
        if s <= self.t0 {
            if s < lo_pre - 1e-12 * (1.0 + lo_pre.abs()) {
                return Err(err());
            }
            (self.prehistory)(s, out);
            return Ok(());
        }
        let last = self.last.ok_or_else(err)?;
        let mut u = (s - self.t0) / self.dt;
        // Snap lookups that land on a grid point up to rounding.
        if (u - u.round()).abs() < GRID_SNAP {
            u = u.round();
        }
        let k = u.floor() as usize;
        let frac = u - k as f64;
        if k >= last {
            if (k == last && frac == 0.0) || s <= hi + 1e-12 * (1.0 + hi.abs()) {
                out.copy_from_slice(self.sample(last).ok_or_else(err)?);
                return Ok(());
            }
            return Err(err());
        }
        if k < self.first() {
            return Err(err());
        }
        if frac == 0.0 {
            out.copy_from_slice(self.sample(k).ok_or_else(err)?);
            return Ok(());
        }
        if self.deriv_known.is_none_or(|d| d < k + 1) {
            return Err(err());
        }
        let (a, b) = (self.slot(k), self.slot(k + 1));
        let th = frac;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th) * self.dt;
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0) * self.dt;
        for c in 0..self.dim {
            out[c] = h00 * self.states[a.start + c]
                + h10 * self.derivs[a.start + c]
                + h01 * self.states[b.start + c]
                + h11 * self.derivs[b.start + c];
        }
        Ok(())
    }
}

/// `history_lookup` on a buffer.
pub fn history_lookup(buf: &HistoryBuffer<'_>, s: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; buf.dim];
    buf.lookup(s, &mut out)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl StepConfig {
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", format!("step must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.t0) {
            return Err(Error::config(
                "t_end",
                format!("t_end ({}) must exceed t0 ({})", self.t_end, self.t0),
            ));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be a positive integer"));
        }
        let ratio = (self.t_end - self.t0) / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::config(
                "dt",
                format!("horizon {} is not a whole number of steps of {}", self.t_end - self.t0, self.dt),
            ));
        }
        Ok(steps as usize)
    }
}

/// Integrates `sys` with classical RK4, calling `observer(k, t_k, z_k)` at every
/// `record_every`-th step (always including the first and last).
pub fn integrate_with<S, F>(sys: &S, cfg: StepConfig, mut observer: F) -> Result<()>
where
    S: DelaySystem + ?Sized,
    F: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    let steps = cfg.steps()?;
    let dim = sys.dim();
    let dt = cfg.dt;
    let t0 = cfg.t0;
    let tau_max = sys.max_delay();
    let delayed = sys.has_delay_terms() && tau_max > 0.0;

    if delayed {
        let min_tau = min_delay(sys, t0, steps, dt);
        if dt > min_tau {
            return Err(Error::config(
                "dt",
                format!("dt <= tau is required for delayed couplings: dt = {dt}, min tau = {min_tau}"),
            ));
        }
    }

    let mut buf = HistoryBuffer::new(
        t0,
        dt,
        dim,
        tau_max,
        tau_max + dt,
        Box::new(|s, out: &mut [f64]| sys.history(s, out)),
    );
    let mut z = vec![0.0; dim];
    sys.initial_state(&mut z);
    buf.push(&z);

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];
    let mut zd = vec![0.0; dim];

    let stage_eval = |t: f64, zs: &[f64], zd: &mut Vec<f64>, buf: &HistoryBuffer<'_>, out: &mut [f64]| {
        if delayed {
            buf.lookup(t - sys.delay(t), zd)?;
            sys.rhs(t, zs, zd, out)
        } else {
            sys.rhs(t, zs, zs, out)
        }
    };

    observer(0, t0, &z)?;
    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        stage_eval(t, &z, &mut zd, &buf, &mut k1)?;
        buf.set_latest_derivative(&k1);

        for c in 0..dim {
            stage[c] = z[c] + 0.5 * dt * k1[c];
        }
        stage_eval(t + 0.5 * dt, &stage, &mut zd, &buf, &mut k2)?;
        for c in 0..dim {
            stage[c] = z[c] + 0.5 * dt * k2[c];
        }
        stage_eval(t + 0.5 * dt, &stage, &mut zd, &buf, &mut k3)?;
        for c in 0..dim {
            stage[c] = z[c] + dt * k3[c];
        }
        stage_eval(t + dt, &stage, &mut zd, &buf, &mut k4)?;
        for c in 0..dim {
            z[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: step + 1,
                t: t0 + (step + 1) as f64 * dt,
            });
        }
        buf.push(&z);
        let k = step + 1;
        if k % cfg.record_every == 0 || k == steps {
            observer(k, t0 + k as f64 * dt, &z)?;
        }
    }
    Ok(())
}

fn min_delay<S: DelaySystem + ?Sized>(sys: &S, t0: f64, steps: usize, dt: f64) -> f64 {
    let mut m = f64::INFINITY;
    for k in 0..=2 * steps {
        m = m.min(sys.delay(t0 + 0.5 * k as f64 * dt));
    }
    m
}

/// All states at the step grid (including `t0`).
pub fn integrate_states<S: DelaySystem + ?Sized>(
    sys: &S,
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    integrate_with(
        sys,
        StepConfig {
            t0,
            t_end,
            dt,
            record_every: 1,
        },
        |_, _, z| {
            out.push(z.to_vec());
            Ok(())
        },
    )?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentRecord {
    pub x: Vec<f64>,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    /// `|x_i − x*_i|_p`
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub agents: Vec<AgentRecord>,
    /// Right-hand side of the deviation bound, when a certificate is attached.
    pub bound: Option<f64>,
}

impl TraceRecord {
    pub fn max_deviation(&self) -> f64 {
        self.agents.iter().map(|a| a.deviation).fold(0.0, f64::max)
    }
}

/// Builds a trace record from hand/agent positions and multiplex states.
pub fn make_record(
    sys: &NetworkSystem,
    t: f64,
    z: &[f64],
    desired: &[f64],
    p: PNorm,
) -> TraceRecord {
    let layout = sys.layout();
    let n = layout.n;
    let agents = (0..layout.agents)
        .map(|i| {
            let x = z[layout.x(i)].to_vec();
            let diff: Vec<f64> = x
                .iter()
                .zip(&desired[i * n..(i + 1) * n])
                .map(|(a, b)| a - b)
                .collect();
            AgentRecord {
                deviation: vec_norm(p, &diff),
                x,
                r1: z[layout.r1(i)].to_vec(),
                r2: z[layout.r2(i)].to_vec(),
            }
        })
        .collect();
    TraceRecord {
        t,
        agents,
        bound: None,
    }
}

/// Simulates the network and records every `record_every`-th step.
pub fn integrate(
    sys: &NetworkSystem,
    t0: f64,
    t_end: f64,
    dt: f64,
    record_every: usize,
    p: PNorm,
) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    let mut desired = vec![0.0; sys.n() * sys.agent_count()];
    integrate_with(
        sys,
        StepConfig {
            t0,
            t_end,
            dt,
            record_every,
        },
        |_, t, z| {
            sys.desired_into(t, &mut desired);
            records.push(make_record(sys, t, z, &desired, p));
            Ok(())
        },
    )?;
    Ok(records)
}
