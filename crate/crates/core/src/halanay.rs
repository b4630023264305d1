//! Decay rate and bound for the Halanay delay inequality
//! `D⁺u(t) ≤ a·u(t) + b·sup_{t−τ(t) ≤ s ≤ t} u(s) + c`.
//!
//! The rate `λ̂` is the positive root of `λ + a + b·e^{λτ} = 0`. The root
//! decreases with `τ`, so evaluating at `τ_max` gives a valid rate for any
//! delay bounded by `τ_max`.

use crate::error::{Error, Result};

/// Relative tolerance of the bisection.
pub const RATE_TOLERANCE: f64 = 1e-12;
const MAX_BISECTIONS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalanayParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub tau_max: f64,
    pub sigma: f64,
}

impl HalanayParams {
    pub fn new(a: f64, b: f64, c: f64, tau_max: f64, sigma: f64) -> Result<Self> {
        let all_finite = [a, b, c, tau_max, sigma].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Validation("Halanay parameters must be finite".into()));
        }
        if a >= 0.0 {
            return Err(Error::Validation(format!("need a < 0, got a = {a}")));
        }
        if b < 0.0 || c < 0.0 || tau_max < 0.0 {
            return Err(Error::Validation(format!(
                "need b, c, tau_max >= 0, got b = {b}, c = {c}, tau_max = {tau_max}"
            )));
        }
        if sigma <= 0.0 || a + b > -sigma {
            return Err(Error::Infeasible(format!(
                "need a + b <= -sigma < 0, got a + b = {}, sigma = {sigma}",
                a + b
            )));
        }
        Ok(HalanayParams {
            a,
            b,
            c,
            tau_max,
            sigma,
        })
    }

    /// Largest admissible `σ`, i.e. `−(a + b)`.
    pub fn tight(a: f64, b: f64, c: f64, tau_max: f64) -> Result<Self> {
        HalanayParams::new(a, b, c, tau_max, -(a + b))
    }

    pub fn rate(&self) -> Result<f64> {
        halanay_rate(self.a, self.b, self.tau_max)
    }
}

/// Unique positive root of `λ + a + b·e^{λτ} = 0`, by bisection on `[0, −(a+b)]`.
pub fn halanay_rate(a: f64, b: f64, tau: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite() && tau.is_finite()) {
        return Err(Error::Validation("rate parameters must be finite".into()));
    }
    if b < 0.0 || tau < 0.0 {
        return Err(Error::Validation(format!(
            "need b >= 0 and tau >= 0, got b = {b}, tau = {tau}"
        )));
    }
    if a + b >= 0.0 {
        return Err(Error::Infeasible(format!(
            "decay requires a + b < 0, got a + b = {}",
            a + b
        )));
    }
    let residual = |l: f64| l + a + b * (l * tau).exp();
    let mut lo = 0.0;
    let mut hi = -(a + b);
    if residual(hi) <= 0.0 {
        return Ok(hi);
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= RATE_TOLERANCE * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `u0_sup · e^{−λ̂·elapsed} + c/σ`, with `elapsed = t − t₀ ≥ 0`.
pub fn halanay_bound(params: &HalanayParams, u0_sup: f64, elapsed: f64) -> Result<f64> {
    if elapsed < 0.0 || u0_sup < 0.0 {
        return Err(Error::Validation(format!(
            "need elapsed >= 0 and u0_sup >= 0, got {elapsed}, {u0_sup}"
        )));
    }
    let rate = params.rate()?;
    Ok(u0_sup * (-rate * elapsed).exp() + params.c / params.sigma)
}
