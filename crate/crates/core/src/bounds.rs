//! Closed-form minimax lower bound for ℓ1-constrained ReLU networks.
//!
//! With `c = √(τσ/160)` and capacity `V_F = (v_s/L)^L`, the risk under a loss
//! `Φ∘ρ` is bounded below by `½·Φ[c·√V_F·(log d / n)^{1/4}]`, which for the
//! squared loss reads `(c²/2)·V_F·√(log d / n)`. The bound comes from Fano's
//! inequality on a `2δ`-packing whose log-cardinality is at least
//! `(τV_F/(20δ))²·log d`, with the mutual information bounded by
//! `2n(κδ)²/σ²`; the critical `δ` balances the two.
//!
//! All logarithms are natural.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default local-packing constant.
pub const DEFAULT_KAPPA: f64 = 4.0;

/// Smallest input dimension the bound is stated for.
pub const MIN_INPUT_DIM: u64 = 10;

/// The squared loss, `Φ(t) = t²`.
pub fn square(t: f64) -> f64 {
    t * t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    /// Training samples.
    pub n: u64,
    /// Input dimension, at least 10.
    pub d: u64,
    pub sigma: f64,
    pub tau: f64,
    pub vs: f64,
    /// Number of hidden layers.
    #[serde(rename = "L")]
    pub depth: u32,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

impl TheoryInputs {
    pub fn new(n: u64, d: u64, sigma: f64, tau: f64, vs: f64, depth: u32) -> Result<Self> {
        let inputs = TheoryInputs {
            n,
            d,
            sigma,
            tau,
            vs,
            depth,
            kappa: DEFAULT_KAPPA,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn with_kappa(mut self, kappa: f64) -> Result<Self> {
        self.kappa = kappa;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        validate_constants(self.d, self.sigma, self.tau, self.vs, self.depth)?;
        if self.n == 0 {
            return Err(Error::precondition("n must be >= 1"));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::precondition("kappa must be a finite value >= 1"));
        }
        Ok(())
    }

    pub fn vf(&self) -> f64 {
        capacity_vf(self.vs, self.depth)
    }

    pub fn c(&self) -> f64 {
        c_const(self.tau, self.sigma)
    }

    pub fn log_d(&self) -> f64 {
        (self.d as f64).ln()
    }
}

fn validate_constants(d: u64, sigma: f64, tau: f64, vs: f64, depth: u32) -> Result<()> {
    if d < MIN_INPUT_DIM {
        return Err(Error::precondition(format!(
            "input dimension d = {d} is below the required d >= {MIN_INPUT_DIM}"
        )));
    }
    for (name, v) in [("sigma", sigma), ("tau", tau), ("vs", vs)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::precondition(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if depth == 0 {
        return Err(Error::precondition("L must be >= 1"));
    }
    Ok(())
}

/// `V_F = (v_s / L)^L`.
pub fn capacity_vf(vs: f64, depth: u32) -> f64 {
    (vs / f64::from(depth)).powi(depth as i32)
}

/// `c = √(τσ/160)`.
pub fn c_const(tau: f64, sigma: f64) -> f64 {
    (tau * sigma / 160.0).sqrt()
}

/// Lower bound for the squared loss.
pub fn minimax_lower_bound(inputs: &TheoryInputs) -> f64 {
    let c = inputs.c();
    0.5 * c * c * inputs.vf() * (inputs.log_d() / inputs.n as f64).sqrt()
}

/// Lower bound for an arbitrary increasing `Φ` with `Φ(0) = 0`.
pub fn minimax_lower_bound_with(inputs: &TheoryInputs, phi: impl Fn(f64) -> f64) -> f64 {
    bound_from_ratio(inputs.c(), inputs.vf(), inputs.log_d() / inputs.n as f64, phi)
}

/// `½·Φ[c·√V_F·r^{1/4}]` with `r = log d / n` given directly.
pub fn bound_from_ratio(c: f64, vf: f64, log_d_over_n: f64, phi: impl Fn(f64) -> f64) -> f64 {
    0.5 * phi(c * vf.sqrt() * log_d_over_n.powf(0.25))
}

/// Real-valued sample size `(c/ε)^4 · V_F² · log d / 4` at which the squared
/// bound equals `ε²`.
pub fn required_samples(epsilon: f64, c: f64, vf: f64, d: u64) -> f64 {
    (c / epsilon).powi(4) * vf * vf * (d as f64).ln() / 4.0
}

/// Smallest integer sample size meeting the requirement, never below one.
pub fn sample_complexity(epsilon: f64, c: f64, vf: f64, d: u64) -> Result<u64> {
    if !(epsilon > 0.0) {
        return Err(Error::precondition("epsilon must be positive"));
    }
    let n = required_samples(epsilon, c, vf, d).ceil();
    if !n.is_finite() || n >= u64::MAX as f64 {
        return Err(Error::precondition(format!(
            "required sample size overflows for epsilon = {epsilon}"
        )));
    }
    Ok((n as u64).max(1))
}

/// Sample-size requirement for the constants of a theory setup (its `n` is ignored).
pub fn sample_complexity_for(epsilon: f64, d: u64, sigma: f64, tau: f64, vs: f64, depth: u32) -> Result<u64> {
    validate_constants(d, sigma, tau, vs, depth)?;
    sample_complexity(epsilon, c_const(tau, sigma), capacity_vf(vs, depth), d)
}

/// Lower bound `(τV_F/(20δ))²·log d` on the log packing number at radius `2δ`.
pub fn packing_log_lower_bound(delta: f64, d: u64, tau: f64, vf: f64) -> f64 {
    let r = tau * vf / (20.0 * delta);
    r * r * (d as f64).ln()
}

/// KL divergence between the single-sample laws induced by two regression
/// functions at squared `L2(P_X)` distance `l2_dist_sq`.
pub fn kl_per_sample(l2_dist_sq: f64, sigma: f64) -> f64 {
    l2_dist_sq / (2.0 * sigma * sigma)
}

/// KL divergence between the `n`-fold products.
pub fn kl_n_product(l2_dist_sq: f64, sigma: f64, n: u64) -> f64 {
    n as f64 * kl_per_sample(l2_dist_sq, sigma)
}

/// `2n(κδ)²/σ²`.
pub fn mi_upper_bound(n: u64, kappa: f64, delta: f64, sigma: f64) -> f64 {
    let kd = kappa * delta;
    2.0 * n as f64 * kd * kd / (sigma * sigma)
}

/// Fano bound `Φ(δ)·(1 − (I + log 2)/log M)`, clamped at zero.
pub fn fano_bound(delta: f64, log_m: f64, mi: f64, phi: impl Fn(f64) -> f64) -> f64 {
    let fraction = 1.0 - (mi + LN_2) / log_m;
    phi(delta) * fraction.max(0.0)
}

/// Radius `δ = √(τσV_F/(40κ))·(log d / n)^{1/4}` at which
/// `4n(κδ)²/σ² = (τV_F/(20δ))²·log d`.
pub fn critical_delta(inputs: &TheoryInputs) -> f64 {
    critical_delta_from_ratio(
        inputs.tau * inputs.sigma * inputs.vf(),
        inputs.kappa,
        inputs.log_d() / inputs.n as f64,
    )
}

/// Critical radius from `τσV_F`, `κ` and `r = log d / n`.
pub fn critical_delta_from_ratio(tau_sigma_vf: f64, kappa: f64, log_d_over_n: f64) -> f64 {
    (tau_sigma_vf / (40.0 * kappa)).sqrt() * log_d_over_n.powf(0.25)
}

/// Both sides of the balancing equation at `delta`, `(mi side, packing side)`.
pub fn balancing_sides(inputs: &TheoryInputs, delta: f64) -> (f64, f64) {
    let lhs = 2.0 * mi_upper_bound(inputs.n, inputs.kappa, delta, inputs.sigma);
    let rhs = packing_log_lower_bound(delta, inputs.d, inputs.tau, inputs.vf());
    (lhs, rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub vf: f64,
    #[serde(rename = "c")]
    pub c_const: f64,
    pub delta: f64,
    pub minimax_lb: f64,
    pub mi_upper: f64,
    pub packing_log_lb: f64,
    pub inputs: TheoryInputs,
}

pub fn assemble_report(inputs: &TheoryInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let vf = inputs.vf();
    let delta = critical_delta(inputs);
    Ok(BoundReport {
        vf,
        c_const: inputs.c(),
        delta,
        minimax_lb: minimax_lower_bound(inputs),
        mi_upper: mi_upper_bound(inputs.n, inputs.kappa, delta, inputs.sigma),
        packing_log_lb: packing_log_lower_bound(delta, inputs.d, inputs.tau, vf),
        inputs: *inputs,
    })
}
