//! Exact best responses by backward induction on the finite-horizon LQ problem.
//!
//! Against a frozen market path the per-period cost of type `i` is
//!
//! ```text
//! sum_s (m_t + xi_i phi_{s,t}) a_s + 1/2 sum_s kappa_{i,s,t} a_s^2 + 1/2 eta_{i,t} q^2
//!   + sum_c tau_c(L_t) r_c + 1/2 sum_c kappa_{P,c} r_c^2          (arbitrageur only)
//! ```
//!
//! with `q' = q + sum_s a_s + sign * sum_c r_c`. Every control shares the same
//! shadow price of next-period inventory, so the first-order conditions
//! collapse to one scalar linear equation in `q'` per step. The value stays
//! quadratic, `V_t(q) = p_t q^2 + s_t q + k_t`, with `V_T = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{AgentType, ModelParams};
use crate::path::MeanFieldPath;

/// Effective per-period cost coefficients of one type at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCosts {
    /// `m_t + xi_i * phi_{s,t}` per venue.
    pub sec_linear: Vec<f64>,
    /// `kappa_{i,s,0} * (1 + c_i sigma_t)` per venue.
    pub sec_quad: Vec<f64>,
    /// `tau_c(L_t) = tau0_c + theta_c * L_{c,t}`; empty for retail.
    pub prim_linear: Vec<f64>,
    /// `kappa_{P,c}`; empty for retail.
    pub prim_quad: Vec<f64>,
    /// `eta_{i,0} * (1 + d_i sigma_t)`.
    pub eta: f64,
    /// Coefficient of primary flow in the inventory update.
    pub prim_sign: f64,
}

impl StageCosts {
    fn controls(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let sec = self
            .sec_linear
            .iter()
            .zip(&self.sec_quad)
            .map(|(&l, &k)| (l, k, 1.0));
        let prim = self
            .prim_linear
            .iter()
            .zip(&self.prim_quad)
            .map(move |(&l, &k)| (l, k, self.prim_sign));
        sec.chain(prim)
    }

    /// Per-period cost at inventory `q` with the given controls.
    pub fn cost(&self, q: f64, sec: &[f64], prim: &[f64]) -> f64 {
        let mut c = 0.5 * self.eta * q * q;
        for ((&l, &k), &a) in self.sec_linear.iter().zip(&self.sec_quad).zip(sec) {
            c += l * a + 0.5 * k * a * a;
        }
        for ((&l, &k), &r) in self.prim_linear.iter().zip(&self.prim_quad).zip(prim) {
            c += l * r + 0.5 * k * r * r;
        }
        c
    }

    pub fn next_inventory(&self, q: f64, sec: &[f64], prim: &[f64]) -> f64 {
        q + sec.iter().sum::<f64>() + self.prim_sign * prim.iter().sum::<f64>()
    }
}

/// Cost coefficients of `agent` at step `t` against the frozen path `mf`.
pub fn stage_costs(params: &ModelParams, mf: &MeanFieldPath, t: usize, agent: AgentType) -> Result<StageCosts> {
    let horizon = mf.horizon();
    if t >= horizon {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    let a = params.agent(agent);
    let sigma = mf.sigma[t];
    let m = mf.m[t];
    let sec_linear = mf.sec_flow[t].iter().map(|phi| m + a.xi * phi).collect();
    let (prim_linear, prim_quad) = match agent {
        AgentType::Retail => (Vec::new(), Vec::new()),
        AgentType::Arbitrageur => {
            let mk = &params.market;
            let tau = mk
                .tau0
                .iter()
                .zip(&mk.theta)
                .zip(&mf.backlog[t])
                .map(|((t0, th), l)| t0 + th * l)
                .collect();
            (tau, a.kappa_p.clone())
        }
    };
    Ok(StageCosts {
        sec_linear,
        sec_quad: a.kappa_at(sigma),
        prim_linear,
        prim_quad,
        eta: a.eta_at(sigma),
        prim_sign: params.market.primary_convention.inventory_sign(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStep {
    pub sec_intercept: Vec<f64>,
    pub sec_slope: Vec<f64>,
    pub prim_intercept: Vec<f64>,
    pub prim_slope: Vec<f64>,
}

/// Time-indexed affine control law `u_t(q) = intercept + slope * q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePolicy {
    pub agent: AgentType,
    pub steps: Vec<PolicyStep>,
}

impl AffinePolicy {
    pub fn zero(agent: AgentType, horizon: usize, n_venues: usize, n_channels: usize) -> Self {
        let c = match agent {
            AgentType::Retail => 0,
            AgentType::Arbitrageur => n_channels,
        };
        let step = PolicyStep {
            sec_intercept: vec![0.0; n_venues],
            sec_slope: vec![0.0; n_venues],
            prim_intercept: vec![0.0; c],
            prim_slope: vec![0.0; c],
        };
        AffinePolicy {
            agent,
            steps: vec![step; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn sec_controls(&self, t: usize, q: f64) -> Vec<f64> {
        let s = &self.steps[t];
        s.sec_intercept.iter().zip(&s.sec_slope).map(|(a, b)| a + b * q).collect()
    }

    pub fn prim_controls(&self, t: usize, q: f64) -> Vec<f64> {
        let s = &self.steps[t];
        s.prim_intercept.iter().zip(&s.prim_slope).map(|(a, b)| a + b * q).collect()
    }
}

/// `V_t(q) = p[t] q^2 + s[t] q + k[t]` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueQuadratic {
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub k: Vec<f64>,
}

impl ValueQuadratic {
    pub fn eval(&self, t: usize, q: f64) -> f64 {
        self.p[t] * q * q + self.s[t] * q + self.k[t]
    }
}

/// Exact minimizer of the horizon-`T` discounted cost with zero terminal value,
/// treating `m`, `L`, `phi` and `sigma` in `mf` as exogenous.
pub fn best_response(params: &ModelParams, mf: &MeanFieldPath, agent: AgentType) -> Result<(AffinePolicy, ValueQuadratic)> {
    let horizon = mf.horizon();
    let gamma = params.sim.discount;
    let mut value = ValueQuadratic {
        p: vec![0.0; horizon + 1],
        s: vec![0.0; horizon + 1],
        k: vec![0.0; horizon + 1],
    };
    let mut steps = Vec::with_capacity(horizon);

    for t in (0..horizon).rev() {
        let costs = stage_costs(params, mf, t, agent)?;
        let (pn, sn, kn) = (value.p[t + 1], value.s[t + 1], value.k[t + 1]);

        // Responsiveness of next inventory to a unit shift in the shadow price.
        let (mut h, mut b) = (0.0, 0.0);
        for (lin, quad, dir) in costs.controls() {
            h += dir * dir / quad;
            b += dir * lin / quad;
        }
        let denom = 1.0 + 2.0 * gamma * pn * h;
        assert!(denom > 0.0, "scalar reduction singular at t={t}: p={pn}, h={h}");

        // q' = alpha * q + beta
        let alpha = 1.0 / denom;
        let beta = -(b + h * gamma * sn) / denom;
        // shadow price gamma * V'_{t+1}(q') = nu_slope * q + nu_icpt
        let nu_slope = 2.0 * gamma * pn * alpha;
        let nu_icpt = gamma * (2.0 * pn * beta + sn);

        let (mut p, mut s, mut k) = (0.5 * costs.eta, 0.0, 0.0);
        let mut icpt = Vec::new();
        let mut slope = Vec::new();
        for (lin, quad, dir) in costs.controls() {
            let u = -(lin + dir * nu_icpt) / quad;
            let v = -dir * nu_slope / quad;
            p += 0.5 * quad * v * v;
            s += lin * v + quad * u * v;
            k += lin * u + 0.5 * quad * u * u;
            icpt.push(u);
            slope.push(v);
        }
        p += gamma * pn * alpha * alpha;
        s += gamma * (2.0 * pn * alpha * beta + sn * alpha);
        k += gamma * (pn * beta * beta + sn * beta + kn);
        if !(p.is_finite() && s.is_finite() && k.is_finite()) {
            return Err(Error::NonFinite { what: "value coefficients", t });
        }
        value.p[t] = p;
        value.s[t] = s;
        value.k[t] = k;

        let n_sec = costs.sec_linear.len();
        let prim_intercept = icpt.split_off(n_sec);
        let prim_slope = slope.split_off(n_sec);
        steps.push(PolicyStep {
            sec_intercept: icpt,
            sec_slope: slope,
            prim_intercept,
            prim_slope,
        });
    }
    steps.reverse();
    Ok((AffinePolicy { agent, steps }, value))
}

/// Discounted cost of following `policy` from inventory `q0` with the market
/// path frozen.
pub fn evaluate_policy(
    params: &ModelParams,
    mf: &MeanFieldPath,
    policy: &AffinePolicy,
    agent: AgentType,
    q0: f64,
) -> Result<f64> {
    let horizon = mf.horizon();
    if policy.horizon() != horizon {
        return Err(Error::LengthMismatch {
            what: "policy",
            expected: horizon,
            got: policy.horizon(),
        });
    }
    let gamma = params.sim.discount;
    let mut q = q0;
    let mut disc = 1.0;
    let mut total = 0.0;
    for t in 0..horizon {
        let costs = stage_costs(params, mf, t, agent)?;
        let sec = policy.sec_controls(t, q);
        let prim = policy.prim_controls(t, q);
        total += disc * costs.cost(q, &sec, &prim);
        q = costs.next_inventory(q, &sec, &prim);
        disc *= gamma;
    }
    Ok(total)
}

/// Largest absolute first-order-condition residual of `policy` along the
/// inventory path it induces from `q0`, checked against the value function
/// `value` of the same solve.
pub fn max_foc_residual(
    params: &ModelParams,
    mf: &MeanFieldPath,
    policy: &AffinePolicy,
    value: &ValueQuadratic,
    agent: AgentType,
    q0: f64,
) -> Result<f64> {
    let gamma = params.sim.discount;
    let mut q = q0;
    let mut worst: f64 = 0.0;
    for t in 0..mf.horizon() {
        let costs = stage_costs(params, mf, t, agent)?;
        let sec = policy.sec_controls(t, q);
        let prim = policy.prim_controls(t, q);
        let next = costs.next_inventory(q, &sec, &prim);
        let shadow = gamma * (2.0 * value.p[t + 1] * next + value.s[t + 1]);
        for ((l, k), a) in costs.sec_linear.iter().zip(&costs.sec_quad).zip(&sec) {
            worst = worst.max((k * a + l + shadow).abs());
        }
        for ((l, k), r) in costs.prim_linear.iter().zip(&costs.prim_quad).zip(&prim) {
            worst = worst.max((k * r + l + costs.prim_sign * shadow).abs());
        }
        q = next;
    }
    Ok(worst)
}
