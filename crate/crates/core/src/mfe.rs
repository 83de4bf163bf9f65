//! Damped policy iteration to a mean-field equilibrium.

use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lq::{best_response, evaluate_policy, AffinePolicy};
use crate::market::{rollout, Rollout, ShockStream};
use crate::params::{AgentType, ModelParams};
use crate::path::MeanFieldPath;

/// Below this `|J(pi)|` the relative gain is not reported.
pub const DEGENERATE_COST: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exploitability {
    /// `J(pi)`: cost of the candidate policy against the frozen path.
    pub cost: f64,
    /// `J(BR)`: cost of the one-shot best response.
    pub best_cost: f64,
    /// `J(pi) - J(BR)`.
    pub absolute: f64,
    /// `(J(pi) - J(BR)) / |J(pi)|`, `None` when `|J(pi)|` is degenerate.
    pub normalized: Option<f64>,
}

impl Exploitability {
    /// The normalized gain, or the absolute one in the degenerate case.
    pub fn value(&self) -> f64 {
        self.normalized.unwrap_or(self.absolute)
    }
}

/// Gain available to one agent of type `agent` who deviates from `policy`
/// while the path `mf` stays put.
pub fn exploitability_against(
    params: &ModelParams,
    mf: &MeanFieldPath,
    policy: &AffinePolicy,
    agent: AgentType,
) -> Result<Exploitability> {
    let cost = evaluate_policy(params, mf, policy, agent, 0.0)?;
    let (br, _) = best_response(params, mf, agent)?;
    let best_cost = evaluate_policy(params, mf, &br, agent, 0.0)?;
    let absolute = cost - best_cost;
    let normalized = (cost.abs() >= DEGENERATE_COST).then(|| absolute / cost.abs());
    Ok(Exploitability {
        cost,
        best_cost,
        absolute,
        normalized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub k: usize,
    pub exploit_retail: f64,
    pub exploit_arb: f64,
    pub max_exploit: f64,
    pub mf_distance: f64,
    /// Seconds since the solve started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub mean_field: MeanFieldPath,
    pub retail_policy: AffinePolicy,
    pub arb_policy: AffinePolicy,
    /// Rollout of the final policies, with per-type controls.
    pub trace: Rollout,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the iteration stopped on a non-finite state.
    pub failure: Option<String>,
}

impl EquilibriumResult {
    pub fn policy(&self, agent: AgentType) -> &AffinePolicy {
        match agent {
            AgentType::Retail => &self.retail_policy,
            AgentType::Arbitrageur => &self.arb_policy,
        }
    }

    pub fn last(&self) -> Option<&IterationDiagnostics> {
        self.diagnostics.last()
    }
}

/// Exploitability of the stored policy of `agent` against the stored path.
pub fn exploitability(params: &ModelParams, eq: &EquilibriumResult, agent: AgentType) -> Result<Exploitability> {
    exploitability_against(params, &eq.mean_field, eq.policy(agent), agent)
}

/// Policy iteration from the zero-policy path. One shock stream is drawn up
/// front and reused by every rollout.
pub fn solve_mfe(params: &ModelParams) -> Result<EquilibriumResult> {
    params.validate().into_result()?;
    let start = Instant::now();
    let sim = &params.sim;
    let (h, s, c) = (params.horizon(), params.n_venues(), params.n_channels());
    let shocks = ShockStream::for_params(params);

    let mut retail_policy = AffinePolicy::zero(AgentType::Retail, h, s, c);
    let mut arb_policy = AffinePolicy::zero(AgentType::Arbitrageur, h, s, c);
    let mut trace = rollout(params, &retail_policy, &arb_policy, &shocks)?;
    let mut mu = trace.mean_field.clone();
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut failure = None;

    for k in 1..=sim.max_iters {
        let (br_r, br_a) = rayon::join(
            || best_response(params, &mu, AgentType::Retail),
            || best_response(params, &mu, AgentType::Arbitrageur),
        );
        let (pol_r, pol_a) = match (br_r, br_a) {
            (Ok((r, _)), Ok((a, _))) => (r, a),
            (Err(e), _) | (_, Err(e)) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let fresh = match rollout(params, &pol_r, &pol_a, &shocks) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let next = mu.blend(&fresh.mean_field, sim.damping);
        let mf_distance = next.price_distance(&mu);
        let (e_r, e_a) = rayon::join(
            || exploitability_against(params, &next, &pol_r, AgentType::Retail),
            || exploitability_against(params, &next, &pol_a, AgentType::Arbitrageur),
        );
        let (e_r, e_a) = match (e_r, e_a) {
            (Ok(r), Ok(a)) => (r.value(), a.value()),
            (Err(e), _) | (_, Err(e)) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let diag = IterationDiagnostics {
            k,
            exploit_retail: e_r,
            exploit_arb: e_a,
            max_exploit: e_r.max(e_a),
            mf_distance,
            wall_time: start.elapsed().as_secs_f64(),
        };
        debug!(
            "iter {k}: exploit {:.3e}/{:.3e} dist {:.3e}",
            diag.exploit_retail, diag.exploit_arb, diag.mf_distance
        );
        let done = diag.max_exploit < sim.tol_exploit && diag.mf_distance < sim.tol_meanfield;
        diagnostics.push(diag);
        mu = next;
        retail_policy = pol_r;
        arb_policy = pol_a;
        trace = fresh;
        if !mu.m.iter().all(|x| x.is_finite()) {
            failure = Some(format!("mean field diverged at iteration {k}"));
            break;
        }
        if done {
            converged = true;
            break;
        }
    }
    if let Some(f) = &failure {
        warn!("equilibrium iteration aborted: {f}");
    }
    Ok(EquilibriumResult {
        iterations: diagnostics.len(),
        mean_field: mu,
        retail_policy,
        arb_policy,
        trace,
        diagnostics,
        converged,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_par_nothing_happens() {
        let mut p = ModelParams::baseline();
        p.sim.m0 = 0.0;
        let eq = solve_mfe(&p).unwrap();
        assert!(eq.converged);
        assert!(eq.iterations <= 2);
        assert!(eq.mean_field.m.iter().all(|&m| m == 0.0));
        assert_eq!(eq.last().unwrap().max_exploit, 0.0);
    }

    #[test]
    fn best_response_has_no_gain() {
        let p = ModelParams::baseline();
        let h = p.horizon();
        let zero_r = AffinePolicy::zero(AgentType::Retail, h, 3, 2);
        let zero_a = AffinePolicy::zero(AgentType::Arbitrageur, h, 3, 2);
        let mf = rollout(&p, &zero_r, &zero_a, &ShockStream::zero(h)).unwrap().mean_field;
        for agent in AgentType::BOTH {
            let (br, _) = best_response(&p, &mf, agent).unwrap();
            let e = exploitability_against(&p, &mf, &br, agent).unwrap();
            assert!(e.value().abs() < 1e-12, "{agent}: {e:?}");
        }
    }

    #[test]
    fn idle_policy_is_exploitable_in_a_depeg() {
        let p = ModelParams::baseline();
        let h = p.horizon();
        let zero_r = AffinePolicy::zero(AgentType::Retail, h, 3, 2);
        let zero_a = AffinePolicy::zero(AgentType::Arbitrageur, h, 3, 2);
        let mf = rollout(&p, &zero_r, &zero_a, &ShockStream::zero(h)).unwrap().mean_field;
        let e = exploitability_against(&p, &mf, &zero_r, AgentType::Retail).unwrap();
        // J(0) = 0, so only the absolute gain is meaningful
        assert!(e.normalized.is_none());
        assert!(e.absolute > 0.0);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = ModelParams::baseline();
        p.sim.discount = 1.2;
        assert!(solve_mfe(&p).is_err());
    }
}
