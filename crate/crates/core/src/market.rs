//! Forward simulation of the aggregate market.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lq::AffinePolicy;
use crate::params::{AgentType, GarchParams, MarketParams, ModelParams, RoutingMode, ShockMode};
use crate::path::MeanFieldPath;

/// Standard normal draws `Z_t`, one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockStream {
    pub seed: u64,
    pub draws: Vec<f64>,
}

impl ShockStream {
    pub fn generate(seed: u64, horizon: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = (0..horizon).map(|_| StandardNormal.sample(&mut rng)).collect();
        ShockStream { seed, draws }
    }

    pub fn zero(horizon: usize) -> Self {
        ShockStream {
            seed: 0,
            draws: vec![0.0; horizon],
        }
    }

    /// The stream implied by `sim.shock_mode` and `sim.seed`.
    pub fn for_params(params: &ModelParams) -> Self {
        match params.sim.shock_mode {
            ShockMode::SeededNoise => Self::generate(params.sim.seed, params.horizon()),
            ShockMode::ZeroNoise => Self {
                seed: params.sim.seed,
                ..Self::zero(params.horizon())
            },
        }
    }
}

pub fn garch_step(g: &GarchParams, prev_sigma2: f64, prev_eps: f64) -> f64 {
    g.omega + g.alpha * prev_eps * prev_eps + g.beta * prev_sigma2
}

/// `lambda_{s,0} * (1 + a_s * sigma)`.
pub fn scale_impacts(market: &MarketParams, sigma: f64) -> Vec<f64> {
    market
        .lambda0
        .iter()
        .zip(&market.impact_vol_sens)
        .map(|(l, a)| l * (1.0 + a * sigma))
        .collect()
}

/// Weighted softmax allocation `w_s exp(-beta c_s) / sum_u w_u exp(-beta c_u)`.
pub fn softmax_route(weights: &[f64], costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if weights.len() != costs.len() {
        return Err(Error::LengthMismatch {
            what: "routing costs",
            expected: weights.len(),
            got: costs.len(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::Invalid(format!("routing temperature must be positive, got {temperature}")));
    }
    let live = || weights.iter().zip(costs).filter(|(w, _)| **w > 0.0);
    let Some(top) = live().map(|(_, c)| -temperature * c).reduce(f64::max) else {
        return Err(Error::Invalid("routing weights are all zero".into()));
    };
    let raw: Vec<f64> = weights
        .iter()
        .zip(costs)
        .map(|(w, c)| if *w > 0.0 { w * (-temperature * c - top).exp() } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|x| x / total).collect())
}

/// Market state at one instant plus the representative inventories.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub m: f64,
    pub backlog: Vec<f64>,
    pub sigma: f64,
    pub q_retail: f64,
    pub q_arb: f64,
}

impl MarketState {
    pub fn initial(params: &ModelParams) -> Self {
        MarketState {
            m: params.sim.m0,
            backlog: vec![0.0; params.n_channels()],
            sigma: params.garch.sigma0,
            q_retail: 0.0,
            q_arb: 0.0,
        }
    }
}

/// Realised per-type controls and aggregate flows over one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFlows {
    pub a_retail: Vec<f64>,
    pub a_arb: Vec<f64>,
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub eps: f64,
}

fn routed(params: &ModelParams, agent: AgentType, controls: Vec<f64>, sigma: f64) -> Result<Vec<f64>> {
    let a = params.agent(agent);
    let impacts = scale_impacts(&params.market, sigma);
    let costs: Vec<f64> = impacts.iter().zip(a.kappa_at(sigma)).map(|(l, k)| l + k).collect();
    let split = softmax_route(&params.market.venue_weights, &costs, a.routing_temperature)?;
    let total: f64 = controls.iter().sum();
    Ok(split.into_iter().map(|x| x * total).collect())
}

/// Advances the market one step. `z` is the standard normal draw for `t`.
pub fn step_mean_field(
    params: &ModelParams,
    state: &MarketState,
    t: usize,
    retail: &AffinePolicy,
    arb: &AffinePolicy,
    z: f64,
) -> Result<(MarketState, StepFlows)> {
    let mk = &params.market;
    let (pi_r, pi_a) = (params.retail.share, params.arb.share);
    let mut a_retail = retail.sec_controls(t, state.q_retail);
    let mut a_arb = arb.sec_controls(t, state.q_arb);
    let r = arb.prim_controls(t, state.q_arb);

    // Inventories move with the agents' own choices, whatever the venue split.
    let sign = mk.primary_convention.inventory_sign();
    let q_retail = state.q_retail + a_retail.iter().sum::<f64>();
    let q_arb = state.q_arb + a_arb.iter().sum::<f64>() + sign * r.iter().sum::<f64>();

    if params.sim.routing == RoutingMode::Softmax {
        a_retail = routed(params, AgentType::Retail, a_retail, state.sigma)?;
        a_arb = routed(params, AgentType::Arbitrageur, a_arb, state.sigma)?;
    }

    let phi: Vec<f64> = a_retail.iter().zip(&a_arb).map(|(x, y)| pi_r * x + pi_a * y).collect();
    let psi: Vec<f64> = r.iter().map(|x| pi_a * x).collect();
    let eps = state.sigma * z;

    let lambda = scale_impacts(mk, state.sigma);
    let sec_impact: f64 = lambda.iter().zip(&phi).map(|(l, f)| l * f).sum();
    let prim_impact: f64 = mk.gamma_c.iter().zip(&psi).map(|(g, f)| g * f).sum();
    let m = state.m + sec_impact + prim_impact + eps;

    let backlog: Vec<f64> = state
        .backlog
        .iter()
        .zip(&mk.delta)
        .zip(&psi)
        .map(|((l, d), f)| (1.0 - d) * l + f)
        .collect();
    let sigma = garch_step(&params.garch, state.sigma * state.sigma, eps).sqrt();

    let next = MarketState {
        m,
        backlog,
        sigma,
        q_retail,
        q_arb,
    };
    let finite = next.m.is_finite()
        && next.sigma.is_finite()
        && next.q_retail.is_finite()
        && next.q_arb.is_finite()
        && next.backlog.iter().all(|x| x.is_finite());
    if !finite {
        return Err(Error::NonFinite {
            what: "market state",
            t: t + 1,
        });
    }
    Ok((
        next,
        StepFlows {
            a_retail,
            a_arb,
            r,
            phi,
            psi,
            eps,
        },
    ))
}

/// A simulated path together with the per-type controls that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub mean_field: MeanFieldPath,
    pub flows: Vec<StepFlows>,
    pub q_retail: Vec<f64>,
    pub q_arb: Vec<f64>,
}

/// Simulates `T` steps from `m0`, zero backlog, `sigma0` and zero inventories.
pub fn rollout(params: &ModelParams, retail: &AffinePolicy, arb: &AffinePolicy, shocks: &ShockStream) -> Result<Rollout> {
    let horizon = params.horizon();
    for (what, got) in [
        ("retail policy", retail.horizon()),
        ("arbitrageur policy", arb.horizon()),
        ("shock stream", shocks.draws.len()),
    ] {
        if got != horizon {
            return Err(Error::LengthMismatch {
                what,
                expected: horizon,
                got,
            });
        }
    }
    let mut mf = MeanFieldPath::zeros(horizon, params.n_venues(), params.n_channels());
    let mut flows = Vec::with_capacity(horizon);
    let mut q_retail = Vec::with_capacity(horizon + 1);
    let mut q_arb = Vec::with_capacity(horizon + 1);

    let mut state = MarketState::initial(params);
    let record = |mf: &mut MeanFieldPath, t: usize, s: &MarketState| {
        mf.m[t] = s.m;
        mf.backlog[t] = s.backlog.clone();
        mf.sigma[t] = s.sigma;
    };
    record(&mut mf, 0, &state);
    q_retail.push(0.0);
    q_arb.push(0.0);
    for t in 0..horizon {
        let (next, f) = step_mean_field(params, &state, t, retail, arb, shocks.draws[t])?;
        mf.sec_flow[t] = f.phi.clone();
        mf.prim_flow[t] = f.psi.clone();
        record(&mut mf, t + 1, &next);
        q_retail.push(next.q_retail);
        q_arb.push(next.q_arb);
        flows.push(f);
        state = next;
    }
    Ok(Rollout {
        mean_field: mf,
        flows,
        q_retail,
        q_arb,
    })
}
