//! Reference solvers shared by the integration tests. They rebuild the agent
//! problem from the raw parameters and never call the library's backward
//! induction.

#![allow(dead_code, clippy::needless_range_loop)]

use pegmfg::{AgentType, MeanFieldPath, ModelParams, PrimaryConvention};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Linear and quadratic coefficients of every control at step `t`, with the
/// direction each control moves inventory.
pub struct Coeffs {
    pub lin: Vec<f64>,
    pub quad: Vec<f64>,
    pub dir: Vec<f64>,
    pub eta: f64,
    pub n_sec: usize,
}

pub fn coeffs(p: &ModelParams, mf: &MeanFieldPath, t: usize, agent: AgentType) -> Coeffs {
    let a = match agent {
        AgentType::Retail => &p.retail,
        AgentType::Arbitrageur => &p.arb,
    };
    let sigma = mf.sigma[t];
    let mut lin = Vec::new();
    let mut quad = Vec::new();
    let mut dir = Vec::new();
    for s in 0..p.market.n_venues {
        lin.push(mf.m[t] + a.xi * mf.sec_flow[t][s]);
        quad.push(a.kappa0[s] * (1.0 + a.vol_sens_exec * sigma));
        dir.push(1.0);
    }
    if agent == AgentType::Arbitrageur {
        let sign = match p.market.primary_convention {
            PrimaryConvention::Redemption => -1.0,
            PrimaryConvention::Literal => 1.0,
        };
        for c in 0..p.market.n_channels {
            lin.push(p.market.tau0[c] + p.market.theta[c] * mf.backlog[t][c]);
            quad.push(a.kappa_p[c]);
            dir.push(sign);
        }
    }
    Coeffs {
        lin,
        quad,
        dir,
        eta: a.eta0 * (1.0 + a.vol_sens_inv * sigma),
        n_sec: p.market.n_venues,
    }
}

/// Cheapest way to move inventory by `x` in one step: minimises
/// `sum lin_j u_j + 1/2 quad_j u_j^2` subject to `sum dir_j u_j = x`.
pub fn allocate(c: &Coeffs, x: f64) -> (Vec<f64>, f64) {
    let h: f64 = c.dir.iter().zip(&c.quad).map(|(d, k)| d * d / k).sum();
    let b: f64 = c.dir.iter().zip(&c.quad).zip(&c.lin).map(|((d, k), l)| d * l / k).sum();
    let mu = -(x + b) / h;
    let u: Vec<f64> = (0..c.lin.len()).map(|j| -(c.lin[j] + c.dir[j] * mu) / c.quad[j]).collect();
    let cost = (0..u.len()).map(|j| c.lin[j] * u[j] + 0.5 * c.quad[j] * u[j] * u[j]).sum();
    (u, cost)
}

pub struct DpSolution {
    /// Optimal cost from `q = 0` at `t = 0`.
    pub cost: f64,
    /// Controls along the optimal grid path from `q = 0`.
    pub controls: Vec<Vec<f64>>,
}

/// Dynamic programming with next-period inventory restricted to the grid
/// `q in [-2, 2]` with 4001 points, exhaustive over the grid at every state.
pub fn grid_dp(p: &ModelParams, mf: &MeanFieldPath, agent: AgentType) -> DpSolution {
    const N: usize = 4001;
    let q = |i: usize| -2.0 + 4.0 * i as f64 / (N - 1) as f64;
    let horizon = mf.sec_flow.len();
    let gamma = p.sim.discount;
    let cs: Vec<Coeffs> = (0..horizon).map(|t| coeffs(p, mf, t, agent)).collect();
    let mut v_next = vec![0.0; N];
    let mut argmins = vec![vec![0usize; N]; horizon];
    for t in (0..horizon).rev() {
        // Transition cost depends only on the index offset.
        let move_cost: Vec<f64> = (0..2 * N - 1)
            .map(|k| allocate(&cs[t], q(k) - q(N - 1) + 0.0).1)
            .collect();
        let mut v = vec![0.0; N];
        for i in 0..N {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for j in 0..N {
                let c = move_cost[j + N - 1 - i] + gamma * v_next[j];
                if c < best {
                    best = c;
                    arg = j;
                }
            }
            v[i] = 0.5 * cs[t].eta * q(i) * q(i) + best;
            argmins[t][i] = arg;
        }
        v_next = v;
    }
    let mut i = (N - 1) / 2;
    let mut controls = Vec::new();
    for t in 0..horizon {
        let j = argmins[t][i];
        controls.push(allocate(&cs[t], q(j) - q(i)).0);
        i = j;
    }
    DpSolution {
        cost: v_next[(N - 1) / 2],
        controls,
    }
}

/// Discounted cost of an open-loop control sequence from `q = 0`.
pub fn open_loop_cost(p: &ModelParams, mf: &MeanFieldPath, agent: AgentType, u: &[Vec<f64>]) -> f64 {
    let gamma = p.sim.discount;
    let mut q = 0.0;
    let mut total = 0.0;
    let mut disc = 1.0;
    for (t, ut) in u.iter().enumerate() {
        let c = coeffs(p, mf, t, agent);
        let mut stage = 0.5 * c.eta * q * q;
        for j in 0..ut.len() {
            stage += c.lin[j] * ut[j] + 0.5 * c.quad[j] * ut[j] * ut[j];
            q += c.dir[j] * ut[j];
        }
        total += disc * stage;
        disc *= gamma;
    }
    total
}

/// Exact minimiser of the open-loop problem. The cost is a quadratic in the
/// stacked controls; its gradient and Hessian are read off by central
/// differences and the normal equations solved by Gaussian elimination.
pub fn open_loop_optimum(p: &ModelParams, mf: &MeanFieldPath, agent: AgentType) -> Vec<Vec<f64>> {
    let horizon = mf.sec_flow.len();
    let width = coeffs(p, mf, 0, agent).lin.len();
    let n = horizon * width;
    let unstack = |x: &[f64]| -> Vec<Vec<f64>> { x.chunks(width).map(<[f64]>::to_vec).collect() };
    let f = |x: &[f64]| open_loop_cost(p, mf, agent, &unstack(x));
    let h = 1.0;
    let e = |i: usize, s: f64| {
        let mut x = vec![0.0; n];
        x[i] = s;
        x
    };
    let mut grad = vec![0.0; n];
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        grad[i] = (f(&e(i, h)) - f(&e(i, -h))) / (2.0 * h);
        for j in 0..n {
            let mut pp = e(i, h);
            pp[j] += h;
            let mut pm = e(i, h);
            pm[j] -= h;
            let mut mp = e(i, -h);
            mp[j] += h;
            let mut mm = e(i, -h);
            mm[j] -= h;
            hess[i][j] = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h);
        }
    }
    let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
    unstack(&solve_dense(hess, rhs))
}

pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// A small random problem in the neighbourhood of the baseline scale.
pub fn random_instance(seed: u64) -> (ModelParams, MeanFieldPath) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.random_range(1..=4);
    let s = rng.random_range(1..=2);
    let c = 1;
    let mut p = ModelParams::baseline();
    let mk = &mut p.market;
    mk.n_venues = s;
    mk.n_channels = c;
    mk.lambda0 = (0..s).map(|_| rng.random_range(0.5..3.0)).collect();
    mk.impact_vol_sens = (0..s).map(|_| rng.random_range(0.0..1.0)).collect();
    mk.venue_weights = vec![1.0 / s as f64; s];
    mk.gamma_c = vec![rng.random_range(0.5..3.0)];
    mk.delta = vec![rng.random_range(0.0..1.0)];
    mk.tau0 = vec![rng.random_range(0.0..0.005)];
    mk.theta = vec![rng.random_range(0.0..0.5)];
    mk.primary_convention = if rng.random_bool(0.5) {
        PrimaryConvention::Redemption
    } else {
        PrimaryConvention::Literal
    };
    for a in [&mut p.retail, &mut p.arb] {
        a.kappa0 = (0..s).map(|_| rng.random_range(0.5..5.0)).collect();
        a.eta0 = rng.random_range(0.05..0.5);
        a.xi = rng.random_range(0.0..1.0);
        a.vol_sens_exec = rng.random_range(0.0..5.0);
        a.vol_sens_inv = rng.random_range(0.0..5.0);
    }
    p.arb.kappa_p = vec![rng.random_range(0.3..3.0)];
    p.sim.horizon = horizon;
    p.sim.discount = rng.random_range(0.9..0.99);
    assert!(p.validate().is_ok(), "{}", p.validate());

    let mut mf = MeanFieldPath::zeros(horizon, s, c);
    for t in 0..=horizon {
        mf.m[t] = rng.random_range(-0.02..0.01);
        mf.sigma[t] = rng.random_range(0.0..0.01);
        mf.backlog[t] = vec![rng.random_range(0.0..0.02)];
    }
    for t in 0..horizon {
        mf.sec_flow[t] = (0..s).map(|_| rng.random_range(-0.01..0.01)).collect();
        mf.prim_flow[t] = vec![rng.random_range(-0.01..0.01)];
    }
    (p, mf)
}
