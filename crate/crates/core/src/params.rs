//! Model parameters, validation, config I/O and dotted-path overrides.
//!
//! Conventions: mispricing is `price - 1` in dollars (negative below par),
//! time steps are `dt` hours, and flows are notional units normalized by
//! market size, so impact coefficients carry the price scale.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentType {
    Retail,
    Arbitrageur,
}

impl AgentType {
    pub const BOTH: [AgentType; 2] = [AgentType::Retail, AgentType::Arbitrageur];

    pub fn label(self) -> &'static str {
        match self {
            AgentType::Retail => "retail",
            AgentType::Arbitrageur => "arb",
        }
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How a primary-channel flow `r` enters the arbitrageur's inventory.
///
/// `Redemption` reads `r > 0` as coins handed to the issuer at par: inventory
/// falls by `r` and the secondary price is pushed toward the peg by
/// `gamma_c * r`. `Literal` adds `r` to inventory, as the inventory equation is
/// usually written, which makes a positive routing cost reward negative flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimaryConvention {
    #[default]
    Redemption,
    Literal,
}

impl PrimaryConvention {
    /// Coefficient of `r` in the inventory update.
    pub fn inventory_sign(self) -> f64 {
        match self {
            PrimaryConvention::Redemption => -1.0,
            PrimaryConvention::Literal => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShockMode {
    SeededNoise,
    #[default]
    ZeroNoise,
}

/// How each type's secondary flow is split across venues in the market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingMode {
    /// Per-venue flows straight from the first-order conditions.
    #[default]
    Foc,
    /// The type's total secondary flow is re-split by softmax over
    /// `lambda_{s,t} + kappa_{i,s,t}`.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    pub n_venues: usize,
    pub n_channels: usize,
    /// Baseline secondary price impact per venue.
    pub lambda0: Vec<f64>,
    /// Primary price impact per channel.
    pub gamma_c: Vec<f64>,
    pub venue_weights: Vec<f64>,
    /// Backlog processing rate per channel, in [0, 1].
    pub delta: Vec<f64>,
    /// Routing cost `tau_c(L) = tau0_c + theta_c * L_c`.
    pub tau0: Vec<f64>,
    pub theta: Vec<f64>,
    /// Volatility sensitivity of secondary impact per venue.
    pub impact_vol_sens: Vec<f64>,
    #[serde(default)]
    pub primary_convention: PrimaryConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentParams {
    pub share: f64,
    /// Baseline secondary execution friction per venue.
    pub kappa0: Vec<f64>,
    pub eta0: f64,
    pub xi: f64,
    /// Primary execution friction per channel; empty for retail.
    #[serde(default)]
    pub kappa_p: Vec<f64>,
    pub vol_sens_exec: f64,
    pub vol_sens_inv: f64,
    pub routing_temperature: f64,
}

impl AgentParams {
    /// Volatility-scaled secondary frictions at `sigma`.
    pub fn kappa_at(&self, sigma: f64) -> Vec<f64> {
        let scale = 1.0 + self.vol_sens_exec * sigma;
        self.kappa0.iter().map(|k| k * scale).collect()
    }

    pub fn eta_at(&self, sigma: f64) -> f64 {
        self.eta0 * (1.0 + self.vol_sens_inv * sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: usize,
    pub discount: f64,
    pub m0: f64,
    /// Step length in hours.
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub shock_mode: ShockMode,
    pub damping: f64,
    pub max_iters: usize,
    pub tol_exploit: f64,
    pub tol_meanfield: f64,
    #[serde(default)]
    pub routing: RoutingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub market: MarketParams,
    pub retail: AgentParams,
    pub arb: AgentParams,
    pub garch: GarchParams,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.path.contains(needle) || v.message.contains(needle))
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Invalid(self.to_string()))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

fn check_vec(
    report: &mut ValidationReport,
    path: &str,
    values: &[f64],
    len: usize,
    strictly_positive: bool,
) {
    if values.len() != len {
        report.push(path, format!("expected {len} entries, found {}", values.len()));
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            report.push(format!("{path}[{i}]"), "must be finite");
        } else if strictly_positive && v <= 0.0 {
            report.push(format!("{path}[{i}]"), "must be strictly positive");
        } else if v < 0.0 {
            report.push(format!("{path}[{i}]"), "must be nonnegative");
        }
    }
}

fn check_scalar(report: &mut ValidationReport, path: &str, v: f64) {
    if !v.is_finite() {
        report.push(path, "must be finite");
    } else if v < 0.0 {
        report.push(path, "must be nonnegative");
    }
}

fn check_agent(report: &mut ValidationReport, prefix: &str, a: &AgentParams, s: usize, c: usize, arb: bool) {
    if !(a.share.is_finite() && (0.0..=1.0).contains(&a.share)) {
        report.push(format!("{prefix}.share"), "must lie in [0, 1]");
    }
    check_vec(report, &format!("{prefix}.kappa0"), &a.kappa0, s, true);
    check_scalar(report, &format!("{prefix}.eta0"), a.eta0);
    check_scalar(report, &format!("{prefix}.xi"), a.xi);
    check_scalar(report, &format!("{prefix}.vol_sens_exec"), a.vol_sens_exec);
    check_scalar(report, &format!("{prefix}.vol_sens_inv"), a.vol_sens_inv);
    if !(a.routing_temperature.is_finite() && a.routing_temperature > 0.0) {
        report.push(format!("{prefix}.routing_temperature"), "must be strictly positive");
    }
    if arb {
        check_vec(report, &format!("{prefix}.kappa_p"), &a.kappa_p, c, true);
    } else if !a.kappa_p.is_empty() {
        report.push(format!("{prefix}.kappa_p"), "retail has no primary access; must be empty");
    }
}

/// Checks every invariant of the parameter set. Pure: the report depends only
/// on `params`.
pub fn validate(params: &ModelParams) -> ValidationReport {
    let mut r = ValidationReport::default();
    let m = &params.market;
    let (s, c) = (m.n_venues, m.n_channels);
    if s == 0 {
        r.push("market.n_venues", "must be a positive count");
    }
    if c == 0 {
        r.push("market.n_channels", "must be a positive count");
    }
    check_vec(&mut r, "market.lambda0", &m.lambda0, s, false);
    check_vec(&mut r, "market.gamma_c", &m.gamma_c, c, false);
    check_vec(&mut r, "market.venue_weights", &m.venue_weights, s, false);
    check_vec(&mut r, "market.delta", &m.delta, c, false);
    check_vec(&mut r, "market.tau0", &m.tau0, c, false);
    check_vec(&mut r, "market.theta", &m.theta, c, false);
    check_vec(&mut r, "market.impact_vol_sens", &m.impact_vol_sens, s, false);
    for (i, d) in m.delta.iter().enumerate() {
        if d.is_finite() && *d > 1.0 {
            r.push(format!("market.delta[{i}]"), "must lie in [0, 1]");
        }
    }
    let wsum: f64 = m.venue_weights.iter().sum();
    if (wsum - 1.0).abs() > SUM_TOL {
        r.push("market.venue_weights", format!("weights sum to {wsum}, not 1"));
    }

    check_agent(&mut r, "retail", &params.retail, s, c, false);
    check_agent(&mut r, "arb", &params.arb, s, c, true);
    let shares = params.retail.share + params.arb.share;
    if (shares - 1.0).abs() > SUM_TOL {
        r.push("retail.share + arb.share", format!("shares sum ≠ 1 (got {shares})"));
    }

    let g = &params.garch;
    check_scalar(&mut r, "garch.omega", g.omega);
    check_scalar(&mut r, "garch.alpha", g.alpha);
    check_scalar(&mut r, "garch.beta", g.beta);
    check_scalar(&mut r, "garch.sigma0", g.sigma0);
    if g.alpha + g.beta >= 1.0 {
        r.push("garch.alpha + garch.beta", format!("α+β ≥ 1 (got {})", g.alpha + g.beta));
    }
    if g.sigma0 == 0.0 && g.omega <= 0.0 {
        r.push("garch.omega", "must be positive when sigma0 = 0");
    }

    let sim = &params.sim;
    if sim.horizon < 1 {
        r.push("sim.horizon", "must be at least 1");
    }
    if !(sim.discount > 0.0 && sim.discount < 1.0) {
        r.push("sim.discount", "must lie in (0, 1)");
    }
    if !sim.m0.is_finite() {
        r.push("sim.m0", "must be finite");
    }
    if !(sim.dt.is_finite() && sim.dt > 0.0) {
        r.push("sim.dt", "must be strictly positive");
    }
    if !(sim.damping > 0.0 && sim.damping <= 1.0) {
        r.push("sim.damping", "must lie in (0, 1]");
    }
    if sim.max_iters < 1 {
        r.push("sim.max_iters", "must be at least 1");
    }
    if !(sim.tol_exploit.is_finite() && sim.tol_exploit > 0.0) {
        r.push("sim.tol_exploit", "must be strictly positive");
    }
    if !(sim.tol_meanfield.is_finite() && sim.tol_meanfield > 0.0) {
        r.push("sim.tol_meanfield", "must be strictly positive");
    }
    r
}

impl ModelParams {
    /// The reference parameter set: three venues, two channels, `T = 40`,
    /// `gamma = 0.97`, `m0 = -0.01`. Parameters the baseline table leaves open
    /// (routing costs, backlog decay, volatility sensitivities, GARCH) are set
    /// to the desk calibration documented in `configs/baseline.toml`.
    pub fn baseline() -> Self {
        ModelParams {
            market: MarketParams {
                n_venues: 3,
                n_channels: 2,
                lambda0: vec![1.6, 1.8, 2.5],
                gamma_c: vec![2.0, 1.4],
                venue_weights: vec![0.5, 0.35, 0.15],
                delta: vec![0.1899, 0.1899],
                tau0: vec![0.0, 0.0],
                theta: vec![0.03052, 0.03052],
                impact_vol_sens: vec![145.7, 145.7, 145.7],
                primary_convention: PrimaryConvention::Redemption,
            },
            retail: AgentParams {
                share: 0.85,
                kappa0: vec![2.0, 3.0, 4.0],
                eta0: 0.15,
                xi: 0.5,
                kappa_p: vec![],
                vol_sens_exec: 1784.0,
                vol_sens_inv: 1737.0,
                routing_temperature: 1.0,
            },
            arb: AgentParams {
                share: 0.15,
                kappa0: vec![1.2, 1.5, 2.0],
                eta0: 0.20,
                xi: 0.3,
                kappa_p: vec![0.8, 0.6],
                vol_sens_exec: 164.4,
                vol_sens_inv: 14.12,
                routing_temperature: 1.0,
            },
            garch: GarchParams {
                omega: 1.022e-5,
                alpha: 0.1,
                beta: 0.5223,
                sigma0: 0.008602,
            },
            sim: SimConfig {
                horizon: 40,
                discount: 0.97,
                m0: -0.01,
                dt: 1.0,
                seed: 7,
                shock_mode: ShockMode::ZeroNoise,
                damping: 0.5,
                max_iters: 50,
                tol_exploit: 1e-2,
                tol_meanfield: 1e-6,
                routing: RoutingMode::Foc,
            },
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    pub fn agent(&self, agent: AgentType) -> &AgentParams {
        match agent {
            AgentType::Retail => &self.retail,
            AgentType::Arbitrageur => &self.arb,
        }
    }

    pub fn n_venues(&self) -> usize {
        self.market.n_venues
    }

    pub fn n_channels(&self) -> usize {
        self.market.n_channels
    }

    pub fn horizon(&self) -> usize {
        self.sim.horizon
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Applies a textual override such as `market.lambda0[2]=3.0` or
    /// `sim.shock_mode=seeded-noise`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment.split_once('=').ok_or_else(|| Error::BadOverride {
            path: assignment.to_string(),
            value: String::new(),
            reason: "expected PATH=VALUE".into(),
        })?;
        set_param_str(self, path.trim(), value.trim())
    }
}

/// Short names accepted wherever a parameter path is expected (sweep axes,
/// calibration free parameters, overrides).
fn resolve_alias(name: &str) -> &str {
    match name {
        "kappa_p" => "arb.kappa_p",
        "kappa_r" => "retail.kappa0",
        "kappa_a" => "arb.kappa0",
        "lambda" | "lambda0" => "market.lambda0",
        "gamma_c" => "market.gamma_c",
        "delta" => "market.delta",
        "tau0" => "market.tau0",
        "theta" => "market.theta",
        "eta_r" => "retail.eta0",
        "eta_a" => "arb.eta0",
        "xi_r" => "retail.xi",
        "xi_a" => "arb.xi",
        "omega" => "garch.omega",
        "alpha" => "garch.alpha",
        "beta" => "garch.beta",
        "sigma0" => "garch.sigma0",
        "m0" => "sim.m0",
        "discount" => "sim.discount",
        other => other,
    }
}

/// A parsed parameter address: dotted segments plus an optional element index.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Address {
    segments: Vec<String>,
    index: Option<usize>,
}

fn parse_address(raw: &str) -> Result<Address> {
    let (base, index) = match raw.find('[') {
        Some(open) => {
            let close = raw.rfind(']').filter(|&c| c > open && c == raw.len() - 1).ok_or_else(|| {
                Error::UnknownParameter(raw.to_string())
            })?;
            let idx: usize = raw[open + 1..close]
                .trim()
                .parse()
                .map_err(|_| Error::UnknownParameter(raw.to_string()))?;
            (&raw[..open], Some(idx))
        }
        None => (raw, None),
    };
    let base = resolve_alias(base.trim());
    let segments: Vec<String> = base.split('.').map(str::to_string).collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::UnknownParameter(raw.to_string()));
    }
    Ok(Address { segments, index })
}

fn locate<'a>(root: &'a mut Value, addr: &Address, raw: &str) -> Result<&'a mut Value> {
    let mut node = root;
    for seg in &addr.segments {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(seg))
            .ok_or_else(|| Error::UnknownParameter(raw.to_string()))?;
    }
    Ok(node)
}

fn assign_leaf(leaf: &mut Value, value: &str, raw: &str) -> Result<()> {
    let bad = |reason: &str| Error::BadOverride {
        path: raw.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    };
    match leaf {
        Value::String(_) => *leaf = Value::String(value.to_string()),
        Value::Number(n) if n.is_u64() || n.is_i64() => {
            let parsed: f64 = value.parse().map_err(|_| bad("not a number"))?;
            if parsed.fract() != 0.0 || parsed < 0.0 {
                return Err(bad("expected a nonnegative integer"));
            }
            *leaf = Value::from(parsed as u64);
        }
        Value::Number(_) => {
            let parsed: f64 = value.parse().map_err(|_| bad("not a number"))?;
            *leaf = serde_json::Number::from_f64(parsed)
                .map(Value::Number)
                .ok_or_else(|| bad("value must be finite"))?;
        }
        Value::Array(items) => {
            // No index: broadcast to every element.
            for item in items.iter_mut() {
                assign_leaf(item, value, raw)?;
            }
        }
        _ => return Err(bad("not a settable field")),
    }
    Ok(())
}

/// Sets a parameter addressed by path (aliases allowed) from its textual form.
///
/// Vector fields without an index are broadcast. Two derived names exist:
/// `pi_r` (sets both shares, `pi_a = 1 - pi_r`) and `lambda_scale`
/// (multiplies every `lambda0` entry).
pub fn set_param_str(params: &mut ModelParams, raw: &str, value: &str) -> Result<()> {
    match raw {
        "pi_r" | "pi_a" | "lambda_scale" => {
            let v: f64 = value.parse().map_err(|_| Error::BadOverride {
                path: raw.to_string(),
                value: value.to_string(),
                reason: "not a number".into(),
            })?;
            return set_param(params, raw, v);
        }
        _ => {}
    }
    let addr = parse_address(raw)?;
    let mut tree = serde_json::to_value(&*params).map_err(|e| Error::Config(e.to_string()))?;
    let node = locate(&mut tree, &addr, raw)?;
    let leaf = match addr.index {
        Some(i) => node
            .as_array_mut()
            .and_then(|a| a.get_mut(i))
            .ok_or_else(|| Error::UnknownParameter(raw.to_string()))?,
        None => node,
    };
    assign_leaf(leaf, value, raw)?;
    *params = serde_json::from_value(tree).map_err(|e| Error::BadOverride {
        path: raw.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })?;
    Ok(())
}

/// Numeric form of [`set_param_str`].
pub fn set_param(params: &mut ModelParams, raw: &str, value: f64) -> Result<()> {
    match raw {
        "pi_r" => {
            params.retail.share = value;
            params.arb.share = 1.0 - value;
            Ok(())
        }
        "pi_a" => {
            params.arb.share = value;
            params.retail.share = 1.0 - value;
            Ok(())
        }
        "lambda_scale" => {
            for l in params.market.lambda0.iter_mut() {
                *l *= value;
            }
            Ok(())
        }
        _ => set_param_str(params, raw, &format!("{value:?}")),
    }
}

/// Reads a numeric parameter. Vector fields without an index return their
/// first element.
pub fn get_param(params: &ModelParams, raw: &str) -> Result<f64> {
    match raw {
        "pi_r" => return Ok(params.retail.share),
        "pi_a" => return Ok(params.arb.share),
        "lambda_scale" => return Ok(1.0),
        _ => {}
    }
    let addr = parse_address(raw)?;
    let mut tree = serde_json::to_value(params).map_err(|e| Error::Config(e.to_string()))?;
    let node = locate(&mut tree, &addr, raw)?;
    let leaf = match (addr.index, node.is_array()) {
        (Some(i), true) => node.get(i),
        (None, true) => node.get(0),
        (None, false) => Some(&*node),
        (Some(_), false) => None,
    };
    leaf.and_then(Value::as_f64)
        .ok_or_else(|| Error::UnknownParameter(raw.to_string()))
}
