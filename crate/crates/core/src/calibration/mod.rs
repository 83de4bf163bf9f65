//! Regime segmentation and price-path calibration.

mod de;
mod segment;

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::debug;
use serde::{Deserialize, Serialize};

pub use de::{differential_evolution, DeOutcome, DeSettings};
pub use segment::{segment_regimes, IndexRange, RegimeSegmentation, SegmentOptions};

use crate::data::ObservedSeries;
use crate::error::{Error, Result};
use crate::mfe::solve_mfe;
use crate::params::{get_param, set_param, ModelParams, ShockMode};

/// Loss assigned to candidates whose equilibrium fails.
pub const PENALTY_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl FreeParameter {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        FreeParameter {
            name: name.into(),
            lo,
            hi,
        }
    }

    /// `name:lo:hi`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.rsplitn(3, ':').collect();
        let [hi, lo, name] = parts[..] else {
            return Err(Error::Invalid(format!("free parameter `{spec}`: expected name:lo:hi")));
        };
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("free parameter `{spec}`: `{s}` is not a number")))
        };
        Ok(Self::new(name.trim(), num(lo)?, num(hi)?))
    }
}

/// The per-regime default: primary and secondary frictions, venue impact and
/// the GARCH triple, each spanning a factor of ten either side of `params`.
pub fn default_free_parameters(params: &ModelParams) -> Vec<FreeParameter> {
    let mut out = Vec::new();
    let mut span = |path: String, v: f64, cap: f64| out.push(FreeParameter::new(path, 0.1 * v, (10.0 * v).min(cap)));
    for (c, v) in params.arb.kappa_p.iter().enumerate() {
        span(format!("arb.kappa_p[{c}]"), *v, f64::INFINITY);
    }
    for (s, v) in params.retail.kappa0.iter().enumerate() {
        span(format!("retail.kappa0[{s}]"), *v, f64::INFINITY);
    }
    for (s, v) in params.arb.kappa0.iter().enumerate() {
        span(format!("arb.kappa0[{s}]"), *v, f64::INFINITY);
    }
    for (s, v) in params.market.lambda0.iter().enumerate() {
        span(format!("market.lambda0[{s}]"), *v, f64::INFINITY);
    }
    span("garch.omega".into(), params.garch.omega, f64::INFINITY);
    span("garch.alpha".into(), params.garch.alpha, 0.99);
    span("garch.beta".into(), params.garch.beta, 0.99);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub free: Vec<FreeParameter>,
    /// Values of every parameter not in `free`.
    pub fixed: ModelParams,
    pub de: DeSettings,
}

impl CalibrationSpec {
    pub fn validate(&self) -> Result<()> {
        self.fixed.validate().into_result()?;
        for p in &self.free {
            get_param(&self.fixed, &p.name)?;
            if !(p.lo < p.hi) {
                return Err(Error::Invalid(format!("bounds for `{}` are empty: [{}, {}]", p.name, p.lo, p.hi)));
            }
        }
        if self.de.population_for(self.free.len()) < 4 {
            return Err(Error::Invalid("DE population must be at least 4".into()));
        }
        Ok(())
    }

    /// The skeleton with the free parameters set to `x`.
    pub fn assemble(&self, x: &[f64]) -> Result<ModelParams> {
        let mut p = self.fixed.clone();
        for (fp, v) in self.free.iter().zip(x) {
            set_param(&mut p, &fp.name, *v)?;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedValue {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta_star: ModelParams,
    pub fitted: Vec<FittedValue>,
    pub loss: f64,
    pub loss_history: Vec<f64>,
    pub evaluations: usize,
    /// Evaluations that hit [`PENALTY_LOSS`].
    pub penalties: usize,
}

/// Zero-noise equilibrium mispricing path, or `None` if the equilibrium does
/// not converge or the parameters are invalid.
pub fn model_path(params: &ModelParams) -> Option<Vec<f64>> {
    let mut p = params.clone();
    p.sim.shock_mode = ShockMode::ZeroNoise;
    if !p.validate().is_ok() {
        return None;
    }
    match solve_mfe(&p) {
        Ok(eq) if eq.converged => Some(eq.mean_field.m),
        _ => None,
    }
}

fn overlap(model_len: usize, observed: &ObservedSeries, window: &Range<usize>) -> Range<usize> {
    let end = window.end.min(model_len).min(observed.len());
    window.start.min(end)..end
}

/// Mean squared and mean absolute error over `window`, after truncating to the
/// shorter of the two series.
pub fn path_errors(model: &[f64], observed: &ObservedSeries, window: Range<usize>) -> Option<(f64, f64)> {
    let idx = overlap(model.len(), observed, &window);
    if idx.is_empty() {
        return None;
    }
    let n = idx.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for t in idx {
        let d = model[t] - observed.mispricing[t];
        se += d * d;
        ae += d.abs();
    }
    Some((se / n, ae / n))
}

/// Price-path MSE between the zero-noise equilibrium at `params` and
/// `observed`, restricted to the bars in `window`.
pub fn price_loss_on(params: &ModelParams, observed: &ObservedSeries, window: Range<usize>) -> f64 {
    match model_path(params).and_then(|m| path_errors(&m, observed, window)) {
        Some((mse, _)) => mse,
        None => {
            debug!("penalty loss assigned");
            PENALTY_LOSS
        }
    }
}

/// Price-path MSE over every bar both series cover.
pub fn price_loss(params: &ModelParams, observed: &ObservedSeries) -> f64 {
    price_loss_on(params, observed, 0..usize::MAX)
}

/// Fits the free parameters by differential evolution on the bars in `window`.
pub fn calibrate_on(spec: &CalibrationSpec, observed: &ObservedSeries, window: Range<usize>) -> Result<CalibrationResult> {
    spec.validate()?;
    observed.check()?;
    let penalties = AtomicUsize::new(0);
    let objective = |x: &[f64]| {
        let loss = match spec.assemble(x) {
            Ok(p) => price_loss_on(&p, observed, window.clone()),
            Err(_) => PENALTY_LOSS,
        };
        if loss >= PENALTY_LOSS {
            penalties.fetch_add(1, Ordering::Relaxed);
        }
        loss
    };

    if spec.free.is_empty() {
        let loss = objective(&[]);
        return Ok(CalibrationResult {
            theta_star: spec.fixed.clone(),
            fitted: vec![],
            loss,
            loss_history: vec![],
            evaluations: 1,
            penalties: penalties.into_inner(),
        });
    }

    let bounds: Vec<(f64, f64)> = spec.free.iter().map(|p| (p.lo, p.hi)).collect();
    let out = differential_evolution(&bounds, &spec.de, objective)?;
    let theta_star = spec.assemble(&out.best)?;
    let fitted = spec
        .free
        .iter()
        .zip(&out.best)
        .map(|(p, v)| FittedValue {
            name: p.name.clone(),
            value: *v,
            lo: p.lo,
            hi: p.hi,
        })
        .collect();
    let penalties = penalties.into_inner();
    if penalties > 0 {
        debug!("{penalties} of {} candidates were penalised", out.evaluations);
    }
    Ok(CalibrationResult {
        theta_star,
        fitted,
        loss: out.best_loss,
        loss_history: out.history,
        evaluations: out.evaluations,
        penalties,
    })
}

pub fn calibrate(spec: &CalibrationSpec, observed: &ObservedSeries) -> Result<CalibrationResult> {
    calibrate_on(spec, observed, 0..usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfSample {
    pub split: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub train_mae: f64,
    pub test_mae: f64,
    pub fit: CalibrationResult,
}

/// Fits on the first `floor(split * n)` bars and scores the same equilibrium
/// path on the rest, so the held-out stretch continues from the state reached
/// at the end of training.
pub fn out_of_sample_eval(spec: &CalibrationSpec, observed: &ObservedSeries, split: f64) -> Result<OutOfSample> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::Invalid(format!("split must lie in (0, 1), got {split}")));
    }
    let n = observed.len().min(spec.fixed.horizon() + 1);
    let n_train = (split * n as f64).floor() as usize;
    if n_train < 2 || n_train >= n {
        return Err(Error::Data(format!(
            "split {split} of {n} bars leaves an empty or degenerate segment"
        )));
    }
    let fit = calibrate_on(spec, observed, 0..n_train)?;
    let path = model_path(&fit.theta_star)
        .ok_or_else(|| Error::Data("fitted model has no converged equilibrium".into()))?;
    let (train_mse, train_mae) = path_errors(&path, observed, 0..n_train).expect("train window is nonempty");
    let (test_mse, test_mae) = path_errors(&path, observed, n_train..n).expect("test window is nonempty");
    Ok(OutOfSample {
        split,
        n_train,
        n_test: n - n_train,
        train_rmse: train_mse.sqrt(),
        test_rmse: test_mse.sqrt(),
        train_mae,
        test_mae,
        fit,
    })
}

/// Parameters for fitting the bars `window` of a longer series: the horizon
/// covers the window and the initial mispricing is its first observation.
pub fn fit_window(params: &ModelParams, observed: &ObservedSeries, window: IndexRange) -> (ModelParams, ObservedSeries) {
    let obs = observed.window(window.first, window.last);
    let mut p = params.clone();
    p.sim.horizon = (obs.len() - 1).max(1);
    p.sim.m0 = obs.mispricing[0];
    (p, obs)
}
