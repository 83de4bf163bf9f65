//! Post-equilibrium metrics: AR(1) half-life, flow decomposition, sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfe::solve_mfe;
use crate::params::{set_param, ModelParams};
use crate::path::MeanFieldPath;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfLifeEstimate {
    pub rho: f64,
    /// In steps of the input series; `None` unless `0 < rho < 1`.
    pub half_life: Option<f64>,
    pub n_obs: usize,
    pub valid: bool,
}

impl HalfLifeEstimate {
    pub fn half_life_hours(&self, dt: f64) -> Option<f64> {
        self.half_life.map(|h| h * dt)
    }
}

/// Least-squares fit of `m_t = rho m_{t-1} + e_t` without intercept.
pub fn ar1_half_life(series: &[f64]) -> Result<HalfLifeEstimate> {
    if series.len() < 3 {
        return Err(Error::Data(format!(
            "AR(1) fit needs at least 3 observations, got {}",
            series.len()
        )));
    }
    let (num, den) = series
        .windows(2)
        .fold((0.0, 0.0), |(n, d), w| (n + w[1] * w[0], d + w[0] * w[0]));
    let rho = if den > 0.0 { num / den } else { f64::NAN };
    let valid = rho > 0.0 && rho < 1.0;
    Ok(HalfLifeEstimate {
        rho,
        half_life: valid.then(|| std::f64::consts::LN_2 / -rho.ln()),
        n_obs: series.len() - 1,
        valid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDecomposition {
    pub primary_total: f64,
    pub secondary_total: f64,
    /// `sum_c psi_{c,t} * dt` per step.
    pub primary: Vec<f64>,
    /// `sum_s phi_{s,t} * dt` per step.
    pub secondary: Vec<f64>,
}

impl FlowDecomposition {
    /// `secondary / (primary + secondary)`; `None` when both are zero.
    pub fn secondary_share(&self) -> Option<f64> {
        let total = self.primary_total + self.secondary_total;
        (total != 0.0).then(|| self.secondary_total / total)
    }

    pub fn cumulative(&self) -> (Vec<f64>, Vec<f64>) {
        let scan = |xs: &[f64]| {
            xs.iter()
                .scan(0.0, |acc, x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect()
        };
        (scan(&self.primary), scan(&self.secondary))
    }
}

/// Integrates aggregate primary and secondary flow with signs kept.
pub fn decompose_flows(mf: &MeanFieldPath, dt: f64) -> FlowDecomposition {
    let primary: Vec<f64> = mf.prim_flow.iter().map(|row| row.iter().sum::<f64>() * dt).collect();
    let secondary: Vec<f64> = mf.sec_flow.iter().map(|row| row.iter().sum::<f64>() * dt).collect();
    FlowDecomposition {
        primary_total: primary.iter().sum(),
        secondary_total: secondary.iter().sum(),
        primary,
        secondary,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMetric {
    #[default]
    HalfLife,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<f64>,
}

impl SweepAxis {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        SweepAxis {
            name: name.into(),
            values,
        }
    }

    /// `count` evenly spaced points from `start` to `end` inclusive.
    pub fn linspace(name: impl Into<String>, start: f64, end: f64, count: usize) -> Self {
        let values = match count {
            0 => vec![],
            1 => vec![start],
            n => (0..n).map(|i| start + (end - start) * i as f64 / (n - 1) as f64).collect(),
        };
        Self::new(name, values)
    }

    /// Parses `name:start:end:count`. The name may itself contain an index.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Invalid(format!("axis `{spec}`: {reason}"));
        let parts: Vec<&str> = spec.rsplitn(4, ':').collect();
        let [count, end, start, name] = parts[..] else {
            return Err(bad("expected name:start:end:count"));
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
        let count: usize = count.trim().parse().map_err(|_| bad("count must be a positive integer"))?;
        if count == 0 {
            return Err(bad("count must be a positive integer"));
        }
        Ok(Self::linspace(name.trim(), num(start)?, num(end)?, count))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub i: usize,
    pub j: usize,
    pub axis1_value: f64,
    pub axis2_value: f64,
    /// `None` marks a cell whose equilibrium did not converge or did not revert.
    pub half_life: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axis1: SweepAxis,
    pub axis2: SweepAxis,
    pub metric: SweepMetric,
    /// Row-major over `(axis1, axis2)`.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, i: usize, j: usize) -> &SweepCell {
        &self.cells[i * self.axis2.values.len() + j]
    }
}

fn run_cell(base: &ModelParams, axis1: &SweepAxis, axis2: &SweepAxis, i: usize, j: usize) -> Result<SweepCell> {
    let mut p = base.clone();
    let (x, y) = (axis1.values[i], axis2.values[j]);
    set_param(&mut p, &axis1.name, x)?;
    set_param(&mut p, &axis2.name, y)?;
    let mut cell = SweepCell {
        i,
        j,
        axis1_value: x,
        axis2_value: y,
        half_life: None,
        converged: false,
    };
    if !p.validate().is_ok() {
        return Ok(cell);
    }
    let eq = solve_mfe(&p)?;
    cell.converged = eq.converged;
    if eq.converged {
        cell.half_life = ar1_half_life(&eq.mean_field.m)?.half_life;
    }
    Ok(cell)
}

/// Solves the equilibrium on every grid cell and records the metric. Runs on a
/// private pool of `workers` threads; results do not depend on the count.
pub fn sweep(
    params: &ModelParams,
    axis1: &SweepAxis,
    axis2: &SweepAxis,
    metric: SweepMetric,
    workers: usize,
) -> Result<SweepGrid> {
    // Fail fast on names before spawning anything.
    for axis in [axis1, axis2] {
        let mut probe = params.clone();
        let v = axis.values.first().copied().unwrap_or(1.0);
        set_param(&mut probe, &axis.name, v)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    let n2 = axis2.values.len();
    let cells = pool.install(|| {
        (0..axis1.values.len() * n2)
            .into_par_iter()
            .map(|idx| run_cell(params, axis1, axis2, idx / n2, idx % n2))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepGrid {
        axis1: axis1.clone(),
        axis2: axis2.clone(),
        metric,
        cells,
    })
}
