use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Market trajectory seen by every agent.
///
/// States (`m`, `backlog`, `sigma`) have `T + 1` entries, indexed `0..=T`.
/// Flows (`sec_flow`, `prim_flow`) have `T` entries: the flow at `t` moves the
/// state from `t` to `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldPath {
    pub m: Vec<f64>,
    pub backlog: Vec<Vec<f64>>,
    pub sec_flow: Vec<Vec<f64>>,
    pub prim_flow: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
}

impl MeanFieldPath {
    pub fn zeros(horizon: usize, n_venues: usize, n_channels: usize) -> Self {
        MeanFieldPath {
            m: vec![0.0; horizon + 1],
            backlog: vec![vec![0.0; n_channels]; horizon + 1],
            sec_flow: vec![vec![0.0; n_venues]; horizon],
            prim_flow: vec![vec![0.0; n_channels]; horizon],
            sigma: vec![0.0; horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.sec_flow.len()
    }

    pub fn n_venues(&self) -> usize {
        self.sec_flow.first().map_or(0, Vec::len)
    }

    pub fn n_channels(&self) -> usize {
        self.backlog.first().map_or(0, Vec::len)
    }

    /// Checks the storage contract: lengths, finiteness, `sigma >= 0`.
    pub fn check(&self) -> Result<()> {
        let t = self.horizon();
        let expect = |what: &'static str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::LengthMismatch { what, expected, got })
            }
        };
        expect("m", t + 1, self.m.len())?;
        expect("sigma", t + 1, self.sigma.len())?;
        expect("backlog", t + 1, self.backlog.len())?;
        expect("prim_flow", t, self.prim_flow.len())?;
        for (i, &x) in self.m.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite { what: "m", t: i });
            }
        }
        for (i, &x) in self.sigma.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::NonFinite { what: "sigma", t: i });
            }
        }
        let rows = [
            ("backlog", &self.backlog),
            ("sec_flow", &self.sec_flow),
            ("prim_flow", &self.prim_flow),
        ];
        for (what, rows) in rows {
            for (i, row) in rows.iter().enumerate() {
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { what, t: i });
                }
            }
        }
        Ok(())
    }

    /// Componentwise `(1 - w) * self + w * other` over states and flows.
    pub fn blend(&self, other: &MeanFieldPath, w: f64) -> MeanFieldPath {
        let mix = |a: f64, b: f64| (1.0 - w) * a + w * b;
        let mix_vec = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| mix(x, y)).collect() };
        let mix_rows = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
            a.iter().zip(b).map(|(x, y)| mix_vec(x, y)).collect()
        };
        MeanFieldPath {
            m: mix_vec(&self.m, &other.m),
            backlog: mix_rows(&self.backlog, &other.backlog),
            sec_flow: mix_rows(&self.sec_flow, &other.sec_flow),
            prim_flow: mix_rows(&self.prim_flow, &other.prim_flow),
            sigma: mix_vec(&self.sigma, &other.sigma),
        }
    }

    /// Sup-norm distance between the price components.
    pub fn price_distance(&self, other: &MeanFieldPath) -> f64 {
        self.m
            .iter()
            .zip(&other.m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
