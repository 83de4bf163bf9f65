//! DE/rand/1/bin with a generation barrier.
//!
//! Trial vectors for a whole generation are drawn sequentially from one seeded
//! stream, evaluated in parallel, then selected in index order, so the result
//! never depends on the number of worker threads.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeSettings {
    /// `None` means `max(15, 10 * dim)`.
    pub population: Option<usize>,
    pub mutation: f64,
    pub crossover: f64,
    pub generations: usize,
    pub seed: u64,
    /// Stop once the best loss falls to or below this.
    pub loss_tolerance: f64,
}

impl Default for DeSettings {
    fn default() -> Self {
        DeSettings {
            population: None,
            mutation: 0.8,
            crossover: 0.9,
            generations: 100,
            seed: 1,
            loss_tolerance: 0.0,
        }
    }
}

impl DeSettings {
    pub fn population_for(&self, dim: usize) -> usize {
        self.population.unwrap_or((10 * dim).max(15))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub best_loss: f64,
    /// Best loss after initialisation and after each generation.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Minimises `f` over the box `bounds`.
pub fn differential_evolution<F>(bounds: &[(f64, f64)], settings: &DeSettings, f: F) -> Result<DeOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = bounds.len();
    let np = settings.population_for(dim);
    if np < 4 {
        return Err(Error::Invalid(format!("population {np} is below the minimum of 4")));
    }
    if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi)) {
        return Err(Error::Invalid(format!("empty bound [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let eval = |xs: &[Vec<f64>]| -> Vec<f64> {
        xs.par_iter()
            .map(|x| {
                let v = f(x);
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            })
            .collect()
    };

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
        .collect();
    let mut losses = eval(&pop);
    let mut evaluations = np;
    let best_of = |losses: &[f64]| {
        (0..losses.len())
            .reduce(|a, b| if losses[b] < losses[a] { b } else { a })
            .unwrap_or(0)
    };
    let mut history = vec![losses[best_of(&losses)]];

    for _ in 0..settings.generations {
        if history.last().is_some_and(|&b| b <= settings.loss_tolerance) {
            break;
        }
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let picks: Vec<usize> = sample(&mut rng, np - 1, 3)
                    .into_iter()
                    .map(|k| if k >= i { k + 1 } else { k })
                    .collect();
                let (a, b, c) = (&pop[picks[0]], &pop[picks[1]], &pop[picks[2]]);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let cross = rng.random::<f64>() < settings.crossover;
                        if cross || j == forced {
                            let v = a[j] + settings.mutation * (b[j] - c[j]);
                            v.clamp(bounds[j].0, bounds[j].1)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_losses = eval(&trials);
        evaluations += np;
        for (i, (x, l)) in trials.into_iter().zip(trial_losses).enumerate() {
            if l <= losses[i] {
                pop[i] = x;
                losses[i] = l;
            }
        }
        history.push(losses[best_of(&losses)]);
    }
    let b = best_of(&losses);
    Ok(DeOutcome {
        best: pop[b].clone(),
        best_loss: losses[b],
        history,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let settings = DeSettings {
            generations: 300,
            ..DeSettings::default()
        };
        let out = differential_evolution(&[(-2.0, 2.0), (-1.0, 3.0)], &settings, rosenbrock).unwrap();
        assert!((out.best[0] - 1.0).abs() < 1e-3, "{:?}", out.best);
        assert!((out.best[1] - 1.0).abs() < 2e-3, "{:?}", out.best);
    }

    #[test]
    fn stays_in_bounds_and_never_regresses() {
        let bounds = [(0.5, 0.6), (-3.0, -2.0), (10.0, 11.0)];
        let escaped = AtomicBool::new(false);
        let f = |x: &[f64]| {
            if x.iter().zip(&bounds).any(|(v, (lo, hi))| v < lo || v > hi) {
                escaped.store(true, Ordering::Relaxed);
            }
            x.iter().map(|v| v * v).sum()
        };
        let settings = DeSettings {
            generations: 40,
            population: Some(12),
            ..DeSettings::default()
        };
        let out = differential_evolution(&bounds, &settings, f).unwrap();
        assert!(!escaped.load(Ordering::Relaxed));
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.evaluations, 12 * 41);
    }

    #[test]
    fn seeded_runs_repeat() {
        let settings = DeSettings {
            generations: 20,
            seed: 99,
            ..DeSettings::default()
        };
        let a = differential_evolution(&[(-2.0, 2.0), (-1.0, 3.0)], &settings, rosenbrock).unwrap();
        let b = differential_evolution(&[(-2.0, 2.0), (-1.0, 3.0)], &settings, rosenbrock).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_stop_and_validation() {
        let settings = DeSettings {
            loss_tolerance: 1.0,
            ..DeSettings::default()
        };
        let out = differential_evolution(&[(0.0, 1.0)], &settings, |_| 0.5).unwrap();
        assert_eq!(out.history.len(), 1);
        let tiny = DeSettings {
            population: Some(3),
            ..DeSettings::default()
        };
        assert!(differential_evolution(&[(0.0, 1.0)], &tiny, |_| 0.0).is_err());
        assert!(differential_evolution(&[(1.0, 1.0)], &settings, |_| 0.0).is_err());
    }
}
