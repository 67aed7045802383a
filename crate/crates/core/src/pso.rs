//! Global-best particle swarm optimization (minimization).
//!
//! Each iteration is synchronous: every particle's velocity is computed
//! against the global best as it stood at the start of the iteration, all
//! positions then move, and only afterwards are the objective values
//! refreshed and the personal/global bests updated. Evaluations within an
//! iteration run in parallel; the reduction to the global best is an ordered
//! fold over particle indices, so results do not depend on thread scheduling.
//!
//! Random draws come from a ChaCha8 stream seeded by [`PsoConfig::seed`] and
//! are consumed in a fixed order:
//!
//! * initialization: for each particle, one position sample per dimension,
//!   then one velocity sample per dimension;
//! * each iteration: for each particle, for each dimension, `r1` then `r2`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inertia weight equivalent to Clerc's constriction factor.
pub const DEFAULT_OMEGA: f64 = 0.729;
pub const DEFAULT_C1: f64 = 1.49445;
pub const DEFAULT_C2: f64 = 1.49445;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsoError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid PSO configuration: {0}")]
    InvalidConfig(String),
    #[error("objective returned {value} at iteration {iteration}, particle {particle}")]
    NonFiniteObjective {
        iteration: usize,
        particle: usize,
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub omega: f64,
    pub c1: f64,
    pub c2: f64,
    pub swarm_size: usize,
    pub max_iterations: usize,
    /// Per-dimension `[low, high]` search interval.
    pub bounds: Vec<(f64, f64)>,
    /// Optional per-dimension velocity cap.
    pub vmax: Option<Vec<f64>>,
    pub seed: u64,
}

impl PsoConfig {
    /// Default coefficients over the given bounds: 30 particles, 100 iterations, seed 0.
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        PsoConfig {
            omega: DEFAULT_OMEGA,
            c1: DEFAULT_C1,
            c2: DEFAULT_C2,
            swarm_size: 30,
            max_iterations: 100,
            bounds,
            vmax: None,
            seed: 0,
        }
    }

    /// `dim` copies of the interval `[low, high]`.
    pub fn cube(dim: usize, low: f64, high: f64) -> Self {
        Self::new(vec![(low, high); dim])
    }

    pub fn with_swarm_size(mut self, n: usize) -> Self {
        self.swarm_size = n;
        self
    }

    pub fn with_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_coefficients(mut self, omega: f64, c1: f64, c2: f64) -> Self {
        self.omega = omega;
        self.c1 = c1;
        self.c2 = c2;
        self
    }

    pub fn with_vmax(mut self, vmax: Vec<f64>) -> Self {
        self.vmax = Some(vmax);
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<(), PsoError> {
        let bad = |msg: String| Err(PsoError::InvalidConfig(msg));
        if self.swarm_size == 0 {
            return bad("swarm_size must be at least 1".into());
        }
        if self.bounds.is_empty() {
            return bad("at least one dimension is required".into());
        }
        if !(self.omega.is_finite() && self.c1.is_finite() && self.c2.is_finite()) {
            return bad("omega, c1 and c2 must be finite".into());
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!(
                    "bounds[{j}] = [{lo}, {hi}] is not a proper interval"
                ));
            }
        }
        if let Some(vmax) = &self.vmax {
            if vmax.len() != self.dim() {
                return Err(PsoError::DimensionMismatch {
                    expected: self.dim(),
                    actual: vmax.len(),
                });
            }
            if vmax.iter().any(|v| v.is_nan() || *v < 0.0) {
                return bad("vmax entries must be non-negative".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub pbest_position: Vec<f64>,
    pub pbest_value: f64,
}

/// Velocity update: `w*v + c1*r1*(pbest - x) + c2*r2*(gbest - x)` per
/// dimension, then clamped to `±vmax` when a cap is configured. `draws[j]`
/// holds the `(r1, r2)` pair for dimension `j`.
pub fn step_velocity(
    p: &Particle,
    gbest: &[f64],
    cfg: &PsoConfig,
    draws: &[(f64, f64)],
) -> Result<Vec<f64>, PsoError> {
    let dim = p.position.len();
    for len in [
        p.velocity.len(),
        p.pbest_position.len(),
        gbest.len(),
        draws.len(),
    ] {
        if len != dim {
            return Err(PsoError::DimensionMismatch {
                expected: dim,
                actual: len,
            });
        }
    }
    if let Some(vmax) = &cfg.vmax {
        if vmax.len() != dim {
            return Err(PsoError::DimensionMismatch {
                expected: dim,
                actual: vmax.len(),
            });
        }
    }
    Ok((0..dim)
        .map(|j| {
            let (r1, r2) = draws[j];
            let x = p.position[j];
            let v = cfg.omega * p.velocity[j]
                + cfg.c1 * r1 * (p.pbest_position[j] - x)
                + cfg.c2 * r2 * (gbest[j] - x);
            match &cfg.vmax {
                Some(vmax) => v.clamp(-vmax[j], vmax[j]),
                None => v,
            }
        })
        .collect())
}

/// Position update `x + v`, clamped into `bounds`. Returns the new position
/// and the velocity actually kept: components that hit a bound are zeroed.
pub fn step_position(
    p: &Particle,
    new_velocity: &[f64],
    bounds: &[(f64, f64)],
) -> Result<(Vec<f64>, Vec<f64>), PsoError> {
    let dim = p.position.len();
    for len in [new_velocity.len(), bounds.len()] {
        if len != dim {
            return Err(PsoError::DimensionMismatch {
                expected: dim,
                actual: len,
            });
        }
    }
    let mut position = Vec::with_capacity(dim);
    let mut velocity = new_velocity.to_vec();
    for j in 0..dim {
        let (lo, hi) = bounds[j];
        let x = p.position[j] + new_velocity[j];
        if x < lo {
            position.push(lo);
            velocity[j] = 0.0;
        } else if x > hi {
            position.push(hi);
            velocity[j] = 0.0;
        } else {
            position.push(x);
        }
    }
    Ok((position, velocity))
}

#[derive(Debug, Clone)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    pub gbest_position: Vec<f64>,
    pub gbest_value: f64,
    pub iteration: usize,
    rng: ChaCha8Rng,
}

fn evaluate_all<F>(
    objective: &F,
    positions: &[&[f64]],
    iteration: usize,
) -> Result<Vec<f64>, PsoError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = positions.par_iter().map(|x| objective(x)).collect();
    match values.iter().position(|v| !v.is_finite()) {
        Some(particle) => Err(PsoError::NonFiniteObjective {
            iteration,
            particle,
            value: values[particle],
        }),
        None => Ok(values),
    }
}

impl SwarmState {
    /// Samples the initial swarm and evaluates it. `seeds[i]`, when given,
    /// replaces particle `i`'s sampled position (it is clamped into bounds).
    pub fn new<F>(objective: &F, cfg: &PsoConfig, seeds: &[Vec<f64>]) -> Result<Self, PsoError>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        cfg.validate()?;
        let dim = cfg.dim();
        if seeds.len() > cfg.swarm_size {
            return Err(PsoError::InvalidConfig(format!(
                "{} seed positions for a swarm of {}",
                seeds.len(),
                cfg.swarm_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut particles = Vec::with_capacity(cfg.swarm_size);
        for i in 0..cfg.swarm_size {
            let mut position: Vec<f64> = cfg
                .bounds
                .iter()
                .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect();
            let velocity: Vec<f64> = cfg
                .bounds
                .iter()
                .map(|&(lo, hi)| {
                    let half = (hi - lo) / 2.0;
                    -half + 2.0 * half * rng.random::<f64>()
                })
                .collect();
            if let Some(seed) = seeds.get(i) {
                if seed.len() != dim {
                    return Err(PsoError::DimensionMismatch {
                        expected: dim,
                        actual: seed.len(),
                    });
                }
                position = seed
                    .iter()
                    .zip(&cfg.bounds)
                    .map(|(&x, &(lo, hi))| x.clamp(lo, hi))
                    .collect();
            }
            particles.push(Particle {
                pbest_position: position.clone(),
                position,
                velocity,
                pbest_value: f64::INFINITY,
            });
        }
        let positions: Vec<&[f64]> = particles.iter().map(|p| p.position.as_slice()).collect();
        let values = evaluate_all(objective, &positions, 0)?;
        for (p, v) in particles.iter_mut().zip(values) {
            p.pbest_value = v;
        }
        let mut state = SwarmState {
            gbest_position: particles[0].pbest_position.clone(),
            gbest_value: particles[0].pbest_value,
            particles,
            iteration: 0,
            rng,
        };
        state.refresh_gbest();
        Ok(state)
    }

    fn refresh_gbest(&mut self) {
        for p in &self.particles {
            if p.pbest_value < self.gbest_value {
                self.gbest_value = p.pbest_value;
                self.gbest_position.clone_from(&p.pbest_position);
            }
        }
    }

    /// Draws the `(r1, r2)` pairs for one iteration, particle-major.
    fn draw(&mut self, dim: usize) -> Vec<Vec<(f64, f64)>> {
        (0..self.particles.len())
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let r1 = self.rng.random::<f64>();
                        let r2 = self.rng.random::<f64>();
                        (r1, r2)
                    })
                    .collect()
            })
            .collect()
    }

    /// One synchronous sweep. Returns the `(r1, r2)` draws it consumed,
    /// indexed `[particle][dimension]`.
    pub fn iterate<F>(
        &mut self,
        objective: &F,
        cfg: &PsoConfig,
    ) -> Result<Vec<Vec<(f64, f64)>>, PsoError>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let draws = self.draw(cfg.dim());
        let gbest = self.gbest_position.clone();
        for (p, d) in self.particles.iter_mut().zip(&draws) {
            let v = step_velocity(p, &gbest, cfg, d)?;
            let (x, v) = step_position(p, &v, &cfg.bounds)?;
            p.position = x;
            p.velocity = v;
        }
        self.iteration += 1;
        let positions: Vec<&[f64]> = self
            .particles
            .iter()
            .map(|p| p.position.as_slice())
            .collect();
        let values = evaluate_all(objective, &positions, self.iteration)?;
        for (p, v) in self.particles.iter_mut().zip(values) {
            if v < p.pbest_value {
                p.pbest_value = v;
                p.pbest_position.clone_from(&p.position);
            }
        }
        self.refresh_gbest();
        Ok(draws)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoOutcome {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    /// Global best value after each iteration.
    pub history: Vec<f64>,
}

/// Minimizes `objective` over the configured bounds.
pub fn optimize<F>(objective: F, cfg: &PsoConfig) -> Result<PsoOutcome, PsoError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    optimize_seeded(objective, cfg, &[])
}

/// Like [`optimize`], with the first `seeds.len()` particles starting at the given positions.
pub fn optimize_seeded<F>(
    objective: F,
    cfg: &PsoConfig,
    seeds: &[Vec<f64>],
) -> Result<PsoOutcome, PsoError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut swarm = SwarmState::new(&objective, cfg, seeds)?;
    let mut history = Vec::with_capacity(cfg.max_iterations);
    for _ in 0..cfg.max_iterations {
        swarm.iterate(&objective, cfg)?;
        history.push(swarm.gbest_value);
    }
    Ok(PsoOutcome {
        best_position: swarm.gbest_position,
        best_value: swarm.gbest_value,
        history,
    })
}

/// Writes `iteration,gbest_value` rows, iterations numbered from 1.
pub fn write_history_csv<W: Write>(history: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,gbest_value")?;
    for (i, v) in history.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, v)?;
    }
    Ok(())
}
