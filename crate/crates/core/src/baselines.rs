//! Riemannian Langevin Monte Carlo:
//! `x' = exp_x(-h grad f(x) + √(2h) ξ)` with `ξ` a standard tangent Gaussian.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::manifold::{self, Point};
use crate::rng::chain_rng;
use crate::targets::Target;

/// Step-size schedule; iterations are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// `h_k = c/(k + k0)`; `k0 = 0` gives the classical `c/k`.
    Decreasing { c: f64, k0: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmcConfig {
    /// Step for the constant schedule.
    pub step: f64,
    pub schedule: Schedule,
    /// A chain halts once its distance to `reference` exceeds this value.
    pub divergence_threshold: f64,
    /// Divergence reference point; the initial state when `None`.
    pub reference: Option<Point>,
}

impl LmcConfig {
    pub fn constant(step: f64) -> Self {
        Self {
            step,
            schedule: Schedule::Constant,
            divergence_threshold: 1e3,
            reference: None,
        }
    }

    pub fn decreasing(c: f64, k0: f64) -> Self {
        Self {
            step: c,
            schedule: Schedule::Decreasing { c, k0 },
            ..Self::constant(c)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid("step", "must be positive"));
        }
        if let Schedule::Decreasing { c, k0 } = self.schedule {
            if !(c > 0.0) || !(k0 > -1.0) {
                return Err(invalid("schedule", "needs c > 0 and k0 > -1"));
            }
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(invalid("divergence_threshold", "must be positive"));
        }
        Ok(())
    }

    /// Step used at iteration `k ≥ 1`.
    pub fn step_at(&self, k: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.step,
            Schedule::Decreasing { c, k0 } => c / (k as f64 + k0),
        }
    }
}

/// One Euler–Maruyama step along the exponential map.
pub fn rlmc_step<R: Rng + ?Sized>(x: &Point, target: &dyn Target, step: f64, rng: &mut R) -> Result<Point> {
    if !(step > 0.0) {
        return Err(invalid("step", "must be positive"));
    }
    let grad = target.riemannian_grad(x)?;
    if !grad.vec.is_finite() {
        return Err(Error::NonFinite("Langevin drift"));
    }
    let noise = manifold::sample_tangent_gaussian(x, 2.0 * step, rng)?;
    let v = grad.scale(-step).add(&noise)?;
    let next = manifold::exp_map(x, &v)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Completed,
    /// Halted at this iteration: distance threshold exceeded or non-finite state.
    Diverged { iter: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmcTrace {
    /// States up to and including the last finite one.
    pub states: Vec<Point>,
    pub status: ChainStatus,
    pub seed: u64,
}

impl LmcTrace {
    pub fn diverged(&self) -> bool {
        matches!(self.status, ChainStatus::Diverged { .. })
    }

    pub fn last(&self) -> &Point {
        self.states.last().expect("trace holds the initial state")
    }
}

/// Runs `n_iters` steps on stream `chain` of `seed`, halting on divergence.
pub fn rlmc_run(
    init: &Point,
    n_iters: usize,
    target: &dyn Target,
    cfg: &LmcConfig,
    seed: u64,
    chain: u64,
) -> Result<LmcTrace> {
    cfg.validate()?;
    if n_iters < 1 {
        return Err(invalid("n_iters", "must be at least 1"));
    }
    let reference = cfg.reference.clone().unwrap_or_else(|| init.clone());
    let mut rng = chain_rng(seed, chain);
    let mut states = vec![init.clone()];
    let mut x = init.clone();
    for k in 1..=n_iters {
        let next = rlmc_step(&x, target, cfg.step_at(k), &mut rng);
        match next {
            Ok(p) => {
                let d = manifold::distance(&p, &reference).ok().filter(|d| d.is_finite());
                if d.is_some_and(|d| d <= cfg.divergence_threshold) {
                    states.push(p.clone());
                    x = p;
                    continue;
                }
                if d.is_some() {
                    states.push(p);
                }
                return Ok(LmcTrace {
                    states,
                    status: ChainStatus::Diverged { iter: k },
                    seed,
                });
            }
            Err(Error::NonFinite(_)) | Err(Error::NotPositiveDefinite(_)) => {
                return Ok(LmcTrace {
                    states,
                    status: ChainStatus::Diverged { iter: k },
                    seed,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(LmcTrace {
        states,
        status: ChainStatus::Completed,
        seed,
    })
}
