//! Temporal ensembling of predictions, the consistency ramp-up schedule and
//! feature-space perturbations.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use crate::assignment::AssignmentMatrix;
use crate::error::{DtcError, Result};
use crate::rng;

pub const DEFAULT_MOMENTUM: f64 = 0.6;
pub const DEFAULT_PERTURB_SIGMA: f64 = 0.1;

/// Exponential moving average of per-epoch predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    accumulated: Array2<f64>,
    step: u32,
    momentum: f64,
}

impl EnsembleState {
    pub fn new(rows: usize, k: usize, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(DtcError::param(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(EnsembleState {
            accumulated: Array2::zeros((rows, k)),
            step: 0,
            momentum,
        })
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn accumulated(&self) -> &Array2<f64> {
        &self.accumulated
    }
}

/// P^t = beta P^{t-1} + (1 - beta) p^t.
pub fn ema_update(state: &EnsembleState, p: &AssignmentMatrix) -> Result<EnsembleState> {
    if p.probs().dim() != state.accumulated.dim() {
        return Err(DtcError::param(format!(
            "prediction shape {:?} does not match ensemble {:?}",
            p.probs().dim(),
            state.accumulated.dim()
        )));
    }
    let beta = state.momentum;
    let mut accumulated = &state.accumulated * beta;
    accumulated.scaled_add(1.0 - beta, &p.probs());
    Ok(EnsembleState {
        accumulated,
        step: state.step + 1,
        momentum: beta,
    })
}

/// Startup-bias corrected ensemble, P^t / (1 - beta^t).
pub fn ema_corrected(state: &EnsembleState) -> Result<AssignmentMatrix> {
    if state.step == 0 {
        return Err(DtcError::UndefinedState(
            "ensemble has no accumulated predictions".into(),
        ));
    }
    let correction = 1.0 - state.momentum.powi(state.step as i32);
    let mut probs = &state.accumulated / correction;
    probs.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(AssignmentMatrix::from_raw(probs))
}

/// Sigmoid-shaped ramp exp(-5 (1 - t/T)^2), saturating at 1 from t = T.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RampSchedule {
    total_ramp_steps: u32,
}

impl RampSchedule {
    pub fn new(total_ramp_steps: u32) -> Result<Self> {
        if total_ramp_steps == 0 {
            return Err(DtcError::param("ramp length must be positive"));
        }
        Ok(RampSchedule { total_ramp_steps })
    }

    pub fn total_ramp_steps(&self) -> u32 {
        self.total_ramp_steps
    }
}

pub fn ramp_weight(schedule: &RampSchedule, t: u32) -> f64 {
    let total = schedule.total_ramp_steps as f64;
    let phase = 1.0 - (t.min(schedule.total_ramp_steps) as f64) / total;
    (-5.0 * phase * phase).exp()
}

/// A stochastic transformation of a batch for the Π consistency term.
pub trait Perturbation: Send + Sync {
    /// Must be deterministic in `(seed, step)`.
    fn apply(&self, batch: &Array2<f64>, seed: u64, step: u64) -> Array2<f64>;
}

/// Isotropic Gaussian noise of standard deviation `sigma` per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoise {
    pub sigma: f64,
}

impl Perturbation for GaussianNoise {
    fn apply(&self, batch: &Array2<f64>, seed: u64, step: u64) -> Array2<f64> {
        perturb(batch, self.sigma, seed, step)
    }
}

pub fn perturb(batch: &Array2<f64>, sigma: f64, seed: u64, step: u64) -> Array2<f64> {
    if sigma == 0.0 {
        return batch.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and >= 0");
    let mut r = rng::stream(rng::derive_seed(seed, 0x5045_5254), step);
    batch.mapv(|v| v + normal.sample(&mut r))
}
