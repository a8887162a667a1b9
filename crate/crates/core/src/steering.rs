//! Dual-prompt steering of the noise prediction.
//!
//! Each steered step evaluates the denoiser under the prompt and under a
//! control prompt, extrapolates away from the control prediction and rescales
//! the result back to the norm of the plain prediction.

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::prompt::PromptSpec;
use crate::schedule::{run_segment, Cost, NoiseSchedule, NoiseStream, SamplerMode, Segment};

/// Steering strength and the two step indices that bound the steered span
/// and the intermediate count estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringParams {
    pub gamma: f64,
    /// Steering runs over `(t_steer, T]`.
    pub t_steer: usize,
    /// Step at which the clean estimate is counted.
    pub t_est: usize,
}

impl Default for SteeringParams {
    fn default() -> Self {
        Self {
            gamma: 4.0,
            t_steer: 5,
            t_est: 20,
        }
    }
}

impl SteeringParams {
    /// Alternate profile with stronger, shorter steering and a later estimate.
    pub fn strong() -> Self {
        Self {
            gamma: 5.0,
            t_steer: 10,
            t_est: 30,
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("steering.gamma", "must be finite and >= 0"));
        }
        if self.t_steer == 0 || self.t_steer > steps {
            return Err(Error::config("steering.t_steer", format!("must lie in 1..={steps}")));
        }
        if self.t_est == 0 || self.t_est >= steps {
            return Err(Error::config("steering.t_est", format!("must lie in 1..{steps}")));
        }
        if self.t_steer > self.t_est {
            return Err(Error::config("steering.t_steer", "must not exceed t_est"));
        }
        Ok(())
    }
}

/// `eps + gamma (eps - eps_hat)`, rescaled to the global L2 norm of `eps`.
///
/// A zero-norm extrapolation returns `eps` unchanged.
pub fn steer_eps(eps: &LatentGrid, eps_hat: &LatentGrid, gamma: f64) -> Result<LatentGrid> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    if !eps.is_finite() || !eps_hat.is_finite() {
        return Err(Error::NonFinite("steering inputs"));
    }
    let raw = eps.zip_map(eps_hat, |e, h| e + gamma * (e - h))?;
    let raw_norm = raw.l2_norm();
    if raw_norm == 0.0 {
        return Ok(eps.clone());
    }
    Ok(raw.scaled(eps.l2_norm() / raw_norm))
}

/// Steered sampling over `(t_s, t_e]`; two denoiser evaluations per step.
#[allow(clippy::too_many_arguments)]
pub fn steered_steps(
    denoiser: &dyn Denoiser,
    prompt: &PromptSpec,
    control: &PromptSpec,
    t_s: usize,
    t_e: usize,
    z_init: LatentGrid,
    gamma: f64,
    schedule: &NoiseSchedule,
    mode: SamplerMode,
    noise: &NoiseStream,
    cost: &mut Cost,
) -> Result<Segment> {
    run_segment(t_s, t_e, z_init, schedule, mode, noise, |t, z| {
        let eps = denoiser.predict_eps(t, z, prompt)?;
        let eps_hat = denoiser.predict_eps(t, z, control)?;
        cost.denoiser_evals += 2;
        steer_eps(&eps, &eps_hat, gamma)
    })
}
