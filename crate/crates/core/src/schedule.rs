//! Variance-exploding noise schedule and sampler.
//!
//! Noising follows `z_t = z_0 + sigma_t * eta`, so the clean estimate
//! `z_t - sigma_t * eps` is exact whenever `eps` is. Step indices count
//! remaining noise levels: `t = T` is pure noise, `t = 0` is clean, and a
//! segment `(t_s, t_e]` runs `t_s - t_e` transitions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::prompt::PromptSpec;
use crate::seed;

/// Monotone sigma ladder `0 = sigma_0 < sigma_1 < ... < sigma_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Number of transitions `T`.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[self.steps()]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    fn check_segment(&self, t_s: usize, t_e: usize) -> Result<()> {
        if t_s > self.steps() || t_e > t_s {
            return Err(Error::invalid(format!(
                "segment ({t_s}, {t_e}] invalid for a {}-step schedule",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Geometric ladder from `sigma_min` at `t = 1` to `sigma_max` at `t = T`,
/// with `sigma_0 = 0`.
pub fn make_schedule(steps: usize, sigma_max: f64, sigma_min: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::invalid(format!("need at least 2 steps, got {steps}")));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < sigma_min < sigma_max, got sigma_min={sigma_min}, sigma_max={sigma_max}"
        )));
    }
    let ratio = sigma_max / sigma_min;
    let last = (steps - 1) as f64;
    let mut sigmas = Vec::with_capacity(steps + 1);
    sigmas.push(0.0);
    for i in 0..steps {
        sigmas.push(sigma_min * ratio.powf(i as f64 / last));
    }
    // Pin the endpoint against powf rounding.
    sigmas[steps] = sigma_max;
    Ok(NoiseSchedule { sigmas })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Deterministic,
    Stochastic,
}

/// Per-step noise keyed by `(seed, t)`.
///
/// Restarted trajectories that revisit step `t` draw the same noise, so
/// shared prefixes coincide in stochastic mode as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn step_rng(&self, t: usize) -> ChaCha8Rng {
        seed::rng_from(seed::mix(self.seed, t as u64))
    }
}

/// Accumulated compute of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub denoiser_evals: u64,
    pub counter_calls: u64,
}

fn standard_normal_grid(shape: (usize, usize, usize), rng: &mut impl Rng) -> Result<LatentGrid> {
    let (c, h, w) = shape;
    let values = (0..c * h * w).map(|_| rng.sample(StandardNormal)).collect();
    LatentGrid::from_vec(c, h, w, values)
}

/// `z_T = sigma_T * eta` with `eta` element-wise standard normal.
pub fn sample_initial(
    schedule: &NoiseSchedule,
    shape: (usize, usize, usize),
    rng: &mut impl Rng,
) -> Result<LatentGrid> {
    let mut z = standard_normal_grid(shape, rng)?;
    z.scale(schedule.sigma_max());
    Ok(z)
}

/// Clean-latent reconstruction `z_t - sigma_t * eps`.
pub fn reconstruct_clean(z_t: &LatentGrid, eps: &LatentGrid, sigma_t: f64) -> Result<LatentGrid> {
    if !(sigma_t >= 0.0) {
        return Err(Error::invalid(format!("sigma_t must be >= 0, got {sigma_t}")));
    }
    z_t.zip_map(eps, |z, e| z - sigma_t * e)
}

/// One transition `z_t -> z_{t-1}`.
pub fn sampler_step(
    z_t: &LatentGrid,
    eps: &LatentGrid,
    t: usize,
    schedule: &NoiseSchedule,
    mode: SamplerMode,
    rng: &mut impl Rng,
) -> Result<LatentGrid> {
    schedule.check_step(t)?;
    let clean = reconstruct_clean(z_t, eps, schedule.sigma(t))?;
    step_from_clean(z_t, eps, &clean, t, schedule, mode, rng)
}

fn step_from_clean(
    z_t: &LatentGrid,
    eps: &LatentGrid,
    clean: &LatentGrid,
    t: usize,
    schedule: &NoiseSchedule,
    mode: SamplerMode,
    rng: &mut impl Rng,
) -> Result<LatentGrid> {
    let sigma_prev = schedule.sigma(t - 1);
    match mode {
        SamplerMode::Deterministic => {
            let mut next = clean.clone();
            next.axpy(sigma_prev, eps);
            Ok(next)
        }
        SamplerMode::Stochastic => {
            // Exact VE posterior q(z_{t-1} | z_t, z_0 = clean).
            let sigma_t = schedule.sigma(t);
            let ratio = (sigma_prev * sigma_prev) / (sigma_t * sigma_t);
            let noise_scale = sigma_prev * (1.0 - ratio).max(0.0).sqrt();
            let mut next = z_t.zip_map(clean, |z, c| c + ratio * (z - c))?;
            if noise_scale > 0.0 {
                let eta = standard_normal_grid(next.shape(), rng)?;
                next.axpy(noise_scale, &eta);
            }
            Ok(next)
        }
    }
}

/// Latent at the end of a segment plus the clean estimate of its last step.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub latent: LatentGrid,
    /// `None` when the segment was empty.
    pub clean: Option<LatentGrid>,
}

/// Runs `(t_s, t_e]` with a caller-supplied noise prediction per step.
pub(crate) fn run_segment<F>(
    t_s: usize,
    t_e: usize,
    z_init: LatentGrid,
    schedule: &NoiseSchedule,
    mode: SamplerMode,
    noise: &NoiseStream,
    mut predict: F,
) -> Result<Segment>
where
    F: FnMut(usize, &LatentGrid) -> Result<LatentGrid>,
{
    schedule.check_segment(t_s, t_e)?;
    let mut z = z_init;
    let mut clean = None;
    for t in (t_e + 1..=t_s).rev() {
        let eps = predict(t, &z)?;
        z.ensure_same_shape(&eps)?;
        let x0 = reconstruct_clean(&z, &eps, schedule.sigma(t))?;
        let mut rng = noise.step_rng(t);
        z = step_from_clean(&z, &eps, &x0, t, schedule, mode, &mut rng)?;
        clean = Some(x0);
    }
    Ok(Segment { latent: z, clean })
}

/// Plain conditional sampling over `(t_s, t_e]`.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_steps(
    denoiser: &dyn Denoiser,
    prompt: &PromptSpec,
    t_s: usize,
    t_e: usize,
    z_init: LatentGrid,
    schedule: &NoiseSchedule,
    mode: SamplerMode,
    noise: &NoiseStream,
    cost: &mut Cost,
) -> Result<Segment> {
    run_segment(t_s, t_e, z_init, schedule, mode, noise, |t, z| {
        cost.denoiser_evals += 1;
        denoiser.predict_eps(t, z, prompt)
    })
}
