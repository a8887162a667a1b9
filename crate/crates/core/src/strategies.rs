//! Control-prompt construction and the steering strategies.
//!
//! Every strategy draws `z_T` once per seed and replays it for each restart.
//! Costs are tracked exactly: with `T` steps, `t_s = t_steer`, `t_e = t_est`,
//!
//! | method                      | denoiser evals                          | counter calls |
//! |-----------------------------|-----------------------------------------|---------------|
//! | unsteered                   | `T`                                     | 1 |
//! | static                      | `2 (T - t_s) + t_s`                     | 1 |
//! | feedback, `c1 = k`          | `T`                                     | 2 |
//! | feedback, `c1 != k`         | `(T - t_e) + 2 (T - t_s) + t_s`         | 2 |
//! | adaptive, `c1 = k`          | `T`                                     | 2 |
//! | adaptive, `c2 = k`          | `(T - t_e) + 2 (T - t_s) + t_s`         | 3 |
//! | adaptive, `c2 != k`         | `3 (T - t_e) + 2 (T - t_s) + t_s`       | 3 |

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::counting::{count_objects, CounterConfig};
use crate::denoiser::{decode, Denoiser, TARGET_CHANNEL};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::prompt::{PromptSpec, MAX_COUNT};
use crate::schedule::{
    diffusion_steps, sample_initial, Cost, NoiseSchedule, NoiseStream, SamplerMode, Segment,
};
use crate::seed;
use crate::steering::{steered_steps, SteeringParams};

const INITIAL_NOISE_KEY: u64 = 0x1417;
const STEP_NOISE_KEY: u64 = 0x57E9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unsteered,
    Static,
    Feedback,
    Adaptive,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Unsteered, Method::Static, Method::Feedback, Method::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            Method::Unsteered => "unsteered",
            Method::Static => "static",
            Method::Feedback => "feedback",
            Method::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Parse(format!("unknown method `{s}`")))
    }
}

/// Count-agnostic control prompt: the prompt with its count removed.
pub fn control_prompt_static(prompt: &PromptSpec) -> Result<PromptSpec> {
    if prompt.count.is_none() {
        return Err(Error::invalid("prompt is already count-agnostic"));
    }
    Ok(PromptSpec { count: None, ..prompt.clone() })
}

/// Feedback control prompt: the target count replaced by the observed one.
pub fn control_prompt_feedback(prompt: &PromptSpec, observed: u32) -> Result<PromptSpec> {
    prompt.target()?;
    Ok(PromptSpec {
        count: Some(observed.min(MAX_COUNT)),
        ..prompt.clone()
    })
}

/// Doubles `gamma` when the error kept its sign without reaching the target,
/// halves it otherwise.
pub fn adapt_gamma(k: u32, c1: u32, c2: u32, gamma: f64) -> f64 {
    if (c1 <= c2 && c2 < k) || (k < c2 && c2 <= c1) {
        2.0 * gamma
    } else {
        gamma / 2.0
    }
}

/// Everything a strategy needs besides the prompt and seed.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub counter: CounterConfig,
    pub mode: SamplerMode,
    pub shape: (usize, usize, usize),
}

impl RunContext<'_> {
    fn steps(&self) -> usize {
        self.schedule.steps()
    }

    fn decode(&self, z: &LatentGrid) -> LatentGrid {
        decode(z, self.counter.amplitude)
    }

    fn count(&self, image: &LatentGrid, cost: &mut Cost) -> Result<u32> {
        cost.counter_calls += 1;
        Ok(count_objects(image, TARGET_CHANNEL, &self.counter)?.count)
    }

    /// Counts the decoded clean estimate a segment ended on.
    fn count_clean(&self, seg: &Segment, cost: &mut Cost) -> Result<u32> {
        let clean = seg
            .clean
            .as_ref()
            .ok_or_else(|| Error::invalid("no clean estimate: estimation segment was empty"))?;
        self.count(&self.decode(clean), cost)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    /// Decoded final image.
    pub final_image: LatentGrid,
    pub final_count: u32,
    pub target: u32,
    pub c1: Option<u32>,
    pub c2: Option<u32>,
    /// Strength applied on the trajectory that produced the image; 0 if unsteered.
    pub gamma_used: f64,
    pub denoiser_evals: u64,
    pub counter_calls: u64,
    pub steered_trajectories: u32,
    pub wall_time: f64,
    pub seed: u64,
}

struct Draft {
    z0: LatentGrid,
    c1: Option<u32>,
    c2: Option<u32>,
    gamma_used: f64,
    steered: u32,
}

struct Run<'a> {
    ctx: RunContext<'a>,
    prompt: &'a PromptSpec,
    noise: NoiseStream,
    cost: Cost,
}

impl<'a> Run<'a> {
    fn plain(&mut self, t_s: usize, t_e: usize, z: LatentGrid) -> Result<Segment> {
        let ctx = self.ctx;
        diffusion_steps(
            ctx.denoiser, self.prompt, t_s, t_e, z, ctx.schedule, ctx.mode, &self.noise, &mut self.cost,
        )
    }

    fn steered(&mut self, control: &PromptSpec, t_s: usize, t_e: usize, z: LatentGrid, gamma: f64) -> Result<Segment> {
        let ctx = self.ctx;
        steered_steps(
            ctx.denoiser, self.prompt, control, t_s, t_e, z, gamma, ctx.schedule, ctx.mode, &self.noise,
            &mut self.cost,
        )
    }

    /// Full steered trajectory: steer `(t_steer, T]`, then plain to 0.
    fn steered_to_end(&mut self, control: &PromptSpec, z_t: &LatentGrid, gamma: f64, t_steer: usize) -> Result<LatentGrid> {
        let seg = self.steered(control, self.ctx.steps(), t_steer, z_t.clone(), gamma)?;
        Ok(self.plain(t_steer, 0, seg.latent)?.latent)
    }
}

fn execute(
    ctx: RunContext<'_>,
    method: Method,
    prompt: &PromptSpec,
    params: &SteeringParams,
    run_seed: u64,
    body: impl FnOnce(&mut Run<'_>, &LatentGrid) -> Result<Draft>,
) -> Result<RunResult> {
    prompt.validate()?;
    let target = prompt.target()?;
    if method != Method::Unsteered {
        params.validate(ctx.steps())?;
    }
    let started = Instant::now();
    let mut init_rng = seed::rng_from(seed::mix(run_seed, INITIAL_NOISE_KEY));
    let z_t = sample_initial(ctx.schedule, ctx.shape, &mut init_rng)?;
    let mut run = Run {
        ctx,
        prompt,
        noise: NoiseStream::new(seed::mix(run_seed, STEP_NOISE_KEY)),
        cost: Cost::default(),
    };
    let draft = body(&mut run, &z_t)?;
    let final_image = ctx.decode(&draft.z0);
    let final_count = ctx.count(&final_image, &mut run.cost)?;
    Ok(RunResult {
        method,
        final_image,
        final_count,
        target,
        c1: draft.c1,
        c2: draft.c2,
        gamma_used: draft.gamma_used,
        denoiser_evals: run.cost.denoiser_evals,
        counter_calls: run.cost.counter_calls,
        steered_trajectories: draft.steered,
        wall_time: started.elapsed().as_secs_f64(),
        seed: run_seed,
    })
}

/// Plain conditional sampling from `T` to 0.
pub fn run_unsteered(ctx: RunContext<'_>, prompt: &PromptSpec, run_seed: u64) -> Result<RunResult> {
    let params = SteeringParams::default();
    execute(ctx, Method::Unsteered, prompt, &params, run_seed, |run, z_t| {
        let z0 = run.plain(ctx.steps(), 0, z_t.clone())?.latent;
        Ok(Draft { z0, c1: None, c2: None, gamma_used: 0.0, steered: 0 })
    })
}

/// Steering against the count-agnostic prompt over `(t_steer, T]`.
pub fn run_static(ctx: RunContext<'_>, prompt: &PromptSpec, params: &SteeringParams, run_seed: u64) -> Result<RunResult> {
    execute(ctx, Method::Static, prompt, params, run_seed, |run, z_t| {
        let control = control_prompt_static(prompt)?;
        let z0 = run.steered_to_end(&control, z_t, params.gamma, params.t_steer)?;
        Ok(Draft { z0, c1: None, c2: None, gamma_used: params.gamma, steered: 1 })
    })
}

/// One intermediate estimate; on a miss, restart from `z_T` steering
/// against the observed count.
pub fn run_feedback(ctx: RunContext<'_>, prompt: &PromptSpec, params: &SteeringParams, run_seed: u64) -> Result<RunResult> {
    execute(ctx, Method::Feedback, prompt, params, run_seed, |run, z_t| {
        let k = prompt.target()?;
        let probe = run.plain(ctx.steps(), params.t_est, z_t.clone())?;
        let c1 = run.ctx.count_clean(&probe, &mut run.cost)?;
        if c1 == k {
            let z0 = run.plain(params.t_est, 0, probe.latent)?.latent;
            return Ok(Draft { z0, c1: Some(c1), c2: None, gamma_used: 0.0, steered: 0 });
        }
        let control = control_prompt_feedback(prompt, c1)?;
        let z0 = run.steered_to_end(&control, z_t, params.gamma, params.t_steer)?;
        Ok(Draft { z0, c1: Some(c1), c2: None, gamma_used: params.gamma, steered: 1 })
    })
}

/// Feedback steering with one direction-aware adjustment of `gamma`.
pub fn run_adaptive(ctx: RunContext<'_>, prompt: &PromptSpec, params: &SteeringParams, run_seed: u64) -> Result<RunResult> {
    execute(ctx, Method::Adaptive, prompt, params, run_seed, |run, z_t| {
        let k = prompt.target()?;
        let steps = ctx.steps();
        let probe = run.plain(steps, params.t_est, z_t.clone())?;
        let c1 = run.ctx.count_clean(&probe, &mut run.cost)?;
        if c1 == k {
            let z0 = run.plain(params.t_est, 0, probe.latent)?.latent;
            return Ok(Draft { z0, c1: Some(c1), c2: None, gamma_used: 0.0, steered: 0 });
        }
        let control = control_prompt_feedback(prompt, c1)?;

        // First steered attempt, counted where it crosses t_est.
        let attempt = run.steered(&control, steps, params.t_est, z_t.clone(), params.gamma)?;
        let c2 = run.ctx.count_clean(&attempt, &mut run.cost)?;
        if c2 == k {
            let seg = run.steered(&control, params.t_est, params.t_steer, attempt.latent, params.gamma)?;
            let z0 = run.plain(params.t_steer, 0, seg.latent)?.latent;
            return Ok(Draft { z0, c1: Some(c1), c2: Some(c2), gamma_used: params.gamma, steered: 1 });
        }

        let gamma = adapt_gamma(k, c1, c2, params.gamma);
        let z0 = run.steered_to_end(&control, z_t, gamma, params.t_steer)?;
        Ok(Draft { z0, c1: Some(c1), c2: Some(c2), gamma_used: gamma, steered: 2 })
    })
}

pub fn run_method(
    ctx: RunContext<'_>,
    method: Method,
    prompt: &PromptSpec,
    params: &SteeringParams,
    run_seed: u64,
) -> Result<RunResult> {
    match method {
        Method::Unsteered => run_unsteered(ctx, prompt, run_seed),
        Method::Static => run_static(ctx, prompt, params, run_seed),
        Method::Feedback => run_feedback(ctx, prompt, params, run_seed),
        Method::Adaptive => run_adaptive(ctx, prompt, params, run_seed),
    }
}
