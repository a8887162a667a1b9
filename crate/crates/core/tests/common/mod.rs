#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use countsteer::counting::CounterConfig;
use countsteer::denoiser::{build_library, AnalyticDenoiser, Denoiser, DenoiserConfig, LayoutComponent, LayoutLibrary};
use countsteer::prompt::Condition;
use countsteer::schedule::{make_schedule, NoiseSchedule, SamplerMode};
use countsteer::steering::SteeringParams;
use countsteer::strategies::{Method, RunContext, RunResult};
use countsteer::{LatentGrid, PromptSpec, Result};

/// Small but complete prior: 20x20 grid, counts 0..=5.
pub fn small_config(seed: u64, leakage: f64) -> DenoiserConfig {
    DenoiserConfig {
        leakage,
        height: 20,
        width: 20,
        components_per_cell: 3,
        count_min: 0,
        count_max: 5,
        seed,
        ..DenoiserConfig::default()
    }
}

pub struct World {
    pub config: DenoiserConfig,
    pub schedule: NoiseSchedule,
    pub denoiser: AnalyticDenoiser,
}

impl World {
    pub fn new(config: DenoiserConfig, steps: usize) -> Self {
        let schedule = make_schedule(steps, 1.0, 0.01).unwrap();
        let library = Arc::new(build_library(&config).unwrap());
        let denoiser = AnalyticDenoiser::new(library, schedule.clone(), config.leakage).unwrap();
        Self { config, schedule, denoiser }
    }

    pub fn library(&self) -> &LayoutLibrary {
        self.denoiser.library()
    }

    pub fn context<'a>(&'a self, denoiser: &'a dyn Denoiser, mode: SamplerMode) -> RunContext<'a> {
        RunContext {
            denoiser,
            schedule: &self.schedule,
            counter: CounterConfig { amplitude: self.config.amplitude, ..CounterConfig::default() },
            mode,
            shape: self.config.shape(),
        }
    }
}

/// Records every latent the denoiser sees at the first step.
pub struct Recording<'a> {
    pub inner: &'a dyn Denoiser,
    pub first_step: usize,
    pub seen: Mutex<Vec<LatentGrid>>,
}

impl<'a> Recording<'a> {
    pub fn new(inner: &'a dyn Denoiser, first_step: usize) -> Self {
        Self { inner, first_step, seen: Mutex::new(Vec::new()) }
    }
}

impl Denoiser for Recording<'_> {
    fn predict_eps(&self, t: usize, z_t: &LatentGrid, prompt: &PromptSpec) -> Result<LatentGrid> {
        if t == self.first_step {
            self.seen.lock().unwrap().push(z_t.clone());
        }
        self.inner.predict_eps(t, z_t, prompt)
    }
}

/// Closed-form denoiser evaluations of a finished run.
pub fn closed_form_evals(r: &RunResult, steps: usize, p: &SteeringParams) -> u64 {
    let (t, ts, te) = (steps as u64, p.t_steer as u64, p.t_est as u64);
    let steered = 2 * (t - ts) + ts;
    let hit1 = r.c1 == Some(r.target);
    let hit2 = r.c2 == Some(r.target);
    match r.method {
        Method::Unsteered => t,
        Method::Static => steered,
        Method::Feedback if hit1 => t,
        Method::Feedback => (t - te) + steered,
        Method::Adaptive if hit1 => t,
        Method::Adaptive if hit2 => (t - te) + steered,
        Method::Adaptive => (t - te) + 2 * (t - te) + steered,
    }
}

pub fn closed_form_counter_calls(r: &RunResult) -> u64 {
    match r.method {
        Method::Unsteered | Method::Static => 1,
        Method::Feedback => 2,
        Method::Adaptive if r.c1 == Some(r.target) => 2,
        Method::Adaptive => 3,
    }
}

/// Naive posterior mean: direct exponentials, no log-space tricks.
pub fn naive_posterior_mean(
    means: &[Vec<f64>],
    weights: &[f64],
    z: &[f64],
    sigma0: f64,
    sigma_t: f64,
) -> (Vec<f64>, Vec<f64>) {
    let s2 = sigma0 * sigma0 + sigma_t * sigma_t;
    let mut unnorm = Vec::new();
    for (mu, w) in means.iter().zip(weights) {
        let d2: f64 = z.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
        unnorm.push(w * (-d2 / (2.0 * s2)).exp());
    }
    let total: f64 = unnorm.iter().sum();
    let resp: Vec<f64> = unnorm.iter().map(|u| u / total).collect();
    let mut mean = vec![0.0; z.len()];
    for (mu, r) in means.iter().zip(&resp) {
        for (i, m) in mean.iter_mut().enumerate() {
            *m += r * (sigma0 * sigma0 * z[i] + sigma_t * sigma_t * mu[i]) / s2;
        }
    }
    (mean, resp)
}

/// Literal form of the strength rule.
pub fn gamma_rule_literal(k: u32, c1: u32, c2: u32) -> bool {
    (c1 <= c2 && c2 < k) || (k < c2 && c2 <= c1)
}

/// Same rule stated as "error kept its sign and did not grow".
pub fn gamma_rule_semantic(k: u32, c1: u32, c2: u32) -> bool {
    let (e1, e2) = (i64::from(c1) - i64::from(k), i64::from(c2) - i64::from(k));
    e1.signum() == e2.signum() && e2.abs() <= e1.abs()
}

/// Library of `n` random components sharing one count, with random base weights.
pub fn random_library(
    rng: &mut impl rand::Rng,
    n: usize,
    shape: (usize, usize, usize),
    count: u32,
    sigma0: f64,
) -> LayoutLibrary {
    let len = shape.0 * shape.1 * shape.2;
    let components = (0..n)
        .map(|_| LayoutComponent {
            count,
            condition: Condition::Plain,
            mean: LatentGrid::from_vec(
                shape.0,
                shape.1,
                shape.2,
                (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
            base_weight: rng.random_range(0.05..1.0),
            centroids: vec![],
            distractors: vec![],
        })
        .collect();
    LayoutLibrary::from_components(components, sigma0).unwrap()
}
