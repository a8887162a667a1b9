//! Pluggable denoiser interface and its exact Gaussian-mixture implementation.
//!
//! The built-in denoiser conditions a mixture prior over rendered blob
//! layouts on the prompt. Layouts with the prompted count get weight
//! `1 - leakage`; the two neighbouring counts share `leakage`. That leak is
//! the only imperfection, and it is what makes unsteered sampling miscount.
//!
//! For data `z_0 ~ sum_i w_i N(mu_i, sigma0^2 I)` noised as
//! `z_t = z_0 + sigma_t eta`, the posterior mean is available in closed
//! form and the optimal noise prediction is `(z_t - E[z_0 | z_t]) / sigma_t`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::prompt::{Condition, PromptSpec, BENCH_MAX_COUNT, BENCH_MIN_COUNT, MAX_COUNT};
use crate::schedule::NoiseSchedule;
use crate::seed;

/// Channels of every grid in the toy world: target class and distractor class.
pub const CHANNELS: usize = 2;
pub const TARGET_CHANNEL: usize = 0;
pub const DISTRACTOR_CHANNEL: usize = 1;

/// Noise predictor `eps(t, z_t, prompt)`.
pub trait Denoiser: Sync {
    fn predict_eps(&self, t: usize, z_t: &LatentGrid, prompt: &PromptSpec) -> Result<LatentGrid>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Fraction of conditional weight leaked to the neighbouring counts.
    pub leakage: f64,
    pub height: usize,
    pub width: usize,
    /// Blob peak amplitude `A`.
    pub amplitude: f64,
    /// Gaussian blob radius in pixels.
    pub blob_radius: f64,
    /// Minimum centroid separation in pixels.
    pub min_sep: f64,
    /// Layouts per (count, condition) cell.
    pub components_per_cell: usize,
    /// Data-noise floor of every mixture component.
    pub sigma0: f64,
    pub count_min: u32,
    pub count_max: u32,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            leakage: 0.15,
            height: 32,
            width: 32,
            amplitude: 1.0,
            blob_radius: 1.5,
            min_sep: 6.0,
            components_per_cell: 16,
            sigma0: 0.05,
            count_min: 0,
            count_max: MAX_COUNT,
            seed: 23,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.leakage) {
            return Err(Error::config("denoiser.leakage", "must lie in [0, 1)"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("denoiser.height/width", "must be positive"));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::config("denoiser.amplitude", "must be positive"));
        }
        if !(self.blob_radius > 0.0) {
            return Err(Error::config("denoiser.blob_radius", "must be positive"));
        }
        if !(self.min_sep > 2.0 * self.blob_radius) {
            return Err(Error::config("denoiser.min_sep", "must exceed twice the blob radius"));
        }
        if self.components_per_cell == 0 {
            return Err(Error::config("denoiser.components_per_cell", "must be at least 1"));
        }
        if !(self.sigma0 > 0.0) {
            return Err(Error::config("denoiser.sigma0", "must be positive"));
        }
        if self.count_min > self.count_max || self.count_max > MAX_COUNT {
            return Err(Error::config(
                "denoiser.count_min/count_max",
                format!("must satisfy count_min <= count_max <= {MAX_COUNT}"),
            ));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (CHANNELS, self.height, self.width)
    }

    /// Keeps blob centres this far from the border.
    fn margin(&self) -> f64 {
        (self.blob_radius + 1.0).min(self.height.min(self.width) as f64 / 2.0 - 0.5).max(0.0)
    }
}

/// One mixture mode: a rendered blob layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutComponent {
    pub count: u32,
    pub condition: Condition,
    pub mean: LatentGrid,
    pub base_weight: f64,
    /// Target-class blob centres as `(x, y)` pixels.
    pub centroids: Vec<(f64, f64)>,
    /// Distractor blob centres on channel 1.
    pub distractors: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutLibrary {
    components: Vec<LayoutComponent>,
    sigma0: f64,
    count_min: u32,
    count_max: u32,
    groups: BTreeMap<(Condition, u32), Vec<usize>>,
}

impl LayoutLibrary {
    /// Assembles a library from explicit components.
    pub fn from_components(components: Vec<LayoutComponent>, sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0) {
            return Err(Error::invalid("sigma0 must be positive"));
        }
        if components.is_empty() {
            return Err(Error::invalid("library needs at least one component"));
        }
        let shape = components[0].mean.shape();
        let mut groups: BTreeMap<(Condition, u32), Vec<usize>> = BTreeMap::new();
        for (i, c) in components.iter().enumerate() {
            if c.mean.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    found: c.mean.shape(),
                });
            }
            if !(c.base_weight > 0.0) {
                return Err(Error::invalid("component weights must be positive"));
            }
            groups.entry((c.condition, c.count)).or_default().push(i);
        }
        let count_min = components.iter().map(|c| c.count).min().unwrap_or(0);
        let count_max = components.iter().map(|c| c.count).max().unwrap_or(0);
        Ok(Self {
            components,
            sigma0,
            count_min,
            count_max,
            groups,
        })
    }

    pub fn components(&self) -> &[LayoutComponent] {
        &self.components
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn count_range(&self) -> (u32, u32) {
        (self.count_min, self.count_max)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.components[0].mean.shape()
    }

    /// Component indices rendered for `(condition, count)`.
    pub fn group(&self, condition: Condition, count: u32) -> &[usize] {
        self.groups
            .get(&(condition, count))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Renders every (count, condition) cell of the layout prior.
pub fn build_library(config: &DenoiserConfig) -> Result<LayoutLibrary> {
    config.validate()?;
    let mut components = Vec::new();
    for (ci, condition) in Condition::ALL.into_iter().enumerate() {
        for count in config.count_min..=config.count_max {
            for m in 0..config.components_per_cell {
                let key = ((ci as u64) << 40) | ((count as u64) << 20) | m as u64;
                let mut rng = seed::rng_from(seed::mix(config.seed, key));
                components.push(render_layout(config, condition, count, &mut rng)?);
            }
        }
    }
    LayoutLibrary::from_components(components, config.sigma0)
}

const PLACEMENT_ATTEMPTS: usize = 500;
const POINT_ATTEMPTS: usize = 400;

fn render_layout(
    config: &DenoiserConfig,
    condition: Condition,
    count: u32,
    rng: &mut impl Rng,
) -> Result<LayoutComponent> {
    let centroids = match condition {
        Condition::Arrangement => place_rows(config, count as usize, rng)?,
        _ => place_scattered(config, count as usize, rng)?,
    };
    let distractors = if condition == Condition::Distractor {
        let n = rng.random_range(1..=3);
        place_scattered(config, n, rng)?
    } else {
        Vec::new()
    };
    let (c, h, w) = config.shape();
    let mut mean = LatentGrid::zeros(c, h, w)?;
    if condition.has_scene() {
        add_scene_texture(&mut mean, config.amplitude, rng);
    }
    for &(x, y) in &centroids {
        add_blob(&mut mean, TARGET_CHANNEL, x, y, config.amplitude, config.blob_radius);
    }
    for &(x, y) in &distractors {
        add_blob(&mut mean, DISTRACTOR_CHANNEL, x, y, config.amplitude, config.blob_radius);
    }
    Ok(LayoutComponent {
        count,
        condition,
        mean,
        base_weight: 1.0,
        centroids,
        distractors,
    })
}

fn far_enough(points: &[(f64, f64)], p: (f64, f64), min_sep: f64) -> bool {
    points
        .iter()
        .all(|q| (q.0 - p.0).hypot(q.1 - p.1) >= min_sep)
}

/// Sequential rejection sampling of `n` centres with pairwise `min_sep`.
fn place_scattered(config: &DenoiserConfig, n: usize, rng: &mut impl Rng) -> Result<Vec<(f64, f64)>> {
    let m = config.margin();
    let (xmax, ymax) = (config.width as f64 - 1.0 - m, config.height as f64 - 1.0 - m);
    'attempt: for _ in 0..PLACEMENT_ATTEMPTS {
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let found = (0..POINT_ATTEMPTS).find_map(|_| {
                let p = (rng.random_range(m..=xmax), rng.random_range(m..=ymax));
                far_enough(&points, p, config.min_sep).then_some(p)
            });
            match found {
                Some(p) => points.push(p),
                None => continue 'attempt,
            }
        }
        return Ok(points);
    }
    Err(Error::LibraryBuild(format!(
        "could not place {n} blobs with separation {} on a {}x{} grid",
        config.min_sep, config.width, config.height
    )))
}

/// Centres on jittered horizontal rows, wrapping onto extra rows when one
/// row cannot hold `n` blobs.
fn place_rows(config: &DenoiserConfig, n: usize, rng: &mut impl Rng) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = config.margin();
    let span_x = config.width as f64 - 1.0 - 2.0 * m;
    let span_y = config.height as f64 - 1.0 - 2.0 * m;
    let jitter_y = 1.0;
    let row_gap = config.min_sep + 2.0 * jitter_y;
    let per_row = ((span_x / config.min_sep).floor() as usize + 1).max(1);
    let rows = n.div_ceil(per_row);
    let needed_y = (rows - 1) as f64 * row_gap + 2.0 * jitter_y;
    if needed_y > span_y {
        return Err(Error::LibraryBuild(format!(
            "{n} blobs need {rows} rows, which do not fit a height of {}",
            config.height
        )));
    }
    'attempt: for _ in 0..PLACEMENT_ATTEMPTS {
        let y0 = m + jitter_y + rng.random_range(0.0..=(span_y - needed_y));
        let mut points = Vec::with_capacity(n);
        for r in 0..rows {
            let in_row = n / rows + usize::from(r < n % rows);
            let row_y = y0 + r as f64 * row_gap;
            let min_len = (in_row - 1) as f64 * config.min_sep;
            let len = rng.random_range(min_len..=span_x);
            let start = m + rng.random_range(0.0..=(span_x - len));
            let spacing = if in_row > 1 { len / (in_row - 1) as f64 } else { 0.0 };
            let jitter_x = ((spacing - config.min_sep) / 2.0).clamp(0.0, 0.5);
            for j in 0..in_row {
                let x = start + j as f64 * spacing + rng.random_range(-jitter_x..=jitter_x);
                let y = row_y + rng.random_range(-jitter_y..=jitter_y);
                let p = (x.clamp(m, m + span_x), y);
                if !far_enough(&points, p, config.min_sep) {
                    continue 'attempt;
                }
                points.push(p);
            }
        }
        return Ok(points);
    }
    Err(Error::LibraryBuild(format!("could not arrange {n} blobs in rows")))
}

/// Adds `A * exp(-d^2 / (2 r^2))` centred at `(x, y)`.
pub fn add_blob(grid: &mut LatentGrid, channel: usize, x: f64, y: f64, amplitude: f64, radius: f64) {
    let two_r2 = 2.0 * radius * radius;
    let reach = (radius * 6.0).ceil() as isize;
    let (h, w) = (grid.height() as isize, grid.width() as isize);
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    for py in (cy - reach).max(0)..(cy + reach + 1).min(h) {
        for px in (cx - reach).max(0)..(cx + reach + 1).min(w) {
            let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
            let i = grid.index(channel, py as usize, px as usize);
            grid.values_mut()[i] += amplitude * (-d2 / two_r2).exp();
        }
    }
}

/// Smooth non-negative field on the target channel peaking at `0.05 * A`.
fn add_scene_texture(grid: &mut LatentGrid, amplitude: f64, rng: &mut impl Rng) {
    use std::f64::consts::TAU;
    let (h, w) = (grid.height() as f64, grid.width() as f64);
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.5..2.0) * TAU / w,
                rng.random_range(0.5..2.0) * TAU / h,
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    let peak = 0.05 * amplitude;
    let channel = grid.channel_mut(TARGET_CHANNEL);
    for y in 0..h as usize {
        for x in 0..w as usize {
            let s: f64 = waves
                .iter()
                .map(|&(fx, fy, ph)| (fx * x as f64 + fy * y as f64 + ph).cos())
                .sum::<f64>()
                / waves.len() as f64;
            channel[y * w as usize + x] += peak * 0.5 * (1.0 + s);
        }
    }
}

/// Prompt-conditioned component weights as `(component index, weight)`.
pub fn mixture_for_prompt(
    library: &LayoutLibrary,
    prompt: &PromptSpec,
    leakage: f64,
) -> Result<Vec<(usize, f64)>> {
    if !(0.0..1.0).contains(&leakage) {
        return Err(Error::invalid(format!("leakage must lie in [0, 1), got {leakage}")));
    }
    let condition = prompt.condition();
    let (lo, hi) = library.count_range();
    let mut count_weights: Vec<(u32, f64)> = Vec::new();
    match prompt.count {
        Some(k) => {
            if k < lo || k > hi {
                return Err(Error::CountOutOfRange { count: k, min: lo, max: hi });
            }
            let side = leakage / 2.0;
            let mut own = 1.0 - leakage;
            for nb in [k.checked_sub(1), k.checked_add(1)] {
                match nb.filter(|&n| n >= lo && n <= hi && !library.group(condition, n).is_empty()) {
                    Some(n) => count_weights.push((n, side)),
                    None => own += side,
                }
            }
            count_weights.push((k, own));
        }
        None => {
            let lo_b = BENCH_MIN_COUNT.max(lo);
            let hi_b = BENCH_MAX_COUNT.min(hi);
            if lo_b > hi_b {
                return Err(Error::invalid("library does not cover the benchmark count range"));
            }
            let n = f64::from(hi_b - lo_b + 1);
            count_weights.extend((lo_b..=hi_b).map(|c| (c, 1.0 / n)));
        }
    }
    let mut out = Vec::new();
    for (count, cw) in count_weights {
        let group = library.group(condition, count);
        if group.is_empty() {
            return Err(Error::invalid(format!(
                "library has no {condition:?} components with count {count}"
            )));
        }
        let total: f64 = group.iter().map(|&i| library.components[i].base_weight).sum();
        out.extend(
            group
                .iter()
                .map(|&i| (i, cw * library.components[i].base_weight / total)),
        );
    }
    out.retain(|&(_, w)| w > 0.0);
    let norm: f64 = out.iter().map(|&(_, w)| w).sum();
    out.iter_mut().for_each(|(_, w)| *w /= norm);
    out.sort_by_key(|&(i, _)| i);
    Ok(out)
}

/// Posterior over mixture components given a noisy latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// `(component index, responsibility)`; sums to 1.
    pub responsibilities: Vec<(usize, f64)>,
    /// `E[z_0 | z_t]`.
    pub mean: LatentGrid,
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Exact posterior at noise level `sigma_t > 0`, in log space.
pub fn posterior(
    library: &LayoutLibrary,
    weights: &[(usize, f64)],
    z_t: &LatentGrid,
    sigma_t: f64,
) -> Result<Posterior> {
    if !(sigma_t > 0.0) {
        return Err(Error::invalid("posterior needs sigma_t > 0"));
    }
    let shape = library.shape();
    if z_t.shape() != shape {
        return Err(Error::ShapeMismatch { expected: shape, found: z_t.shape() });
    }
    let s0 = library.sigma0 * library.sigma0;
    let st = sigma_t * sigma_t;
    let s2 = s0 + st;
    let logits: Vec<f64> = weights
        .iter()
        .map(|&(i, w)| w.ln() - z_t.squared_distance(&library.components[i].mean) / (2.0 * s2))
        .collect();
    let lse = log_sum_exp(&logits);
    let responsibilities: Vec<(usize, f64)> = weights
        .iter()
        .zip(&logits)
        .map(|(&(i, _), &l)| (i, (l - lse).exp()))
        .collect();
    let mut mean_mu = LatentGrid::zeros(shape.0, shape.1, shape.2)?;
    for &(i, r) in &responsibilities {
        if r > 0.0 {
            mean_mu.axpy(r, &library.components[i].mean);
        }
    }
    let mean = z_t.zip_map(&mean_mu, |z, mu| (s0 * z + st * mu) / s2)?;
    Ok(Posterior { responsibilities, mean })
}

/// Optimal noise prediction `(z_t - E[z_0 | z_t]) / sigma_t` for `prompt`.
pub fn eps_predict(
    t: usize,
    z_t: &LatentGrid,
    prompt: &PromptSpec,
    library: &LayoutLibrary,
    schedule: &NoiseSchedule,
    leakage: f64,
) -> Result<LatentGrid> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::StepOutOfRange { t, max: schedule.steps() });
    }
    let sigma_t = schedule.sigma(t);
    let weights = mixture_for_prompt(library, prompt, leakage)?;
    let post = posterior(library, &weights, z_t, sigma_t)?;
    let eps = z_t.zip_map(&post.mean, |z, m| (z - m) / sigma_t)?;
    if !eps.is_finite() {
        return Err(Error::NonFinite("noise prediction"));
    }
    Ok(eps)
}

/// Maps a latent to image space: clamp to `[0, A]`.
pub fn decode(latent: &LatentGrid, amplitude: f64) -> LatentGrid {
    latent.map(|v| v.clamp(0.0, amplitude))
}

/// The exact mixture denoiser bound to a library and schedule.
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    library: Arc<LayoutLibrary>,
    schedule: NoiseSchedule,
    leakage: f64,
}

impl AnalyticDenoiser {
    pub fn new(library: Arc<LayoutLibrary>, schedule: NoiseSchedule, leakage: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&leakage) {
            return Err(Error::invalid(format!("leakage must lie in [0, 1), got {leakage}")));
        }
        Ok(Self { library, schedule, leakage })
    }

    pub fn library(&self) -> &LayoutLibrary {
        &self.library
    }

    pub fn leakage(&self) -> f64 {
        self.leakage
    }
}

impl Denoiser for AnalyticDenoiser {
    fn predict_eps(&self, t: usize, z_t: &LatentGrid, prompt: &PromptSpec) -> Result<LatentGrid> {
        eps_predict(t, z_t, prompt, &self.library, &self.schedule, self.leakage)
    }
}
