//! Experiment orchestration and persistence.
//!
//! A run pairs every benchmark item with every requested method. The seed of
//! an item is derived from the base seed and the item id only, so adding
//! items never perturbs existing rows, and all methods see the same initial
//! noise for a given item.
//!
//! Outputs in the output directory:
//! - `results.csv`: one row per (item, method), sorted by id then method
//! - `metrics_<method>.json`: one [`MetricsReport`] per method
//! - `per_count.csv`: accuracy and MAE per target count and method
//! - `config.json`: the resolved configuration
//! - `images/`: optional PGM renders of every final image

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchgen::{read_jsonl, BenchmarkItem};
use crate::counting::CounterConfig;
use crate::denoiser::{build_library, AnalyticDenoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_records, MetricsReport, SampleRecord};
use crate::pgm;
use crate::schedule::{make_schedule, NoiseSchedule, SamplerMode};
use crate::seed;
use crate::steering::SteeringParams;
use crate::strategies::{run_method, Method, RunContext, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            sigma_max: 1.0,
            sigma_min: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: PathBuf,
    pub methods: Vec<Method>,
    /// Parameters for feedback and adaptive runs.
    pub steering: SteeringParams,
    /// Steering cutoff used by static runs.
    pub static_t_steer: usize,
    pub denoiser: DenoiserConfig,
    /// `counter.amplitude` is always taken from `denoiser.amplitude`.
    pub counter: CounterConfig,
    pub schedule: ScheduleConfig,
    pub mode: SamplerMode,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub write_images: bool,
    /// Worker threads; `None` uses all cores, `Some(1)` runs sequentially.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: PathBuf::from("benchmark.jsonl"),
            methods: Method::ALL.to_vec(),
            steering: SteeringParams::default(),
            static_t_steer: 10,
            denoiser: DenoiserConfig::default(),
            counter: CounterConfig::default(),
            schedule: ScheduleConfig::default(),
            mode: SamplerMode::Deterministic,
            base_seed: 23,
            output_dir: PathBuf::from("out"),
            write_images: false,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    /// Parameter checks that do not touch the filesystem.
    pub fn validate_params(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "must name at least one method"));
        }
        make_schedule(self.schedule.steps, self.schedule.sigma_max, self.schedule.sigma_min)
            .map_err(|e| Error::config("schedule", e.to_string()))?;
        self.steering.validate(self.schedule.steps)?;
        self.static_params()
            .validate(self.schedule.steps)
            .map_err(|e| Error::config("static_t_steer", e.to_string()))?;
        self.denoiser.validate()?;
        self.counter_config().validate()?;
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be at least 1"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_params()?;
        if !self.benchmark.is_file() {
            return Err(Error::config(
                "benchmark",
                format!("file {} does not exist", self.benchmark.display()),
            ));
        }
        Ok(())
    }

    pub fn counter_config(&self) -> CounterConfig {
        CounterConfig {
            amplitude: self.denoiser.amplitude,
            ..self.counter
        }
    }

    fn static_params(&self) -> SteeringParams {
        SteeringParams {
            t_steer: self.static_t_steer,
            t_est: self.steering.t_est.max(self.static_t_steer),
            ..self.steering
        }
    }

    pub fn params_for(&self, method: Method) -> SteeringParams {
        match method {
            Method::Static => self.static_params(),
            _ => self.steering,
        }
    }
}

pub fn item_seed(base_seed: u64, id: u32) -> u64 {
    seed::mix(base_seed, u64::from(id))
}

/// Built library, schedule and denoiser for one configuration.
pub struct Harness {
    config: ExperimentConfig,
    schedule: NoiseSchedule,
    denoiser: AnalyticDenoiser,
}

/// A finished run together with the item it belongs to.
#[derive(Debug, Clone)]
pub struct Sample {
    pub item: BenchmarkItem,
    pub result: RunResult,
}

impl Sample {
    pub fn record(&self) -> SampleRecord {
        SampleRecord::from_run(self.item.id, self.item.level, &self.result)
    }
}

impl Harness {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate_params()?;
        let s = &config.schedule;
        let schedule = make_schedule(s.steps, s.sigma_max, s.sigma_min)?;
        let library = Arc::new(build_library(&config.denoiser)?);
        let denoiser = AnalyticDenoiser::new(library, schedule.clone(), config.denoiser.leakage)?;
        Ok(Self {
            config: config.clone(),
            schedule,
            denoiser,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn denoiser(&self) -> &AnalyticDenoiser {
        &self.denoiser
    }

    pub fn context(&self) -> RunContext<'_> {
        RunContext {
            denoiser: &self.denoiser,
            schedule: &self.schedule,
            counter: self.config.counter_config(),
            mode: self.config.mode,
            shape: self.config.denoiser.shape(),
        }
    }

    pub fn run_item(&self, item: &BenchmarkItem, method: Method) -> Result<RunResult> {
        run_method(
            self.context(),
            method,
            &item.prompt,
            &self.config.params_for(method),
            item_seed(self.config.base_seed, item.id),
        )
    }

    /// Runs every (item, method) pair; output sorted by id, then method.
    pub fn run_all(&self, items: &[BenchmarkItem]) -> Result<Vec<Sample>> {
        let jobs: Vec<(&BenchmarkItem, Method)> = items
            .iter()
            .flat_map(|i| self.config.methods.iter().map(move |&m| (i, m)))
            .collect();
        let run = |&(item, method): &(&BenchmarkItem, Method)| -> Result<Sample> {
            Ok(Sample {
                item: item.clone(),
                result: self.run_item(item, method)?,
            })
        };
        let mut samples = match self.config.threads {
            Some(1) => jobs.iter().map(run).collect::<Result<Vec<_>>>()?,
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?
                .install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?,
            None => jobs.par_iter().map(run).collect::<Result<Vec<_>>>()?,
        };
        samples.sort_by_key(|s| (s.item.id, s.result.method));
        Ok(samples)
    }
}

/// One report per method, in the configured method order.
pub fn reports(records: &[SampleRecord], methods: &[Method]) -> Result<Vec<MetricsReport>> {
    methods
        .iter()
        .map(|&m| {
            let rows: Vec<SampleRecord> = records.iter().filter(|r| r.method == m).cloned().collect();
            evaluate_records(&rows)
        })
        .collect()
}

pub fn write_records_csv(records: &[SampleRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<SampleRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

fn write_per_count_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "k", "n", "accuracy", "mae"])?;
    for rep in reports {
        for (k, b) in &rep.per_count {
            w.write_record([
                rep.method.name().to_string(),
                k.to_string(),
                b.n.to_string(),
                b.accuracy.to_string(),
                b.mae.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct ExperimentOutput {
    pub records: Vec<SampleRecord>,
    pub reports: Vec<MetricsReport>,
    pub csv_path: PathBuf,
}

/// Loads the benchmark, runs it, and writes every output file.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let items = read_jsonl(&config.benchmark)?;
    if items.is_empty() {
        return Err(Error::config("benchmark", "benchmark file holds no items"));
    }
    let harness = Harness::new(config)?;
    let samples = harness.run_all(&items)?;
    let records: Vec<SampleRecord> = samples.iter().map(Sample::record).collect();
    let reports = reports(&records, &config.methods)?;

    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    let csv_path = out.join("results.csv");
    write_records_csv(&records, &csv_path)?;
    for rep in &reports {
        let path = out.join(format!("metrics_{}.json", rep.method));
        fs::write(path, serde_json::to_string_pretty(rep)?)?;
    }
    write_per_count_csv(&reports, &out.join("per_count.csv"))?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(config)?)?;

    if config.write_images {
        let dir = out.join("images");
        fs::create_dir_all(&dir)?;
        for s in &samples {
            let base = dir.join(format!("{:05}_{}.pgm", s.item.id, s.result.method));
            pgm::write_image(&s.result.final_image, config.denoiser.amplitude, &base)?;
        }
    }

    Ok(ExperimentOutput {
        records,
        reports,
        csv_path,
    })
}
