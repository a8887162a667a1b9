//! Command-line front end: benchmark generation, experiment runs, reports
//! and single-run renders.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use countsteer::benchgen::{generate_benchmark, write_jsonl, BenchmarkSpec};
use countsteer::experiment::{
    read_records_csv, reports, run_experiment, ExperimentConfig, Harness,
};
use countsteer::pgm;
use countsteer::prompt::{Level, PromptSpec};
use countsteer::schedule::SamplerMode;
use countsteer::strategies::{run_method, Method};
use countsteer::Error;

#[derive(Parser)]
#[command(name = "countsteer", version, about = "Count-steered diffusion sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark files.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Run methods over a benchmark and write CSV/JSON results.
    Run(RunArgs),
    /// Recompute metrics from a results CSV.
    Report(ReportArgs),
    /// Render one run to PGM images.
    Render(RenderArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Generate a benchmark as JSON Lines.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    /// flat (161), extended (648) or levels (360); overridden by --levels/--per-cell.
    #[arg(long, default_value = "levels")]
    preset: String,
    /// Comma-separated levels, e.g. L1,L2.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<Level>>,
    #[arg(long)]
    per_cell: Option<usize>,
    #[arg(long, default_value_t = 2)]
    count_min: u32,
    #[arg(long, default_value_t = 10)]
    count_max: u32,
    #[arg(long, default_value_t = 23)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Flags mirroring `ExperimentConfig`; each overrides the config file.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON file with `ExperimentConfig` fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    t_steer: Option<usize>,
    #[arg(long)]
    t_est: Option<usize>,
    #[arg(long)]
    static_t_steer: Option<usize>,
    #[arg(long)]
    leakage: Option<f64>,
    #[arg(long)]
    components_per_cell: Option<usize>,
    #[arg(long)]
    library_seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SamplerMode>,
    #[arg(long)]
    threshold_frac: Option<f64>,
    #[arg(long)]
    area_min: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write PGM renders of every final image.
    #[arg(long)]
    images: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// results.csv written by `run`.
    #[arg(long)]
    results: PathBuf,
    /// Print the reports as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "L1")]
    level: Level,
    #[arg(long)]
    count: u32,
    #[arg(long, default_value = "adaptive")]
    method: Method,
    /// Run seed; defaults to the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path stem; channels go to `<stem>_c<i>.pgm`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<SamplerMode, String> {
    match s {
        "deterministic" => Ok(SamplerMode::Deterministic),
        "stochastic" => Ok(SamplerMode::Stochastic),
        other => Err(format!("unknown sampler mode `{other}`")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> countsteer::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.benchmark {
            cfg.benchmark = v.clone();
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.clone();
        }
        if let Some(v) = self.gamma {
            cfg.steering.gamma = v;
        }
        if let Some(v) = self.t_steer {
            cfg.steering.t_steer = v;
        }
        if let Some(v) = self.t_est {
            cfg.steering.t_est = v;
        }
        if let Some(v) = self.static_t_steer {
            cfg.static_t_steer = v;
        }
        if let Some(v) = self.leakage {
            cfg.denoiser.leakage = v;
        }
        if let Some(v) = self.components_per_cell {
            cfg.denoiser.components_per_cell = v;
        }
        if let Some(v) = self.library_seed {
            cfg.denoiser.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.schedule.steps = v;
        }
        if let Some(v) = self.sigma_max {
            cfg.schedule.sigma_max = v;
        }
        if let Some(v) = self.sigma_min {
            cfg.schedule.sigma_min = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.threshold_frac {
            cfg.counter.threshold_frac = v;
        }
        if let Some(v) = self.area_min {
            cfg.counter.area_min = v;
        }
        if let Some(v) = self.base_seed {
            cfg.base_seed = v;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }
}

fn bench_gen(args: &GenArgs) -> anyhow::Result<()> {
    let mut spec = BenchmarkSpec::preset(&args.preset, args.seed)?;
    if let Some(levels) = &args.levels {
        spec.levels = levels.clone();
        spec.level_totals = None;
    }
    if let Some(n) = args.per_cell {
        spec.prompts_per_cell = n;
        spec.level_totals = None;
    }
    spec.count_min = args.count_min;
    spec.count_max = args.count_max;
    let items = generate_benchmark(&spec)?;
    write_jsonl(&items, &args.out)?;
    println!("wrote {} items to {}", items.len(), args.out.display());
    Ok(())
}

fn run(args: &RunArgs) -> anyhow::Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.write_images |= args.images;
    let output = run_experiment(&cfg)?;
    println!("wrote {} rows to {}", output.records.len(), output.csv_path.display());
    print_table(&output.reports);
    Ok(())
}

fn report(args: &ReportArgs) -> anyhow::Result<()> {
    let records = read_records_csv(&args.results)
        .with_context(|| format!("reading {}", args.results.display()))?;
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let reps = reports(&records, &methods)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reps)?);
    } else {
        print_table(&reps);
    }
    Ok(())
}

fn render(args: &RenderArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let harness = Harness::new(&cfg)?;
    let prompt = PromptSpec::new(args.level, args.count);
    let result = run_method(
        harness.context(),
        args.method,
        &prompt,
        &cfg.params_for(args.method),
        args.seed.unwrap_or(cfg.base_seed),
    )?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let paths = pgm::write_image(&result.final_image, cfg.denoiser.amplitude, &args.out)?;
    let show = |c: Option<u32>| c.map_or_else(|| "-".to_string(), |c| c.to_string());
    println!(
        "{} k={} final={} c1={} c2={} evals={}",
        result.method,
        result.target,
        result.final_count,
        show(result.c1),
        show(result.c2),
        result.denoiser_evals
    );
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn print_table(reports: &[countsteer::metrics::MetricsReport]) {
    println!(
        "{:<10} {:>5} {:>8} {:>7} {:>7} {:>9} {:>8} {:>10}",
        "method", "n", "acc(%)", "mae", "rmse", "evals", "counts", "time(ms)"
    );
    for r in reports {
        println!(
            "{:<10} {:>5} {:>8.1} {:>7.3} {:>7.3} {:>9.1} {:>8.2} {:>10.2}",
            r.method.name(),
            r.n,
            100.0 * r.accuracy,
            r.mae,
            r.rmse,
            r.mean_denoiser_evals,
            r.mean_counter_calls,
            1e3 * r.mean_wall_time
        );
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::InvalidArgument(_) | Error::CountOutOfRange { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Bench { command: BenchCommand::Gen(args) } => bench_gen(args),
        Command::Run(args) => run(args),
        Command::Report(args) => report(args),
        Command::Render(args) => render(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
