//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use countsteer::benchgen::{generate_benchmark, write_jsonl, BenchmarkSpec};
use countsteer::counting::{count_objects, CounterConfig};
use countsteer::denoiser::{
    build_library, decode, eps_predict, mixture_for_prompt, posterior, AnalyticDenoiser, DenoiserConfig,
    LayoutComponent, LayoutLibrary, DISTRACTOR_CHANNEL, TARGET_CHANNEL,
};
use countsteer::experiment::{read_records_csv, run_experiment, ExperimentConfig, Harness};
use countsteer::metrics::{evaluate_records, MetricsReport, SampleRecord};
use countsteer::prompt::{Condition, Level};
use countsteer::schedule::{diffusion_steps, make_schedule, sample_initial, Cost, NoiseStream, SamplerMode};
use countsteer::steering::{steered_steps, steer_eps};
use countsteer::strategies::{adapt_gamma, control_prompt_feedback, Method};
use countsteer::{seed, LatentGrid, PromptSpec};
use rand::Rng;
use rand_distr::StandardNormal;

use common::{closed_form_counter_calls, closed_form_evals, gamma_rule_literal, naive_posterior_mean};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn normal_grid(rng: &mut impl Rng, shape: (usize, usize, usize), scale: f64) -> LatentGrid {
    let n = shape.0 * shape.1 * shape.2;
    let v = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    LatentGrid::from_vec(shape.0, shape.1, shape.2, v).unwrap()
}

fn rel_err(a: &LatentGrid, b: &LatentGrid) -> f64 {
    a.zip_map(b, |x, y| x - y).unwrap().l2_norm() / b.l2_norm().max(f64::MIN_POSITIVE)
}

/// Random plain-condition library covering counts `lo..=hi`.
fn mixed_library(rng: &mut impl Rng, shape: (usize, usize, usize), lo: u32, hi: u32) -> LayoutLibrary {
    let mut components = Vec::new();
    for count in lo..=hi {
        for _ in 0..rng.random_range(1..=3) {
            components.push(LayoutComponent {
                count,
                condition: Condition::Plain,
                mean: normal_grid(rng, shape, 0.5),
                base_weight: rng.random_range(0.1..1.0),
                centroids: vec![],
                distractors: vec![],
            });
        }
    }
    LayoutLibrary::from_components(components, rng.random_range(0.02..0.2)).unwrap()
}

fn steering_identities() -> Outcome {
    let mut rng = seed::rng_from(101);
    let mut worst_norm = 0.0f64;
    let mut mismatches = 0;
    for trial in 0..1000u64 {
        let shape = (rng.random_range(1..=2), rng.random_range(2..=5), rng.random_range(2..=5));
        let lib = Arc::new(mixed_library(&mut rng, shape, 0, 4));
        let steps = rng.random_range(2..=12);
        let schedule = make_schedule(steps, 1.0, 0.01).unwrap();
        let den = AnalyticDenoiser::new(lib, schedule.clone(), rng.random_range(0.0..0.6)).unwrap();
        let p = PromptSpec::new(Level::L1, rng.random_range(0..=4));
        let other = control_prompt_feedback(&p, rng.random_range(0..=4)).unwrap();
        let z = sample_initial(&schedule, shape, &mut seed::rng_from(trial)).unwrap();
        let noise = NoiseStream::new(trial);
        let mode = SamplerMode::Deterministic;
        let mut cost = Cost::default();
        let plain = diffusion_steps(&den, &p, steps, 0, z.clone(), &schedule, mode, &noise, &mut cost).unwrap();
        let zero =
            steered_steps(&den, &p, &other, steps, 0, z.clone(), 0.0, &schedule, mode, &noise, &mut cost).unwrap();
        let gamma = rng.random_range(0.5..8.0);
        let same = steered_steps(&den, &p, &p, steps, 0, z.clone(), gamma, &schedule, mode, &noise, &mut cost).unwrap();
        if plain.latent != zero.latent || plain.latent != same.latent {
            mismatches += 1;
        }
        let t = rng.random_range(1..=steps);
        let e = countsteer::denoiser::Denoiser::predict_eps(&den, t, &z, &p).unwrap();
        let h = countsteer::denoiser::Denoiser::predict_eps(&den, t, &z, &other).unwrap();
        let out = steer_eps(&e, &h, gamma).unwrap();
        worst_norm = worst_norm.max((out.l2_norm() - e.l2_norm()).abs() / e.l2_norm());
    }
    outcome(
        mismatches == 0 && worst_norm <= 1e-10,
        format!("1000 triples, {mismatches} trajectory mismatches, worst norm rel err {worst_norm:.1e}"),
    )
}

fn denoiser_oracle() -> Outcome {
    let mut rng = seed::rng_from(202);
    let schedule = make_schedule(50, 1.0, 0.01).unwrap();
    let (mut worst_eps, mut worst_sum) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=8);
        let sigma0 = rng.random_range(0.02..0.3);
        let comps: Vec<LayoutComponent> = (0..n)
            .map(|_| LayoutComponent {
                count: 3,
                condition: Condition::Plain,
                mean: normal_grid(&mut rng, (1, 4, 4), 0.5),
                base_weight: rng.random_range(0.05..1.0),
                centroids: vec![],
                distractors: vec![],
            })
            .collect();
        let base: Vec<f64> = comps.iter().map(|c| c.base_weight).collect();
        let means: Vec<Vec<f64>> = comps.iter().map(|c| c.mean.values().to_vec()).collect();
        let lib = LayoutLibrary::from_components(comps, sigma0).unwrap();
        let t = rng.random_range(1..=50);
        let sigma_t = schedule.sigma(t);
        // Near a random mode so the direct exponentials stay representable.
        let j = rng.random_range(0..n);
        let mut z = lib.components()[j].mean.clone();
        z.axpy((sigma0 * sigma0 + sigma_t * sigma_t).sqrt(), &normal_grid(&mut rng, (1, 4, 4), 1.0));
        let p = PromptSpec::new(Level::L1, 3);
        let eps = eps_predict(t, &z, &p, &lib, &schedule, rng.random_range(0.0..0.9)).unwrap();

        let total: f64 = base.iter().sum();
        let w: Vec<f64> = base.iter().map(|b| b / total).collect();
        let (m, _) = naive_posterior_mean(&means, &w, z.values(), sigma0, sigma_t);
        let oracle = LatentGrid::from_vec(1, 4, 4, z.values().iter().zip(&m).map(|(zi, mi)| (zi - mi) / sigma_t).collect())
            .unwrap();
        worst_eps = worst_eps.max(rel_err(&eps, &oracle));

        let weights = mixture_for_prompt(&lib, &p, 0.0).unwrap();
        let post = posterior(&lib, &weights, &z, sigma_t).unwrap();
        let sum: f64 = post.responsibilities.iter().map(|&(_, r)| r).sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
    }
    outcome(
        worst_eps <= 1e-9 && worst_sum <= 1e-12,
        format!("10000 evaluations, worst eps rel err {worst_eps:.1e}, worst |sum r - 1| {worst_sum:.1e}"),
    )
}

fn counter_oracle() -> Outcome {
    let lib = build_library(&DenoiserConfig::default()).unwrap();
    let cfg = CounterConfig::default();
    let mut rng = seed::rng_from(303);
    let (mut errors, mut altered) = (0, 0);
    for c in lib.components() {
        let img = decode(&c.mean, 1.0);
        let n = count_objects(&img, TARGET_CHANNEL, &cfg).unwrap().count;
        errors += usize::from(n != c.count);
        let mut scribbled = img.clone();
        scribbled
            .channel_mut(DISTRACTOR_CHANNEL)
            .iter_mut()
            .for_each(|v| *v = rng.random_range(0.0..1.0));
        let mut cleared = img;
        cleared.channel_mut(DISTRACTOR_CHANNEL).iter_mut().for_each(|v| *v = 0.0);
        let a = count_objects(&scribbled, TARGET_CHANNEL, &cfg).unwrap();
        let b = count_objects(&cleared, TARGET_CHANNEL, &cfg).unwrap();
        altered += usize::from(a != b || b.count != n);
    }
    outcome(
        lib.components().len() == 13 * 4 * 16 && errors == 0 && altered == 0,
        format!("{} layouts, {errors} count errors, {altered} altered by channel 1", lib.components().len()),
    )
}

fn gamma_table() -> Outcome {
    let mut checked = 0;
    let mut wrong = 0;
    for k in 0..=12u32 {
        for c1 in (0..=12u32).filter(|&c| c != k) {
            for c2 in (0..=12u32).filter(|&c| c != k) {
                let expect = if gamma_rule_literal(k, c1, c2) { 6.0 } else { 1.5 };
                wrong += usize::from(adapt_gamma(k, c1, c2, 3.0) != expect);
                checked += 1;
            }
        }
    }
    outcome(wrong == 0, format!("{checked} triples with c1, c2 != k, {wrong} disagreements"))
}

fn cost_bounds() -> Outcome {
    let items: Vec<_> = generate_benchmark(&BenchmarkSpec::levels(55)).unwrap().into_iter().take(50).collect();
    let cfg = ExperimentConfig { threads: Some(1), ..ExperimentConfig::default() };
    let harness = Harness::new(&cfg).unwrap();
    let steps = cfg.schedule.steps;
    let (mut runs, mut bad) = (0, 0);
    let mut restarts = 0;
    for method in Method::ALL {
        let params = cfg.params_for(method);
        for item in &items {
            let r = harness.run_item(item, method).unwrap();
            let ok = r.denoiser_evals == closed_form_evals(&r, steps, &params)
                && r.counter_calls == closed_form_counter_calls(&r)
                && r.counter_calls <= 3
                && r.steered_trajectories <= 2;
            bad += usize::from(!ok);
            restarts += usize::from(r.steered_trajectories == 2);
            runs += 1;
        }
    }
    outcome(bad == 0, format!("{runs} runs, {bad} off-formula or over budget, {restarts} adaptive restarts"))
}

fn leak_free() -> Outcome {
    let items = generate_benchmark(&BenchmarkSpec::single_level("l1", Level::L1, 10, 66)).unwrap();
    let mut cfg = ExperimentConfig { threads: Some(1), methods: vec![Method::Unsteered], ..ExperimentConfig::default() };
    cfg.denoiser.leakage = 0.0;
    let harness = Harness::new(&cfg).unwrap();
    let records: Vec<SampleRecord> = harness.run_all(&items).unwrap().iter().map(|s| s.record()).collect();
    let rep = evaluate_records(&records).unwrap();
    outcome(rep.accuracy == 1.0, format!("{} items, accuracy {:.1}%", rep.n, 100.0 * rep.accuracy))
}

struct Sweep {
    unsteered: MetricsReport,
    adaptive: MetricsReport,
    rows: Vec<SampleRecord>,
}

fn l1_sweep(dir: &std::path::Path, tag: &str) -> Sweep {
    let bench = dir.join("l1.jsonl");
    if !bench.exists() {
        write_jsonl(&generate_benchmark(&BenchmarkSpec::single_level("l1", Level::L1, 20, 23)).unwrap(), &bench)
            .unwrap();
    }
    let cfg = ExperimentConfig {
        benchmark: bench,
        output_dir: dir.join(tag),
        methods: vec![Method::Unsteered, Method::Adaptive],
        threads: Some(1),
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&cfg).unwrap();
    let mut rows = read_records_csv(&out.csv_path).unwrap();
    rows.iter_mut().for_each(|r| r.wall_time_s = 0.0);
    let pick = |m: Method| out.reports.iter().find(|r| r.method == m).unwrap().clone();
    Sweep { unsteered: pick(Method::Unsteered), adaptive: pick(Method::Adaptive), rows }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Duration, Duration, Outcome)> = Vec::new();
    let mut timed = |id: u32, name: &'static str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        results.push((id, name, start.elapsed(), limit, out));
    };
    let secs = Duration::from_secs;

    timed(1, "steering identities", secs(60), &mut steering_identities);
    timed(2, "denoiser oracle", secs(60), &mut denoiser_oracle);
    timed(3, "counter oracle", secs(30), &mut counter_oracle);
    timed(4, "strength rule table", secs(1), &mut gamma_table);
    timed(5, "cost bounds", secs(120), &mut cost_bounds);
    timed(6, "leak-free sanity", secs(120), &mut leak_free);

    let start = Instant::now();
    let first = l1_sweep(dir.path(), "first");
    let sweep_time = start.elapsed();
    let (u, a) = (&first.unsteered, &first.adaptive);
    let margin = a.accuracy - u.accuracy;
    results.push((
        7,
        "adaptive beats unsteered",
        sweep_time,
        secs(600),
        outcome(
            (0.40..=0.60).contains(&u.accuracy) && margin >= 0.10 && a.mae < u.mae,
            format!(
                "unsteered acc {:.1}% mae {:.3}, adaptive acc {:.1}% mae {:.3}, margin {:+.1} pts",
                100.0 * u.accuracy,
                u.mae,
                100.0 * a.accuracy,
                a.mae,
                100.0 * margin
            ),
        ),
    ));
    let low = u.accuracy_over(&[2, 3]).unwrap_or(f64::NAN);
    let high = u.accuracy_over(&[9, 10]).unwrap_or(f64::NAN);
    results.push((
        8,
        "difficulty grows with count",
        Duration::ZERO,
        secs(1),
        outcome(low >= high, format!("unsteered acc on {{2,3}} {:.1}%, on {{9,10}} {:.1}%", 100.0 * low, 100.0 * high)),
    ));

    let start = Instant::now();
    let second = l1_sweep(dir.path(), "second");
    let same_metrics = [(&first.unsteered, &second.unsteered), (&first.adaptive, &second.adaptive)]
        .iter()
        .all(|(x, y)| x.accuracy == y.accuracy && x.mae == y.mae && x.rmse == y.rmse);
    results.push((
        9,
        "reproducible rerun",
        start.elapsed(),
        secs(600),
        outcome(
            same_metrics && first.rows == second.rows,
            format!("{} rows compared, metrics equal: {same_metrics}", first.rows.len()),
        ),
    ));

    let mut failed = 0;
    for (id, name, took, limit, out) in &results {
        let pass = out.pass && took <= limit;
        failed += usize::from(!pass);
        println!(
            "criterion {id} {}: {name}: {} ({:.2}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
