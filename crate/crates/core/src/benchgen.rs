//! Deterministic synthetic counting benchmarks.
//!
//! Items are emitted per `(level, count)` cell with counts balanced to
//! within one item inside each level, then shuffled by seed and numbered.
//! Benchmarks are stored as JSON Lines, one item per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{Level, PromptSpec, BENCH_MAX_COUNT, BENCH_MIN_COUNT};
use crate::seed;

const OBJECTS: [&str; 12] = [
    "lantern", "kite", "buoy", "drum", "bell", "gourd", "pebble", "lemon", "button", "coin", "shell",
    "marble",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub name: String,
    pub levels: Vec<Level>,
    pub count_min: u32,
    pub count_max: u32,
    /// Items per `(level, count)` cell when `level_totals` is absent.
    pub prompts_per_cell: usize,
    /// Optional per-level totals, parallel to `levels`; split evenly over counts.
    #[serde(default)]
    pub level_totals: Option<Vec<usize>>,
    pub seed: u64,
}

impl BenchmarkSpec {
    /// Single-level set with `per_cell` prompts for each count in 2..=10.
    pub fn single_level(name: &str, level: Level, per_cell: usize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            levels: vec![level],
            count_min: BENCH_MIN_COUNT,
            count_max: BENCH_MAX_COUNT,
            prompts_per_cell: per_cell,
            level_totals: None,
            seed,
        }
    }

    /// Flat 161-prompt set with a near-balanced count distribution.
    pub fn flat(seed: u64) -> Self {
        Self {
            level_totals: Some(vec![161]),
            ..Self::single_level("flat", Level::L1, 1, seed)
        }
    }

    /// 72 prompts per count, 648 in total.
    pub fn extended(seed: u64) -> Self {
        Self::single_level("extended", Level::L1, 72, seed)
    }

    /// Four difficulty levels with 120/100/100/40 prompts, 360 in total.
    pub fn levels(seed: u64) -> Self {
        Self {
            name: "levels".to_string(),
            levels: Level::ALL.to_vec(),
            count_min: BENCH_MIN_COUNT,
            count_max: BENCH_MAX_COUNT,
            prompts_per_cell: 1,
            level_totals: Some(vec![120, 100, 100, 40]),
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "flat" => Ok(Self::flat(seed)),
            "extended" => Ok(Self::extended(seed)),
            "levels" => Ok(Self::levels(seed)),
            other => Err(Error::invalid(format!(
                "unknown benchmark preset `{other}` (expected flat, extended or levels)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::config("benchmark.levels", "must not be empty"));
        }
        if self.count_min < BENCH_MIN_COUNT || self.count_max > BENCH_MAX_COUNT || self.count_min > self.count_max {
            return Err(Error::config(
                "benchmark.counts",
                format!("must be a sub-range of {BENCH_MIN_COUNT}..={BENCH_MAX_COUNT}"),
            ));
        }
        match &self.level_totals {
            Some(totals) if totals.len() != self.levels.len() => Err(Error::config(
                "benchmark.level_totals",
                "must have one entry per level",
            )),
            Some(totals) if totals.contains(&0) => {
                Err(Error::config("benchmark.level_totals", "entries must be positive"))
            }
            None if self.prompts_per_cell == 0 => {
                Err(Error::config("benchmark.prompts_per_cell", "must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkItem {
    pub id: u32,
    pub level: Level,
    pub int_number: u32,
    /// Index of the item within its `(level, count)` cell.
    pub variant: u32,
    pub object: String,
    pub prompt: PromptSpec,
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<()> {
        self.prompt.validate()?;
        if self.prompt.count != Some(self.int_number) {
            return Err(Error::Parse(format!(
                "item {}: int_number {} disagrees with prompt count {:?}",
                self.id, self.int_number, self.prompt.count
            )));
        }
        if self.prompt.level != self.level {
            return Err(Error::Parse(format!("item {}: level disagrees with prompt", self.id)));
        }
        Ok(())
    }
}

pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Vec<BenchmarkItem>> {
    spec.validate()?;
    let mut rng = seed::rng_from(seed::mix(spec.seed, 0xBE_4C4));
    let counts: Vec<u32> = (spec.count_min..=spec.count_max).collect();
    let mut items = Vec::new();
    for (li, &level) in spec.levels.iter().enumerate() {
        let mut per_count = vec![spec.prompts_per_cell; counts.len()];
        if let Some(totals) = &spec.level_totals {
            let total = totals[li];
            per_count.fill(total / counts.len());
            // The remainder goes to a seeded choice of counts.
            let mut order: Vec<usize> = (0..counts.len()).collect();
            order.shuffle(&mut rng);
            for &i in order.iter().take(total % counts.len()) {
                per_count[i] += 1;
            }
        }
        for (&count, &n) in counts.iter().zip(&per_count) {
            for variant in 0..n {
                items.push(BenchmarkItem {
                    id: 0,
                    level,
                    int_number: count,
                    variant: variant as u32,
                    object: OBJECTS[rng.random_range(0..OBJECTS.len())].to_string(),
                    prompt: PromptSpec::new(level, count),
                });
            }
        }
    }
    items.shuffle(&mut rng);
    for (id, item) in items.iter_mut().enumerate() {
        item.id = id as u32;
    }
    Ok(items)
}

pub fn write_jsonl(items: &[BenchmarkItem], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates a JSONL benchmark; blank lines are skipped.
pub fn read_jsonl(path: &Path) -> Result<Vec<BenchmarkItem>> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        item.validate()?;
        items.push(item);
    }
    let mut ids: Vec<u32> = items.iter().map(|i| i.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parse(format!("{}: duplicate item ids", path.display())));
    }
    Ok(items)
}
