//! Seed-sweep orchestration: run persistence (CSV episode logs + JSON
//! summaries), final-decile aggregation, the exact Wilcoxon signed-rank test,
//! improvement percentages, paired comparison reports, and plot-data emission.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::agent::{train_loop, AgentConfig, AgentError, Algorithm, NoHooks};
use crate::envs::{make_env, EnvError};

/// Version stamp carried by every emitted file.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least one sample pair")]
    EmptySamples,
    #[error("improvement percent undefined for a zero baseline mean")]
    ZeroBaseline,
    #[error("run has no completed episodes")]
    NoEpisodes,
    #[error("compare needs at least 2 seeds")]
    TooFewSeeds,
    #[error("run {0} diverged before completing a single episode")]
    UnusableRun(String),
    #[error("no plot records supplied")]
    EmptyPlotInput,
}

/// One completed episode: the global timestep at which it ended, its ordinal,
/// its undiscounted return, and its length in steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub timestep: u64,
    pub episode: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: u64,
}

/// One gradient step: loss, the temperature in force, and the optional
/// policy-churn rate over the probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEventLog {
    pub timestep: u64,
    pub loss: f64,
    pub tau: f64,
    pub churn: Option<f64>,
}

/// Everything produced by a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub env: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config: AgentConfig,
    pub episodes: Vec<EpisodeLog>,
    pub train_events: Vec<TrainEventLog>,
    pub duration_secs: f64,
    /// Timestep at which the loss went non-finite, if the run diverged.
    pub diverged_at: Option<u64>,
}

impl RunRecord {
    pub fn empty() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            env: String::new(),
            algorithm: Algorithm::EsC51,
            seed: 0,
            config: AgentConfig::default(),
            episodes: Vec::new(),
            train_events: Vec::new(),
            duration_secs: 0.0,
            diverged_at: None,
        }
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.episode_return).collect()
    }
}

/// Compact JSON sidecar for a persisted run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub key: String,
    pub env: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config_hash: String,
    pub config: AgentConfig,
    pub sticky: f64,
    pub episodes_completed: u64,
    pub final_decile_mean: Option<f64>,
    pub duration_secs: f64,
    pub diverged_at: Option<u64>,
}

/// Paired two-algorithm comparison over a common seed list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub env: String,
    pub seeds: Vec<u64>,
    pub es_final_deciles: Vec<f64>,
    pub ql_final_deciles: Vec<f64>,
    pub es_mean: f64,
    pub es_std: f64,
    pub ql_mean: f64,
    pub ql_std: f64,
    pub improvement_pct: f64,
    pub wilcoxon_p: f64,
    pub significant: bool,
    /// Fewer than 6 seeds: the exact test cannot reach p < 0.05.
    pub low_power: bool,
    pub es_diverged_seeds: Vec<u64>,
    pub ql_diverged_seeds: Vec<u64>,
}

/// 64-bit FNV-1a over the canonical JSON of the config with the seed zeroed,
/// plus the sticky probability: runs differing only by seed share a hash.
pub fn config_hash(config: &AgentConfig, sticky: f64) -> String {
    let mut keyed = config.clone();
    keyed.seed = 0;
    let payload = format!(
        "{}|sticky={sticky}",
        serde_json::to_string(&keyed).expect("config serializes")
    );
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in payload.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn run_key(env: &str, config: &AgentConfig, sticky: f64) -> String {
    format!(
        "{env}_{}_seed{}_{}",
        config.algorithm.as_str(),
        config.seed,
        config_hash(config, sticky)
    )
}

fn csv_path(out_dir: &Path, key: &str) -> PathBuf {
    out_dir.join(format!("{key}.csv"))
}

fn json_path(out_dir: &Path, key: &str) -> PathBuf {
    out_dir.join(format!("{key}.json"))
}

fn write_episode_csv(path: &Path, episodes: &[EpisodeLog]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestep", "episode", "return", "length"])?;
    for e in episodes {
        w.write_record([
            e.timestep.to_string(),
            e.episode.to_string(),
            format!("{}", e.episode_return),
            e.length.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn read_episode_csv(path: &Path) -> Result<Vec<EpisodeLog>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize::<EpisodeLog>() {
        out.push(rec?);
    }
    Ok(out)
}

/// Runs one full training run and, when `out_dir` is given, persists the
/// episode CSV and summary JSON keyed by (env, algo, seed, config hash).
/// A diverged run is persisted and returned with `diverged_at` set rather
/// than dropped.
pub fn run_training(
    config: &AgentConfig,
    env_name: &str,
    sticky: f64,
    out_dir: Option<&Path>,
) -> Result<RunRecord, ExperimentError> {
    let mut env = make_env(env_name, sticky)?;
    let record = match train_loop(config, env.as_mut(), env_name, &mut NoHooks) {
        Ok(record) => record,
        Err(AgentError::Diverged { record, .. }) => *record,
        Err(other) => return Err(other.into()),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let key = run_key(env_name, config, sticky);
        write_episode_csv(&csv_path(dir, &key), &record.episodes)?;
        let summary = RunSummary {
            format_version: FORMAT_VERSION,
            key: key.clone(),
            env: env_name.to_string(),
            algorithm: config.algorithm,
            seed: config.seed,
            config_hash: config_hash(config, sticky),
            config: config.clone(),
            sticky,
            episodes_completed: record.episodes.len() as u64,
            final_decile_mean: final_decile_mean(&record.returns()).ok(),
            duration_secs: record.duration_secs,
            diverged_at: record.diverged_at,
        };
        let mut f = fs::File::create(json_path(dir, &key))?;
        f.write_all(serde_json::to_string_pretty(&summary)?.as_bytes())?;
        f.write_all(b"\n")?;
    }
    Ok(record)
}

/// Mean return over the last ⌈0.1·E⌉ episodes.
pub fn final_decile_mean(returns: &[f64]) -> Result<f64, ExperimentError> {
    if returns.is_empty() {
        return Err(ExperimentError::NoEpisodes);
    }
    let k = (returns.len() as f64 * 0.1).ceil() as usize;
    let tail = &returns[returns.len() - k..];
    Ok(tail.iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences (mid-ranks under ties).
    pub w_plus: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_effective: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided paired Wilcoxon signed-rank test. Zero differences are dropped
/// (classical treatment); |differences| are ranked with mid-ranks for ties.
/// For n ≤ 20 the p-value is exact, from enumerating all 2^n sign
/// assignments; above that a normal approximation with tie correction and
/// continuity correction is used. All differences zero gives p = 1.0 by
/// convention.
pub fn wilcoxon_signed_rank(xs: &[f64], ys: &[f64]) -> Result<WilcoxonResult, ExperimentError> {
    if xs.len() != ys.len() {
        return Err(ExperimentError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(ExperimentError::EmptySamples);
    }
    let diffs: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult { w_plus: 0.0, n_effective: 0, p_value: 1.0, exact: true });
    }

    let ranks = midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total: f64 = ranks.iter().sum();
    let center = total / 2.0;
    let obs_dev = (w_plus - center).abs();

    if n <= 20 {
        // Enumerate every signing; count those at least as extreme (two-sided
        // around the symmetric center). A small slack absorbs float noise in
        // mid-rank sums.
        let mut extreme = 0u64;
        for mask in 0u64..(1u64 << n) {
            let mut s = 0.0;
            for (i, r) in ranks.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    s += r;
                }
            }
            if (s - center).abs() >= obs_dev - 1e-9 {
                extreme += 1;
            }
        }
        let p = extreme as f64 / (1u64 << n) as f64;
        Ok(WilcoxonResult { w_plus, n_effective: n, p_value: p.min(1.0), exact: true })
    } else {
        // Var(W+) = Σ r_i²/4; mid-ranks bake in the tie correction.
        let var: f64 = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
        let z = (obs_dev - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let p = (2.0 * (1.0 - normal.cdf(z))).clamp(f64::MIN_POSITIVE, 1.0);
        Ok(WilcoxonResult { w_plus, n_effective: n, p_value: p, exact: false })
    }
}

/// Average ranks (1-based) with mid-ranks assigned to tied values.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite ranks"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Relative improvement of the ES mean over the QL baseline, in percent, with
/// an absolute-value denominator so the sign tracks (es − ql) even for
/// negative baselines.
pub fn improvement_pct(ql_mean: f64, es_mean: f64) -> Result<f64, ExperimentError> {
    if ql_mean == 0.0 {
        return Err(ExperimentError::ZeroBaseline);
    }
    Ok(100.0 * (es_mean - ql_mean) / ql_mean.abs())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for a single value.
fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Population standard deviation, used for plot bands.
fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn load_cached(
    out_dir: &Path,
    key: &str,
) -> Result<Option<(RunSummary, Vec<EpisodeLog>)>, ExperimentError> {
    let jp = json_path(out_dir, key);
    let cp = csv_path(out_dir, key);
    if !jp.exists() || !cp.exists() {
        return Ok(None);
    }
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(jp)?)?;
    let episodes = read_episode_csv(&cp)?;
    Ok(Some((summary, episodes)))
}

/// Runs (or loads from `out_dir`) both algorithms on every seed, aggregates
/// final-decile means, and writes `comparison_{env}.json` plus
/// `plot_{env}.tsv` into `out_dir`.
pub fn compare(
    env_name: &str,
    base_config: &AgentConfig,
    seeds: &[u64],
    sticky: f64,
    out_dir: &Path,
    plot_window: usize,
) -> Result<ComparisonReport, ExperimentError> {
    if seeds.len() < 2 {
        return Err(ExperimentError::TooFewSeeds);
    }
    fs::create_dir_all(out_dir)?;

    let mut deciles = Vec::new(); // (algo, per-seed final deciles)
    let mut diverged = Vec::new();
    let mut curves: Vec<(Algorithm, Vec<Vec<EpisodeLog>>)> = Vec::new();
    for algo in [Algorithm::EsC51, Algorithm::QlC51] {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut bad_seeds = Vec::new();
        let mut episodes_per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let config = AgentConfig { algorithm: algo, seed, ..base_config.clone() };
            let key = run_key(env_name, &config, sticky);
            let (summary_decile, summary_diverged, episodes) =
                match load_cached(out_dir, &key)? {
                    Some((summary, episodes)) => {
                        (summary.final_decile_mean, summary.diverged_at, episodes)
                    }
                    None => {
                        let record = run_training(&config, env_name, sticky, Some(out_dir))?;
                        (
                            final_decile_mean(&record.returns()).ok(),
                            record.diverged_at,
                            record.episodes,
                        )
                    }
                };
            if summary_diverged.is_some() {
                bad_seeds.push(seed);
            }
            per_seed.push(summary_decile.ok_or_else(|| ExperimentError::UnusableRun(key))?);
            episodes_per_seed.push(episodes);
        }
        deciles.push(per_seed);
        diverged.push(bad_seeds);
        curves.push((algo, episodes_per_seed));
    }
    let ql_deciles = deciles.pop().expect("two algorithms");
    let es_deciles = deciles.pop().expect("two algorithms");
    let ql_diverged = diverged.pop().expect("two algorithms");
    let es_diverged = diverged.pop().expect("two algorithms");

    let es_mean = mean(&es_deciles);
    let ql_mean = mean(&ql_deciles);
    let wilcoxon = wilcoxon_signed_rank(&es_deciles, &ql_deciles)?;
    let report = ComparisonReport {
        format_version: FORMAT_VERSION,
        env: env_name.to_string(),
        seeds: seeds.to_vec(),
        es_mean,
        es_std: sample_std(&es_deciles),
        ql_mean,
        ql_std: sample_std(&ql_deciles),
        es_final_deciles: es_deciles,
        ql_final_deciles: ql_deciles,
        improvement_pct: improvement_pct(ql_mean, es_mean)?,
        wilcoxon_p: wilcoxon.p_value,
        significant: wilcoxon.p_value < 0.05,
        low_power: seeds.len() < 6,
        es_diverged_seeds: es_diverged,
        ql_diverged_seeds: ql_diverged,
    };

    let mut f = fs::File::create(out_dir.join(format!("comparison_{env_name}.json")))?;
    f.write_all(serde_json::to_string_pretty(&report)?.as_bytes())?;
    f.write_all(b"\n")?;

    emit_plot_data(&curves, plot_window, &out_dir.join(format!("plot_{env_name}.tsv")))?;
    Ok(report)
}

/// Writes a tab-separated learning-curve file: per algorithm, episode returns
/// are moving-average smoothed over `window` episodes, sampled on the union
/// grid of episode-end timesteps (carry-forward between episodes), then
/// averaged across seeds with a ± one population-standard-deviation band.
/// Columns: `timestep  algorithm  mean_return  band`.
pub fn emit_plot_data(
    records: &[(Algorithm, Vec<Vec<EpisodeLog>>)],
    window: usize,
    path: &Path,
) -> Result<(), ExperimentError> {
    if records.is_empty() || records.iter().all(|(_, runs)| runs.is_empty()) {
        return Err(ExperimentError::EmptyPlotInput);
    }
    let window = window.max(1);
    let mut out = String::from("# format_version=1\ntimestep\talgorithm\tmean_return\tband\n");
    for (algo, runs) in records {
        let grid: BTreeSet<u64> = runs
            .iter()
            .flat_map(|eps| eps.iter().map(|e| e.timestep))
            .collect();
        if grid.is_empty() {
            continue;
        }
        // Per run: smooth, then sample on the grid by carry-forward.
        let sampled: Vec<Vec<f64>> = runs
            .iter()
            .map(|eps| {
                let smoothed: Vec<f64> = (0..eps.len())
                    .map(|i| {
                        let lo = i + 1 - window.min(i + 1);
                        let slice = &eps[lo..=i];
                        slice.iter().map(|e| e.episode_return).sum::<f64>() / slice.len() as f64
                    })
                    .collect();
                let mut cursor = 0usize;
                grid.iter()
                    .map(|&t| {
                        while cursor + 1 < eps.len() && eps[cursor + 1].timestep <= t {
                            cursor += 1;
                        }
                        smoothed[cursor]
                    })
                    .collect()
            })
            .collect();
        for (gi, &t) in grid.iter().enumerate() {
            let column: Vec<f64> = sampled.iter().map(|s| s[gi]).collect();
            out.push_str(&format!(
                "{t}\t{}\t{}\t{}\n",
                algo.as_str(),
                mean(&column),
                population_std(&column)
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads and renders the comparison reports found in `dir` as plain text.
pub fn render_reports(dir: &Path) -> Result<String, ExperimentError> {
    let mut out = String::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("comparison_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    for path in &entries {
        let report: ComparisonReport = serde_json::from_str(&fs::read_to_string(path)?)?;
        out.push_str(&format!(
            "{}: {} seeds\n  es-c51  {:>10.2} ± {:.2}\n  ql-c51  {:>10.2} ± {:.2}\n  improvement {:+.2}%  wilcoxon p = {:.6}{}{}\n",
            report.env,
            report.seeds.len(),
            report.es_mean,
            report.es_std,
            report.ql_mean,
            report.ql_std,
            report.improvement_pct,
            report.wilcoxon_p,
            if report.significant { "  (significant at 0.05)" } else { "" },
            if report.low_power { "  [low power: <6 seeds]" } else { "" },
        ));
        for (name, seeds) in [
            ("es-c51", &report.es_diverged_seeds),
            ("ql-c51", &report.ql_diverged_seeds),
        ] {
            if !seeds.is_empty() {
                out.push_str(&format!("  diverged {name} seeds: {seeds:?}\n"));
            }
        }
    }
    if entries.is_empty() {
        out.push_str("no comparison reports found\n");
    }
    Ok(out)
}
