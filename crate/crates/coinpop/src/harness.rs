//! Seeded experiment grids comparing budgeted estimators, with CSV output.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::budgeted_twalk;
use crate::coin_model::{CoinPopulation, RngStream};
use crate::estimators::{majority_vote_estimate, SingleCoinEstimatorSpec};
use crate::math::{mean, splitmix64, std_dev};
use crate::refined::{optimal_estimate, OptimalConfig, OptimalStatus};
use crate::{Error, Result};

/// Terminal values of the 15-flip walk tuned for Δ ≥ 0.3, by heads count.
pub const TUNED_TWALK_15: [(usize, f64); 8] = [
    (8, 0.0),
    (9, 6.913),
    (10, 5.032),
    (11, 2.101),
    (12, 0.636),
    (13, 1.965),
    (14, 1.016),
    (15, 1.009),
];

pub const TWALK_DEPTH: usize = 15;
pub const VOTE_FLIPS: usize = 15;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "COINPOP_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PopulationSource {
    File(PathBuf),
    Inline(CoinPopulation),
}

impl PopulationSource {
    pub fn load(&self) -> Result<CoinPopulation> {
        match self {
            Self::File(p) => CoinPopulation::load(p),
            Self::Inline(p) => Ok(p.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Budgeted triangular walk, raw or virtual flips as Δ dictates.
    TWalk,
    /// Fixed number of raw flips per coin, majority vote.
    Vote,
    /// Three-stage budget-driven estimator.
    Optimal,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "twalk" => Ok(Self::TWalk),
            "vote" => Ok(Self::Vote),
            "optimal" => Ok(Self::Optimal),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TWalk => "twalk",
            Self::Vote => "vote",
            Self::Optimal => "optimal",
        }
    }
}

fn default_depth() -> usize {
    TWALK_DEPTH
}

fn default_vote_flips() -> usize {
    VOTE_FLIPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub population: PopulationSource,
    pub methods: Vec<String>,
    pub budgets: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
    /// Use [`TUNED_TWALK_15`] for the walk's terminal values.
    #[serde(default)]
    pub tuned_values: bool,
    #[serde(default = "default_depth")]
    pub twalk_depth: usize,
    #[serde(default = "default_vote_flips")]
    pub vote_flips: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<Vec<Method>> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("budgets must be strictly increasing".into()));
        }
        if self.tuned_values && self.twalk_depth != TWALK_DEPTH {
            return Err(Error::InvalidConfig(format!(
                "tuned values exist only for depth {TWALK_DEPTH}"
            )));
        }
        self.methods.iter().map(|m| Method::parse(m)).collect()
    }

    pub fn walk_spec(&self) -> Result<SingleCoinEstimatorSpec> {
        if self.tuned_values {
            SingleCoinEstimatorSpec::from_pairs(TWALK_DEPTH, &TUNED_TWALK_15)
        } else {
            SingleCoinEstimatorSpec::with_default_values(self.twalk_depth)
        }
    }
}

/// Budgets on the x-axis of the soda preset.
pub const SODA_BUDGETS: [u64; 6] = [1_000, 3_000, 10_000, 30_000, 100_000, 300_000];
pub const SODA_SEED: u64 = 20_190_107;

/// ρ=0.01, Δ=0.3, tuned 15-flip walk against 15-flip voting, 10 trials.
pub fn soda_preset() -> ExperimentConfig {
    soda_preset_with_rho(0.01)
}

pub fn soda_preset_with_rho(rho: f64) -> ExperimentConfig {
    ExperimentConfig {
        population: PopulationSource::Inline(
            CoinPopulation::two_point(rho, 0.3).expect("preset population is valid"),
        ),
        methods: vec!["twalk".into(), "vote".into()],
        budgets: SODA_BUDGETS.to_vec(),
        trials: 10,
        seed: SODA_SEED,
        tuned_values: true,
        twalk_depth: TWALK_DEPTH,
        vote_flips: VOTE_FLIPS,
        out: None,
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "soda" => Ok(soda_preset()),
        other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub rho: f64,
    pub delta: f64,
    pub budget: u64,
    pub trial: usize,
    pub seed: u64,
    /// Empty when nothing completed within the budget.
    pub estimate: Option<f64>,
    pub flips_used: u64,
}

/// Seed of a trial. Every method and budget in the same trial shares it.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    splitmix64(seed ^ splitmix64(trial as u64))
}

fn run_one(
    method: Method,
    pop: &CoinPopulation,
    spec: &SingleCoinEstimatorSpec,
    config: &ExperimentConfig,
    budget: u64,
    rng: &RngStream,
) -> Result<(Option<f64>, u64)> {
    match method {
        Method::TWalk => {
            let r = budgeted_twalk(pop, spec, budget, rng);
            Ok(((!r.report.empty).then_some(r.report.estimate), r.report.flips_used))
        }
        Method::Vote => {
            let coins = (budget / config.vote_flips as u64) as usize;
            let r = majority_vote_estimate(pop, coins, config.vote_flips, rng)?;
            Ok(((!r.empty).then_some(r.estimate), r.flips_used))
        }
        Method::Optimal => {
            if budget == 0 {
                return Ok((None, 0));
            }
            let r = optimal_estimate(pop, budget, &OptimalConfig::default(), rng)?;
            let est = (r.status != OptimalStatus::Failed).then_some(r.report.estimate);
            Ok((est, r.report.flips_used))
        }
    }
}

/// Builds a pool sized by `COINPOP_THREADS`, if set.
pub fn thread_pool_from_env() -> Result<Option<rayon::ThreadPool>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v} is not a count")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Ok(Some(pool))
        }
        Err(_) => Ok(None),
    }
}

/// Runs every (method, budget, trial) cell. Rows come back in that order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let methods = config.validate()?;
    let pop = config.population.load()?;
    let spec = config.walk_spec()?;
    let mut jobs = Vec::new();
    for &m in &methods {
        for &b in &config.budgets {
            for t in 0..config.trials {
                jobs.push((m, b, t));
            }
        }
    }
    let work = || {
        jobs.par_iter()
            .map(|&(method, budget, trial)| {
                let seed = trial_seed(config.seed, trial);
                let rng = RngStream::new(seed, 0);
                let (estimate, flips_used) = run_one(method, &pop, &spec, config, budget, &rng)?;
                assert!(flips_used <= budget, "{} used {flips_used} of {budget} flips", method.name());
                Ok(ResultRow {
                    method: method.name().to_string(),
                    rho: pop.rho(),
                    delta: pop.delta(),
                    budget,
                    trial,
                    seed,
                    estimate,
                    flips_used,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    match thread_pool_from_env()? {
        Some(pool) => pool.install(work),
        None => work(),
    }
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

pub fn csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub budget: u64,
    pub trials: usize,
    pub mean: f64,
    pub std: f64,
    pub bias: f64,
}

/// Mean, sample std and bias of the estimates per (method, budget), in
/// first-seen order. Rows with no estimate are skipped.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, u64)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.budget);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .filter_map(|(method, budget)| {
            let group: Vec<&ResultRow> =
                rows.iter().filter(|r| r.method == method && r.budget == budget).collect();
            let values: Vec<f64> = group.iter().filter_map(|r| r.estimate).collect();
            if values.is_empty() {
                return None;
            }
            let m = mean(&values);
            Some(SummaryRow {
                method,
                budget,
                trials: values.len(),
                mean: m,
                std: if values.len() > 1 { std_dev(&values) } else { 0.0 },
                bias: m - group[0].rho,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(est: f64) -> ResultRow {
        ResultRow {
            method: "twalk".into(),
            rho: 0.01,
            delta: 0.3,
            budget: 10,
            trial: 0,
            seed: 1,
            estimate: Some(est),
            flips_used: 10,
        }
    }

    #[test]
    fn single_row_summary() {
        let s = summarize(&[row(0.02)]);
        assert_eq!(s[0].std, 0.0);
        assert_eq!(s[0].bias, 0.02 - 0.01);
    }

    #[test]
    fn csv_header() {
        let text = csv_string(&[row(0.5)]).unwrap();
        assert!(text.starts_with("method,rho,delta,budget,trial,seed,estimate,flips_used\n"));
    }

    #[test]
    fn unknown_method() {
        let mut c = soda_preset();
        c.methods = vec!["switch".into()];
        assert!(matches!(run_experiment(&c), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn budgets_must_increase() {
        let mut c = soda_preset();
        c.budgets = vec![10, 10];
        assert!(c.validate().is_err());
    }
}
