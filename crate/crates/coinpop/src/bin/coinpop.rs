use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use coinpop::analysis::suites::{run_suite, Suite};
use coinpop::budget::budgeted_rule_walk;
use coinpop::coin_model::{CoinPopulation, RngStream};
use coinpop::design_opt::design_for_population;
use coinpop::estimators::{
    anytime_estimate, majority_vote_estimate, rule_walk_estimate, triangular_walk_estimate,
    MedianOfMeansConfig, RunReport,
};
use coinpop::harness::{self, run_experiment, summarize, write_csv_file};
use coinpop::refined::{optimal_estimate_boosted, OptimalConfig, OptimalReport};
use coinpop::walk_core::rule_from_json;
use coinpop::Result;

#[derive(Parser)]
#[command(name = "coinpop", version, about = "Estimate the fraction of positive coins in a noisy population")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimateMethod {
    Twalk,
    Vote,
    Anytime,
}

#[derive(Subcommand)]
enum Command {
    /// Run one of the basic estimators on a population.
    Estimate {
        #[arg(long)]
        population: PathBuf,
        #[arg(long, value_enum, default_value = "twalk")]
        method: EstimateMethod,
        /// Target additive error.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Failure probability.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Raw-flip budget (required for `anytime`, caps `vote`).
        #[arg(long)]
        budget: Option<u64>,
        /// Coins for `twalk` and `vote`; `twalk` defaults to the median-of-means size.
        #[arg(long)]
        coins: Option<usize>,
        /// Flips per coin for `vote`.
        #[arg(long, default_value_t = 15)]
        flips: usize,
        /// Rule file with a value triangle, replacing the default walk.
        #[arg(long)]
        rule: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Budget-driven three-stage estimator.
    Optimal {
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        budget: u64,
        /// Repeat and take the median; omit for a single run.
        #[arg(long)]
        delta_fail: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Design a stopping rule and values for a population's bias distributions.
    Design {
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        nmax: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the distance inequalities on random small instances.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 1000)]
        instances: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid and write one CSV row per trial.
    Experiment {
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct EstimateRow {
    method: &'static str,
    trial: usize,
    seed: u64,
    estimate: Option<f64>,
    flips_used: u64,
    coins_used: u64,
}

#[derive(Serialize)]
struct OptimalRow {
    run: usize,
    seed: u64,
    stream_id: u64,
    status: &'static str,
    rho_hat: Option<f64>,
    stage1_flips: u64,
    stage2_flips: u64,
    stage3_flips: u64,
    estimate: Option<f64>,
    flips_used: u64,
}

fn write_rows<T: Serialize>(rows: &[T], out: Option<&PathBuf>) -> Result<()> {
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn estimate_once(
    pop: &CoinPopulation,
    method: EstimateMethod,
    eps: f64,
    delta: f64,
    budget: Option<u64>,
    coins: Option<usize>,
    flips: usize,
    rule: Option<&(coinpop::walk_core::StoppingRule, coinpop::walk_core::Triangle)>,
    rng: &RngStream,
) -> Result<RunReport> {
    let groups = MedianOfMeansConfig::group_count(delta);
    match (method, rule) {
        (EstimateMethod::Twalk, Some((r, v))) => {
            let t = coins.unwrap_or_else(|| MedianOfMeansConfig::for_accuracy(eps, delta, None).total_coins());
            rule_walk_estimate(pop, r, v, t, groups, rng)
        }
        (EstimateMethod::Twalk, None) => {
            let t = coins.unwrap_or_else(|| MedianOfMeansConfig::for_accuracy(eps, delta, None).total_coins());
            triangular_walk_estimate(pop, t, eps, delta, rng)
        }
        (EstimateMethod::Anytime, rule) => {
            let b = budget.ok_or_else(|| coinpop::Error::InvalidConfig("anytime needs --budget".into()))?;
            Ok(match rule {
                Some((r, v)) => budgeted_rule_walk(pop, r, v, b, rng)?.report,
                None => anytime_estimate(pop, eps, b, rng)?.report,
            })
        }
        (EstimateMethod::Vote, _) => {
            let n = match (coins, budget) {
                (Some(c), _) => c,
                (None, Some(b)) => (b / flips as u64) as usize,
                (None, None) => 1000,
            };
            majority_vote_estimate(pop, n, flips, rng)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate { population, method, eps, delta, budget, coins, flips, rule, trials, seed, out } => {
            let pop = CoinPopulation::load(&population)?;
            let rule = match rule {
                Some(path) => {
                    let (r, v) = rule_from_json(&std::fs::read_to_string(path)?)?;
                    let v = v.ok_or_else(|| {
                        coinpop::Error::InvalidRule("rule file has no value triangle".into())
                    })?;
                    Some((r, v))
                }
                None => None,
            };
            let name = match method {
                EstimateMethod::Twalk => "twalk",
                EstimateMethod::Vote => "vote",
                EstimateMethod::Anytime => "anytime",
            };
            let mut rows = Vec::with_capacity(trials);
            for trial in 0..trials {
                let trial_seed = harness::trial_seed(seed, trial);
                let rng = RngStream::new(trial_seed, 0);
                let r = estimate_once(&pop, method, eps, delta, budget, coins, flips, rule.as_ref(), &rng)?;
                rows.push(EstimateRow {
                    method: name,
                    trial,
                    seed: trial_seed,
                    estimate: (!r.empty).then_some(r.estimate),
                    flips_used: r.flips_used,
                    coins_used: r.coins_used,
                });
            }
            write_rows(&rows, out.as_ref())
        }
        Command::Optimal { population, budget, delta_fail, seed, out } => {
            let pop = CoinPopulation::load(&population)?;
            let rng = RngStream::new(seed, 0);
            let config = OptimalConfig::default();
            let boosted = optimal_estimate_boosted(&pop, budget, delta_fail.unwrap_or(1.0), &config, &rng)?;
            let runs: &[OptimalReport] = if delta_fail.is_some() { &boosted.runs } else { &boosted.runs[..1] };
            let rows: Vec<OptimalRow> = runs
                .iter()
                .enumerate()
                .map(|(i, r)| OptimalRow {
                    run: i,
                    seed: r.report.seed,
                    stream_id: r.report.stream_id,
                    status: r.status.as_str(),
                    rho_hat: r.rho_hat,
                    stage1_flips: r.stage_flips[0],
                    stage2_flips: r.stage_flips[1],
                    stage3_flips: r.stage_flips[2],
                    estimate: (!r.report.empty).then_some(r.report.estimate),
                    flips_used: r.report.flips_used,
                })
                .collect();
            write_rows(&rows, out.as_ref())?;
            let estimate = if delta_fail.is_some() { boosted.estimate } else { rows[0].estimate };
            match estimate {
                Some(e) => eprintln!("estimate {e}"),
                None => eprintln!("estimate unavailable: every run failed"),
            }
            Ok(())
        }
        Command::Design { population, nmax, out } => {
            let pop = CoinPopulation::load(&population)?;
            let est = design_for_population(&pop, nmax)?;
            std::fs::write(&out, est.to_json())?;
            println!("{}", serde_json::to_string_pretty(&est.summary())?);
            Ok(())
        }
        Command::Verify { suite, instances, seed, out } => {
            let suite = Suite::parse(&suite)?;
            let rows = run_suite(suite, instances, seed)?;
            let failed = rows.iter().filter(|r| !r.pass).count();
            write_rows(&rows, out.as_ref())?;
            eprintln!("{}: {} instances, {failed} outside the bound", suite.name(), rows.len());
            Ok(())
        }
        Command::Experiment { preset, config, out } => {
            let mut cfg = match (preset, config) {
                (Some(name), None) => harness::preset(&name)?,
                (None, Some(path)) => harness::ExperimentConfig::load(&path)?,
                _ => return Err(coinpop::Error::InvalidConfig("give --preset or --config".into())),
            };
            if out.is_some() {
                cfg.out = out;
            }
            let rows = run_experiment(&cfg)?;
            match &cfg.out {
                Some(p) => write_csv_file(&rows, p)?,
                None => harness::write_csv(&rows, std::io::stdout())?,
            }
            for s in summarize(&rows) {
                eprintln!(
                    "{:>8} budget {:>8}: mean {:.5} std {:.5} bias {:+.5}",
                    s.method, s.budget, s.mean, s.std, s.bias
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
