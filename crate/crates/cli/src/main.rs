//! `bicnet` command-line front end.
//!
//! Exit codes: 0 on success, 2 for invalid input, 3 for numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bicnet_core::behavior::ThresholdPolicy;
use bicnet_core::ingest::read_behavior_csv;
use bicnet_core::posthoc::Estimator;
use bicnet_core::run::{
    compare_maps, fit, format_similarity, regress, select_k, summarize, write_k_scores, write_simulation, FitFailure,
    FitResult, RegressSettings, RunConfig,
};
use bicnet_core::simulate::{gen_dataset_with, SimScenario};
use bicnet_core::Error;

#[derive(Parser)]
#[command(name = "bicnet", version, about = "Dynamic sparse latent factor networks for region time series")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config (a scenario for `simulate`, a run config for `fit` and `select-k`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "BICNET_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset with ground truth from a scenario file.
    Simulate,
    /// Run the sampler and write the aligned draw store.
    Fit {
        /// Pool all chains in the written point estimates.
        #[arg(long)]
        pool: bool,
    },
    /// Posterior summaries, group map and task effects of a draw store.
    Summarize {
        #[arg(long)]
        store: PathBuf,
        /// Threshold on the group inclusion probabilities.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value = "median")]
        estimator: Estimator,
        /// Significance level of the asymptotic KS threshold.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Fixed KS threshold instead of the asymptotic one.
        #[arg(long)]
        ks_threshold: Option<f64>,
        /// Pool all chains.
        #[arg(long)]
        pool: bool,
    },
    /// Regress a behavioral measure on the task effects of one condition.
    Regress {
        #[arg(long)]
        store: PathBuf,
        /// CSV with header `subject,<measure>,...`.
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long)]
        measure: String,
        /// Task condition name as listed in the store metadata.
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 20_000)]
        sweeps: usize,
        #[arg(long, default_value_t = 2_000)]
        burn_in: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Fit several K and report AIC, BIC and DIC.
    SelectK {
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
    },
    /// Match two group-map CSVs by Jaccard similarity.
    Compare { map_a: PathBuf, map_b: PathBuf },
}

enum Failure {
    Plain(Error),
    Fit(FitFailure),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Plain(e)
    }
}

impl From<FitFailure> for Failure {
    fn from(e: FitFailure) -> Self {
        Failure::Fit(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.common.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Plain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Fit(f)) => {
            eprintln!("error: {}", f.error);
            if let (Some(snap), Some(dir)) = (&f.snapshot, cli.common.out.as_ref()) {
                let path = dir.join("failure_snapshot.json");
                let written = std::fs::create_dir_all(dir)
                    .and_then(|_| std::fs::write(&path, serde_json::to_string_pretty(snap).unwrap_or_default()));
                match written {
                    Ok(()) => eprintln!("state at failure written to {}", path.display()),
                    Err(e) => eprintln!("could not write {}: {e}", path.display()),
                }
            }
            ExitCode::from(f.error.exit_code() as u8)
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> Result<(), Error> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_threads: Option<usize>) -> Result<(), Error> {
    Ok(())
}

fn need<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Error> {
    value
        .as_deref()
        .ok_or_else(|| Error::validation(format!("--{flag} is required for this command")))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializable") + "\n")
        .map_err(|e| Error::io(path, e))
}

fn run_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_file(need(&common.config, "config")?)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let common = &cli.common;
    match &cli.command {
        Command::Simulate => {
            let path = need(&common.config, "config")?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut scenario: SimScenario =
                serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
            if let Some(seed) = common.seed {
                scenario.seed = seed;
            }
            let out = need(&common.out, "out")?;
            let (data, truth) = gen_dataset_with(&scenario, Default::default())?;
            let manifest = write_simulation(out, &data, &truth)?;
            println!("{}", manifest.display());
        }
        Command::Fit { pool } => {
            let mut cfg = run_config(common)?;
            cfg.pool |= *pool;
            let out = cfg
                .out_dir
                .clone()
                .ok_or_else(|| Error::validation("an output directory is required (--out or out_dir)"))?;
            let data = cfg.load_data()?;
            let result = fit(&data, &cfg)?;
            result.write(&out, Some(&cfg), cfg.csv_export)?;
            let scores = result.model_selection(&data)?;
            write_json(&out.join("scores.json"), &scores)?;
            println!("{}", out.display());
        }
        Command::Summarize {
            store,
            threshold,
            estimator,
            alpha,
            ks_threshold,
            pool,
        } => {
            let mut result = FitResult::read(store)?;
            result.pool |= *pool;
            let policy = match ks_threshold {
                Some(v) => ThresholdPolicy::Fixed(*v),
                None => ThresholdPolicy::Asymptotic(*alpha),
            };
            let out = common.out.clone().unwrap_or_else(|| store.join("summary"));
            let report = summarize(&result, &out, *threshold, *estimator, policy)?;
            print_json(&report);
        }
        Command::Regress {
            store,
            behavior,
            measure,
            task,
            sweeps,
            burn_in,
            level,
        } => {
            let result = FitResult::read(store)?;
            let table = read_behavior_csv(behavior)?;
            let scores = table.measure_for(measure, &result.subject_ids)?;
            let settings = RegressSettings {
                sweeps: *sweeps,
                burn_in: *burn_in,
                seed: common.seed.unwrap_or(result.seed),
                level: *level,
                ..RegressSettings::default()
            };
            let report = regress(&result, &scores, measure, task, &settings)?;
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                write_json(&out.join(format!("regress_{task}_{measure}.json")), &report)?;
            }
            print_json(&report);
        }
        Command::SelectK { ks } => {
            let cfg = run_config(common)?;
            let data = cfg.load_data()?;
            let rows = select_k(&data, &cfg, ks)?;
            if let Some(out) = &cfg.out_dir {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                write_k_scores(&out.join("k_scores.csv"), &rows)?;
            }
            print_json(&rows);
        }
        Command::Compare { map_a, map_b } => {
            let m = compare_maps(map_a, map_b)?;
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                write_json(&out.join("comparison.json"), &m)?;
            }
            println!("mean Jaccard similarity: {}", format_similarity(&m));
            print_json(&m);
        }
    }
    Ok(())
}
