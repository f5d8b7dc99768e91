//! `toksoft`: train a learner, run the identity checks, sweep seeds and
//! betas, and summarize metric CSVs.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when
//! `verify` finds a violated identity.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use toksoft_core::metrics::{aggregate, format_summary, read_metrics, write_metrics, MetricsLog};
use toksoft_core::trainers::{make_env, TrainRun};
use toksoft_core::verify::{run_verify, VerifyConfig};
use toksoft_core::{Algo, Error, RunConfig};

const OUT_DIR_VAR: &str = "TOKSOFT_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "toksoft",
    version,
    about = "Token-level soft Q learning for language agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its metrics CSV.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Metrics CSV path.
        #[arg(long, default_value = "run.csv")]
        out: PathBuf,
    },
    /// Check the token/action consistency identities on random instances.
    Verify {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        fixed_point_instances: usize,
        /// Discount inside actions for the within-action check; values
        /// below 1 reproduce the discounted ablation and should fail.
        #[arg(long, default_value_t = 1.0)]
        within_discount: f64,
        /// Directory for dumps of failing instances.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train every (algo, beta, seed) combination in parallel.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Number of seeds, starting from --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_value = "etpo,ppo_kl")]
        algos: Vec<Algo>,
        /// Betas to sweep; defaults to the single configured beta.
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        /// Output directory.
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Summarize metric CSVs: mean ± std of the final best reward per group.
    Report {
        /// CSV files, or directories whose CSV files are all read.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Flags shared by `train` and `sweep`. They override values from
/// `--config`, which override the defaults.
#[derive(Args, Clone)]
struct RunArgs {
    /// Flat key = value file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    polyak: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    buffer: Option<usize>,
    /// Any other config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let overrides = [
            ("env", self.env.clone()),
            ("algo", self.algo.clone()),
            ("mode", self.mode.clone()),
            ("beta", self.beta.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("polyak", self.polyak.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("steps", self.steps.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("buffer", self.buffer.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies the output-directory override to a file path.
fn output_file(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_VAR) {
        Some(dir) => PathBuf::from(dir).join(path.file_name().unwrap_or(path.as_os_str())),
        None => path.to_path_buf(),
    }
}

fn output_dir(path: &Path) -> PathBuf {
    std::env::var_os(OUT_DIR_VAR).map_or_else(|| path.to_path_buf(), PathBuf::from)
}

fn train_one(cfg: &RunConfig, checkpoint_dir: Option<&Path>) -> Result<MetricsLog, Error> {
    let mut env = make_env(cfg)?;
    let mut run = TrainRun::new(cfg, env.as_mut())?;
    run.run(checkpoint_dir)?;
    Ok(run.into_metrics())
}

fn train(run: &RunArgs, out: &Path) -> Result<(), Error> {
    let cfg = run.to_config()?;
    let out = output_file(out);
    let dir = out
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let log = train_one(&cfg, Some(dir))?;
    write_metrics(&log, &out)?;
    let last = log.rows().last();
    println!(
        "{} {} steps, final best_reward={:.4} -> {}",
        cfg.algo,
        log.len(),
        last.map_or(f64::NAN, |r| r.best_reward),
        out.display()
    );
    Ok(())
}

fn verify(cfg: &VerifyConfig, out: &Path) -> Result<bool, Error> {
    let report = run_verify(cfg)?;
    println!("{report}");
    if !report.passed() {
        let dir = output_dir(out);
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for check in &report.checks {
            for (i, f) in check.failures.iter().enumerate() {
                let path = dir.join(format!("failure_{}_{i}_beta{}.txt", check.name, f.beta));
                f.spec.save(&path)?;
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(report.passed())
}

fn sweep_file_name(algo: Algo, beta: f64, seed: u64) -> String {
    format!("{algo}_b{beta}_s{seed}.csv")
}

fn sweep(
    run: &RunArgs,
    seeds: u64,
    algos: &[Algo],
    betas: &[f64],
    out: &Path,
) -> Result<(), Error> {
    let base = run.to_config()?;
    let betas = if betas.is_empty() {
        vec![base.beta]
    } else {
        betas.to_vec()
    };
    let dir = output_dir(out);
    let mut jobs = Vec::new();
    for &algo in algos {
        for &beta in &betas {
            for seed in base.seed..base.seed + seeds {
                let cfg = RunConfig {
                    algo,
                    beta,
                    seed,
                    ..base.clone()
                };
                cfg.validate()?;
                jobs.push((dir.join(sweep_file_name(algo, beta, seed)), cfg));
            }
        }
    }
    let results: Vec<Result<(), Error>> = jobs
        .par_iter()
        .map(|(path, cfg)| write_metrics(&train_one(cfg, None)?, path))
        .collect();
    results.into_iter().collect::<Result<(), Error>>()?;
    let summary = summarize(&jobs.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>())?;
    let path = dir.join("summary.txt");
    std::fs::write(&path, &summary).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    print!("{summary}");
    println!("{} runs -> {}", jobs.len(), dir.display());
    Ok(())
}

/// Group name of a metrics file: its stem without a trailing `_s<seed>`.
fn group_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    match stem.rsplit_once("_s") {
        Some((head, seed)) if !seed.is_empty() && seed.bytes().all(|b| b.is_ascii_digit()) => {
            head.to_string()
        }
        _ => stem,
    }
}

fn summarize(paths: &[PathBuf]) -> Result<String, Error> {
    let logs: Vec<(String, MetricsLog)> = paths
        .iter()
        .map(|p| Ok((group_name(p), read_metrics(p)?)))
        .collect::<Result<_, Error>>()?;
    Ok(format_summary(&aggregate(
        logs.iter().map(|(name, log)| (name.as_str(), log)),
    )))
}

fn report(inputs: &[PathBuf]) -> Result<(), Error> {
    let mut paths = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries = std::fs::read_dir(input).map_err(|e| Error::Io {
                path: input.clone(),
                source: e,
            })?;
            let mut csvs: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            csvs.sort();
            paths.extend(csvs);
        } else {
            paths.push(input.clone());
        }
    }
    if paths.is_empty() {
        return Err(Error::Config("no CSV files to report".into()));
    }
    print!("{}", summarize(&paths)?);
    Ok(())
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
    let result = match &cli.command {
        Command::Train { run, out } => train(run, out),
        Command::Verify {
            instances,
            seed,
            fixed_point_instances,
            within_discount,
            out,
        } => {
            let cfg = VerifyConfig {
                instances: *instances,
                seed: *seed,
                fixed_point_instances: *fixed_point_instances,
                within_discount: *within_discount,
            };
            match verify(&cfg, out) {
                Ok(true) => Ok(()),
                Ok(false) => return ExitCode::from(2),
                Err(e) => Err(e),
            }
        }
        Command::Sweep {
            run,
            seeds,
            algos,
            betas,
            out,
        } => sweep(run, *seeds, algos, betas, out),
        Command::Report { inputs } => report(inputs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_names_drop_the_seed() {
        assert_eq!(group_name(Path::new("d/etpo_b0.1_s3.csv")), "etpo_b0.1");
        assert_eq!(group_name(Path::new("run.csv")), "run");
        assert_eq!(group_name(Path::new("x_sa.csv")), "x_sa");
    }

    #[test]
    fn sweep_names() {
        assert_eq!(sweep_file_name(Algo::PpoKl, 1.0, 4), "ppo_kl_b1_s4.csv");
    }
}
