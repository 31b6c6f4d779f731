//! Experiment front-end: data/population generation, single- and
//! multi-method runs, comparison tables, and convergence diagnostics.

mod compare;
mod diagnose;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use ssafl_core::rng;
use ssafl_core::sim::{
    generate_dataset, generate_population, run_method, write_metrics_csv, ExperimentConfig,
    Method, RunOutput,
};

#[derive(Parser)]
#[command(
    name = "ssafl",
    about = "Strategy-similarity-aware asynchronous federated learning simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic datasets a run would train on.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use a single seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate the node population (profiles + strategy histories).
    GenPopulation {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every configured (method, seed) pair and write artifacts.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to one method.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Aggregate summary files into a per-method comparison table.
    Compare {
        /// Summary files, or directories to scan for *.summary.json.
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reference method for the upload-reduction column.
        #[arg(long, default_value = "SemiAsyn")]
        reference: Method,
    },
    /// Staleness, trigger-bias, and quadratic-contraction report.
    Diagnose {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the default configuration as TOML.
    PrintDefaultConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.downcast_ref::<ConfigError>().is_some();
            ExitCode::from(if config_error { 2 } else { 3 })
        }
    }
}

/// Marker for errors that should exit with status 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out, seed } => gen_data(config.as_deref(), out, seed),
        Cmd::GenPopulation { config, out, seed } => {
            gen_population(config.as_deref(), out, seed)
        }
        Cmd::Run {
            config,
            out,
            seed,
            method,
        } => run(config.as_deref(), out, seed, method),
        Cmd::Compare {
            paths,
            out,
            reference,
        } => compare::compare(&paths, out.as_deref(), reference),
        Cmd::Diagnose { config, out, seed } => diagnose::diagnose(config.as_deref(), out, seed),
        Cmd::PrintDefaultConfig => {
            print!("{}", default_config_toml()?);
            Ok(())
        }
    }
}

fn default_config_toml() -> Result<String> {
    toml::to_string_pretty(&ExperimentConfig::<f64>::default())
        .context("serializing default config")
}

/// Load, or default, then validate. Validation failures exit with status 2
/// and name the offending field.
fn load_config(path: Option<&Path>) -> Result<ExperimentConfig<f64>> {
    let cfg: ExperimentConfig<f64> = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text)
                .map_err(|e| anyhow!(ConfigError(format!("config parse: {e}"))))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.validate()
        .map_err(|e| anyhow!(ConfigError(format!("config error: {e}"))))?;
    Ok(cfg)
}

fn effective_seeds(cfg: &ExperimentConfig<f64>, seed: Option<u64>) -> Vec<u64> {
    match seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    }
}

fn out_dir(cfg: &ExperimentConfig<f64>, out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output dir {}", dir.display()))?;
    Ok(dir)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn gen_data(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = out_dir(&cfg, out)?;
    for s in effective_seeds(&cfg, seed) {
        let mut spec = cfg.data.clone();
        spec.seed = rng::mix(s, cfg.data.seed);
        let bundle = generate_dataset::<f64>(&spec)?;
        let file = serde_json::json!({
            "run_seed": s,
            "spec": spec,
            "partitions": bundle.partitions,
            "test": bundle.test,
            "truth": bundle.truth,
        });
        let path = dir.join(format!("dataset_{s}.json"));
        write_atomic(&path, serde_json::to_string(&file)?.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn gen_population(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = out_dir(&cfg, out)?;
    for s in effective_seeds(&cfg, seed) {
        let mut spec = cfg.data.clone();
        spec.seed = rng::mix(s, cfg.data.seed);
        let population = generate_population::<f64>(&spec, cfg.strategy_pool, spec.seed);
        let path = dir.join(format!("population_{s}.json"));
        write_atomic(&path, serde_json::to_string_pretty(&population)?.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Paths of the three artifacts a run produces.
fn artifact_paths(dir: &Path, method: Method, seed: u64) -> [PathBuf; 3] {
    [
        dir.join(format!("{method}_{seed}.trace.jsonl")),
        dir.join(format!("{method}_{seed}.metrics.csv")),
        dir.join(format!("{method}_{seed}.summary.json")),
    ]
}

fn write_run_artifacts(dir: &Path, out: &RunOutput<f64>) -> Result<()> {
    let [trace_path, metrics_path, summary_path] = artifact_paths(dir, out.method, out.seed);
    let mut trace_buf = Vec::new();
    out.trace.write_jsonl(&mut trace_buf)?;
    let mut metrics_buf = Vec::new();
    write_metrics_csv(&out.metrics, out.method, &mut metrics_buf)?;
    let mut summary_buf = serde_json::to_vec_pretty(&out.summary)?;
    summary_buf.push(b'\n');
    write_atomic(&trace_path, &trace_buf)?;
    write_atomic(&metrics_path, &metrics_buf)?;
    write_atomic(&summary_path, &summary_buf)?;
    Ok(())
}

fn run(
    config: Option<&Path>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    method: Option<Method>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = out_dir(&cfg, out)?;
    let methods: Vec<Method> = match method {
        Some(m) => vec![m],
        None => cfg.methods.clone(),
    };
    let seeds = effective_seeds(&cfg, seed);
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .context("building worker pool")?;
    let results: Vec<Result<(Method, u64)>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(m, s)| {
                let run_one = || -> Result<()> {
                    let out = run_method::<f64>(m, &cfg, s)?;
                    write_run_artifacts(&dir, &out)
                };
                match run_one() {
                    Ok(()) => Ok((m, s)),
                    Err(e) => {
                        // Drop whatever this run managed to write.
                        for p in artifact_paths(&dir, m, s) {
                            let _ = std::fs::remove_file(p);
                        }
                        Err(e.context(format!("run {m} seed {s}")))
                    }
                }
            })
            .collect()
    });

    let mut failed = false;
    for r in &results {
        match r {
            Ok((m, s)) => println!("completed {m} seed {s}"),
            Err(e) => {
                eprintln!("failed: {e:#}");
                failed = true;
            }
        }
    }
    if failed {
        return Err(anyhow!("one or more runs failed"));
    }
    println!(
        "wrote {} artifact files to {}",
        jobs.len() * 3,
        dir.display()
    );
    Ok(())
}

fn worker_threads() -> usize {
    std::env::var("SSAFL_SIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
