//! Convergence diagnostics driver: staleness and trigger-bias measurement on
//! protocol runs, plus the contraction check on a quadratic objective.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use ssafl_core::sim::{
    estimate_trigger_bias, measure_staleness, pl_diagnostic, run_method, Method,
};

use crate::{effective_seeds, load_config, out_dir, write_atomic};

const QUAD_DIM: usize = 8;
const QUAD_MU: f64 = 0.5;
const QUAD_L: f64 = 4.0;

pub fn diagnose(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = out_dir(&cfg, out)?;
    let seed = *effective_seeds(&cfg, seed)
        .first()
        .expect("validated config has seeds");

    // Staleness and trigger bias on the similarity-aware run.
    let ssafl = run_method::<f64>(Method::Ssafl, &cfg, seed)?;
    let staleness = measure_staleness(&ssafl.trace);
    let zeta = estimate_trigger_bias(&ssafl.trace).unwrap_or(0.0);

    // A wider-window variant so multi-update windows (and the protection
    // path) are exercised even if the configured micro-batch is 1.
    let mut wide = cfg.clone();
    wide.aggregation.micro_batch = wide.aggregation.micro_batch.max(6);
    wide.aggregation.window_secs = wide.aggregation.window_secs.max(8.0);
    let ssafl_wide = run_method::<f64>(Method::Ssafl, &wide, seed)?;
    let zeta_wide = estimate_trigger_bias(&ssafl_wide.trace).unwrap_or(0.0);

    // The synchronous baseline must show zero staleness.
    let fedavg = run_method::<f64>(Method::FedAvg, &cfg, seed)?;
    let fedavg_staleness = measure_staleness(&fedavg.trace);

    // Quadratic contraction: noiseless single-client descent plus a noise
    // ladder. Step size respects the 1/(2L) regime regardless of the
    // configured training rate.
    let mut quad_cfg = cfg.clone();
    quad_cfg.data.n_nodes = 1;
    quad_cfg.data.noise_sd = 0.0;
    // Clamp into a range that descends promptly but stays within the
    // 1/(2L) regime.
    quad_cfg.training.eta = cfg.training.eta.clamp(0.05, 1.0 / (2.0 * QUAD_L));
    quad_cfg.stop.t_max = cfg.stop.t_max.max(120);
    let noiseless = pl_diagnostic(QUAD_DIM, QUAD_MU, QUAD_L, &quad_cfg, seed)?;

    let mut ladder = Vec::new();
    for noise in [0.02, 0.05, 0.1] {
        let mut c = quad_cfg.clone();
        c.data.noise_sd = noise;
        let report = pl_diagnostic(QUAD_DIM, QUAD_MU, QUAD_L, &c, seed)?;
        ladder.push(json!({ "noise_sd": noise, "report": report }));
    }

    let report = json!({
        "seed": seed,
        "ssafl": {
            "summary": ssafl.summary,
            "staleness": staleness,
            "zeta_hat": zeta,
            "zeta_hat_wide_window": zeta_wide,
        },
        "fedavg": {
            "tau_max": fedavg_staleness.tau_max,
            "staleness": fedavg_staleness,
        },
        "quadratic": {
            "dim": QUAD_DIM,
            "mu": QUAD_MU,
            "l": QUAD_L,
            "noiseless": noiseless,
            "noise_ladder": ladder,
        },
    });

    println!("staleness: tau_max={} over {} accepted uploads", staleness.tau_max,
        staleness.histogram.values().sum::<u64>());
    println!("trigger bias: zeta_hat={zeta:.6} (wide-window {zeta_wide:.6})");
    println!("fedavg tau_max: {}", fedavg_staleness.tau_max);
    println!(
        "quadratic noiseless: contraction={:.4} plateau={:.3e} ({} events)",
        noiseless.contraction_factor, noiseless.plateau, noiseless.events
    );

    let path = dir.join(format!("diagnostics_{seed}.json"));
    let mut bytes = serde_json::to_vec_pretty(&report).context("serializing diagnostics")?;
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}
