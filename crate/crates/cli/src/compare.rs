//! Per-method aggregation of run summaries.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

use ssafl_core::sim::{Method, RunSummary};

struct MethodRow {
    method: Method,
    runs: usize,
    mae: (f64, f64),
    rmse: (f64, f64),
    r2: (f64, f64),
    uploads_mean: f64,
}

/// Mean and population standard deviation.
fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn collect_summaries(paths: &[PathBuf]) -> Result<Vec<RunSummary>> {
    let mut files: Vec<PathBuf> = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.ends_with(".summary.json"))
                })
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    files
        .iter()
        .map(|f| {
            let text = std::fs::read_to_string(f)
                .with_context(|| format!("reading {}", f.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))
        })
        .collect()
}

pub fn compare(paths: &[PathBuf], out: Option<&Path>, reference: Method) -> Result<()> {
    let summaries = collect_summaries(paths)?;
    if summaries.len() < 2 {
        return Err(anyhow!(crate::ConfigError(format!(
            "compare needs at least two summaries, found {}",
            summaries.len()
        ))));
    }

    let mut rows: Vec<MethodRow> = Vec::new();
    for method in Method::ALL {
        let group: Vec<&RunSummary> = summaries
            .iter()
            .filter(|s| s.method == method.name())
            .collect();
        if group.is_empty() {
            continue;
        }
        let pick = |f: fn(&RunSummary) -> f64| -> Vec<f64> { group.iter().map(|s| f(s)).collect() };
        rows.push(MethodRow {
            method,
            runs: group.len(),
            mae: mean_sd(&pick(|s| s.final_mae)),
            rmse: mean_sd(&pick(|s| s.final_rmse)),
            r2: mean_sd(&pick(|s| s.final_r2)),
            uploads_mean: mean_sd(&pick(|s| s.total_uploads as f64)).0,
        });
    }

    let ref_uploads = rows
        .iter()
        .find(|r| r.method == reference)
        .map(|r| r.uploads_mean);

    let reduction = |r: &MethodRow| -> Option<f64> {
        ref_uploads.map(|base| (base - r.uploads_mean) / base * 100.0)
    };

    // CSV: sd columns use the population convention (divide by n).
    let mut csv = String::new();
    csv.push_str(&format!(
        "method,runs,mae_mean,mae_sd_pop,rmse_mean,rmse_sd_pop,r2_mean,r2_sd_pop,total_uploads_mean,upload_reduction_vs_{reference}_pct\n"
    ));
    for r in &rows {
        let red = reduction(r).map_or(String::new(), |v| format!("{v:.4}"));
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.1},{}\n",
            r.method,
            r.runs,
            r.mae.0,
            r.mae.1,
            r.rmse.0,
            r.rmse.1,
            r.r2.0,
            r.r2.1,
            r.uploads_mean,
            red
        ));
    }

    println!("comparison across {} summaries (mean ± population sd):", summaries.len());
    println!(
        "{:<16} {:>4} {:>18} {:>18} {:>18} {:>10} {:>14}",
        "method", "runs", "mae", "rmse", "r2", "uploads", "reduction_pct"
    );
    for r in &rows {
        let red = reduction(r).map_or("-".to_string(), |v| format!("{v:.1}"));
        println!(
            "{:<16} {:>4} {:>9.4} ±{:>6.4} {:>9.4} ±{:>6.4} {:>9.4} ±{:>6.4} {:>10.1} {:>14}",
            r.method.name(),
            r.runs,
            r.mae.0,
            r.mae.1,
            r.rmse.0,
            r.rmse.1,
            r.r2.0,
            r.r2.1,
            r.uploads_mean,
            red
        );
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("comparison.csv");
        std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    } else {
        print!("{csv}");
    }
    Ok(())
}
