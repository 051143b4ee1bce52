use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::bench::TimingReport;
use super::delta_rank::SIGN_NOTE;
use super::harness::{BiasVarianceReport, DeltaRankReport, Evaluation};
use crate::error::Result;

pub const TOOL_NAME: &str = "climb";

/// Provenance block embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub config: Value,
}

impl RunManifest {
    pub fn new(command: &str, master_seed: u64, config: impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            master_seed,
            config: serde_json::to_value(config)?,
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("manifest serializes")
    }

    /// `#`-prefixed header lines for CSV files.
    fn csv_preamble(&self, notes: &[&str]) -> String {
        let mut s = String::new();
        for n in notes {
            s.push_str(&format!("# {n}\n"));
        }
        s.push_str(&format!("# manifest: {}\n", serde_json::to_string(self).expect("manifest serializes")));
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_csv(preamble: String, header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut out = preamble.into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
    }
    Ok(out)
}

/// Missing cells (no user reached `k`) have empty statistics and `n = 0`.
pub fn delta_rank_csv(report: &DeltaRankReport, manifest: &RunManifest) -> Result<Vec<u8>> {
    let rows = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.method.clone(),
                c.sparsity_rank.to_string(),
                c.k.to_string(),
                opt(c.mean),
                opt(c.median),
                opt(c.std),
                c.n.to_string(),
            ]
        })
        .collect();
    write_csv(
        manifest.csv_preamble(&[SIGN_NOTE, "empty statistics mark cells no user reached (k > d')"]),
        &["method", "sparsity_rank", "k", "mean", "median", "std", "n"],
        rows,
    )
}

pub fn bias_variance_csv(report: &BiasVarianceReport, manifest: &RunManifest) -> Result<Vec<u8>> {
    let rows = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.method.name().to_owned(),
                c.sparsity_rank.to_string(),
                opt(c.bias_sq_mean),
                opt(c.variance_mean),
                opt(c.mse_mean),
                c.n.to_string(),
            ]
        })
        .collect();
    let note = format!("P = {}, rho = {}", report.bootstraps, report.drop_prob);
    write_csv(
        manifest.csv_preamble(&[&note]),
        &["method", "sparsity_rank", "bias_sq_mean", "variance_mean", "mse_mean", "n"],
        rows,
    )
}

pub fn timing_csv(report: &TimingReport, manifest: &RunManifest) -> Result<Vec<u8>> {
    let rows = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.method.name().to_owned(),
                r.phase.name().to_owned(),
                r.median_ms.to_string(),
                r.mean_ms.to_string(),
                r.n.to_string(),
            ]
        })
        .collect();
    write_csv(
        manifest.csv_preamble(&["wall-clock milliseconds per explanation"]),
        &["method", "phase", "median_ms", "mean_ms", "n"],
        rows,
    )
}

/// JSON bundle: manifest, segmentation, counts, failures and every cell.
pub fn report_json(eval: &Evaluation, manifest: &RunManifest) -> Value {
    json!({
        "manifest": manifest.to_value(),
        "delta_rank_sign": SIGN_NOTE,
        "counts": {
            "users": eval.segmentation.assignments().len(),
            "delta_rank_users": eval.delta_rank.users,
            "bias_variance_users": eval.bias_variance.users.len() / eval.config.methods.len().max(1),
            "bias_variance_skipped": eval.bias_variance.skipped.len(),
            "failures": eval.failures.len(),
        },
        "segmentation": eval.segmentation.buckets(),
        "failures": eval.failures,
        "delta_rank": eval.delta_rank.cells,
        "bias_variance": {
            "P": eval.bias_variance.bootstraps,
            "rho": eval.bias_variance.drop_prob,
            "cells": eval.bias_variance.cells,
            "skipped": eval.bias_variance.skipped,
        },
        "timing": eval.timing.rows,
    })
}

/// Writes `delta_rank.csv`, `bias_variance.csv`, `timing.csv`,
/// `bias_variance_users.csv` and `report.json` into `dir`.
pub fn write_reports(eval: &Evaluation, manifest: &RunManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let users_rows = eval
        .bias_variance
        .users
        .iter()
        .map(|u| {
            vec![
                u.user_id.clone(),
                u.method.name().to_owned(),
                u.sparsity_rank.to_string(),
                u.bias_sq.to_string(),
                u.variance.to_string(),
                u.mse.to_string(),
            ]
        })
        .collect();
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("delta_rank.csv", delta_rank_csv(&eval.delta_rank, manifest)?),
        ("bias_variance.csv", bias_variance_csv(&eval.bias_variance, manifest)?),
        ("timing.csv", timing_csv(&eval.timing, manifest)?),
        (
            "bias_variance_users.csv",
            write_csv(
                manifest.csv_preamble(&["per-user plug-in decomposition"]),
                &["user_id", "method", "sparsity_rank", "bias_sq", "variance", "mse"],
                users_rows,
            )?,
        ),
        ("report.json", {
            let mut v = serde_json::to_vec_pretty(&report_json(eval, manifest))?;
            v.push(b'\n');
            v
        }),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(&bytes)?;
        written.push(path);
    }
    Ok(written)
}
