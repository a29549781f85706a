//! Benchmark orchestration and report files (CSV + JSON), plus embedding
//! export for external visualization.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use duet_core::mat::Mat;
use duet_core::probe::FeatureTap;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datamodel::{EvalReport, load_manifest};
use crate::eval::{aggregate, encode_images_chunked, evaluate_task, Aggregate, Protocol};
use crate::tasks::TaskManifest;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub objective: String,
    pub task: String,
    pub protocol: String,
    #[serde(default)]
    pub reports: Vec<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Render benchmark cells as CSV: one row per (objective, task, protocol,
/// seed) plus mean/std aggregate rows; failed cells carry an error column.
pub fn benchmark_csv(cells: &[BenchmarkCell]) -> String {
    let mut out = String::from("objective,task,protocol,seed,aca_base,aca_novel,aca_all,error\n");
    for cell in cells {
        if let Some(err) = &cell.error {
            let clean = err.replace([',', '\n'], ";");
            let _ = writeln!(
                out,
                "{},{},{},,,,,{clean}",
                cell.objective, cell.task, cell.protocol
            );
            continue;
        }
        for r in &cell.reports {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{},{:.6},",
                cell.objective,
                cell.task,
                cell.protocol,
                r.seed,
                r.aca_base,
                fmt_opt(r.aca_novel),
                r.aca_all
            );
        }
        if let Some(a) = &cell.aggregate {
            let _ = writeln!(
                out,
                "{},{},{},mean,{:.6},{},{:.6},",
                cell.objective, cell.task, cell.protocol, a.mean_base, fmt_opt(a.mean_novel), a.mean_all
            );
            let _ = writeln!(
                out,
                "{},{},{},std,{:.6},{},{:.6},",
                cell.objective, cell.task, cell.protocol, a.std_base, fmt_opt(a.std_novel), a.std_all
            );
        }
    }
    out
}

/// Per-objective summary: base and novel columns averaged over tasks, with
/// the Avg column the mean of the two (or base alone when nothing is novel).
pub fn summary_csv(cells: &[BenchmarkCell]) -> String {
    let mut out = String::from("objective,protocol,base,novel,avg\n");
    let mut keys: Vec<(String, String)> = cells
        .iter()
        .map(|c| (c.objective.clone(), c.protocol.clone()))
        .collect();
    keys.dedup();
    for (objective, protocol) in keys {
        let aggs: Vec<&Aggregate> = cells
            .iter()
            .filter(|c| c.objective == objective && c.protocol == protocol)
            .filter_map(|c| c.aggregate.as_ref())
            .collect();
        if aggs.is_empty() {
            continue;
        }
        let base = aggs.iter().map(|a| a.mean_base).sum::<f64>() / aggs.len() as f64;
        let novels: Vec<f64> = aggs.iter().filter_map(|a| a.mean_novel).collect();
        let novel = if novels.is_empty() {
            None
        } else {
            Some(novels.iter().sum::<f64>() / novels.len() as f64)
        };
        let avg = match novel {
            Some(n) => (base + n) / 2.0,
            None => base,
        };
        let _ = writeln!(out, "{objective},{protocol},{base:.6},{},{avg:.6}", fmt_opt(novel));
    }
    out
}

/// Evaluate every (checkpoint × task × protocol) cell; per-cell failures are
/// recorded in the output, not fatal. Writes benchmark.csv, benchmark.json,
/// and summary.csv into `out_dir`.
pub fn run_benchmark(
    checkpoints: &[(String, Checkpoint)],
    tasks: &[TaskManifest],
    protocols: &[Protocol],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<BenchmarkCell>> {
    let mut cells = Vec::new();
    for (label, ckpt) in checkpoints {
        for protocol in protocols {
            for task in tasks {
                let cell = match evaluate_task(ckpt, task, *protocol, seeds) {
                    Ok((reports, agg)) => BenchmarkCell {
                        objective: label.clone(),
                        task: task.name.clone(),
                        protocol: protocol.label(),
                        reports,
                        aggregate: Some(agg),
                        error: None,
                    },
                    Err(e) => BenchmarkCell {
                        objective: label.clone(),
                        task: task.name.clone(),
                        protocol: protocol.label(),
                        reports: Vec::new(),
                        aggregate: None,
                        error: Some(format!("{e:#}")),
                    },
                };
                cells.push(cell);
            }
        }
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("benchmark.csv"), benchmark_csv(&cells))?;
    fs::write(out_dir.join("summary.csv"), summary_csv(&cells))?;
    let mut json = serde_json::to_string_pretty(&cells)?;
    json.push('\n');
    fs::write(out_dir.join("benchmark.json"), json)?;
    Ok(cells)
}

/// Recompute the aggregate of a cell from its per-seed reports (used by the
/// determinism and aggregation checks).
pub fn recompute_aggregate(cell: &BenchmarkCell) -> Result<Aggregate> {
    aggregate(&cell.reports)
}

/// Export one row per sample plus one marked row per prototype:
/// `id,prototype,labels,embedding` with the embedding values `|`-joined in
/// full round-trip precision.
pub fn export_embeddings(
    ckpt: &Checkpoint,
    manifest: &PathBuf,
    tap: FeatureTap,
    out_path: &Path,
) -> Result<()> {
    let ds = load_manifest(manifest)?;
    let (h, w) = ds.image_size;
    let mut images = Mat::zeros(ds.samples.len(), h * w);
    for (i, s) in ds.samples.iter().enumerate() {
        images.row_mut(i).copy_from_slice(&s.image);
    }
    let projection = match tap {
        FeatureTap::PreProjection => "features".to_string(),
        FeatureTap::Projected => match ckpt.weight_space() {
            duet_core::prototypes::Space::ImageLabel => "I-L".to_string(),
            _ => "shared".to_string(),
        },
    };
    let feats = encode_images_chunked(ckpt, &images, &projection)?;

    let mut out = String::from("id,prototype,labels,embedding\n");
    let join = |xs: &[f64]| {
        xs.iter()
            .map(|x| format!("{x:?}"))
            .collect::<Vec<_>>()
            .join("|")
    };
    for (i, s) in ds.samples.iter().enumerate() {
        let labels: Vec<String> = ds
            .classes
            .iter()
            .zip(&s.image_labels)
            .filter(|(_, &y)| y > 0.0)
            .map(|(n, _)| n.clone())
            .collect();
        let _ = writeln!(out, "{i},0,{},{}", labels.join(";"), join(feats.row(i)));
    }
    // prototype rows: learned weights when the objective owns them, prompt
    // embeddings of the class names otherwise
    let prototypes: Vec<(String, Vec<f64>)> = if let Some(wp) = &ckpt.objective.w {
        let (normalized, _) = wp.value.normalize_rows();
        ckpt.meta
            .catalog
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), normalized.row(i).to_vec()))
            .collect()
    } else {
        let sentences: Vec<String> = ckpt
            .meta
            .catalog
            .names
            .iter()
            .map(|n| format!("a chest x-ray photo of {}", n.replace('_', " ")))
            .collect();
        let refs: Vec<&str> = sentences.iter().map(|s| s.as_str()).collect();
        let embeds = ckpt.text.encode_texts(&refs)?;
        ckpt.meta
            .catalog
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), embeds.row(i).to_vec()))
            .collect()
    };
    for (name, vec) in prototypes {
        let _ = writeln!(out, "{name},1,{name},{}", join(&vec));
    }
    if let Some(parent) = out_path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(out_path, out).with_context(|| format!("write {}", out_path.display()))?;
    Ok(())
}
