//! Ablation studies: feature tap, single vs dual projections, λ sweep, and
//! pre-training data scaling.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use duet_core::objectives::ObjectiveKind;
use duet_core::probe::FeatureTap;

use crate::checkpoint::Checkpoint;
use crate::eval::{evaluate_task, probe_task, Protocol};
use crate::tasks::TaskManifest;
use crate::train::{pretrain, TrainConfig};

fn write_csv(out_dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

/// Probe the same checkpoints from pre-projection features and projected
/// embeddings; one row per (objective, tap).
pub fn ablate_feature_tap(
    checkpoints: &[(String, Checkpoint)],
    task: &TaskManifest,
    k: usize,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<PathBuf> {
    let mut out = String::from("objective,tap,k,mean_aca,std_aca\n");
    for (label, ckpt) in checkpoints {
        for (tap, tap_name) in [
            (FeatureTap::PreProjection, "pre_projection"),
            (FeatureTap::Projected, "projected"),
        ] {
            let mut acas = Vec::new();
            for &seed in seeds {
                let (preds, truths) = probe_task(ckpt, task, k, tap, seed)?;
                let subset: Vec<usize> = (0..task.classes.len()).collect();
                acas.push(duet_core::metrics::aca(&preds, &truths, &subset)?);
            }
            let n = acas.len() as f64;
            let mean = acas.iter().sum::<f64>() / n;
            let std = (acas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            let _ = writeln!(out, "{label},{tap_name},{k},{mean:.6},{std:.6}");
        }
    }
    write_csv(out_dir, "ablation_feature_tap.csv", &out)
}

fn zero_shot_row(ckpt: &Checkpoint, task: &TaskManifest, seeds: &[u64]) -> Result<(f64, Option<f64>, f64)> {
    let (_, agg) = evaluate_task(ckpt, task, Protocol::ZeroShot, seeds)?;
    Ok((agg.mean_base, agg.mean_novel, agg.mean_all))
}

/// Train the disentangled objective with dual heads and with a single shared
/// head; compare zero-shot transfer.
pub fn ablate_projections(
    base_config: &TrainConfig,
    manifests: &[PathBuf],
    task: &TaskManifest,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<PathBuf> {
    if base_config.objective != ObjectiveKind::Dlilp {
        bail!("projections ablation applies to the disentangled objective");
    }
    let mut out = String::from("projections,aca_base,aca_novel,aca_all\n");
    for (single, label) in [(false, "dual"), (true, "single")] {
        let mut config = base_config.clone();
        config.single_projection = single;
        let run_dir = out_dir.join(format!("projections_{label}"));
        let record = pretrain(&config, manifests, &run_dir)?;
        let ckpt = Checkpoint::load(&record.checkpoint_path)?;
        let (base, novel, all) = zero_shot_row(&ckpt, task, seeds)?;
        let novel = novel.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{label},{base:.6},{novel},{all:.6}");
    }
    write_csv(out_dir, "ablation_projections.csv", &out)
}

/// Train at each λ and evaluate zero-shot transfer.
pub fn ablate_lambda(
    base_config: &TrainConfig,
    manifests: &[PathBuf],
    task: &TaskManifest,
    lambdas: &[f64],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<PathBuf> {
    if base_config.objective != ObjectiveKind::Dlilp {
        bail!("lambda sweep applies to the disentangled objective");
    }
    let mut out = String::from("lambda,aca_base,aca_novel,aca_all\n");
    for &lambda in lambdas {
        let mut config = base_config.clone();
        config.lambda = lambda;
        let run_dir = out_dir.join(format!("lambda_{lambda}"));
        let record = pretrain(&config, manifests, &run_dir)?;
        let ckpt = Checkpoint::load(&record.checkpoint_path)?;
        let (base, novel, all) = zero_shot_row(&ckpt, task, seeds)?;
        let novel = novel.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{lambda},{base:.6},{novel},{all:.6}");
    }
    write_csv(out_dir, "ablation_lambda.csv", &out)
}

/// Train on growing pre-training assemblies (one manifest list per point).
pub fn ablate_data_scaling(
    base_config: &TrainConfig,
    manifest_lists: &[Vec<PathBuf>],
    task: &TaskManifest,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<PathBuf> {
    if manifest_lists.is_empty() {
        bail!("data scaling ablation needs at least one manifest list");
    }
    let mut out = String::from("n_subdatasets,aca_base,aca_novel,aca_all\n");
    for (i, manifests) in manifest_lists.iter().enumerate() {
        let run_dir = out_dir.join(format!("scaling_{}", i + 1));
        let record = pretrain(base_config, manifests, &run_dir)?;
        let ckpt = Checkpoint::load(&record.checkpoint_path)?;
        let (base, novel, all) = zero_shot_row(&ckpt, task, seeds)?;
        let novel = novel.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{base:.6},{novel},{all:.6}", manifests.len());
    }
    write_csv(out_dir, "ablation_data_scaling.csv", &out)
}
