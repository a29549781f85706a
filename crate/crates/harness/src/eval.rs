//! Transfer evaluation: prototype-bank construction with per-objective
//! routing, zero-shot classification, few-shot probing, and per-seed reports.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use duet_core::encoders::{IMAGE_LABEL_PROJECTION, SHARED_PROJECTION};
use duet_core::mat::Mat;
use duet_core::metrics::per_class_recall;
use duet_core::objectives::ObjectiveKind;
use duet_core::probe::{train_linear_probe, FeatureTap, ProbeSpec};
use duet_core::prototypes::{bank_from_prompts, bank_from_weights, PrototypeBank, Space};
use duet_core::rng::mix_seed;
use duet_core::transfer::{sample_few_shot, zero_shot_predict};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datamodel::EvalReport;
use crate::tasks::{Split, TaskManifest};

/// Images per forward chunk when encoding evaluation sets.
const ENCODE_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ZeroShot,
    Probe(usize),
}

impl Protocol {
    pub fn label(&self) -> String {
        match self {
            Protocol::ZeroShot => "zero_shot".to_string(),
            Protocol::Probe(k) => format!("probe{k}"),
        }
    }
}

/// How task classes are resolved to prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypePolicy {
    /// Objective-appropriate routing: learned weights for base classes when
    /// the objective owns W, compositions for declared composed classes,
    /// text prompts otherwise.
    Auto,
    /// Text prompts for every class (the disease-name path).
    PromptsOnly,
}

impl Checkpoint {
    /// Projection space of the learned class weights.
    pub fn weight_space(&self) -> Space {
        if self.meta.encoder.dual_projections {
            Space::ImageLabel
        } else {
            Space::Shared
        }
    }

    /// Projection space text embeddings (and thus prompt prototypes) live in.
    pub fn text_space(&self) -> Space {
        if self.meta.encoder.dual_projections {
            Space::ImageText
        } else {
            Space::Shared
        }
    }

    pub fn has_weights(&self) -> bool {
        self.objective.w.is_some()
    }
}

fn projection_name(space: Space) -> &'static str {
    match space {
        Space::Shared => SHARED_PROJECTION,
        Space::ImageLabel => IMAGE_LABEL_PROJECTION,
        Space::ImageText => duet_core::encoders::IMAGE_TEXT_PROJECTION,
    }
}

/// Encode images through a projection head (or `"features"`) in chunks.
pub fn encode_images_chunked(ckpt: &Checkpoint, images: &Mat, projection: &str) -> Result<Mat> {
    let mut out: Option<Mat> = None;
    let mut row = 0usize;
    while row < images.rows {
        let n = ENCODE_CHUNK.min(images.rows - row);
        let mut chunk = Mat::zeros(n, images.cols);
        for i in 0..n {
            chunk.row_mut(i).copy_from_slice(images.row(row + i));
        }
        let enc = ckpt.vision.encode_images(&chunk, projection)?;
        let dst = out.get_or_insert_with(|| Mat::zeros(images.rows, enc.cols));
        for i in 0..n {
            dst.row_mut(row + i).copy_from_slice(enc.row(i));
        }
        row += n;
    }
    Ok(out.unwrap())
}

/// Bank of learned-weight prototypes for a subset of catalog classes.
fn weight_bank(ckpt: &Checkpoint, names: &[String]) -> Result<PrototypeBank> {
    let w = &ckpt
        .objective
        .w
        .as_ref()
        .context("objective has no learned class weights")?
        .value;
    let mut rows = Mat::zeros(names.len(), w.cols);
    for (i, name) in names.iter().enumerate() {
        let idx = ckpt
            .meta
            .catalog
            .index_of(name)
            .with_context(|| format!("class '{name}' absent from the pre-training catalog"))?;
        rows.row_mut(i).copy_from_slice(w.row(idx));
    }
    Ok(bank_from_weights(&rows, names, ckpt.weight_space())?)
}

fn prompt_bank(ckpt: &Checkpoint, task: &TaskManifest, names: &[String]) -> Result<PrototypeBank> {
    let sets: Vec<(String, Vec<String>)> = names
        .iter()
        .map(|n| {
            let prompts = task
                .prompt_sets
                .get(n)
                .cloned()
                .with_context(|| format!("task declares no prompts for class '{n}'"))?;
            Ok((n.clone(), prompts))
        })
        .collect::<Result<_>>()?;
    Ok(bank_from_prompts(&ckpt.text, &sets, ckpt.text_space())?)
}

/// Resolve every task class to a prototype under the given policy.
pub fn build_bank(
    ckpt: &Checkpoint,
    task: &TaskManifest,
    policy: PrototypePolicy,
) -> Result<PrototypeBank> {
    // catalog consistency: a class the task flags as base must be known to
    // the checkpoint
    for (i, name) in task.classes.iter().enumerate() {
        if task.base[i] && ckpt.meta.catalog.index_of(name).is_none() {
            bail!("task class '{name}' is flagged base but absent from the checkpoint catalog");
        }
    }
    let mut bank = PrototypeBank::new();
    let text_capable = matches!(
        ckpt.meta.objective,
        ObjectiveKind::Clip | ObjectiveKind::Unicl | ObjectiveKind::Dlilp
    );
    for (i, name) in task.classes.iter().enumerate() {
        // base takes precedence over any novel-side declaration of the name
        let is_base = task.base[i] && ckpt.meta.catalog.index_of(name).is_some();
        let entry_bank = if policy == PrototypePolicy::PromptsOnly {
            if !text_capable {
                bail!(
                    "objective {} has no usable text encoder for prompt prototypes",
                    ckpt.meta.objective.as_str()
                );
            }
            prompt_bank(ckpt, task, std::slice::from_ref(name))?
        } else if is_base && ckpt.has_weights() {
            weight_bank(ckpt, std::slice::from_ref(name))?
        } else if let (Some(constituents), true) =
            (task.compositions.get(name), ckpt.has_weights())
        {
            let mut b = weight_bank(ckpt, constituents)?;
            b.compose(name, constituents)?;
            b.restrict(std::slice::from_ref(name))?
        } else if text_capable {
            prompt_bank(ckpt, task, std::slice::from_ref(name))?
        } else {
            bail!(
                "class '{name}' is unresolvable: objective {} supports only known categories",
                ckpt.meta.objective.as_str()
            );
        };
        bank.extend(&entry_bank)?;
    }
    Ok(bank)
}

/// Zero-shot scores and predictions for a task's test split.
pub fn zero_shot_task(
    ckpt: &Checkpoint,
    task: &TaskManifest,
    policy: PrototypePolicy,
) -> Result<(Mat, Vec<usize>, Vec<usize>)> {
    let bank = build_bank(ckpt, task, policy)?;
    let (images, truths) = task.load_split(Split::Test)?;
    let spaces: std::collections::BTreeSet<Space> =
        bank.entries().iter().map(|e| e.space).collect();
    let mut projections = BTreeMap::new();
    for space in spaces {
        let proj = encode_images_chunked(ckpt, &images, projection_name(space))?;
        projections.insert(space, proj);
    }
    let (scores, preds) = zero_shot_predict(&projections, &bank, &task.classes)?;
    Ok((scores, preds, truths))
}

/// Weight-retrieval zero-shot restricted to known categories; errors for
/// novel classes instead of falling back to prompts.
pub fn zero_shot_unimodal(ckpt: &Checkpoint, task: &TaskManifest) -> Result<(Mat, Vec<usize>, Vec<usize>)> {
    for (i, name) in task.classes.iter().enumerate() {
        if !task.base[i] && !task.compositions.contains_key(name) {
            bail!("class '{name}' is novel: only zero-shot on known categories is possible");
        }
    }
    zero_shot_task(ckpt, task, PrototypePolicy::Auto)
}

/// Few-shot linear probe: support sampled from the task's train split.
pub fn probe_task(
    ckpt: &Checkpoint,
    task: &TaskManifest,
    k: usize,
    tap: FeatureTap,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (train_images, train_labels) = task.load_split(Split::Train)?;
    let (test_images, test_labels) = task.load_split(Split::Test)?;
    let projection = match tap {
        FeatureTap::PreProjection => "features",
        FeatureTap::Projected => projection_name(ckpt.weight_space()),
    };
    let train_feats = encode_images_chunked(ckpt, &train_images, projection)?;
    let test_feats = encode_images_chunked(ckpt, &test_images, projection)?;
    let classes: Vec<usize> = (0..task.classes.len()).collect();
    let support = sample_few_shot(&train_labels, k, &classes, seed)?;
    let mut x = Mat::zeros(support.len(), train_feats.cols);
    let mut y = Vec::with_capacity(support.len());
    for (r, &i) in support.iter().enumerate() {
        x.row_mut(r).copy_from_slice(train_feats.row(i));
        y.push(train_labels[i]);
    }
    let mut spec = ProbeSpec::new(k, mix_seed(seed, 0x7072_6f62));
    spec.feature_tap = tap;
    let clf = train_linear_probe(&x, &y, task.classes.len(), &spec)?;
    Ok((clf.predict(&test_feats), test_labels))
}

fn report_from_predictions(
    task: &TaskManifest,
    protocol: &Protocol,
    seed: u64,
    preds: &[usize],
    truths: &[usize],
) -> Result<EvalReport> {
    let recalls = per_class_recall(preds, truths, task.classes.len())?;
    // mean recall over a class subset, skipping classes with zero truths
    let mean_over = |subset: &[usize]| -> Option<f64> {
        let vals: Vec<f64> = subset.iter().filter_map(|&i| recalls[i]).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let all: Vec<usize> = (0..task.classes.len()).collect();
    let aca_base = mean_over(&task.base_indices())
        .with_context(|| format!("task '{}': empty evaluation subset", task.name))?;
    let aca_novel = mean_over(&task.novel_indices());
    let aca_all = mean_over(&all).context("empty evaluation subset")?;
    Ok(EvalReport {
        task_name: task.name.clone(),
        seed,
        protocol: protocol.label(),
        per_class_recall: recalls,
        aca_base,
        aca_novel,
        aca_all,
    })
}

/// Mean and standard deviation of per-seed ACA values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub task_name: String,
    pub protocol: String,
    pub n_seeds: usize,
    pub mean_base: f64,
    pub std_base: f64,
    pub mean_novel: Option<f64>,
    pub std_novel: Option<f64>,
    pub mean_all: f64,
    pub std_all: f64,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        bail!("no reports to aggregate");
    }
    let stats = |xs: &[f64]| -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let base: Vec<f64> = reports.iter().map(|r| r.aca_base).collect();
    let all: Vec<f64> = reports.iter().map(|r| r.aca_all).collect();
    let novel: Vec<f64> = reports.iter().filter_map(|r| r.aca_novel).collect();
    let (mean_base, std_base) = stats(&base);
    let (mean_all, std_all) = stats(&all);
    let (mean_novel, std_novel) = if novel.len() == reports.len() {
        let (m, s) = stats(&novel);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(Aggregate {
        task_name: reports[0].task_name.clone(),
        protocol: reports[0].protocol.clone(),
        n_seeds: reports.len(),
        mean_base,
        std_base,
        mean_novel,
        std_novel,
        mean_all,
        std_all,
    })
}

/// One EvalReport per seed plus the aggregate. Zero-shot predictions are
/// seed-invariant, so their per-seed reports are identical by construction.
pub fn evaluate_task(
    ckpt: &Checkpoint,
    task: &TaskManifest,
    protocol: Protocol,
    seeds: &[u64],
) -> Result<(Vec<EvalReport>, Aggregate)> {
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    let mut reports = Vec::with_capacity(seeds.len());
    match protocol {
        Protocol::ZeroShot => {
            let (_, preds, truths) = zero_shot_task(ckpt, task, PrototypePolicy::Auto)?;
            for &seed in seeds {
                reports.push(report_from_predictions(task, &protocol, seed, &preds, &truths)?);
            }
        }
        Protocol::Probe(k) => {
            for &seed in seeds {
                let (preds, truths) =
                    probe_task(ckpt, task, k, FeatureTap::PreProjection, seed)?;
                reports.push(report_from_predictions(task, &protocol, seed, &preds, &truths)?);
            }
        }
    }
    let agg = aggregate(&reports)?;
    Ok((reports, agg))
}
