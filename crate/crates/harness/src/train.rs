//! Pre-training loop: config profiles, stratified validation split, epoch-wise
//! early stopping, and best-checkpoint saving.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use duet_core::batching::epoch_batches;
use duet_core::encoders::{
    build_toy_encoders, EncoderConfig, TextEncoder, VisionEncoder, IMAGE_LABEL_PROJECTION,
    IMAGE_TEXT_PROJECTION, SHARED_PROJECTION,
};
use duet_core::mat::Mat;
use duet_core::objectives::{
    clip_loss, dlilp_loss, masked_unimodal_loss, unicl_loss, ObjectiveKind, ObjectiveState,
};
use duet_core::optim::{schedule_lr, AdamW};
use duet_core::rng::{mix_seed, SeedRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{fnv_hash, Checkpoint, CheckpointMeta};
use crate::datamodel::{assemble_batch, load_manifest, Batch, ClassCatalog, Dataset};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub rotation: bool,
    pub scale: bool,
    pub brightness_contrast: bool,
}

impl AugmentConfig {
    pub fn all_on() -> Self {
        AugmentConfig {
            hflip: true,
            rotation: true,
            scale: true,
            brightness_contrast: true,
        }
    }

    pub fn any(&self) -> bool {
        self.hflip || self.rotation || self.scale || self.brightness_contrast
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub warmup_epochs: usize,
    pub val_fraction: f64,
    pub early_stop_patience: usize,
    pub lambda: f64,
    pub image_size: (usize, usize),
    pub conv_channels: Vec<usize>,
    pub d_v: usize,
    pub d_u: usize,
    pub buckets: usize,
    pub d_p: usize,
    pub augment: AugmentConfig,
    /// Force one shared projection head even for the disentangled objective
    /// (ablation switch).
    pub single_projection: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Reference hyperparameters of the full-scale regime.
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveKind::Clip,
            batch_size: 128,
            lr: 1e-4,
            weight_decay: 1e-5,
            max_epochs: 30,
            warmup_epochs: 1,
            val_fraction: 0.1,
            early_stop_patience: 5,
            lambda: 0.1,
            image_size: (224, 224),
            conv_channels: vec![12, 24, 48],
            d_v: 128,
            d_u: 128,
            buckets: 4096,
            d_p: 512,
            augment: AugmentConfig::all_on(),
            single_projection: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: small batches, images, and widths; a higher
    /// learning rate compensates for the short schedule; augmentations off.
    pub fn desk(objective: ObjectiveKind, seed: u64) -> Self {
        TrainConfig {
            objective,
            batch_size: 64,
            lr: 2e-3,
            max_epochs: 10,
            image_size: (48, 48),
            conv_channels: vec![8, 16, 32],
            d_v: 64,
            d_u: 64,
            buckets: 512,
            d_p: 64,
            augment: AugmentConfig::default(),
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            image_size: self.image_size,
            conv_channels: self.conv_channels.clone(),
            d_v: self.d_v,
            d_u: self.d_u,
            buckets: self.buckets,
            d_p: self.d_p,
            dual_projections: self.objective == ObjectiveKind::Dlilp && !self.single_projection,
            seed: mix_seed(self.seed, 0x656e_63),
        }
    }

    pub fn hash(&self) -> String {
        fnv_hash(serde_json::to_string(self).unwrap().as_bytes())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Per-epoch mean per-sample losses.
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub checkpoint_path: PathBuf,
    pub wall_time_s: f64,
    pub stopped_early: bool,
    /// Mask-aware loss weighting engaged (some manifest carried non-trivial
    /// annotation masks).
    pub used_masked_loss: bool,
    /// Max |grad| observed per class-weight row over all updates (unimodal
    /// objectives only); masked-out rows must stay at exactly 0.
    pub w_row_grad_max: Vec<f64>,
    pub provenance: String,
}

/// Synthesize a caption for a label-only sample.
fn template_sentence(classes: &[String], y_img: &[f64]) -> String {
    let names: Vec<String> = classes
        .iter()
        .zip(y_img)
        .filter(|(_, &y)| y > 0.0)
        .map(|(n, _)| n.replace('_', " "))
        .collect();
    if names.is_empty() {
        "a chest x-ray photo of no finding".to_string()
    } else {
        format!("a chest x-ray photo of {}", names.join(" and "))
    }
}

/// Merge several manifests into one dataset; class headers must agree.
pub fn load_and_merge(manifests: &[PathBuf]) -> Result<Dataset> {
    if manifests.is_empty() {
        bail!("no manifests given");
    }
    let mut merged: Option<Dataset> = None;
    for path in manifests {
        let ds = load_manifest(path)?;
        match &mut merged {
            None => merged = Some(ds),
            Some(m) => {
                if m.classes != ds.classes {
                    bail!("manifest {} declares different classes", path.display());
                }
                if m.image_size != ds.image_size {
                    bail!("manifest {} has different image size", path.display());
                }
                m.coerced_uncertain += ds.coerced_uncertain;
                m.samples.extend(ds.samples);
            }
        }
    }
    Ok(merged.unwrap())
}

/// Deterministic stratified split: samples are grouped by first positive
/// image-level class and `val_fraction` of each stratum goes to validation.
fn stratified_split(ds: &Dataset, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let c = ds.classes.len();
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); c + 1];
    for (i, s) in ds.samples.iter().enumerate() {
        let k = s
            .image_labels
            .iter()
            .position(|&y| y > 0.0)
            .unwrap_or(c);
        strata[k].push(i);
    }
    let mut rng = SeedRng::new(mix_seed(seed, 0x7370_6c69_74));
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut stratum in strata {
        rng.shuffle(&mut stratum);
        let n_val = ((stratum.len() as f64) * val_fraction).round() as usize;
        val.extend_from_slice(&stratum[..n_val]);
        train.extend_from_slice(&stratum[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

// ---------------------------------------------------------------------------
// augmentation

fn bilinear(src: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    if y < 0.0 || x < 0.0 || y > (h - 1) as f64 || x > (w - 1) as f64 {
        return 0.15; // background intensity
    }
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let a = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
    let b = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
    a * (1.0 - fy) + b * fy
}

/// Apply the configured augmentations to every image row in place.
pub fn augment_images(images: &mut Mat, h: usize, w: usize, cfg: &AugmentConfig, rng: &mut SeedRng) {
    for r in 0..images.rows {
        let row = images.row_mut(r);
        if cfg.hflip && rng.below(2) == 0 {
            for y in 0..h {
                row[y * w..(y + 1) * w].reverse();
            }
        }
        if cfg.rotation || cfg.scale {
            let angle = if cfg.rotation {
                rng.uniform(-5.0, 5.0) * std::f64::consts::PI / 180.0
            } else {
                0.0
            };
            let s = if cfg.scale { rng.uniform(0.9, 1.1) } else { 1.0 };
            let src = row.to_vec();
            let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
            let (cos, sin) = (angle.cos() / s, angle.sin() / s);
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f64 - cy;
                    let dx = x as f64 - cx;
                    let sy = cy + cos * dy - sin * dx;
                    let sx = cx + sin * dy + cos * dx;
                    row[y * w + x] = bilinear(&src, h, w, sy, sx);
                }
            }
        }
        if cfg.brightness_contrast {
            let bright = rng.uniform(0.8, 1.2);
            let contrast = rng.uniform(0.8, 1.2);
            for p in row.iter_mut() {
                *p = (((*p - 0.5) * contrast + 0.5) * bright).clamp(0.0, 1.0);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// one forward/backward step

struct StepOutput {
    value: f64,
    /// Per-row max |grad| on W (unimodal term), when the objective has W.
    w_row_grad: Option<Vec<f64>>,
}

fn row_grad_max(m: &Mat) -> Vec<f64> {
    (0..m.rows)
        .map(|i| m.row(i).iter().fold(0.0f64, |a, &x| a.max(x.abs())))
        .collect()
}

/// Forward + (optionally) backward of one batch under the configured
/// objective. Gradients are accumulated into the encoder/objective params;
/// the caller owns zeroing and the optimizer step.
fn run_batch(
    vision: &mut VisionEncoder,
    text: &mut TextEncoder,
    objective: &mut ObjectiveState,
    batch: &Batch,
    train: bool,
) -> Result<StepOutput> {
    let sentences: Vec<&str> = batch.sentences.iter().map(|s| s.as_str()).collect();
    let (feats, vcache) = vision.forward_features(&batch.images)?;
    let kind = objective.kind;
    let mut w_row_grad = None;
    let value = match kind {
        ObjectiveKind::Clip | ObjectiveKind::Unicl => {
            let (v, pcache) = vision.project(SHARED_PROJECTION, &feats)?;
            let (u, tcache) = text.forward(&sentences)?;
            let log_tau = objective.log_tau.as_ref().unwrap().value.data[0];
            let (out, grads) = if kind == ObjectiveKind::Clip {
                clip_loss(&v, &u, log_tau)?
            } else {
                unicl_loss(&v, &u, &batch.y_img, &batch.y_text, log_tau)?
            };
            if train {
                let d_feats = vision.project_backward(SHARED_PROJECTION, &pcache, &grads.d_v)?;
                vision.backward_features(&vcache, &d_feats);
                text.backward(&tcache, &grads.d_u);
                objective.log_tau.as_mut().unwrap().grad.data[0] += grads.d_log_tau;
            }
            out.value
        }
        ObjectiveKind::Unimodal => {
            let (v, pcache) = vision.project(SHARED_PROJECTION, &feats)?;
            let log_tau = objective.log_tau.as_ref().unwrap().value.data[0];
            let w = objective.w.as_ref().unwrap().value.clone();
            let (out, grads) = masked_unimodal_loss(&v, &batch.y_img, &batch.masks, &w, log_tau)?;
            w_row_grad = Some(row_grad_max(&grads.d_w));
            if train {
                let d_feats = vision.project_backward(SHARED_PROJECTION, &pcache, &grads.d_v)?;
                vision.backward_features(&vcache, &d_feats);
                objective.w.as_mut().unwrap().grad.add_scaled(&grads.d_w, 1.0);
                objective.log_tau.as_mut().unwrap().grad.data[0] += grads.d_log_tau;
            }
            out.value
        }
        ObjectiveKind::Dlilp => {
            let dual = vision
                .projection_names()
                .iter()
                .any(|n| n == IMAGE_LABEL_PROJECTION);
            let (il_name, it_name) = if dual {
                (IMAGE_LABEL_PROJECTION, IMAGE_TEXT_PROJECTION)
            } else {
                (SHARED_PROJECTION, SHARED_PROJECTION)
            };
            let (v_il, il_cache) = vision.project(il_name, &feats)?;
            let (v_it, it_cache) = vision.project(it_name, &feats)?;
            let (u, tcache) = text.forward(&sentences)?;
            let log_tau_il = objective.log_tau_il.as_ref().unwrap().value.data[0];
            let log_tau_it = objective.log_tau_it.as_ref().unwrap().value.data[0];
            let w = objective.w.as_ref().unwrap().value.clone();
            let (out, grads) = dlilp_loss(
                &v_il,
                &v_it,
                &u,
                &batch.y_img,
                &batch.masks,
                &w,
                log_tau_il,
                log_tau_it,
                objective.lambda,
            )?;
            w_row_grad = Some(row_grad_max(&grads.d_w));
            if train {
                let d_feats_il = vision.project_backward(il_name, &il_cache, &grads.d_v_il)?;
                let d_feats_it = vision.project_backward(it_name, &it_cache, &grads.d_v_it)?;
                let mut d_feats = d_feats_il;
                d_feats.add_scaled(&d_feats_it, 1.0);
                vision.backward_features(&vcache, &d_feats);
                text.backward(&tcache, &grads.d_u);
                objective.w.as_mut().unwrap().grad.add_scaled(&grads.d_w, 1.0);
                objective.log_tau_il.as_mut().unwrap().grad.data[0] += grads.d_log_tau_il;
                objective.log_tau_it.as_mut().unwrap().grad.data[0] += grads.d_log_tau_it;
            }
            out.value
        }
    };
    if !value.is_finite() {
        bail!("non-finite {} loss", kind.as_str());
    }
    Ok(StepOutput { value, w_row_grad })
}

fn for_all_params(
    vision: &mut VisionEncoder,
    text: &mut TextEncoder,
    objective: &mut ObjectiveState,
    f: &mut impl FnMut(&str, &mut duet_core::nn::Param),
) {
    vision.visit_params(f);
    text.visit_params(f);
    objective.visit_params(f);
}

/// Train under `config` on the merged manifests; writes the best checkpoint
/// and a run record into `out_dir`.
pub fn pretrain(config: &TrainConfig, manifests: &[PathBuf], out_dir: &Path) -> Result<RunRecord> {
    let started = Instant::now();
    let mut ds = load_and_merge(manifests)?;
    if ds.image_size != config.image_size {
        bail!(
            "manifest images are {}x{}, config expects {}x{}",
            ds.image_size.0,
            ds.image_size.1,
            config.image_size.0,
            config.image_size.1
        );
    }
    let needs_text = matches!(
        config.objective,
        ObjectiveKind::Clip | ObjectiveKind::Unicl | ObjectiveKind::Dlilp
    );
    if needs_text {
        // label-only records get templated captions
        let classes = ds.classes.clone();
        for s in ds.samples.iter_mut() {
            if s.sentence.trim().is_empty() {
                s.sentence = template_sentence(&classes, &s.image_labels);
            }
        }
    }
    let non_trivial_masks = ds
        .samples
        .iter()
        .any(|s| s.annotation_mask.iter().any(|&m| m == 0.0));
    if matches!(config.objective, ObjectiveKind::Unimodal | ObjectiveKind::Dlilp)
        && ds
            .samples
            .iter()
            .all(|s| s.annotation_mask.iter().all(|&m| m == 0.0))
    {
        bail!("objective {} needs label supervision", config.objective.as_str());
    }

    let (train_idx, val_idx) = stratified_split(&ds, config.val_fraction, config.seed);
    if train_idx.is_empty() || val_idx.is_empty() {
        bail!("dataset too small for a {}% validation split", config.val_fraction * 100.0);
    }

    let enc_cfg = config.encoder_config();
    let (mut vision, mut text) = build_toy_encoders(&enc_cfg)?;
    let mut objective = ObjectiveState::new(
        config.objective,
        ds.classes.len(),
        config.d_p,
        config.lambda,
        mix_seed(config.seed, 0x6f62_6a),
    )?;
    let mut opt = AdamW::new(config.lr, config.weight_decay);
    let (h, w) = config.image_size;

    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut w_row_grad_max = vec![0.0f64; ds.classes.len()];
    let mut stopped_early = false;
    let catalog = ClassCatalog::all_base(ds.classes.clone());
    let meta = CheckpointMeta {
        objective: config.objective,
        lambda: config.lambda,
        seed: config.seed,
        config_hash: config.hash(),
        encoder: enc_cfg.clone(),
        catalog: catalog.clone(),
    };

    for epoch in 0..config.max_epochs {
        let lr = schedule_lr(config.lr, epoch, config.max_epochs, config.warmup_epochs);
        let batches = epoch_batches(
            train_idx.len(),
            config.batch_size,
            mix_seed(config.seed, 0x6261_7463_68),
            epoch as u64,
        )?;
        let mut aug_rng = SeedRng::new(mix_seed(config.seed, 0x6175_67 ^ epoch as u64));
        let mut train_sum = 0.0;
        let mut train_n = 0usize;
        for local in &batches {
            let global: Vec<usize> = local.iter().map(|&i| train_idx[i]).collect();
            let mut batch = assemble_batch(&ds, &global)?;
            if config.augment.any() {
                augment_images(&mut batch.images, h, w, &config.augment, &mut aug_rng);
            }
            for_all_params(&mut vision, &mut text, &mut objective, &mut |_, p| p.zero_grad());
            let step = run_batch(&mut vision, &mut text, &mut objective, &batch, true)
                .with_context(|| format!("epoch {epoch}"))?;
            if let Some(rg) = &step.w_row_grad {
                for (acc, &g) in w_row_grad_max.iter_mut().zip(rg) {
                    *acc = acc.max(g);
                }
            }
            opt.begin_step();
            for_all_params(&mut vision, &mut text, &mut objective, &mut |_, p| {
                opt.step_param(p, lr)
            });
            objective.clamp_temperatures();
            train_sum += step.value;
            train_n += batch.images.rows;
        }
        train_curve.push(train_sum / train_n as f64);

        let mut val_sum = 0.0;
        for chunk in val_idx.chunks(config.batch_size) {
            let batch = assemble_batch(&ds, chunk)?;
            let step = run_batch(&mut vision, &mut text, &mut objective, &batch, false)?;
            val_sum += step.value;
        }
        let val_loss = val_sum / val_idx.len() as f64;
        val_curve.push(val_loss);

        let improved = best.as_ref().map_or(true, |(_, b, _)| val_loss < *b);
        if improved {
            best = Some((
                epoch,
                val_loss,
                Checkpoint {
                    vision: vision.clone(),
                    text: text.clone(),
                    objective: objective.clone(),
                    meta: meta.clone(),
                },
            ));
        } else if epoch - best.as_ref().unwrap().0 >= config.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, best_val_loss, mut ckpt) = best.unwrap();
    let checkpoint_path = out_dir.join("model.ckpt");
    ckpt.save(&checkpoint_path)?;
    let record = RunRecord {
        config: config.clone(),
        config_hash: meta.config_hash.clone(),
        train_curve,
        val_curve,
        best_epoch,
        best_val_loss,
        checkpoint_path,
        wall_time_s: started.elapsed().as_secs_f64(),
        stopped_early,
        used_masked_loss: non_trivial_masks,
        w_row_grad_max,
        provenance: format!("duet-harness {}", env!("CARGO_PKG_VERSION")),
    };
    let mut text_out = serde_json::to_string_pretty(&record)?;
    text_out.push('\n');
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("run.json"), text_out)?;
    Ok(record)
}

/// Mean per-sample loss of a checkpoint on a dataset (no parameter updates);
/// used to verify the best-checkpoint property and for held-out diagnostics.
pub fn evaluate_loss(ckpt: &Checkpoint, ds: &Dataset, batch_size: usize) -> Result<f64> {
    let mut vision = ckpt.vision.clone();
    let mut text = ckpt.text.clone();
    let mut objective = ckpt.objective.clone();
    let mut sum = 0.0;
    let n = ds.samples.len();
    for chunk in (0..n).collect::<Vec<_>>().chunks(batch_size) {
        let batch = assemble_batch(ds, chunk)?;
        sum += run_batch(&mut vision, &mut text, &mut objective, &batch, false)?.value;
    }
    Ok(sum / n as f64)
}
