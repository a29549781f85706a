//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N (...): PASS` line (visible with `--nocapture`; shown on
//! failure otherwise).
//!
//! Oracles here are written independently of the library code they check:
//! finite differences for gradients, scalar reference formulas for loss
//! values, and a confusion-matrix recomputation for the metric.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use duet_core::mat::Mat;
use duet_core::objectives::{
    clip_loss, dlilp_loss, masked_unimodal_loss, unicl_loss, unimodal_loss, ObjectiveKind,
};
use duet_core::probe::FeatureTap;
use duet_core::rng::SeedRng;
use duet_harness::checkpoint::Checkpoint;
use duet_harness::eval::{encode_images_chunked, probe_task, zero_shot_task, PrototypePolicy};
use duet_harness::reports::run_benchmark;
use duet_harness::synthgen::{generate_corpus, CorpusBundle, GeneratorConfig};
use duet_harness::tasks::{Split, TaskManifest};
use duet_harness::train::{evaluate_loss, load_and_merge, pretrain, RunRecord, TrainConfig};

fn verdict(n: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n} ({name}): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// shared fixtures: reference corpus and desk-profile training runs
// ---------------------------------------------------------------------------

fn corpus() -> &'static CorpusBundle {
    static CORPUS: OnceLock<CorpusBundle> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let dir = Box::leak(Box::new(tempfile::tempdir().expect("tempdir")));
        generate_corpus(&GeneratorConfig::default(), dir.path()).expect("reference corpus")
    })
}

/// Desk-profile training, cached per (objective, seed, manifest set).
fn desk_run(objective: ObjectiveKind, seed: u64, manifests: &[PathBuf], tag: &str) -> RunRecord {
    static RUNS: OnceLock<Mutex<BTreeMap<String, RunRecord>>> = OnceLock::new();
    let key = format!("{}_{}_{}", objective.as_str(), seed, tag);
    let runs = RUNS.get_or_init(|| Mutex::new(BTreeMap::new()));
    let mut guard = runs.lock().unwrap();
    if let Some(r) = guard.get(&key) {
        return r.clone();
    }
    let config = TrainConfig::desk(objective, seed);
    let out = corpus().root.join(format!("run_{key}"));
    let record = pretrain(&config, manifests, &out).expect("desk pretrain");
    guard.insert(key.clone(), record.clone());
    record
}

fn pretrain_run(objective: ObjectiveKind, seed: u64) -> RunRecord {
    desk_run(objective, seed, &[corpus().pretrain_manifest.clone()], "full")
}

fn task(name: &str) -> TaskManifest {
    TaskManifest::load(&corpus().tasks[name]).expect("task manifest")
}

// ---------------------------------------------------------------------------
// random instance helpers
// ---------------------------------------------------------------------------

fn rand_mat(rng: &mut SeedRng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for x in m.data.iter_mut() {
        *x = rng.normal() / (cols as f64).sqrt();
    }
    m
}

fn rand_labels(rng: &mut SeedRng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for x in m.data.iter_mut() {
        *x = if rng.next_f64() < 0.4 { 1.0 } else { 0.0 };
    }
    m
}

/// Random masks with at least one labeled class somewhere in the batch.
fn rand_masks(rng: &mut SeedRng, rows: usize, cols: usize) -> Mat {
    loop {
        let mut m = Mat::zeros(rows, cols);
        for x in m.data.iter_mut() {
            *x = if rng.next_f64() < 0.7 { 1.0 } else { 0.0 };
        }
        if m.data.iter().any(|&x| x == 1.0) {
            return m;
        }
    }
}

// moderate temperatures keep logits far from the sigmoid clamp, so the
// losses stay smooth around every probe point
fn rand_log_tau(rng: &mut SeedRng) -> f64 {
    rng.uniform(0.25_f64.ln(), 1.5_f64.ln())
}

// ---------------------------------------------------------------------------
// criterion 1: finite-difference gradient checks
// ---------------------------------------------------------------------------

const FD_H: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central finite differences over every entry of `m`, compared entry-wise
/// against `analytic`; returns the worst relative error.
fn fd_mat(m: &mut Mat, analytic: &Mat, mut f: impl FnMut(&Mat) -> f64) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.data.len() {
        let orig = m.data[i];
        m.data[i] = orig + FD_H;
        let hi = f(m);
        m.data[i] = orig - FD_H;
        let lo = f(m);
        m.data[i] = orig;
        worst = worst.max(rel_err((hi - lo) / (2.0 * FD_H), analytic.data[i]));
    }
    worst
}

fn fd_scalar(x: f64, analytic: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    rel_err((f(x + FD_H) - f(x - FD_H)) / (2.0 * FD_H), analytic)
}

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let mut rng = SeedRng::new(0xacce_0001);
    let mut worst = 0.0_f64;
    for inst in 0..20 {
        let n = 2 + (inst % 5); // |B| in 2..=6
        let d = 3 + (inst % 6); // D in 3..=8
        let c = 2 + (inst % 3); // C in 2..=4
        let mut v = rand_mat(&mut rng, n, d);
        let mut u = rand_mat(&mut rng, n, d);
        let mut w = rand_mat(&mut rng, c, d);
        let y = rand_labels(&mut rng, n, c);
        let y_text = rand_labels(&mut rng, n, c);
        let masks = rand_masks(&mut rng, n, c);
        let lt = rand_log_tau(&mut rng);

        // clip
        let (_, g) = clip_loss(&v, &u, lt).unwrap();
        worst = worst.max(fd_mat(&mut v, &g.d_v, |v| clip_loss(v, &u, lt).unwrap().0.value));
        worst = worst.max(fd_mat(&mut u, &g.d_u, |u| clip_loss(&v, u, lt).unwrap().0.value));
        worst = worst.max(fd_scalar(lt, g.d_log_tau, |t| clip_loss(&v, &u, t).unwrap().0.value));

        // unicl
        let (_, g) = unicl_loss(&v, &u, &y, &y_text, lt).unwrap();
        worst = worst.max(fd_mat(&mut v, &g.d_v, |v| {
            unicl_loss(v, &u, &y, &y_text, lt).unwrap().0.value
        }));
        worst = worst.max(fd_mat(&mut u, &g.d_u, |u| {
            unicl_loss(&v, u, &y, &y_text, lt).unwrap().0.value
        }));
        worst = worst.max(fd_scalar(lt, g.d_log_tau, |t| {
            unicl_loss(&v, &u, &y, &y_text, t).unwrap().0.value
        }));

        // unimodal (unmasked)
        let (_, g) = unimodal_loss(&v, &y, &w, lt).unwrap();
        worst = worst.max(fd_mat(&mut v, &g.d_v, |v| unimodal_loss(v, &y, &w, lt).unwrap().0.value));
        worst = worst.max(fd_mat(&mut w, &g.d_w, |w| unimodal_loss(&v, &y, w, lt).unwrap().0.value));
        worst = worst.max(fd_scalar(lt, g.d_log_tau, |t| {
            unimodal_loss(&v, &y, &w, t).unwrap().0.value
        }));

        // masked unimodal
        let (_, g) = masked_unimodal_loss(&v, &y, &masks, &w, lt).unwrap();
        worst = worst.max(fd_mat(&mut v, &g.d_v, |v| {
            masked_unimodal_loss(v, &y, &masks, &w, lt).unwrap().0.value
        }));
        worst = worst.max(fd_mat(&mut w, &g.d_w, |w| {
            masked_unimodal_loss(&v, &y, &masks, w, lt).unwrap().0.value
        }));
        worst = worst.max(fd_scalar(lt, g.d_log_tau, |t| {
            masked_unimodal_loss(&v, &y, &masks, &w, t).unwrap().0.value
        }));

        // dlilp: gradients w.r.t. both projections, text, W, both
        // temperatures, and λ
        let mut v_it = rand_mat(&mut rng, n, d);
        let lt2 = rand_log_tau(&mut rng);
        let lambda = rng.uniform(0.05, 2.0);
        let full = |v_il: &Mat, v_it: &Mat, u: &Mat, w: &Mat, a: f64, b: f64, l: f64| {
            dlilp_loss(v_il, v_it, u, &y, &masks, w, a, b, l).unwrap().0.value
        };
        let (_, g) = dlilp_loss(&v, &v_it, &u, &y, &masks, &w, lt, lt2, lambda).unwrap();
        worst = worst.max(fd_mat(&mut v, &g.d_v_il, |m| full(m, &v_it, &u, &w, lt, lt2, lambda)));
        worst = worst.max(fd_mat(&mut v_it, &g.d_v_it, |m| full(&v, m, &u, &w, lt, lt2, lambda)));
        worst = worst.max(fd_mat(&mut u, &g.d_u, |m| full(&v, &v_it, m, &w, lt, lt2, lambda)));
        worst = worst.max(fd_mat(&mut w, &g.d_w, |m| full(&v, &v_it, &u, m, lt, lt2, lambda)));
        worst = worst.max(fd_scalar(lt, g.d_log_tau_il, |t| {
            full(&v, &v_it, &u, &w, t, lt2, lambda)
        }));
        worst = worst.max(fd_scalar(lt2, g.d_log_tau_it, |t| {
            full(&v, &v_it, &u, &w, lt, t, lambda)
        }));
        worst = worst.max(fd_scalar(lambda, g.d_lambda, |l| {
            full(&v, &v_it, &u, &w, lt, lt2, l)
        }));
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = worst < 1e-4 && elapsed < 60.0;
    verdict(
        1,
        "gradient correctness",
        ok,
        &format!("max relative error {worst:.3e} over 20 instances in {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// criterion 2: loss identities
// ---------------------------------------------------------------------------

fn permute_rows(m: &Mat, perm: &[usize]) -> Mat {
    let mut out = Mat::zeros(m.rows, m.cols);
    for (dst, &src) in perm.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(m.row(src));
    }
    out
}

#[test]
fn criterion_2_loss_identities() {
    let mut rng = SeedRng::new(0xacce_0002);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let n = 4;
        let d = 6;
        let c = 4;
        let v = rand_mat(&mut rng, n, d);
        let u = rand_mat(&mut rng, n, d);
        let w = rand_mat(&mut rng, c, d);
        let y = rand_labels(&mut rng, n, c);
        let lt = rand_log_tau(&mut rng);

        // singleton positive sets: distinct one-hot labels make UniCL
        // collapse to CLIP
        let mut onehot = Mat::zeros(n, n);
        for i in 0..n {
            *onehot.at_mut(i, i) = 1.0;
        }
        let a = unicl_loss(&v, &u, &onehot, &onehot, lt).unwrap().0.value;
        let b = clip_loss(&v, &u, lt).unwrap().0.value;
        assert!((a - b).abs() <= 1e-9, "unicl vs clip: {a} vs {b}");
        worst = worst.max((a - b).abs());

        // all-ones masks: masked BCE equals the full BCE
        let mut ones = Mat::zeros(n, c);
        ones.data.iter_mut().for_each(|x| *x = 1.0);
        let a = masked_unimodal_loss(&v, &y, &ones, &w, lt).unwrap().0.value;
        let b = unimodal_loss(&v, &y, &w, lt).unwrap().0.value;
        assert!((a - b).abs() <= 1e-12, "masked vs full BCE: {a} vs {b}");

        // λ = 0 reduces the blend to its label component exactly
        let masks = rand_masks(&mut rng, n, c);
        let v_it = rand_mat(&mut rng, n, d);
        let a = dlilp_loss(&v, &v_it, &u, &y, &masks, &w, lt, lt, 0.0).unwrap().0.value;
        let b = masked_unimodal_loss(&v, &y, &masks, &w, lt).unwrap().0.value;
        assert_eq!(a, b, "dlilp(0) vs masked BCE");

        // modality symmetry of the bidirectional contrastive loss
        let a = clip_loss(&v, &u, lt).unwrap().0.value;
        let b = clip_loss(&u, &v, lt).unwrap().0.value;
        assert!((a - b).abs() <= 1e-12, "clip symmetry: {a} vs {b}");

        // joint batch permutation leaves every loss unchanged
        let perm = rng.permutation(n);
        let (vp, up, yp) = (permute_rows(&v, &perm), permute_rows(&u, &perm), permute_rows(&y, &perm));
        let y_text = rand_labels(&mut rng, n, c);
        let ytp = permute_rows(&y_text, &perm);
        let mp = permute_rows(&masks, &perm);
        let vitp = permute_rows(&v_it, &perm);
        let pairs = [
            (clip_loss(&v, &u, lt).unwrap().0.value, clip_loss(&vp, &up, lt).unwrap().0.value),
            (
                unicl_loss(&v, &u, &y, &y_text, lt).unwrap().0.value,
                unicl_loss(&vp, &up, &yp, &ytp, lt).unwrap().0.value,
            ),
            (
                unimodal_loss(&v, &y, &w, lt).unwrap().0.value,
                unimodal_loss(&vp, &yp, &w, lt).unwrap().0.value,
            ),
            (
                masked_unimodal_loss(&v, &y, &masks, &w, lt).unwrap().0.value,
                masked_unimodal_loss(&vp, &yp, &mp, &w, lt).unwrap().0.value,
            ),
            (
                dlilp_loss(&v, &v_it, &u, &y, &masks, &w, lt, lt, 0.3).unwrap().0.value,
                dlilp_loss(&vp, &vitp, &up, &yp, &mp, &w, lt, lt, 0.3).unwrap().0.value,
            ),
        ];
        for (a, b) in pairs {
            assert!((a - b).abs() <= 1e-12, "permutation invariance: {a} vs {b}");
        }
    }
    verdict(2, "loss identities", true, &format!("singleton-set gap {worst:.3e}"));
}

// ---------------------------------------------------------------------------
// criterion 3: brute-force loss oracles
// ---------------------------------------------------------------------------
// Scalar reference implementations written directly from the loss formulas,
// with no shared code beyond the standard library.

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ref_clip(v: &Mat, u: &Mat, log_tau: f64) -> f64 {
    let n = v.rows;
    let tau = log_tau.exp();
    let z = |i: usize, j: usize| dot(v.row(i), u.row(j)) / tau;
    let mut total = 0.0;
    for i in 0..n {
        let denom: f64 = (0..n).map(|j| z(i, j).exp()).sum();
        total += -(z(i, i).exp() / denom).ln();
    }
    for j in 0..n {
        let denom: f64 = (0..n).map(|i| z(i, j).exp()).sum();
        total += -(z(j, j).exp() / denom).ln();
    }
    total
}

fn ref_unicl(v: &Mat, u: &Mat, y_img: &Mat, y_text: &Mat, log_tau: f64) -> f64 {
    let n = v.rows;
    let c = y_img.cols;
    let tau = log_tau.exp();
    let z = |i: usize, j: usize| dot(v.row(i), u.row(j)) / tau;
    let share = |a: &[f64], b: &[f64]| (0..c).any(|k| a[k] == 1.0 && b[k] == 1.0);
    let mut total = 0.0;
    for i in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&j| share(y_text.row(j), y_img.row(i))).collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..n).map(|j| z(i, j).exp()).sum();
        let mean: f64 =
            pos.iter().map(|&j| -(z(i, j).exp() / denom).ln()).sum::<f64>() / pos.len() as f64;
        total += mean;
    }
    for j in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&i| share(y_img.row(i), y_text.row(j))).collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..n).map(|i| z(i, j).exp()).sum();
        let mean: f64 =
            pos.iter().map(|&i| -(z(i, j).exp() / denom).ln()).sum::<f64>() / pos.len() as f64;
        total += mean;
    }
    total
}

fn ref_weighted_bce(v: &Mat, y: &Mat, w: &Mat, log_tau: f64, weight: impl Fn(usize, usize) -> f64) -> f64 {
    let tau = log_tau.exp();
    let mut total = 0.0;
    for i in 0..v.rows {
        for c in 0..w.rows {
            let norm = dot(w.row(c), w.row(c)).sqrt();
            let z = dot(v.row(i), w.row(c)) / (norm * tau);
            // BCE of sigmoid(z) against the 0/1 label
            total += weight(i, c) * ((1.0 + z.exp()).ln() - y.at(i, c) * z);
        }
    }
    total
}

fn ref_unimodal(v: &Mat, y: &Mat, w: &Mat, log_tau: f64) -> f64 {
    let c = w.rows as f64;
    ref_weighted_bce(v, y, w, log_tau, |_, _| 1.0 / c)
}

fn ref_masked(v: &Mat, y: &Mat, masks: &Mat, w: &Mat, log_tau: f64) -> f64 {
    ref_weighted_bce(v, y, w, log_tau, |i, c| {
        let card: f64 = masks.row(i).iter().sum();
        if card == 0.0 {
            0.0
        } else {
            masks.at(i, c) / card
        }
    })
}

#[test]
fn criterion_3_brute_force_oracles() {
    let mut rng = SeedRng::new(0xacce_0003);
    let mut worst = 0.0_f64;
    for inst in 0..30 {
        let n = 2 + (inst % 4); // |B| in 2..=5
        let d = 3 + (inst % 5);
        let c = 2 + (inst % 2); // C in 2..=3
        let v = rand_mat(&mut rng, n, d);
        let u = rand_mat(&mut rng, n, d);
        let w = rand_mat(&mut rng, c, d);
        let y = rand_labels(&mut rng, n, c);
        let y_text = rand_labels(&mut rng, n, c);
        let masks = rand_masks(&mut rng, n, c);
        let lt = rand_log_tau(&mut rng);
        let lt2 = rand_log_tau(&mut rng);
        let lambda = rng.uniform(0.0, 2.0);
        let v_it = rand_mat(&mut rng, n, d);

        let checks = [
            (clip_loss(&v, &u, lt).unwrap().0.value, ref_clip(&v, &u, lt)),
            (
                unicl_loss(&v, &u, &y, &y_text, lt).unwrap().0.value,
                ref_unicl(&v, &u, &y, &y_text, lt),
            ),
            (unimodal_loss(&v, &y, &w, lt).unwrap().0.value, ref_unimodal(&v, &y, &w, lt)),
            (
                masked_unimodal_loss(&v, &y, &masks, &w, lt).unwrap().0.value,
                ref_masked(&v, &y, &masks, &w, lt),
            ),
            (
                dlilp_loss(&v, &v_it, &u, &y, &masks, &w, lt, lt2, lambda).unwrap().0.value,
                ref_masked(&v, &y, &masks, &w, lt) + lambda * ref_clip(&v_it, &u, lt2),
            ),
        ];
        for (got, want) in checks {
            let gap = (got - want).abs();
            assert!(gap <= 1e-9, "oracle mismatch: {got} vs {want}");
            worst = worst.max(gap);
        }
    }
    verdict(3, "brute-force loss oracles", true, &format!("max gap {worst:.3e} over 30 instances"));
}

// ---------------------------------------------------------------------------
// criterion 4: hybrid routing equals weight retrieval
// ---------------------------------------------------------------------------

fn softmax_row(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[test]
fn criterion_4_routing_equivalence() {
    let record = pretrain_run(ObjectiveKind::Dlilp, 0);
    let ckpt = Checkpoint::load(&record.checkpoint_path).expect("checkpoint");
    let base = task("base");
    let (routed, _, _) = zero_shot_task(&ckpt, &base, PrototypePolicy::Auto).expect("zero-shot");

    // independent weight retrieval on the image-label head
    let (images, _) = base.load_split(Split::Test).expect("test split");
    let feats = encode_images_chunked(&ckpt, &images, "I-L").expect("encode");
    let w = &ckpt.objective.w.as_ref().expect("class weights").value;
    let (w_norm, _) = w.normalize_rows();
    let mut worst = 0.0_f64;
    for i in 0..feats.rows {
        let mut scores: Vec<f64> = base
            .classes
            .iter()
            .map(|name| {
                let idx = ckpt.meta.catalog.index_of(name).expect("catalog index");
                dot(feats.row(i), w_norm.row(idx))
            })
            .collect();
        softmax_row(&mut scores);
        for (c, s) in scores.iter().enumerate() {
            worst = worst.max((routed.at(i, c) - s).abs());
        }
    }
    verdict(
        4,
        "routing equivalence",
        worst <= 1e-6,
        &format!("max score gap {worst:.3e} over {} images", feats.rows),
    );
}

// ---------------------------------------------------------------------------
// criterion 5: desk-scale learnability
// ---------------------------------------------------------------------------

fn aca_over(preds: &[usize], truths: &[usize], subset: &[usize], n_classes: usize) -> f64 {
    let recalls = duet_core::metrics::per_class_recall(preds, truths, n_classes).expect("recall");
    let vals: Vec<f64> = subset.iter().filter_map(|&i| recalls[i]).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn criterion_5_desk_scale_learnability() {
    let base = task("base");
    let all: Vec<usize> = (0..base.classes.len()).collect();
    let mut details = Vec::new();
    let mut ok = true;

    // each objective reaches base-class zero-shot / weight-retrieval ACA
    for objective in [
        ObjectiveKind::Clip,
        ObjectiveKind::Unicl,
        ObjectiveKind::Unimodal,
        ObjectiveKind::Dlilp,
    ] {
        let record = pretrain_run(objective, 0);
        let ckpt = Checkpoint::load(&record.checkpoint_path).expect("checkpoint");
        let (_, preds, truths) = zero_shot_task(&ckpt, &base, PrototypePolicy::Auto).expect("zs");
        let aca = aca_over(&preds, &truths, &all, base.classes.len());
        details.push(format!("{} base {:.3}", objective.as_str(), aca));
        ok &= aca >= 0.80;
    }

    // the disentangled objective transfers to never-supervised classes
    let mixed = task("mixed");
    let record = pretrain_run(ObjectiveKind::Dlilp, 0);
    let ckpt = Checkpoint::load(&record.checkpoint_path).expect("checkpoint");
    let (_, preds, truths) = zero_shot_task(&ckpt, &mixed, PrototypePolicy::Auto).expect("zs");
    let novel = aca_over(&preds, &truths, &mixed.novel_indices(), mixed.classes.len());
    let chance = 1.0 / mixed.classes.len() as f64;
    details.push(format!("novel {novel:.3} vs chance+0.10 {:.3}", chance + 0.10));
    ok &= novel > chance + 0.10;

    // composed prototypes beat disease-name prompts in ≥4 of 5 training seeds
    let composed = task("composed4");
    let call: Vec<usize> = (0..composed.classes.len()).collect();
    let mut wins = 0;
    for seed in 0..5 {
        let record = pretrain_run(ObjectiveKind::Dlilp, seed);
        let ckpt = Checkpoint::load(&record.checkpoint_path).expect("checkpoint");
        let (_, p1, t1) = zero_shot_task(&ckpt, &composed, PrototypePolicy::Auto).expect("zs");
        let (_, p2, t2) =
            zero_shot_task(&ckpt, &composed, PrototypePolicy::PromptsOnly).expect("zs");
        let a = aca_over(&p1, &t1, &call, composed.classes.len());
        let b = aca_over(&p2, &t2, &call, composed.classes.len());
        if a > b {
            wins += 1;
        }
    }
    details.push(format!("composed wins {wins}/5"));
    ok &= wins >= 4;

    verdict(5, "desk-scale learnability", ok, &details.join(", "));
}

// ---------------------------------------------------------------------------
// criterion 6: few-shot monotonic trend
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_few_shot_monotonic_trend() {
    let base = task("base");
    let all: Vec<usize> = (0..base.classes.len()).collect();
    let mut ok = true;
    let mut details = Vec::new();
    for objective in [
        ObjectiveKind::Clip,
        ObjectiveKind::Unicl,
        ObjectiveKind::Unimodal,
        ObjectiveKind::Dlilp,
    ] {
        let record = pretrain_run(objective, 0);
        let ckpt = Checkpoint::load(&record.checkpoint_path).expect("checkpoint");
        let mean_at = |k: usize| -> f64 {
            (0..5)
                .map(|seed| {
                    let (preds, truths) =
                        probe_task(&ckpt, &base, k, FeatureTap::PreProjection, seed).expect("probe");
                    aca_over(&preds, &truths, &all, base.classes.len())
                })
                .sum::<f64>()
                / 5.0
        };
        let (m1, m4, m16) = (mean_at(1), mean_at(4), mean_at(16));
        details.push(format!("{} K1 {m1:.3} K4 {m4:.3} K16 {m16:.3}", objective.as_str()));
        ok &= m16 >= m4 - 0.01 && m4 >= m1 - 0.01;
    }
    verdict(6, "few-shot monotonic trend", ok, &details.join("; "));
}

// ---------------------------------------------------------------------------
// criterion 7: partial-label scalability
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_partial_label_scalability() {
    let bundle = corpus();
    let main_only = vec![bundle.partial_main_manifest.clone()];
    let combined = vec![
        bundle.partial_main_manifest.clone(),
        bundle.partial_extra_manifest.clone(),
    ];
    let run_a = desk_run(ObjectiveKind::Unimodal, 0, &main_only, "pmain");
    let run_b = desk_run(ObjectiveKind::Unimodal, 0, &combined, "pboth");

    // the main sub-dataset annotates only the first four classes; its rows
    // beyond that must never receive gradient
    let grads = &run_a.w_row_grad_max;
    let masked_quiet = grads[4] == 0.0 && grads[5] == 0.0;
    let labeled_live = grads[..4].iter().all(|&g| g > 0.0);

    // adding the extra sub-dataset must not degrade the loss on the
    // original sub-dataset by more than 5% relative
    let ds_main = load_and_merge(&main_only).expect("main dataset");
    let ckpt_a = Checkpoint::load(&run_a.checkpoint_path).expect("checkpoint a");
    let ckpt_b = Checkpoint::load(&run_b.checkpoint_path).expect("checkpoint b");
    let loss_a = evaluate_loss(&ckpt_a, &ds_main, 64).expect("loss a");
    let loss_b = evaluate_loss(&ckpt_b, &ds_main, 64).expect("loss b");
    let rel = (loss_b - loss_a) / loss_a;

    let ok = masked_quiet && labeled_live && run_b.used_masked_loss && rel <= 0.05;
    verdict(
        7,
        "partial-label scalability",
        ok,
        &format!(
            "masked rows quiet {masked_quiet}, labeled rows live {labeled_live}, relative loss change {rel:+.3}"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 8: metric oracle
// ---------------------------------------------------------------------------

/// Confusion-matrix ACA written without reference to the metrics module.
fn ref_aca(preds: &[usize], truths: &[usize], n_classes: usize) -> f64 {
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        confusion[t][p] += 1;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total > 0 {
            sum += confusion[t][t] as f64 / total as f64;
            count += 1;
        }
    }
    sum / count as f64
}

#[test]
fn criterion_8_metric_oracle() {
    let mut rng = SeedRng::new(0xacce_0008);
    for _ in 0..100 {
        let n_classes = 2 + rng.below(6);
        let n = 1 + rng.below(40);
        let truths: Vec<usize> = (0..n).map(|_| rng.below(n_classes)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.below(n_classes)).collect();
        let subset: Vec<usize> = (0..n_classes).collect();
        let got = duet_core::metrics::aca(&preds, &truths, &subset).expect("aca");
        let want = ref_aca(&preds, &truths, n_classes);
        assert_eq!(got, want, "aca mismatch on preds {preds:?} truths {truths:?}");
    }
    verdict(8, "metric oracle", true, "exact match on 100 random vectors");
}

// ---------------------------------------------------------------------------
// criterion 9: benchmark determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_benchmark_determinism() {
    use duet_harness::eval::Protocol;
    let record = pretrain_run(ObjectiveKind::Clip, 0);
    let ckpt = Checkpoint::load(&record.checkpoint_path).expect("checkpoint");
    let checkpoints = vec![("clip".to_string(), ckpt)];
    let tasks = vec![task("base")];
    let protocols = [Protocol::ZeroShot, Protocol::Probe(4)];
    let seeds = [0, 1, 2];
    let out_a = corpus().root.join("bench_a");
    let out_b = corpus().root.join("bench_b");
    run_benchmark(&checkpoints, &tasks, &protocols, &seeds, &out_a).expect("bench a");
    run_benchmark(&checkpoints, &tasks, &protocols, &seeds, &out_b).expect("bench b");
    let mut ok = true;
    for name in ["benchmark.csv", "summary.csv", "benchmark.json"] {
        let a = std::fs::read(out_a.join(name)).expect("read");
        let b = std::fs::read(out_b.join(name)).expect("read");
        ok &= a == b;
    }
    verdict(9, "benchmark determinism", ok, "CSV and JSON reports byte-identical across reruns");
}
