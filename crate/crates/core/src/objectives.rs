//! Pre-training objectives: bidirectional contrastive (CLIP), label-aware
//! contrastive (UniCL), unimodal sigmoid BCE against normalized class
//! prototypes, its partial-label masked variant, and the disentangled blend
//! (DLILP). Each loss returns its value together with analytic gradients for
//! every input matrix and parameter, including log-temperatures.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, CoreError, Result};
use crate::mat::Mat;
use crate::mathx::{logsumexp, sigmoid, softplus, SIGMOID_CLAMP, TAU_MIN};
use crate::nn::Param;
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Clip,
    Unicl,
    Unimodal,
    Dlilp,
}

impl ObjectiveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectiveKind::Clip => "clip",
            ObjectiveKind::Unicl => "unicl",
            ObjectiveKind::Unimodal => "unimodal",
            ObjectiveKind::Dlilp => "dlilp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clip" => Ok(ObjectiveKind::Clip),
            "unicl" => Ok(ObjectiveKind::Unicl),
            "unimodal" => Ok(ObjectiveKind::Unimodal),
            "dlilp" => Ok(ObjectiveKind::Dlilp),
            other => Err(invalid(format!("unknown objective '{other}'"))),
        }
    }
}

/// Contrastive temperatures start at the usual 0.07; the unimodal sigmoid
/// temperature starts at 1.
pub const TAU_INIT_CONTRASTIVE: f64 = 0.07;
pub const TAU_INIT_UNIMODAL: f64 = 1.0;

/// Trainable parameters owned by a loss.
#[derive(Debug, Clone)]
pub struct ObjectiveState {
    pub kind: ObjectiveKind,
    /// Class-weight matrix, C_base × D_p (unimodal / dlilp).
    pub w: Option<Param>,
    /// log τ for clip / unicl / unimodal.
    pub log_tau: Option<Param>,
    /// log τ^{I-L} and log τ^{I-T} for dlilp.
    pub log_tau_il: Option<Param>,
    pub log_tau_it: Option<Param>,
    pub lambda: f64,
}

impl ObjectiveState {
    pub fn new(kind: ObjectiveKind, n_base: usize, d_p: usize, lambda: f64, seed: u64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(invalid("lambda must be >= 0"));
        }
        let mut rng = SeedRng::new(seed);
        let mut w_init = || {
            let bound = libm::sqrt(1.0 / d_p as f64);
            let data: Vec<f64> = (0..n_base * d_p).map(|_| rng.uniform(-bound, bound)).collect();
            Param::new(Mat::from_vec(n_base, d_p, data).unwrap(), true)
        };
        let lt = |tau: f64| Param::scalar(libm::log(tau), false);
        Ok(match kind {
            ObjectiveKind::Clip => ObjectiveState {
                kind,
                w: None,
                log_tau: Some(lt(TAU_INIT_CONTRASTIVE)),
                log_tau_il: None,
                log_tau_it: None,
                lambda,
            },
            ObjectiveKind::Unicl => ObjectiveState {
                kind,
                w: None,
                log_tau: Some(lt(TAU_INIT_CONTRASTIVE)),
                log_tau_il: None,
                log_tau_it: None,
                lambda,
            },
            ObjectiveKind::Unimodal => ObjectiveState {
                kind,
                w: Some(w_init()),
                log_tau: Some(lt(TAU_INIT_UNIMODAL)),
                log_tau_il: None,
                log_tau_it: None,
                lambda,
            },
            ObjectiveKind::Dlilp => ObjectiveState {
                kind,
                w: Some(w_init()),
                log_tau: None,
                log_tau_il: Some(lt(TAU_INIT_UNIMODAL)),
                log_tau_it: Some(lt(TAU_INIT_CONTRASTIVE)),
                lambda,
            },
        })
    }

    /// Enforce τ ≥ 0.01 after an optimizer update.
    pub fn clamp_temperatures(&mut self) {
        let floor = libm::log(TAU_MIN);
        for p in [&mut self.log_tau, &mut self.log_tau_il, &mut self.log_tau_it]
            .into_iter()
            .flatten()
        {
            if p.value.data[0] < floor {
                p.value.data[0] = floor;
            }
        }
    }

    pub fn visit_params(&mut self, f: &mut impl FnMut(&str, &mut Param)) {
        if let Some(p) = &mut self.w {
            f("objective.w", p);
        }
        if let Some(p) = &mut self.log_tau {
            f("objective.log_tau", p);
        }
        if let Some(p) = &mut self.log_tau_il {
            f("objective.log_tau_il", p);
        }
        if let Some(p) = &mut self.log_tau_it {
            f("objective.log_tau_it", p);
        }
    }
}

/// Loss value plus named components and runtime diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub taus: Vec<(String, f64)>,
    pub empty_positive_sets: usize,
    pub skipped_samples: usize,
    pub positive_set_sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub components: Vec<(String, f64)>,
    pub diagnostics: Diagnostics,
}

impl LossOutput {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    fn check_finite(self) -> Result<Self> {
        if self.value.is_finite() {
            Ok(self)
        } else {
            Err(CoreError::NonFinite(format!("loss value {}", self.value)))
        }
    }
}

/// Gradients of a contrastive loss.
#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub d_v: Mat,
    pub d_u: Mat,
    pub d_log_tau: f64,
}

/// Gradients of the unimodal BCE losses.
#[derive(Debug, Clone)]
pub struct UnimodalGrads {
    pub d_v: Mat,
    pub d_w: Mat,
    pub d_log_tau: f64,
}

/// Gradients of the disentangled blend.
#[derive(Debug, Clone)]
pub struct DlilpGrads {
    pub d_v_il: Mat,
    pub d_v_it: Mat,
    pub d_u: Mat,
    pub d_w: Mat,
    pub d_log_tau_il: f64,
    pub d_log_tau_it: f64,
    pub d_lambda: f64,
}

fn check_pair(v: &Mat, u: &Mat) -> Result<()> {
    if v.rows == 0 {
        return Err(invalid("empty batch"));
    }
    if v.rows != u.rows || v.cols != u.cols {
        return Err(shape_err(format!(
            "image {}x{} vs text {}x{} projections",
            v.rows, v.cols, u.rows, u.cols
        )));
    }
    Ok(())
}

/// Bidirectional contrastive loss over positionally paired projections.
///
/// `value = Σ_i −log softmax_j(v_i·u_j/τ)[i] + Σ_j −log softmax_i(v_i·u_j/τ)[j]`
pub fn clip_loss(v: &Mat, u: &Mat, log_tau: f64) -> Result<(LossOutput, ContrastiveGrads)> {
    check_pair(v, u)?;
    let n = v.rows;
    let tau = libm::exp(log_tau);
    let mut z = v.matmul_nt(u); // n×n cosine matrix
    z.scale(1.0 / tau);

    let mut value_i2t = 0.0;
    let mut value_t2i = 0.0;
    // combined dLoss/dz
    let mut g = Mat::zeros(n, n);
    // rows: image anchors
    for i in 0..n {
        let row = z.row(i);
        let lse = logsumexp(row);
        value_i2t += lse - row[i];
        for j in 0..n {
            g.data[i * n + j] += libm::exp(row[j] - lse);
        }
        g.data[i * n + i] -= 1.0;
    }
    // columns: text anchors
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| z.at(i, j)).collect();
        let lse = logsumexp(&col);
        value_t2i += lse - col[j];
        for i in 0..n {
            g.data[i * n + j] += libm::exp(col[i] - lse);
        }
        g.data[j * n + j] -= 1.0;
    }

    let mut d_v = g.matmul(u);
    d_v.scale(1.0 / tau);
    let mut d_u = g.matmul_tn(v);
    d_u.scale(1.0 / tau);
    // z = cos/τ so ∂z/∂logτ = −z
    let mut d_log_tau = 0.0;
    for i in 0..n * n {
        d_log_tau -= g.data[i] * z.data[i];
    }

    let out = LossOutput {
        value: value_i2t + value_t2i,
        components: vec![(String::from("i2t"), value_i2t), (String::from("t2i"), value_t2i)],
        diagnostics: Diagnostics {
            taus: vec![(String::from("tau"), tau)],
            ..Default::default()
        },
    }
    .check_finite()?;
    Ok((out, ContrastiveGrads { d_v, d_u, d_log_tau }))
}

/// Cross-modal positive sets: anchors pair with every batch element sharing at
/// least one positive category.
///
/// `P_i2t(i) = { i' : ∃c, y_text[i',c] = y_img[i,c] = 1 }`
/// `P_t2i(j) = { j' : ∃c, y_img[j',c] = y_text[j,c] = 1 }`
pub fn unicl_positive_sets(y_img: &Mat, y_text: &Mat) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = y_img.rows;
    let c = y_img.cols;
    let overlap = |a: &[f64], b: &[f64]| (0..c).any(|k| a[k] == 1.0 && b[k] == 1.0);
    let p_i2t: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&ip| overlap(y_text.row(ip), y_img.row(i))).collect())
        .collect();
    let p_t2i: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..n).filter(|&jp| overlap(y_img.row(jp), y_text.row(j))).collect())
        .collect();
    (p_i2t, p_t2i)
}

/// Label-aware contrastive loss: per anchor, the mean negative log-softmax over
/// its positive set. Anchors with empty positive sets contribute zero.
pub fn unicl_loss(
    v: &Mat,
    u: &Mat,
    y_img: &Mat,
    y_text: &Mat,
    log_tau: f64,
) -> Result<(LossOutput, ContrastiveGrads)> {
    check_pair(v, u)?;
    if y_img.rows != v.rows || y_text.rows != v.rows || y_img.cols != y_text.cols {
        return Err(shape_err("label matrices must be |B|×C"));
    }
    let n = v.rows;
    let tau = libm::exp(log_tau);
    let mut z = v.matmul_nt(u);
    z.scale(1.0 / tau);
    let (p_i2t, p_t2i) = unicl_positive_sets(y_img, y_text);

    let mut value_i2t = 0.0;
    let mut value_t2i = 0.0;
    let mut empty = 0usize;
    let mut g = Mat::zeros(n, n);

    // image anchors against text candidates: softmax over row i, the anchor's
    // grad is `softmax − 1_P/|P|` since the |P| log-softmax terms are averaged
    for i in 0..n {
        let pos = &p_i2t[i];
        if pos.is_empty() {
            empty += 1;
            continue;
        }
        let row = z.row(i);
        let lse = logsumexp(row);
        let inv = 1.0 / pos.len() as f64;
        for &ip in pos {
            value_i2t += inv * (lse - row[ip]);
        }
        for j in 0..n {
            g.data[i * n + j] += libm::exp(row[j] - lse);
        }
        for &ip in pos {
            g.data[i * n + ip] -= inv;
        }
    }
    // text anchors against image candidates (columns of z)
    for j in 0..n {
        let pos = &p_t2i[j];
        if pos.is_empty() {
            empty += 1;
            continue;
        }
        let col: Vec<f64> = (0..n).map(|i| z.at(i, j)).collect();
        let lse = logsumexp(&col);
        let inv = 1.0 / pos.len() as f64;
        for &jp in pos {
            value_t2i += inv * (lse - col[jp]);
        }
        for i in 0..n {
            g.data[i * n + j] += libm::exp(col[i] - lse);
        }
        for &jp in pos {
            g.data[jp * n + j] -= inv;
        }
    }

    let mut d_v = g.matmul(u);
    d_v.scale(1.0 / tau);
    let mut d_u = g.matmul_tn(v);
    d_u.scale(1.0 / tau);
    let mut d_log_tau = 0.0;
    for i in 0..n * n {
        d_log_tau -= g.data[i] * z.data[i];
    }

    let sizes: Vec<usize> = p_i2t.iter().chain(p_t2i.iter()).map(|p| p.len()).collect();
    let out = LossOutput {
        value: value_i2t + value_t2i,
        components: vec![(String::from("i2t"), value_i2t), (String::from("t2i"), value_t2i)],
        diagnostics: Diagnostics {
            taus: vec![(String::from("tau"), tau)],
            empty_positive_sets: empty,
            positive_set_sizes: sizes,
            ..Default::default()
        },
    }
    .check_finite()?;
    Ok((out, ContrastiveGrads { d_v, d_u, d_log_tau }))
}

/// Shared worker for the (masked) unimodal BCE against row-normalized class
/// prototypes. `weights[i][c]` multiplies the per-class BCE term.
fn weighted_bce(
    v: &Mat,
    y: &Mat,
    weights: &Mat,
    w: &Mat,
    log_tau: f64,
) -> Result<(f64, UnimodalGrads)> {
    if v.rows == 0 {
        return Err(invalid("empty batch"));
    }
    if w.rows == 0 {
        return Err(invalid("no classes (C = 0)"));
    }
    if y.rows != v.rows || y.cols != w.rows || w.cols != v.cols {
        return Err(shape_err("unimodal loss dimension mismatch"));
    }
    let (n, c) = (v.rows, w.rows);
    let tau = libm::exp(log_tau);
    // prototypes are read through row normalization
    let (w_norm, norms) = w.normalize_rows();
    let z_raw = v.matmul_nt(&w_norm); // n×c cosines

    let mut value = 0.0;
    // gradient w.r.t. the clamped logit z
    let mut g = Mat::zeros(n, c);
    let mut d_log_tau = 0.0;
    for i in 0..n {
        for cc in 0..c {
            let wt = weights.at(i, cc);
            if wt == 0.0 {
                continue;
            }
            let z = z_raw.at(i, cc) / tau;
            let clamped = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
            let yv = y.at(i, cc);
            value += wt * (softplus(clamped) - yv * clamped);
            if z.abs() <= SIGMOID_CLAMP {
                let dz = wt * (sigmoid(clamped) - yv);
                g.data[i * c + cc] = dz;
                d_log_tau -= dz * z;
            }
        }
    }

    let mut d_v = g.matmul(&w_norm);
    d_v.scale(1.0 / tau);
    let d_w_norm = {
        let mut m = g.matmul_tn(v);
        m.scale(1.0 / tau);
        m
    };
    // through w̃ = w / max(‖w‖, ε)
    let d_w = crate::mat::normalize_rows_backward(&d_w_norm, &w_norm, &norms);

    if !value.is_finite() {
        return Err(CoreError::NonFinite(format!("unimodal loss {value}")));
    }
    Ok((value, UnimodalGrads { d_v, d_w, d_log_tau }))
}

/// Unimodal multi-label BCE (class-averaged, summed over the batch).
pub fn unimodal_loss(v: &Mat, y: &Mat, w: &Mat, log_tau: f64) -> Result<(LossOutput, UnimodalGrads)> {
    let c = w.rows;
    if c == 0 {
        return Err(invalid("no classes (C = 0)"));
    }
    let mut weights = Mat::zeros(v.rows, c);
    let inv_c = 1.0 / c as f64;
    weights.data.iter_mut().for_each(|x| *x = inv_c);
    let tau = libm::exp(log_tau);
    let (value, grads) = weighted_bce(v, y, &weights, w, log_tau)?;
    let out = LossOutput {
        value,
        components: vec![(String::from("uni"), value)],
        diagnostics: Diagnostics {
            taus: vec![(String::from("tau"), tau)],
            ..Default::default()
        },
    };
    Ok((out, grads))
}

/// Partial-label BCE: each sample's per-class term is weighted by
/// `a[i][c] / |a_i|`; samples with no labeled class are skipped.
pub fn masked_unimodal_loss(
    v: &Mat,
    y: &Mat,
    masks: &Mat,
    w: &Mat,
    log_tau: f64,
) -> Result<(LossOutput, UnimodalGrads)> {
    if masks.rows != v.rows || masks.cols != w.rows {
        return Err(shape_err("mask matrix must be |B|×C"));
    }
    let (n, c) = (v.rows, w.rows);
    let mut weights = Mat::zeros(n, c);
    let mut skipped = 0usize;
    let mut any = false;
    for i in 0..n {
        let cardinality: f64 = masks.row(i).iter().sum();
        if cardinality == 0.0 {
            skipped += 1;
            continue;
        }
        any = true;
        for cc in 0..c {
            *weights.at_mut(i, cc) = masks.at(i, cc) / cardinality;
        }
    }
    if !any {
        return Err(invalid("no supervision in batch (all masks zero)"));
    }
    let tau = libm::exp(log_tau);
    let (value, grads) = weighted_bce(v, y, &weights, w, log_tau)?;
    let out = LossOutput {
        value,
        components: vec![(String::from("uni"), value)],
        diagnostics: Diagnostics {
            taus: vec![(String::from("tau"), tau)],
            skipped_samples: skipped,
            ..Default::default()
        },
    };
    Ok((out, grads))
}

/// Disentangled blend: masked unimodal BCE on the image-label projection plus
/// λ times the contrastive loss on the image-text projection.
#[allow(clippy::too_many_arguments)]
pub fn dlilp_loss(
    v_il: &Mat,
    v_it: &Mat,
    u: &Mat,
    y_img: &Mat,
    masks: &Mat,
    w: &Mat,
    log_tau_il: f64,
    log_tau_it: f64,
    lambda: f64,
) -> Result<(LossOutput, DlilpGrads)> {
    if lambda < 0.0 {
        return Err(invalid("lambda must be >= 0"));
    }
    let (uni_out, uni_grads) = masked_unimodal_loss(v_il, y_img, masks, w, log_tau_il)?;
    let (clip_out, clip_grads) = clip_loss(v_it, u, log_tau_it)?;
    let value = uni_out.value + lambda * clip_out.value;

    let mut d_v_it = clip_grads.d_v;
    d_v_it.scale(lambda);
    let mut d_u = clip_grads.d_u;
    d_u.scale(lambda);

    let out = LossOutput {
        value,
        components: vec![
            (String::from("uni"), uni_out.value),
            (String::from("clip"), clip_out.value),
            (String::from("clip_weighted"), lambda * clip_out.value),
        ],
        diagnostics: Diagnostics {
            taus: vec![
                (String::from("tau_il"), libm::exp(log_tau_il)),
                (String::from("tau_it"), libm::exp(log_tau_it)),
            ],
            skipped_samples: uni_out.diagnostics.skipped_samples,
            ..Default::default()
        },
    }
    .check_finite()?;
    Ok((
        out,
        DlilpGrads {
            d_v_il: uni_grads.d_v,
            d_v_it,
            d_u,
            d_w: uni_grads.d_w,
            d_log_tau_il: uni_grads.d_log_tau,
            d_log_tau_it: lambda * clip_grads.d_log_tau,
            d_lambda: clip_out.value,
        },
    ))
}
