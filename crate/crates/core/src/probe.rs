//! Few-shot linear probing: ℓ2-regularized multinomial logistic regression on
//! frozen features, with an inverse-regularization sweep.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::mat::Mat;
use crate::mathx::softmax_inplace;
use crate::nn::Param;
use crate::optim::AdamW;
use crate::transfer::argmax_rows;

/// Which vision features the probe consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTap {
    /// Pre-projection features ṽ (the default; transfers better).
    PreProjection,
    /// Projected unit-norm embeddings v.
    Projected,
}

/// Probe protocol parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeSpec {
    pub k_shots: usize,
    pub feature_tap: FeatureTap,
    /// Inverse regularization strengths tried when k ≥ 4.
    pub inverse_reg_sweep: Vec<f64>,
    pub seed: u64,
}

impl ProbeSpec {
    pub fn new(k_shots: usize, seed: u64) -> Self {
        ProbeSpec {
            k_shots,
            feature_tap: FeatureTap::PreProjection,
            inverse_reg_sweep: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            seed,
        }
    }
}

/// Trained multinomial logistic classifier with its standardization constants.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    /// n_classes × dim
    pub w: Mat,
    pub b: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Inverse regularization strength actually used.
    pub chosen_inverse_reg: f64,
}

fn standardize_fit(features: &Mat) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (features.rows, features.cols);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(features.row(i).iter()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let c = features.at(i, j) - mean[j];
            var[j] += c * c;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = libm::sqrt(v / n as f64);
            if s < 1e-8 {
                1.0
            } else {
                s
            }
        })
        .collect();
    (mean, scale)
}

fn standardize_apply(features: &Mat, mean: &[f64], scale: &[f64]) -> Mat {
    let mut out = features.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        for j in 0..row.len() {
            row[j] = (row[j] - mean[j]) / scale[j];
        }
    }
    out
}

/// Full-batch training of softmax regression: mean cross-entropy plus
/// `‖W‖²/(2·c_inv·N)`, minimized with Adam to effective convergence.
fn fit(x_std: &Mat, labels: &[usize], n_classes: usize, c_inv: f64) -> (Mat, Vec<f64>) {
    let (n, d) = (x_std.rows, x_std.cols);
    let mut w = Param::new(Mat::zeros(n_classes, d), false);
    let mut b = Param::new(Mat::zeros(1, n_classes), false);
    let mut opt = AdamW::new(0.1, 0.0);
    let reg = 1.0 / (c_inv * n as f64);
    for _ in 0..500 {
        let mut p = x_std.matmul_nt(&w.value);
        for i in 0..n {
            let row = p.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += b.value.data[j];
            }
            softmax_inplace(row);
            row[labels[i]] -= 1.0;
        }
        p.scale(1.0 / n as f64);
        w.zero_grad();
        b.zero_grad();
        w.grad.add_scaled(&p.matmul_tn(x_std), 1.0);
        w.grad.add_scaled(&w.value, reg);
        for i in 0..n {
            for j in 0..n_classes {
                b.grad.data[j] += p.at(i, j);
            }
        }
        opt.begin_step();
        opt.step_param(&mut w, opt.lr);
        opt.step_param(&mut b, opt.lr);
    }
    (w.value, b.value.data)
}

impl LinearClassifier {
    pub fn predict(&self, features: &Mat) -> Vec<usize> {
        argmax_rows(&self.scores(features))
    }

    pub fn scores(&self, features: &Mat) -> Mat {
        let x = standardize_apply(features, &self.mean, &self.scale);
        let mut s = x.matmul_nt(&self.w);
        for i in 0..s.rows {
            let row = s.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.b[j];
            }
        }
        s
    }

    pub fn train_accuracy(&self, features: &Mat, labels: &[usize]) -> f64 {
        let preds = self.predict(features);
        let hits = preds.iter().zip(labels.iter()).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len() as f64
    }
}

/// Train the probe. For k ≥ 4 the inverse-regularization value is chosen by a
/// deterministic half split of the support itself (no held-out data exists in
/// the few-shot regime), then the model is refit on the full support. For
/// k < 4 the sweep's middle value is used directly.
pub fn train_linear_probe(
    features: &Mat,
    labels: &[usize],
    n_classes: usize,
    spec: &ProbeSpec,
) -> Result<LinearClassifier> {
    if features.rows != labels.len() || features.rows == 0 {
        return Err(invalid("features/labels mismatch or empty support"));
    }
    if n_classes < 2 {
        return Err(invalid("probe needs at least 2 classes"));
    }
    if spec.inverse_reg_sweep.is_empty() {
        return Err(invalid("empty regularization sweep"));
    }
    let (mean, scale) = standardize_fit(features);
    let x_std = standardize_apply(features, &mean, &scale);

    let chosen = if spec.k_shots >= 4 && spec.inverse_reg_sweep.len() > 1 {
        // deterministic per-class half split of the support
        let mut train_idx = Vec::new();
        let mut val_idx = Vec::new();
        for c in 0..n_classes {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let half = members.len() / 2;
            train_idx.extend_from_slice(&members[..half.max(1)]);
            val_idx.extend_from_slice(&members[half.max(1)..]);
        }
        if val_idx.is_empty() {
            spec.inverse_reg_sweep[spec.inverse_reg_sweep.len() / 2]
        } else {
            let gather = |idx: &[usize]| -> (Mat, Vec<usize>) {
                let mut m = Mat::zeros(idx.len(), x_std.cols);
                let mut l = Vec::with_capacity(idx.len());
                for (r, &i) in idx.iter().enumerate() {
                    m.row_mut(r).copy_from_slice(x_std.row(i));
                    l.push(labels[i]);
                }
                (m, l)
            };
            let (xt, lt) = gather(&train_idx);
            let (xv, lv) = gather(&val_idx);
            let mut best = (f64::NEG_INFINITY, spec.inverse_reg_sweep[0]);
            for &c_inv in &spec.inverse_reg_sweep {
                let (w, b) = fit(&xt, &lt, n_classes, c_inv);
                let clf = LinearClassifier {
                    w,
                    b,
                    mean: vec![0.0; x_std.cols],
                    scale: vec![1.0; x_std.cols],
                    chosen_inverse_reg: c_inv,
                };
                let acc = clf.train_accuracy(&xv, &lv);
                if acc > best.0 {
                    best = (acc, c_inv);
                }
            }
            best.1
        }
    } else {
        spec.inverse_reg_sweep[spec.inverse_reg_sweep.len() / 2]
    };

    let (w, b) = fit(&x_std, labels, n_classes, chosen);
    Ok(LinearClassifier {
        w,
        b,
        mean,
        scale,
        chosen_inverse_reg: chosen,
    })
}
