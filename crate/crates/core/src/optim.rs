//! AdamW with decoupled weight decay and a warmup + cosine-decay schedule.

use crate::nn::Param;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed optimizer steps.
    pub t: u64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    /// Call once per batch before updating parameters.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Update one parameter in place using its accumulated gradient.
    pub fn step_param(&self, p: &mut Param, lr: f64) {
        let t = self.t.max(1) as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for i in 0..p.value.data.len() {
            let g = p.grad.data[i];
            p.m.data[i] = self.beta1 * p.m.data[i] + (1.0 - self.beta1) * g;
            p.v.data[i] = self.beta2 * p.v.data[i] + (1.0 - self.beta2) * g * g;
            let m_hat = p.m.data[i] / bc1;
            let v_hat = p.v.data[i] / bc2;
            let mut x = p.value.data[i];
            if p.decay {
                x -= lr * self.weight_decay * x;
            }
            x -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            p.value.data[i] = x;
        }
    }
}

/// Per-epoch learning rate: linear ramp over the warmup epochs, then cosine
/// decay to zero at `max_epochs`.
pub fn schedule_lr(base: f64, epoch: usize, max_epochs: usize, warmup_epochs: usize) -> f64 {
    if epoch < warmup_epochs {
        return base * (epoch + 1) as f64 / (warmup_epochs + 1) as f64;
    }
    let span = (max_epochs.saturating_sub(warmup_epochs)).max(1) as f64;
    let progress = (epoch - warmup_epochs) as f64 / span;
    base * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;

    #[test]
    fn adamw_descends_a_quadratic() {
        // minimize (x-3)^2
        let mut p = Param::new(Mat::from_vec(1, 1, vec![0.0]).unwrap(), false);
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..500 {
            p.zero_grad();
            p.grad.data[0] = 2.0 * (p.value.data[0] - 3.0);
            opt.begin_step();
            opt.step_param(&mut p, opt.lr);
        }
        assert!((p.value.data[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn schedule_shape() {
        let base = 1.0;
        assert!(schedule_lr(base, 0, 10, 1) < base);
        assert!((schedule_lr(base, 1, 10, 1) - base).abs() < 1e-12);
        assert!(schedule_lr(base, 9, 10, 1) < 0.1);
        // monotone decay after warmup
        let mut prev = f64::INFINITY;
        for e in 1..10 {
            let lr = schedule_lr(base, e, 10, 1);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
