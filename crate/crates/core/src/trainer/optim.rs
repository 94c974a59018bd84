use super::model::{Gradients, Model};

/// Adaptive-moment optimiser with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, num_params: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update with learning rate `lr`. A zero rate leaves the model untouched.
    pub fn update(&mut self, model: &mut Model, grads: &Gradients, lr: f64) {
        let g = grads.to_flat();
        assert_eq!(
            g.len(),
            self.m.len(),
            "gradient size does not match optimiser state"
        );
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        let mut p = model.to_flat();
        for i in 0..p.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            if lr == 0.0 {
                continue;
            }
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            p[i] -= lr * (weight_decay * p[i] + mhat / (vhat.sqrt() + eps));
        }
        if lr != 0.0 {
            model.set_flat(&p);
        }
    }
}

/// Exponential warmup, constant plateau, then a single drop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub warmup_epochs: usize,
    /// First epoch of the cooldown.
    pub constant_until: usize,
    pub cooldown_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 4,
            constant_until: 24,
            cooldown_factor: 10.0,
        }
    }
}

impl LrSchedule {
    /// `lr·(1 − exp(−(epoch+1)/w))` during the `w` warmup epochs, `lr` until
    /// `constant_until`, `lr / cooldown_factor` afterwards.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            base * (1.0 - (-((epoch + 1) as f64) / self.warmup_epochs as f64).exp())
        } else if epoch < self.constant_until {
            base
        } else {
            base / self.cooldown_factor
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule {
            warmup_epochs: 10,
            constant_until: 60,
            cooldown_factor: 10.0,
        };
        assert!((s.lr_at(1.0, 9) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!(s.lr_at(1.0, 0) < s.lr_at(1.0, 5));
        assert_eq!(s.lr_at(2.0, 10), 2.0);
        assert_eq!(s.lr_at(2.0, 59), 2.0);
        assert!((s.lr_at(2.0, 60) - 0.2).abs() < 1e-15);
        let d = LrSchedule::default();
        assert!((d.lr_at(1.0, 3) - 0.632_120_558_828_557_7).abs() < 1e-12);
    }
}
