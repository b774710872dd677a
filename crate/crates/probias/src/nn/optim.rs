//! AdamW with decoupled weight decay and a linear learning-rate decay.

use super::params::ParamSet;
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Linear decay horizon in optimizer steps; 0 disables decay.
    pub total_steps: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            total_steps: 0,
        }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step_count: usize,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamSet) -> Self {
        let m = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        let v = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        AdamW {
            cfg,
            m,
            v,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Current learning rate under the linear schedule.
    pub fn current_lr(&self) -> f64 {
        if self.cfg.total_steps == 0 {
            self.cfg.lr
        } else {
            let frac = 1.0 - self.step_count as f64 / self.cfg.total_steps as f64;
            self.cfg.lr * frac.max(0.0)
        }
    }

    /// One update. `grad_scale` is applied to the accumulated gradients
    /// (1/accumulation_steps when micro-batching). Gradients are not
    /// cleared; the caller owns that.
    pub fn step(&mut self, params: &mut ParamSet, grad_scale: f64) {
        let lr = self.current_lr();
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let value = p.value.data_mut();
            for ((w, g0), (m, v)) in value
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = g0 * grad_scale;
                *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
                *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                // decoupled decay: applied to the weight, not the gradient
                *w -= lr * (mhat / (vhat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * *w);
            }
        }
    }
}
