//! Adam with constant learning rate.

use crate::error::{Error, Result};
use crate::models::ParameterRegistry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// First/second moment buffers aligned with a registry's entries.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParameterRegistry) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|e| vec![0.0; e.tensor.len()]).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update. `grads[i]` is `None` for entries that are not trained.
    pub fn update(
        &mut self,
        cfg: &AdamConfig,
        params: &mut ParameterRegistry,
        grads: &[Option<Vec<f32>>],
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Architecture(format!(
                "optimizer tracks {} tensors, registry has {}, got {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let step_size = (cfg.lr * bc2.sqrt() / bc1) as f32;
        let (b1, b2, eps) = (cfg.beta1 as f32, cfg.beta2 as f32, (cfg.eps * bc2.sqrt()) as f32);
        for (i, entry) in params.entries_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in entry.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step_size * *m / (v.sqrt() + eps);
            }
        }
        Ok(())
    }
}
