use super::{ParamStore, Real};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

impl Adam {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers, one entry per store tensor.
    pub fn state(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// Applies one update from the gradients in `store`, then clears them.
    /// A non-finite gradient aborts the step with [`Error::Diverged`].
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = store.get(id).grad() {
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Diverged {
                        stage: "gradient",
                        index: pos,
                        reason: format!("non-finite gradient in {}", store.name(id)),
                    });
                }
            }
        }
        if self.m.len() != store.len() {
            self.m = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = store.get(id).grad().map(|g| g.iter().map(|v| v.as_f64() as f32).collect::<Vec<_>>()) else {
                continue;
            };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.get_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] as f64 / c1;
                let vh = v[i] as f64 / c2;
                let upd = lr * mh / (vh.sqrt() + self.eps);
                p[i] = T::from_f64(p[i].as_f64() - upd);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Linear warm-up followed by step decay, evaluated per epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_epochs: usize,
    pub warmup_ratio: f64,
    pub step_size: usize,
    pub decay: f64,
}

impl LrSchedule {
    /// Rate for a zero-based epoch index. Warm-up ramps linearly from
    /// `warmup_ratio * base` at epoch 0 to `base` at the last warm-up epoch.
    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            let frac = if self.warmup_epochs > 1 {
                epoch as f64 / (self.warmup_epochs - 1) as f64
            } else {
                1.0
            };
            self.base * (self.warmup_ratio + (1.0 - self.warmup_ratio) * frac)
        } else {
            let k = (epoch - self.warmup_epochs) / self.step_size.max(1);
            self.base * self.decay.powi(k as i32)
        }
    }
}
