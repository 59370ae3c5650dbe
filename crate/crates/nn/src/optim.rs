use std::io::{Read, Write};

use ndarray::Array2;

use crate::graph::Gradients;
use crate::params::{read_matrices, write_matrices, ParamStore};
use crate::NnError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of `total_steps` spent warming up linearly from zero.
    pub warmup: f64,
    /// When set, the rate decays linearly to zero at this step.
    pub total_steps: Option<u64>,
    pub clip_norm: Option<f64>,
}

/// Adam with a linear warmup / linear decay schedule.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| s.ids().map(|id| Array2::zeros(s.value(id).dim())).collect::<Vec<_>>();
        Adam {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        let c = &self.config;
        let Some(total) = c.total_steps else {
            return c.lr;
        };
        let total = total.max(1) as f64;
        let step = (self.step + 1) as f64;
        let warm = (c.warmup * total).max(0.0);
        if warm > 0.0 && step <= warm {
            c.lr * step / warm
        } else {
            let remain = (total - step).max(0.0) / (total - warm).max(1.0);
            c.lr * remain.max(0.0)
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let lr = self.current_lr();
        self.step += 1;
        let c = self.config;
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, value) in store.values_mut().iter_mut().enumerate() {
            let Some(g) = grads.slot(i) else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(value).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                let g = g * clip;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + c.eps);
            });
        }
    }

    /// Serialises moment estimates and the step counter.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(&self.step.to_le_bytes())?;
        let names: Vec<String> = (0..self.m.len()).map(|i| format!("m{i}")).collect();
        write_matrices(&mut w, &names, &self.m)?;
        let names: Vec<String> = (0..self.v.len()).map(|i| format!("v{i}")).collect();
        write_matrices(&mut w, &names, &self.v)
    }

    pub fn read_from<R: Read>(&mut self, mut r: R) -> Result<(), NnError> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let step = u64::from_le_bytes(buf);
        let (_, m) = read_matrices(&mut r)?;
        let (_, v) = read_matrices(&mut r)?;
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(NnError::Layout("optimizer state does not match parameters".into()));
        }
        for (dst, src) in self.m.iter().zip(&m).chain(self.v.iter().zip(&v)) {
            if dst.dim() != src.dim() {
                return Err(NnError::Layout("optimizer moment shape mismatch".into()));
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
