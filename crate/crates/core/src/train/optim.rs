//! Adam with bias correction, and the plateau learning-rate schedule.

use std::collections::BTreeMap;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

/// Adam accumulators. Moments are kept in f64 so long runs do not lose
/// low-order bits; parameters stay f32.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }
}

/// One bias-corrected Adam update over every parameter present in `grads`.
/// Rejects non-finite gradients outright rather than corrupting the moments.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f32>>,
    state: &mut OptimizerState,
) -> Result<()> {
    for (name, g) in grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in parameter {name}")));
        }
        if params.get(name)?.numel() != g.len() {
            return Err(Error::Shape(format!("gradient length mismatch for parameter {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, g) in grads {
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let p = params.get_mut(name)?;
        for (i, slot) in p.data_mut().iter_mut().enumerate() {
            let gi = g[i] as f64;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *slot = (*slot as f64 - state.lr * m_hat / (v_hat.sqrt() + state.eps)) as f32;
        }
    }
    Ok(())
}

/// Plateau rule: halve the learning rate when validation loss fails to
/// improve for `patience` consecutive epochs. The rate never increases and
/// never drops below `min_lr`, so a noisy validation set cannot silently
/// freeze the run.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    best: Option<f64>,
    stale: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { patience: 2, factor: 0.5, min_lr: 0.0, best: None, stale: 0 }
    }
}

impl Schedule {
    /// Plateau schedule that never cuts the rate below `initial_lr / 64`.
    pub fn with_floor(initial_lr: f64) -> Self {
        Self { min_lr: initial_lr / 64.0, ..Self::default() }
    }

    /// Feed one epoch's validation loss; returns true when the rate was cut.
    pub fn observe(&mut self, val_loss: f64, lr: &mut f64) -> bool {
        match self.best {
            Some(best) if val_loss >= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.stale = 0;
                    let cut = (*lr * self.factor).max(self.min_lr);
                    if cut < *lr {
                        *lr = cut;
                        return true;
                    }
                }
            }
            _ => {
                self.best = Some(val_loss);
                self.stale = 0;
            }
        }
        false
    }
}
