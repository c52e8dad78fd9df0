//! Adam updates and the reduce-on-plateau learning-rate schedule.

use crate::error::{Error, Result};

/// Per-parameter-tensor Adam state: first and second moment estimates plus
/// the shared timestep.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step: m <- β₁m + (1-β₁)g, v <- β₂v + (1-β₂)g², bias-corrected
/// m̂ and v̂, then p <- p - lr·m̂/(√v̂ + ε).
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch(format!(
            "adam_step shapes differ: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Stateful reduce-on-plateau schedule over a monitored loss: after
/// `patience` consecutive epochs without strict improvement the learning rate
/// is multiplied by `factor` (floored at `min_lr`) and the counter resets.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    best: Option<f64>,
    wait: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, patience: usize, factor: f64, min_lr: f64) -> Result<PlateauScheduler> {
        if patience == 0 {
            return Err(Error::InvalidArgument("plateau patience must be at least 1".into()));
        }
        Ok(PlateauScheduler {
            lr: initial_lr,
            best: None,
            wait: 0,
            patience,
            factor,
            min_lr,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feed one epoch's monitored value; returns the learning rate to use
    /// after this epoch.
    pub fn observe(&mut self, value: f64) -> f64 {
        match self.best {
            None => {
                self.best = Some(value);
            }
            Some(best) if value < best => {
                self.best = Some(value);
                self.wait = 0;
            }
            Some(_) => {
                self.wait += 1;
                if self.wait >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.min_lr);
                    self.wait = 0;
                }
            }
        }
        self.lr
    }
}

/// Replay a full monitored history through a fresh schedule and return the
/// final learning rate.
pub fn reduce_lr_on_plateau(
    history: &[f64],
    patience: usize,
    factor: f64,
    min_lr: f64,
    initial_lr: f64,
) -> Result<f64> {
    let mut scheduler = PlateauScheduler::new(initial_lr, patience, factor, min_lr)?;
    for &value in history {
        scheduler.observe(value);
    }
    Ok(scheduler.lr())
}
