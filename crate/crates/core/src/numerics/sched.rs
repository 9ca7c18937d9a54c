//! Reduce-on-plateau learning-rate decay and early stopping, both monitoring
//! a metric that should increase.

use serde::{Deserialize, Serialize};

use crate::error::{MaflError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    /// `None` until the first metric is seen.
    pub best_metric: Option<f64>,
    pub epochs_since_improve: u32,
    pub factor: f64,
    pub patience: u32,
    pub current_lr: f64,
    pub min_lr: f64,
}

impl PlateauState {
    pub fn new(lr: f64, factor: f64, patience: u32, min_lr: f64) -> Self {
        Self {
            best_metric: None,
            epochs_since_improve: 0,
            factor,
            patience,
            current_lr: lr,
            min_lr,
        }
    }
}

/// Feeds one validation metric to the scheduler and returns the lr to use next.
///
/// A strictly larger metric counts as an improvement and resets the counter.
/// The `patience + 1`-th consecutive non-improvement multiplies the lr by
/// `factor` (never below `min_lr`) and restarts the count.
pub fn plateau_scheduler_step(state: &mut PlateauState, metric: f64) -> Result<f64> {
    if !metric.is_finite() {
        return Err(MaflError::Numeric("plateau scheduler metric".into()));
    }
    match state.best_metric {
        Some(best) if metric <= best => {
            state.epochs_since_improve += 1;
            if state.epochs_since_improve > state.patience {
                state.current_lr = (state.current_lr * state.factor).max(state.min_lr);
                state.epochs_since_improve = 0;
            }
        }
        _ => {
            state.best_metric = Some(metric);
            state.epochs_since_improve = 0;
        }
    }
    Ok(state.current_lr)
}

/// Tracks the best epoch and signals a stop after `patience` epochs without a
/// strict improvement. Ties keep the earlier epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: u32,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<u32>,
    pub epochs_since_improve: u32,
}

impl EarlyStopping {
    pub fn new(patience: u32) -> Self {
        Self {
            patience,
            best_metric: None,
            best_epoch: None,
            epochs_since_improve: 0,
        }
    }

    /// Returns true when `metric` is a new best.
    pub fn observe(&mut self, epoch: u32, metric: f64) -> bool {
        match self.best_metric {
            Some(best) if metric <= best => {
                self.epochs_since_improve += 1;
                false
            }
            _ => {
                self.best_metric = Some(metric);
                self.best_epoch = Some(epoch);
                self.epochs_since_improve = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_since_improve >= self.patience
    }
}
