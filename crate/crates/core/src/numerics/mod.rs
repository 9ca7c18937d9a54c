//! Numeric substrate: matrices, dense networks, optimizer, schedules, RNG.

pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod optim;
pub mod rng;
pub mod sched;

pub use matrix::{l2_normalize_rows, softmax_rows, Matrix, Real};
pub use mlp::{mlp_backward, mlp_forward, Activation, Dense, ForwardCache, Mlp, ParamTensor};
pub use optim::{adamw_step, AdamW, AdamWConfig, AdamWState};
pub use rng::{RngState, RngStream};
pub use sched::{plateau_scheduler_step, EarlyStopping, PlateauState};
