pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck_suite;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{MaflError, Result};
pub use numerics::*;
