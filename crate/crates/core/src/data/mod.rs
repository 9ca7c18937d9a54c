//! Embedding bundles, batching, splitting and synthetic data.

pub mod batch;
pub mod bundle;
pub mod split;
pub mod synth;

pub use batch::{make_batches, Batch};
pub use bundle::{read_bundle, write_bundle, BundleManifest, EmbeddingBundle, SampleLabel};
pub use split::{split_bundle, subsample_bundle};
pub use synth::{synth_generate, SynthConfig};
