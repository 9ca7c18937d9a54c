//! Shared fixtures for the benchmarks in `benches/`.

use mafl_core::data::{make_batches, synth_generate, EmbeddingBundle, SynthConfig};
use mafl_core::experiment::HeldOutConfig;
use mafl_core::model::{init_params, Checkpoint, ModelSpec};
use mafl_core::numerics::rng::RngStream;
use mafl_core::training::{BatchData, TrainConfig};
use mafl_core::Matrix;

/// Default synthetic data (8000 samples of dimension 64).
pub fn synthetic_bundle() -> EmbeddingBundle {
    synth_generate(&SynthConfig::default()).expect("default synth config is valid")
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f32> {
    let mut rng = RngStream::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal() as f32)
}

/// Fresh experiment-sized model plus one full training batch.
pub fn training_step_fixture() -> (Checkpoint, BatchData<f32>, TrainConfig) {
    let spec: ModelSpec = HeldOutConfig::default().model_spec();
    let cfg = TrainConfig::default();
    let bundle = synthetic_bundle();
    let batches = make_batches(&bundle.labels, cfg.batch_size, 0, 0, false).expect("batching");
    let batch = BatchData::gather(&bundle, &batches[0]);
    let model = init_params(&spec, &RngStream::new(0)).expect("init");
    (Checkpoint::fresh(model, cfg.adamw()), batch, cfg)
}

/// Scores and labels with a mild class separation.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = RngStream::new(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let scores = labels.iter().map(|&y| y as f64 + rng.normal()).collect();
    (scores, labels)
}
