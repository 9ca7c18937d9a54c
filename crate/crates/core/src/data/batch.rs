//! Seeded mini-batch orderings.

use crate::error::{MaflError, Result};
use crate::numerics::rng::{streams, RngStream};

use super::bundle::SampleLabel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Row indices into the source bundle.
    pub indices: Vec<usize>,
    /// Positions within `indices` that hold fake samples.
    pub fake_positions: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// The stream used for one epoch's ordering.
fn epoch_rng(seed: u64, epoch: u64) -> RngStream {
    RngStream::new(seed).derive((streams::BATCHES << 32) | epoch)
}

/// Splits a seeded permutation of all rows into batches of `batch_size`,
/// keeping the last partial batch. The order depends only on
/// `(seed, epoch)` and the labels.
///
/// With `balanced`, reals and fakes are shuffled separately and then
/// interleaved at their overall ratio, so every batch holds close to the
/// dataset's real/fake proportion.
pub fn make_batches(
    labels: &[SampleLabel],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    balanced: bool,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(MaflError::Config(format!(
            "batch_size must be >= 2, got {batch_size}"
        )));
    }
    let mut rng = epoch_rng(seed, epoch);
    let order = if balanced {
        let (mut fakes, mut reals): (Vec<usize>, Vec<usize>) =
            (0..labels.len()).partition(|&i| labels[i].is_fake());
        rng.shuffle(&mut reals);
        rng.shuffle(&mut fakes);
        interleave(&reals, &fakes)
    } else {
        rng.permutation(labels.len())
    };
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            indices: chunk.to_vec(),
            fake_positions: chunk
                .iter()
                .enumerate()
                .filter(|(_, &i)| labels[i].is_fake())
                .map(|(p, _)| p)
                .collect(),
        })
        .collect())
}

/// Merges two sequences so each appears spread evenly through the result:
/// element `i` of a list of length `n` is placed at relative position
/// `(i + 0.5) / n`, ties going to `a`.
fn interleave(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j == b.len()
            || (i < a.len() && (2 * i + 1) * b.len() <= (2 * j + 1) * a.len());
        if take_a {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out
}
