//! Stratified splitting and subsampling.

use std::collections::BTreeMap;

use crate::error::{MaflError, Result};
use crate::numerics::rng::{streams, RngStream};

use super::bundle::{EmbeddingBundle, SampleLabel};

/// Rows grouped by `(authenticity, generator_id)`, in row order.
fn strata(labels: &[SampleLabel]) -> BTreeMap<(u8, i32), Vec<usize>> {
    let mut m: BTreeMap<(u8, i32), Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        m.entry((l.authenticity, l.generator_id)).or_default().push(i);
    }
    m
}

/// Integer shares of `total` proportional to `weights` (largest remainder,
/// ties to the earlier share).
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Splits into train/val/test, stratified by `(authenticity, generator_id)`.
/// Each output keeps the source row order.
pub fn split_bundle(
    bundle: &EmbeddingBundle,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(EmbeddingBundle, EmbeddingBundle, EmbeddingBundle)> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f.is_nan() || f < 0.0) {
        return Err(MaflError::Config(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let parts = fractions.iter().filter(|&&f| f > 0.0).count();
    let mut rng = RngStream::new(seed).derive(streams::SPLIT);
    let mut out: [Vec<usize>; 3] = Default::default();
    for ((auth, gen), mut rows) in strata(&bundle.labels) {
        if rows.len() < parts {
            return Err(MaflError::Stratification(format!(
                "stratum (authenticity={auth}, generator_id={gen}) has {} samples, \
                 fewer than the {parts} non-empty splits",
                rows.len()
            )));
        }
        rng.shuffle(&mut rows);
        let counts = largest_remainder(rows.len(), &fractions);
        let mut start = 0;
        for (part, &c) in out.iter_mut().zip(&counts) {
            part.extend_from_slice(&rows[start..start + c]);
            start += c;
        }
    }
    let [mut a, mut b, mut c] = out;
    for part in [&mut a, &mut b, &mut c] {
        part.sort_unstable();
    }
    Ok((bundle.subset(&a)?, bundle.subset(&b)?, bundle.subset(&c)?))
}

/// Stratified subsample of `n` rows, allocated across strata in proportion
/// to their size.
pub fn subsample_bundle(bundle: &EmbeddingBundle, n: usize, seed: u64) -> Result<EmbeddingBundle> {
    if n > bundle.len() {
        return Err(MaflError::Config(format!(
            "cannot subsample {n} rows from {}",
            bundle.len()
        )));
    }
    let groups = strata(&bundle.labels);
    if n < groups.len() {
        return Err(MaflError::Stratification(format!(
            "subsample of {n} is smaller than the {} strata",
            groups.len()
        )));
    }
    let sizes: Vec<f64> = groups.values().map(|r| r.len() as f64).collect();
    let counts = largest_remainder(n, &sizes);
    let mut rng = RngStream::new(seed).derive(streams::SUBSAMPLE);
    let mut keep = Vec::with_capacity(n);
    for (mut rows, c) in groups.into_values().zip(counts) {
        rng.shuffle(&mut rows);
        keep.extend_from_slice(&rows[..c]);
    }
    keep.sort_unstable();
    bundle.subset(&keep)
}
