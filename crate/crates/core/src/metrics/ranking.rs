//! Threshold-free ranking metrics. Fake (label 1) is the positive class.
//!
//! Tied scores form a single threshold: samples with equal scores are always
//! predicted together, so the result does not depend on input order.

use crate::error::{MaflError, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(MaflError::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MaflError::Input("NaN score".into()));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(MaflError::Label(format!("label {} at position {i}", labels[i])));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, stable within ties.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    idx
}

/// Step-wise average precision: `Σ_t (R_t − R_{t−1}) · P_t` over the
/// distinct score thresholds in descending order. Without ties this is the
/// mean, over positives, of precision at each positive's rank.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(MaflError::Undefined("average precision needs a positive label".into()));
    }
    let order = descending(scores);
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let block_tp_before = tp;
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let gained = tp - block_tp_before;
        if gained > 0 {
            ap += gained as f64 / pos as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// ROC AUC in concordance form, `(wins + ½·ties) / (P·N)`, computed via
/// mid-ranks in O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(MaflError::Undefined(
            "ROC AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order = descending(scores);
    order.reverse();
    // 1-based mid-ranks in ascending score order.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let start = i;
        while i < order.len() && scores[order[i]] == s {
            i += 1;
        }
        let mid = (start + 1 + i) as f64 / 2.0;
        let pos_in_block = order[start..i].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += mid * pos_in_block as f64;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}
