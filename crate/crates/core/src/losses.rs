//! Classification loss and the three adversarial debiasing terms.
//!
//! Every loss returns its scalar value (in `f64`) together with the gradient
//! with respect to its input, already divided by the batch size.

use serde::{Deserialize, Serialize};

use crate::error::{MaflError, Result};
use crate::numerics::matrix::{row_norm, softmax_into, Matrix, Real};

/// Probabilities below this are clamped inside logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LossGrad<T: Real = f32> {
    pub value: f64,
    pub grad: Matrix<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvLossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AdvLossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.3,
        }
    }
}

impl AdvLossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(MaflError::Config(format!(
                "adversarial weights must be non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Every scalar that makes up one training objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub entropy: f64,
    pub alignment: f64,
    pub reverse: f64,
    pub adv: f64,
    pub total: f64,
    pub lambda: f64,
    /// Set when the batch had fewer than two fakes and alignment was taken as 0.
    pub alignment_degenerate: bool,
}

/// Log-softmax of one row, in `f64`.
fn log_softmax_into<T: Real>(row: &[T], out: &mut [f64]) {
    let max = row
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = row
        .iter()
        .map(|v| (v.as_f64() - max).exp())
        .sum::<f64>()
        .ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v.as_f64() - max - lse;
    }
}

fn check_classes<T: Real>(logits: &Matrix<T>, context: &str) -> Result<()> {
    if logits.cols() < 2 {
        return Err(MaflError::Config(format!(
            "{context} needs at least 2 classes, got {}",
            logits.cols()
        )));
    }
    logits.ensure_finite(context)
}

fn check_labels(labels: &[usize], rows: usize, k: usize, context: &str) -> Result<()> {
    if labels.len() != rows {
        return Err(MaflError::dim(format!("{context} labels"), rows, labels.len()));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(MaflError::Label(format!(
            "{context}: label {y} at row {i} is outside [0, {k})"
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy over `K` classes.
pub fn cross_entropy<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> Result<LossGrad<T>> {
    check_classes(logits, "cross_entropy")?;
    check_labels(labels, logits.rows(), logits.cols(), "cross_entropy")?;
    let n = logits.rows();
    if n == 0 {
        return Err(MaflError::Input("cross_entropy on an empty batch".into()));
    }
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut logp = vec![0.0; logits.cols()];
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        log_softmax_into(logits.row(r), &mut logp);
        total -= logp[y];
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            let d = logp[j].exp() - if j == y { 1.0 } else { 0.0 };
            *g = T::from_f64(d / n as f64);
        }
    }
    Ok(LossGrad {
        value: total / n as f64,
        grad,
    })
}

/// Two-class cross-entropy on the real/fake head; `authenticity` is 0 for
/// real and 1 for fake.
pub fn real_fake_loss<T: Real>(logits: &Matrix<T>, authenticity: &[u8]) -> Result<LossGrad<T>> {
    if logits.cols() != 2 {
        return Err(MaflError::dim("real_fake_loss logits", 2, logits.cols()));
    }
    if let Some((i, &a)) = authenticity.iter().enumerate().find(|(_, &a)| a > 1) {
        return Err(MaflError::Label(format!(
            "authenticity {a} at row {i} is not 0 or 1"
        )));
    }
    let labels: Vec<usize> = authenticity.iter().map(|&a| a as usize).collect();
    cross_entropy(logits, &labels)
}

/// Mean of `KL(softmax(z_i) ‖ uniform)` = `log K − H(p_i)`.
///
/// The gradient with respect to `z_ij` is `p_ij (log p_ij − Σ_k p_ik log p_ik) / N`.
/// An empty batch has value 0.
pub fn entropy_max_loss<T: Real>(z: &Matrix<T>) -> Result<LossGrad<T>> {
    check_classes(z, "entropy_max_loss")?;
    let (n, k) = z.shape();
    let mut grad = Matrix::zeros(n, k);
    if n == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let log_k = (k as f64).ln();
    let mut logp = vec![0.0; k];
    let mut total = 0.0;
    for r in 0..n {
        log_softmax_into(z.row(r), &mut logp);
        let neg_h: f64 = logp.iter().map(|&l| l.exp() * l).sum();
        total += log_k + neg_h;
        for (g, &l) in grad.row_mut(r).iter_mut().zip(&logp) {
            *g = T::from_f64(l.exp() * (l - neg_h) / n as f64);
        }
    }
    Ok(LossGrad {
        value: total / n as f64,
        grad,
    })
}

#[derive(Debug, Clone)]
pub struct AlignmentLoss<T: Real = f32> {
    pub value: f64,
    pub grad: Matrix<T>,
    /// Fewer than two rows: the value is defined as 0 with zero gradient.
    pub degenerate: bool,
}

/// Mean over ordered pairs `i ≠ j` of `1 − cos(f_i, f_j)`.
///
/// Computed in O(N·D) as `1 − (‖Σ f‖² − Σ ‖f‖²) / (N(N−1))` on the normalized
/// rows. Zero rows normalize to zero and receive zero gradient.
pub fn feature_alignment_loss<T: Real>(features: &Matrix<T>) -> Result<AlignmentLoss<T>> {
    features.ensure_finite("feature_alignment_loss")?;
    let (n, d) = features.shape();
    let mut grad = Matrix::zeros(n, d);
    if n < 2 {
        return Ok(AlignmentLoss {
            value: 0.0,
            grad,
            degenerate: true,
        });
    }
    let norms: Vec<f64> = (0..n).map(|r| row_norm(features.row(r))).collect();
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            features
                .row(r)
                .iter()
                .map(|&v| if norms[r] > 0.0 { v.as_f64() / norms[r] } else { 0.0 })
                .collect()
        })
        .collect();
    let mut s = vec![0.0; d];
    let mut self_dots = 0.0;
    for f in &unit {
        for (a, &b) in s.iter_mut().zip(f) {
            *a += b;
        }
        self_dots += f.iter().map(|v| v * v).sum::<f64>();
    }
    let pairs = (n * (n - 1)) as f64;
    let ss: f64 = s.iter().map(|v| v * v).sum();
    // Σ_{i≠j} S_ij, with zero rows contributing nothing.
    let off_diag = ss - self_dots;
    let value = 1.0 - off_diag / pairs;

    for (r, f) in unit.iter().enumerate() {
        if norms[r] == 0.0 {
            continue;
        }
        // ∂/∂f_r of −Σ_{i≠j} f_i·f_j / P is −2 (s − f_r) / P; then chain
        // through f = h/‖h‖ with Jacobian (I − f fᵀ)/‖h‖.
        let gf: Vec<f64> = s
            .iter()
            .zip(f)
            .map(|(&si, &fi)| -2.0 * (si - fi) / pairs)
            .collect();
        let dot: f64 = gf.iter().zip(f).map(|(a, b)| a * b).sum();
        for ((g, &gfi), &fi) in grad.row_mut(r).iter_mut().zip(&gf).zip(f) {
            *g = T::from_f64((gfi - dot * fi) / norms[r]);
        }
    }
    Ok(AlignmentLoss {
        value,
        grad,
        degenerate: false,
    })
}

/// Mean over samples of `−Σ_{k≠y_i} log max(p_ik, 1e-12)`, from logits.
///
/// Clamped terms are constant and contribute no gradient. An empty batch has
/// value 0.
pub fn label_reversal_loss<T: Real>(z: &Matrix<T>, labels: &[usize]) -> Result<LossGrad<T>> {
    check_classes(z, "label_reversal_loss")?;
    let (n, k) = z.shape();
    check_labels(labels, n, k, "label_reversal_loss")?;
    let mut grad = Matrix::zeros(n, k);
    if n == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let log_clamp = LOG_CLAMP.ln();
    let mut logp = vec![0.0; k];
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        log_softmax_into(z.row(r), &mut logp);
        let mut live = 0.0;
        let mut is_live = vec![false; k];
        for j in (0..k).filter(|&j| j != y) {
            if logp[j] >= log_clamp {
                total -= logp[j];
                is_live[j] = true;
                live += 1.0;
            } else {
                total -= log_clamp;
            }
        }
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            let d = live * logp[j].exp() - if is_live[j] { 1.0 } else { 0.0 };
            *g = T::from_f64(d / n as f64);
        }
    }
    Ok(LossGrad {
        value: total / n as f64,
        grad,
    })
}

/// Value of the reversal loss from probabilities directly.
pub fn label_reversal_value<T: Real>(probs: &Matrix<T>, labels: &[usize]) -> Result<f64> {
    let (n, k) = probs.shape();
    check_labels(labels, n, k, "label_reversal_value")?;
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        for (j, &p) in probs.row(r).iter().enumerate() {
            if j != y {
                total -= p.as_f64().max(LOG_CLAMP).ln();
            }
        }
    }
    Ok(total / n as f64)
}

pub fn combine_adversarial(entropy: f64, alignment: f64, reverse: f64, w: &AdvLossWeights) -> f64 {
    entropy + w.alpha * alignment + w.beta * reverse
}

pub fn total_loss(cls: f64, adv: f64, lambda: f64) -> f64 {
    cls + lambda * adv
}

/// Probabilities of each row, for callers that need them unnormalized by N.
pub fn softmax_row_f64<T: Real>(row: &[T]) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    softmax_into(row, &mut out);
    out
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::finite_difference_check;
    use crate::numerics::rng::RngStream;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    fn random(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = RngStream::new(seed);
        Matrix::from_fn(n, d, |_, _| 2.0 * rng.normal())
    }

    /// Checks `grad` of `f` at `x` by central differences.
    fn check_grad(x: &Matrix<f64>, grad: &Matrix<f64>, f: impl Fn(&Matrix<f64>) -> f64) {
        let (r, c) = x.shape();
        let report = finite_difference_check(x.as_slice(), grad.as_slice(), 1e-5, |p| {
            f(&Matrix::new(r, c, p.to_vec()).unwrap()).into()
        });
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn real_fake_examples() {
        close(real_fake_loss(&m(&[&[0.0, 0.0]]), &[1]).unwrap().value, 2f64.ln(), 1e-12);
        assert!(real_fake_loss(&m(&[&[10.0, -10.0]]), &[0]).unwrap().value < 1e-8);
        // Per-sample oracle: −log softmax, averaged.
        let z = m(&[&[1.0, 2.0], &[0.5, -1.5]]);
        let per = |a: f64, b: f64, y: usize| {
            let (za, zb) = if y == 0 { (a, b) } else { (b, a) };
            -(za.exp() / (za.exp() + zb.exp())).ln()
        };
        let want = 0.5 * (per(1.0, 2.0, 1) + per(0.5, -1.5, 0));
        close(real_fake_loss(&z, &[1, 0]).unwrap().value, want, 1e-12);
        assert!(matches!(
            real_fake_loss(&z, &[1, 2]),
            Err(MaflError::Label(_))
        ));
    }

    #[test]
    fn entropy_examples() {
        close(entropy_max_loss(&m(&[&[0.0, 0.0, 0.0]])).unwrap().value, 0.0, 1e-15);
        let h = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        let v = entropy_max_loss(&m(&[&[3f64.ln(), 0.0]])).unwrap().value;
        close(v, 2f64.ln() - h, 1e-12);
        close(v, 0.130812, 1e-6);
        close(entropy_max_loss(&m(&[&[50.0, 0.0]])).unwrap().value, 0.693147, 1e-6);
        assert!(matches!(
            entropy_max_loss(&m(&[&[1.0]])),
            Err(MaflError::Config(_))
        ));
    }

    #[test]
    fn alignment_examples() {
        let same = feature_alignment_loss(&m(&[&[1.0, 2.0], &[1.0, 2.0], &[2.0, 4.0]])).unwrap();
        close(same.value, 0.0, 1e-12);
        close(feature_alignment_loss(&m(&[&[1.0, 0.0], &[0.0, 3.0]])).unwrap().value, 1.0, 1e-12);
        close(feature_alignment_loss(&m(&[&[1.0, 1.0], &[-2.0, -2.0]])).unwrap().value, 2.0, 1e-12);
        let one = feature_alignment_loss(&m(&[&[1.0, 0.0]])).unwrap();
        assert!(one.degenerate);
        assert_eq!(one.value, 0.0);
    }

    #[test]
    fn reversal_examples() {
        close(label_reversal_loss(&m(&[&[0.0, 0.0]]), &[0]).unwrap().value, 0.693147, 1e-6);
        close(label_reversal_loss(&m(&[&[0.0, 0.0, 0.0]]), &[0]).unwrap().value, 2.197225, 1e-6);
        let p = m(&[&[0.01, 0.99]]);
        close(label_reversal_value(&p, &[0]).unwrap(), 0.010050, 1e-6);
        let z = m(&[&[0.01f64.ln(), 0.99f64.ln()]]);
        close(label_reversal_loss(&z, &[0]).unwrap().value, 0.010050, 1e-6);
        assert!(matches!(
            label_reversal_loss(&z, &[2]),
            Err(MaflError::Label(_))
        ));
    }

    #[test]
    fn reversal_clamps_saturated_probabilities() {
        let z = m(&[&[0.0, -100.0, 5.0]]);
        let got = label_reversal_loss(&z, &[0]).unwrap().value;
        let probs = Matrix::new(1, 3, softmax_row_f64(z.row(0))).unwrap();
        close(got, label_reversal_value(&probs, &[0]).unwrap(), 1e-9);
        close(got, -(1e-12f64).ln() + -(softmax_row_f64(z.row(0))[2]).ln(), 1e-9);
    }

    #[test]
    fn combine_and_total_examples() {
        let w = AdvLossWeights::default();
        assert_eq!(combine_adversarial(0.0, 0.0, 0.0, &w), 0.0);
        close(combine_adversarial(0.130812, 1.0, 0.693147, &w), 0.838756, 1e-6);
        let zero = AdvLossWeights { alpha: 0.0, beta: 0.0 };
        assert_eq!(combine_adversarial(0.4, 7.0, 9.0, &zero), 0.4);
        assert_eq!(total_loss(0.7, 3.0, 0.0), 0.7);
        close(total_loss(0.5, 0.8, 0.5), 0.9, 1e-15);
        assert!(AdvLossWeights { alpha: -1.0, beta: 0.0 }.validate().is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        for seed in 0..5 {
            let z = random(7, 4, seed);
            let y = [0, 3, 1, 1, 2, 0, 3];
            let g = cross_entropy(&z, &y).unwrap().grad;
            check_grad(&z, &g, |z| cross_entropy(z, &y).unwrap().value);
        }
    }

    #[test]
    fn entropy_gradient_matches_closed_form_and_differences() {
        for seed in 0..5 {
            let z = random(6, 4, seed);
            let g = entropy_max_loss(&z).unwrap().grad;
            check_grad(&z, &g, |z| entropy_max_loss(z).unwrap().value);
        }
    }

    #[test]
    fn alignment_gradient() {
        for seed in 0..5 {
            let h = random(5, 6, seed);
            let g = feature_alignment_loss(&h).unwrap().grad;
            check_grad(&h, &g, |h| feature_alignment_loss(h).unwrap().value);
        }
    }

    #[test]
    fn reversal_gradient() {
        for seed in 0..5 {
            let z = random(6, 4, seed);
            let y = [0, 1, 2, 3, 0, 2];
            let g = label_reversal_loss(&z, &y).unwrap().grad;
            check_grad(&z, &g, |z| label_reversal_loss(z, &y).unwrap().value);
        }
    }

    /// Ordered-pair double loop over normalized rows.
    fn pairwise_alignment(h: &Matrix<f64>) -> f64 {
        let f = crate::numerics::l2_normalize_rows(h);
        let n = f.rows();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let dot: f64 = f.row(i).iter().zip(f.row(j)).map(|(a, b)| a * b).sum();
                    s += 1.0 - dot;
                }
            }
        }
        s / (n * (n - 1)) as f64
    }

    fn matrix(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Matrix<f64>> {
        n.prop_flat_map(move |n| {
            proptest::collection::vec(-5.0f64..5.0, n * d)
                .prop_map(move |v| Matrix::new(n, d, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn entropy_bounds(z in matrix(1..8, 3)) {
            let v = entropy_max_loss(&z).unwrap().value;
            prop_assert!(v >= -1e-12 && v <= 3f64.ln() + 1e-12);
        }

        #[test]
        fn alignment_matches_pairwise_oracle(h in matrix(2..9, 4)) {
            let v = feature_alignment_loss(&h).unwrap().value;
            prop_assert!((v - pairwise_alignment(&h)).abs() < 1e-6);
            prop_assert!((-1e-9..=2.0 + 1e-9).contains(&v));
        }

        #[test]
        fn reversal_decreases_as_off_true_mass_grows(
            tail in 0.01f64..0.9,
            bump in 0.001f64..0.05,
            split in 0.1f64..0.9,
        ) {
            // K = 3, true class 0: shrink p0 and scale the off-true classes up proportionally.
            let probs = |off: f64| m(&[&[1.0 - off, off * split, off * (1.0 - split)]]);
            let off2 = (tail + bump).min(0.999);
            let a = label_reversal_value(&probs(tail), &[0]).unwrap();
            let b = label_reversal_value(&probs(off2), &[0]).unwrap();
            prop_assert!(b < a);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn combine_is_linear(e in 0.0f64..2.0, a in 0.0f64..2.0, r in 0.0f64..5.0, t in 0.0f64..3.0) {
            let w = AdvLossWeights::default();
            let base = combine_adversarial(e, a, r, &w);
            prop_assert!((combine_adversarial(e + t, a, r, &w) - base - t).abs() < 1e-12);
            prop_assert!((combine_adversarial(e, a + t, r, &w) - base - w.alpha * t).abs() < 1e-12);
            prop_assert!((combine_adversarial(e, a, r + t, &w) - base - w.beta * t).abs() < 1e-12);
        }
    }
}
