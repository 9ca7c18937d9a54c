//! Central finite-difference gradient checking.

use serde::Serialize;

/// One evaluation of the function under test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// Identifies the piecewise-linear region the evaluation landed in (for
    /// example a hash of every ReLU's on/off state). Use 0 for smooth functions.
    pub region: u64,
}

impl From<f64> for LossEval {
    fn from(value: f64) -> Self {
        Self { value, region: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index of the coordinate that produced `max_rel_error`.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±eps stencil crossed into a different region and so
    /// have no meaningful central difference.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` around `params`.
///
/// `f` must be pure in its argument. Coordinates are perturbed one at a time.
pub fn finite_difference_check<F>(
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    mut f: F,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> LossEval,
{
    assert_eq!(
        params.len(),
        analytic.len(),
        "analytic gradient length must match parameter count"
    );
    let base = f(params).region;
    let mut x = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        if plus.region != base || minus.region != base {
            report.skipped_kinks += 1;
            continue;
        }
        let cd = (plus.value - minus.value) / (2.0 * eps);
        let err = relative_error(analytic[i], cd);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}

/// Stable 64-bit fingerprint of a boolean pattern.
pub fn region_fingerprint(pattern: impl IntoIterator<Item = bool>) -> u64 {
    // FNV-1a over the bits; collisions only cost a missed skip.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, b) in pattern.into_iter().enumerate() {
        h ^= (i as u64).wrapping_mul(2) | b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
