//! Finite-difference verification of every training objective on a small
//! 16→8→4 network, in double precision.

use serde::Serialize;

use crate::error::Result;
use crate::losses::AdvLossWeights;
use crate::model::{init_params, Group, ModelSpec, ModelState};
use crate::numerics::gradcheck::{finite_difference_check, region_fingerprint, GradCheckReport, LossEval};
use crate::numerics::rng::{streams, RngStream};
use crate::numerics::{Activation, Matrix};
use crate::training::{
    adversarial_objective, bias_objective, enter_adversarial_phase, enter_bias_phase, BatchData,
    LossToggles, ObjectiveTerms,
};

pub const TOLERANCE: f64 = 1e-3;
pub const EPS: f64 = 1e-5;
const BATCH: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckCase {
    Cls,
    Entropy,
    Alignment,
    Reversal,
    Composite,
    BiasCe,
}

impl CheckCase {
    pub const ALL: [CheckCase; 6] = [
        CheckCase::Cls,
        CheckCase::Entropy,
        CheckCase::Alignment,
        CheckCase::Reversal,
        CheckCase::Composite,
        CheckCase::BiasCe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckCase::Cls => "cls",
            CheckCase::Entropy => "entropy",
            CheckCase::Alignment => "alignment",
            CheckCase::Reversal => "reversal",
            CheckCase::Composite => "composite",
            CheckCase::BiasCe => "bias_ce",
        }
    }

    fn terms(self) -> ObjectiveTerms {
        let only = |entropy, alignment, reverse| LossToggles {
            entropy,
            alignment,
            reverse,
        };
        let (cls, toggles, lambda) = match self {
            CheckCase::Cls => (true, LossToggles::ALL_OFF, 0.0),
            CheckCase::Entropy => (false, only(true, false, false), 1.0),
            CheckCase::Alignment => (false, only(false, true, false), 1.0),
            CheckCase::Reversal => (false, only(false, false, true), 1.0),
            CheckCase::Composite | CheckCase::BiasCe => (true, LossToggles::ALL_ON, 0.5),
        };
        ObjectiveTerms {
            cls,
            toggles,
            lambda,
            weights: AdvLossWeights::default(),
        }
    }

    fn groups(self) -> &'static [Group] {
        match self {
            CheckCase::BiasCe => &[Group::Bias],
            _ => &[Group::Extractor, Group::Realfake],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub case: CheckCase,
    pub seed: u64,
    pub report: GradCheckReport,
    pub passed: bool,
}

pub fn check_spec() -> ModelSpec {
    ModelSpec {
        embed_dim: 16,
        hidden_dims_g: vec![8],
        feature_dim: 4,
        realfake_hidden: vec![6],
        bias_hidden: vec![6],
        k_pattern: 3,
        activation: Activation::Relu,
        content_classes: None,
    }
}

fn check_batch(rng: &mut RngStream) -> BatchData<f64> {
    let x = Matrix::from_fn(BATCH, 16, |_, _| rng.normal());
    let authenticity: Vec<u8> = (0..BATCH).map(|i| (i % 3 != 0) as u8).collect();
    let fake_positions: Vec<usize> = (0..BATCH).filter(|&i| authenticity[i] == 1).collect();
    let generators = (0..fake_positions.len()).map(|j| j % 3).collect();
    BatchData {
        x,
        authenticity,
        fake_positions,
        generators,
        contents: vec![0; BATCH],
    }
}

fn flatten(model: &ModelState<f64>, groups: &[Group], grads: bool) -> Vec<f64> {
    groups
        .iter()
        .flat_map(|&g| model.group_params(g))
        .flat_map(|p| if grads { p.grad.as_slice() } else { p.value.as_slice() }.to_vec())
        .collect()
}

fn load(model: &mut ModelState<f64>, groups: &[Group], values: &[f64]) {
    let mut off = 0;
    for &g in groups {
        for p in model.group_params_mut(g) {
            let n = p.value.len();
            p.value.as_mut_slice().copy_from_slice(&values[off..off + n]);
            off += n;
        }
    }
}

fn region(model: &ModelState<f64>) -> u64 {
    let nets = [&model.extractor, &model.realfake, &model.bias];
    region_fingerprint(
        nets.iter()
            .flat_map(|n| n.last_cache().map(|c| c.activation_pattern()).unwrap_or_default()),
    )
}

/// Value (and, via accumulated grads, gradient) of `case` at the model's
/// current parameters.
fn evaluate(model: &mut ModelState<f64>, batch: &BatchData<f64>, case: CheckCase) -> Result<f64> {
    model.zero_grad();
    for net in [&mut model.extractor, &mut model.realfake, &mut model.bias] {
        net.clear_cache();
    }
    match case {
        CheckCase::BiasCe => {
            enter_bias_phase(model);
            let h = model.extract_features(&batch.x)?;
            Ok(bias_objective(model, &h, batch)?.pattern)
        }
        _ => {
            enter_adversarial_phase(model);
            let b = adversarial_objective(model, batch, &case.terms())?;
            Ok(b.total)
        }
    }
}

/// Checks one objective at one seed. With `corrupt`, the analytic gradient
/// is deliberately perturbed so the check must fail.
pub fn check_case(case: CheckCase, seed: u64, corrupt: bool) -> Result<CaseResult> {
    let rng = RngStream::new(seed).derive(streams::GRADCHECK);
    let mut model: ModelState<f64> = init_params(&check_spec(), &rng)?;
    // Non-zero biases so the check does not sit on symmetric initial values.
    let mut brng = rng.derive(1);
    for p in model.all_params_mut() {
        if p.value.rows() == 1 {
            for v in p.value.as_mut_slice() {
                *v = 0.1 * brng.normal();
            }
        }
    }
    let batch = check_batch(&mut rng.derive(2));
    let groups = case.groups();
    evaluate(&mut model, &batch, case)?;
    let params = flatten(&model, groups, false);
    let mut analytic = flatten(&model, groups, true);
    if corrupt {
        analytic[0] += 0.5 * analytic[0].abs().max(1e-2);
    }
    let mut probe = model.clone();
    let mut failure = None;
    let report = finite_difference_check(&params, &analytic, EPS, |x| {
        load(&mut probe, groups, x);
        match evaluate(&mut probe, &batch, case) {
            Ok(value) => LossEval {
                value,
                region: region(&probe),
            },
            Err(e) => {
                failure.get_or_insert(e);
                LossEval {
                    value: f64::NAN,
                    region: 0,
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let passed = report.passes(TOLERANCE);
    Ok(CaseResult {
        case,
        seed,
        report,
        passed,
    })
}

/// Every case at seeds `seed .. seed + n_seeds`.
pub fn run_suite(seed: u64, n_seeds: u64, corrupt: bool) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for s in seed..seed + n_seeds {
        for case in CheckCase::ALL {
            out.push(check_case(case, s, corrupt)?);
        }
    }
    Ok(out)
}
