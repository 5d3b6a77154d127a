//! Central finite-difference checks of the analytic model gradients.
//!
//! The numeric side only ever calls the forward loss, so it is independent of
//! the backward pass it checks.

use rand::Rng as _;

use crate::data::{Example, Label};
use crate::error::Result;
use crate::feature::{Degree, FeatureConfig};
use crate::nn::{Activation, Model, ModelArch, Pooling};
use crate::rng::{derive_seed, seeded};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Relative error `|a - b| / max(|a|, |b|, floor)`. The floor keeps entries
/// whose true gradient is essentially zero from dividing rounding noise by
/// rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Scale below which gradient entries are compared absolutely. A central
/// difference of an O(1) loss at step 1e-5 carries roughly 1e-11 of rounding
/// noise, so smaller gradients cannot be resolved to a relative 1e-5.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct WorstEntry {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOutcome {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstEntry>,
}

/// Compares every analytic gradient entry of `model` on `batch` against a
/// central difference of the mean loss with step `step`.
pub fn check_model_gradients(
    model: &Model,
    batch: &[Example],
    step: f64,
) -> Result<GradCheckOutcome> {
    let (_, grads) = model.backward(batch)?;
    let mut probe = model.clone();
    let mut outcome = GradCheckOutcome {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };

    for (t, (name, analytic)) in grads.tensors().into_iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let original = probe.tensors()[t].1[i];
            set_param(&mut probe, t, i, original + step);
            let plus = probe.loss(batch)?;
            set_param(&mut probe, t, i, original - step);
            let minus = probe.loss(batch)?;
            set_param(&mut probe, t, i, original);
            let numeric = (plus - minus) / (2.0 * step);

            let err = relative_error(a, numeric, REL_FLOOR);
            outcome.checked += 1;
            if outcome.worst.is_none() || err > outcome.max_rel_error {
                outcome.max_rel_error = err;
                outcome.worst = Some(WorstEntry {
                    tensor: name,
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(outcome)
}

fn set_param(model: &mut Model, tensor: usize, index: usize, value: f64) {
    model.tensors_mut()[tensor].1[index] = value;
}

/// A random toy classifier (`d = 8`, vocabulary 20) with learnable `eta`,
/// and a small labelled batch to differentiate on.
pub fn toy_instance(degree: Degree, seed: u64) -> Result<(Model, Vec<Example>)> {
    let mut rng = seeded(derive_seed(&[seed, degree.as_u8() as u64]));
    let arch = ModelArch {
        vocab_size: 20,
        embed_dim: 6,
        dim: 8,
        hidden: 10,
        pooling: Pooling::Max,
        activation: Activation::Tanh,
    };
    let eta = rng.random_range(0.5..3.0);
    let cfg = FeatureConfig::new(degree, eta)?.learnable();
    let model = Model::init(&arch, &cfg, rng.random())?;

    let seq = |rng: &mut crate::rng::Rng| {
        let len = rng.random_range(1..6);
        (0..len)
            .map(|_| rng.random_range(0..20u32))
            .collect::<Vec<_>>()
    };
    let batch = (0..4)
        .map(|i| Example {
            premise: seq(&mut rng),
            hypothesis: seq(&mut rng),
            label: Label::ALL[(i + seed as usize) % 3],
        })
        .collect();
    Ok((model, batch))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub degree: Degree,
    pub instance: u64,
    pub outcome: GradCheckOutcome,
}

/// Degrees 2, 3 and 4, `instances` random toy models each.
pub fn run_suite(instances: u64, step: f64) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for degree in Degree::ALL {
        for instance in 0..instances {
            let (model, batch) = toy_instance(degree, instance)?;
            out.push(SuiteEntry {
                degree,
                instance,
                outcome: check_model_gradients(&model, &batch, step)?,
            });
        }
    }
    Ok(out)
}
