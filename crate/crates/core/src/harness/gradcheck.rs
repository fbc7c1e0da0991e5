//! Seeded random instances for checking analytic gradients against central
//! differences: the expression loss, the AU loss, and the full model.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{ExpressionClass, KnowledgeMatrix, KnowledgeStage, NUM_AUS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::labeling::{PosWeightSpec, PosWeightStrategy};
use crate::loss::{
    au_loss, combined_loss, expression_loss, finite_difference_check, AuReduction, GradReport,
    DEFAULT_EXPRESSION_FACTOR,
};
use crate::model::{backward, forward, init_params};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub batch: usize,
    pub epsilon: f64,
    pub expression: GradReport,
    pub au: GradReport,
    pub model: GradReport,
}

impl GradcheckReport {
    /// Largest relative error of the two loss-only checks.
    pub fn loss_error(&self) -> f64 {
        self.expression.max_relative_error.max(self.au.max_relative_error)
    }
}

/// A random AU-loss setting: targets, classes, loss-scaled knowledge and
/// positive weights.
#[derive(Debug, Clone)]
pub struct AuInstance {
    pub targets: Array2<f64>,
    pub expressions: Vec<ExpressionClass>,
    pub knowledge: KnowledgeMatrix,
    pub pos_weights: PosWeightSpec,
    pub reduction: AuReduction,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

/// Knowledge is uniform over the loss-scaled range; pos-weights are
/// log-uniform in [0.1, 10].
pub fn random_au_instance(rng: &mut ChaCha8Rng, batch: usize) -> AuInstance {
    let mut knowledge = KnowledgeMatrix::filled(2.5, KnowledgeStage::LossScaled);
    for row in knowledge.values.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(0.05..4.95);
        }
    }
    let mut pos_weights = PosWeightSpec::ones();
    pos_weights.strategy = PosWeightStrategy::Distinct;
    for row in pos_weights.values.iter_mut() {
        for v in row.iter_mut() {
            *v = 10f64.powf(rng.random_range(-1.0..1.0));
        }
    }
    AuInstance {
        targets: Array2::from_shape_simple_fn((batch, NUM_AUS), || f64::from(u8::from(rng.random_bool(0.4)))),
        expressions: (0..batch)
            .map(|_| ExpressionClass::from_index(rng.random_range(0..NUM_EXPRESSIONS)).expect("in range"))
            .collect(),
        knowledge,
        pos_weights,
        reduction: if rng.random_bool(0.5) {
            AuReduction::Elements
        } else {
            AuReduction::Samples
        },
    }
}

fn logits(rng: &mut ChaCha8Rng, batch: usize, width: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((batch, width), || scale * normal(rng))
}

fn flat_eval(
    shape: (usize, usize),
    f: impl Fn(Array2<f64>) -> Result<(f64, Array2<f64>)>,
) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
    move |x: &[f64]| {
        let a = Array2::from_shape_vec(shape, x.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
        let (v, g) = f(a)?;
        Ok((v, g.iter().copied().collect()))
    }
}

/// Checks all three gradients on one seeded instance. The model check uses
/// a `feature_dim`-wide input, the given hidden widths and a random λ.
pub fn gradcheck(
    seed: u64,
    batch: usize,
    epsilon: f64,
    feature_dim: usize,
    hidden: &[usize],
) -> Result<GradcheckReport> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let expr_logits = logits(&mut rng, batch, NUM_EXPRESSIONS, 2.0);
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..NUM_EXPRESSIONS)).collect();
    let expression = finite_difference_check(
        flat_eval((batch, NUM_EXPRESSIONS), |a| {
            expression_loss(a.view(), &labels, DEFAULT_EXPRESSION_FACTOR)
        }),
        expr_logits.as_slice().expect("standard layout"),
        epsilon,
    )?;

    let au_logits = logits(&mut rng, batch, NUM_AUS, 2.0);
    let inst = random_au_instance(&mut rng, batch);
    let au = finite_difference_check(
        flat_eval((batch, NUM_AUS), |a| {
            au_loss(
                a.view(),
                inst.targets.view(),
                &inst.expressions,
                &inst.knowledge,
                &inst.pos_weights,
                inst.reduction,
            )
        }),
        au_logits.as_slice().expect("standard layout"),
        epsilon,
    )?;

    let lambda: f64 = rng.random_range(0.0..=1.0);
    let features = logits(&mut rng, batch, feature_dim, 1.0);
    let model_inst = random_au_instance(&mut rng, batch);
    let mut params = init_params(seed, feature_dim, hidden)?;
    let point = params.to_flat();
    let model = finite_difference_check(
        |x: &[f64]| {
            params.set_flat(x)?;
            let pass = forward(&params, features.view())?;
            let (le, ge) = expression_loss(pass.expression_logits.view(), &labels, DEFAULT_EXPRESSION_FACTOR)?;
            let (la, ga) = au_loss(
                pass.au_logits.view(),
                model_inst.targets.view(),
                &model_inst.expressions,
                &model_inst.knowledge,
                &model_inst.pos_weights,
                model_inst.reduction,
            )?;
            let grads = backward(&params, &pass, (ge * (1.0 - lambda)).view(), (ga * lambda).view())?;
            Ok((combined_loss(le, la, lambda)?, grads.to_flat()))
        },
        &point,
        epsilon,
    )?;

    Ok(GradcheckReport {
        seed,
        batch,
        epsilon,
        expression,
        au,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_instance_passes() {
        let r = gradcheck(3, 8, DEFAULT_EPSILON, 6, &[5]).unwrap();
        assert!(r.loss_error() < 1e-5, "{r:?}");
        assert!(r.model.max_relative_error < 1e-4, "{r:?}");
    }
}
