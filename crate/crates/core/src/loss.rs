//! Expression loss, knowledge-weighted AU loss, their λ-combination, and a
//! central finite-difference gradient checker.
//!
//! All log-sigmoid terms go through [`softplus`], which never exponentiates a
//! positive argument, so no logit clamping is needed.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::domain::{ExpressionClass, KnowledgeMatrix, KnowledgeStage, NUM_AUS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::labeling::PosWeightSpec;

/// Constant inside the expression loss logarithm, `-log(5 p)`.
pub const DEFAULT_EXPRESSION_FACTOR: f64 = 5.0;

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    crate::knowledge::sigmoid(x)
}

/// Softmax cross-entropy with a constant factor inside the log:
/// `-(1/N) Σ log(factor · p[label])`. The gradient with respect to the logits is
/// `(p - onehot) / N` whatever the factor.
pub fn expression_loss(logits: ArrayView2<f64>, labels: &[usize], factor: f64) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if n == 0 {
        return Err(Error::Empty("expression loss batch".into()));
    }
    if k != NUM_EXPRESSIONS || labels.len() != n {
        return Err(Error::Shape(format!(
            "expression logits {n}x{k} with {} labels",
            labels.len()
        )));
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("factor {factor} must be positive")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_EXPRESSIONS) {
        return Err(Error::InvalidArgument(format!("expression label {bad} out of range")));
    }

    let inv_n = 1.0 / n as f64;
    let log_factor = factor.ln();
    let mut grad = Array2::zeros((n, k));
    let mut total = 0.0;
    for ((row, mut g), &label) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        total -= log_factor + row[label] - lse;
        for (j, (gj, &x)) in g.iter_mut().zip(row.iter()).enumerate() {
            let p = (x - lse).exp();
            *gj = (p - if j == label { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// How the AU loss is averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuReduction {
    /// Mean over all N × 18 elements.
    #[default]
    Elements,
    /// Sum over AUs, mean over samples.
    Samples,
}

/// Knowledge-weighted binary cross-entropy on the AU logits.
///
/// For sample `i` with expression `e` and AU `j` the element loss is
/// `-k[j][e] · (pw[e][j] · y · log σ(x) + (1 - y) · log(1 - σ(x)))`; the
/// positive weight scales only the positive term.
pub fn au_loss(
    logits: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    expressions: &[ExpressionClass],
    knowledge: &KnowledgeMatrix,
    pw: &PosWeightSpec,
    reduction: AuReduction,
) -> Result<(f64, Array2<f64>)> {
    knowledge.ensure_stage(KnowledgeStage::LossScaled)?;
    if !knowledge.is_well_shaped() {
        return Err(Error::Shape("knowledge matrix must be 18x7".into()));
    }
    let (n, m) = logits.dim();
    if n == 0 {
        return Err(Error::Empty("AU loss batch".into()));
    }
    if m != NUM_AUS || targets.dim() != (n, m) || expressions.len() != n {
        return Err(Error::Shape(format!(
            "AU logits {n}x{m}, targets {:?}, {} expression labels",
            targets.dim(),
            expressions.len()
        )));
    }

    let denom = match reduction {
        AuReduction::Elements => (n * NUM_AUS) as f64,
        AuReduction::Samples => n as f64,
    };
    let mut grad = Array2::zeros((n, m));
    let mut total = 0.0;
    for (i, &expr) in expressions.iter().enumerate() {
        let k = knowledge.expression_weights(expr);
        let pw_row = pw.row(expr);
        for j in 0..NUM_AUS {
            let x = logits[[i, j]];
            let y = targets[[i, j]];
            let pos = pw_row[j] * y;
            let neg = 1.0 - y;
            // log σ(x) = -softplus(-x), log(1 - σ(x)) = -softplus(x)
            total += k[j] * (pos * softplus(-x) + neg * softplus(x));
            grad[[i, j]] = k[j] * (neg * sigmoid(x) - pos * sigmoid(-x)) / denom;
        }
    }
    Ok((total / denom, grad))
}

/// Targets matrix (N × 18) from per-video labels.
pub fn au_targets<'a>(labels: impl IntoIterator<Item = &'a [u8; NUM_AUS]>) -> Array2<f64> {
    let rows: Vec<f64> = labels.into_iter().flat_map(|y| y.iter().map(|&b| b as f64)).collect();
    let n = rows.len() / NUM_AUS;
    Array2::from_shape_vec((n, NUM_AUS), rows).expect("rows are 18 wide")
}

/// `(1 - λ) L_e + λ L_AU`.
pub fn combined_loss(expression: f64, au: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok((1.0 - lambda) * expression + lambda * au)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub expression: f64,
    pub au: f64,
    pub lambda: f64,
    pub total: f64,
    pub batch: usize,
    pub factor: f64,
}

impl LossBreakdown {
    pub fn new(expression: f64, au: f64, lambda: f64, batch: usize, factor: f64) -> Result<Self> {
        Ok(Self {
            expression,
            au,
            lambda,
            total: combined_loss(expression, au, lambda)?,
            batch,
            factor,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub epsilon: f64,
    pub worst_index: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the evaluator's analytic gradient at `point` with central
/// differences `(f(x + ε) - f(x - ε)) / 2ε`, coordinate by coordinate.
pub fn finite_difference_check<F>(mut eval: F, point: &[f64], epsilon: f64) -> Result<GradReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
    }
    let (value, analytic) = eval(point)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss {value} at probe point")));
    }
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} coordinates",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = (0.0, 0);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let (plus, _) = eval(&x)?;
        x[i] = orig - epsilon;
        let (minus, _) = eval(&x)?;
        x[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite(format!("loss at coordinate {i} ± {epsilon}")));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradReport {
        max_relative_error: worst.0,
        checked: x.len(),
        epsilon,
        worst_index: worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::PosWeightStrategy;
    use ndarray::array;

    fn ones_knowledge() -> KnowledgeMatrix {
        KnowledgeMatrix::filled(1.0, KnowledgeStage::LossScaled)
    }

    #[test]
    fn factor_five_at_p_one_fifth() {
        // p_target = 0.2: logit ln(1.5) on the target, 0 elsewhere gives 1.5 / 7.5.
        let logits = array![[1.5f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let (loss, _) = expression_loss(logits.view(), &[0], 5.0).unwrap();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn uniform_logits() {
        let logits = Array2::zeros((3, 7));
        let (loss, _) = expression_loss(logits.view(), &[0, 3, 6], 1.0).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-15);
        assert!((loss - 1.9459).abs() < 1e-4);
    }

    #[test]
    fn saturated_minimum_has_vanishing_gradient() {
        let logits = array![[30.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let (_, grad) = expression_loss(logits.view(), &[0], 5.0).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn expression_loss_errors() {
        let logits = Array2::zeros((1, 7));
        assert!(expression_loss(logits.view(), &[7], 5.0).is_err());
        assert!(expression_loss(logits.view(), &[0], 0.0).is_err());
        assert!(expression_loss(Array2::zeros((1, 6)).view(), &[0], 5.0).is_err());
    }

    #[test]
    fn au_loss_at_zero_logit() {
        let logits = Array2::zeros((1, 18));
        let targets = Array2::ones((1, 18));
        let (loss, _) = au_loss(
            logits.view(),
            targets.view(),
            &[ExpressionClass::Sad],
            &ones_knowledge(),
            &PosWeightSpec::ones(),
            AuReduction::Elements,
        )
        .unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn pos_weight_ignored_without_positives() {
        let logits =
            array![[0.3, -1.2, 2.0, 0.0, 0.1, -0.4, 0.9, 1.1, -2.0, 0.5, 0.5, 0.7, -0.3, 0.2, 0.0, -1.0, 0.4, 0.8]];
        let targets = Array2::zeros((1, 18));
        let mut pw = PosWeightSpec::ones();
        let k = ones_knowledge();
        let base = au_loss(
            logits.view(),
            targets.view(),
            &[ExpressionClass::Fear],
            &k,
            &pw,
            AuReduction::Elements,
        )
        .unwrap();
        pw.strategy = PosWeightStrategy::Distinct;
        pw.values = [[7.5; NUM_AUS]; NUM_EXPRESSIONS];
        let weighted = au_loss(
            logits.view(),
            targets.view(),
            &[ExpressionClass::Fear],
            &k,
            &pw,
            AuReduction::Elements,
        )
        .unwrap();
        assert_eq!(base.0, weighted.0);
        assert_eq!(base.1, weighted.1);
    }

    #[test]
    fn au_loss_rejects_unscaled_knowledge() {
        let k = KnowledgeMatrix::filled(0.5, KnowledgeStage::Aggregate);
        let z = Array2::zeros((1, 18));
        assert!(matches!(
            au_loss(
                z.view(),
                z.view(),
                &[ExpressionClass::Happy],
                &k,
                &PosWeightSpec::ones(),
                AuReduction::Elements
            ),
            Err(Error::Stage { .. })
        ));
        let short = Array2::zeros((1, 17));
        assert!(matches!(
            au_loss(
                short.view(),
                short.view(),
                &[ExpressionClass::Happy],
                &ones_knowledge(),
                &PosWeightSpec::ones(),
                AuReduction::Elements
            ),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn reductions_differ_by_au_count() {
        let logits = Array2::from_elem((2, 18), 0.7);
        let targets = Array2::from_elem((2, 18), 1.0);
        let e = [ExpressionClass::Happy, ExpressionClass::Angry];
        let k = ones_knowledge();
        let pw = PosWeightSpec::ones();
        let (a, _) = au_loss(logits.view(), targets.view(), &e, &k, &pw, AuReduction::Elements).unwrap();
        let (b, _) = au_loss(logits.view(), targets.view(), &e, &k, &pw, AuReduction::Samples).unwrap();
        assert!((b - 18.0 * a).abs() < 1e-12);
    }

    #[test]
    fn combination_endpoints() {
        assert_eq!(combined_loss(1.3, 7.0, 0.0).unwrap(), 1.3);
        assert_eq!(combined_loss(1.3, 7.0, 1.0).unwrap(), 7.0);
        assert_eq!(combined_loss(2.0, 4.0, 0.5).unwrap(), 3.0);
        assert!(combined_loss(2.0, 4.0, 1.5).is_err());
        assert!(combined_loss(2.0, 4.0, -0.1).is_err());
        let b = LossBreakdown::new(2.0, 4.0, 0.25, 8, 5.0).unwrap();
        assert_eq!(b.total, 2.5);
    }

    #[test]
    fn checker_on_a_quadratic() {
        let report = finite_difference_check(
            |x| Ok((x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect())),
            &[1.0, -2.0, 0.5],
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-9);
        assert_eq!(report.checked, 3);
        assert!(finite_difference_check(|_| Ok((f64::NAN, vec![0.0])), &[0.0], 1e-5).is_err());
    }
}
