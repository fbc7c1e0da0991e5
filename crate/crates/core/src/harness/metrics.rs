use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::domain::{ExpressionClass, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn predict(logits: ArrayView2<f64>) -> Vec<usize> {
    logits.rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[u64; NUM_EXPRESSIONS]; NUM_EXPRESSIONS],
    /// `None` for classes with no true samples.
    pub per_class_recall: [Option<f64>; NUM_EXPRESSIONS],
    pub war: f64,
    pub uar: f64,
    pub samples: u64,
}

impl EvalReport {
    pub fn from_confusion(confusion: [[u64; NUM_EXPRESSIONS]; NUM_EXPRESSIONS]) -> Result<Self> {
        let samples: u64 = confusion.iter().flatten().sum();
        if samples == 0 {
            return Err(Error::Empty("confusion matrix has no samples".into()));
        }
        let mut per_class_recall = [None; NUM_EXPRESSIONS];
        let mut correct = 0;
        for (i, row) in confusion.iter().enumerate() {
            let support: u64 = row.iter().sum();
            correct += row[i];
            if support > 0 {
                per_class_recall[i] = Some(row[i] as f64 / support as f64);
            }
        }
        let populated: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
        Ok(Self {
            confusion,
            per_class_recall,
            war: correct as f64 / samples as f64,
            uar: populated.iter().sum::<f64>() / populated.len() as f64,
            samples,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} labels, {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = [[0u64; NUM_EXPRESSIONS]; NUM_EXPRESSIONS];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= NUM_EXPRESSIONS || p >= NUM_EXPRESSIONS {
                return Err(Error::InvalidArgument(format!("class index out of range ({t}, {p})")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn recall(&self, class: ExpressionClass) -> Option<f64> {
        self.per_class_recall[class.index()]
    }

    /// Mean recall over the populated minor classes.
    pub fn minor_recall(&self) -> Option<f64> {
        let minors: Vec<f64> = ExpressionClass::ALL
            .iter()
            .filter(|c| !c.is_major())
            .filter_map(|&c| self.recall(c))
            .collect();
        (!minors.is_empty()).then(|| minors.iter().sum::<f64>() / minors.len() as f64)
    }
}

/// Argmax predictions of the expression head, scored against the dataset labels.
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data".into()));
    }
    let pass = forward(params, data.features.view())?;
    let truth: Vec<usize> = data.labels.iter().map(|l| l.expression.index()).collect();
    EvalReport::from_predictions(&truth, &predict(pass.expression_logits.view()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_low() {
        assert_eq!(argmax([0.0, 1.0, 1.0]), 1);
        assert_eq!(argmax([0.0; 7]), 0);
    }

    #[test]
    fn perfect_predictions() {
        let labels: Vec<usize> = (0..21).map(|i| i % 7).collect();
        let r = EvalReport::from_predictions(&labels, &labels).unwrap();
        assert_eq!((r.war, r.uar), (1.0, 1.0));
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 3 } else { 0 });
            }
        }
    }

    #[test]
    fn one_class_missed() {
        let truth: Vec<usize> = (0..70).map(|i| i % 7).collect();
        let pred: Vec<usize> = truth.iter().map(|&t| if t == 5 { 0 } else { t }).collect();
        let r = EvalReport::from_predictions(&truth, &pred).unwrap();
        assert!((r.uar - 6.0 / 7.0).abs() < 1e-15);
        assert!((r.war - 6.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn two_populated_classes() {
        let mut c = [[0u64; 7]; 7];
        c[0][0] = 8;
        c[0][1] = 2;
        c[1][0] = 1;
        c[1][1] = 9;
        let r = EvalReport::from_confusion(c).unwrap();
        assert!((r.war - 0.85).abs() < 1e-15);
        assert!((r.uar - 0.85).abs() < 1e-15);
        assert_eq!(r.per_class_recall[2], None);
        assert!(EvalReport::from_confusion([[0; 7]; 7]).is_err());
    }
}
