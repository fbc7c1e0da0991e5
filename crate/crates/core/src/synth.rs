//! Seeded, class-imbalanced synthetic clips whose AU structure follows a
//! ground-truth knowledge matrix.
//!
//! For a clip of class `c` the latent AU intensities are
//! `a = clamp(G[:, c] + noise, 0, 5)`, presences are `a ≥ 2.5`, and the clip
//! feature is `anchor_scale · M_c + mixing_scale · U a + noise`, where the class
//! anchors `M` and the mixing map `U` are standard normal draws fixed by the
//! seed.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::domain::{
    ActionUnit, ExpressionClass, KnowledgeMatrix, KnowledgeStage, NUM_AUS, NUM_EXPRESSIONS, NUM_INTENSITY_AUS,
};
use crate::error::{Error, Result};
use crate::ingest::{FrameAURecord, FramePrediction};
use crate::labeling::VideoAULabel;

/// Intensity at or above which a latent AU counts as present.
pub const PRESENCE_THRESHOLD: f64 = 2.5;

/// Class proportions with four major classes above 1/7 and disgust rarest.
pub const DEFAULT_PROPORTIONS: [f64; NUM_EXPRESSIONS] = [0.28, 0.20, 0.26, 0.16, 0.04, 0.02, 0.04];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub class_proportions: [f64; NUM_EXPRESSIONS],
    pub total: usize,
    /// Loss-scaled matrix; `None` uses [`prototype_knowledge`].
    pub ground_truth_knowledge: Option<KnowledgeMatrix>,
    pub au_noise_sd: f64,
    pub feature_noise_sd: f64,
    pub feature_dim: usize,
    pub anchor_scale: f64,
    pub mixing_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            class_proportions: DEFAULT_PROPORTIONS,
            total: 2000,
            ground_truth_knowledge: None,
            au_noise_sd: 1.0,
            feature_noise_sd: 1.0,
            feature_dim: 64,
            anchor_scale: 0.1,
            mixing_scale: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn ground_truth(&self) -> KnowledgeMatrix {
        self.ground_truth_knowledge.clone().unwrap_or_else(prototype_knowledge)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.total == 0 {
            return bad("total must be positive".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        for (name, v) in [
            ("au_noise_sd", self.au_noise_sd),
            ("feature_noise_sd", self.feature_noise_sd),
            ("anchor_scale", self.anchor_scale),
            ("mixing_scale", self.mixing_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        if self.class_proportions.iter().any(|&p| !(p >= 0.0)) {
            return bad("class proportions must be nonnegative".into());
        }
        let sum: f64 = self.class_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("class proportions sum to {sum}"));
        }
        let g = self.ground_truth();
        g.ensure_stage(KnowledgeStage::LossScaled)?;
        if !g.is_well_shaped() {
            return Err(Error::Shape("ground-truth knowledge must be 18x7".into()));
        }
        Ok(())
    }
}

/// Ground truth built from prototypical FACS configurations: prototype AUs at
/// 3.2, everything else at 1.8 (AU45 at 2.3), and AU28 the mean of the other
/// 17 in each column. Both levels sit within one noise unit of the presence
/// threshold, so presence is informative but not a class indicator.
pub fn prototype_knowledge() -> KnowledgeMatrix {
    prototype_knowledge_with(3.2, 1.8)
}

/// Prototype ground truth with the given active and inactive levels; AU45
/// sits 0.5 above the inactive level.
pub fn prototype_knowledge_with(active: f64, inactive: f64) -> KnowledgeMatrix {
    use ActionUnit::*;
    use ExpressionClass::*;
    let prototypes: [(ExpressionClass, &[ActionUnit]); NUM_EXPRESSIONS] = [
        (Happy, &[Au06, Au12, Au25]),
        (Sad, &[Au01, Au04, Au15, Au17]),
        (Neutral, &[]),
        (Angry, &[Au04, Au05, Au07, Au23]),
        (Surprise, &[Au01, Au02, Au05, Au26]),
        (Disgust, &[Au09, Au10, Au17]),
        (Fear, &[Au01, Au02, Au04, Au20]),
    ];
    let mut m = KnowledgeMatrix::filled(inactive, KnowledgeStage::LossScaled);
    for (class, aus) in prototypes {
        let c = class.index();
        m.values[Au45.index()][c] = inactive + 0.5;
        for au in aus {
            m.values[au.index()][c] = active;
        }
        let others: f64 = ActionUnit::intensity_aus().map(|au| m.values[au.index()][c]).sum();
        m.values[Au28.index()][c] = others / NUM_INTENSITY_AUS as f64;
    }
    m
}

/// Largest-remainder apportionment of `total` over `proportions`; ties go to
/// the lower class index.
pub fn class_counts(proportions: &[f64; NUM_EXPRESSIONS], total: usize) -> [usize; NUM_EXPRESSIONS] {
    let mut counts = [0usize; NUM_EXPRESSIONS];
    let mut remainders = [(0.0f64, 0usize); NUM_EXPRESSIONS];
    for (i, &p) in proportions.iter().enumerate() {
        let exact = p * total as f64;
        counts[i] = exact.floor() as usize;
        remainders[i] = (exact - exact.floor(), i);
    }
    let assigned: usize = counts.iter().sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub data: Dataset,
    /// Latent intensities after clamping, one 18-vector per clip.
    pub intensities: Vec<[f64; NUM_AUS]>,
    pub knowledge: KnowledgeMatrix,
}

impl SynthDataset {
    /// One single-frame OpenFace-style record per clip.
    pub fn frame_records(&self) -> Vec<FrameAURecord> {
        self.data
            .labels
            .iter()
            .zip(&self.intensities)
            .map(|(label, a)| {
                let mut intensities = [0.0; NUM_INTENSITY_AUS];
                for au in ActionUnit::intensity_aus() {
                    intensities[au.intensity_index().expect("intensity AU")] = a[au.index()];
                }
                FrameAURecord {
                    video_id: label.video_id.clone(),
                    frame_index: 1,
                    timestamp: 0.0,
                    confidence: 1.0,
                    success: true,
                    intensities,
                    presences: label.y,
                    interpolated_mask: [false; NUM_INTENSITY_AUS],
                }
            })
            .collect()
    }

    /// One-hot expression scores for each clip's true class.
    pub fn one_hot_predictions(&self) -> Vec<FramePrediction> {
        self.data
            .labels
            .iter()
            .map(|l| {
                let mut scores = [0.0; NUM_EXPRESSIONS];
                scores[l.expression.index()] = 1.0;
                FramePrediction {
                    video_id: l.video_id.clone(),
                    frame_index: 1,
                    scores,
                    asserted_label: l.expression,
                }
            })
            .collect()
    }
}

pub fn generate_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let g = spec.ground_truth();
    let f = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let anchors = Array2::from_shape_simple_fn((NUM_EXPRESSIONS, f), || {
        spec.anchor_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)
    });
    let mixing = Array2::from_shape_simple_fn((f, NUM_AUS), || {
        spec.mixing_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)
    });

    let counts = class_counts(&spec.class_proportions, spec.total);
    let mut order: Vec<ExpressionClass> = ExpressionClass::ALL
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, counts[c.index()]))
        .collect();
    order.shuffle(&mut rng);

    let au_noise = Normal::new(0.0, spec.au_noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let feature_noise = Normal::new(0.0, spec.feature_noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = order.len();
    let mut features = Array2::zeros((n, f));
    let mut labels = Vec::with_capacity(n);
    let mut intensities = Vec::with_capacity(n);
    let width = n.to_string().len().max(5);
    for (i, &class) in order.iter().enumerate() {
        let c = class.index();
        let mut a = [0.0; NUM_AUS];
        let mut y = [0u8; NUM_AUS];
        for j in 0..NUM_AUS {
            a[j] = (g.values[j][c] + au_noise.sample(&mut rng)).clamp(0.0, 5.0);
            y[j] = u8::from(a[j] >= PRESENCE_THRESHOLD);
        }
        let mut row = features.row_mut(i);
        for (k, x) in row.iter_mut().enumerate() {
            let mixed: f64 = (0..NUM_AUS).map(|j| mixing[[k, j]] * a[j]).sum();
            *x = anchors[[c, k]] + mixed + feature_noise.sample(&mut rng);
        }
        labels.push(VideoAULabel {
            video_id: format!("synth_{i:0width$}"),
            y,
            frame_count: 1,
            expression: class,
        });
        intensities.push(a);
    }
    Ok(SynthDataset {
        data: Dataset::new(features, labels)?,
        intensities,
        knowledge: g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_knowledge;

    #[test]
    fn largest_remainder_counts() {
        let p = [0.3, 0.25, 0.2, 0.15, 0.04, 0.02, 0.04];
        assert_eq!(class_counts(&p, 1000), [300, 250, 200, 150, 40, 20, 40]);
        let thirds = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(class_counts(&thirds, 10), [4, 3, 3, 0, 0, 0, 0]);
        assert_eq!(class_counts(&DEFAULT_PROPORTIONS, 2000).iter().sum::<usize>(), 2000);
    }

    #[test]
    fn prototype_is_valid_loss_scaled() {
        let g = prototype_knowledge();
        assert!(validate_knowledge(&g).is_valid());
        let sum: f64 = DEFAULT_PROPORTIONS.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for c in ExpressionClass::ALL {
            assert_eq!(c.is_major(), DEFAULT_PROPORTIONS[c.index()] > 1.0 / 7.0);
        }
    }

    #[test]
    fn noiseless_presences_follow_ground_truth() {
        let spec = SynthSpec {
            total: 140,
            au_noise_sd: 0.0,
            class_proportions: [1.0 / 7.0; NUM_EXPRESSIONS],
            ..SynthSpec::default()
        };
        let out = generate_dataset(&spec).unwrap();
        for l in &out.data.labels {
            for j in 0..NUM_AUS {
                let expected = u8::from(out.knowledge.values[j][l.expression.index()] >= PRESENCE_THRESHOLD);
                assert_eq!(l.y[j], expected);
            }
        }
    }

    #[test]
    fn seeded_and_rejects_degenerate_specs() {
        let spec = SynthSpec {
            total: 50,
            ..SynthSpec::default()
        };
        assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
        assert!(generate_dataset(&SynthSpec {
            total: 0,
            ..spec.clone()
        })
        .is_err());
        assert!(generate_dataset(&SynthSpec {
            au_noise_sd: -1.0,
            ..spec.clone()
        })
        .is_err());
        let mut p = spec.clone();
        p.class_proportions[0] += 0.1;
        assert!(generate_dataset(&p).is_err());
    }
}
