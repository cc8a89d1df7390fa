//! Surrogate pixel classifier.
//!
//! A weighted Gaussian naive Bayes model stands in for the segmentation
//! network: it fits in closed form, retrains from scratch every mission and
//! reports per-pixel class posteriors with normalised-entropy uncertainty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::SemanticGridWorld;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Human,
    Pseudo,
    Seed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelledPixel {
    pub cell: (usize, usize),
    pub feature: Vec<f64>,
    pub label: usize,
    pub weight: f64,
    pub source: LabelSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub variance_floor: f64,
    /// Pseudo-count added to every class weight when estimating priors.
    pub prior_smoothing: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { variance_floor: 1e-6, prior_smoothing: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub human: usize,
    pub pseudo: usize,
    pub seed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_priors: Vec<f64>,
    pub class_means: Vec<Vec<f64>>,
    pub class_variances: Vec<Vec<f64>>,
    pub trained_on: SourceCounts,
}

/// Weighted maximum-likelihood fit.
///
/// Priors are proportional to class weight plus `prior_smoothing`. Classes
/// without any weight fall back to the moments of the whole pool.
pub fn train(
    pixels: &[LabelledPixel],
    num_classes: usize,
    config: &LearnerConfig,
) -> Result<SurrogateModel> {
    let first = pixels.first().ok_or(Error::EmptyTrainingSet)?;
    let d = first.feature.len();
    if d == 0 {
        return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
    }
    let mut trained_on = SourceCounts::default();
    for p in pixels {
        if p.feature.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: p.feature.len() });
        }
        if p.label >= num_classes {
            return Err(Error::LabelOutOfRange { label: p.label, num_classes });
        }
        if !(p.weight > 0.0) || !p.weight.is_finite() {
            return Err(Error::InvalidConfig {
                field: "weight".into(),
                reason: format!("pixel weight must be positive, got {}", p.weight),
            });
        }
        match p.source {
            LabelSource::Human => trained_on.human += 1,
            LabelSource::Pseudo => trained_on.pseudo += 1,
            LabelSource::Seed => trained_on.seed += 1,
        }
    }

    let mut weight = vec![0.0; num_classes + 1];
    let mut sum = vec![vec![0.0; d]; num_classes + 1];
    // Slot `num_classes` accumulates the global pool.
    for p in pixels {
        for slot in [p.label, num_classes] {
            weight[slot] += p.weight;
            sum[slot].iter_mut().zip(&p.feature).for_each(|(s, x)| *s += p.weight * x);
        }
    }
    let means: Vec<Vec<f64>> = sum
        .iter()
        .zip(&weight)
        .map(|(s, &w)| s.iter().map(|x| if w > 0.0 { x / w } else { 0.0 }).collect())
        .collect();
    let mut sq = vec![vec![0.0; d]; num_classes + 1];
    for p in pixels {
        for slot in [p.label, num_classes] {
            for ((s, x), m) in sq[slot].iter_mut().zip(&p.feature).zip(&means[slot]) {
                *s += p.weight * (x - m) * (x - m);
            }
        }
    }
    let floor = config.variance_floor;
    let variances: Vec<Vec<f64>> = sq
        .iter()
        .zip(&weight)
        .map(|(s, &w)| s.iter().map(|x| if w > 0.0 { (x / w).max(floor) } else { floor }).collect())
        .collect();

    let total: f64 = weight[..num_classes].iter().map(|w| w + config.prior_smoothing).sum();
    let class_priors = weight[..num_classes]
        .iter()
        .map(|w| (w + config.prior_smoothing) / total)
        .collect();
    let pick = |table: &[Vec<f64>], k: usize| {
        if weight[k] > 0.0 { table[k].clone() } else { table[num_classes].clone() }
    };
    Ok(SurrogateModel {
        num_classes,
        feature_dim: d,
        class_priors,
        class_means: (0..num_classes).map(|k| pick(&means, k)).collect(),
        class_variances: (0..num_classes).map(|k| pick(&variances, k)).collect(),
        trained_on,
    })
}

/// Per-pixel posteriors and uncertainties for one patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub num_classes: usize,
    /// Row-major, `num_classes` probabilities per pixel.
    pub probs: Vec<f64>,
    pub uncertainty: Vec<f64>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.uncertainty.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uncertainty.is_empty()
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Maximum-likelihood class per pixel, ties to the lowest id.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| argmax(self.pixel(i))).collect()
    }
}

/// Index of the largest value, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy divided by `ln K`.
pub fn normalized_entropy(probs: &[f64]) -> f64 {
    let k = probs.len();
    if k < 2 {
        return 0.0;
    }
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (h / (k as f64).ln()).clamp(0.0, 1.0)
}

impl SurrogateModel {
    /// Posteriors for a flat row-major feature buffer.
    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        let d = self.feature_dim;
        if features.is_empty() || !features.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch { expected: d, actual: features.len() % d });
        }
        let k = self.num_classes;
        let consts: Vec<f64> = (0..k)
            .map(|c| {
                let log_det: f64 = self.class_variances[c]
                    .iter()
                    .map(|v| (2.0 * std::f64::consts::PI * v).ln())
                    .sum();
                self.class_priors[c].ln() - 0.5 * log_det
            })
            .collect();
        let n = features.len() / d;
        let mut probs = Vec::with_capacity(n * k);
        let mut uncertainty = Vec::with_capacity(n);
        let mut logp = vec![0.0; k];
        for x in features.chunks_exact(d) {
            for c in 0..k {
                let q: f64 = x
                    .iter()
                    .zip(&self.class_means[c])
                    .zip(&self.class_variances[c])
                    .map(|((xi, m), v)| (xi - m) * (xi - m) / v)
                    .sum();
                logp[c] = consts[c] - 0.5 * q;
            }
            let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = probs.len();
            probs.extend(logp.iter().map(|l| (l - max).exp()));
            let z: f64 = probs[start..].iter().sum();
            probs[start..].iter_mut().for_each(|p| *p /= z);
            uncertainty.push(normalized_entropy(&probs[start..]));
        }
        Ok(Prediction { num_classes: k, probs, uncertainty })
    }
}

/// Which classes enter the mIoU average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassPresence {
    /// Classes absent from both ground truth and prediction are skipped.
    #[default]
    GroundTruthOrPrediction,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub miou: f64,
    pub accuracy: f64,
}

/// mIoU and pixel accuracy of `pred` against `gt`.
pub fn segmentation_metrics(gt: &[usize], pred: &[usize], num_classes: usize, rule: ClassPresence) -> Metrics {
    assert_eq!(gt.len(), pred.len(), "ground truth and prediction differ in length");
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut correct = 0;
    for (&g, &p) in gt.iter().zip(pred) {
        if g == p {
            tp[g] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let ious: Vec<f64> = (0..num_classes)
        .filter_map(|k| {
            let denom = tp[k] + fp[k] + fn_[k];
            match (denom, rule) {
                (0, ClassPresence::GroundTruthOrPrediction) => None,
                (0, ClassPresence::All) => Some(0.0),
                _ => Some(tp[k] as f64 / denom as f64),
            }
        })
        .collect();
    let miou = if ious.is_empty() { 0.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 };
    let accuracy = if gt.is_empty() { 0.0 } else { correct as f64 / gt.len() as f64 };
    Metrics { miou, accuracy }
}

/// Whole-world argmax evaluation.
pub fn evaluate(model: &SurrogateModel, world: &SemanticGridWorld, rule: ClassPresence) -> Result<Metrics> {
    let pred = model.predict(&world.features)?.labels();
    Ok(segmentation_metrics(&world.labels, &pred, world.num_classes, rule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn px(feature: Vec<f64>, label: usize, weight: f64) -> LabelledPixel {
        LabelledPixel { cell: (0, 0), feature, label, weight, source: LabelSource::Human }
    }

    fn cfg() -> LearnerConfig {
        LearnerConfig::default()
    }

    fn assert_models_close(a: &SurrogateModel, b: &SurrogateModel, tol: f64) {
        let flat = |m: &SurrogateModel| {
            let mut v = m.class_priors.clone();
            m.class_means.iter().chain(&m.class_variances).for_each(|r| v.extend(r));
            v
        };
        for (x, y) in flat(a).iter().zip(flat(b)) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn degenerate_moments_hit_the_variance_floor() {
        let pixels = vec![
            px(vec![1.0, 2.0], 0, 1.0),
            px(vec![1.0, 2.0], 0, 1.0),
            px(vec![-3.0, 0.5], 1, 1.0),
        ];
        let m = train(&pixels, 2, &cfg()).unwrap();
        assert_eq!(m.class_means, vec![vec![1.0, 2.0], vec![-3.0, 0.5]]);
        assert!(m.class_variances.iter().flatten().all(|&v| v == 1e-6));
        assert!((m.class_priors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((m.class_priors[0] - 3.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn halving_weights_of_duplicates_changes_nothing() {
        let mut rng = crate::seed::rng(1, "t", 0);
        let pixels: Vec<_> = (0..60)
            .map(|i| px((0..3).map(|_| rng.random::<f64>() * 4.0).collect(), i % 3, 1.0))
            .collect();
        let doubled: Vec<_> = pixels
            .iter()
            .flat_map(|p| {
                let mut h = p.clone();
                h.weight = 0.5;
                [h.clone(), h]
            })
            .collect();
        let a = train(&pixels, 3, &cfg()).unwrap();
        let b = train(&doubled, 3, &cfg()).unwrap();
        assert_models_close(&a, &b, 1e-12);
    }

    #[test]
    fn missing_classes_use_global_pool() {
        let pixels = vec![px(vec![0.0], 0, 1.0), px(vec![2.0], 0, 3.0)];
        let m = train(&pixels, 3, &cfg()).unwrap();
        assert_eq!(m.class_means[1], m.class_means[0]);
        assert_eq!(m.class_variances[2], m.class_variances[0]);
        assert!((m.class_priors[1] - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn training_errors() {
        assert_eq!(train(&[], 2, &cfg()), Err(Error::EmptyTrainingSet));
        assert!(matches!(
            train(&[px(vec![0.0], 2, 1.0)], 2, &cfg()),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            train(&[px(vec![0.0], 0, 1.0), px(vec![0.0, 1.0], 1, 1.0)], 2, &cfg()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(train(&[px(vec![0.0], 0, 0.0)], 2, &cfg()).is_err());
    }

    #[test]
    fn entropy_extremes() {
        assert!((normalized_entropy(&[0.25; 4]) - 1.0).abs() < 1e-12);
        assert_eq!(normalized_entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((normalized_entropy(&[0.5, 0.5, 0.0, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn predict_is_a_distribution_and_rejects_bad_dims() {
        let mut rng = crate::seed::rng(2, "t", 0);
        let pixels: Vec<_> = (0..40)
            .map(|i| px((0..2).map(|_| StandardNormal.sample(&mut rng)).collect(), i % 4, 1.0))
            .collect();
        let m = train(&pixels, 4, &cfg()).unwrap();
        let feats: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = m.predict(&feats).unwrap();
        assert_eq!(p.len(), 100);
        for i in 0..p.len() {
            assert!((p.pixel(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&p.uncertainty[i]));
        }
        assert!(m.predict(&[1.0, 2.0, 3.0]).is_err());
        assert!(m.predict(&[]).is_err());
    }

    #[test]
    fn hand_counted_metrics() {
        let m = segmentation_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2, ClassPresence::default());
        assert!((m.miou - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(m.accuracy, 0.75);
        let m3 = segmentation_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 3, ClassPresence::default());
        assert_eq!(m3, m);
        let all = segmentation_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 3, ClassPresence::All);
        assert!((all.miou - 7.0 / 18.0).abs() < 1e-12);
        let perfect = segmentation_metrics(&[2, 0, 1], &[2, 0, 1], 3, ClassPresence::default());
        assert_eq!(perfect, Metrics { miou: 1.0, accuracy: 1.0 });
    }
}
