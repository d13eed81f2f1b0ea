//! Label propagation through MixUp.
//!
//! Unlabeled samples receive a guessed label, the weighted average of the
//! model's predictions on the sample and on its augmentations. Labeled,
//! unlabeled and augmented items are then paired with a shuffled copy of
//! themselves and mixed with `lambda = max(l, 1 - l)`, `l ~ Beta(alpha, alpha)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::dataset::SampleId;
use crate::nn::{MixSources, PredictionDist, TrainingPair};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GuessedLabel {
    pub sample_id: SampleId,
    pub distribution: PredictionDist,
    /// `(w_u, w_1, .., w_K)`, aligned with the predictions that produced the label.
    pub weights: Vec<f64>,
}

/// Weighted average of the original prediction and its augmented predictions.
///
/// `preds[0]` is the prediction on the original sample; `weights[0]` is its weight.
pub fn guess_label(sample_id: SampleId, preds: &[PredictionDist], weights: &[f64]) -> Result<GuessedLabel> {
    if preds.is_empty() {
        return Err(Error::Usage("guess_label needs at least the original prediction".into()));
    }
    if preds.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} weights",
            preds.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Usage("guessed-label weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Usage("guessed-label weights are all zero".into()));
    }
    let classes = preds[0].len();
    if preds.iter().any(|p| p.len() != classes) {
        return Err(Error::Shape("predictions disagree on the class count".into()));
    }
    let mut avg = vec![0.0; classes];
    for (p, &w) in preds.iter().zip(weights) {
        for (a, &v) in avg.iter_mut().zip(p.probs()) {
            *a += w * v;
        }
    }
    for a in &mut avg {
        *a /= total;
    }
    Ok(GuessedLabel {
        sample_id,
        distribution: PredictionDist::from_simplex_unchecked(avg),
        weights: weights.to_vec(),
    })
}

/// Folds a Beta draw onto `[0.5, 1]`.
pub fn fold_lambda(raw: f64) -> f64 {
    raw.max(1.0 - raw)
}

pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Usage(format!("Beta parameter alpha = {alpha} must be finite and > 0")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Usage(format!("Beta({alpha}, {alpha}): {e}")))?;
    Ok(fold_lambda(beta.sample(rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixKind {
    LabeledLabeled,
    LabeledUnlabeled,
    UnlabeledUnlabeled,
}

impl MixKind {
    fn of(first_labeled: bool, second_labeled: bool) -> Self {
        match (first_labeled, second_labeled) {
            (true, true) => MixKind::LabeledLabeled,
            (false, false) => MixKind::UnlabeledUnlabeled,
            _ => MixKind::LabeledUnlabeled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedExample {
    /// `lambda * h1 + (1 - lambda) * h2` at the tap layer.
    pub representation: Vec<f64>,
    pub target: PredictionDist,
    pub lambda: f64,
    pub kind: MixKind,
    /// Raw inputs of the two mixed items, kept when mixing above the input layer.
    pub sources: Option<(Vec<f64>, Vec<f64>)>,
}

impl MixedExample {
    pub fn as_training_pair(&self) -> TrainingPair<'_> {
        TrainingPair {
            representation: &self.representation,
            target: self.target.probs(),
            sources: self.sources.as_ref().map(|(a, b)| MixSources {
                first: a,
                second: b,
                lambda: self.lambda,
            }),
        }
    }
}

pub fn mix_pair(
    h1: &[f64],
    y1: &PredictionDist,
    h2: &[f64],
    y2: &PredictionDist,
    lambda: f64,
    kind: MixKind,
) -> Result<MixedExample> {
    if h1.len() != h2.len() {
        return Err(Error::Shape(format!("mixing vectors of length {} and {}", h1.len(), h2.len())));
    }
    if y1.len() != y2.len() {
        return Err(Error::Shape(format!("mixing targets with {} and {} classes", y1.len(), y2.len())));
    }
    if !(0.5..=1.0).contains(&lambda) {
        return Err(Error::Usage(format!("mixing weight {lambda} outside [0.5, 1]")));
    }
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
    };
    Ok(MixedExample {
        representation: mix(h1, h2),
        target: PredictionDist::from_simplex_unchecked(mix(y1.probs(), y2.probs())),
        lambda,
        kind,
        sources: None,
    })
}

/// One item entering the mixing stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    /// Raw model input.
    pub input: Vec<f64>,
    /// Tap-layer representation of `input`.
    pub representation: Vec<f64>,
    /// Ground-truth one-hot for labeled items, guessed label otherwise.
    pub target: PredictionDist,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingBatch {
    /// Mixes whose dominant item is labeled; trained with cross-entropy.
    pub supervised: Vec<MixedExample>,
    /// All other mixes; trained with the consistency loss.
    pub consistency: Vec<MixedExample>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.supervised.len() + self.consistency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mixes every item of `labeled ++ unlabeled ++ augmented` with a partner
/// from a random permutation of the same concatenation.
///
/// The item in first position always carries weight `lambda >= 0.5`, so the
/// mix is routed to the supervised loss exactly when that item is labeled.
/// With `keep_sources` the raw inputs are stored for gradients below the tap.
pub fn build_training_batch<R: Rng + ?Sized>(
    labeled: &[BatchItem],
    unlabeled: &[BatchItem],
    augmented: &[BatchItem],
    alpha: f64,
    keep_sources: bool,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if labeled.is_empty() {
        return Err(Error::Usage("training batch needs at least one labeled item".into()));
    }
    let all: Vec<(&BatchItem, bool)> = labeled
        .iter()
        .map(|i| (i, true))
        .chain(unlabeled.iter().chain(augmented).map(|i| (i, false)))
        .collect();
    let mut partners: Vec<usize> = (0..all.len()).collect();
    partners.shuffle(rng);

    let mut batch = TrainingBatch::default();
    for (&(item, item_labeled), &p) in all.iter().zip(&partners) {
        let (partner, partner_labeled) = all[p];
        let lambda = sample_lambda(alpha, rng)?;
        let mut mixed = mix_pair(
            &item.representation,
            &item.target,
            &partner.representation,
            &partner.target,
            lambda,
            MixKind::of(item_labeled, partner_labeled),
        )?;
        if keep_sources {
            mixed.sources = Some((item.input.clone(), partner.input.clone()));
        }
        if item_labeled {
            batch.supervised.push(mixed);
        } else {
            batch.consistency.push(mixed);
        }
    }
    Ok(batch)
}
