//! Coarse (perceivable) augmentations and fine (adversarial) perturbations.
//!
//! Coarse variants move a sample by more than `delta` in sup-norm. Fine
//! variants add a virtual adversarial perturbation of exact L2 norm `epsilon`
//! to each coarse variant, found with a single power-iteration step on the KL
//! divergence between the model's prediction before and after perturbation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::SampleId;
use crate::nn::{Classifier, PredictionDist};
use crate::{Error, Result};

/// Below this gradient norm the power-iteration direction is considered undefined.
pub const DEGENERATE_GRADIENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    /// Cyclic shift of the coordinates.
    Roll,
    /// Sign flip of a contiguous coordinate block.
    Flip,
    /// Additive uniform noise scaled to a sup-norm just above `delta`.
    Jitter,
}

impl TransformKind {
    pub const ALL: [TransformKind; 3] = [TransformKind::Roll, TransformKind::Flip, TransformKind::Jitter];
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Roll { shift: usize },
    Flip { start: usize, len: usize },
    Jitter { magnitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformDescriptor {
    pub transform: Transform,
    /// Set when the drawn transform moved the sample by at most `delta` and
    /// was replaced by a jitter of the source.
    pub replaced: Option<TransformKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseAugmentSet {
    pub source_id: SampleId,
    pub variants: Vec<Vec<f64>>,
    pub transforms: Vec<TransformDescriptor>,
}

impl CoarseAugmentSet {
    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn jitter<R: Rng + ?Sized>(x: &[f64], delta: f64, rng: &mut R) -> (Vec<f64>, f64) {
    let magnitude = delta * rng.random_range(1.25..2.0);
    let mut noise: Vec<f64> = x.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    // one coordinate sits at full magnitude so the sup-norm shift is exact
    let pinned = rng.random_range(0..x.len());
    noise[pinned] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let v = x.iter().zip(&noise).map(|(a, n)| a + n * magnitude).collect();
    (v, magnitude)
}

fn apply<R: Rng + ?Sized>(x: &[f64], kind: TransformKind, delta: f64, rng: &mut R) -> (Vec<f64>, Transform) {
    let d = x.len();
    match kind {
        TransformKind::Roll => {
            let shift = if d > 1 { rng.random_range(1..d) } else { 0 };
            let mut v = x.to_vec();
            v.rotate_right(shift);
            (v, Transform::Roll { shift })
        }
        TransformKind::Flip => {
            let max_len = d.div_ceil(4).max(1);
            let len = rng.random_range(1..=max_len);
            let start = rng.random_range(0..=d - len);
            let mut v = x.to_vec();
            for c in &mut v[start..start + len] {
                *c = -*c;
            }
            (v, Transform::Flip { start, len })
        }
        TransformKind::Jitter => {
            let (v, magnitude) = jitter(x, delta, rng);
            (v, Transform::Jitter { magnitude })
        }
    }
}

/// Draws `k` coarse variants of `x`, each from a uniformly chosen member of `family`.
///
/// Every variant differs from `x` by more than `delta` in sup-norm. A roll or
/// flip that fails to do so (constant or near-zero coordinates) is replaced by
/// a jitter of the source.
pub fn coarse_augment<R: Rng + ?Sized>(
    source_id: SampleId,
    x: &[f64],
    k: usize,
    delta: f64,
    family: &[TransformKind],
    rng: &mut R,
) -> Result<CoarseAugmentSet> {
    if k == 0 {
        return Err(Error::Usage("coarse augmentation count must be at least 1".into()));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Usage(format!("delta {delta} must be finite and > 0")));
    }
    if family.is_empty() {
        return Err(Error::Usage("empty transform family".into()));
    }
    if x.is_empty() {
        return Err(Error::Shape("cannot augment an empty vector".into()));
    }
    let mut variants = Vec::with_capacity(k);
    let mut transforms = Vec::with_capacity(k);
    for _ in 0..k {
        let kind = family[rng.random_range(0..family.len())];
        let (v, t) = apply(x, kind, delta, rng);
        if sup_distance(&v, x) > delta {
            variants.push(v);
            transforms.push(TransformDescriptor { transform: t, replaced: None });
        } else {
            let (v, magnitude) = jitter(x, delta, rng);
            variants.push(v);
            transforms.push(TransformDescriptor {
                transform: Transform::Jitter { magnitude },
                replaced: Some(kind),
            });
        }
    }
    Ok(CoarseAugmentSet {
        source_id,
        variants,
        transforms,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub vector: Vec<f64>,
    pub epsilon: f64,
    /// The KL gradient vanished and the random probe direction was returned instead.
    pub degenerate: bool,
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Virtual adversarial perturbation of norm `epsilon` at `x_bar`.
///
/// `y_bar` is the reference prediction at `x_bar`. One power-iteration step:
/// probe at `xi * d` for a random unit `d`, take the KL gradient there and
/// rescale it to length `epsilon`.
pub fn vat_perturbation<R: Rng + ?Sized>(
    model: &Classifier,
    x_bar: &[f64],
    y_bar: &PredictionDist,
    epsilon: f64,
    xi: f64,
    rng: &mut R,
) -> Result<Perturbation> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Usage(format!("epsilon {epsilon} must be finite and > 0")));
    }
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::Usage(format!("xi {xi} must be finite and > 0")));
    }
    let d = random_unit(x_bar.len(), rng);
    let probe: Vec<f64> = d.iter().map(|v| xi * v).collect();
    let grad = model.grad_wrt_input(x_bar, y_bar, &probe)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric("non-finite adversarial gradient".into()));
    }
    if norm < DEGENERATE_GRADIENT {
        return Ok(Perturbation {
            vector: d.into_iter().map(|v| epsilon * v).collect(),
            epsilon,
            degenerate: true,
        });
    }
    Ok(Perturbation {
        vector: grad.into_iter().map(|g| epsilon * g / norm).collect(),
        epsilon,
        degenerate: false,
    })
}

/// Fine-grained counterparts of a coarse augmentation set.
#[derive(Debug, Clone, PartialEq)]
pub struct FineAugmentSet {
    /// Model prediction on each coarse variant, used as the VAT reference.
    pub coarse_preds: Vec<PredictionDist>,
    pub perturbations: Vec<Perturbation>,
    /// `variant + perturbation` for each coarse variant.
    pub perturbed: Vec<Vec<f64>>,
}

pub fn fine_augment_set<R: Rng + ?Sized>(
    model: &Classifier,
    coarse: &CoarseAugmentSet,
    epsilon: f64,
    xi: f64,
    rng: &mut R,
) -> Result<FineAugmentSet> {
    let mut coarse_preds = Vec::with_capacity(coarse.len());
    let mut perturbations = Vec::with_capacity(coarse.len());
    let mut perturbed = Vec::with_capacity(coarse.len());
    for variant in &coarse.variants {
        let y_bar = model.predict(variant)?;
        let r = vat_perturbation(model, variant, &y_bar, epsilon, xi, rng)?;
        perturbed.push(variant.iter().zip(&r.vector).map(|(a, b)| a + b).collect());
        coarse_preds.push(y_bar);
        perturbations.push(r);
    }
    Ok(FineAugmentSet {
        coarse_preds,
        perturbations,
        perturbed,
    })
}
