//! Inconsistency scoring and two-stage selection.
//!
//! Stage one ranks the unlabeled pool by a fusion of two percentiles: the
//! spread of predictions across coarse augmentations and the KL divergence
//! caused by adversarial perturbations. Stage two re-ranks the best
//! `m_cand` candidates by prediction entropy weighted with their mean cosine
//! similarity to the other candidates, and keeps the top `budget`.

use std::cmp::Ordering;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleId;
use crate::nn::{kl_divergence, PredictionDist};
use crate::{Error, Result};

/// Norms below this make a representation unusable for cosine similarity.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: SampleId,
    pub in_coa: f64,
    pub in_fin: f64,
    pub phi_coa: f64,
    pub phi_fin: f64,
    pub in_total: f64,
    pub entropy: f64,
    /// Filled for members of the candidate set during re-ranking, zero otherwise.
    pub density_entropy: f64,
}

impl ScoreRecord {
    pub fn new(sample_id: SampleId, in_coa: f64, in_fin: f64, entropy: f64) -> Self {
        Self {
            sample_id,
            in_coa,
            in_fin,
            phi_coa: 0.0,
            phi_fin: 0.0,
            in_total: 0.0,
            entropy,
            density_entropy: 0.0,
        }
    }
}

/// Sum over classes of the population variance of the class probability
/// across the original prediction and its coarse-augmented predictions.
pub fn coarse_inconsistency(preds: &[PredictionDist]) -> Result<f64> {
    if preds.len() < 2 {
        return Err(Error::Usage(format!(
            "coarse inconsistency needs at least 2 predictions, got {}",
            preds.len()
        )));
    }
    let classes = preds[0].len();
    if preds.iter().any(|p| p.len() != classes) {
        return Err(Error::Shape("predictions disagree on the class count".into()));
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    for c in 0..classes {
        // shifted by the first value so identical predictions give exactly zero
        let base = preds[0].probs()[c];
        let mean = preds.iter().map(|p| p.probs()[c] - base).sum::<f64>() / n;
        total += preds.iter().map(|p| (p.probs()[c] - base - mean).powi(2)).sum::<f64>() / n;
    }
    Ok(total)
}

/// `sum_k KL(coarse_k || perturbed_k)`.
pub fn fine_inconsistency(coarse: &[PredictionDist], perturbed: &[PredictionDist]) -> Result<f64> {
    if coarse.len() != perturbed.len() {
        return Err(Error::Shape(format!(
            "{} coarse predictions but {} perturbed predictions",
            coarse.len(),
            perturbed.len()
        )));
    }
    coarse
        .iter()
        .zip(perturbed)
        .map(|(a, b)| kl_divergence(a, b))
        .sum()
}

/// Fraction of `population` strictly smaller than `value`.
pub fn percentile(value: f64, population: &[f64]) -> Result<f64> {
    if population.is_empty() {
        return Err(Error::Usage("percentile of an empty population".into()));
    }
    let smaller = population.iter().filter(|&&v| v < value).count();
    Ok(smaller as f64 / population.len() as f64)
}

/// [`percentile`] of every value against the whole slice, in `O(n log n)`.
pub fn percentiles(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .map(|v| sorted.partition_point(|s| s < v) as f64 / n)
        .collect()
}

pub fn total_inconsistency(phi_coa: f64, phi_fin: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Usage(format!("gamma {gamma} outside [0, 1]")));
    }
    Ok(gamma * phi_coa + (1.0 - gamma) * phi_fin)
}

/// Shannon entropy in nats; `0 ln 0 = 0`.
pub fn entropy(pred: &PredictionDist) -> f64 {
    -pred
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of vectors of length {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < MIN_NORM || nv < MIN_NORM {
        return Err(Error::DegenerateVector("zero-norm vector in cosine similarity".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `entropy * mean_j sim(candidates[target], candidates[j])`, the mean taken
/// over every candidate including the target itself.
///
/// Zero-norm candidates are dropped from the mean. A zero-norm target has no
/// similarity to anything and scores zero.
pub fn density_aware_entropy(target: usize, entropy: f64, candidates: &[&[f64]]) -> Result<f64> {
    let t = *candidates
        .get(target)
        .ok_or_else(|| Error::Usage(format!("target {target} outside candidate set of {}", candidates.len())))?;
    if norm(t) < MIN_NORM {
        warn!("candidate {target} has a zero-norm representation");
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for c in candidates {
        match cosine_similarity(t, c) {
            Ok(s) => {
                sum += s;
                used += 1;
            }
            Err(Error::DegenerateVector(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if used < candidates.len() {
        warn!("{} zero-norm candidates dropped from the density mean", candidates.len() - used);
    }
    Ok(entropy * sum / used as f64)
}

/// Mean cosine similarity of each candidate to the whole set, in `O(m d)`.
///
/// Uses `sum_j <u_i, u_j> = <u_i, sum_j u_j>` over unit vectors; same
/// conventions as [`density_aware_entropy`].
pub fn density_factors(candidates: &[&[f64]]) -> Result<Vec<f64>> {
    let Some(first) = candidates.first() else {
        return Ok(Vec::new());
    };
    let dim = first.len();
    if candidates.iter().any(|c| c.len() != dim) {
        return Err(Error::Shape("candidate representations differ in length".into()));
    }
    let units: Vec<Option<Vec<f64>>> = candidates
        .iter()
        .map(|c| {
            let n = norm(c);
            (n >= MIN_NORM).then(|| c.iter().map(|v| v / n).collect())
        })
        .collect();
    let used = units.iter().filter(|u| u.is_some()).count();
    if used < candidates.len() {
        warn!("{} zero-norm candidates dropped from the density mean", candidates.len() - used);
    }
    let mut centroid = vec![0.0; dim];
    for u in units.iter().flatten() {
        for (c, v) in centroid.iter_mut().zip(u) {
            *c += v;
        }
    }
    Ok(units
        .iter()
        .map(|u| match u {
            Some(u) => u.iter().zip(&centroid).map(|(a, b)| a * b).sum::<f64>() / used as f64,
            None => 0.0,
        })
        .collect())
}

/// Descending by key, ascending sample id on ties.
fn rank_desc(records: &[ScoreRecord], key: fn(&ScoreRecord) -> f64) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        key(&records[b])
            .total_cmp(&key(&records[a]))
            .then(records[a].sample_id.cmp(&records[b].sample_id))
    }
}

/// Fills `phi_coa`, `phi_fin` and `in_total` from the raw inconsistencies.
pub fn fuse_scores(records: &mut [ScoreRecord], gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Usage(format!("gamma {gamma} outside [0, 1]")));
    }
    let coa: Vec<f64> = records.iter().map(|r| r.in_coa).collect();
    let fin: Vec<f64> = records.iter().map(|r| r.in_fin).collect();
    for ((r, pc), pf) in records.iter_mut().zip(percentiles(&coa)).zip(percentiles(&fin)) {
        r.phi_coa = pc;
        r.phi_fin = pf;
        r.in_total = total_inconsistency(pc, pf, gamma)?;
    }
    Ok(())
}

/// Indices of the `m` records with the largest `in_total`, best first.
pub fn top_candidates(records: &[ScoreRecord], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    let cmp = rank_desc(records, |r| r.in_total);
    let m = m.min(idx.len());
    if m == 0 {
        return Vec::new();
    }
    if m < idx.len() {
        idx.select_nth_unstable_by(m - 1, &cmp);
        idx.truncate(m);
    }
    idx.sort_by(&cmp);
    idx
}

/// Keeps the `budget` best candidates by density-weighted entropy, or by plain
/// entropy when `use_density` is false. Fills `density_entropy` for every
/// candidate. `embeddings` is aligned with `records`.
pub fn rerank(
    records: &mut [ScoreRecord],
    embeddings: &[Vec<f64>],
    candidates: &[usize],
    budget: usize,
    use_density: bool,
) -> Result<Vec<usize>> {
    if budget > candidates.len() {
        return Err(Error::Usage(format!(
            "budget {budget} exceeds candidate set of {}",
            candidates.len()
        )));
    }
    if embeddings.len() != records.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} records",
            embeddings.len(),
            records.len()
        )));
    }
    if use_density {
        let reps: Vec<&[f64]> = candidates.iter().map(|&i| embeddings[i].as_slice()).collect();
        for (&i, f) in candidates.iter().zip(density_factors(&reps)?) {
            records[i].density_entropy = records[i].entropy * f;
        }
    } else {
        for &i in candidates {
            records[i].density_entropy = records[i].entropy;
        }
    }
    let mut order = candidates.to_vec();
    order.sort_by(rank_desc(records, |r| r.density_entropy));
    order.truncate(budget);
    Ok(order)
}

/// Two-stage selection: top `m_cand` by `in_total`, then top `budget` of those
/// by density-aware entropy. Records must already be fused (see [`fuse_scores`]).
pub fn select(
    records: &mut [ScoreRecord],
    embeddings: &[Vec<f64>],
    m_cand: usize,
    budget: usize,
) -> Result<Vec<SampleId>> {
    if budget > m_cand {
        return Err(Error::Usage(format!("budget {budget} exceeds candidate count {m_cand}")));
    }
    if m_cand > records.len() {
        return Err(Error::Usage(format!(
            "candidate count {m_cand} exceeds pool of {}",
            records.len()
        )));
    }
    let candidates = top_candidates(records, m_cand);
    let chosen = rerank(records, embeddings, &candidates, budget, true)?;
    Ok(chosen.into_iter().map(|i| records[i].sample_id).collect())
}
