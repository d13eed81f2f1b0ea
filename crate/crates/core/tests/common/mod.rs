//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written the slow, obvious way and shares no code with
//! the library beyond its public data types.

#![allow(dead_code)]

use ideal::nn::{Activation, Classifier, PredictionDist};
use ideal::rng::StreamRng;
use ideal::{SampleId, ScoreRecord};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::ln_gamma;

/// Random rectifier network with random (nonzero) biases.
pub fn random_model(rng: &mut StreamRng, input: usize, hidden: &[usize], classes: usize) -> Classifier {
    let mut m = Classifier::new(input, hidden, classes, 0, rng).unwrap();
    let normal = Normal::new(0.0, 0.8).unwrap();
    let params: Vec<f64> = (0..m.param_count()).map(|_| normal.sample(rng)).collect();
    m.set_params(&params).unwrap();
    m
}

pub fn random_simplex(rng: &mut StreamRng, classes: usize) -> PredictionDist {
    let raw: Vec<f64> = (0..classes).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // renormalise the last entry so the sum is as exact as possible
    let head: f64 = p[..classes - 1].iter().sum();
    p[classes - 1] = (1.0 - head).max(0.0);
    PredictionDist::new(p).unwrap()
}

/// Forward pass written out by hand: returns logits and every pre-activation.
pub fn naive_forward(model: &Classifier, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut h = x.to_vec();
    let mut pres = Vec::new();
    for layer in model.layers() {
        let (w, b) = (layer.weights(), layer.bias());
        let mut pre = vec![0.0; layer.out_dim()];
        for o in 0..layer.out_dim() {
            let mut s = b[o];
            for i in 0..layer.in_dim() {
                s += w[o * layer.in_dim() + i] * h[i];
            }
            pre[o] = s;
        }
        h = match layer.activation() {
            Activation::Relu => pre.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(),
            Activation::Identity => pre.clone(),
        };
        pres.push(pre);
    }
    (h, pres)
}

pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn naive_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        if *a > 0.0 {
            total += a * (a / b.max(1e-12)).ln();
        }
    }
    total.max(0.0)
}

/// Smallest |pre-activation| of the hidden layers at `x`.
pub fn kink_distance(model: &Classifier, x: &[f64]) -> f64 {
    let (_, pres) = naive_forward(model, x);
    pres[..pres.len() - 1]
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Central finite-difference gradient of `KL(reference || p(base + offset))`.
pub fn fd_kl_gradient(model: &Classifier, base: &[f64], reference: &[f64], offset: &[f64], h: f64) -> Vec<f64> {
    let kl_at = |o: &[f64]| {
        let x: Vec<f64> = base.iter().zip(o).map(|(a, b)| a + b).collect();
        naive_kl(reference, &naive_softmax(&naive_forward(model, &x).0))
    };
    (0..offset.len())
        .map(|i| {
            let mut plus = offset.to_vec();
            let mut minus = offset.to_vec();
            plus[i] += h;
            minus[i] -= h;
            (kl_at(&plus) - kl_at(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Sum over classes of the textbook population variance.
pub fn naive_variance_sum(preds: &[Vec<f64>]) -> f64 {
    let n = preds.len() as f64;
    let classes = preds[0].len();
    let mut total = 0.0;
    for c in 0..classes {
        let mut mean = 0.0;
        for p in preds {
            mean += p[c];
        }
        mean /= n;
        let mut var = 0.0;
        for p in preds {
            var += (p[c] - mean) * (p[c] - mean);
        }
        total += var / n;
    }
    total
}

pub fn naive_percentile(value: f64, population: &[f64]) -> f64 {
    population.iter().filter(|v| **v < value).count() as f64 / population.len() as f64
}

pub fn naive_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

pub fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

/// Two-stage selection by full sorts: fuse percentiles, sort the whole pool by
/// `in_total`, keep `m`, weight entropy by mean pairwise cosine similarity
/// over the kept set (self included), sort again, keep `b`.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_oracle(
    in_coa: &[f64],
    in_fin: &[f64],
    entropy: &[f64],
    embeddings: &[Vec<f64>],
    ids: &[SampleId],
    gamma: f64,
    m: usize,
    b: usize,
) -> Vec<SampleId> {
    let n = ids.len();
    let total: Vec<f64> = (0..n)
        .map(|i| gamma * naive_percentile(in_coa[i], in_coa) + (1.0 - gamma) * naive_percentile(in_fin[i], in_fin))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| total[y].partial_cmp(&total[x]).unwrap().then(ids[x].cmp(&ids[y])));
    order.truncate(m);
    let dens: Vec<f64> = order
        .iter()
        .map(|&i| {
            let sims: f64 = order.iter().map(|&j| naive_cosine(&embeddings[i], &embeddings[j])).sum();
            entropy[i] * sims / m as f64
        })
        .collect();
    let mut rank: Vec<usize> = (0..order.len()).collect();
    rank.sort_by(|&x, &y| {
        dens[y]
            .partial_cmp(&dens[x])
            .unwrap()
            .then(ids[order[x]].cmp(&ids[order[y]]))
    });
    rank.into_iter().take(b).map(|r| ids[order[r]]).collect()
}

pub fn records(ids: &[SampleId], in_coa: &[f64], in_fin: &[f64], entropy: &[f64]) -> Vec<ScoreRecord> {
    (0..ids.len())
        .map(|i| ScoreRecord::new(ids[i], in_coa[i], in_fin[i], entropy[i]))
        .collect()
}

/// Mean of `max(L, 1 - L)` for `L ~ Beta(a, a)`: midpoint-rule integration of
/// `2 * x * f(x)` over `[0.5, 1]`, substituting `x = 1 - s^2` to remove the
/// density's integrable singularity at 1.
pub fn folded_beta_mean(a: f64) -> f64 {
    let ln_beta = ln_gamma(a) * 2.0 - ln_gamma(2.0 * a);
    let density = |x: f64| ((a - 1.0) * x.ln() + (a - 1.0) * (1.0 - x).ln() - ln_beta).exp();
    let steps = 2_000_000;
    let upper = 0.5f64.sqrt();
    let h = upper / steps as f64;
    let mut total = 0.0;
    for i in 0..steps {
        let s = (i as f64 + 0.5) * h;
        let x = 1.0 - s * s;
        total += x * density(x) * 2.0 * s * h;
    }
    // the fold doubles the mass on [0.5, 1]
    2.0 * total
}

/// Sign pattern of every hidden pre-activation at `x`.
pub fn activation_pattern(model: &Classifier, x: &[f64]) -> Vec<bool> {
    let (_, pres) = naive_forward(model, x);
    pres[..pres.len() - 1].iter().flatten().map(|v| *v > 0.0).collect()
}
