mod common;

use common::*;
use ideal::nn::PredictionDist;
use ideal::propagator::{build_training_batch, guess_label, mix_pair, sample_lambda, BatchItem, MixKind};
use ideal::rng::{stream, Purpose, StreamRng};
use ideal::SampleId;
use proptest::prelude::*;
use rand::Rng;

fn rng(seed: u64) -> StreamRng {
    stream(seed, Purpose::Synthetic, 13, 0)
}

#[test]
fn folded_lambda_mean_matches_integral() {
    let alpha = 0.75;
    let n = 200_000;
    let mut r = rng(0);
    let draws: Vec<f64> = (0..n).map(|_| sample_lambda(alpha, &mut r).unwrap()).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let want = folded_beta_mean(alpha);
    assert!((mean - want).abs() < 4.0 * se, "mean {mean} vs {want} (se {se})");
}

#[test]
fn folded_lambda_mean_at_one_is_three_quarters() {
    // Beta(1, 1) is uniform, so max(U, 1 - U) has mean 3/4
    assert!((folded_beta_mean(1.0) - 0.75).abs() < 1e-6);
}

#[test]
fn bad_alpha_is_rejected() {
    assert!(sample_lambda(0.0, &mut rng(0)).is_err());
    assert!(sample_lambda(f64::NAN, &mut rng(0)).is_err());
}

fn item(r: &mut StreamRng, d: usize, c: usize) -> BatchItem {
    let input: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
    BatchItem {
        representation: input.clone(),
        input,
        target: random_simplex(r, c),
    }
}

proptest! {
    #[test]
    fn guess_is_the_weighted_mean(seed in any::<u64>(), c in 2usize..8, k in 0usize..6) {
        let mut r = rng(seed);
        let preds: Vec<PredictionDist> = (0..=k).map(|_| random_simplex(&mut r, c)).collect();
        let weights: Vec<f64> = (0..=k).map(|_| r.random_range(0.01..3.0)).collect();
        let g = guess_label(SampleId(5), &preds, &weights).unwrap();
        let total: f64 = weights.iter().sum();
        for class in 0..c {
            let want: f64 = preds.iter().zip(&weights).map(|(p, w)| w * p.probs()[class]).sum::<f64>() / total;
            prop_assert!((g.distribution.probs()[class] - want).abs() < 1e-12);
        }
        prop_assert!(PredictionDist::new(g.distribution.into_vec()).is_ok());
    }

    #[test]
    fn mixing_is_convex(seed in any::<u64>(), d in 1usize..8, c in 2usize..6, lambda in 0.5f64..=1.0) {
        let mut r = rng(seed);
        let (a, b) = (item(&mut r, d, c), item(&mut r, d, c));
        let m = mix_pair(&a.representation, &a.target, &b.representation, &b.target, lambda, MixKind::UnlabeledUnlabeled).unwrap();
        for i in 0..d {
            let want = lambda * a.representation[i] + (1.0 - lambda) * b.representation[i];
            prop_assert!((m.representation[i] - want).abs() < 1e-15);
        }
        prop_assert!(PredictionDist::new(m.target.into_vec()).is_ok());
    }

    #[test]
    fn batch_routes_items_by_label_status(seed in any::<u64>(), nl in 1usize..6, nu in 0usize..6, na in 0usize..6) {
        let mut r = rng(seed);
        let l: Vec<BatchItem> = (0..nl).map(|_| item(&mut r, 3, 2)).collect();
        let u: Vec<BatchItem> = (0..nu).map(|_| item(&mut r, 3, 2)).collect();
        let a: Vec<BatchItem> = (0..na).map(|_| item(&mut r, 3, 2)).collect();
        let batch = build_training_batch(&l, &u, &a, 0.75, true, &mut r).unwrap();
        prop_assert_eq!(batch.supervised.len(), nl);
        prop_assert_eq!(batch.consistency.len(), nu + na);
        for m in &batch.supervised {
            prop_assert!(matches!(m.kind, MixKind::LabeledLabeled | MixKind::LabeledUnlabeled));
            prop_assert!(m.lambda >= 0.5 && m.sources.is_some());
        }
        for m in &batch.consistency {
            prop_assert!(matches!(m.kind, MixKind::UnlabeledUnlabeled | MixKind::LabeledUnlabeled));
        }
    }
}

#[test]
fn mixing_weight_outside_range_is_rejected() {
    let p = PredictionDist::uniform(2);
    assert!(mix_pair(&[0.0], &p, &[1.0], &p, 0.4, MixKind::LabeledLabeled).is_err());
    assert!(mix_pair(&[0.0], &p, &[1.0, 2.0], &p, 0.7, MixKind::LabeledLabeled).is_err());
}
