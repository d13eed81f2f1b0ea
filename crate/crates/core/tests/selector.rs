mod common;

use common::*;
use ideal::rng::{stream, Purpose, StreamRng};
use ideal::selector::{
    cosine_similarity, density_factors, entropy, fuse_scores, percentile, percentiles, rerank, select, top_candidates,
};
use ideal::SampleId;
use proptest::prelude::*;
use rand::Rng;

fn rng(seed: u64) -> StreamRng {
    stream(seed, Purpose::Synthetic, 17, 0)
}

fn embeddings(r: &mut StreamRng, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

proptest! {
    #[test]
    fn percentiles_match_strict_count(values in prop::collection::vec(0u8..15, 1..200)) {
        let v: Vec<f64> = values.iter().map(|x| *x as f64).collect();
        let got = percentiles(&v);
        for (i, x) in v.iter().enumerate() {
            prop_assert_eq!(got[i], naive_percentile(*x, &v));
            prop_assert_eq!(percentile(*x, &v).unwrap(), got[i]);
        }
    }

    #[test]
    fn entropy_matches_naive(seed in any::<u64>(), c in 2usize..10) {
        let p = random_simplex(&mut rng(seed), c);
        let h = entropy(&p);
        prop_assert!((h - naive_entropy(p.probs())).abs() < 1e-12);
        prop_assert!(h >= 0.0 && h <= (c as f64).ln() + 1e-12);
    }

    #[test]
    fn cosine_matches_naive(u in prop::collection::vec(-5.0f64..5.0, 3), v in prop::collection::vec(-5.0f64..5.0, 3)) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let c = cosine_similarity(&u, &v).unwrap();
        prop_assert!((c - naive_cosine(&u, &v)).abs() < 1e-12);
    }

    #[test]
    fn density_is_mean_similarity_including_self(seed in any::<u64>(), n in 1usize..30) {
        let e = embeddings(&mut rng(seed), n);
        let refs: Vec<&[f64]> = e.iter().map(|v| v.as_slice()).collect();
        let got = density_factors(&refs).unwrap();
        for i in 0..n {
            let want = e.iter().map(|v| naive_cosine(&e[i], v)).sum::<f64>() / n as f64;
            prop_assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_matches_oracle(seed in any::<u64>(), n in 2usize..120, gamma in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let b = r.random_range(1..=n);
        let m = r.random_range(b..=n);
        let ids: Vec<SampleId> = (0..n as u64).map(|i| SampleId(1000 - i)).collect();
        let grid = |r: &mut StreamRng| (0..n).map(|_| r.random_range(0..20) as f64 / 20.0).collect::<Vec<f64>>();
        let (coa, fin) = (grid(&mut r), grid(&mut r));
        let ent: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let emb = embeddings(&mut r, n);
        let mut recs = records(&ids, &coa, &fin, &ent);
        fuse_scores(&mut recs, gamma).unwrap();
        let got = select(&mut recs, &emb, m, b).unwrap();
        prop_assert_eq!(got.len(), b);
        prop_assert_eq!(got, two_stage_oracle(&coa, &fin, &ent, &emb, &ids, gamma, m, b));
    }

    #[test]
    fn candidates_are_a_prefix_of_the_ranking(seed in any::<u64>(), n in 1usize..80) {
        let mut r = rng(seed);
        let ids: Vec<SampleId> = (0..n as u64).map(SampleId).collect();
        let v: Vec<f64> = (0..n).map(|_| r.random_range(0..5) as f64).collect();
        let mut recs = records(&ids, &v, &v, &v);
        fuse_scores(&mut recs, 0.5).unwrap();
        let m = r.random_range(0..=n);
        let small = top_candidates(&recs, m);
        let all = top_candidates(&recs, n);
        prop_assert_eq!(&small[..], &all[..m]);
        for w in all.windows(2) {
            let (a, b) = (&recs[w[0]], &recs[w[1]]);
            prop_assert!(a.in_total > b.in_total || (a.in_total == b.in_total && a.sample_id < b.sample_id));
        }
    }
}

#[test]
fn budget_above_candidates_is_an_error() {
    let ids: Vec<SampleId> = (0..5).map(SampleId).collect();
    let v = [0.1, 0.2, 0.3, 0.4, 0.5];
    let mut recs = records(&ids, &v, &v, &v);
    fuse_scores(&mut recs, 0.4).unwrap();
    let emb = embeddings(&mut rng(0), 5);
    assert!(select(&mut recs, &emb, 3, 4).is_err());
    let cands = top_candidates(&recs, 3);
    assert!(rerank(&mut recs, &emb, &cands, 4, true).is_err());
}

#[test]
fn gamma_outside_unit_interval_is_rejected() {
    let mut recs = records(&[SampleId(0)], &[0.0], &[0.0], &[0.0]);
    assert!(fuse_scores(&mut recs, 1.5).is_err());
}
