use std::collections::BTreeSet;

use ideal::config::{ablation_variants, LoopConfig, Strategy};
use ideal::dataset::{generate_synthetic, SyntheticSpec};
use ideal::engine::{baseline_select, run, Engine, ScoredPool};
use ideal::rng::{stream, Purpose};
use ideal::{Dataset, Error, SampleId};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn dataset(per_class: usize) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        classes: 2,
        clusters_per_class: 2,
        per_class,
        dim: 4,
        noise: 0.1,
        seed: 21,
    })
    .unwrap()
}

fn small() -> LoopConfig {
    LoopConfig {
        budget: 4,
        cycles: 3,
        hidden_layers: vec![8],
        train_steps_per_cycle: 10,
        batch_size: 8,
        ..LoopConfig::default()
    }
}

#[test]
fn random_selection_is_uniform() {
    let ids: Vec<SampleId> = (0..20).map(SampleId).collect();
    let zeros = vec![0.0; 20];
    let emb = vec![vec![0.0]; 20];
    let pool = ScoredPool {
        ids: &ids,
        entropy: &zeros,
        embeddings: &emb,
        labeled_embeddings: &[],
    };
    let mut counts = [0u32; 20];
    let reps = 1000;
    for rep in 0..reps {
        let mut rng = stream(rep, Purpose::Selection, 0, 0);
        let picked = baseline_select(Strategy::Random, &pool, 5, &mut rng).unwrap();
        assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), 5);
        for id in picked {
            counts[id.0 as usize] += 1;
        }
    }
    let expected = reps as f64 * 5.0 / 20.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(19.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2:.2}, p {p:.4}, counts {counts:?}");
}

#[test]
fn entropy_baseline_takes_the_most_uncertain() {
    let ids: Vec<SampleId> = (0..6).map(SampleId).collect();
    let ent = [0.1, 0.6, 0.3, 0.6, 0.0, 0.5];
    let emb = vec![vec![0.0]; 6];
    let pool = ScoredPool {
        ids: &ids,
        entropy: &ent,
        embeddings: &emb,
        labeled_embeddings: &[],
    };
    let mut rng = stream(0, Purpose::Selection, 0, 0);
    let picked = baseline_select(Strategy::Entropy, &pool, 3, &mut rng).unwrap();
    assert_eq!(picked, vec![SampleId(1), SampleId(3), SampleId(5)]);
}

#[test]
fn runs_are_reproducible() {
    let ds = dataset(40);
    let a: Vec<_> = run(&small(), &ds).unwrap().iter().map(|r| r.without_timing()).collect();
    let b: Vec<_> = run(&small(), &ds).unwrap().iter().map(|r| r.without_timing()).collect();
    assert_eq!(a, b);
    let other = LoopConfig { seed: 1, ..small() };
    let c: Vec<_> = run(&other, &ds).unwrap().iter().map(|r| r.without_timing()).collect();
    assert_ne!(a, c);
}

#[test]
fn disabling_both_stages_is_random_selection() {
    let ds = dataset(40);
    let variants = ablation_variants(&small());
    let get = |name: &str| variants.iter().find(|(n, _)| *n == name).unwrap().1.clone();
    let both = LoopConfig {
        disable_ranker: true,
        disable_reranker: true,
        ..small()
    };
    let random = run(&get("random"), &ds).unwrap();
    let ablated = run(&both, &ds).unwrap();
    assert_eq!(random.len(), ablated.len());
    for (r, a) in random.iter().zip(&ablated) {
        assert_eq!(r.selected, a.selected);
        assert_eq!(r.accuracy, a.accuracy);
        assert_eq!(r.n_labeled, a.n_labeled);
    }
}

#[test]
fn every_ablation_runs() {
    let ds = dataset(40);
    for (name, cfg) in ablation_variants(&small()) {
        let reports = run(&cfg, &ds).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(reports.len(), 3, "{name}");
        let ranked = reports[0].mean_in_total.is_some();
        let expect_ranked = !cfg.disable_ranker && cfg.strategy == Strategy::Ideal;
        assert_eq!(ranked, expect_ranked, "{name}");
    }
}

#[test]
fn ideal_selection_reports_inconsistency_over_the_pool() {
    let engine = Engine::new(&small(), &dataset(40)).unwrap();
    let sel = engine.select().unwrap();
    let (mean, max) = sel.in_total.unwrap();
    assert!((0.0..=1.0).contains(&mean) && mean <= max && max <= 1.0);
    assert_eq!(sel.ids.len(), 4);
    assert!(sel.ids.iter().all(|id| engine.pool().unlabeled().contains(id)));

    let scores = engine.score(&sel.ids).unwrap();
    for r in &scores.records {
        assert!(r.in_coa >= 0.0 && r.in_fin >= 0.0 && r.entropy >= 0.0);
    }
}

#[test]
fn zero_budget_is_a_config_error() {
    let cfg = LoopConfig { budget: 0, ..small() };
    assert!(matches!(Engine::new(&cfg, &dataset(40)), Err(Error::Config { .. })));
}

#[test]
fn exhausted_pool_stops_the_run() {
    // 80 samples: 16 held out, 4 initial labels, 60 unlabeled
    let cfg = LoopConfig {
        budget: 25,
        cycles: 5,
        ..small()
    };
    let reports = run(&cfg, &dataset(40)).unwrap();
    assert_eq!(reports.len(), 2);
    let mut engine = Engine::new(&cfg, &dataset(40)).unwrap();
    engine.run_cycle().unwrap();
    engine.run_cycle().unwrap();
    assert!(matches!(engine.run_cycle(), Err(Error::PoolExhausted { .. })));
}

#[test]
fn snapshot_reproduces_the_run() {
    let cfg = small().resolved();
    let again = LoopConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
    assert_eq!(again, cfg);
    let ds = dataset(40);
    let a: Vec<_> = run(&cfg, &ds).unwrap().iter().map(|r| r.without_timing()).collect();
    let b: Vec<_> = run(&again, &ds).unwrap().iter().map(|r| r.without_timing()).collect();
    assert_eq!(a, b);
}

#[test]
fn oracle_is_only_asked_about_selected_samples() {
    let mut engine = Engine::new(&small(), &dataset(40)).unwrap();
    let initial: BTreeSet<SampleId> = engine.pool().labeled().keys().copied().collect();
    let mut selected = BTreeSet::new();
    for _ in 0..3 {
        selected.extend(engine.run_cycle().unwrap().selected);
    }
    let asked: BTreeSet<SampleId> = engine.oracle().queries().iter().copied().collect();
    let allowed: BTreeSet<SampleId> = initial.union(&selected).copied().collect();
    assert_eq!(asked, allowed);
    assert_eq!(engine.oracle().queries().len(), allowed.len());
    assert!(engine.oracle().unauthorized_reads(engine.pool()).is_empty());
}
