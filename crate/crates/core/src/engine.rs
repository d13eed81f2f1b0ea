//! The active-learning loop.
//!
//! Each cycle trains the classifier with MixUp label propagation, measures
//! held-out accuracy, scores the unlabeled pool, selects `budget` samples and
//! has the oracle annotate them. Ground-truth labels of pool samples live only
//! inside the [`Oracle`], which records every query for auditing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use log::{debug, info};
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{coarse_augment, fine_augment_set, vat_perturbation};
use crate::config::{LoopConfig, Strategy};
use crate::dataset::{Dataset, SampleId};
use crate::nn::{Classifier, PredictionDist};
use crate::propagator::{build_training_batch, guess_label, BatchItem};
use crate::rng::{stream, Purpose, StreamRng};
use crate::selector::{self, coarse_inconsistency, entropy, fine_inconsistency, ScoreRecord};
use crate::{Error, Result};

/// Holds the hidden labels of the pool and logs every label it hands out.
#[derive(Debug, Clone)]
pub struct Oracle {
    truth: HashMap<SampleId, usize>,
    queries: Vec<SampleId>,
}

impl Oracle {
    pub fn new(ids: &[SampleId], labels: &[usize]) -> Self {
        Self {
            truth: ids.iter().copied().zip(labels.iter().copied()).collect(),
            queries: Vec::new(),
        }
    }

    pub fn label(&mut self, id: SampleId) -> Result<usize> {
        let class = *self.truth.get(&id).ok_or(Error::UnknownId(id))?;
        self.queries.push(id);
        Ok(class)
    }

    /// Ids of `per_class` random samples of every class, chosen without
    /// revealing labels to the caller.
    pub fn stratified_ids<R: Rng + ?Sized>(&self, classes: usize, per_class: usize, rng: &mut R) -> Result<Vec<SampleId>> {
        let mut by_class: Vec<Vec<SampleId>> = vec![Vec::new(); classes];
        let mut sorted: Vec<(&SampleId, &usize)> = self.truth.iter().collect();
        sorted.sort();
        for (id, &c) in sorted {
            by_class[c].push(*id);
        }
        let mut out = Vec::with_capacity(classes * per_class);
        for (c, ids) in by_class.iter().enumerate() {
            if ids.len() < per_class {
                return Err(Error::config(
                    "initial_per_class",
                    format!("class {c} has only {} pool samples, need {per_class}", ids.len()),
                ));
            }
            out.extend(ids.choose_multiple(rng, per_class).copied());
        }
        Ok(out)
    }

    /// Every id queried so far, in query order.
    pub fn queries(&self) -> &[SampleId] {
        &self.queries
    }

    /// Queried ids that are not in the labeled partition of `pool`.
    pub fn unauthorized_reads(&self, pool: &Pool) -> Vec<SampleId> {
        self.queries
            .iter()
            .copied()
            .filter(|id| !pool.labeled.contains_key(id))
            .collect()
    }
}

/// Labeled and unlabeled partitions plus the feature store.
#[derive(Debug, Clone)]
pub struct Pool {
    labeled: BTreeMap<SampleId, usize>,
    unlabeled: BTreeSet<SampleId>,
    index: HashMap<SampleId, usize>,
    features: Vec<Vec<f64>>,
}

impl Pool {
    /// Everything starts unlabeled.
    pub fn new(ids: Vec<SampleId>, features: Vec<Vec<f64>>) -> Self {
        let index = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Self {
            labeled: BTreeMap::new(),
            unlabeled: ids.into_iter().collect(),
            index,
            features,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn labeled(&self) -> &BTreeMap<SampleId, usize> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<SampleId> {
        &self.unlabeled
    }

    pub fn features(&self, id: SampleId) -> Result<&[f64]> {
        self.index
            .get(&id)
            .map(|&i| self.features[i].as_slice())
            .ok_or(Error::UnknownId(id))
    }

    /// Moves `id` from the unlabeled to the labeled partition.
    pub fn annotate(&mut self, id: SampleId, class: usize) -> Result<()> {
        if !self.unlabeled.remove(&id) {
            return Err(if self.index.contains_key(&id) {
                Error::Usage(format!("sample {id} is already labeled"))
            } else {
                Error::UnknownId(id)
            });
        }
        self.labeled.insert(id, class);
        Ok(())
    }

    /// Partitions are disjoint and together cover the feature store.
    pub fn is_consistent(&self) -> bool {
        self.labeled.keys().all(|id| !self.unlabeled.contains(id))
            && self.labeled.len() + self.unlabeled.len() == self.len()
            && self.labeled.keys().chain(&self.unlabeled).all(|id| self.index.contains_key(id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: usize,
    /// Labeled samples the model of this cycle was trained on.
    pub n_labeled: usize,
    /// Held-out accuracy after this cycle's training.
    pub accuracy: f64,
    /// Fused inconsistency over the unlabeled pool, when the ranker ran.
    pub mean_in_total: Option<f64>,
    pub max_in_total: Option<f64>,
    /// Wall time of scoring plus selection.
    pub select_ms: f64,
    pub selected: Vec<SampleId>,
    pub strategy: Strategy,
    pub seed: u64,
}

impl CycleReport {
    /// Copy without the wall-clock field, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            select_ms: 0.0,
            ..self.clone()
        }
    }
}

/// Pool data handed to the baseline selectors. Slices are aligned with `ids`.
#[derive(Debug, Clone, Copy)]
pub struct ScoredPool<'a> {
    pub ids: &'a [SampleId],
    pub entropy: &'a [f64],
    pub embeddings: &'a [Vec<f64>],
    /// Tap-layer representations of the labeled samples (core-set seeds).
    pub labeled_embeddings: &'a [Vec<f64>],
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Random, entropy and core-set selection.
pub fn baseline_select<R: Rng + ?Sized>(
    strategy: Strategy,
    pool: &ScoredPool<'_>,
    budget: usize,
    rng: &mut R,
) -> Result<Vec<SampleId>> {
    let n = pool.ids.len();
    if budget > n {
        return Err(Error::PoolExhausted { available: n, budget });
    }
    match strategy {
        Strategy::Random => {
            let mut ids = pool.ids.to_vec();
            ids.shuffle(rng);
            ids.truncate(budget);
            Ok(ids)
        }
        Strategy::Entropy => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                pool.entropy[b]
                    .total_cmp(&pool.entropy[a])
                    .then(pool.ids[a].cmp(&pool.ids[b]))
            });
            Ok(order.into_iter().take(budget).map(|i| pool.ids[i]).collect())
        }
        Strategy::Coreset => {
            // greedy k-center: repeatedly take the point farthest from all centers
            let mut nearest: Vec<f64> = pool
                .embeddings
                .iter()
                .map(|e| {
                    pool.labeled_embeddings
                        .iter()
                        .map(|c| sq_dist(e, c))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let mut taken = vec![false; n];
            let mut out = Vec::with_capacity(budget);
            for _ in 0..budget {
                let mut best: Option<usize> = None;
                for i in (0..n).filter(|&i| !taken[i]) {
                    best = match best {
                        Some(b) if nearest[i] < nearest[b] || (nearest[i] == nearest[b] && pool.ids[i] > pool.ids[b]) => Some(b),
                        _ => Some(i),
                    };
                }
                let pick = best.expect("budget <= pool size");
                taken[pick] = true;
                out.push(pool.ids[pick]);
                let center = &pool.embeddings[pick];
                for (d, e) in nearest.iter_mut().zip(pool.embeddings) {
                    *d = d.min(sq_dist(e, center));
                }
            }
            Ok(out)
        }
        Strategy::Ideal => Err(Error::config("strategy", "ideal is not a baseline strategy")),
    }
}

/// Per-sample quantities computed by one scoring pass.
#[derive(Debug, Clone)]
pub struct PoolScores {
    pub records: Vec<ScoreRecord>,
    pub embeddings: Vec<Vec<f64>>,
}

/// Outcome of the selection phase of one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub ids: Vec<SampleId>,
    /// Mean and max fused inconsistency over the unlabeled pool, when the ranker ran.
    pub in_total: Option<(f64, f64)>,
}

pub struct Engine {
    config: LoopConfig,
    model: Classifier,
    initial_model: Classifier,
    pool: Pool,
    oracle: Oracle,
    test_features: Vec<Vec<f64>>,
    test_labels: Vec<usize>,
    classes: usize,
    cycle: usize,
}

impl Engine {
    /// Splits off the held-out set, initialises the model and labels the
    /// class-stratified starting set.
    pub fn new(config: &LoopConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let config = config.resolved();
        if dataset.classes < 2 {
            return Err(Error::Integrity("dataset needs at least 2 classes".into()));
        }
        let n = dataset.len();
        let n_test = ((n as f64) * config.test_fraction).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(config.seed, Purpose::Split, 0, 0));
        let (test_idx, pool_idx) = order.split_at(n_test.min(n));
        if test_idx.is_empty() {
            return Err(Error::config("test_fraction", "leaves no held-out samples"));
        }
        let mut pool_idx = pool_idx.to_vec();
        pool_idx.sort_unstable();

        let pool_ids: Vec<SampleId> = pool_idx.iter().map(|&i| dataset.ids[i]).collect();
        let pool_labels: Vec<usize> = pool_idx.iter().map(|&i| dataset.labels[i]).collect();
        let pool_features = pool_idx.iter().map(|&i| dataset.features[i].clone()).collect();
        let oracle = Oracle::new(&pool_ids, &pool_labels);
        let pool = Pool::new(pool_ids, pool_features);

        let model = Classifier::new(
            dataset.dim,
            &config.hidden_layers,
            dataset.classes,
            config.tap_layer,
            &mut stream(config.seed, Purpose::ModelInit, 0, 0),
        )?;
        let mut engine = Self {
            initial_model: model.clone(),
            model,
            pool,
            oracle,
            test_features: test_idx.iter().map(|&i| dataset.features[i].clone()).collect(),
            test_labels: test_idx.iter().map(|&i| dataset.labels[i]).collect(),
            classes: dataset.classes,
            cycle: 0,
            config,
        };
        let initial = engine.oracle.stratified_ids(
            engine.classes,
            engine.config.initial_per_class,
            &mut stream(engine.config.seed, Purpose::InitialLabels, 0, 0),
        )?;
        engine.annotate(&initial)?;
        Ok(engine)
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    fn annotate(&mut self, ids: &[SampleId]) -> Result<()> {
        for &id in ids {
            let class = self.oracle.label(id)?;
            self.pool.annotate(id, class)?;
        }
        Ok(())
    }

    /// Held-out accuracy of the current model.
    pub fn evaluate(&self) -> Result<f64> {
        let mut correct = 0usize;
        for (x, &y) in self.test_features.iter().zip(&self.test_labels) {
            if self.model.predict(x)?.argmax() == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / self.test_labels.len() as f64)
    }

    /// Coarse variants of `x`, or `k` copies of it when coarse augmentation is disabled.
    fn coarse_variants(&self, id: SampleId, x: &[f64], rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
        let c = &self.config;
        if c.disable_coarse {
            return Ok(vec![x.to_vec(); c.k_aug]);
        }
        Ok(coarse_augment(id, x, c.k_aug, c.delta, &c.coarse_transforms, rng)?.variants)
    }

    /// Final augmentations of one unlabeled sample and its guessed label.
    fn augment_for_training(&self, id: SampleId, x: &[f64], rng: &mut StreamRng) -> Result<(Vec<Vec<f64>>, PredictionDist)> {
        let c = &self.config;
        let mut variants = self.coarse_variants(id, x, rng)?;
        if !c.disable_fine {
            for v in &mut variants {
                let y_bar = self.model.predict(v)?;
                let r = vat_perturbation(&self.model, v, &y_bar, c.epsilon, c.xi, rng)?;
                for (a, b) in v.iter_mut().zip(&r.vector) {
                    *a += b;
                }
            }
        }
        let mut preds = Vec::with_capacity(variants.len() + 1);
        preds.push(self.model.predict(x)?);
        for v in &variants {
            preds.push(self.model.predict(v)?);
        }
        let guess = guess_label(id, &preds, &c.weights())?;
        Ok((variants, guess.distribution))
    }

    fn batch_item(&self, input: Vec<f64>, target: PredictionDist) -> Result<BatchItem> {
        let representation = self.model.represent(&input)?;
        Ok(BatchItem {
            input,
            representation,
            target,
        })
    }

    /// Propagator phase: `train_steps_per_cycle` MixUp steps.
    fn train(&mut self) -> Result<()> {
        let c = self.config.clone();
        let mut rng = stream(c.seed, Purpose::Training, self.cycle as u64, 0);
        let labeled: Vec<(SampleId, usize)> = self.pool.labeled.iter().map(|(&id, &y)| (id, y)).collect();
        let unlabeled: Vec<SampleId> = self.pool.unlabeled.iter().copied().collect();
        let keep_sources = c.tap_layer > 0;
        let mut last = None;
        for _ in 0..c.train_steps_per_cycle {
            let mut l_items = Vec::with_capacity(c.batch_size);
            for _ in 0..c.batch_size {
                let (id, y) = labeled[rng.random_range(0..labeled.len())];
                let x = self.pool.features(id)?.to_vec();
                l_items.push(self.batch_item(x, PredictionDist::one_hot(self.classes, y))?);
            }
            let take = c.batch_size.min(unlabeled.len());
            let mut u_items = Vec::with_capacity(take);
            let mut a_items = Vec::with_capacity(take * c.k_aug);
            for i in index::sample(&mut rng, unlabeled.len(), take) {
                let id = unlabeled[i];
                let x = self.pool.features(id)?.to_vec();
                let (augmented, guess) = self.augment_for_training(id, &x, &mut rng)?;
                for a in augmented {
                    a_items.push(self.batch_item(a, guess.clone())?);
                }
                u_items.push(self.batch_item(x, guess)?);
            }
            let batch = build_training_batch(&l_items, &u_items, &a_items, c.alpha, keep_sources, &mut rng)?;
            let sup: Vec<_> = batch.supervised.iter().map(|m| m.as_training_pair()).collect();
            let con: Vec<_> = batch.consistency.iter().map(|m| m.as_training_pair()).collect();
            last = Some(self.model.train_step(&sup, &con, c.learning_rate, c.lambda_u)?);
        }
        if let Some(loss) = last {
            debug!(
                "cycle {} training loss {:.4} (supervised {:.4}, consistency {:.4})",
                self.cycle, loss.total, loss.supervised, loss.consistency
            );
        }
        Ok(())
    }

    /// Inconsistency, entropy and embedding of every id, from a fresh
    /// augmentation draw per sample. Parallel over samples.
    pub fn score(&self, ids: &[SampleId]) -> Result<PoolScores> {
        let c = &self.config;
        let use_coarse = !c.disable_coarse;
        let use_fine = !c.disable_fine;
        let scored: Vec<(ScoreRecord, Vec<f64>)> = ids
            .par_iter()
            .map(|&id| {
                let mut rng = stream(c.seed, Purpose::Scoring, self.cycle as u64, id.0);
                let x = self.pool.features(id)?;
                let fwd = self.model.forward(x)?;
                let en = entropy(&fwd.probs);
                let (mut in_coa, mut in_fin) = (0.0, 0.0);
                if use_coarse || use_fine {
                    let coarse = if use_coarse {
                        coarse_augment(id, x, c.k_aug, c.delta, &c.coarse_transforms, &mut rng)?
                    } else {
                        crate::augment::CoarseAugmentSet {
                            source_id: id,
                            variants: vec![x.to_vec(); c.k_aug],
                            transforms: Vec::new(),
                        }
                    };
                    if use_fine {
                        let fine = fine_augment_set(&self.model, &coarse, c.epsilon, c.xi, &mut rng)?;
                        let perturbed: Vec<PredictionDist> = fine
                            .perturbed
                            .iter()
                            .map(|p| self.model.predict(p))
                            .collect::<Result<_>>()?;
                        in_fin = fine_inconsistency(&fine.coarse_preds, &perturbed)?;
                        if use_coarse {
                            let mut all = Vec::with_capacity(coarse.len() + 1);
                            all.push(fwd.probs.clone());
                            all.extend(fine.coarse_preds);
                            in_coa = coarse_inconsistency(&all)?;
                        }
                    } else {
                        let mut all = Vec::with_capacity(coarse.len() + 1);
                        all.push(fwd.probs.clone());
                        for v in &coarse.variants {
                            all.push(self.model.predict(v)?);
                        }
                        in_coa = coarse_inconsistency(&all)?;
                    }
                }
                Ok((ScoreRecord::new(id, in_coa, in_fin, en), fwd.hidden))
            })
            .collect::<Result<_>>()?;
        let (records, embeddings) = scored.into_iter().unzip();
        Ok(PoolScores { records, embeddings })
    }

    fn ranker_enabled(&self) -> bool {
        let c = &self.config;
        !c.disable_ranker && !(c.disable_coarse && c.disable_fine)
    }

    /// Scores the unlabeled pool with the current model and picks `budget`
    /// ids without annotating them.
    pub fn select(&self) -> Result<Selection> {
        let c = &self.config;
        let budget = c.budget;
        let ids: Vec<SampleId> = self.pool.unlabeled.iter().copied().collect();
        let mut rng = stream(c.seed, Purpose::Selection, self.cycle as u64, 0);

        if c.strategy != Strategy::Ideal {
            let (entropy, embeddings) = match c.strategy {
                Strategy::Random => (Vec::new(), Vec::new()),
                _ => {
                    let fwd: Vec<(f64, Vec<f64>)> = ids
                        .par_iter()
                        .map(|&id| {
                            let f = self.model.forward(self.pool.features(id)?)?;
                            Ok((entropy(&f.probs), f.hidden))
                        })
                        .collect::<Result<_>>()?;
                    fwd.into_iter().unzip()
                }
            };
            let labeled_embeddings = if c.strategy == Strategy::Coreset {
                self.pool
                    .labeled
                    .keys()
                    .map(|&id| self.model.represent(self.pool.features(id)?))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let scored = ScoredPool {
                ids: &ids,
                entropy: &entropy,
                embeddings: &embeddings,
                labeled_embeddings: &labeled_embeddings,
            };
            return Ok(Selection {
                ids: baseline_select(c.strategy, &scored, budget, &mut rng)?,
                in_total: None,
            });
        }

        let m_cand = c.m_cand().min(ids.len());
        if self.ranker_enabled() {
            let mut scores = self.score(&ids)?;
            let gamma = match (c.disable_coarse, c.disable_fine) {
                (true, _) => 0.0,
                (_, true) => 1.0,
                _ => c.gamma,
            };
            selector::fuse_scores(&mut scores.records, gamma)?;
            let totals: Vec<f64> = scores.records.iter().map(|r| r.in_total).collect();
            let mean = totals.iter().sum::<f64>() / totals.len() as f64;
            let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let candidates = selector::top_candidates(&scores.records, m_cand);
            let chosen = if c.disable_reranker {
                candidates[..budget].to_vec()
            } else {
                selector::rerank(&mut scores.records, &scores.embeddings, &candidates, budget, !c.disable_density)?
            };
            return Ok(Selection {
                ids: chosen.into_iter().map(|i| scores.records[i].sample_id).collect(),
                in_total: Some((mean, max)),
            });
        }

        // Without the ranker the candidate set is a uniform draw; its first
        // `budget` entries coincide with the random baseline under the same seed.
        let mut shuffled = ids;
        shuffled.shuffle(&mut rng);
        shuffled.truncate(m_cand);
        if c.disable_reranker {
            shuffled.truncate(budget);
            return Ok(Selection {
                ids: shuffled,
                in_total: None,
            });
        }
        let mut scores = self.score_entropy_only(&shuffled)?;
        let all: Vec<usize> = (0..shuffled.len()).collect();
        let chosen = selector::rerank(&mut scores.records, &scores.embeddings, &all, budget, !c.disable_density)?;
        Ok(Selection {
            ids: chosen.into_iter().map(|i| scores.records[i].sample_id).collect(),
            in_total: None,
        })
    }

    fn score_entropy_only(&self, ids: &[SampleId]) -> Result<PoolScores> {
        let scored: Vec<(ScoreRecord, Vec<f64>)> = ids
            .par_iter()
            .map(|&id| {
                let f = self.model.forward(self.pool.features(id)?)?;
                Ok((ScoreRecord::new(id, 0.0, 0.0, entropy(&f.probs)), f.hidden))
            })
            .collect::<Result<_>>()?;
        let (records, embeddings) = scored.into_iter().unzip();
        Ok(PoolScores { records, embeddings })
    }

    /// Train, evaluate, score, select and annotate once.
    pub fn run_cycle(&mut self) -> Result<CycleReport> {
        let budget = self.config.budget;
        if self.pool.n_unlabeled() < budget {
            return Err(Error::PoolExhausted {
                available: self.pool.n_unlabeled(),
                budget,
            });
        }
        if self.config.cold_start {
            self.model = self.initial_model.clone();
        }
        let n_labeled = self.pool.n_labeled();
        self.train()?;
        let accuracy = self.evaluate()?;

        let started = Instant::now();
        let selection = self.select()?;
        let select_ms = started.elapsed().as_secs_f64() * 1e3;

        self.annotate(&selection.ids)?;
        let report = CycleReport {
            cycle: self.cycle,
            n_labeled,
            accuracy,
            mean_in_total: selection.in_total.map(|t| t.0),
            max_in_total: selection.in_total.map(|t| t.1),
            select_ms,
            selected: selection.ids,
            strategy: self.config.strategy,
            seed: self.config.seed,
        };
        info!(
            "cycle {} [{}] labeled {} accuracy {:.4} select {:.1} ms",
            report.cycle, report.strategy, report.n_labeled, report.accuracy, report.select_ms
        );
        self.cycle += 1;
        Ok(report)
    }
}

/// Runs `config.cycles` cycles, stopping early once the pool cannot cover the budget.
pub fn run(config: &LoopConfig, dataset: &Dataset) -> Result<Vec<CycleReport>> {
    let mut engine = Engine::new(config, dataset)?;
    let mut reports = Vec::with_capacity(config.cycles);
    for _ in 0..config.cycles {
        match engine.run_cycle() {
            Ok(r) => reports.push(r),
            Err(Error::PoolExhausted { available, budget }) => {
                info!("stopping early: {available} unlabeled samples left, budget {budget}");
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(reports)
}
