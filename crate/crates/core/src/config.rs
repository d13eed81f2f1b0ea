//! Run configuration, read from and written to flat TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::TransformKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ideal,
    Random,
    Entropy,
    Coreset,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Ideal, Strategy::Random, Strategy::Entropy, Strategy::Coreset];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ideal => "ideal",
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Coreset => "coreset",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}`")))
    }
}

/// Every parameter that affects a run. A resolved snapshot of this struct
/// reproduces the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    /// Dataset file; relative paths resolve against the config file.
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub strategy: Strategy,
    /// Coarse augmentations per sample.
    pub k_aug: usize,
    /// Candidate set size for the re-ranker; defaults to `ceil(2.6 * budget)`.
    pub m_cand: Option<usize>,
    /// Samples annotated per cycle.
    pub budget: usize,
    pub cycles: usize,
    /// Weight of the coarse percentile in the fused inconsistency.
    pub gamma: f64,
    /// Norm of the adversarial perturbation; at most `delta` keeps it below
    /// the perceptibility threshold in sup-norm.
    pub epsilon: f64,
    /// Probe radius of the power-iteration step.
    pub xi: f64,
    /// MixUp Beta parameter.
    pub alpha: f64,
    /// Sup-norm threshold a coarse augmentation must exceed.
    pub delta: f64,
    /// Guessed-label weights `(w_u, w_1, .., w_K)`; all ones when absent.
    pub weights: Option<Vec<f64>>,
    pub coarse_transforms: Vec<TransformKind>,
    pub train_steps_per_cycle: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier of the consistency loss.
    pub lambda_u: f64,
    pub hidden_layers: Vec<usize>,
    pub tap_layer: usize,
    pub initial_per_class: usize,
    /// Held-out share of the dataset used only for accuracy.
    pub test_fraction: f64,
    /// Re-initialise the model at the start of every cycle.
    pub cold_start: bool,
    pub disable_ranker: bool,
    pub disable_reranker: bool,
    pub disable_coarse: bool,
    pub disable_fine: bool,
    pub disable_density: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            seed: 0,
            strategy: Strategy::Ideal,
            k_aug: 5,
            m_cand: None,
            budget: 20,
            cycles: 5,
            gamma: 0.4,
            epsilon: 0.05,
            xi: 0.1,
            alpha: 0.75,
            delta: 0.05,
            weights: None,
            coarse_transforms: TransformKind::ALL.to_vec(),
            train_steps_per_cycle: 300,
            batch_size: 32,
            learning_rate: 0.05,
            lambda_u: 1.0,
            hidden_layers: vec![64, 64],
            tap_layer: 0,
            initial_per_class: 2,
            test_fraction: 0.2,
            cold_start: false,
            disable_ranker: false,
            disable_reranker: false,
            disable_coarse: false,
            disable_fine: false,
            disable_density: false,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be finite and > 0, got {v}")))
    }
}

/// Pulls the offending key out of a serde message such as "unknown field `foo`".
fn key_from_message(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("<file>").to_string()
}

impl LoopConfig {
    /// Default candidate count for a budget.
    pub fn default_m_cand(budget: usize) -> usize {
        (2.6 * budget as f64).ceil() as usize
    }

    pub fn m_cand(&self) -> usize {
        self.m_cand.unwrap_or_else(|| Self::default_m_cand(self.budget))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.k_aug + 1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::config("budget", "must be at least 1"));
        }
        if self.cycles == 0 {
            return Err(Error::config("cycles", "must be at least 1"));
        }
        if self.k_aug == 0 {
            return Err(Error::config("k_aug", "must be at least 1"));
        }
        if self.m_cand() < self.budget {
            return Err(Error::config(
                "m_cand",
                format!("{} is smaller than the budget {}", self.m_cand(), self.budget),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("{} outside [0, 1]", self.gamma)));
        }
        positive("epsilon", self.epsilon)?;
        positive("xi", self.xi)?;
        positive("alpha", self.alpha)?;
        positive("delta", self.delta)?;
        positive("learning_rate", self.learning_rate)?;
        if !(self.lambda_u >= 0.0) || !self.lambda_u.is_finite() {
            return Err(Error::config("lambda_u", "must be finite and >= 0"));
        }
        let w = self.weights();
        if w.len() != self.k_aug + 1 {
            return Err(Error::config(
                "weights",
                format!("expected k_aug + 1 = {} entries, got {}", self.k_aug + 1, w.len()),
            ));
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config("weights", "must be nonnegative and not all zero"));
        }
        if self.coarse_transforms.is_empty() {
            return Err(Error::config("coarse_transforms", "must name at least one transform"));
        }
        if self.train_steps_per_cycle == 0 {
            return Err(Error::config("train_steps_per_cycle", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::config("hidden_layers", "layer widths must be positive"));
        }
        if self.tap_layer > self.hidden_layers.len() {
            return Err(Error::config(
                "tap_layer",
                format!("{} exceeds the {} hidden layers", self.tap_layer, self.hidden_layers.len()),
            ));
        }
        if self.initial_per_class == 0 {
            return Err(Error::config("initial_per_class", "must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    /// Copy with every defaulted field made explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.m_cand = Some(self.m_cand());
        c.weights = Some(self.weights());
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = match e.span() {
                Some(span) if !msg.contains('`') => text[span]
                    .split('=')
                    .next()
                    .map(|k| k.trim().to_string())
                    .unwrap_or_default(),
                _ => key_from_message(&msg),
            };
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file and resolves a relative `dataset` against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(ds), Some(dir)) = (cfg.dataset.as_ref(), path.parent()) {
            if ds.is_relative() {
                cfg.dataset = Some(dir.join(ds));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

/// Ablation variants of `base`: the full method, each component removed in
/// turn, and the random baseline last.
pub fn ablation_variants(base: &LoopConfig) -> Vec<(&'static str, LoopConfig)> {
    let with = |f: fn(&mut LoopConfig)| {
        let mut c = base.clone();
        c.strategy = Strategy::Ideal;
        f(&mut c);
        c
    };
    vec![
        ("full", with(|_| {})),
        ("no_density", with(|c| c.disable_density = true)),
        ("no_reranker", with(|c| c.disable_reranker = true)),
        ("no_coarse", with(|c| c.disable_coarse = true)),
        ("no_fine", with(|c| c.disable_fine = true)),
        ("no_ranker", with(|c| c.disable_ranker = true)),
        ("random", with(|c| c.strategy = Strategy::Random)),
    ]
}
