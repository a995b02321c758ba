//! Weakly discriminative feature subsets and per-sample loss weights.
//!
//! For each source domain `e` a feature `j` scores `w_e[j] - α·w_y[j]`,
//! where `w_y` is the label forest importance and `w_e` the importance of a
//! one-vs-rest forest separating domain `e` from the other source domains.
//! The top `m` features form `S_e`. Loss weights are the multiclass domain
//! forest posteriors `p(e_i | f_i)`, rescaled to mean 1 over the labeled set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DaalError, Result};
use crate::forest::{fit, ForestConfig};
use crate::nn::FeatureBatch;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFeaturePlan {
    /// Ascending feature indices per source domain.
    subsets: BTreeMap<usize, Vec<usize>>,
    weights: BTreeMap<u64, f64>,
    pub alpha: f64,
    pub m: usize,
    pub feature_dim: usize,
    /// Label importances `w_y` (empty when built from parts).
    #[serde(default)]
    pub label_importance: Vec<f64>,
    /// Scores `w` per domain (empty when built from parts).
    #[serde(default)]
    pub scores: BTreeMap<usize, Vec<f64>>,
}

/// Audit summary written next to run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDump {
    pub alpha: f64,
    pub m: usize,
    pub feature_dim: usize,
    pub subsets: BTreeMap<usize, Vec<usize>>,
    pub weight_count: usize,
    pub weight_mean: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    pub weight_std: f64,
}

impl WeakFeaturePlan {
    pub fn from_parts(
        subsets: BTreeMap<usize, Vec<usize>>,
        weights: BTreeMap<u64, f64>,
        alpha: f64,
        m: usize,
        feature_dim: usize,
    ) -> Self {
        let subsets = subsets
            .into_iter()
            .map(|(e, mut s)| {
                s.sort_unstable();
                (e, s)
            })
            .collect();
        Self {
            subsets,
            weights,
            alpha,
            m,
            feature_dim,
            label_importance: Vec::new(),
            scores: BTreeMap::new(),
        }
    }

    pub fn subset(&self, domain: usize) -> Option<&[usize]> {
        self.subsets.get(&domain).map(Vec::as_slice)
    }

    pub fn subsets(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.subsets
    }

    pub fn weight(&self, id: u64) -> Option<f64> {
        self.weights.get(&id).copied()
    }

    pub fn weights(&self) -> &BTreeMap<u64, f64> {
        &self.weights
    }

    /// Decay coefficient on the full-feature cross-entropy, `m/d`.
    pub fn lambda(&self) -> f64 {
        self.m as f64 / self.feature_dim as f64
    }

    pub fn dump(&self) -> PlanDump {
        let w: Vec<f64> = self.weights.values().copied().collect();
        let n = w.len().max(1) as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        PlanDump {
            alpha: self.alpha,
            m: self.m,
            feature_dim: self.feature_dim,
            subsets: self.subsets.clone(),
            weight_count: w.len(),
            weight_mean: mean,
            weight_min: w.iter().copied().fold(f64::INFINITY, f64::min),
            weight_max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            weight_std: var.sqrt(),
        }
    }
}

/// `w = w_e - α·w_y`, elementwise.
pub fn score_features(label_importance: &[f64], domain_importance: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if label_importance.len() != domain_importance.len() {
        return Err(DaalError::Consistency(format!(
            "importance vectors have lengths {} and {}",
            label_importance.len(),
            domain_importance.len()
        )));
    }
    if !(alpha >= 0.0) {
        return Err(DaalError::Config(format!("alpha must be non-negative, got {alpha}")));
    }
    Ok(domain_importance
        .iter()
        .zip(label_importance)
        .map(|(we, wy)| we - alpha * wy)
        .collect())
}

/// Feature indices ordered by descending score, ties by lower index.
pub fn rank_features(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Rescale non-negative posteriors to mean 1. All-zero input gives all ones.
pub fn normalize_weights(posteriors: &[f64]) -> Vec<f64> {
    let mean = posteriors.iter().sum::<f64>() / posteriors.len().max(1) as f64;
    if mean > 0.0 {
        posteriors.iter().map(|p| p / mean).collect()
    } else {
        vec![1.0; posteriors.len()]
    }
}

/// Build the plan from labeled features. Fits one label forest, one
/// one-vs-rest forest per source domain and one multiclass domain forest.
pub fn build_plan(labeled: &FeatureBatch, cfg: &ForestConfig, alpha: f64, m: usize) -> Result<WeakFeaturePlan> {
    let labels = labeled.labels()?;
    let d = labeled.dim();
    if m > d {
        return Err(DaalError::Config(format!("subset size {m} exceeds feature dimension {d}")));
    }
    let mut per_domain: BTreeMap<usize, usize> = BTreeMap::new();
    for &e in &labeled.domains {
        *per_domain.entry(e).or_default() += 1;
    }
    if per_domain.len() < 2 {
        return Err(DaalError::Contract(
            "domain membership needs labeled samples from at least two domains".into(),
        ));
    }
    if let Some((e, _)) = per_domain.iter().find(|(_, &n)| n < 2) {
        return Err(DaalError::Contract(format!("domain {e} has fewer than two labeled samples")));
    }

    let label_forest = fit(
        &labeled.features,
        labels,
        &ForestConfig { seed: seed::derive(cfg.seed, "label", &[]), ..cfg.clone() },
    )?;
    let w_y = label_forest.importances.clone();

    let mut subsets = BTreeMap::new();
    let mut scores = BTreeMap::new();
    for &e in per_domain.keys() {
        let membership: Vec<usize> = labeled.domains.iter().map(|&di| usize::from(di == e)).collect();
        let forest = fit(
            &labeled.features,
            &membership,
            &ForestConfig { seed: seed::derive(cfg.seed, "domain", &[e as u64]), ..cfg.clone() },
        )?;
        let w = score_features(&w_y, &forest.importances, alpha)?;
        let mut subset: Vec<usize> = rank_features(&w).into_iter().take(m).collect();
        subset.sort_unstable();
        subsets.insert(e, subset);
        scores.insert(e, w);
    }

    let posterior_forest = fit(
        &labeled.features,
        &labeled.domains,
        &ForestConfig { seed: seed::derive(cfg.seed, "posterior", &[]), ..cfg.clone() },
    )?;
    let posteriors = labeled
        .features
        .iter()
        .zip(&labeled.domains)
        .map(|(f, &e)| Ok(posterior_forest.predict_proba(f)?[e]))
        .collect::<Result<Vec<f64>>>()?;
    let weights = labeled.ids.iter().copied().zip(normalize_weights(&posteriors)).collect();

    Ok(WeakFeaturePlan {
        subsets,
        weights,
        alpha,
        m,
        feature_dim: d,
        label_importance: w_y,
        scores,
    })
}
