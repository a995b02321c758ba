//! CART random forest classifier with Gini impurity importances.
//!
//! Each tree is grown on a bootstrap sample; every node considers a fresh
//! random subset of features and splits at midpoints between consecutive
//! distinct values. Importances are the mean (over trees) of each
//! feature's total weighted Gini decrease, L1-normalised.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DaalError, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Minimum number of samples in a leaf.
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 5,
            min_leaf: 2,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(DaalError::Config("n_trees must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(DaalError::Config("max_depth must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(DaalError::Config("min_leaf must be at least 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(DaalError::Config("features_per_split must be positive".into()));
        }
        Ok(())
    }

    fn mtry(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Class histogram of the bootstrap samples reaching the leaf.
        counts: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    /// Total weighted Gini decrease per feature.
    pub impurity_decrease: Vec<f64>,
    /// Rows in the tree's bootstrap sample.
    pub bootstrap_rows: usize,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Normalised class distribution of the leaf reached by `x`.
    pub fn leaf_distribution(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf(x);
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    }

    /// Depth of the deepest leaf (a stump has depth 1).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_sizes(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { counts } => Some(counts.iter().sum()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub importances: Vec<f64>,
    pub classes: usize,
    pub dim: usize,
}

fn gini(counts: &[f64], n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

struct Grower<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    classes: usize,
    cfg: &'a ForestConfig,
    mtry: usize,
    root_n: f64,
    rng: R,
    nodes: Vec<Node>,
    decrease: Vec<f64>,
}

impl<R: Rng> Grower<'_, R> {
    fn histogram(&self, rows: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; self.classes];
        for &r in rows {
            h[self.y[r]] += 1.0;
        }
        h
    }

    /// Best (feature, threshold, weighted decrease, split position) among a
    /// random feature subset. `rows` is reordered by the winning feature.
    fn best_split(&mut self, rows: &mut [usize], counts: &[f64]) -> Option<(usize, f64, f64)> {
        let n = rows.len();
        let parent = gini(counts, n as f64);
        let dim = self.x[0].len();
        let features = sample_indices(&mut self.rng, dim, self.mtry).into_vec();
        let mut best: Option<(usize, f64, f64)> = None;
        for &feat in &features {
            rows.sort_by(|&a, &b| self.x[a][feat].total_cmp(&self.x[b][feat]).then(a.cmp(&b)));
            let mut left = vec![0.0; self.classes];
            for i in 0..n - 1 {
                left[self.y[rows[i]]] += 1.0;
                let nl = i + 1;
                let nr = n - nl;
                let (v, next) = (self.x[rows[i]][feat], self.x[rows[i + 1]][feat]);
                if v == next || nl < self.cfg.min_leaf || nr < self.cfg.min_leaf {
                    continue;
                }
                let right: Vec<f64> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let child = (nl as f64 * gini(&left, nl as f64) + nr as f64 * gini(&right, nr as f64))
                    / n as f64;
                let gain = (n as f64 / self.root_n) * (parent - child);
                if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((feat, 0.5 * (v + next), gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let counts = self.histogram(rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if depth >= self.cfg.max_depth || pure || rows.len() < 2 * self.cfg.min_leaf {
            return id;
        }
        let Some((feature, threshold, gain)) = self.best_split(rows, &counts) else {
            return id;
        };
        self.decrease[feature] += gain;
        let (mut l, mut r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&row| self.x[row][feature] <= threshold);
        let left = self.grow(&mut l, depth + 1);
        let right = self.grow(&mut r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Fit a forest on rows `x` with integer targets `y` (classes `0..=max(y)`).
pub fn fit(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(DaalError::Consistency(format!("{} rows but {} targets", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(DaalError::DegenerateForest("need at least two rows".into()));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(DaalError::Consistency("rows have inconsistent or zero width".into()));
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(DaalError::DegenerateForest(format!("all targets equal {first}")));
    }
    let classes = y.iter().copied().max().expect("non-empty") + 1;
    let mtry = cfg.mtry(dim);
    let n = x.len();

    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive(cfg.seed, "tree", &[t as u64]));
            let mut rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut g = Grower {
                x,
                y,
                classes,
                cfg,
                mtry,
                root_n: n as f64,
                rng,
                nodes: Vec::new(),
                decrease: vec![0.0; dim],
            };
            g.grow(&mut rows, 0);
            Tree {
                nodes: g.nodes,
                impurity_decrease: g.decrease,
                bootstrap_rows: n,
            }
        })
        .collect();

    let mut importances = vec![0.0; dim];
    for t in &trees {
        for (acc, d) in importances.iter_mut().zip(&t.impurity_decrease) {
            *acc += d / cfg.n_trees as f64;
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(Forest {
        trees,
        importances,
        classes,
        dim,
    })
}

impl Forest {
    /// Mean of the trees' leaf class distributions.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(DaalError::Consistency(format!(
                "input has dimension {}, forest expects {}",
                x.len(),
                self.dim
            )));
        }
        let mut p = vec![0.0; self.classes];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.leaf_distribution(x)) {
                *acc += v;
            }
        }
        let n = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        Ok(p)
    }

    /// Majority vote over per-tree argmax; ties go to the lower class.
    pub fn predict_vote(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(DaalError::Consistency("dimension mismatch".into()));
        }
        let mut votes = vec![0usize; self.classes];
        for t in &self.trees {
            votes[argmax(&t.leaf_distribution(x))] += 1;
        }
        Ok(argmax_usize(&votes))
    }

    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| DaalError::Serde(e.to_string()))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmax_usize(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
