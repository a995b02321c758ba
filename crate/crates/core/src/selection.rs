//! Sample selection: centroid-based domain-adversarial scoring and the
//! random, least-confidence and max-entropy baselines.
//!
//! For a query feature `f` from domain `a` and a hypothesised class `k`:
//!
//! - `intra_cross(f, k, a)`: mean L2 distance to the class-`k` centroids
//!   of the other domains.
//! - `inter_same(f, k, a)`: mean L2 distance to the other classes'
//!   centroids within domain `a`.
//!
//! The difficulty of `f` is the expectation over the model's class
//! probabilities of `intra_cross - inter_same`; higher means harder.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, PoolState};
use crate::error::{DaalError, Result};
use crate::nn::{FeatureBatch, MlpModel};
use crate::seed;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-(class, domain) feature means of the labeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    pub num_classes: usize,
    pub num_domains: usize,
    pub dim: usize,
    /// `centroids[k][a]`, `None` when no labeled sample has class `k` in domain `a`.
    centroids: Vec<Vec<Option<Vec<f64>>>>,
    counts: Vec<Vec<usize>>,
}

impl CentroidTable {
    pub fn centroid(&self, k: usize, a: usize) -> Option<&[f64]> {
        self.centroids.get(k)?.get(a)?.as_deref()
    }

    pub fn count(&self, k: usize, a: usize) -> usize {
        self.counts.get(k).and_then(|r| r.get(a)).copied().unwrap_or(0)
    }
}

pub fn compute_centroids(labeled: &FeatureBatch) -> Result<CentroidTable> {
    if labeled.is_empty() {
        return Err(DaalError::Contract("cannot compute centroids of an empty batch".into()));
    }
    let labels = labeled.labels()?;
    let dim = labeled.dim();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let num_domains = labeled.domains.iter().copied().max().unwrap_or(0) + 1;
    let mut sums = vec![vec![vec![0.0; dim]; num_domains]; num_classes];
    let mut counts = vec![vec![0usize; num_domains]; num_classes];
    for ((f, &k), &a) in labeled.features.iter().zip(labels).zip(&labeled.domains) {
        counts[k][a] += 1;
        for (s, v) in sums[k][a].iter_mut().zip(f) {
            *s += v;
        }
    }
    let centroids = sums
        .into_iter()
        .zip(&counts)
        .map(|(row, crow)| {
            row.into_iter()
                .zip(crow)
                .map(|(s, &n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
                .collect()
        })
        .collect();
    Ok(CentroidTable {
        num_classes,
        num_domains,
        dim,
        centroids,
        counts,
    })
}

/// Mean distance from `f` to class `k` centroids of domains other than `a`.
pub fn phi_intra_cross(f: &[f64], k: usize, a: usize, ct: &CentroidTable) -> Result<f64> {
    let (sum, n) = (0..ct.num_domains)
        .filter(|&b| b != a)
        .filter_map(|b| ct.centroid(k, b))
        .fold((0.0, 0usize), |(s, n), c| (s + euclidean(f, c), n + 1));
    if n == 0 {
        return Err(DaalError::UndefinedScore(format!(
            "no class-{k} centroid outside domain {a}"
        )));
    }
    Ok(sum / n as f64)
}

/// Mean distance from `f` to the centroids of classes other than `k` in domain `a`.
pub fn phi_inter_same(f: &[f64], k: usize, a: usize, ct: &CentroidTable) -> Result<f64> {
    let (sum, n) = (0..ct.num_classes)
        .filter(|&l| l != k)
        .filter_map(|l| ct.centroid(l, a))
        .fold((0.0, 0usize), |(s, n), c| (s + euclidean(f, c), n + 1));
    if n == 0 {
        return Err(DaalError::UndefinedScore(format!(
            "no centroid of another class in domain {a}"
        )));
    }
    Ok(sum / n as f64)
}

/// Which distance terms enter the difficulty score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// `intra_cross - inter_same`.
    Combined,
    IntraCross,
    /// `-inter_same`.
    InterSame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub id: u64,
    pub phi: f64,
    pub intra_cross: Vec<Option<f64>>,
    pub inter_same: Vec<Option<f64>>,
}

/// Expected difficulty of every row of `unlabeled`. Classes whose required
/// terms are undefined are dropped and the remaining probabilities
/// renormalised; rows with nothing left are skipped with a warning.
pub fn daal_score(unlabeled: &FeatureBatch, ct: &CentroidTable, mode: ScoreMode) -> Vec<DifficultyScore> {
    let mut out = Vec::with_capacity(unlabeled.len());
    for i in 0..unlabeled.len() {
        let f = &unlabeled.features[i];
        let p = &unlabeled.probs[i];
        let a = unlabeled.domains[i];
        let intra: Vec<Option<f64>> = (0..p.len()).map(|k| phi_intra_cross(f, k, a, ct).ok()).collect();
        let inter: Vec<Option<f64>> = (0..p.len()).map(|k| phi_inter_same(f, k, a, ct).ok()).collect();
        let mut num = 0.0;
        let mut mass = 0.0;
        for k in 0..p.len() {
            let term = match mode {
                ScoreMode::Combined => intra[k].zip(inter[k]).map(|(x, y)| x - y),
                ScoreMode::IntraCross => intra[k],
                ScoreMode::InterSame => inter[k].map(|y| -y),
            };
            if let Some(t) = term {
                num += p[k] * t;
                mass += p[k];
            }
        }
        if mass <= 0.0 {
            warn!("sample {} has no defined difficulty term; skipped", unlabeled.ids[i]);
            continue;
        }
        out.push(DifficultyScore {
            id: unlabeled.ids[i],
            phi: num / mass,
            intra_cross: intra,
            inter_same: inter,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    #[serde(rename = "leastconf")]
    LeastConf,
    Entropy,
    /// Least-confidence candidates re-ranked by the combined difficulty.
    Daal,
    /// Ablation: candidates re-ranked by `intra_cross` alone.
    DaalIntraCross,
    /// Ablation: candidates re-ranked by `-inter_same` alone.
    DaalInterSame,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Random,
        Strategy::LeastConf,
        Strategy::Entropy,
        Strategy::Daal,
        Strategy::DaalIntraCross,
        Strategy::DaalInterSame,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::LeastConf => "leastconf",
            Strategy::Entropy => "entropy",
            Strategy::Daal => "daal",
            Strategy::DaalIntraCross => "daal-intra-cross",
            Strategy::DaalInterSame => "daal-inter-same",
        }
    }

    pub fn score_mode(self) -> Option<ScoreMode> {
        match self {
            Strategy::Daal => Some(ScoreMode::Combined),
            Strategy::DaalIntraCross => Some(ScoreMode::IntraCross),
            Strategy::DaalInterSame => Some(ScoreMode::InterSame),
            _ => None,
        }
    }

    pub fn is_daal(self) -> bool {
        self.score_mode().is_some()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = DaalError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| DaalError::Config(format!("unknown strategy '{s}'")))
    }
}

pub fn least_confidence(p: &[f64]) -> f64 {
    1.0 - p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Indices of the `n` largest scores; ties go to the lower id.
fn top_by(ids: &[u64], scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    idx.truncate(n);
    idx
}

/// Result of one selection call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// Least-confidence candidates (DAAL strategies only), ascending.
    pub candidates: Option<Vec<u64>>,
    /// Chosen ids, ascending.
    pub selected: Vec<u64>,
    /// Ranking scores of the set the final ranking ran over.
    pub scores: Vec<f64>,
}

/// Choose `min(n, |unlabeled|)` ids from `unlabeled`.
pub fn select(
    strategy: Strategy,
    unlabeled: &FeatureBatch,
    centroids: Option<&CentroidTable>,
    n: usize,
    rho: f64,
    seed: u64,
) -> Result<SelectionOutcome> {
    if n == 0 {
        return Err(DaalError::Config("selection size must be positive".into()));
    }
    let take = n.min(unlabeled.len());
    let ids = &unlabeled.ids;
    let finish = |mut selected: Vec<u64>, candidates: Option<Vec<u64>>, scores: Vec<f64>| {
        selected.sort_unstable();
        SelectionOutcome {
            candidates,
            selected,
            scores,
        }
    };

    match strategy {
        Strategy::Random => {
            let mut order = ids.clone();
            order.sort_unstable();
            order.shuffle(&mut seed::rng(seed));
            order.truncate(take);
            Ok(finish(order, None, Vec::new()))
        }
        Strategy::LeastConf | Strategy::Entropy => {
            let score = if strategy == Strategy::LeastConf { least_confidence } else { entropy };
            let scores: Vec<f64> = unlabeled.probs.iter().map(|p| score(p)).collect();
            let chosen = top_by(ids, &scores, take).into_iter().map(|i| ids[i]).collect();
            Ok(finish(chosen, None, scores))
        }
        _ => {
            let mode = strategy.score_mode().expect("daal strategy");
            if !(rho > 1.0) {
                return Err(DaalError::Config(format!("rho must exceed 1, got {rho}")));
            }
            let ct = centroids.ok_or_else(|| {
                DaalError::Contract(format!("{strategy} selection needs a centroid table"))
            })?;
            let n_candidates = ((rho * n as f64).ceil() as usize).min(unlabeled.len());
            let confidence: Vec<f64> = unlabeled.probs.iter().map(|p| least_confidence(p)).collect();
            let cand_idx = top_by(ids, &confidence, n_candidates);
            let cand_set: std::collections::BTreeSet<usize> = cand_idx.iter().copied().collect();
            let candidates = unlabeled.filter(|i| cand_set.contains(&i));

            let scored = daal_score(&candidates, ct, mode);
            let s_ids: Vec<u64> = scored.iter().map(|s| s.id).collect();
            let s_phi: Vec<f64> = scored.iter().map(|s| s.phi).collect();
            let mut chosen: Vec<u64> = top_by(&s_ids, &s_phi, take).into_iter().map(|i| s_ids[i]).collect();
            // Unscorable candidates fill any shortfall in confidence order.
            for &i in &cand_idx {
                if chosen.len() >= take {
                    break;
                }
                if !s_ids.contains(&ids[i]) {
                    chosen.push(ids[i]);
                }
            }
            let mut cand_ids = candidates.ids.clone();
            cand_ids.sort_unstable();
            Ok(finish(chosen, Some(cand_ids), s_phi))
        }
    }
}

/// Selection driven directly by a model: features for the labeled set
/// build the centroids, features for the pool are scored.
pub fn select_from_pool(
    strategy: Strategy,
    pool: &PoolState,
    model: &MlpModel,
    ds: &DomainDataset,
    n: usize,
    rho: f64,
    seed: u64,
) -> Result<SelectionOutcome> {
    let unlabeled = FeatureBatch::compute(model, ds, &pool.unlabeled_ids(), false)?;
    let table = if strategy.is_daal() {
        Some(compute_centroids(&FeatureBatch::compute(model, ds, &pool.labeled_ids(), true)?)?)
    } else {
        None
    };
    select(strategy, &unlabeled, table.as_ref(), n, rho, seed)
}

/// Mean pairwise feature distances split by (same/different class) x
/// (same/different domain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceDiagnostics {
    pub d_intra_same: Option<f64>,
    pub d_intra_cross: Option<f64>,
    pub d_inter_same: Option<f64>,
    pub d_inter_cross: Option<f64>,
}

pub fn distance_diagnostics(labeled: &FeatureBatch) -> Result<DistanceDiagnostics> {
    let labels = labeled.labels()?;
    let mut sum = [0.0; 4];
    let mut cnt = [0usize; 4];
    for i in 0..labeled.len() {
        for j in i + 1..labeled.len() {
            let q = match (labels[i] == labels[j], labeled.domains[i] == labeled.domains[j]) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            sum[q] += euclidean(&labeled.features[i], &labeled.features[j]);
            cnt[q] += 1;
        }
    }
    let mean = |q: usize| (cnt[q] > 0).then(|| sum[q] / cnt[q] as f64);
    Ok(DistanceDiagnostics {
        d_intra_same: mean(0),
        d_intra_cross: mean(1),
        d_inter_same: mean(2),
        d_inter_cross: mean(3),
    })
}

/// One JSON line of the selection audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub run: String,
    pub round: usize,
    pub strategy: Strategy,
    pub candidates: Option<Vec<u64>>,
    pub selected: Vec<u64>,
    /// Minimum, quartiles and maximum of the ranking scores.
    pub score_percentiles: Option<[f64; 5]>,
}

impl SelectionTrace {
    pub fn new(run: &str, round: usize, strategy: Strategy, outcome: &SelectionOutcome) -> Self {
        Self {
            run: run.to_string(),
            round,
            strategy,
            candidates: outcome.candidates.clone(),
            selected: outcome.selected.clone(),
            score_percentiles: percentiles(&outcome.scores),
        }
    }
}

/// Nearest-rank percentiles at 0, 25, 50, 75 and 100.
pub fn percentiles(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
    Some([at(0.0), at(0.25), at(0.5), at(0.75), at(1.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn batch(features: Vec<Vec<f64>>, domains: Vec<usize>, labels: Option<Vec<usize>>, probs: Vec<Vec<f64>>) -> FeatureBatch {
        let n = features.len();
        FeatureBatch {
            ids: (0..n as u64).collect(),
            logits: probs.clone(),
            features,
            probs,
            domains,
            labels,
        }
    }

    #[test]
    fn centroid_cases() {
        let b = batch(vec![vec![1.0, 2.0]], vec![0], Some(vec![0]), vec![vec![1.0]]);
        let ct = compute_centroids(&b).unwrap();
        assert_eq!(ct.centroid(0, 0).unwrap(), &[1.0, 2.0]);

        let b = batch(vec![vec![1.5, -2.0], vec![-1.5, 2.0]], vec![1, 1], Some(vec![2, 2]), vec![vec![1.0]; 2]);
        let ct = compute_centroids(&b).unwrap();
        assert_eq!(ct.centroid(2, 1).unwrap(), &[0.0, 0.0]);
        assert!(ct.centroid(0, 0).is_none());
        assert_eq!(ct.count(2, 1), 2);
        assert!(compute_centroids(&FeatureBatch::default()).is_err());
    }

    #[test]
    fn centroids_match_double_loop() {
        let mut rng = crate::seed::rng(2);
        let n = 200;
        let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let doms: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let labs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let b = batch(feats.clone(), doms.clone(), Some(labs.clone()), vec![vec![0.25; 4]; n]);
        let ct = compute_centroids(&b).unwrap();
        for k in 0..4 {
            for a in 0..3 {
                let mut acc = vec![0.0; 5];
                let mut c = 0.0;
                for i in 0..n {
                    if labs[i] == k && doms[i] == a {
                        for j in 0..5 {
                            acc[j] += feats[i][j];
                        }
                        c += 1.0;
                    }
                }
                for j in 0..5 {
                    assert!((ct.centroid(k, a).unwrap()[j] - acc[j] / c).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn phi_edge_cases() {
        // Class 0 in domains 0 and 1 at the same point; class 1 in domain 0.
        let b = batch(
            vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![4.0, 5.0]],
            vec![0, 1, 0],
            Some(vec![0, 0, 1]),
            vec![vec![0.5, 0.5]; 3],
        );
        let ct = compute_centroids(&b).unwrap();
        assert_eq!(phi_intra_cross(&[1.0, 1.0], 0, 0, &ct).unwrap(), 0.0);
        // Two domains: the single other-domain distance.
        assert_eq!(phi_intra_cross(&[4.0, 5.0], 0, 0, &ct).unwrap(), 5.0);
        // Two classes: the single other-class distance.
        assert_eq!(phi_inter_same(&[1.0, 1.0], 0, 0, &ct).unwrap(), 5.0);
        assert!(matches!(phi_intra_cross(&[0.0, 0.0], 1, 0, &ct), Err(DaalError::UndefinedScore(_))));
        assert!(matches!(phi_inter_same(&[0.0, 0.0], 0, 1, &ct), Err(DaalError::UndefinedScore(_))));
    }

    #[test]
    fn inter_same_symmetric_radius() {
        // Other-class centroids on a circle of radius 2 around the query.
        let b = batch(
            vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 2.0], vec![0.0, 0.0]],
            vec![0; 4],
            Some(vec![1, 2, 3, 0]),
            vec![vec![0.25; 4]; 4],
        );
        let ct = compute_centroids(&b).unwrap();
        assert!((phi_inter_same(&[0.0, 0.0], 0, 0, &ct).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_probs_tie_break_by_id() {
        let mut rng = crate::seed::rng(3);
        let feats: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let mut b = batch(feats, vec![0; 20], None, vec![vec![0.25; 4]; 20]);
        b.ids = (100..120).rev().collect();
        for st in [Strategy::LeastConf, Strategy::Entropy] {
            let out = select(st, &b, None, 5, 1.5, 0).unwrap();
            assert_eq!(out.selected, vec![100, 101, 102, 103, 104]);
        }
    }

    #[test]
    fn random_is_seeded_and_sized() {
        let b = batch(vec![vec![0.0]; 30], vec![0; 30], None, vec![vec![0.5, 0.5]; 30]);
        let a = select(Strategy::Random, &b, None, 7, 1.5, 11).unwrap();
        assert_eq!(a, select(Strategy::Random, &b, None, 7, 1.5, 11).unwrap());
        assert_eq!(a.selected.len(), 7);
        assert_ne!(a.selected, select(Strategy::Random, &b, None, 7, 1.5, 12).unwrap().selected);
        assert_eq!(select(Strategy::Random, &b, None, 50, 1.5, 1).unwrap().selected.len(), 30);
        assert!(select(Strategy::Random, &b, None, 0, 1.5, 1).is_err());
    }

    #[test]
    fn daal_needs_centroids_and_rho() {
        let b = batch(vec![vec![0.0]; 3], vec![0; 3], None, vec![vec![0.5, 0.5]; 3]);
        assert!(matches!(select(Strategy::Daal, &b, None, 1, 1.5, 0), Err(DaalError::Contract(_))));
        let lab = batch(vec![vec![0.0], vec![1.0]], vec![0, 1], Some(vec![0, 1]), vec![vec![0.5, 0.5]; 2]);
        let ct = compute_centroids(&lab).unwrap();
        assert!(matches!(select(Strategy::Daal, &b, Some(&ct), 1, 1.0, 0), Err(DaalError::Config(_))));
    }

    #[test]
    fn one_hot_expectation_and_linearity() {
        let mut rng = crate::seed::rng(4);
        let lab_f: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let lab = batch(lab_f, (0..60).map(|i| i % 3).collect(), Some((0..60).map(|i| (i / 3) % 4).collect()), vec![vec![0.25; 4]; 60]);
        let ct = compute_centroids(&lab).unwrap();
        let f = vec![0.3, -0.2, 0.9];
        let one_hot = |k: usize| (0..4).map(|j| if j == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let q = batch(vec![f.clone(); 3], vec![1; 3], None, vec![one_hot(2), one_hot(3), (0..4).map(|j| if j >= 2 { 0.5 } else { 0.0 }).collect()]);
        let s = daal_score(&q, &ct, ScoreMode::Combined);
        let direct = phi_intra_cross(&f, 2, 1, &ct).unwrap() - phi_inter_same(&f, 2, 1, &ct).unwrap();
        assert_eq!(s[0].phi, direct);
        assert!((s[2].phi - 0.5 * (s[0].phi + s[1].phi)).abs() < 1e-12);
    }

    #[test]
    fn easy_sample_scores_negative() {
        // Two domains, three classes, tight clusters; class placement is
        // shared across domains so the query is near its own class everywhere.
        let mut feats = Vec::new();
        let mut doms = Vec::new();
        let mut labs = Vec::new();
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        for a in 0..2 {
            for (k, c) in centers.iter().enumerate() {
                for j in 0..3 {
                    feats.push(vec![c[0] + 0.1 * j as f64 + 0.2 * a as f64, c[1]]);
                    doms.push(a);
                    labs.push(k);
                }
            }
        }
        let ct = compute_centroids(&batch(feats, doms, Some(labs), vec![vec![1.0 / 3.0; 3]; 18])).unwrap();
        let q = batch(vec![vec![0.1, 0.0]], vec![0], None, vec![vec![0.98, 0.01, 0.01]]);
        let s = daal_score(&q, &ct, ScoreMode::Combined);
        assert!(s[0].phi < -5.0, "{}", s[0].phi);
    }

    #[test]
    fn undefined_classes_renormalise() {
        // Class 1 exists only in domain 0, so its intra_cross is undefined
        // for queries from domain 0; the expectation uses class 0 alone.
        let lab = batch(
            vec![vec![0.0], vec![1.0], vec![5.0]],
            vec![0, 1, 0],
            Some(vec![0, 0, 1]),
            vec![vec![0.5, 0.5]; 3],
        );
        let ct = compute_centroids(&lab).unwrap();
        let q = batch(vec![vec![2.0]], vec![0], None, vec![vec![0.3, 0.7]]);
        let s = daal_score(&q, &ct, ScoreMode::Combined);
        assert_eq!(s[0].phi, 1.0 - 3.0);
        assert!(s[0].intra_cross[1].is_none());

        let q = batch(vec![vec![2.0]], vec![0], None, vec![vec![0.0, 1.0]]);
        assert!(daal_score(&q, &ct, ScoreMode::Combined).is_empty());
    }

    #[test]
    fn saturated_candidates_rank_whole_pool() {
        let mut rng = crate::seed::rng(5);
        let lab_f: Vec<Vec<f64>> = (0..24).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let lab = batch(lab_f, (0..24).map(|i| i % 2).collect(), Some((0..24).map(|i| (i / 2) % 3).collect()), vec![vec![1.0 / 3.0; 3]; 24]);
        let ct = compute_centroids(&lab).unwrap();
        let pf: Vec<Vec<f64>> = (0..10).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let probs: Vec<Vec<f64>> = (0..10).map(|_| crate::nn::softmax(&[rng.gen(), rng.gen(), rng.gen()])).collect();
        let pool = batch(pf, (0..10).map(|i| i % 2).collect(), None, probs);
        let out = select(Strategy::Daal, &pool, Some(&ct), 4, 3.0, 0).unwrap();
        let mut all: Vec<(f64, u64)> = daal_score(&pool, &ct, ScoreMode::Combined).iter().map(|s| (s.phi, s.id)).collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut expect: Vec<u64> = all[..4].iter().map(|x| x.1).collect();
        expect.sort_unstable();
        assert_eq!(out.selected, expect);
        assert_eq!(out.candidates.unwrap().len(), 10);
    }

    #[test]
    fn diagnostics_cases() {
        let same = batch(vec![vec![1.0, 1.0]; 8], vec![0, 0, 1, 1, 0, 0, 1, 1], Some(vec![0, 1, 0, 1, 0, 1, 0, 1]), vec![vec![0.5; 2]; 8]);
        let d = distance_diagnostics(&same).unwrap();
        assert_eq!(d.d_intra_same, Some(0.0));
        assert_eq!(d.d_intra_cross, Some(0.0));
        assert_eq!(d.d_inter_same, Some(0.0));
        assert_eq!(d.d_inter_cross, Some(0.0));

        // Square of side 1: class along x, domain along y; per domain two
        // samples per class on top of each other.
        let pts = vec![
            (vec![0.0, 0.0], 0, 0),
            (vec![0.0, 0.0], 0, 0),
            (vec![1.0, 0.0], 0, 1),
            (vec![0.0, 1.0], 1, 0),
            (vec![1.0, 1.0], 1, 1),
        ];
        let b = batch(
            pts.iter().map(|p| p.0.clone()).collect(),
            pts.iter().map(|p| p.1).collect(),
            Some(pts.iter().map(|p| p.2).collect()),
            vec![vec![0.5; 2]; 5],
        );
        let d = distance_diagnostics(&b).unwrap();
        // intra_same: pair (0,1) at distance 0.
        assert!((d.d_intra_same.unwrap() - 0.0).abs() < 1e-9);
        // intra_cross: (0,3),(1,3) at 1, (2,4) at 1.
        assert!((d.d_intra_cross.unwrap() - 1.0).abs() < 1e-9);
        // inter_same: (0,2),(1,2),(3,4) at 1.
        assert!((d.d_inter_same.unwrap() - 1.0).abs() < 1e-9);
        // inter_cross: (0,4),(1,4),(2,3) at sqrt 2.
        assert!((d.d_inter_cross.unwrap() - 2f64.sqrt()).abs() < 1e-9);

        let one = batch(vec![vec![0.0]], vec![0], Some(vec![0]), vec![vec![1.0]]);
        assert_eq!(distance_diagnostics(&one).unwrap().d_intra_same, None);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("bald".parse::<Strategy>().is_err());
    }

    #[test]
    fn percentile_summary() {
        assert_eq!(percentiles(&[]), None);
        assert_eq!(percentiles(&[3.0, 1.0, 2.0, 5.0, 4.0]), Some([1.0, 2.0, 3.0, 4.0, 5.0]));
    }

    fn random_instance(seed: u64, d: usize) -> (FeatureBatch, FeatureBatch) {
        let mut rng = crate::seed::rng(seed);
        let n_lab = rng.gen_range(6..40);
        let lab_f = (0..n_lab).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let lab = batch(
            lab_f,
            (0..n_lab).map(|i| i % 3).collect(),
            Some((0..n_lab).map(|_| rng.gen_range(0..3)).collect()),
            vec![vec![1.0 / 3.0; 3]; n_lab],
        );
        let n_pool = rng.gen_range(3..30);
        let pool_f = (0..n_pool).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let probs = (0..n_pool)
            .map(|_| crate::nn::softmax(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]))
            .collect();
        let mut pool = batch(pool_f, (0..n_pool).map(|_| rng.gen_range(0..3)).collect(), None, probs);
        pool.ids = (0..n_pool as u64).map(|i| 100 + 3 * i).collect();
        (lab, pool)
    }

    fn transform(b: &FeatureBatch, scale: f64, shift: &[f64]) -> FeatureBatch {
        let mut b = b.clone();
        for f in &mut b.features {
            for (v, t) in f.iter_mut().zip(shift) {
                *v = scale * *v + t;
            }
        }
        b
    }

    proptest::proptest! {
        #[test]
        fn prop_translation_invariant(seed in 0u64..10_000, t in proptest::collection::vec(-10.0f64..10.0, 4)) {
            let (lab, pool) = random_instance(seed, 4);
            let a = daal_score(&pool, &compute_centroids(&lab).unwrap(), ScoreMode::Combined);
            let b = daal_score(&transform(&pool, 1.0, &t), &compute_centroids(&transform(&lab, 1.0, &t)).unwrap(), ScoreMode::Combined);
            proptest::prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                proptest::prop_assert!((x.phi - y.phi).abs() < 1e-9);
            }
        }

        #[test]
        fn prop_scale_equivariant(seed in 0u64..10_000, s in 0.01f64..100.0) {
            let (lab, pool) = random_instance(seed, 4);
            let zero = [0.0; 4];
            let a = daal_score(&pool, &compute_centroids(&lab).unwrap(), ScoreMode::Combined);
            let b = daal_score(&transform(&pool, s, &zero), &compute_centroids(&transform(&lab, s, &zero)).unwrap(), ScoreMode::Combined);
            for (x, y) in a.iter().zip(&b) {
                proptest::prop_assert!((s * x.phi - y.phi).abs() <= 1e-9 * (1.0 + y.phi.abs()));
            }
        }

        #[test]
        fn prop_selection_size_and_membership(seed in 0u64..10_000, n in 1usize..40, which in 0usize..6) {
            let (lab, pool) = random_instance(seed, 3);
            let ct = compute_centroids(&lab).unwrap();
            let out = select(Strategy::ALL[which], &pool, Some(&ct), n, 1.5, seed).unwrap();
            proptest::prop_assert_eq!(out.selected.len(), n.min(pool.len()));
            let uniq: std::collections::BTreeSet<_> = out.selected.iter().collect();
            proptest::prop_assert_eq!(uniq.len(), out.selected.len());
            proptest::prop_assert!(out.selected.iter().all(|id| pool.ids.contains(id) && !lab.ids.contains(id)));
        }
    }
}
