//! The active-learning round loop, evaluation and result aggregation.
//!
//! Round 1 labels a seeded random batch. Every round then retrains the
//! model from a fresh initialisation on everything labeled so far,
//! evaluates it, and (unless it is the last round) selects the next batch
//! with the configured strategy. With the weak-feature loss enabled, the
//! first `warmup_fraction` of a round's iterations use plain
//! cross-entropy; the plan is then built from the current features of the
//! labeled set and the remaining iterations minimise the combined loss.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_rotated_gaussians, load_idx_pairs, make_loo_splits, pool_label, read_csv,
    rotate_dataset, DomainDataset, PoolState, RotatedGaussians, Split,
};
use crate::error::{DaalError, Result};
use crate::forest::{argmax, ForestConfig};
use crate::nn::{backward_and_step, Example, FeatureBatch, MlpModel, Sgd, TrainConfig};
use crate::seed;
use crate::selection::{
    distance_diagnostics, select_from_pool, DistanceDiagnostics, SelectionTrace, Strategy,
};
use crate::weak::{build_plan, PlanDump, WeakFeaturePlan};

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    RotGauss(RotatedGaussians),
    Csv {
        path: PathBuf,
    },
    /// One IDX pair rotated into one domain per angle.
    IdxRotated {
        images: PathBuf,
        labels: PathBuf,
        angles: Vec<f64>,
        width: usize,
        height: usize,
        /// Use only the first `limit` images.
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<DomainDataset> {
        match self {
            DatasetSpec::RotGauss(p) => generate_rotated_gaussians(p),
            DatasetSpec::Csv { path } => read_csv(path),
            DatasetSpec::IdxRotated {
                images,
                labels,
                angles,
                width,
                height,
                limit,
            } => {
                let mut base = load_idx_pairs(images, labels)?;
                if let Some(n) = limit {
                    base = DomainDataset::new(base.samples.into_iter().take(*n).collect(), vec![])?;
                }
                let fragments = angles
                    .iter()
                    .map(|&a| Ok((format!("rot{a}"), rotate_dataset(&base, a, *width, *height)?)))
                    .collect::<Result<Vec<_>>>()?;
                DomainDataset::from_fragments(fragments)
            }
        }
    }
}

/// Extractor shape: hidden widths and feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            feature_dim: 32,
        }
    }
}

impl ModelSpec {
    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut d = vec![input_dim];
        d.extend(&self.hidden);
        d.push(self.feature_dim);
        d
    }
}

/// Per-round labeling budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Budget {
    Count(usize),
    /// Fraction of the split's training pool.
    Fraction(f64),
}

impl Budget {
    pub fn resolve(self, pool: usize) -> usize {
        match self {
            Budget::Count(n) => n,
            Budget::Fraction(f) => ((f * pool as f64).round() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Label used in tables; defaults to the strategy name.
    pub name: Option<String>,
    pub target_domain: usize,
    pub val_fraction: f64,
    pub strategy: Strategy,
    pub weak_loss: bool,
    pub rounds: usize,
    pub budget: Budget,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub model: ModelSpec,
    pub repetitions: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match (self.strategy.is_daal(), self.weak_loss) {
            (true, false) => format!("{}-erm", self.strategy),
            (false, true) => format!("{}+weak", self.strategy),
            _ => self.strategy.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.forest.validate()?;
        if self.rounds == 0 {
            return Err(DaalError::Config("rounds must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(DaalError::Config("repetitions must be at least 1".into()));
        }
        match self.budget {
            Budget::Count(0) => return Err(DaalError::Config("budget must be positive".into())),
            Budget::Fraction(f) if !(f > 0.0) || f * self.rounds as f64 > 1.0 + 1e-9 => {
                return Err(DaalError::Config(format!(
                    "budget fraction {f} over {} rounds exceeds the pool",
                    self.rounds
                )))
            }
            _ => {}
        }
        if self.model.feature_dim == 0 {
            return Err(DaalError::Config("feature_dim must be positive".into()));
        }
        if self.train.subset_size(self.model.feature_dim) > self.model.feature_dim {
            return Err(DaalError::Config("weak subset larger than the feature dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub steps: usize,
    pub first: f64,
    pub last: f64,
    pub mean: f64,
}

/// One JSON line per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub run: String,
    pub label: String,
    pub strategy: Strategy,
    pub weak_loss: bool,
    pub target: usize,
    pub rep: usize,
    pub round: usize,
    pub labeled: usize,
    pub labeled_frac: f64,
    pub selected: Vec<u64>,
    pub loss: LossSummary,
    /// Validation accuracy per source domain.
    pub val_acc: BTreeMap<usize, f64>,
    pub test_acc: f64,
    pub diagnostics: DistanceDiagnostics,
    pub plan: Option<PlanDump>,
    /// Set on the last record of a run whose pool ran out before the
    /// configured number of rounds.
    pub truncated: bool,
    /// Kept out of the JSONL so records stay byte-reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: String,
    pub records: Vec<RoundRecord>,
    pub traces: Vec<SelectionTrace>,
    pub final_model: MlpModel,
    pub final_plan: Option<WeakFeaturePlan>,
    pub truncated: bool,
}

/// Fraction of `ids` whose argmax prediction equals the label.
pub fn evaluate(model: &MlpModel, ids: &[u64], ds: &DomainDataset) -> Result<f64> {
    if ids.is_empty() {
        return Err(DaalError::Contract("cannot evaluate on an empty id set".into()));
    }
    let mut correct = 0usize;
    for &id in ids {
        let s = ds.sample(id)?;
        if argmax(&model.forward(&s.x)?.probs) == s.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / ids.len() as f64)
}

/// Seeds for one round of one run.
#[derive(Debug, Clone, Copy)]
pub struct RoundSeeds {
    pub init: u64,
    pub batches: u64,
    pub forest: u64,
}

impl RoundSeeds {
    pub fn new(root: u64, target: usize, rep: usize, round: usize) -> Self {
        let idx = [target as u64, rep as u64, round as u64];
        Self {
            // Shared by every round of a run, so rounds differ only in data.
            init: seed::derive(root, "init", &idx[..2]),
            batches: seed::derive(root, "batches", &idx),
            forest: seed::derive(root, "forest", &idx),
        }
    }
}

/// Output of one round's training.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: MlpModel,
    pub plan: Option<WeakFeaturePlan>,
    pub loss: LossSummary,
}

/// Train a fresh model on `labeled`. `pool_size` scales the iteration count.
pub fn train_round(
    cfg: &ExperimentConfig,
    ds: &DomainDataset,
    labeled: &[u64],
    pool_size: usize,
    seeds: RoundSeeds,
) -> Result<Trained> {
    let mut model = MlpModel::new(&cfg.model.dims(ds.input_dim), ds.num_classes, seeds.init)?;
    let mut opt = Sgd::new(&model, cfg.train.momentum);
    let total = cfg.train.scaled_iters(labeled.len(), pool_size).max(1);
    let warmup = if cfg.weak_loss {
        (total as f64 * cfg.train.warmup_fraction).floor() as usize
    } else {
        total
    };

    let examples: Vec<Example> = labeled
        .iter()
        .map(|&id| {
            let s = ds.sample(id)?;
            Ok(Example { id, x: &s.x, y: s.y, e: s.e })
        })
        .collect::<Result<_>>()?;
    let bs = cfg.train.batch_size.min(examples.len());
    let mut rng = seed::rng(seeds.batches);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut plan: Option<WeakFeaturePlan> = None;
    let mut losses = Vec::with_capacity(total);
    let mut batch = Vec::with_capacity(bs);

    for step in 0..total {
        if step == warmup && cfg.weak_loss {
            let feats = FeatureBatch::compute(&model, ds, labeled, true)?;
            let m = cfg.train.subset_size(cfg.model.feature_dim);
            let fcfg = ForestConfig { seed: seeds.forest, ..cfg.forest.clone() };
            match build_plan(&feats, &fcfg, cfg.train.alpha, m) {
                Ok(p) => plan = Some(p),
                Err(e @ (DaalError::Contract(_) | DaalError::DegenerateForest(_))) => {
                    warn!("weak-feature plan skipped: {e}");
                }
                Err(e) => return Err(e),
            }
        }
        batch.clear();
        while batch.len() < bs {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(examples[order[cursor]]);
            cursor += 1;
        }
        losses.push(backward_and_step(&mut model, &batch, plan.as_ref(), &cfg.train, step, total, &mut opt)?);
    }
    let loss = LossSummary {
        steps: total,
        first: losses[0],
        last: *losses.last().expect("at least one step"),
        mean: losses.iter().sum::<f64>() / losses.len() as f64,
    };
    Ok(Trained { model, plan, loss })
}

pub fn run_name(cfg: &ExperimentConfig, rep: usize) -> String {
    format!("{}/t{}/r{}", cfg.label(), cfg.target_domain, rep)
}

fn find_split(cfg: &ExperimentConfig, ds: &DomainDataset) -> Result<Split> {
    if cfg.target_domain >= ds.num_domains {
        return Err(DaalError::Config(format!(
            "target domain {} out of range ({} domains)",
            cfg.target_domain, ds.num_domains
        )));
    }
    let splits = make_loo_splits(ds, cfg.val_fraction, seed::derive(cfg.seed, "split", &[]))?;
    Ok(splits.into_iter().nth(cfg.target_domain).expect("one split per domain"))
}

/// Execute every round of one repetition.
pub fn run_daal(cfg: &ExperimentConfig, ds: &DomainDataset, rep: usize) -> Result<RunResult> {
    cfg.validate()?;
    let split = find_split(cfg, ds)?;
    let run = run_name(cfg, rep);
    let pool_size = split.train_ids.len();
    let n = cfg.budget.resolve(pool_size);
    let mut pool = PoolState::new(&split.train_ids, n, cfg.rounds)?;

    let val_by_domain: BTreeMap<usize, Vec<u64>> = split.source_domains.iter().map(|&e| {
        (e, split.val_ids.iter().copied().filter(|&id| ds.samples[id as usize].e == e).collect())
    }).collect();

    // Round 1: seeded random batch.
    let mut next = {
        let mut ids = pool.unlabeled_ids();
        ids.shuffle(&mut seed::rng(seed::derive(cfg.seed, "initial", &[cfg.target_domain as u64, rep as u64])));
        ids.truncate(pool.next_batch_size());
        ids.sort_unstable();
        ids
    };

    let mut records = Vec::with_capacity(cfg.rounds);
    let mut traces = Vec::new();
    let mut last: Option<Trained> = None;
    let mut truncated = false;

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        pool = pool_label(&pool, &next, ds)?;
        let labeled = pool.labeled_ids();
        let seeds = RoundSeeds::new(cfg.seed, cfg.target_domain, rep, round);
        let trained = train_round(cfg, ds, &labeled, pool_size, seeds)?;

        let mut val_acc = BTreeMap::new();
        for (&e, ids) in &val_by_domain {
            if !ids.is_empty() {
                val_acc.insert(e, evaluate(&trained.model, ids, ds)?);
            }
        }
        let test_acc = evaluate(&trained.model, &split.test_ids, ds)?;
        let diagnostics = distance_diagnostics(&FeatureBatch::compute(&trained.model, ds, &split.val_ids, true)?)?;

        let selected = std::mem::take(&mut next);
        if round < cfg.rounds {
            if pool.is_exhausted() {
                truncated = true;
            } else {
                let outcome = select_from_pool(
                    cfg.strategy,
                    &pool,
                    &trained.model,
                    ds,
                    pool.next_batch_size(),
                    cfg.train.rho,
                    seed::derive(cfg.seed, "selection", &[cfg.target_domain as u64, rep as u64, round as u64]),
                )?;
                traces.push(SelectionTrace::new(&run, round + 1, cfg.strategy, &outcome));
                next = outcome.selected;
            }
        }

        info!("{run} round {round}: {} labeled, target acc {test_acc:.4}", labeled.len());
        records.push(RoundRecord {
            run: run.clone(),
            label: cfg.label(),
            strategy: cfg.strategy,
            weak_loss: cfg.weak_loss,
            target: cfg.target_domain,
            rep,
            round,
            labeled: labeled.len(),
            labeled_frac: labeled.len() as f64 / pool_size as f64,
            selected,
            loss: trained.loss,
            val_acc,
            test_acc,
            diagnostics,
            plan: trained.plan.as_ref().map(WeakFeaturePlan::dump),
            truncated,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
        last = Some(trained);
        if truncated {
            break;
        }
    }

    let last = last.expect("at least one round");
    Ok(RunResult {
        run,
        records,
        traces,
        final_model: last.model,
        final_plan: last.plan,
        truncated,
    })
}

/// One aggregate cell: accuracy over repetitions at a given round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub target: usize,
    pub strategy: String,
    pub round: usize,
    pub labeled_frac: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub reps: usize,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Group records by (target, label, round). Std is the sample standard
/// deviation over repetitions (0 for a single repetition).
pub fn aggregate(records: &[RoundRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(usize, String, usize), Vec<&RoundRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.target, r.label.clone(), r.round)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((target, strategy, round), rs)| {
            let mut rs = rs;
            rs.sort_by_key(|r| r.rep);
            let accs: Vec<f64> = rs.iter().map(|r| r.test_acc).collect();
            let (acc_mean, acc_std) = mean_std(&accs);
            // Equal across repetitions unless a run was truncated.
            let labeled_frac = if rs.iter().all(|r| r.labeled_frac == rs[0].labeled_frac) {
                rs[0].labeled_frac
            } else {
                mean_std(&rs.iter().map(|r| r.labeled_frac).collect::<Vec<_>>()).0
            };
            AggregateRow {
                target,
                strategy,
                round,
                labeled_frac,
                acc_mean,
                acc_std,
                reps: rs.len(),
            }
        })
        .collect()
}

pub const AGGREGATE_HEADER: &str = "target,strategy,round,labeled_frac,acc_mean,acc_std,reps";

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.target, r.strategy, r.round, r.labeled_frac, r.acc_mean, r.acc_std, r.reps
        ));
    }
    std::fs::write(path, out).map_err(|e| DaalError::io(path, e))
}

/// Every run of a matrix plus its aggregate table.
#[derive(Debug, Clone)]
pub struct MatrixResult {
    pub runs: Vec<RunResult>,
    pub table: Vec<AggregateRow>,
}

impl MatrixResult {
    pub fn records(&self) -> Vec<RoundRecord> {
        self.runs.iter().flat_map(|r| r.records.iter().cloned()).collect()
    }
}

/// Run every (config, repetition) pair in parallel; results come back in
/// config-then-repetition order regardless of scheduling.
pub fn run_matrix(cfgs: &[ExperimentConfig], ds: &DomainDataset) -> Result<MatrixResult> {
    for c in cfgs {
        c.validate()?;
    }
    let jobs: Vec<(&ExperimentConfig, usize)> =
        cfgs.iter().flat_map(|c| (0..c.repetitions).map(move |r| (c, r))).collect();
    let runs = jobs
        .par_iter()
        .map(|(c, r)| run_daal(c, ds, *r))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<RoundRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    Ok(MatrixResult {
        table: aggregate(&records),
        runs,
    })
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| DaalError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| DaalError::Serde(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| DaalError::io(path, e))?;
    }
    w.flush().map_err(|e| DaalError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| DaalError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DaalError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| DaalError::format(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
