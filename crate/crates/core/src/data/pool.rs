use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{DaalError, Result};

/// Labeled/unlabeled partition of a split's training ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    pub labeled: BTreeSet<u64>,
    pub unlabeled: BTreeSet<u64>,
    pub round: usize,
    pub budget_per_round: usize,
    pub max_rounds: usize,
}

impl PoolState {
    pub fn new(train_ids: &[u64], budget_per_round: usize, max_rounds: usize) -> Result<Self> {
        if budget_per_round == 0 {
            return Err(DaalError::Config("budget per round must be positive".into()));
        }
        if max_rounds == 0 {
            return Err(DaalError::Config("at least one round is required".into()));
        }
        let unlabeled: BTreeSet<u64> = train_ids.iter().copied().collect();
        if unlabeled.len() != train_ids.len() {
            return Err(DaalError::Consistency("duplicate training ids".into()));
        }
        Ok(Self {
            labeled: BTreeSet::new(),
            unlabeled,
            round: 0,
            budget_per_round,
            max_rounds,
        })
    }

    pub fn is_exhausted(&self) -> bool {
        self.unlabeled.is_empty()
    }

    /// Ids the next round may label: the full budget, or whatever remains.
    pub fn next_batch_size(&self) -> usize {
        self.budget_per_round.min(self.unlabeled.len())
    }

    pub fn total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn labeled_ids(&self) -> Vec<u64> {
        self.labeled.iter().copied().collect()
    }

    pub fn unlabeled_ids(&self) -> Vec<u64> {
        self.unlabeled.iter().copied().collect()
    }
}

/// Move `chosen` from the pool into the labeled set and advance the round.
/// Labels come from the dataset's ground truth.
pub fn pool_label(pool: &PoolState, chosen: &[u64], oracle: &DomainDataset) -> Result<PoolState> {
    if chosen.len() > pool.budget_per_round {
        return Err(DaalError::Contract(format!(
            "{} ids chosen but the round budget is {}",
            chosen.len(),
            pool.budget_per_round
        )));
    }
    let mut next = pool.clone();
    for &id in chosen {
        oracle.sample(id)?;
        if pool.labeled.contains(&id) {
            return Err(DaalError::Contract(format!("id {id} is already labeled")));
        }
        if !next.unlabeled.remove(&id) {
            return Err(DaalError::Contract(format!(
                "id {id} is not in the unlabeled pool or was chosen twice"
            )));
        }
        next.labeled.insert(id);
    }
    next.round += 1;
    Ok(next)
}
