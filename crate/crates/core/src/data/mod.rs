//! Multi-domain datasets, leave-one-domain-out splits and pool state.

mod csv_io;
mod idx;
mod pool;
mod synthetic;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use csv_io::{read_csv, write_csv};
pub use idx::{load_idx_pairs, rotate_dataset, rotate_image};
pub use pool::{pool_label, PoolState};
pub use synthetic::{generate_rotated_gaussians, RotatedGaussians, SYNTHETIC_INPUT_DIM};

use crate::error::{DaalError, Result};
use crate::seed;

/// One input vector with its class label and domain tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub x: Vec<f64>,
    pub y: usize,
    pub e: usize,
}

/// A labeled multi-domain dataset. Sample ids equal their position.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub num_domains: usize,
    pub input_dim: usize,
    pub domain_names: Vec<String>,
}

impl DomainDataset {
    /// Build a dataset, renumbering ids to positions and checking shapes.
    pub fn new(mut samples: Vec<Sample>, domain_names: Vec<String>) -> Result<Self> {
        let input_dim = samples.first().map(|s| s.x.len()).unwrap_or(0);
        let mut num_classes = 0;
        let mut num_domains = domain_names.len();
        for (i, s) in samples.iter_mut().enumerate() {
            if s.x.len() != input_dim {
                return Err(DaalError::Consistency(format!(
                    "sample {i} has dimension {} but dataset dimension is {input_dim}",
                    s.x.len()
                )));
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(DaalError::Numeric(format!("sample {i} has a non-finite feature")));
            }
            s.id = i as u64;
            num_classes = num_classes.max(s.y + 1);
            num_domains = num_domains.max(s.e + 1);
        }
        let mut names = domain_names;
        while names.len() < num_domains {
            names.push(format!("e{}", names.len()));
        }
        Ok(Self {
            samples,
            num_classes,
            num_domains,
            input_dim,
            domain_names: names,
        })
    }

    /// Merge single-domain fragments; fragment `i` becomes domain `i`.
    pub fn from_fragments(fragments: Vec<(String, DomainDataset)>) -> Result<Self> {
        let mut names = Vec::with_capacity(fragments.len());
        let mut samples = Vec::new();
        for (e, (name, frag)) in fragments.into_iter().enumerate() {
            names.push(name);
            samples.extend(frag.samples.into_iter().map(|mut s| {
                s.e = e;
                s
            }));
        }
        Self::new(samples, names)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.samples.get(id as usize)
    }

    pub fn sample(&self, id: u64) -> Result<&Sample> {
        self.get(id)
            .ok_or_else(|| DaalError::Contract(format!("unknown sample id {id}")))
    }

    /// Sample count per (domain, class).
    pub fn counts(&self) -> Vec<Vec<usize>> {
        let mut c = vec![vec![0usize; self.num_classes]; self.num_domains];
        for s in &self.samples {
            c[s.e][s.y] += 1;
        }
        c
    }

    /// Check that classes are dense and every populated (domain, class)
    /// pair has at least two samples.
    pub fn validate(&self) -> Result<()> {
        let counts = self.counts();
        for k in 0..self.num_classes {
            if counts.iter().all(|row| row[k] == 0) {
                return Err(DaalError::Consistency(format!("class {k} has no samples")));
            }
        }
        for (e, row) in counts.iter().enumerate() {
            for (k, &n) in row.iter().enumerate() {
                if n == 1 {
                    return Err(DaalError::Consistency(format!(
                        "domain {e} class {k} has a single sample"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Leave-one-domain-out partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub source_domains: Vec<usize>,
    pub target_domain: usize,
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
}

/// One split per domain held out as target. Within source domains a
/// per-(domain, class) stratified validation subset of `val_fraction` is
/// carved off; the validation partition is the same for every target.
pub fn make_loo_splits(ds: &DomainDataset, val_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DaalError::Config(format!(
            "val_fraction must lie in (0,1), got {val_fraction}"
        )));
    }
    if ds.num_domains < 3 {
        return Err(DaalError::Config(format!(
            "leave-one-domain-out needs at least 3 domains, got {}",
            ds.num_domains
        )));
    }
    ds.validate()?;

    let mut groups: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    for s in &ds.samples {
        groups.entry((s.e, s.y)).or_default().push(s.id);
    }
    let mut is_val = vec![false; ds.len()];
    for (&(e, k), ids) in &groups {
        let mut ids = ids.clone();
        let mut rng = seed::rng(seed::derive(seed, "split", &[e as u64, k as u64]));
        ids.shuffle(&mut rng);
        let n_val = (ids.len() as f64 * val_fraction).round() as usize;
        for &id in &ids[..n_val] {
            is_val[id as usize] = true;
        }
    }

    Ok((0..ds.num_domains)
        .map(|target| {
            let mut split = Split {
                source_domains: (0..ds.num_domains).filter(|&e| e != target).collect(),
                target_domain: target,
                train_ids: Vec::new(),
                val_ids: Vec::new(),
                test_ids: Vec::new(),
            };
            for s in &ds.samples {
                if s.e == target {
                    split.test_ids.push(s.id);
                } else if is_val[s.id as usize] {
                    split.val_ids.push(s.id);
                } else {
                    split.train_ids.push(s.id);
                }
            }
            split
        })
        .collect())
}
