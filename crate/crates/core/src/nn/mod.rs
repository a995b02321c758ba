//! MLP feature extractor `f(x)` with a linear classifier `g(f)`.
//!
//! Every extractor layer is affine followed by ReLU; the feature `f` is the
//! top extractor activation. The classifier is a single affine map to
//! logits. Gradients are derived by hand in [`train`].

mod checkpoint;
mod loss;
mod train;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Tensor};
pub use loss::{log_sum_exp, loss_all, loss_ce, loss_dom, softmax};
pub use train::{
    backward_and_step, batch_loss, cosine_lr, loss_and_gradient, Example, Gradients, Sgd,
};

use crate::data::DomainDataset;
use crate::error::{DaalError, Result};
use crate::seed;

/// Affine layer, `out = W·in + b` with `W` stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Extractor layers followed by the classifier as the last entry.
    pub layers: Vec<Dense>,
}

/// Result of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl MlpModel {
    /// `dims = [d_in, hidden.., d]`; He-normal extractor weights,
    /// `N(0, 1/d)` classifier weights, zero biases.
    pub fn new(dims: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) || num_classes < 2 {
            return Err(DaalError::Config(format!(
                "bad model shape {dims:?} -> {num_classes}"
            )));
        }
        let mut rng = seed::rng(seed);
        let mut layers = Vec::with_capacity(dims.len());
        let shapes = dims
            .windows(2)
            .map(|w| (w[0], w[1], 2.0))
            .chain(std::iter::once((dims[dims.len() - 1], num_classes, 1.0)));
        for (inputs, outputs, gain) in shapes {
            let normal = Normal::new(0.0, (gain / inputs as f64).sqrt()).expect("finite std");
            let mut layer = Dense::zeros(inputs, outputs);
            for w in &mut layer.weight {
                *w = normal.sample(&mut rng);
            }
            layers.push(layer);
        }
        Ok(Self { layers })
    }

    pub fn extractor(&self) -> &[Dense] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn classifier(&self) -> &Dense {
        &self.layers[self.layers.len() - 1]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier().inputs
    }

    pub fn num_classes(&self) -> usize {
        self.classifier().outputs
    }

    /// Extractor output, no input checks.
    pub(crate) fn features_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in self.extractor() {
            a = layer.apply(&a);
            a.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(DaalError::Consistency(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DaalError::Numeric("non-finite input".into()));
        }
        let features = self.features_unchecked(x);
        let logits = self.classifier().apply(&features);
        let probs = softmax(&logits);
        Ok(Forward {
            features,
            logits,
            probs,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Zero every feature coordinate outside `subset`.
pub fn apply_mask(f: &[f64], subset: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; f.len()];
    for &j in subset {
        if j >= f.len() {
            return Err(DaalError::Contract(format!(
                "feature index {j} out of range for dimension {}",
                f.len()
            )));
        }
        out[j] = f[j];
    }
    Ok(out)
}

/// Classifier logits on the masked feature, `g(M(f, S))`.
pub fn masked_forward(model: &MlpModel, f: &[f64], subset: &[usize]) -> Result<Vec<f64>> {
    if f.len() != model.feature_dim() {
        return Err(DaalError::Consistency(format!(
            "feature has dimension {}, classifier expects {}",
            f.len(),
            model.feature_dim()
        )));
    }
    Ok(model.classifier().apply(&apply_mask(f, subset)?))
}

/// Features, logits and class probabilities for a set of samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureBatch {
    pub ids: Vec<u64>,
    pub features: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub domains: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl FeatureBatch {
    /// Run the model over `ids`. Labels are attached when `with_labels`.
    pub fn compute(model: &MlpModel, ds: &DomainDataset, ids: &[u64], with_labels: bool) -> Result<Self> {
        let mut batch = FeatureBatch {
            labels: with_labels.then(Vec::new),
            ..Default::default()
        };
        for &id in ids {
            let s = ds.sample(id)?;
            let out = model.forward(&s.x)?;
            batch.ids.push(id);
            batch.features.push(out.features);
            batch.logits.push(out.logits);
            batch.probs.push(out.probs);
            batch.domains.push(s.e);
            if let Some(labels) = batch.labels.as_mut() {
                labels.push(s.y);
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| DaalError::Contract("feature batch carries no labels".into()))
    }

    /// Keep rows whose index satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        FeatureBatch {
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            logits: idx.iter().map(|&i| self.logits[i].clone()).collect(),
            probs: idx.iter().map(|&i| self.probs[i].clone()).collect(),
            domains: idx.iter().map(|&i| self.domains[i]).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Optimisation and weak-feature hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    /// Iterations when the whole training pool is labeled.
    pub iters_full: usize,
    pub momentum: f64,
    /// Squared-norm coefficient on masked logits.
    pub delta: f64,
    /// Trade-off between domain and label importance in feature scoring.
    pub alpha: f64,
    /// Least-confidence candidate multiplier.
    pub rho: f64,
    /// Weak-subset size; `None` means half the feature dimension.
    pub m: Option<usize>,
    /// Share of a round's iterations trained with plain cross-entropy
    /// before the weak-feature plan is built.
    pub warmup_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.05,
            batch_size: 64,
            iters_full: 3000,
            momentum: 0.9,
            delta: 0.1,
            alpha: 0.5,
            rho: 1.5,
            m: None,
            warmup_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn subset_size(&self, feature_dim: usize) -> usize {
        self.m.unwrap_or(feature_dim / 2)
    }

    /// Decay coefficient `m/d`.
    pub fn lambda(&self, feature_dim: usize) -> f64 {
        self.subset_size(feature_dim) as f64 / feature_dim as f64
    }

    /// `ceil(iters_full · labeled / pool)`.
    pub fn scaled_iters(&self, labeled: usize, pool: usize) -> usize {
        if pool == 0 {
            return 0;
        }
        (self.iters_full as u128 * labeled as u128).div_ceil(pool as u128) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DaalError::Config(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0,1)");
        }
        if !(self.delta >= 0.0) {
            return bad("delta must be non-negative");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if !(self.rho > 1.0) {
            return bad("rho must exceed 1");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0,1)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Scalar re-implementation: explicit loops, log-sum-exp written out.
    fn reference_probs(model: &MlpModel, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in model.extractor() {
            let mut next = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut s = l.bias[o];
                for i in 0..l.inputs {
                    s += l.weight[o * l.inputs + i] * a[i];
                }
                next[o] = if s > 0.0 { s } else { 0.0 };
            }
            a = next;
        }
        let c = model.classifier();
        let mut z = vec![0.0; c.outputs];
        for o in 0..c.outputs {
            z[o] = c.bias[o];
            for i in 0..c.inputs {
                z[o] += c.weight[o * c.inputs + i] * a[i];
            }
        }
        let mut m = z[0];
        for &v in &z {
            if v > m {
                m = v;
            }
        }
        let mut s = 0.0;
        for &v in &z {
            s += (v - m).exp();
        }
        let lse = m + s.ln();
        z.iter().map(|v| (v - lse).exp()).collect()
    }

    #[test]
    fn zero_model_gives_bias() {
        let mut model = MlpModel::new(&[4, 6, 3], 5, 1).unwrap();
        for l in &mut model.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        let out = model.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert!(out.logits.iter().all(|&z| z == 0.0));
        assert!(out.probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        model.layers[2].bias = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(model.forward(&[0.0; 4]).unwrap().logits, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = crate::seed::rng(3);
        for s in 0..20 {
            let model = MlpModel::new(&[10, 12, 8], 4, s).unwrap();
            let x: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = model.forward(&x).unwrap().probs;
            for (a, b) in p.iter().zip(reference_probs(&model, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let model = MlpModel::new(&[3, 4, 2], 2, 0).unwrap();
        assert!(matches!(model.forward(&[1.0, f64::NAN, 0.0]), Err(DaalError::Numeric(_))));
        assert!(model.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn masked_forward_cases() {
        let model = MlpModel::new(&[5, 7, 6], 3, 9).unwrap();
        let f = model.forward(&[0.2, -0.1, 0.7, 1.0, -0.5]).unwrap().features;
        let all: Vec<usize> = (0..6).collect();
        assert_eq!(masked_forward(&model, &f, &all).unwrap(), model.classifier().apply(&f));
        assert_eq!(masked_forward(&model, &f, &[]).unwrap(), model.classifier().bias);
        assert!(matches!(masked_forward(&model, &f, &[6]), Err(DaalError::Contract(_))));

        // Dense oracle: explicit zeroed copy through a hand-written product.
        let mut rng = crate::seed::rng(4);
        for _ in 0..20 {
            let f: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut idx: Vec<usize> = (0..6).collect();
            rand::seq::SliceRandom::shuffle(&mut idx[..], &mut rng);
            let subset = &idx[..3];
            let mut zeroed = f.clone();
            for j in 0..6 {
                if !subset.contains(&j) {
                    zeroed[j] = 0.0;
                }
            }
            let c = model.classifier();
            let got = masked_forward(&model, &f, subset).unwrap();
            for o in 0..3 {
                let mut z = c.bias[o];
                for j in 0..6 {
                    z += c.weight[o * 6 + j] * zeroed[j];
                }
                assert!((got[o] - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaled_iterations_round_up() {
        let cfg = TrainConfig { iters_full: 3000, ..Default::default() };
        assert_eq!(cfg.scaled_iters(240, 2400), 300);
        assert_eq!(cfg.scaled_iters(1, 2400), 2);
        assert_eq!(cfg.scaled_iters(2400, 2400), 3000);
        assert_eq!(cfg.lambda(16), 0.5);
        assert_eq!(TrainConfig { m: Some(4), ..cfg }.lambda(16), 0.25);
    }
}
