//! Hand-derived gradients of the combined loss and SGD with momentum.
//!
//! For one sample with dense logits `z = W f + b` and masked logits
//! `z' = W (f ⊙ m) + b`:
//!
//! ```text
//! dL/dz  = λ (softmax(z) − e_y)
//! dL/dz' = q (softmax(z') − e_y + δ z')
//! dL/dW  = dz fᵀ + dz' (f ⊙ m)ᵀ,   dL/db = dz + dz'
//! dL/df  = Wᵀ dz + m ⊙ (Wᵀ dz')
//! ```
//!
//! then back through the ReLU extractor. Without a plan the loss is plain
//! cross-entropy (`λ = 1`, no masked term).

use super::{loss_all, loss_ce, softmax, Dense, MlpModel, TrainConfig};
use crate::error::{DaalError, Result};
use crate::weak::WeakFeaturePlan;

/// One labeled training sample.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub id: u64,
    pub x: &'a [f64],
    pub y: usize,
    pub e: usize,
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= s);
        }
    }
}

/// Per-sample mask and weight resolved from the plan.
struct WeakTerm {
    mask: Vec<bool>,
    subset: Vec<usize>,
    q: f64,
}

fn weak_term(plan: &WeakFeaturePlan, ex: &Example<'_>, dim: usize) -> Result<WeakTerm> {
    let subset = plan.subset(ex.e).ok_or_else(|| {
        DaalError::Contract(format!("weak-feature plan has no subset for domain {}", ex.e))
    })?;
    let q = plan.weight(ex.id).ok_or_else(|| {
        DaalError::Contract(format!("weak-feature plan has no weight for sample {}", ex.id))
    })?;
    let mut mask = vec![false; dim];
    for &j in subset {
        if j >= dim {
            return Err(DaalError::Contract(format!("plan index {j} exceeds dimension {dim}")));
        }
        mask[j] = true;
    }
    Ok(WeakTerm {
        mask,
        subset: subset.to_vec(),
        q,
    })
}

fn check_example(model: &MlpModel, ex: &Example<'_>) -> Result<()> {
    if ex.x.len() != model.input_dim() {
        return Err(DaalError::Consistency(format!(
            "sample {} has dimension {}, model expects {}",
            ex.id,
            ex.x.len(),
            model.input_dim()
        )));
    }
    if ex.y >= model.num_classes() {
        return Err(DaalError::Contract(format!("label {} out of range", ex.y)));
    }
    Ok(())
}

/// Mean loss over the batch, evaluated by plain forward passes.
pub fn batch_loss(
    model: &MlpModel,
    batch: &[Example<'_>],
    plan: Option<&WeakFeaturePlan>,
    delta: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(DaalError::Contract("empty batch".into()));
    }
    let d = model.feature_dim();
    let mut total = 0.0;
    for ex in batch {
        check_example(model, ex)?;
        let f = model.features_unchecked(ex.x);
        let z = model.classifier().apply(&f);
        total += match plan {
            None => loss_ce(&z, ex.y),
            Some(plan) => {
                let t = weak_term(plan, ex, d)?;
                let zm = super::masked_forward(model, &f, &t.subset)?;
                loss_all(&z, &zm, ex.y, t.q, plan.lambda(), delta)
            }
        };
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss and its exact gradient with respect to every parameter.
pub fn loss_and_gradient(
    model: &MlpModel,
    batch: &[Example<'_>],
    plan: Option<&WeakFeaturePlan>,
    delta: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(DaalError::Contract("empty batch".into()));
    }
    let n_layers = model.layers.len();
    let d = model.feature_dim();
    let k = model.num_classes();
    let classifier = model.classifier();
    let mut grads = Gradients::zeros_like(model);
    let mut total = 0.0;

    for ex in batch {
        check_example(model, ex)?;
        // Forward with cached activations; acts[i] is the input of layer i.
        let mut acts: Vec<Vec<f64>> = vec![ex.x.to_vec()];
        for layer in model.extractor() {
            let mut a = layer.apply(acts.last().expect("non-empty"));
            a.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(a);
        }
        let f = acts.last().expect("non-empty").clone();
        let z = classifier.apply(&f);
        let p = softmax(&z);

        let (lambda, weak) = match plan {
            None => (1.0, None),
            Some(plan) => (plan.lambda(), Some(weak_term(plan, ex, d)?)),
        };

        let mut dz: Vec<f64> = p.iter().map(|&pi| lambda * pi).collect();
        dz[ex.y] -= lambda;
        let cg = &mut grads.layers[n_layers - 1];
        let mut df = vec![0.0; d];
        for o in 0..k {
            cg.bias[o] += dz[o];
            let row = &classifier.weight[o * d..(o + 1) * d];
            let grow = &mut cg.weight[o * d..(o + 1) * d];
            for j in 0..d {
                grow[j] += dz[o] * f[j];
                df[j] += row[j] * dz[o];
            }
        }

        match &weak {
            None => total += loss_ce(&z, ex.y),
            Some(t) => {
                let fm: Vec<f64> = f.iter().zip(&t.mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
                let zm = classifier.apply(&fm);
                let pm = softmax(&zm);
                total += loss_all(&z, &zm, ex.y, t.q, lambda, delta);
                let mut dzm: Vec<f64> = pm.iter().zip(&zm).map(|(&pi, &zi)| t.q * (pi + delta * zi)).collect();
                dzm[ex.y] -= t.q;
                for o in 0..k {
                    cg.bias[o] += dzm[o];
                    let row = &classifier.weight[o * d..(o + 1) * d];
                    let grow = &mut cg.weight[o * d..(o + 1) * d];
                    for j in 0..d {
                        if t.mask[j] {
                            grow[j] += dzm[o] * fm[j];
                            df[j] += row[j] * dzm[o];
                        }
                    }
                }
            }
        }

        // Back through the extractor: act = relu(W·prev + b).
        let mut dact = df;
        for li in (0..n_layers - 1).rev() {
            let layer = &model.layers[li];
            let out = &acts[li + 1];
            let input = &acts[li];
            let g = &mut grads.layers[li];
            let mut dprev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                if out[o] <= 0.0 {
                    continue;
                }
                let dpre = dact[o];
                g.bias[o] += dpre;
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut g.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for i in 0..layer.inputs {
                    grow[i] += dpre * input[i];
                    dprev[i] += row[i] * dpre;
                }
            }
            dact = dprev;
        }
    }

    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((total * inv, grads))
}

/// `lr0 · ½(1 + cos(π·step/total))`.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = (step as f64 / total as f64).min(1.0);
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// SGD with heavy-ball momentum: `v ← μv + g`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Gradients,
}

impl Sgd {
    pub fn new(model: &MlpModel, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: Gradients::zeros_like(model),
        }
    }

    pub fn apply(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) {
        for ((p, v), g) in model.layers.iter_mut().zip(&mut self.velocity.layers).zip(&grads.layers) {
            for ((pw, vw), gw) in p
                .weight
                .iter_mut()
                .chain(p.bias.iter_mut())
                .zip(v.weight.iter_mut().chain(v.bias.iter_mut()))
                .zip(g.weight.iter().chain(&g.bias))
            {
                *vw = self.momentum * *vw + gw;
                *pw -= lr * *vw;
            }
        }
    }
}

/// One optimisation step on `batch`; returns the mean loss before the update.
pub fn backward_and_step(
    model: &mut MlpModel,
    batch: &[Example<'_>],
    plan: Option<&WeakFeaturePlan>,
    cfg: &TrainConfig,
    step: usize,
    total_steps: usize,
    opt: &mut Sgd,
) -> Result<f64> {
    let (loss, grads) = loss_and_gradient(model, batch, plan, cfg.delta)?;
    if !loss.is_finite() {
        return Err(DaalError::Numeric(format!("non-finite loss at step {step}")));
    }
    opt.apply(model, &grads, cosine_lr(cfg.lr0, step, total_steps));
    if !model.is_finite() {
        return Err(DaalError::Numeric(format!("parameters diverged at step {step}")));
    }
    Ok(loss)
}
