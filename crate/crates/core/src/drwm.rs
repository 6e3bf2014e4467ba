//! Dynamic relation weighting: a linear + sigmoid head maps scene context to a
//! five-way relation prior, which then weights the edges of the social graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{LinearGrad, LinearHead};
use crate::model::{CharacterId, ContextFeatures, RelationType, Scene, SocialGraph};
use crate::scalar::{sigmoid, Real};

/// Per-scene prior over the five relation types, indexed by [`RelationType::index`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationPrior<T: Real = f64> {
    pub probs: [T; RelationType::COUNT],
}

impl<T: Real> RelationPrior<T> {
    pub fn new(probs: [T; RelationType::COUNT]) -> Self {
        Self { probs }
    }

    pub fn uniform(p: T) -> Self {
        Self {
            probs: [p; RelationType::COUNT],
        }
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        let probs: [T; RelationType::COUNT] = values
            .try_into()
            .map_err(|_| Error::InvalidInput(format!("relation prior needs 5 entries, got {}", values.len())))?;
        Ok(Self { probs })
    }

    pub fn get(&self, r: RelationType) -> T {
        self.probs[r.index()]
    }

    pub fn total(&self) -> T {
        self.probs.iter().copied().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub clamp_eps: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= 1e-3) {
            return Err(Error::InvalidConfig("clamp_eps must lie in (0, 1e-3]".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 400,
            seed: 0,
            clamp_eps: 1e-7,
        }
    }
}

pub fn drwm_forward<T: Real>(ctx: &ContextFeatures<T>, head: &LinearHead<T>) -> Result<RelationPrior<T>> {
    if head.outputs != RelationType::COUNT {
        return Err(Error::InvalidInput(format!(
            "relation head must have 5 outputs, has {}",
            head.outputs
        )));
    }
    let logits = head.forward(&ctx.concat())?;
    let mut probs = [T::zero(); RelationType::COUNT];
    for (p, z) in probs.iter_mut().zip(logits) {
        *p = sigmoid(z);
    }
    Ok(RelationPrior { probs })
}

fn check_truth(truth: &[u8]) -> Result<()> {
    if truth.len() != RelationType::COUNT || truth.iter().any(|&y| y > 1) {
        return Err(Error::InvalidInput("relation labels must be five 0/1 entries".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy over the five labels, predictions clamped to
/// `[clamp_eps, 1 - clamp_eps]`.
pub fn bce_loss<T: Real>(pred: &RelationPrior<T>, truth: &[u8], clamp_eps: T) -> Result<T> {
    check_truth(truth)?;
    let hi = T::one() - clamp_eps;
    let total: T = pred
        .probs
        .iter()
        .zip(truth)
        .map(|(&p, &y)| {
            let p = p.max(clamp_eps).min(hi);
            if y == 1 {
                -p.ln()
            } else {
                -(T::one() - p).ln()
            }
        })
        .sum();
    Ok(total / T::lit(RelationType::COUNT as f64))
}

/// Gradient of [`bce_loss`] through the sigmoid with respect to the head.
/// Outputs pinned by the clamp contribute zero.
pub fn bce_gradient<T: Real>(
    ctx: &ContextFeatures<T>,
    head: &LinearHead<T>,
    truth: &[u8],
    clamp_eps: T,
) -> Result<LinearGrad<T>> {
    check_truth(truth)?;
    let pred = drwm_forward(ctx, head)?;
    let input = ctx.concat();
    let n = T::lit(RelationType::COUNT as f64);
    let hi = T::one() - clamp_eps;
    let delta: Vec<T> = pred
        .probs
        .iter()
        .zip(truth)
        .map(|(&p, &y)| {
            if p < clamp_eps || p > hi {
                T::zero()
            } else {
                (p - T::lit(y as f64)) / n
            }
        })
        .collect();
    let mut grad = LinearGrad::zeros(head.outputs, head.inputs);
    grad.add_outer(&delta, &input);
    Ok(grad)
}

/// Result of [`train_drwm`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedHead<T: Real = f64> {
    pub head: LinearHead<T>,
    /// Mean loss after each epoch.
    pub loss_trace: Vec<T>,
}

fn labeled<T: Real>(scenes: &[Scene<T>]) -> Vec<(&ContextFeatures<T>, &[u8])> {
    scenes
        .iter()
        .filter_map(|s| s.relation_labels.as_deref().map(|y| (&s.context, y)))
        .collect()
}

fn mean_bce<T: Real>(data: &[(&ContextFeatures<T>, &[u8])], head: &LinearHead<T>, eps: T) -> Result<T> {
    let mut total = T::zero();
    for (ctx, y) in data {
        total += bce_loss(&drwm_forward(ctx, head)?, y, eps)?;
    }
    Ok(total / T::from_usize(data.len()).expect("count fits scalar"))
}

/// Full-batch gradient descent on the mean BCE of every labeled scene,
/// starting from a seeded small-random head.
pub fn train_drwm<T: Real>(scenes: &[Scene<T>], config: &TrainConfig) -> Result<TrainedHead<T>> {
    config.validate()?;
    let data = labeled(scenes);
    let Some((first, _)) = data.first() else {
        return Err(Error::InvalidInput("no scenes carry relation labels".into()));
    };
    let inputs = first.dim();
    let mut head = LinearHead::seeded(RelationType::COUNT, inputs, config.seed);
    let eps = T::lit(config.clamp_eps);
    let lr = T::lit(config.learning_rate);
    let inv_n = T::one() / T::from_usize(data.len()).expect("count fits scalar");
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut grad = LinearGrad::zeros(head.outputs, head.inputs);
        for (ctx, y) in &data {
            grad.add_assign(&bce_gradient(ctx, &head, y, eps)?);
        }
        grad.scale(inv_n);
        head.apply_step(&grad, lr);
        loss_trace.push(mean_bce(&data, &head, eps)?);
    }
    Ok(TrainedHead { head, loss_trace })
}

/// Mean BCE of `head` over the labeled scenes.
pub fn evaluate_bce<T: Real>(scenes: &[Scene<T>], head: &LinearHead<T>, clamp_eps: T) -> Result<T> {
    let data = labeled(scenes);
    if data.is_empty() {
        return Err(Error::InvalidInput("no scenes carry relation labels".into()));
    }
    mean_bce(&data, head, clamp_eps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge<T: Real = f64> {
    pub a: CharacterId,
    pub b: CharacterId,
    pub relation: RelationType,
    pub weight: T,
}

/// Each social edge takes the prior probability of its relation type.
pub fn weight_social_graph<T: Real>(g: &SocialGraph, prior: &RelationPrior<T>) -> Vec<WeightedEdge<T>> {
    g.edges
        .iter()
        .map(|e| WeightedEdge {
            a: e.a,
            b: e.b,
            relation: e.relation,
            weight: prior.get(e.relation),
        })
        .collect()
}
