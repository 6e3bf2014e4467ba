//! Identity cross-entropy, soft-margin triplet and combined objectives, their
//! analytic gradients, and a small trainable identity classifier.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::drwm::{TrainConfig, TrainedHead};
use crate::error::{check_dim, Error, Result};
use crate::linear::{LinearGrad, LinearHead};
use crate::model::CharacterId;
use crate::scalar::{sigmoid, softplus, squared_l2, Real};

/// `Q x d` identity classifier.
pub type ClassifierHead<T = f64> = LinearHead<T>;

pub fn id_logits<T: Real>(h_f: &[T], head: &ClassifierHead<T>) -> Result<Vec<T>> {
    head.forward(h_f)
}

fn log_sum_exp<T: Real>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln()
}

fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&z| (z - lse).exp()).collect()
}

/// `-log softmax(logits)[true_id]` via log-sum-exp.
pub fn ce_loss<T: Real>(logits: &[T], true_id: CharacterId) -> Result<T> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput("cross-entropy needs at least two classes".into()));
    }
    let Some(&z) = logits.get(true_id.index()) else {
        return Err(Error::InvalidInput(format!(
            "true id {true_id} outside {} classes",
            logits.len()
        )));
    };
    Ok(log_sum_exp(logits) - z)
}

/// Gradients of [`ce_loss`] through [`id_logits`].
#[derive(Clone, Debug, PartialEq)]
pub struct CeGrad<T: Real = f64> {
    pub head: LinearGrad<T>,
    pub features: Vec<T>,
}

pub fn ce_gradient<T: Real>(h_f: &[T], head: &ClassifierHead<T>, true_id: CharacterId) -> Result<CeGrad<T>> {
    let logits = id_logits(h_f, head)?;
    ce_loss(&logits, true_id)?;
    let mut delta = softmax(&logits);
    delta[true_id.index()] -= T::one();
    let mut grad = LinearGrad::zeros(head.outputs, head.inputs);
    grad.add_outer(&delta, h_f);
    let mut features = vec![T::zero(); head.inputs];
    for (r, &dr) in delta.iter().enumerate() {
        for (f, &w) in features.iter_mut().zip(head.row(r)) {
            *f += dr * w;
        }
    }
    Ok(CeGrad { head: grad, features })
}

/// Aligned anchor / positive / negative representations.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletBatch<T: Real = f64> {
    pub anchors: Vec<Vec<T>>,
    pub positives: Vec<Vec<T>>,
    pub negatives: Vec<Vec<T>>,
}

impl<T: Real> TripletBatch<T> {
    pub fn single(anchor: Vec<T>, positive: Vec<T>, negative: Vec<T>) -> Self {
        Self {
            anchors: vec![anchor],
            positives: vec![positive],
            negatives: vec![negative],
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidInput("empty triplet batch".into()));
        }
        check_dim("triplet positives", self.len(), self.positives.len())?;
        check_dim("triplet negatives", self.len(), self.negatives.len())?;
        let d = self.anchors[0].len();
        for i in 0..self.len() {
            check_dim("triplet anchor", d, self.anchors[i].len())?;
            check_dim("triplet positive", d, self.positives[i].len())?;
            check_dim("triplet negative", d, self.negatives[i].len())?;
        }
        Ok(())
    }

    fn margin(&self, i: usize) -> T {
        squared_l2(&self.anchors[i], &self.positives[i]) - squared_l2(&self.anchors[i], &self.negatives[i])
    }
}

/// Soft-margin triplet loss `log(1 + exp(d_ap - d_an))`, averaged over the batch.
pub fn triplet_loss<T: Real>(batch: &TripletBatch<T>) -> Result<T> {
    batch.check()?;
    let total: T = (0..batch.len()).map(|i| softplus(batch.margin(i))).sum();
    Ok(total / T::from_usize(batch.len()).expect("batch size fits scalar"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletGrad<T: Real = f64> {
    pub anchors: Vec<Vec<T>>,
    pub positives: Vec<Vec<T>>,
    pub negatives: Vec<Vec<T>>,
}

/// Gradient of [`triplet_loss`] with respect to every input vector.
pub fn triplet_gradient<T: Real>(batch: &TripletBatch<T>) -> Result<TripletGrad<T>> {
    batch.check()?;
    let n = T::from_usize(batch.len()).expect("batch size fits scalar");
    let two = T::lit(2.0);
    let mut out = TripletGrad {
        anchors: Vec::with_capacity(batch.len()),
        positives: Vec::with_capacity(batch.len()),
        negatives: Vec::with_capacity(batch.len()),
    };
    for i in 0..batch.len() {
        let k = sigmoid(batch.margin(i)) / n;
        let (a, p, ng) = (&batch.anchors[i], &batch.positives[i], &batch.negatives[i]);
        out.anchors
            .push((0..a.len()).map(|c| k * two * (ng[c] - p[c])).collect());
        out.positives
            .push((0..a.len()).map(|c| -k * two * (a[c] - p[c])).collect());
        out.negatives
            .push((0..a.len()).map(|c| k * two * (a[c] - ng[c])).collect());
    }
    Ok(out)
}

/// Unweighted sum of the three objectives.
pub fn total_loss<T: Real>(ce: T, triplet: T, bce: T) -> T {
    bce + ce + triplet
}

/// Draws `count` triplets: anchor uniform, positive uniform among other samples
/// with the same id (or the anchor itself when it is alone), negative uniform
/// among samples with a different id.
pub fn sample_triplets<T: Real>(
    features: &[Vec<T>],
    ids: &[CharacterId],
    count: usize,
    seed: u64,
) -> Result<TripletBatch<T>> {
    check_dim("triplet ids", features.len(), ids.len())?;
    let idx: Vec<usize> = (0..features.len()).collect();
    if ids.is_empty() || !ids.iter().any(|&i| i != ids[0]) {
        return Err(Error::InvalidInput("triplets need at least two identities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = TripletBatch {
        anchors: Vec::with_capacity(count),
        positives: Vec::with_capacity(count),
        negatives: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let &a = idx.choose(&mut rng).expect("non-empty");
        let same: Vec<usize> = idx.iter().copied().filter(|&j| j != a && ids[j] == ids[a]).collect();
        let diff: Vec<usize> = idx.iter().copied().filter(|&j| ids[j] != ids[a]).collect();
        let p = same.choose(&mut rng).copied().unwrap_or(a);
        let &n = diff.choose(&mut rng).expect("another identity exists");
        batch.anchors.push(features[a].clone());
        batch.positives.push(features[p].clone());
        batch.negatives.push(features[n].clone());
    }
    Ok(batch)
}

fn mean_ce<T: Real>(features: &[Vec<T>], ids: &[CharacterId], head: &ClassifierHead<T>) -> Result<T> {
    let mut total = T::zero();
    for (f, &id) in features.iter().zip(ids) {
        total += ce_loss(&id_logits(f, head)?, id)?;
    }
    Ok(total / T::from_usize(features.len()).expect("count fits scalar"))
}

/// Full-batch gradient descent on the mean cross-entropy. Every class in
/// `0..num_classes` needs at least one sample.
pub fn train_classifier<T: Real>(
    features: &[Vec<T>],
    ids: &[CharacterId],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<TrainedHead<T>> {
    config.validate()?;
    check_dim("classifier labels", features.len(), ids.len())?;
    if num_classes < 2 {
        return Err(Error::InvalidInput("classifier needs at least two classes".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for id in ids {
        match counts.get_mut(id.index()) {
            Some(c) => *c += 1,
            None => return Err(Error::InvalidInput(format!("label {id} outside {num_classes} classes"))),
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!("class {empty} has no samples")));
    }
    let dim = features[0].len();
    for f in features {
        check_dim("classifier feature", dim, f.len())?;
    }

    let mut head = LinearHead::seeded(num_classes, dim, config.seed);
    let lr = T::lit(config.learning_rate);
    let inv_n = T::one() / T::from_usize(features.len()).expect("count fits scalar");
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut grad = LinearGrad::zeros(head.outputs, head.inputs);
        for (f, &id) in features.iter().zip(ids) {
            grad.add_assign(&ce_gradient(f, &head, id)?.head);
        }
        grad.scale(inv_n);
        head.apply_step(&grad, lr);
        loss_trace.push(mean_ce(features, ids, &head)?);
    }
    Ok(TrainedHead { head, loss_trace })
}

/// Fraction of samples whose highest logit is the true class.
pub fn top1_accuracy<T: Real>(features: &[Vec<T>], ids: &[CharacterId], head: &ClassifierHead<T>) -> Result<f64> {
    let mut hits = 0usize;
    for (f, id) in features.iter().zip(ids) {
        let logits = id_logits(f, head)?;
        let best = logits
            .iter()
            .enumerate()
            .fold(
                (0, T::neg_infinity()),
                |acc, (i, &z)| if z > acc.1 { (i, z) } else { acc },
            )
            .0;
        if best == id.index() {
            hits += 1;
        }
    }
    Ok(hits as f64 / features.len().max(1) as f64)
}
