//! Binary logistic regression over sparse features.
//!
//! Training is seeded mini-batch gradient descent on the L2-regularized mean
//! log-loss. The step size for epoch `e` (1-based) is `lr / sqrt(e)`; an epoch
//! that raises the full-data objective is rolled back and the step size
//! halved, so the recorded objective never increases.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::SparseVec;

/// Errors shared by the category, matcher and ranker models.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("gold type `{0}` has no cluster assignment")]
    UnassignedType(String),
    #[error("training data needs at least two distinct categories, found {0}")]
    SingleCategory(usize),
    #[error("validation set has no resource questions with gold types")]
    NoValidationQuestions,
    #[error("score file line {line}: {reason}")]
    ScoreFile { line: usize, reason: String },
    #[error("score file has k = {found}, cluster model has k = {expected}")]
    ScoreK { expected: usize, found: usize },
    #[error("no cluster scores for question `{0}` and no built-in matcher to fall back on")]
    MissingScores(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Logistic function, kept inside the open interval (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryLogistic {
    pub weights: SparseVec,
    pub bias: f64,
}

impl BinaryLogistic {
    pub fn constant(bias: f64) -> Self {
        Self {
            weights: SparseVec::default(),
            bias,
        }
    }

    pub fn decision(&self, x: &SparseVec) -> f64 {
        self.weights.dot(x) + self.bias
    }

    pub fn score(&self, x: &SparseVec) -> f64 {
        sigmoid(self.decision(x))
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.1,
            l2: 1e-4,
            batch_size: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    /// Objective before training, then after every epoch.
    pub losses: Vec<f64>,
    pub rejected_epochs: usize,
}

/// Dense weights stored as `scale * v` so the L2 shrink is O(1) per step.
struct ScaledWeights {
    v: Vec<f64>,
    scale: f64,
}

impl ScaledWeights {
    fn dot(&self, x: &SparseVec) -> f64 {
        self.scale * x.dot_dense(&self.v)
    }

    fn add(&mut self, x: &SparseVec, coef: f64) {
        let c = coef / self.scale;
        for (i, xv) in x.iter() {
            self.v[i as usize] += c * xv;
        }
    }

    fn shrink(&mut self, factor: f64) {
        self.scale *= factor;
        if self.scale < 1e-9 {
            self.v.iter_mut().for_each(|w| *w *= self.scale);
            self.scale = 1.0;
        }
    }

    fn sq_norm(&self) -> f64 {
        self.scale * self.scale * self.v.iter().map(|w| w * w).sum::<f64>()
    }

    fn to_sparse(&self) -> SparseVec {
        let (indices, values) = self
            .v
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i as u32, w * self.scale))
            .unzip();
        SparseVec { indices, values }
    }
}

/// Regularized mean log-loss.
pub fn objective(model: &BinaryLogistic, xs: &[&SparseVec], ys: &[bool], l2: f64) -> f64 {
    let data: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = model.decision(x);
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum::<f64>()
        / xs.len().max(1) as f64;
    data + 0.5 * l2 * model.weights.values.iter().map(|w| w * w).sum::<f64>()
}

fn objective_scaled(w: &ScaledWeights, b: f64, xs: &[&SparseVec], ys: &[bool], l2: f64) -> f64 {
    let data: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = w.dot(x) + b;
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum::<f64>()
        / xs.len().max(1) as f64;
    data + 0.5 * l2 * w.sq_norm()
}

/// Trains one binary classifier. `dim` bounds the feature indices.
pub fn train_binary(xs: &[&SparseVec], ys: &[bool], dim: usize, params: &TrainParams) -> (BinaryLogistic, TrainTrace) {
    assert_eq!(xs.len(), ys.len());
    let mut w = ScaledWeights {
        v: vec![0.0; dim],
        scale: 1.0,
    };
    let mut b = 0.0;
    let mut trace = TrainTrace::default();
    if xs.is_empty() {
        return (BinaryLogistic::constant(0.0), trace);
    }

    let batch = params.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut loss = objective_scaled(&w, b, xs, ys, params.l2);
    trace.losses.push(loss);
    let mut backoff = 1.0;

    for epoch in 1..=params.epochs {
        let lr = params.learning_rate * backoff / (epoch as f64).sqrt();
        let saved = (w.v.clone(), w.scale, b);
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let residuals: Vec<f64> = chunk
                .iter()
                .map(|&i| sigmoid(w.dot(xs[i]) + b) - f64::from(u8::from(ys[i])))
                .collect();
            let step = lr / chunk.len() as f64;
            w.shrink(1.0 - lr * params.l2);
            for (&i, r) in chunk.iter().zip(&residuals) {
                if *r != 0.0 {
                    w.add(xs[i], -step * r);
                }
            }
            b -= step * residuals.iter().sum::<f64>();
        }
        let next = objective_scaled(&w, b, xs, ys, params.l2);
        if next.is_finite() && next <= loss {
            loss = next;
        } else {
            (w.v, w.scale, b) = saved;
            backoff *= 0.5;
            trace.rejected_epochs += 1;
        }
        trace.losses.push(loss);
    }

    (
        BinaryLogistic {
            weights: w.to_sparse(),
            bias: b,
        },
        trace,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(pairs: &[(u32, f64)]) -> SparseVec {
        SparseVec::from_pairs(pairs.iter().copied())
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(1000.0) < 1.0 && sigmoid(-1000.0) > 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn separable_problem_is_learned_and_loss_never_rises() {
        let xs: Vec<SparseVec> = (0..40)
            .map(|i| if i % 4 == 0 { x(&[(0, 1.0)]) } else { x(&[(1, 0.8), (2, 0.6)]) })
            .collect();
        let ys: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let refs: Vec<&SparseVec> = xs.iter().collect();
        let (model, trace) = train_binary(&refs, &ys, 3, &TrainParams::default());
        let correct = refs.iter().zip(&ys).filter(|(x, &y)| (model.score(x) > 0.5) == y).count();
        assert_eq!(correct, 40);
        assert!(trace.losses.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(trace.losses.len(), 31);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let xs: Vec<SparseVec> = (0..25).map(|i| x(&[((i % 5) as u32, 1.0), (5, 0.3)])).collect();
        let ys: Vec<bool> = (0..25).map(|i| i % 5 < 2).collect();
        let refs: Vec<&SparseVec> = xs.iter().collect();
        let p = TrainParams {
            batch_size: 4,
            ..TrainParams::default()
        };
        assert_eq!(train_binary(&refs, &ys, 6, &p).0, train_binary(&refs, &ys, 6, &p).0);
    }

    #[test]
    fn all_zero_features_leave_only_the_bias() {
        let xs = vec![SparseVec::default(); 10];
        let ys: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let refs: Vec<&SparseVec> = xs.iter().collect();
        let (model, _) = train_binary(&refs, &ys, 4, &TrainParams::default());
        assert!(model.weights.is_empty());
        assert!(model.bias < 0.0);
        assert_eq!(model.score(&x(&[(2, 1.0)])), sigmoid(model.bias));
    }
}
