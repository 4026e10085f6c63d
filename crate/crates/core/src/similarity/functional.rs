//! Output-level similarities: accuracy gap, prediction disagreement and
//! symmetric KL (J) divergence.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Probabilities are clamped to at least this before renormalizing.
pub const PROB_FLOOR: f64 = 1e-7;

pub fn acc_diff(p1: f64, p2: f64) -> Result<f64> {
    for p in [p1, p2] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange {
                what: "accuracy",
                value: p,
            });
        }
    }
    Ok((p1 - p2).abs())
}

/// Fraction of positions where the two label vectors differ.
pub fn disagreement(labels1: &[i64], labels2: &[i64]) -> Result<f64> {
    if labels1.len() != labels2.len() {
        return Err(Error::LengthMismatch {
            left: labels1.len(),
            right: labels2.len(),
        });
    }
    if labels1.is_empty() {
        return Err(Error::TooFewSamples { got: 0, needed: 1 });
    }
    let conflicts = labels1.iter().zip(labels2).filter(|(a, b)| a != b).count();
    Ok(conflicts as f64 / labels1.len() as f64)
}

/// Row-wise probabilities, clamped to `[PROB_FLOOR, 1]` and renormalized.
/// Raw logits go through softmax first; probability rows are renormalized.
pub fn row_probabilities(row: &[f32], already_probabilities: bool) -> Vec<f64> {
    let mut p: Vec<f64> = if already_probabilities {
        let s: f64 = row.iter().map(|&x| (x as f64).max(0.0)).sum();
        if s > 0.0 {
            row.iter().map(|&x| (x as f64).max(0.0) / s).collect()
        } else {
            vec![1.0 / row.len() as f64; row.len()]
        }
    } else {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
        let e: Vec<f64> = row.iter().map(|&x| (x as f64 - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    };
    for x in p.iter_mut() {
        *x = x.clamp(PROB_FLOOR, 1.0);
    }
    let s: f64 = p.iter().sum();
    for x in p.iter_mut() {
        *x /= s;
    }
    p
}

/// Row-major probability table with log values, computed once per model.
#[derive(Clone, Debug)]
pub struct ProbabilityTable {
    pub rows: usize,
    pub cols: usize,
    probs: Vec<f64>,
    logs: Vec<f64>,
}

impl ProbabilityTable {
    pub fn new(logits: &DenseMatrix, already_probabilities: bool) -> Self {
        let mut probs = Vec::with_capacity(logits.rows() * logits.cols());
        for i in 0..logits.rows() {
            probs.extend(row_probabilities(logits.row(i), already_probabilities));
        }
        let logs = probs.iter().map(|p| p.ln()).collect();
        ProbabilityTable {
            rows: logits.rows(),
            cols: logits.cols(),
            probs,
            logs,
        }
    }

    /// `(1/2N) Σ_i [KL(p_i‖q_i) + KL(q_i‖p_i)]`.
    pub fn j_divergence(&self, other: &ProbabilityTable) -> Result<f64> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::ShapeMismatch {
                left: "first logits".into(),
                left_shape: (self.rows, self.cols),
                right: "second logits".into(),
                right_shape: (other.rows, other.cols),
            });
        }
        // KL(p‖q) + KL(q‖p) = Σ (p − q)(ln p − ln q)
        let total: f64 = self
            .probs
            .iter()
            .zip(&other.probs)
            .zip(self.logs.iter().zip(&other.logs))
            .map(|((p, q), (lp, lq))| (p - q) * (lp - lq))
            .sum();
        Ok((total / (2.0 * self.rows as f64)).max(0.0))
    }
}

pub fn j_divergence(logits1: &DenseMatrix, logits2: &DenseMatrix, already_probabilities: bool) -> Result<f64> {
    if logits1.shape() != logits2.shape() {
        return Err(Error::ShapeMismatch {
            left: "first logits".into(),
            left_shape: logits1.shape(),
            right: "second logits".into(),
            right_shape: logits2.shape(),
        });
    }
    ProbabilityTable::new(logits1, already_probabilities)
        .j_divergence(&ProbabilityTable::new(logits2, already_probabilities))
}
