//! Learnable importance masks: binarized forward value with a sigmoid
//! straight-through gradient, the retention regularizer and pruning.

use crate::error::{Error, Result};
use crate::geometry::{sigmoid, sigmoid_grad};
use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    /// Retention threshold on `sigmoid(m)`, in (0, 1).
    pub epsilon: f64,
    /// Regularizer weight.
    pub lambda: f64,
    pub prune_interval: u64,
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        validate_epsilon(self.epsilon)?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.prune_interval == 0 {
            return Err(Error::invalid("prune interval must be at least 1"));
        }
        Ok(())
    }
}

pub fn validate_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("mask threshold {epsilon} outside (0, 1)")))
    }
}

/// `(M, dM/dm)`: `M = 1` iff `sigmoid(m) >= epsilon`; the backward
/// multiplier is the sigmoid derivative regardless of `M`.
pub fn mask_forward(m: f64, epsilon: f64) -> (f64, f64) {
    let keep = sigmoid(m) >= epsilon;
    (if keep { 1.0 } else { 0.0 }, sigmoid_grad(m))
}

/// Mean retention probability and its gradient per score.
pub fn mask_regularizer(scores: &[f64]) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::invalid("mask regularizer needs at least one score"));
    }
    let n = scores.len() as f64;
    let value = scores.iter().map(|m| sigmoid(*m)).sum::<f64>() / n;
    let grad = scores.iter().map(|m| sigmoid_grad(*m) / n).collect();
    Ok((value, grad))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneOutcome {
    /// Retention flag per pre-prune primitive.
    pub keep: Vec<bool>,
    pub removed: usize,
}

/// Removes primitives with `sigmoid(m) < epsilon`, preserving order. Refuses
/// (leaving the scene untouched) if nothing would survive.
pub fn prune(scene: &mut Scene, epsilon: f64) -> Result<PruneOutcome> {
    validate_epsilon(epsilon)?;
    let keep: Vec<bool> = scene
        .primitives
        .iter()
        .map(|p| sigmoid(p.mask_score) >= epsilon)
        .collect();
    let retained = keep.iter().filter(|k| **k).count();
    if retained == 0 {
        return Err(Error::invalid(format!(
            "pruning at threshold {epsilon} would remove all {} primitives",
            scene.len()
        )));
    }
    let removed = scene.len() - retained;
    if removed > 0 {
        scene.retain_by(&keep);
    }
    Ok(PruneOutcome { keep, removed })
}
