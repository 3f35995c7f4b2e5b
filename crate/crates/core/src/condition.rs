//! The condition vector that steers the glyph generator.
//!
//! A condition is a probability vector over the vocabulary. Training only
//! ever uses one-hot conditions; at inference several characters can be
//! mixed with per-character weights.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Nonnegative weights over the vocabulary, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    weights: Vec<f64>,
}

impl ConditionVector {
    pub fn one_hot(index: usize, vocab_size: usize) -> Result<Self> {
        build_condition(&[(index, 1.0)], vocab_size)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `(class_index, weight)` for every nonzero entry, in index order.
    pub fn support(&self) -> Vec<(usize, f64)> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| (i, w))
            .collect()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.weights.iter().map(|&w| w as f32).collect()
    }
}

/// Normalizes `(class_index, weight)` pairs into a condition over a
/// vocabulary of `vocab_size` classes.
pub fn build_condition(selected: &[(usize, f64)], vocab_size: usize) -> Result<ConditionVector> {
    if selected.is_empty() {
        return Err(Error::invalid("selected", "at least one class is required"));
    }
    if selected.len() > vocab_size {
        return Err(Error::invalid(
            "selected",
            format!("{} classes for a vocabulary of {vocab_size}", selected.len()),
        ));
    }
    let mut weights = vec![0.0; vocab_size];
    let mut seen = vec![false; vocab_size];
    let mut total = 0.0;
    for &(index, weight) in selected {
        if index >= vocab_size {
            return Err(Error::invalid(
                "selected",
                format!("class index {index} out of range 0..{vocab_size}"),
            ));
        }
        if seen[index] {
            return Err(Error::invalid(
                "selected",
                format!("class index {index} listed twice"),
            ));
        }
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::invalid(
                "weights",
                format!("weight {weight} must be finite and nonnegative"),
            ));
        }
        seen[index] = true;
        weights[index] = weight;
        total += weight;
    }
    if total <= 0.0 {
        return Err(Error::invalid("weights", "all weights are zero"));
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(ConditionVector { weights })
}
