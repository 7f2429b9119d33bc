//! Combines two dataset-specific optima into one configuration: arithmetic
//! mean of the learning rates, modal optimizer and batch size with a
//! validation-F1 tie-break.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::search_space::Configuration;

/// A per-task optimum together with the validation scores that back it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredOptimum {
    pub config: Configuration,
    pub val_loss: f64,
    pub val_f1: f64,
    pub dataset_name: String,
}

/// Builds the combined configuration. With two inputs, differing
/// categorical values are always a mode tie, resolved toward the optimum
/// with the higher validation F1; equal F1 falls back to input `a`.
pub fn combine(a: &ScoredOptimum, b: &ScoredOptimum) -> Configuration {
    let prefer_b = b.val_f1 > a.val_f1;
    let pick = |x: &ScoredOptimum, y: &ScoredOptimum| if prefer_b { y.config } else { x.config };

    let optimizer = if a.config.optimizer == b.config.optimizer {
        a.config.optimizer
    } else {
        pick(a, b).optimizer
    };
    let batch_size = if a.config.batch_size == b.config.batch_size {
        a.config.batch_size
    } else {
        pick(a, b).batch_size
    };
    Configuration {
        learning_rate: (a.config.learning_rate + b.config.learning_rate) / 2.0,
        optimizer,
        batch_size,
    }
}

/// The three federated schemes: each task's own optimum plus the combined
/// configuration.
pub fn build_schemes(opt_a: &ScoredOptimum, opt_b: &ScoredOptimum) -> BTreeMap<String, Configuration> {
    BTreeMap::from([
        ("a-optimized".to_string(), opt_a.config),
        ("b-optimized".to_string(), opt_b.config),
        ("combined".to_string(), combine(opt_a, opt_b)),
    ])
}
