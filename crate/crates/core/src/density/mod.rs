//! Density-estimator contracts and implementations.
//!
//! A prefix is a token slice that starts with the start token; estimators
//! predict the event at position `prefix.len()`.

mod bridge;
mod learner;
mod oracle;
mod rollout;

pub use bridge::{serve_bridge, BridgeEstimator};
pub use learner::{loss_and_grad, train_lagged_softmax, LaggedSoftmaxLearner, TrainConfig};
pub use oracle::{CalibrationConfig, ExactOracle, PerturbedOracle};
pub use rollout::RolloutPosterior;

use crate::error::{Error, Result};
use crate::types::{CategoricalDist, EventId};

/// Next-event predictor `P(x_i | x_<i)`.
pub trait EventDensityEstimator: Send + Sync {
    /// Number of event types predicted.
    fn vocab_size(&self) -> usize;

    /// Writes the next-event distribution into `out` (length `vocab_size`).
    fn write_next_dist(&self, prefix: &[EventId], out: &mut [f64]) -> Result<()>;

    fn next_event_dist(&self, prefix: &[EventId]) -> Result<CategoricalDist> {
        let mut out = vec![0.0; self.vocab_size()];
        self.write_next_dist(prefix, &mut out)?;
        Ok(CategoricalDist::from_raw(out))
    }

    fn event_prob(&self, prefix: &[EventId], token: EventId) -> Result<f64> {
        if token as usize >= self.vocab_size() {
            return Err(Error::InvalidToken { token, vocab_size: self.vocab_size() });
        }
        Ok(self.next_event_dist(prefix)?.prob(token))
    }
}

/// Per-label posterior `P(Y_j = 1 | x_<=i)`, clamped into `[eps, 1 - eps]`.
pub trait LabelPosteriorEstimator: Send + Sync {
    fn n_labels(&self) -> usize;

    /// Vocabulary of the prefixes this estimator accepts.
    fn vocab_size(&self) -> usize;

    fn label_posterior(&self, prefix: &[EventId]) -> Result<Vec<f64>>;
}

/// Validates a prefix against a vocabulary of `vocab_size` events.
pub fn check_prefix(prefix: &[EventId], vocab_size: usize) -> Result<()> {
    match prefix.first() {
        None => return Err(Error::InvalidSequence("empty prefix".into())),
        Some(&t) if t as usize != vocab_size => {
            return Err(Error::InvalidSequence(format!("prefix starts with {t}, not the start token {vocab_size}")))
        }
        _ => {}
    }
    for &t in &prefix[1..] {
        if t as usize >= vocab_size {
            return Err(Error::InvalidToken { token: t, vocab_size });
        }
    }
    Ok(())
}

/// Normalized excess loss `(loss - h) / (h_max - h)`, clamped at 0.
pub fn oracle_score(loss: f64, h: f64, h_max: f64) -> Result<f64> {
    if !(h_max > h) {
        return Err(Error::Degenerate(format!("maximum entropy {h_max} must exceed the process entropy {h}")));
    }
    Ok(((loss - h) / (h_max - h)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_score_examples() {
        assert_eq!(oracle_score(1.0, 1.0, 3.0).unwrap(), 0.0);
        assert_eq!(oracle_score(3.0, 1.0, 3.0).unwrap(), 1.0);
        assert_eq!(oracle_score(1.5, 1.0, 3.0).unwrap(), 0.25);
        assert_eq!(oracle_score(0.5, 1.0, 3.0).unwrap(), 0.0);
        assert!(oracle_score(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn prefix_validation() {
        assert!(check_prefix(&[4, 0, 3], 4).is_ok());
        assert!(check_prefix(&[0, 4], 4).is_err());
        assert!(check_prefix(&[4, 4], 4).is_err());
        assert!(check_prefix(&[], 4).is_err());
    }
}
