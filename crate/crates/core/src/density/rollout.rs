use std::sync::Arc;

use super::{check_prefix, EventDensityEstimator, LabelPosteriorEstimator};
use crate::error::{Error, Result};
use crate::info::EPS_C;
use crate::rng::{self, domain};
use crate::scm::LabelPlan;
use crate::types::{sample_index, EventId};

/// Label posterior as the fraction of simulated completions on which each
/// rule holds.
///
/// Completions use common random numbers: the uniform that draws position `t`
/// of rollout `r` depends only on `(seed, r, t)`. The estimate is therefore a
/// pure function of the prefix, and posteriors for consecutive prefixes are
/// strongly coupled, which keeps their difference low-variance.
pub struct RolloutPosterior {
    est: Arc<dyn EventDensityEstimator>,
    plan: LabelPlan,
    /// Total number of events in a completed sequence.
    horizon: usize,
    n_rollouts: usize,
    eps: f64,
    seed: u64,
}

impl RolloutPosterior {
    pub fn new(est: Arc<dyn EventDensityEstimator>, plan: LabelPlan, horizon: usize, n_rollouts: usize, seed: u64) -> Result<Self> {
        if n_rollouts == 0 || horizon == 0 {
            return Err(Error::Config("rollout posterior needs a positive horizon and rollout count".into()));
        }
        let vocab = crate::types::Vocabulary::new(est.vocab_size())?;
        for r in &plan.rules {
            r.validate(&vocab)?;
        }
        Ok(RolloutPosterior { est, plan, horizon, n_rollouts, eps: EPS_C, seed })
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Config(format!("clamp {eps} outside (0, 0.5)")));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn plan(&self) -> &LabelPlan {
        &self.plan
    }
}

impl LabelPosteriorEstimator for RolloutPosterior {
    fn n_labels(&self) -> usize {
        self.plan.n_labels()
    }

    fn vocab_size(&self) -> usize {
        self.est.vocab_size()
    }

    fn label_posterior(&self, prefix: &[EventId]) -> Result<Vec<f64>> {
        let n = self.est.vocab_size();
        check_prefix(prefix, n)?;
        if prefix.len() > self.horizon + 1 {
            return Err(Error::Config(format!(
                "prefix of {} events is longer than the rollout horizon {}",
                prefix.len() - 1,
                self.horizon
            )));
        }
        let mut present = vec![false; n];
        for &t in &prefix[1..] {
            present[t as usize] = true;
        }
        let mut hits = vec![0usize; self.plan.n_labels()];
        let mut tokens = Vec::with_capacity(self.horizon + 1);
        let mut probs = vec![0.0; n];
        let mut seen = present.clone();
        for r in 0..self.n_rollouts {
            tokens.clear();
            tokens.extend_from_slice(prefix);
            seen.copy_from_slice(&present);
            for t in prefix.len()..=self.horizon {
                self.est.write_next_dist(&tokens, &mut probs)?;
                let u = rng::uniform(self.seed, &[domain::ROLLOUT, r as u64, t as u64]);
                let x = sample_index(&probs, u) as EventId;
                tokens.push(x);
                seen[x as usize] = true;
            }
            for (h, rule) in hits.iter_mut().zip(&self.plan.rules) {
                if rule.eval_presence(&seen) {
                    *h += 1;
                }
            }
        }
        let lo = self.eps;
        Ok(hits
            .into_iter()
            .map(|h| (h as f64 / self.n_rollouts as f64).clamp(lo, 1.0 - lo))
            .collect())
    }
}
