use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EventDensityEstimator, ExactOracle};
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::scm::ScmSpec;
use crate::types::{softmax_in_place, EventId, EventSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub memory: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { memory: 2, epochs: 20, learning_rate: 0.05, batch_size: 64, seed: 0 }
    }
}

/// Maximum-likelihood fit of the lagged-softmax family. Decay is folded into
/// the lag matrices, so the fitted model is an SCM with `gamma = 1`.
#[derive(Debug, Clone)]
pub struct LaggedSoftmaxLearner {
    oracle: ExactOracle,
    loss_trace: Vec<f64>,
}

impl LaggedSoftmaxLearner {
    pub fn model(&self) -> &ScmSpec {
        self.oracle.spec()
    }

    /// Mean training NLL (nats per event) of each epoch.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    /// Mean NLL of `corpus` under the fitted model.
    pub fn evaluate_loss(&self, corpus: &[EventSequence]) -> Result<f64> {
        let seqs: Vec<&[EventId]> = corpus.iter().map(|s| s.events()).collect();
        let params = flatten(self.model());
        Ok(loss_and_grad(&params, self.model().vocab_size(), self.model().memory(), &seqs, false)?.0)
    }
}

impl EventDensityEstimator for LaggedSoftmaxLearner {
    fn vocab_size(&self) -> usize {
        self.oracle.vocab_size()
    }

    fn write_next_dist(&self, prefix: &[EventId], out: &mut [f64]) -> Result<()> {
        self.oracle.write_next_dist(prefix, out)
    }
}

fn flatten(spec: &ScmSpec) -> Vec<f64> {
    let n = spec.vocab_size();
    let mut p = spec.bias().to_vec();
    for k in 1..=spec.memory() {
        for u in 0..n as EventId {
            p.extend_from_slice(spec.weight_row(k, u));
        }
    }
    p
}

fn unflatten(params: &[f64], n: usize, m: usize, seed: u64) -> Result<ScmSpec> {
    let bias = params[..n].to_vec();
    let weights = (0..m).map(|k| params[n + k * n * n..n + (k + 1) * n * n].to_vec()).collect();
    ScmSpec::from_parts(n, m, 1.0, bias, weights, seed)
}

/// Mean next-event NLL over every step of `seqs` and, when `with_grad`, its
/// gradient. Parameters are laid out as `[bias; W1 row-major; ...; Wm]`.
pub fn loss_and_grad(params: &[f64], n: usize, m: usize, seqs: &[&[EventId]], with_grad: bool) -> Result<(f64, Vec<f64>)> {
    if params.len() != n + m * n * n {
        return Err(Error::Shape(format!("{} parameters for {n} events and memory {m}", params.len())));
    }
    let mut grad = if with_grad { vec![0.0; params.len()] } else { Vec::new() };
    let mut logits = vec![0.0; n];
    let mut steps = 0usize;
    let mut nll = 0.0;
    for seq in seqs {
        for t in 0..seq.len() {
            let y = seq[t] as usize;
            if y >= n {
                return Err(Error::InvalidToken { token: seq[t], vocab_size: n });
            }
            logits.copy_from_slice(&params[..n]);
            let lags = m.min(t);
            for k in 1..=lags {
                let off = n + (k - 1) * n * n + seq[t - k] as usize * n;
                for (l, w) in logits.iter_mut().zip(&params[off..off + n]) {
                    *l += w;
                }
            }
            softmax_in_place(&mut logits);
            nll -= logits[y].max(f64::MIN_POSITIVE).ln();
            steps += 1;
            if with_grad {
                logits[y] -= 1.0;
                for (g, d) in grad[..n].iter_mut().zip(&logits) {
                    *g += d;
                }
                for k in 1..=lags {
                    let off = n + (k - 1) * n * n + seq[t - k] as usize * n;
                    for (g, d) in grad[off..off + n].iter_mut().zip(&logits) {
                        *g += d;
                    }
                }
            }
        }
    }
    if steps == 0 {
        return Err(Error::Degenerate("corpus has no events".into()));
    }
    let scale = 1.0 / steps as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((nll * scale, grad))
}

/// Mini-batch Adam on the average NLL. Deterministic given the seed.
pub fn train_lagged_softmax(corpus: &[EventSequence], vocab_size: usize, cfg: &TrainConfig) -> Result<LaggedSoftmaxLearner> {
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if cfg.memory == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("memory, batch size and learning rate must be positive".into()));
    }
    let (n, m) = (vocab_size, cfg.memory);
    let seqs: Vec<&[EventId]> = corpus.iter().map(|s| s.events()).collect();
    let mut params = vec![0.0; n + m * n * n];
    let (mut m1, mut m2) = (vec![0.0; params.len()], vec![0.0; params.len()]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &[domain::TRAINING, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[EventId]> = chunk.iter().map(|&i| seqs[i]).collect();
            let (loss, grad) = loss_and_grad(&params, n, m, &batch, true)?;
            epoch_loss += loss;
            batches += 1;
            step += 1;
            let c1 = 1.0 - b1.powi(step);
            let c2 = 1.0 - b2.powi(step);
            for i in 0..params.len() {
                m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
                m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
                params[i] -= cfg.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
            }
        }
        let mean = epoch_loss / batches as f64;
        if !mean.is_finite() {
            return Err(Error::Degenerate(format!("training diverged at epoch {epoch}")));
        }
        loss_trace.push(mean);
    }
    let spec = unflatten(&params, n, m, cfg.seed)?;
    Ok(LaggedSoftmaxLearner { oracle: ExactOracle::new(Arc::new(spec)), loss_trace })
}
