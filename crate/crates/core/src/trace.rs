//! Event-to-event discovery within a single sequence.
//!
//! Every candidate pair `(s, d)` is tested by comparing the probability of the
//! observed `x_d` with `x_s` kept against `x_s` redrawn from the proposal.
//! Positions strictly between them are redrawn from the proposal in both
//! arms, and positions before the context length are resampled from the
//! estimator once per particle. Scores compare the two particle-averaged
//! probabilities and are reported per vocabulary entry by default.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::EventDensityEstimator;
use crate::error::{Error, Result};
use crate::graph::{project_summary, Aggregate, InstanceTimeGraph, SummaryGraph};
use crate::info::{binary_entropy, binary_kl, sample_one_context, SamplingConfig};
use crate::rng::{self, domain};
use crate::types::{EventId, EventSequence};

/// Scaling constant of the recommended threshold `C / |X|`.
pub const THRESHOLD_CONSTANT: f64 = 1.72e-2;

/// Threshold preset for the `|X| = 1000` benchmark.
pub const PRESET_TAU_1000: f64 = 3e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    Full,
    /// Lags bounded by `memory`.
    Sparse { memory: usize },
}

/// How particle probabilities are turned into a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Divergence between the particle-averaged "with" and "without"
    /// probabilities, i.e. between the two interventional marginals.
    #[default]
    Marginal,
    /// Mean over particles of the per-particle divergence.
    PerParticle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    /// Context length; `max(ceil(L / 10), 20)` when unset.
    pub context: Option<usize>,
    pub n_particles: usize,
    /// Edge threshold; `recommended_threshold(|X|)` when unset.
    pub tau: Option<f64>,
    pub variant: Variant,
    pub aggregation: Aggregation,
    /// Report scores per vocabulary entry, i.e. divided by `|X|`, the unit in
    /// which `recommended_threshold` is expressed.
    pub per_event: bool,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            context: None,
            n_particles: 128,
            tau: None,
            variant: Variant::Full,
            aggregation: Aggregation::Marginal,
            per_event: true,
            seed: 0,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::Config("need at least one particle".into()));
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("threshold {t} must be nonnegative")));
            }
        }
        if let Variant::Sparse { memory: 0 } = self.variant {
            return Err(Error::Config("sparse memory must be at least 1".into()));
        }
        Ok(())
    }

    pub fn context_for(&self, len: usize) -> usize {
        self.context.unwrap_or_else(|| len.div_ceil(10).max(20))
    }

    pub fn tau_for(&self, vocab_size: usize) -> Result<f64> {
        match self.tau {
            Some(t) => Ok(t),
            None => recommended_threshold(vocab_size),
        }
    }
}

/// Positions `(src, dst)` in token coordinates, `src < dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidatePair {
    pub src: usize,
    pub dst: usize,
}

impl CandidatePair {
    pub fn lag(&self) -> usize {
        self.dst - self.src
    }
}

/// All admissible pairs `c <= src < dst <= len`, ordered by `dst` then `src`.
pub fn enumerate_pairs(len: usize, context: usize, variant: Variant) -> Result<Vec<CandidatePair>> {
    if context >= len {
        return Err(Error::Config(format!("context {context} must be shorter than the sequence ({len})")));
    }
    let max_lag = match variant {
        Variant::Full => usize::MAX,
        Variant::Sparse { memory } => memory,
    };
    let mut out = Vec::with_capacity(pair_count(len, context, variant));
    for dst in context + 1..=len {
        let lo = context.max(dst.saturating_sub(max_lag));
        out.extend((lo..dst).map(|src| CandidatePair { src, dst }));
    }
    Ok(out)
}

/// Closed-form size of `enumerate_pairs`.
pub fn pair_count(len: usize, context: usize, variant: Variant) -> usize {
    if context >= len {
        return 0;
    }
    let n = len - context;
    match variant {
        Variant::Full => n * (n + 1) / 2,
        Variant::Sparse { memory } => {
            let m = memory.min(n);
            m * (m + 1) / 2 + (n - m) * m
        }
    }
}

/// `C / |X|`.
pub fn recommended_threshold(vocab_size: usize) -> Result<f64> {
    if vocab_size < 2 {
        return Err(Error::Config(format!("vocabulary of {vocab_size} events is too small")));
    }
    Ok(THRESHOLD_CONSTANT / vocab_size as f64)
}

/// Worst-case CMI bias of an `eps`-accurate estimator:
/// `2 d ln 2 + 2 (1 + d) h(d / (1 + d))` with `d = sqrt(eps / 2)`.
pub fn noise_floor(eps: f64) -> Result<f64> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("epsilon {eps} must be finite and nonnegative")));
    }
    let d = (eps / 2.0).sqrt();
    if d > 0.5 {
        return Err(Error::OutOfRegime(format!("sqrt(eps / 2) = {d:.4} exceeds 1/2")));
    }
    Ok(2.0 * d * std::f64::consts::LN_2 + 2.0 * (1.0 + d) * binary_entropy(d / (1.0 + d)))
}

/// Scores of one candidate pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair: CandidatePair,
    /// Lagged information gain.
    pub ig: f64,
    /// Probability-difference baseline.
    pub granger: f64,
}

/// Per-sequence scores plus work accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceScores {
    pub scores: Vec<PairScore>,
    pub context: usize,
    pub n_nodes: usize,
    /// CI-tests actually evaluated.
    pub tests: usize,
    /// Size of a batched tensor holding every intervened sequence as `u32`.
    pub particle_buffer_bytes: usize,
}

impl TraceScores {
    fn graph_by(&self, tau: f64, pick: impl Fn(&PairScore) -> f64) -> Result<InstanceTimeGraph> {
        let mut g = InstanceTimeGraph::new(self.n_nodes);
        for s in &self.scores {
            let v = pick(s);
            if s.pair.src > 0 && v >= tau {
                g.add_edge(s.pair.src, s.pair.dst, v)?;
            }
        }
        Ok(g)
    }

    pub fn instance_graph(&self, tau: f64) -> Result<InstanceTimeGraph> {
        self.graph_by(tau, |s| s.ig)
    }

    pub fn granger_graph(&self, tau: f64) -> Result<InstanceTimeGraph> {
        self.graph_by(tau, |s| s.granger)
    }
}

struct Particles {
    contexts: Vec<Vec<EventId>>,
}

impl Particles {
    fn sample(tokens: &[EventId], est: &dyn EventDensityEstimator, c: usize, cfg: &TraceConfig) -> Result<Self> {
        let n = est.vocab_size();
        let sampling = SamplingConfig { n_particles: cfg.n_particles, top_k: n, top_p: 1.0, temperature: None, seed: cfg.seed };
        let contexts = (0..cfg.n_particles)
            .into_par_iter()
            .map(|l| {
                let full = sample_one_context(tokens, est, c, &sampling, l as u64)?;
                Ok(full[..c.max(1)].to_vec())
            })
            .collect::<Result<_>>()?;
        Ok(Particles { contexts })
    }
}

/// Per-particle probabilities of the observed `x_dst` with and without `x_src`.
fn pair_probs(
    tokens: &[EventId],
    pair: CandidatePair,
    est: &dyn EventDensityEstimator,
    particles: &Particles,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = est.vocab_size();
    let CandidatePair { src, dst } = pair;
    let target = tokens[dst] as usize;
    let np = particles.contexts.len();
    let mut with = Vec::with_capacity(np);
    let mut without = Vec::with_capacity(np);
    let mut buf: Vec<EventId> = Vec::with_capacity(dst);
    let mut probs = vec![0.0; n];
    // Replacements cycle through the vocabulary from a random offset: each is
    // still uniform, but the particle average covers the vocabulary evenly.
    let offset = rng::stream(seed, &[domain::MEDIATOR, src as u64, dst as u64]).gen_range(0..n);
    for (l, ctx) in particles.contexts.iter().enumerate() {
        let mut r = rng::stream(seed, &[domain::MEDIATOR, src as u64, dst as u64, l as u64]);
        let replacement = ((offset + l) % n) as EventId;
        buf.clear();
        buf.extend_from_slice(ctx);
        buf.extend_from_slice(&tokens[ctx.len()..=src]);
        for _ in src + 1..dst {
            buf.push(r.gen_range(0..n) as EventId);
        }
        est.write_next_dist(&buf, &mut probs)?;
        with.push(probs[target]);
        buf[src] = replacement;
        est.write_next_dist(&buf, &mut probs)?;
        without.push(probs[target]);
    }
    Ok((with, without))
}

fn aggregate(with: &[f64], without: &[f64], how: Aggregation) -> (f64, f64) {
    let n = with.len() as f64;
    match how {
        Aggregation::Marginal => {
            let a = with.iter().sum::<f64>() / n;
            let b = without.iter().sum::<f64>() / n;
            (binary_kl(a, b), (a - b).abs())
        }
        Aggregation::PerParticle => {
            let kl = with.iter().zip(without).map(|(&a, &b)| binary_kl(a, b)).sum::<f64>() / n;
            let diff = with.iter().zip(without).map(|(&a, &b)| (a - b).abs()).sum::<f64>() / n;
            (kl, diff)
        }
    }
}

fn check_inputs(seq: &EventSequence, est: &dyn EventDensityEstimator, cfg: &TraceConfig) -> Result<usize> {
    cfg.validate()?;
    if let Some(&bad) = seq.events().iter().find(|&&t| t as usize >= est.vocab_size()) {
        return Err(Error::InvalidToken { token: bad, vocab_size: est.vocab_size() });
    }
    let c = cfg.context_for(seq.len());
    if c >= seq.len() {
        return Err(Error::Config(format!("context {c} must be shorter than the sequence ({})", seq.len())));
    }
    Ok(c)
}

fn score_one(
    tokens: &[EventId],
    pair: CandidatePair,
    est: &dyn EventDensityEstimator,
    particles: &Particles,
    cfg: &TraceConfig,
) -> Result<PairScore> {
    if pair.src == 0 {
        // the start token carries no information
        return Ok(PairScore { pair, ig: 0.0, granger: 0.0 });
    }
    let (with, without) = pair_probs(tokens, pair, est, particles, cfg.seed)?;
    let (ig, granger) = aggregate(&with, &without, cfg.aggregation);
    let scale = if cfg.per_event { 1.0 / est.vocab_size() as f64 } else { 1.0 };
    Ok(PairScore { pair, ig: ig * scale, granger: granger * scale })
}

fn validate_pair(seq: &EventSequence, pair: CandidatePair, c: usize) -> Result<()> {
    if !(c <= pair.src && pair.src < pair.dst && pair.dst <= seq.len()) {
        return Err(Error::Config(format!(
            "pair ({}, {}) is not admissible for length {} and context {c}",
            pair.src,
            pair.dst,
            seq.len()
        )));
    }
    Ok(())
}

/// Lagged information gain of one pair.
pub fn lagged_ig(seq: &EventSequence, pair: CandidatePair, est: &dyn EventDensityEstimator, cfg: &TraceConfig) -> Result<f64> {
    let c = check_inputs(seq, est, cfg)?;
    validate_pair(seq, pair, c)?;
    let particles = Particles::sample(seq.tokens(), est, c, cfg)?;
    Ok(score_one(seq.tokens(), pair, est, &particles, cfg)?.ig)
}

/// Probability-difference score of one pair, on the same queries as `lagged_ig`.
pub fn neural_granger_score(
    seq: &EventSequence,
    pair: CandidatePair,
    est: &dyn EventDensityEstimator,
    cfg: &TraceConfig,
) -> Result<f64> {
    let c = check_inputs(seq, est, cfg)?;
    validate_pair(seq, pair, c)?;
    let particles = Particles::sample(seq.tokens(), est, c, cfg)?;
    Ok(score_one(seq.tokens(), pair, est, &particles, cfg)?.granger)
}

/// Scores every admissible pair of a sequence.
pub fn score_pairs(seq: &EventSequence, est: &dyn EventDensityEstimator, cfg: &TraceConfig) -> Result<TraceScores> {
    let c = check_inputs(seq, est, cfg)?;
    let tokens = seq.tokens();
    let pairs = enumerate_pairs(seq.len(), c, cfg.variant)?;
    let particles = Particles::sample(tokens, est, c, cfg)?;
    let tests = AtomicUsize::new(0);
    let scores = pairs
        .par_iter()
        .map(|&pair| {
            tests.fetch_add(1, Ordering::Relaxed);
            score_one(tokens, pair, est, &particles, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let tests = tests.into_inner();
    Ok(TraceScores {
        scores,
        context: c,
        n_nodes: tokens.len(),
        tests,
        particle_buffer_bytes: tests * cfg.n_particles * tokens.len() * std::mem::size_of::<EventId>(),
    })
}

/// Time edges whose lagged information gain reaches the threshold.
pub fn discover_instance(seq: &EventSequence, est: &dyn EventDensityEstimator, cfg: &TraceConfig) -> Result<InstanceTimeGraph> {
    let tau = cfg.tau_for(est.vocab_size())?;
    score_pairs(seq, est, cfg)?.instance_graph(tau)
}

pub fn discover_summary(seq: &EventSequence, est: &dyn EventDensityEstimator, cfg: &TraceConfig) -> Result<SummaryGraph> {
    project_summary(&discover_instance(seq, est, cfg)?, seq, Aggregate::Max)
}

/// `discover_instance` over a dataset; errors carry the failing index.
pub fn batch_discover_instance(
    seqs: &[EventSequence],
    est: &dyn EventDensityEstimator,
    cfg: &TraceConfig,
) -> Result<Vec<InstanceTimeGraph>> {
    seqs.par_iter()
        .enumerate()
        .map(|(i, s)| discover_instance(s, est, cfg).map_err(|e| Error::AtSequence { index: i, source: Box::new(e) }))
        .collect()
}
