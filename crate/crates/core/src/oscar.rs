//! Per-sequence Markov-boundary discovery for multi-label targets.
//!
//! For every sampled context particle, label posteriors are read at each
//! prefix end `i` in `[c, L]`. The CMI of event `x_{i+1}` and label `Y_j` is
//! the particle mean of `KL(p_{i+1} || p_i)`. A per-label dynamic threshold
//! over positions selects the boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{EventDensityEstimator, LabelPosteriorEstimator};
use crate::error::{Error, Result};
use crate::graph::{MarkovBoundaryGraph, MbEdge};
use crate::info::{ace, binary_kl, dynamic_threshold, sample_one_context, CmiSeries, SamplingConfig, EPS_C};
use crate::types::EventSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscarConfig {
    pub context: usize,
    pub sampling: SamplingConfig,
    /// Threshold multiplier on the CMI standard deviation.
    pub k: f64,
    pub eps_c: f64,
    /// With labeled input, analyze only labels whose bit is set.
    pub only_positive_labels: bool,
}

impl Default for OscarConfig {
    fn default() -> Self {
        OscarConfig { context: 15, sampling: SamplingConfig::default(), k: 2.75, eps_c: EPS_C, only_positive_labels: true }
    }
}

impl OscarConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        if self.context == 0 {
            return Err(Error::Config("context must be at least 1".into()));
        }
        if !(self.k >= 0.0) {
            return Err(Error::Config(format!("threshold multiplier {} must be nonnegative", self.k)));
        }
        if !(self.eps_c > 0.0 && self.eps_c < 0.5) {
            return Err(Error::Config(format!("clamp {} outside (0, 0.5)", self.eps_c)));
        }
        Ok(())
    }
}

/// Intermediate results of one sequence, for inspection and testing.
#[derive(Debug, Clone)]
pub struct OscarTrace {
    /// Positions `c..L` x analyzed labels.
    pub cmi: CmiSeries,
    /// Label ids of the series columns.
    pub labels: Vec<u32>,
    pub graph: MarkovBoundaryGraph,
}

/// Markov boundaries of the labels of one sequence.
pub fn discover(
    seq: &EventSequence,
    labels: Option<&[bool]>,
    events: &dyn EventDensityEstimator,
    posterior: &dyn LabelPosteriorEstimator,
    cfg: &OscarConfig,
) -> Result<MarkovBoundaryGraph> {
    Ok(discover_detailed(seq, labels, events, posterior, cfg)?.graph)
}

pub fn discover_detailed(
    seq: &EventSequence,
    labels: Option<&[bool]>,
    events: &dyn EventDensityEstimator,
    posterior: &dyn LabelPosteriorEstimator,
    cfg: &OscarConfig,
) -> Result<OscarTrace> {
    cfg.validate()?;
    if events.vocab_size() != posterior.vocab_size() {
        return Err(Error::Shape(format!(
            "event estimator covers {} events, label estimator {}",
            events.vocab_size(),
            posterior.vocab_size()
        )));
    }
    let tokens = seq.tokens();
    let l = seq.len();
    let c = cfg.context;
    if l < c + 2 {
        return Err(Error::InvalidSequence(format!("sequence of {l} events is shorter than context {c} + 2")));
    }
    let n_labels = posterior.n_labels();
    let targets: Vec<u32> = match labels {
        Some(bits) => {
            if bits.len() != n_labels {
                return Err(Error::Shape(format!("{} label bits for {n_labels} labels", bits.len())));
            }
            if cfg.only_positive_labels {
                (0..n_labels as u32).filter(|&j| bits[j as usize]).collect()
            } else {
                (0..n_labels as u32).collect()
            }
        }
        None => (0..n_labels as u32).collect(),
    };
    let mut graph = MarkovBoundaryGraph::with_present(targets.iter().copied());
    let n_pos = l - c;
    let nt = targets.len();
    if nt == 0 {
        let cmi = CmiSeries::new(Vec::new(), n_pos, 0, cfg.sampling.n_particles, c)?;
        return Ok(OscarTrace { cmi, labels: targets, graph });
    }

    // posts[particle][i - c][target]
    let posts: Vec<Vec<Vec<f64>>> = (0..cfg.sampling.n_particles)
        .into_par_iter()
        .map(|p| -> Result<Vec<Vec<f64>>> {
            let particle = sample_one_context(tokens, events, c, &cfg.sampling, p as u64)?;
            (c..=l)
                .map(|i| {
                    let all = posterior.label_posterior(&particle[..=i])?;
                    if all.len() != n_labels {
                        return Err(Error::Shape(format!("posterior returned {} labels, expected {n_labels}", all.len())));
                    }
                    Ok(targets.iter().map(|&j| all[j as usize].clamp(cfg.eps_c, 1.0 - cfg.eps_c)).collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let np = posts.len() as f64;
    let ceiling = binary_kl(1.0 - cfg.eps_c, cfg.eps_c);
    let mut values = vec![0.0; n_pos * nt];
    let mut with = vec![0.0; posts.len()];
    let mut without = vec![0.0; posts.len()];
    for i in 0..n_pos {
        for t in 0..nt {
            let total: f64 = posts.iter().map(|pp| binary_kl(pp[i + 1][t], pp[i][t])).sum();
            let v = total / np;
            debug_assert!(v <= ceiling + 1e-9);
            values[i * nt + t] = v.min(ceiling);
        }
    }
    let cmi = CmiSeries::new(values, n_pos, nt, posts.len(), c)?;
    let th = dynamic_threshold(&cmi, cfg.k)?;
    for (t, &label) in targets.iter().enumerate() {
        if th.std[t] == 0.0 {
            graph.suppress(label);
            continue;
        }
        for i in 0..n_pos {
            if !th.flagged(i, t) {
                continue;
            }
            for (s, pp) in posts.iter().enumerate() {
                with[s] = pp[i + 1][t];
                without[s] = pp[i][t];
            }
            let (ace_mean, ace_std) = ace(&with, &without)?;
            let value = cmi.get(i, t);
            // prefix end c + i gains event x_{c+i+1}
            let event = tokens[c + i + 1];
            let keep = graph.boundary(label).and_then(|b| b.get(&event)).is_none_or(|old| value > old.cmi);
            if keep {
                graph.insert(label, event, MbEdge { cmi: value, ace_mean, ace_std, frequency: None })?;
            }
        }
    }
    Ok(OscarTrace { cmi, labels: targets, graph })
}

/// `discover` over a dataset. Element `i` of the output equals
/// `discover(seqs[i], ...)`; errors carry the failing index.
pub fn batch_discover(
    seqs: &[EventSequence],
    labels: Option<&[Vec<bool>]>,
    events: &dyn EventDensityEstimator,
    posterior: &dyn LabelPosteriorEstimator,
    cfg: &OscarConfig,
) -> Result<Vec<MarkovBoundaryGraph>> {
    if seqs.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    if let Some(l) = labels {
        if l.len() != seqs.len() {
            return Err(Error::Shape(format!("{} label vectors for {} sequences", l.len(), seqs.len())));
        }
    }
    seqs.par_iter()
        .enumerate()
        .map(|(i, s)| {
            discover(s, labels.map(|l| l[i].as_slice()), events, posterior, cfg)
                .map_err(|e| Error::AtSequence { index: i, source: Box::new(e) })
        })
        .collect()
}
