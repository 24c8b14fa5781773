//! Divergences, Monte-Carlo CMI, context sampling, thresholds, ACE and PMI.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::EventDensityEstimator;
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::types::{sample_index, CategoricalDist, EventId};

/// Default label-probability clamp.
pub const EPS_C: f64 = 1e-6;

#[inline]
fn xlogy_ratio(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

/// KL divergence between Bernoulli(p) and Bernoulli(q), in nats.
#[inline]
pub fn binary_kl(p: f64, q: f64) -> f64 {
    (xlogy_ratio(p, q) + xlogy_ratio(1.0 - p, 1.0 - q)).max(0.0)
}

/// Binary entropy in nats.
#[inline]
pub fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    h(p) + h(1.0 - p)
}

/// `KL(p || q)` with `q` floored at `eps` and renormalized.
pub fn categorical_kl(p: &CategoricalDist, q: &CategoricalDist, eps: f64) -> Result<f64> {
    categorical_kl_slices(p.probs(), q.probs(), eps)
}

pub fn categorical_kl_slices(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("distributions over {} and {} events", p.len(), q.len())));
    }
    let z: f64 = q.iter().map(|&x| x.max(eps)).sum();
    let kl: f64 = p.iter().zip(q).map(|(&pi, &qi)| xlogy_ratio(pi, qi.max(eps) / z)).sum();
    Ok(kl.max(0.0))
}

pub fn entropy(p: &CategoricalDist) -> f64 {
    entropy_slice(p.probs())
}

pub fn entropy_slice(p: &[f64]) -> f64 {
    p.iter().map(|&x| if x > 0.0 { -x * x.ln() } else { 0.0 }).sum::<f64>().max(0.0)
}

/// Context-sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_particles: usize,
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: Option<f64>,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { n_particles: 68, top_k: 35, top_p: 0.8, temperature: None, seed: 0 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::Config("particle count must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("temperature {t} must be positive")));
            }
        }
        Ok(())
    }
}

/// The renormalized support that top-k / nucleus sampling draws from, in
/// descending probability order (ties by ascending id).
pub fn topk_p_support(probs: &[f64], top_k: usize, top_p: f64, temperature: Option<f64>) -> Vec<(EventId, f64)> {
    let weights: Vec<f64> = match temperature {
        Some(t) if t != 1.0 => {
            let w: Vec<f64> = probs.iter().map(|&p| if p > 0.0 { p.powf(1.0 / t) } else { 0.0 }).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        }
        _ => probs.to_vec(),
    };
    let mut order: Vec<EventId> = (0..weights.len() as EventId).collect();
    let k = top_k.min(order.len()).max(1);
    let cmp = |a: &EventId, b: &EventId| {
        weights[*b as usize].total_cmp(&weights[*a as usize]).then(a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);

    let top_mass: f64 = order.iter().map(|&i| weights[i as usize]).sum();
    let mut kept = Vec::with_capacity(order.len());
    let mut cum = 0.0;
    for (r, &i) in order.iter().enumerate() {
        let p = weights[i as usize] / top_mass;
        cum += p;
        // An entry is dropped once the running mass passes top_p; the head always stays.
        if r > 0 && cum > top_p {
            break;
        }
        kept.push((i, p));
    }
    let z: f64 = kept.iter().map(|(_, p)| p).sum();
    for e in &mut kept {
        e.1 /= z;
    }
    kept
}

/// Draws one event under top-k then nucleus filtering.
pub fn topk_p_sample<R: Rng + ?Sized>(
    dist: &CategoricalDist,
    top_k: usize,
    top_p: f64,
    temperature: Option<f64>,
    rng: &mut R,
) -> EventId {
    draw_filtered(dist.probs(), top_k, top_p, temperature, rng.gen())
}

pub(crate) fn draw_filtered(probs: &[f64], top_k: usize, top_p: f64, temperature: Option<f64>, u: f64) -> EventId {
    if top_k >= probs.len() && top_p >= 1.0 && temperature.is_none_or(|t| t == 1.0) {
        return sample_index(probs, u) as EventId;
    }
    let support = topk_p_support(probs, top_k, top_p, temperature);
    let p: Vec<f64> = support.iter().map(|s| s.1).collect();
    support[sample_index(&p, u)].0
}

/// Replaces positions `1..c` of `prefix` with autoregressive draws, once per
/// particle. Position 0 and positions `>= c` are copied from the input.
pub fn sample_context_particles(
    prefix: &[EventId],
    est: &dyn EventDensityEstimator,
    c: usize,
    cfg: &SamplingConfig,
) -> Result<Vec<Vec<EventId>>> {
    cfg.validate()?;
    if c >= prefix.len() {
        return Err(Error::Config(format!("context {c} must be shorter than the prefix ({} tokens)", prefix.len())));
    }
    (0..cfg.n_particles)
        .into_par_iter()
        .map(|l| sample_one_context(prefix, est, c, cfg, l as u64))
        .collect()
}

pub(crate) fn sample_one_context(
    prefix: &[EventId],
    est: &dyn EventDensityEstimator,
    c: usize,
    cfg: &SamplingConfig,
    particle: u64,
) -> Result<Vec<EventId>> {
    let mut rng = rng::stream(cfg.seed, &[domain::CONTEXT, particle]);
    let mut tokens = prefix.to_vec();
    let mut probs = vec![0.0; est.vocab_size()];
    for t in 1..c {
        est.write_next_dist(&tokens[..t], &mut probs)?;
        tokens[t] = draw_filtered(&probs, cfg.top_k, cfg.top_p, cfg.temperature, rng.gen());
    }
    Ok(tokens)
}

/// Particle-averaged binary KL between "with" and "without" posteriors.
pub fn cmi_estimate(with: &[f64], without: &[f64]) -> Result<f64> {
    if with.len() != without.len() || with.is_empty() {
        return Err(Error::Shape(format!("{} vs {} particle posteriors", with.len(), without.len())));
    }
    Ok(with.iter().zip(without).map(|(&a, &b)| binary_kl(a, b)).sum::<f64>() / with.len() as f64)
}

/// Particle-averaged categorical KL for event-valued targets.
pub fn cmi_estimate_categorical(with: &[CategoricalDist], without: &[CategoricalDist], eps: f64) -> Result<f64> {
    if with.len() != without.len() || with.is_empty() {
        return Err(Error::Shape(format!("{} vs {} particle posteriors", with.len(), without.len())));
    }
    let mut total = 0.0;
    for (a, b) in with.iter().zip(without) {
        total += categorical_kl(a, b, eps)?;
    }
    Ok(total / with.len() as f64)
}

/// CMI estimates laid out positions x targets, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmiSeries {
    pub values: Vec<f64>,
    pub n_positions: usize,
    pub n_targets: usize,
    pub n_particles: usize,
    /// Position of row 0.
    pub context: usize,
}

impl CmiSeries {
    pub fn new(values: Vec<f64>, n_positions: usize, n_targets: usize, n_particles: usize, context: usize) -> Result<Self> {
        if values.len() != n_positions * n_targets {
            return Err(Error::Shape(format!(
                "{} values for {n_positions} positions x {n_targets} targets",
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Degenerate("cmi estimates must be nonnegative".into()));
        }
        Ok(CmiSeries { values, n_positions, n_targets, n_particles, context })
    }

    pub fn get(&self, pos: usize, target: usize) -> f64 {
        self.values[pos * self.n_targets + target]
    }

    pub fn column(&self, target: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        (0..self.n_positions).map(move |i| self.get(i, target))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub tau: Vec<f64>,
    pub std: Vec<f64>,
    /// positions x targets, row-major.
    pub mask: Vec<bool>,
    pub n_targets: usize,
}

impl Thresholds {
    pub fn flagged(&self, pos: usize, target: usize) -> bool {
        self.mask[pos * self.n_targets + target]
    }
}

/// Mean and population standard deviation. The mean is taken around the
/// first element so that a constant series reproduces itself exactly.
pub fn mean_std(xs: impl IntoIterator<Item = f64> + Clone) -> (f64, f64) {
    let mut it = xs.clone().into_iter();
    let Some(first) = it.next() else { return (f64::NAN, f64::NAN) };
    let mut n = 1.0;
    let mut shift_sum = 0.0;
    for x in it {
        shift_sum += x - first;
        n += 1.0;
    }
    let mean = first + shift_sum / n;
    let var = xs.into_iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-target `tau = mean + k * std` over positions, flagging `cmi >= tau`.
pub fn dynamic_threshold(series: &CmiSeries, k: f64) -> Result<Thresholds> {
    if series.n_positions < 2 {
        return Err(Error::Degenerate(format!(
            "threshold needs at least 2 positions, series has {}",
            series.n_positions
        )));
    }
    let mut tau = Vec::with_capacity(series.n_targets);
    let mut std = Vec::with_capacity(series.n_targets);
    for j in 0..series.n_targets {
        let (m, s) = mean_std(series.column(j));
        // k * 0 would be NaN for infinite k
        tau.push(if s == 0.0 { m } else { m + k * s });
        std.push(s);
    }
    let mask = series
        .values
        .iter()
        .enumerate()
        .map(|(idx, &v)| v >= tau[idx % series.n_targets])
        .collect();
    Ok(Thresholds { tau, std, mask, n_targets: series.n_targets })
}

/// Mean and population std of `with - without`.
pub fn ace(with: &[f64], without: &[f64]) -> Result<(f64, f64)> {
    if with.len() != without.len() || with.is_empty() {
        return Err(Error::Shape(format!("{} vs {} particle posteriors", with.len(), without.len())));
    }
    let (m, s) = mean_std(with.iter().zip(without).map(|(a, b)| a - b));
    Ok((m.clamp(-1.0, 1.0), s))
}

/// Smoothed pointwise mutual information.
pub fn pmi(joint: f64, marg_a: f64, marg_b: f64, delta: f64) -> f64 {
    ((joint + delta) / ((marg_a + delta) * (marg_b + delta))).ln()
}
