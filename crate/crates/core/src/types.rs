//! Sequences, vocabularies and categorical distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EventId = u32;

/// Event alphabet of `size` types with ids `0..size`.
///
/// The sequence-start token is reserved one past the last event id, so it
/// never collides with an event type and is never predicted by an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    unk_id: Option<EventId>,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size >= EventId::MAX as usize {
            return Err(Error::Config(format!("vocabulary size {size} out of range")));
        }
        Ok(Vocabulary { size, unk_id: None })
    }

    pub fn with_unk(mut self, unk: EventId) -> Result<Self> {
        self.check(unk)?;
        self.unk_id = Some(unk);
        Ok(self)
    }

    /// Number of event types.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cls_id(&self) -> EventId {
        self.size as EventId
    }

    pub fn unk_id(&self) -> Option<EventId> {
        self.unk_id
    }

    pub fn contains(&self, id: EventId) -> bool {
        (id as usize) < self.size
    }

    pub fn check(&self, id: EventId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::InvalidToken { token: id, vocab_size: self.size })
        }
    }
}

/// A realization `tokens[0] = cls, tokens[1..=L]` events, with optional
/// nondecreasing timestamps starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    tokens: Vec<EventId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamps: Option<Vec<f64>>,
}

impl EventSequence {
    pub fn new(tokens: Vec<EventId>, vocab: &Vocabulary) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvalidSequence(format!(
                "need at least one event after the start token, got {} tokens",
                tokens.len()
            )));
        }
        if tokens[0] != vocab.cls_id() {
            return Err(Error::InvalidSequence(format!(
                "position 0 holds {} instead of the start token {}",
                tokens[0],
                vocab.cls_id()
            )));
        }
        for &t in &tokens[1..] {
            vocab.check(t)?;
        }
        Ok(EventSequence { tokens, timestamps: None })
    }

    /// Builds a sequence from events only, prepending the start token.
    pub fn from_events(events: &[EventId], vocab: &Vocabulary) -> Result<Self> {
        let mut tokens = Vec::with_capacity(events.len() + 1);
        tokens.push(vocab.cls_id());
        tokens.extend_from_slice(events);
        Self::new(tokens, vocab)
    }

    pub fn with_timestamps(mut self, ts: Vec<f64>) -> Result<Self> {
        if ts.len() != self.tokens.len() {
            return Err(Error::Shape(format!(
                "{} timestamps for {} tokens",
                ts.len(),
                self.tokens.len()
            )));
        }
        if ts[0] != 0.0 {
            return Err(Error::InvalidSequence("timestamps must start at 0".into()));
        }
        if ts.windows(2).any(|w| !(w[1] >= w[0])) || ts.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidSequence("timestamps must be finite and nondecreasing".into()));
        }
        self.timestamps = Some(ts);
        Ok(self)
    }

    /// All tokens including the start token.
    pub fn tokens(&self) -> &[EventId] {
        &self.tokens
    }

    pub fn events(&self) -> &[EventId] {
        &self.tokens[1..]
    }

    /// Number of events `L` (the start token is not counted).
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    /// Presence bitmap over the vocabulary, ignoring the start token.
    pub fn presence(&self, vocab_size: usize) -> Vec<bool> {
        let mut seen = vec![false; vocab_size];
        for &t in self.events() {
            if let Some(s) = seen.get_mut(t as usize) {
                *s = true;
            }
        }
        seen
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub sequence: EventSequence,
    pub labels: Vec<bool>,
}

impl LabeledSequence {
    pub fn new(sequence: EventSequence, labels: Vec<bool>, n_labels: usize) -> Result<Self> {
        if labels.len() != n_labels {
            return Err(Error::Shape(format!(
                "label vector has {} entries, label universe has {n_labels}",
                labels.len()
            )));
        }
        Ok(LabeledSequence { sequence, labels })
    }

    pub fn positive_labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(j, _)| j as u32)
    }
}

/// Probability vector over the event types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Shape("empty distribution".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Degenerate("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Degenerate(format!("probabilities sum to {total}")));
        }
        Ok(CategoricalDist { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!("weights sum to {total}")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights)
    }

    pub fn uniform(n: usize) -> Self {
        CategoricalDist { probs: vec![1.0 / n as f64; n] }
    }

    pub fn one_hot(n: usize, id: EventId) -> Self {
        let mut probs = vec![0.0; n];
        probs[id as usize] = 1.0;
        CategoricalDist { probs }
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        CategoricalDist { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: EventId) -> f64 {
        self.probs[id as usize]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> EventId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as EventId
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` past the accumulated mass; take the last supported index.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_requires_start_token() {
        let v = Vocabulary::new(3).unwrap();
        assert!(EventSequence::new(vec![0, 1], &v).is_err());
        assert!(EventSequence::new(vec![3], &v).is_err());
        assert!(EventSequence::new(vec![3, 1, 3], &v).is_err());
        let s = EventSequence::new(vec![3, 1, 2], &v).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.events(), &[1, 2]);
    }

    #[test]
    fn timestamps_validated() {
        let v = Vocabulary::new(3).unwrap();
        let s = EventSequence::from_events(&[0, 1], &v).unwrap();
        assert!(s.clone().with_timestamps(vec![0.0, 1.0, 1.0]).is_ok());
        assert!(s.clone().with_timestamps(vec![0.0, 2.0, 1.0]).is_err());
        assert!(s.clone().with_timestamps(vec![0.5, 1.0, 2.0]).is_err());
        assert!(s.with_timestamps(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn label_vector_length_checked() {
        let v = Vocabulary::new(3).unwrap();
        let s = EventSequence::from_events(&[0], &v).unwrap();
        assert!(LabeledSequence::new(s.clone(), vec![true], 2).is_err());
        let l = LabeledSequence::new(s, vec![false, true], 2).unwrap();
        assert_eq!(l.positive_labels().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn softmax_normalizes() {
        let mut l = vec![1000.0, 1000.0, -5.0];
        softmax_in_place(&mut l);
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((l[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn inverse_cdf_skips_zero_mass() {
        let p = [0.0, 0.5, 0.0, 0.5];
        assert_eq!(sample_index(&p, 0.0), 1);
        assert_eq!(sample_index(&p, 0.75), 3);
        assert_eq!(sample_index(&p, 0.999_999_999_999), 3);
    }
}
