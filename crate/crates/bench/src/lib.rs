//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seq2cause::density::ExactOracle;
use seq2cause::scm::{generate_scm, random_label_plan, sample_sequence, LabelPlan, RuleShape, ScmParams, ScmSpec};
use seq2cause::{EventSequence, MarkovBoundaryGraph, MbEdge};

pub fn scm(vocab_size: usize, memory: usize) -> Arc<ScmSpec> {
    let params = ScmParams { vocab_size, memory, density: 2.0 / vocab_size as f64, ..Default::default() };
    Arc::new(generate_scm(&params).expect("valid parameters"))
}

pub fn oracle(spec: &Arc<ScmSpec>) -> ExactOracle {
    ExactOracle::new(spec.clone())
}

pub fn sequence(spec: &ScmSpec, len: usize) -> EventSequence {
    sample_sequence(spec, len, 1).expect("sampling succeeds")
}

pub fn plan(spec: &ScmSpec, n_labels: usize) -> LabelPlan {
    random_label_plan(&spec.vocabulary(), n_labels, 1, 3, RuleShape::Disjunction, 2).expect("valid plan")
}

/// Noisy per-sequence boundaries: each of `boundary` true parents is found
/// with probability 0.7 plus a spurious event with probability 0.1 per label.
pub fn noisy_graphs(n_graphs: usize, n_labels: u32, vocab: u32, boundary: u32) -> Vec<MarkovBoundaryGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let edge = MbEdge { cmi: 0.1, ace_mean: 0.0, ace_std: 0.0, frequency: None };
    (0..n_graphs)
        .map(|_| {
            let mut g = MarkovBoundaryGraph::with_present(0..n_labels);
            for label in 0..n_labels {
                for k in 0..boundary {
                    if rng.gen_bool(0.7) {
                        g.insert(label, (label * boundary + k) % vocab, edge).expect("finite edge");
                    }
                }
                if rng.gen_bool(0.1) {
                    g.insert(label, rng.gen_range(0..vocab), edge).expect("finite edge");
                }
            }
            g
        })
        .collect()
}
