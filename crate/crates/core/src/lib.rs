//! Causal discovery on discrete event sequences, using any autoregressive
//! density estimator as a conditional-independence tester.
//!
//! * [`oscar`] recovers per-sequence Markov boundaries of labels.
//! * [`fusion`] merges per-sequence boundaries into a population graph.
//! * [`trace`] recovers event-to-event instance and summary graphs.
//! * [`scm`] generates synthetic processes with known ground truth.

// Validation writes `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod graph;
pub mod info;
pub mod io;
pub mod oscar;
pub mod parallel;
pub mod rng;
pub mod rule;
pub mod scm;
pub mod trace;
pub mod types;

pub use error::{Error, Result};
pub use graph::{
    project_summary, AdjacencyMatrix, Aggregate, GraphDocument, InstanceTimeGraph, MarkovBoundaryGraph, MbEdge,
    SummaryGraph,
};
pub use rule::{rule_eval, BooleanRule};
pub use types::{CategoricalDist, EventId, EventSequence, LabeledSequence, Vocabulary};
