//! Set metrics, structural distances, naive baselines and rule comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AdjacencyMatrix, MarkovBoundaryGraph};
use crate::rng::{self, domain};
use crate::rule::BooleanRule;
use crate::types::{EventId, EventSequence};

/// Largest variable count accepted by `truth_table_compare`.
pub const TRUTH_TABLE_MAX_VARS: usize = 20;

/// Confusion counts of one predicted set against one true set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn from_sets<T: Ord>(pred: &BTreeSet<T>, truth: &BTreeSet<T>) -> Self {
        let tp = pred.intersection(truth).count();
        Counts { tp, fp: pred.len() - tp, fn_: truth.len() - tp }
    }

    pub fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn scores(&self) -> Prf {
        let np = self.tp + self.fp;
        let nt = self.tp + self.fn_;
        if np == 0 && nt == 0 {
            return Prf { precision: 1.0, recall: 1.0, f1: 1.0, empty_prediction: true };
        }
        let precision = if np == 0 { 0.0 } else { self.tp as f64 / np as f64 };
        let recall = if nt == 0 { 0.0 } else { self.tp as f64 / nt as f64 };
        Prf { precision, recall, f1: harmonic(precision, recall), empty_prediction: np == 0 }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision, recall and F1. An empty prediction scores precision 0 and is
/// flagged; an empty prediction of an empty truth scores 1 throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub empty_prediction: bool,
}

impl Prf {
    pub fn from_sets<T: Ord>(pred: &BTreeSet<T>, truth: &BTreeSet<T>) -> Self {
        Counts::from_sets(pred, truth).scores()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: u32,
    /// Size of the true set.
    pub support: usize,
    pub counts: Counts,
    pub scores: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub labels: Vec<LabelMetrics>,
    pub micro: Averages,
    pub macro_: Averages,
    /// Weighted by true-set support.
    pub weighted: Averages,
    pub shd: Option<usize>,
}

impl MetricReport {
    /// Builds aggregates from per-label counts.
    pub fn from_counts(rows: impl IntoIterator<Item = (u32, usize, Counts)>) -> Self {
        let labels: Vec<LabelMetrics> = rows
            .into_iter()
            .map(|(label, support, counts)| LabelMetrics { label, support, counts, scores: counts.scores() })
            .collect();
        let mut pooled = Counts::default();
        for l in &labels {
            pooled.add(l.counts);
        }
        let m = pooled.scores();
        let micro = Averages { precision: m.precision, recall: m.recall, f1: m.f1 };
        let avg = |w: &dyn Fn(&LabelMetrics) -> f64| -> Averages {
            let total: f64 = labels.iter().map(w).sum();
            if total == 0.0 {
                return Averages { precision: 0.0, recall: 0.0, f1: 0.0 };
            }
            let f = |g: &dyn Fn(&Prf) -> f64| labels.iter().map(|l| w(l) * g(&l.scores)).sum::<f64>() / total;
            Averages { precision: f(&|s| s.precision), recall: f(&|s| s.recall), f1: f(&|s| s.f1) }
        };
        let macro_ = avg(&|_| 1.0);
        let weighted = if labels.iter().any(|l| l.support > 0) { avg(&|l| l.support as f64) } else { macro_ };
        MetricReport { labels, micro, macro_, weighted, shd: None }
    }

    /// Columns `label,support,precision,recall,f1`, then micro, macro and
    /// weighted rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,support,precision,recall,f1\n");
        for l in &self.labels {
            let _ = writeln!(s, "{},{},{},{},{}", l.label, l.support, l.scores.precision, l.scores.recall, l.scores.f1);
        }
        let total: usize = self.labels.iter().map(|l| l.support).sum();
        for (name, a) in [("micro", self.micro), ("macro", self.macro_), ("weighted", self.weighted)] {
            let _ = writeln!(s, "{name},{total},{},{},{}", a.precision, a.recall, a.f1);
        }
        s
    }
}

/// Per-label boundary recovery. The label universe is the union of the true
/// labels and the labels with predicted edges; a missing side counts as empty.
pub fn mb_metrics(pred: &MarkovBoundaryGraph, truth: &BTreeMap<u32, BTreeSet<EventId>>) -> MetricReport {
    let mut labels: BTreeSet<u32> = truth.keys().copied().collect();
    labels.extend(pred.labels().filter(|&l| pred.boundary(l).is_some_and(|b| !b.is_empty())));
    let empty = BTreeSet::new();
    MetricReport::from_counts(labels.into_iter().map(|l| {
        let t = truth.get(&l).unwrap_or(&empty);
        (l, t.len(), Counts::from_sets(&pred.boundary_set(l), t))
    }))
}

/// Sum of per-label counts over many `(prediction, truth)` pairs, reported
/// once per label.
pub fn pooled_mb_metrics<'a>(
    pairs: impl IntoIterator<Item = (&'a MarkovBoundaryGraph, &'a BTreeMap<u32, BTreeSet<EventId>>)>,
) -> MetricReport {
    let mut acc: BTreeMap<u32, (usize, Counts)> = BTreeMap::new();
    for (p, t) in pairs {
        for l in mb_metrics(p, t).labels {
            let e = acc.entry(l.label).or_default();
            e.0 += l.support;
            e.1.add(l.counts);
        }
    }
    MetricReport::from_counts(acc.into_iter().map(|(l, (s, c))| (l, s, c)))
}

/// Structural Hamming distance: L1 distance of the binary matrices.
pub fn shd(a: &AdjacencyMatrix, b: &AdjacencyMatrix) -> Result<usize> {
    if a.size() != b.size() {
        return Err(Error::Shape(format!("{0}x{0} vs {1}x{1} adjacency", a.size(), b.size())));
    }
    Ok(a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count())
}

/// Every ordered pair is an edge independently with probability `rho`.
pub fn random_baseline(vocab_size: usize, rho: f64, seed: u64) -> Result<AdjacencyMatrix> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("edge probability {rho} outside [0, 1]")));
    }
    let mut a = AdjacencyMatrix::zeros(vocab_size);
    for i in 0..vocab_size {
        for j in 0..vocab_size {
            if rng::uniform(seed, &[domain::BASELINE, i as u64, j as u64]) < rho {
                a.set(i, j, true);
            }
        }
    }
    Ok(a)
}

/// The `top_k` most frequent event types become causes of every observed
/// type. Ties break toward the smaller id.
pub fn frequency_baseline(dataset: &[EventSequence], vocab_size: usize, top_k: usize) -> Result<AdjacencyMatrix> {
    let mut counts = vec![0usize; vocab_size];
    for s in dataset {
        for &e in s.events() {
            let slot = counts
                .get_mut(e as usize)
                .ok_or(Error::InvalidToken { token: e, vocab_size })?;
            *slot += 1;
        }
    }
    let mut order: Vec<usize> = (0..vocab_size).filter(|&i| counts[i] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let observed: Vec<usize> = (0..vocab_size).filter(|&i| counts[i] > 0).collect();
    let mut a = AdjacencyMatrix::zeros(vocab_size);
    for &src in order.iter().take(top_k) {
        for &dst in &observed {
            a.set(src, dst, true);
        }
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// The curve must reach at least the threshold.
    QualityAtLeast,
    /// The curve must fall to at most the threshold.
    ErrorAtMost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cpmw {
    /// First observation count at which the curve clears the threshold.
    pub onset: Option<f64>,
    /// Trapezoidal mean of the curve from the onset to the mean length.
    pub auc: Option<f64>,
}

/// Confident predictive maintenance window of a metric curve given as
/// `(observation count, value)` points. The last value extends to `mean_len`.
pub fn cpmw(curve: &[(f64, f64)], theta: f64, direction: Direction, mean_len: f64) -> Result<Cpmw> {
    if curve.is_empty() {
        return Err(Error::Config("empty curve".into()));
    }
    if curve.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(Error::Config("curve positions must be strictly increasing".into()));
    }
    let last = curve[curve.len() - 1].0;
    if !(mean_len >= last) {
        return Err(Error::Config(format!("mean length {mean_len} precedes the last curve point {last}")));
    }
    let clears = |z: f64| match direction {
        Direction::QualityAtLeast => z >= theta,
        Direction::ErrorAtMost => z <= theta,
    };
    let Some(start) = curve.iter().position(|&(_, z)| clears(z)) else {
        return Ok(Cpmw { onset: None, auc: None });
    };
    let onset = curve[start].0;
    let mut pts: Vec<(f64, f64)> = curve[start..].to_vec();
    if mean_len > last {
        pts.push((mean_len, curve[curve.len() - 1].1));
    }
    let width = mean_len - onset;
    let auc = if width == 0.0 {
        pts[0].1
    } else {
        pts.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum::<f64>() / width
    };
    Ok(Cpmw { onset: Some(onset), auc: Some(auc) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub rows: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Compares two rules on every assignment of their joint variables, taking
/// `truth` as the reference classifier.
pub fn truth_table_compare(pred: &BooleanRule, truth: &BooleanRule) -> Result<TruthTable> {
    let vars: Vec<EventId> = pred.variables().union(&truth.variables()).copied().collect();
    if vars.len() > TRUTH_TABLE_MAX_VARS {
        return Err(Error::Config(format!(
            "{} variables exceed the truth-table cap of {TRUTH_TABLE_MAX_VARS}",
            vars.len()
        )));
    }
    let rows = 1usize << vars.len();
    let mut c = Counts::default();
    let mut tn = 0usize;
    for code in 0..rows {
        let value = |e: EventId| vars.iter().position(|&v| v == e).is_some_and(|i| code >> i & 1 == 1);
        match (pred.eval_with(&value), truth.eval_with(&value)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let s = c.scores();
    Ok(TruthTable { rows, accuracy: (c.tp + tn) as f64 / rows as f64, precision: s.precision, recall: s.recall, f1: s.f1 })
}

/// Variable-set recovery of a rule.
pub fn structural_rule_eval(pred: &BooleanRule, truth: &BooleanRule) -> MetricReport {
    let t = truth.variables();
    MetricReport::from_counts([(0, t.len(), Counts::from_sets(&pred.variables(), &t))])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::MbEdge;
    use crate::types::Vocabulary;
    use proptest::prelude::*;

    fn rule(s: &str) -> BooleanRule {
        s.parse().unwrap()
    }

    fn mb(entries: &[(u32, &[EventId])]) -> MarkovBoundaryGraph {
        let mut g = MarkovBoundaryGraph::new();
        for &(l, es) in entries {
            for &e in es {
                g.insert(l, e, MbEdge { cmi: 1.0, ace_mean: 0.0, ace_std: 0.0, frequency: None }).unwrap();
            }
        }
        g
    }

    fn truth(entries: &[(u32, &[EventId])]) -> BTreeMap<u32, BTreeSet<EventId>> {
        entries.iter().map(|&(l, es)| (l, es.iter().copied().collect())).collect()
    }

    #[test]
    fn mb_examples() {
        let r = mb_metrics(&mb(&[(0, &[1, 2]), (1, &[3])]), &truth(&[(0, &[1, 2]), (1, &[3])]));
        assert_eq!((r.micro.f1, r.macro_.f1, r.weighted.f1), (1.0, 1.0, 1.0));

        let r = mb_metrics(&mb(&[]), &truth(&[(0, &[1])]));
        let l = &r.labels[0];
        assert_eq!((l.scores.precision, l.scores.recall, l.scores.f1), (0.0, 0.0, 0.0));
        assert!(l.scores.empty_prediction);

        let r = mb_metrics(&mb(&[(0, &[0, 1])]), &truth(&[(0, &[1, 2])]));
        let s = r.labels[0].scores;
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn weighted_uses_support() {
        // label 0: 1 of 1 found; label 1: 0 of 3 found
        let r = mb_metrics(&mb(&[(0, &[1])]), &truth(&[(0, &[1]), (1, &[2, 3, 4])]));
        assert_eq!(r.macro_.recall, 0.5);
        assert_eq!(r.weighted.recall, 0.25);
        assert_eq!(r.micro.recall, 0.25);
        let csv = r.to_csv();
        assert!(csv.starts_with("label,support,precision,recall,f1\n0,1,1,1,1\n"));
        assert!(csv.contains("\nweighted,4,"));
    }

    #[test]
    fn shd_examples() {
        let a = AdjacencyMatrix::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(shd(&a, &a).unwrap(), 0);
        let b = AdjacencyMatrix::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(shd(&a, &b).unwrap(), 1);
        let mut comp = AdjacencyMatrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                comp.set(i, j, !a.get(i, j));
            }
        }
        assert_eq!(shd(&a, &comp).unwrap(), 9);
        assert!(shd(&a, &AdjacencyMatrix::zeros(4)).is_err());
    }

    #[test]
    fn random_baseline_density() {
        assert_eq!(random_baseline(30, 0.0, 1).unwrap().edge_count(), 0);
        assert_eq!(random_baseline(30, 1.0, 1).unwrap().edge_count(), 900);
        let n = 200;
        let k = random_baseline(n, 0.01, 9).unwrap().edge_count() as f64;
        let trials = (n * n) as f64;
        let sd = (trials * 0.01 * 0.99).sqrt();
        assert!((k - trials * 0.01).abs() < 3.0 * sd, "{k}");
    }

    #[test]
    fn frequency_baseline_examples() {
        let v = Vocabulary::new(4).unwrap();
        let data = vec![EventSequence::from_events(&[2, 2, 2], &v).unwrap()];
        assert_eq!(frequency_baseline(&data, 4, 0).unwrap().edge_count(), 0);
        let a = frequency_baseline(&data, 4, 1).unwrap();
        assert_eq!(a.edges().collect::<Vec<_>>(), vec![(2, 2)]);
        let data = vec![EventSequence::from_events(&[0, 1, 1, 3], &v).unwrap()];
        let a = frequency_baseline(&data, 4, 1).unwrap();
        assert_eq!(a.edges().collect::<Vec<_>>(), vec![(1, 0), (1, 1), (1, 3)]);
    }

    #[test]
    fn cpmw_examples() {
        let flat: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64, 0.9)).collect();
        let r = cpmw(&flat, 0.8, Direction::QualityAtLeast, 10.0).unwrap();
        assert_eq!(r.onset, Some(0.0));
        assert!((r.auc.unwrap() - 0.9).abs() < 1e-12);
        let ramp: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64, i as f64 / 10.0)).collect();
        let r = cpmw(&ramp, 0.5, Direction::QualityAtLeast, 10.0).unwrap();
        assert_eq!(r.onset, Some(5.0));
        // mean of a line from 0.5 to 1.0
        assert!((r.auc.unwrap() - 0.75).abs() < 1e-12);
        let r = cpmw(&ramp, 1.5, Direction::QualityAtLeast, 10.0).unwrap();
        assert_eq!(r, Cpmw { onset: None, auc: None });
        let err: Vec<(f64, f64)> = ramp.iter().map(|&(x, z)| (x, 1.0 - z)).collect();
        assert_eq!(cpmw(&err, 0.2, Direction::ErrorAtMost, 12.0).unwrap().onset, Some(8.0));
        assert!(cpmw(&ramp, 0.5, Direction::QualityAtLeast, 5.0).is_err());
    }

    #[test]
    fn truth_table_examples() {
        let t = truth_table_compare(&rule("x1|x2"), &rule("x1&x2")).unwrap();
        assert_eq!(t.accuracy, 0.5);
        assert_eq!(truth_table_compare(&rule("x1&!x3"), &rule("x1&!x3")).unwrap().accuracy, 1.0);
        let t = truth_table_compare(&rule("x1"), &rule("!x1")).unwrap();
        assert_eq!((t.rows, t.accuracy), (2, 0.0));
        let wide = BooleanRule::and((0..21).map(BooleanRule::atom));
        assert!(truth_table_compare(&wide, &rule("x1")).is_err());
    }

    #[test]
    fn structural_examples() {
        let r = structural_rule_eval(&rule("x1&x2&!x5|x3"), &rule("x1&x2&!x5|x3"));
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (1.0, 1.0, 1.0));
        let r = structural_rule_eval(&rule("x1&x2"), &rule("x3|x4"));
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (0.0, 0.0, 0.0));
    }

    fn arb_matrix(n: usize) -> impl Strategy<Value = AdjacencyMatrix> {
        prop::collection::vec(any::<bool>(), n * n).prop_map(move |bits| {
            let mut a = AdjacencyMatrix::zeros(n);
            for (k, b) in bits.into_iter().enumerate() {
                a.set(k / n, k % n, b);
            }
            a
        })
    }

    fn arb_rule() -> impl Strategy<Value = BooleanRule> {
        let leaf = (0u32..5).prop_map(BooleanRule::atom);
        leaf.prop_recursive(3, 12, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(BooleanRule::not),
                prop::collection::vec(inner.clone(), 2..3).prop_map(BooleanRule::and),
                prop::collection::vec(inner, 2..3).prop_map(BooleanRule::or),
            ]
        })
    }

    /// Pushes negations to the leaves; logically equivalent to the input.
    fn de_morgan(r: &BooleanRule, negate: bool) -> BooleanRule {
        match (r, negate) {
            (BooleanRule::Const(b), n) => BooleanRule::Const(*b != n),
            (BooleanRule::Atom(_), false) => r.clone(),
            (BooleanRule::Atom(_), true) => BooleanRule::not(r.clone()),
            (BooleanRule::Not(inner), n) => de_morgan(inner, !n),
            (BooleanRule::And(ps), false) => BooleanRule::and(ps.iter().map(|p| de_morgan(p, false))),
            (BooleanRule::And(ps), true) => BooleanRule::or(ps.iter().map(|p| de_morgan(p, true))),
            (BooleanRule::Or(ps), false) => BooleanRule::or(ps.iter().map(|p| de_morgan(p, false))),
            (BooleanRule::Or(ps), true) => BooleanRule::and(ps.iter().map(|p| de_morgan(p, true))),
        }
    }

    proptest! {
        #[test]
        fn shd_metric_axioms(a in arb_matrix(5), b in arb_matrix(5), c in arb_matrix(5)) {
            prop_assert_eq!(shd(&a, &b).unwrap(), shd(&b, &a).unwrap());
            prop_assert!(shd(&a, &c).unwrap() <= shd(&a, &b).unwrap() + shd(&b, &c).unwrap());
            prop_assert_eq!(shd(&a, &a).unwrap(), 0);
        }

        #[test]
        fn micro_equals_macro_for_identical_counts(tp in 0usize..5, fp in 0usize..5, fn_ in 0usize..5, n in 1u32..6) {
            let c = Counts { tp, fp, fn_ };
            let r = MetricReport::from_counts((0..n).map(|l| (l, tp + fn_, c)));
            prop_assert!((r.micro.f1 - r.macro_.f1).abs() < 1e-12);
        }

        #[test]
        fn truth_table_invariant_to_rewrites(p in arb_rule(), t in arb_rule()) {
            let a = truth_table_compare(&p, &t).unwrap();
            let b = truth_table_compare(&de_morgan(&p, false), &de_morgan(&t, false)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn metrics_bounded(pred in prop::collection::btree_set(0u32..10, 0..6), t in prop::collection::btree_set(0u32..10, 0..6)) {
            let s = Prf::from_sets(&pred, &t);
            for x in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}
