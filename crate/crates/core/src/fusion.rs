//! Population-level fusion of per-sequence Markov-boundary graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MarkovBoundaryGraph, MbEdge};
use crate::info::pmi;
use crate::types::EventId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FusionStrategy {
    Union,
    StaticFrequency { tau: f64 },
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    pub tau_max: f64,
    pub tau_min: f64,
    /// Overrides the slope derived from the support quartiles.
    pub k: Option<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { strategy: FusionStrategy::Adaptive, tau_max: 0.5, tau_min: 0.05, k: None }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_min && self.tau_min < self.tau_max && self.tau_max <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= tau_min < tau_max <= 1, got {} and {}",
                self.tau_min, self.tau_max
            )));
        }
        if let FusionStrategy::StaticFrequency { tau } = self.strategy {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::Config(format!("static threshold {tau} outside [0, 1]")));
            }
        }
        if let Some(k) = self.k {
            if !k.is_finite() {
                return Err(Error::Config("slope override must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Counts for one `(label, event)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCount {
    pub count: usize,
    /// Graphs that mention the label.
    pub support: usize,
    pub frequency: f64,
    pub mean_cmi: f64,
    pub mean_ace: f64,
    pub mean_ace_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStats {
    pub edges: BTreeMap<(u32, EventId), EdgeCount>,
    /// `m_j` per label.
    pub support: BTreeMap<u32, usize>,
    pub n_graphs: usize,
}

/// Per-edge counts and frequencies `count / m_j`.
pub fn edge_frequency(graphs: &[MarkovBoundaryGraph]) -> Result<EdgeStats> {
    if graphs.is_empty() {
        return Err(Error::Config("nothing to fuse".into()));
    }
    let mut support: BTreeMap<u32, usize> = BTreeMap::new();
    let mut sums: BTreeMap<(u32, EventId), (usize, f64, f64, f64)> = BTreeMap::new();
    for g in graphs {
        let mut labels: BTreeSet<u32> = g.labels().filter(|&l| g.mentions_label(l)).collect();
        if let Some(p) = g.present() {
            labels.extend(p.iter().copied());
        }
        for l in labels {
            *support.entry(l).or_default() += 1;
        }
        for (l, e, edge) in g.edges() {
            let s = sums.entry((l, e)).or_default();
            s.0 += 1;
            s.1 += edge.cmi;
            s.2 += edge.ace_mean;
            s.3 += edge.ace_std;
        }
    }
    let edges = sums
        .into_iter()
        .map(|((l, e), (count, cmi, am, asd))| {
            let m = support[&l];
            let n = count as f64;
            let stats = EdgeCount {
                count,
                support: m,
                frequency: count as f64 / m as f64,
                mean_cmi: cmi / n,
                mean_ace: am / n,
                mean_ace_std: asd / n,
            };
            ((l, e), stats)
        })
        .collect();
    Ok(EdgeStats { edges, support, n_graphs: graphs.len() })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Support-dependent retention threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveThreshold {
    pub tau_max: f64,
    pub tau_min: f64,
    pub k: f64,
    pub m0: f64,
}

impl AdaptiveThreshold {
    pub fn eval(&self, m: f64) -> f64 {
        let z = self.k * (m.ln() - self.m0.ln());
        // e^z overflows to inf for huge z, which correctly yields tau_min
        (self.tau_max - self.tau_min) / (1.0 + z.exp()) + self.tau_min
    }
}

/// Logistic decay from `tau_max` to `tau_min` centred on the median support,
/// with slope `2 ln 3 / (ln q75 - ln q25)` (1 when the quartiles coincide).
pub fn adaptive_threshold_fn(supports: &[usize], tau_max: f64, tau_min: f64, k_override: Option<f64>) -> Result<AdaptiveThreshold> {
    if supports.is_empty() || supports.contains(&0) {
        return Err(Error::Config("supports must be nonempty and positive".into()));
    }
    let mut s: Vec<f64> = supports.iter().map(|&m| m as f64).collect();
    s.sort_by(f64::total_cmp);
    let m0 = quantile(&s, 0.5);
    let k = match k_override {
        Some(k) => k,
        None => {
            let (q25, q75) = (quantile(&s, 0.25), quantile(&s, 0.75));
            if q75 == q25 {
                1.0
            } else {
                2.0 * 3f64.ln() / (q75.ln() - q25.ln())
            }
        }
    };
    Ok(AdaptiveThreshold { tau_max, tau_min, k, m0 })
}

/// One row of the fusion report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionRow {
    pub label: u32,
    pub event: EventId,
    pub count: usize,
    pub support: usize,
    pub frequency: f64,
    pub tau: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub graph: MarkovBoundaryGraph,
    pub rows: Vec<FusionRow>,
    pub threshold: Option<AdaptiveThreshold>,
}

impl FusionResult {
    /// CSV with columns `label,event,count,m_j,frequency,tau_j,kept`.
    pub fn report_csv(&self) -> String {
        let mut s = String::from("label,event,count,m_j,frequency,tau_j,kept\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{},{}", r.label, r.event, r.count, r.support, r.frequency, r.tau, r.kept);
        }
        s
    }
}

pub fn fuse(graphs: &[MarkovBoundaryGraph], cfg: &FusionConfig) -> Result<MarkovBoundaryGraph> {
    Ok(fuse_detailed(graphs, cfg)?.graph)
}

pub fn fuse_detailed(graphs: &[MarkovBoundaryGraph], cfg: &FusionConfig) -> Result<FusionResult> {
    cfg.validate()?;
    let stats = edge_frequency(graphs)?;
    let threshold = match cfg.strategy {
        FusionStrategy::Adaptive => {
            let supports: Vec<usize> = stats.support.values().copied().collect();
            Some(adaptive_threshold_fn(&supports, cfg.tau_max, cfg.tau_min, cfg.k)?)
        }
        _ => None,
    };
    let present: BTreeSet<u32> = stats.support.keys().copied().collect();
    let mut graph = MarkovBoundaryGraph::with_present(present);
    let mut rows = Vec::with_capacity(stats.edges.len());
    for (&(label, event), e) in &stats.edges {
        let tau = match (cfg.strategy, &threshold) {
            (FusionStrategy::Union, _) => 0.0,
            (FusionStrategy::StaticFrequency { tau }, _) => tau,
            (FusionStrategy::Adaptive, Some(t)) => t.eval(e.support as f64),
            (FusionStrategy::Adaptive, None) => unreachable!("threshold built above"),
        };
        let kept = e.frequency >= tau;
        if kept {
            graph.insert(
                label,
                event,
                MbEdge {
                    cmi: e.mean_cmi,
                    ace_mean: e.mean_ace.clamp(-1.0, 1.0),
                    ace_std: e.mean_ace_std,
                    frequency: Some(e.frequency),
                },
            )?;
        }
        rows.push(FusionRow { label, event, count: e.count, support: e.support, frequency: e.frequency, tau, kept });
    }
    Ok(FusionResult { graph, rows, threshold })
}

/// Smoothed PMI between every pair of events that share a label's boundary
/// somewhere in the input. Keyed by `(label, a, b)` with `a < b`.
pub fn cooccurrence_pmi(graphs: &[MarkovBoundaryGraph]) -> Result<BTreeMap<(u32, EventId, EventId), f64>> {
    let stats = edge_frequency(graphs)?;
    let mut joint: BTreeMap<(u32, EventId, EventId), usize> = BTreeMap::new();
    for g in graphs {
        for label in g.labels() {
            let events: Vec<EventId> = g.boundary_set(label).into_iter().collect();
            for (i, &a) in events.iter().enumerate() {
                for &b in &events[i + 1..] {
                    *joint.entry((label, a, b)).or_default() += 1;
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for ((label, a, b), count) in joint {
        let m = stats.support[&label] as f64;
        let fa = stats.edges[&(label, a)].frequency;
        let fb = stats.edges[&(label, b)].frequency;
        out.insert((label, a, b), pmi(count as f64 / m, fa, fb, 0.5 / m));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn edge(cmi: f64) -> MbEdge {
        MbEdge { cmi, ace_mean: 0.2, ace_std: 0.1, frequency: None }
    }

    fn graph(label: u32, events: &[EventId]) -> MarkovBoundaryGraph {
        let mut g = MarkovBoundaryGraph::with_present([label]);
        for &e in events {
            g.insert(label, e, edge(0.5)).unwrap();
        }
        g
    }

    #[test]
    fn frequency_examples() {
        let gs = vec![graph(0, &[1]), graph(0, &[1]), graph(0, &[]), graph(0, &[])];
        let st = edge_frequency(&gs).unwrap();
        assert_eq!(st.edges[&(0, 1)].frequency, 0.5);
        let gs = vec![graph(0, &[1, 2]), graph(0, &[2]), graph(0, &[]), graph(0, &[])];
        let st = edge_frequency(&gs).unwrap();
        assert_eq!(st.edges[&(0, 1)].frequency, 0.25);
        assert_eq!(st.edges[&(0, 2)].frequency, 0.5);
        let gs = vec![graph(0, &[3]), graph(0, &[3])];
        assert_eq!(edge_frequency(&gs).unwrap().edges[&(0, 3)].frequency, 1.0);
        assert!(!edge_frequency(&gs).unwrap().support.contains_key(&7));
        assert!(edge_frequency(&[]).is_err());
    }

    #[test]
    fn adaptive_examples() {
        let t = adaptive_threshold_fn(&[1, 10, 100], 0.5, 0.05, None).unwrap();
        assert!((t.eval(t.m0) - 0.275).abs() < 1e-15);
        assert!((t.eval(1e300) - 0.05).abs() < 1e-12);
        // quartiles 1 and 9 -> k = 2 ln 3 / ln 9 = 1
        let t = adaptive_threshold_fn(&[1, 1, 5, 9, 9], 0.5, 0.05, None).unwrap();
        assert!((t.k - 1.0).abs() < 1e-15);
        let t = adaptive_threshold_fn(&[4, 4, 4], 0.5, 0.05, None).unwrap();
        assert_eq!(t.k, 1.0);
    }

    #[test]
    fn union_of_one_is_identity() {
        let g = graph(2, &[1, 4]);
        let f = fuse(std::slice::from_ref(&g), &FusionConfig { strategy: FusionStrategy::Union, ..Default::default() }).unwrap();
        assert_eq!(f.boundary_set(2), g.boundary_set(2));
        assert!(f.edges().all(|(_, _, e)| e.frequency == Some(1.0)));
        let again = fuse(std::slice::from_ref(&f), &FusionConfig { strategy: FusionStrategy::Union, ..Default::default() }).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn static_zero_is_union() {
        let gs = vec![graph(0, &[1, 2]), graph(0, &[2]), graph(1, &[3])];
        let u = fuse(&gs, &FusionConfig { strategy: FusionStrategy::Union, ..Default::default() }).unwrap();
        let s = fuse(&gs, &FusionConfig { strategy: FusionStrategy::StaticFrequency { tau: 0.0 }, ..Default::default() }).unwrap();
        assert_eq!(u, s);
    }

    #[test]
    fn report_columns() {
        let gs = vec![graph(0, &[1]), graph(0, &[])];
        let r = fuse_detailed(&gs, &FusionConfig::default()).unwrap();
        let csv = r.report_csv();
        assert!(csv.starts_with("label,event,count,m_j,frequency,tau_j,kept\n0,1,1,2,0.5,"));
    }

    #[test]
    fn pmi_of_co_occurring_events() {
        let gs = vec![graph(0, &[1, 2]), graph(0, &[1, 2]), graph(0, &[]), graph(0, &[])];
        let p = cooccurrence_pmi(&gs).unwrap();
        // joint 0.5, marginals 0.5, delta 1/8
        let want = (0.625f64 / (0.625 * 0.625)).ln();
        assert!((p[&(0, 1, 2)] - want).abs() < 1e-12);
    }

    #[test]
    fn noise_simulation_recovers_truth() {
        // true edges detected at 0.7, spurious at 0.1, over 200 graphs
        let truth: Vec<EventId> = vec![1, 2, 3];
        let mut r = rng::stream(5, &[]);
        let gs: Vec<MarkovBoundaryGraph> = (0..200)
            .map(|_| {
                let mut g = MarkovBoundaryGraph::with_present([0]);
                for e in 0..30 {
                    let p = if truth.contains(&e) { 0.7 } else { 0.1 };
                    if r.gen::<f64>() < p {
                        g.insert(0, e, edge(0.3)).unwrap();
                    }
                }
                g
            })
            .collect();
        let f = fuse(&gs, &FusionConfig::default()).unwrap();
        assert_eq!(f.boundary_set(0).into_iter().collect::<Vec<_>>(), truth);
    }

    fn arb_graphs() -> impl Strategy<Value = Vec<MarkovBoundaryGraph>> {
        prop::collection::vec(
            (0u32..3, prop::collection::btree_set(0u32..8, 0..5)).prop_map(|(l, es)| {
                graph(l, &es.into_iter().collect::<Vec<_>>())
            }),
            1..30,
        )
    }

    proptest! {
        #[test]
        fn nested_thresholds(gs in arb_graphs(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let set = |s: FusionStrategy| -> BTreeSet<(u32, EventId)> {
                fuse(&gs, &FusionConfig { strategy: s, ..Default::default() }).unwrap().edges().map(|(l, e, _)| (l, e)).collect()
            };
            let u = set(FusionStrategy::Union);
            let sl = set(FusionStrategy::StaticFrequency { tau: lo });
            let sh = set(FusionStrategy::StaticFrequency { tau: hi });
            prop_assert!(sl.is_subset(&u));
            prop_assert!(sh.is_subset(&sl));
        }

        #[test]
        fn adaptive_monotone_and_bounded(s in prop::collection::vec(1usize..500, 1..40), m in 1.0f64..1000.0, dm in 0.0f64..100.0) {
            let t = adaptive_threshold_fn(&s, 0.5, 0.05, None).unwrap();
            let (a, b) = (t.eval(m), t.eval(m + dm));
            prop_assert!(b <= a + 1e-15);
            prop_assert!((0.05..=0.5).contains(&a));
        }

        #[test]
        fn union_idempotent(gs in arb_graphs()) {
            let cfg = FusionConfig { strategy: FusionStrategy::Union, ..Default::default() };
            let f = fuse(&gs, &cfg).unwrap();
            let again = fuse(std::slice::from_ref(&f), &cfg).unwrap();
            let set = |g: &MarkovBoundaryGraph| g.edges().map(|(l, e, x)| (l, e, x.cmi.to_bits())).collect::<Vec<_>>();
            prop_assert_eq!(set(&again), set(&f));
        }
    }
}
