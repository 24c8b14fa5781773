//! The three graph outputs and their canonical JSON / DOT forms.
//!
//! JSON documents share one schema:
//! `{"kind": "mb"|"instance"|"summary", "nodes": [...], "edges": [{"src", "dst",
//! "cmi", "ace_mean", "ace_std", "freq"}], "meta": {...}}`. Keys are emitted in
//! sorted order and edges in sorted `(src, dst)` order, so serializing the same
//! graph always yields the same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::types::{EventId, EventSequence};

/// One event in a label's Markov boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbEdge {
    pub cmi: f64,
    pub ace_mean: f64,
    pub ace_std: f64,
    /// Only set after fusion.
    pub frequency: Option<f64>,
}

/// Per-label Markov boundaries (event parents of each label).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarkovBoundaryGraph {
    boundaries: BTreeMap<u32, BTreeMap<EventId, MbEdge>>,
    /// Labels that were analyzed (label bit set, or all labels when the input
    /// was unlabeled). `None` when unknown.
    present: Option<BTreeSet<u32>>,
    /// Labels dropped because their CMI series had zero spread.
    suppressed: BTreeSet<u32>,
}

impl MarkovBoundaryGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_present(present: impl IntoIterator<Item = u32>) -> Self {
        MarkovBoundaryGraph { present: Some(present.into_iter().collect()), ..Default::default() }
    }

    pub fn insert(&mut self, label: u32, event: EventId, edge: MbEdge) -> Result<()> {
        if !(edge.cmi >= 0.0) {
            return Err(Error::Degenerate(format!("negative cmi {} on edge {event}->{label}", edge.cmi)));
        }
        if !(-1.0..=1.0).contains(&edge.ace_mean) || !(edge.ace_std >= 0.0) {
            return Err(Error::Degenerate(format!("causal indicator out of range on edge {event}->{label}")));
        }
        self.boundaries.entry(label).or_default().insert(event, edge);
        Ok(())
    }

    pub fn suppress(&mut self, label: u32) {
        self.suppressed.insert(label);
    }

    pub fn set_present(&mut self, present: Option<BTreeSet<u32>>) {
        self.present = present;
    }

    pub fn present(&self) -> Option<&BTreeSet<u32>> {
        self.present.as_ref()
    }

    pub fn suppressed(&self) -> &BTreeSet<u32> {
        &self.suppressed
    }

    pub fn boundary(&self, label: u32) -> Option<&BTreeMap<EventId, MbEdge>> {
        self.boundaries.get(&label)
    }

    /// Event set of a label's boundary (empty if the label has none).
    pub fn boundary_set(&self, label: u32) -> BTreeSet<EventId> {
        self.boundaries.get(&label).map(|b| b.keys().copied().collect()).unwrap_or_default()
    }

    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.boundaries.keys().copied()
    }

    /// `(label, event, edge)` in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, EventId, &MbEdge)> + '_ {
        self.boundaries
            .iter()
            .flat_map(|(&l, b)| b.iter().map(move |(&e, edge)| (l, e, edge)))
    }

    pub fn edge_count(&self) -> usize {
        self.boundaries.values().map(|b| b.len()).sum()
    }

    /// Whether the label counts toward support for fusion.
    pub fn mentions_label(&self, label: u32) -> bool {
        self.present.as_ref().is_some_and(|p| p.contains(&label))
            || self.boundaries.get(&label).is_some_and(|b| !b.is_empty())
    }
}

/// DAG over time steps `0..=L`; every edge points forward in time.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTimeGraph {
    node_count: usize,
    edges: BTreeMap<(usize, usize), f64>,
}

impl InstanceTimeGraph {
    pub fn new(node_count: usize) -> Self {
        InstanceTimeGraph { node_count, edges: BTreeMap::new() }
    }

    pub fn add_edge(&mut self, src: usize, dst: usize, cmi: f64) -> Result<()> {
        if src >= dst {
            return Err(Error::Shape(format!("time edge {src}->{dst} does not point forward")));
        }
        if dst >= self.node_count {
            return Err(Error::Shape(format!("time edge {src}->{dst} outside {} nodes", self.node_count)));
        }
        self.edges.insert((src, dst), cmi);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(s, d), &c)| (s, d, c))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, src: usize, dst: usize) -> bool {
        self.edges.contains_key(&(src, dst))
    }
}

/// Type-level graph; cycles and self-loops are allowed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryGraph {
    nodes: BTreeSet<EventId>,
    edges: BTreeMap<(EventId, EventId), f64>,
}

impl SummaryGraph {
    pub fn new(nodes: impl IntoIterator<Item = EventId>) -> Self {
        SummaryGraph { nodes: nodes.into_iter().collect(), edges: BTreeMap::new() }
    }

    pub fn add_edge(&mut self, src: EventId, dst: EventId, strength: f64) {
        self.nodes.insert(src);
        self.nodes.insert(dst);
        self.edges.insert((src, dst), strength);
    }

    pub fn nodes(&self) -> &BTreeSet<EventId> {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (EventId, EventId, f64)> + '_ {
        self.edges.iter().map(|(&(s, d), &w)| (s, d, w))
    }

    pub fn edge_set(&self) -> BTreeSet<(EventId, EventId)> {
        self.edges.keys().copied().collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn strength(&self, src: EventId, dst: EventId) -> Option<f64> {
        self.edges.get(&(src, dst)).copied()
    }

    pub fn to_adjacency(&self, n: usize) -> Result<AdjacencyMatrix> {
        let mut a = AdjacencyMatrix::zeros(n);
        for &(s, d) in self.edges.keys() {
            if s as usize >= n || d as usize >= n {
                return Err(Error::Shape(format!("edge {s}->{d} outside a {n}x{n} matrix")));
            }
            a.set(s as usize, d as usize, true);
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Max,
    Mean,
}

/// Projects time edges onto event types: `u -> v` iff some edge `(t', t)` has
/// `x_{t'} = u` and `x_t = v`; strength aggregates the contributing CMIs.
pub fn project_summary(g: &InstanceTimeGraph, seq: &EventSequence, aggregate: Aggregate) -> Result<SummaryGraph> {
    let tokens = seq.tokens();
    if g.node_count() != tokens.len() {
        return Err(Error::Shape(format!(
            "instance graph has {} nodes, sequence has {} positions",
            g.node_count(),
            tokens.len()
        )));
    }
    let mut acc: BTreeMap<(EventId, EventId), (f64, f64, usize)> = BTreeMap::new();
    for (s, d, cmi) in g.edges() {
        if s == 0 {
            // the start token is never a causal candidate
            continue;
        }
        let e = acc.entry((tokens[s], tokens[d])).or_insert((f64::NEG_INFINITY, 0.0, 0));
        e.0 = e.0.max(cmi);
        e.1 += cmi;
        e.2 += 1;
    }
    let mut out = SummaryGraph::new(seq.events().iter().copied());
    for ((u, v), (max, sum, n)) in acc {
        let w = match aggregate {
            Aggregate::Max => max,
            Aggregate::Mean => sum / n as f64,
        };
        out.add_edge(u, v, w);
    }
    Ok(out)
}

/// Dense binary `n x n` adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn zeros(n: usize) -> Self {
        AdjacencyMatrix { n, bits: vec![false; n * n] }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut a = Self::zeros(n);
        for (s, d) in edges {
            if s >= n || d >= n {
                return Err(Error::Shape(format!("edge {s}->{d} outside a {n}x{n} matrix")));
            }
            a.set(s, d, true);
        }
        Ok(a)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / self.n, k % self.n))
    }
}

// ---------------------------------------------------------------------------
// Serialization

/// Any graph that can be written in the shared document schema.
pub trait GraphDocument: Sized {
    const KIND: &'static str;
    fn to_value(&self) -> Value;
    fn from_value(v: &Value) -> Result<Self>;
    fn to_dot(&self) -> String;

    fn to_json(&self) -> String {
        // serde_json's default map is ordered, so keys come out sorted
        serde_json::to_string(&self.to_value()).expect("graph values always serialize")
    }

    fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        let kind = v.get("kind").and_then(Value::as_str).unwrap_or_default();
        if kind != Self::KIND {
            return Err(Error::Shape(format!("expected a `{}` graph, found `{kind}`", Self::KIND)));
        }
        Self::from_value(&v)
    }
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

fn edge_value(src: Value, dst: Value, cmi: f64, ace_mean: Option<f64>, ace_std: Option<f64>, freq: Option<f64>) -> Value {
    let mut m = Map::new();
    m.insert("src".into(), src);
    m.insert("dst".into(), dst);
    m.insert("cmi".into(), json!(cmi));
    m.insert("ace_mean".into(), opt(ace_mean));
    m.insert("ace_std".into(), opt(ace_std));
    m.insert("freq".into(), opt(freq));
    Value::Object(m)
}

fn doc(kind: &str, nodes: Vec<Value>, edges: Vec<Value>, meta: Map<String, Value>) -> Value {
    let mut m = Map::new();
    m.insert("kind".into(), json!(kind));
    m.insert("nodes".into(), Value::Array(nodes));
    m.insert("edges".into(), Value::Array(edges));
    m.insert("meta".into(), Value::Object(meta));
    Value::Object(m)
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| Error::Shape(format!("missing field `{key}`")))
}

fn as_f64(v: &Value, key: &str) -> Result<f64> {
    field(v, key)?.as_f64().ok_or_else(|| Error::Shape(format!("field `{key}` is not a number")))
}

fn as_opt_f64(v: &Value, key: &str) -> Result<Option<f64>> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(x) => x.as_f64().map(Some).ok_or_else(|| Error::Shape(format!("field `{key}` is not a number"))),
    }
}

fn as_u64(v: &Value, key: &str) -> Result<u64> {
    field(v, key)?.as_u64().ok_or_else(|| Error::Shape(format!("field `{key}` is not an integer")))
}

fn array<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    field(v, key)?.as_array().ok_or_else(|| Error::Shape(format!("field `{key}` is not an array")))
}

fn u32_set(v: &Value) -> Result<BTreeSet<u32>> {
    v.as_array()
        .ok_or_else(|| Error::Shape("expected an array of ids".into()))?
        .iter()
        .map(|x| x.as_u64().map(|x| x as u32).ok_or_else(|| Error::Shape("expected an integer id".into())))
        .collect()
}

fn parse_prefixed(s: &Value, prefix: char) -> Result<u32> {
    let s = s.as_str().ok_or_else(|| Error::Shape("expected a string node id".into()))?;
    s.strip_prefix(prefix)
        .and_then(|rest| rest.parse().ok())
        .ok_or_else(|| Error::Shape(format!("bad node id `{s}`")))
}

fn dot_header(name: &str) -> String {
    format!("digraph {name} {{\n")
}

impl GraphDocument for MarkovBoundaryGraph {
    const KIND: &'static str = "mb";

    fn to_value(&self) -> Value {
        let mut events = BTreeSet::new();
        let mut labels: BTreeSet<u32> = self.boundaries.keys().copied().collect();
        if let Some(p) = &self.present {
            labels.extend(p.iter().copied());
        }
        let mut edges = Vec::new();
        for (label, event, e) in self.edges() {
            events.insert(event);
            edges.push(edge_value(
                json!(format!("e{event}")),
                json!(format!("y{label}")),
                e.cmi,
                Some(e.ace_mean),
                Some(e.ace_std),
                e.frequency,
            ));
        }
        let nodes = events
            .iter()
            .map(|e| json!(format!("e{e}")))
            .chain(labels.iter().map(|l| json!(format!("y{l}"))))
            .collect();
        let mut meta = Map::new();
        meta.insert("present".into(), self.present.as_ref().map_or(Value::Null, |p| json!(p)));
        meta.insert("suppressed".into(), json!(self.suppressed));
        doc(Self::KIND, nodes, edges, meta)
    }

    fn from_value(v: &Value) -> Result<Self> {
        let mut g = MarkovBoundaryGraph::new();
        if let Some(meta) = v.get("meta") {
            if let Some(p) = meta.get("present").filter(|p| !p.is_null()) {
                g.present = Some(u32_set(p)?);
            }
            if let Some(s) = meta.get("suppressed") {
                g.suppressed = u32_set(s)?;
            }
        }
        for e in array(v, "edges")? {
            let event = parse_prefixed(field(e, "src")?, 'e')?;
            let label = parse_prefixed(field(e, "dst")?, 'y')?;
            g.insert(
                label,
                event,
                MbEdge {
                    cmi: as_f64(e, "cmi")?,
                    ace_mean: as_opt_f64(e, "ace_mean")?.unwrap_or(0.0),
                    ace_std: as_opt_f64(e, "ace_std")?.unwrap_or(0.0),
                    frequency: as_opt_f64(e, "freq")?,
                },
            )?;
        }
        Ok(g)
    }

    fn to_dot(&self) -> String {
        let mut s = dot_header("mb");
        let mut labels: BTreeSet<u32> = self.boundaries.keys().copied().collect();
        if let Some(p) = &self.present {
            labels.extend(p.iter().copied());
        }
        let events: BTreeSet<EventId> = self.edges().map(|(_, e, _)| e).collect();
        for e in &events {
            let _ = writeln!(s, "  \"e{e}\";");
        }
        for l in &labels {
            let _ = writeln!(s, "  \"y{l}\" [shape=box];");
        }
        for (l, e, edge) in self.edges() {
            let _ = writeln!(s, "  \"e{e}\" -> \"y{l}\" [label=\"{:.4}\"];", edge.cmi);
        }
        s.push_str("}\n");
        s
    }
}

impl GraphDocument for InstanceTimeGraph {
    const KIND: &'static str = "instance";

    fn to_value(&self) -> Value {
        let nodes = (0..self.node_count).map(|t| json!(t)).collect();
        let edges = self
            .edges()
            .map(|(s, d, c)| edge_value(json!(s), json!(d), c, None, None, None))
            .collect();
        doc(Self::KIND, nodes, edges, Map::new())
    }

    fn from_value(v: &Value) -> Result<Self> {
        let mut g = InstanceTimeGraph::new(array(v, "nodes")?.len());
        for e in array(v, "edges")? {
            g.add_edge(as_u64(e, "src")? as usize, as_u64(e, "dst")? as usize, as_f64(e, "cmi")?)?;
        }
        Ok(g)
    }

    fn to_dot(&self) -> String {
        let mut s = dot_header("instance");
        for t in 0..self.node_count {
            let _ = writeln!(s, "  \"{t}\";");
        }
        for (a, b, c) in self.edges() {
            let _ = writeln!(s, "  \"{a}\" -> \"{b}\" [label=\"{c:.4}\"];");
        }
        s.push_str("}\n");
        s
    }
}

impl GraphDocument for SummaryGraph {
    const KIND: &'static str = "summary";

    fn to_value(&self) -> Value {
        let nodes = self.nodes.iter().map(|n| json!(n)).collect();
        let edges = self
            .edges()
            .map(|(s, d, w)| edge_value(json!(s), json!(d), w, None, None, None))
            .collect();
        doc(Self::KIND, nodes, edges, Map::new())
    }

    fn from_value(v: &Value) -> Result<Self> {
        let nodes = array(v, "nodes")?
            .iter()
            .map(|n| n.as_u64().map(|x| x as EventId).ok_or_else(|| Error::Shape("bad node id".into())))
            .collect::<Result<BTreeSet<_>>>()?;
        let mut g = SummaryGraph { nodes, edges: BTreeMap::new() };
        for e in array(v, "edges")? {
            g.add_edge(as_u64(e, "src")? as EventId, as_u64(e, "dst")? as EventId, as_f64(e, "cmi")?);
        }
        Ok(g)
    }

    fn to_dot(&self) -> String {
        let mut s = dot_header("summary");
        for n in &self.nodes {
            let _ = writeln!(s, "  \"{n}\";");
        }
        for (a, b, w) in self.edges() {
            let _ = writeln!(s, "  \"{a}\" -> \"{b}\" [label=\"{w:.4}\"];");
        }
        s.push_str("}\n");
        s
    }
}
