//! End-to-end benchmark loops on synthetic processes: generate, estimate,
//! discover, score.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{CalibrationConfig, EventDensityEstimator, ExactOracle, PerturbedOracle, RolloutPosterior};
use crate::error::{Error, Result};
use crate::eval::{frequency_baseline, mb_metrics, random_baseline, Prf};
use crate::fusion::{fuse, FusionConfig, FusionStrategy};
use crate::graph::{project_summary, AdjacencyMatrix, Aggregate, MarkovBoundaryGraph, MbEdge};
use crate::oscar::{batch_discover, OscarConfig};
use crate::rng::{self, domain};
use crate::scm::{
    entropy_stats, generate_scm, ground_truth_graph, plant_labels, random_label_plan, sample_dataset, GroundTruthConfig,
    tune_weight_scale, RuleShape, ScmParams, ScmSpec,
};
use crate::trace::{recommended_threshold, score_pairs, TraceConfig, Variant};
use crate::types::{EventId, EventSequence};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleKind {
    #[default]
    Exact,
    /// Mixture with the uniform law, calibrated to a mean per-step KL.
    Perturbed { eps: f64 },
}

/// Estimator over `spec` and, for perturbed oracles, the realized KL.
pub fn build_estimator(
    spec: Arc<ScmSpec>,
    kind: OracleKind,
    calibration: &CalibrationConfig,
) -> Result<(Arc<dyn EventDensityEstimator>, Option<f64>)> {
    Ok(match kind {
        OracleKind::Exact => (Arc::new(ExactOracle::new(spec)), None),
        OracleKind::Perturbed { eps } => {
            let p = PerturbedOracle::calibrate(spec, eps, calibration)?;
            let r = p.realized_eps();
            (Arc::new(p), r)
        }
    })
}

/// Type edges `x_s -> x_d` over admissible pairs of `seq` whose types are
/// adjacent in the ground truth.
pub fn unrolled_truth(truth: &AdjacencyMatrix, seq: &EventSequence, context: usize, max_lag: usize) -> BTreeSet<(EventId, EventId)> {
    let t = seq.tokens();
    let mut out = BTreeSet::new();
    for d in context.max(1) + 1..t.len() {
        for s in d.saturating_sub(max_lag).max(context.max(1))..d {
            if truth.get(t[s] as usize, t[d] as usize) {
                out.insert((t[s], t[d]));
            }
        }
    }
    out
}

fn restrict(a: &AdjacencyMatrix, nodes: &BTreeSet<EventId>) -> BTreeSet<(EventId, EventId)> {
    a.edges()
        .map(|(i, j)| (i as EventId, j as EventId))
        .filter(|(i, j)| nodes.contains(i) && nodes.contains(j))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceBenchConfig {
    pub scm: ScmParams,
    pub seq_len: usize,
    /// Sequences scored per run.
    pub n_sequences: usize,
    pub trace: TraceConfig,
    pub truth: GroundTruthConfig,
    pub oracle: OracleKind,
    pub calibration: CalibrationConfig,
    pub random_rho: f64,
    pub frequency_top_k: usize,
    /// Rescale the SCM weights of every run to this redundancy, so that runs
    /// at different vocabulary sizes are comparable.
    pub match_redundancy: Option<f64>,
}

impl Default for TraceBenchConfig {
    fn default() -> Self {
        TraceBenchConfig {
            scm: ScmParams::default(),
            seq_len: 64,
            n_sequences: 10,
            trace: TraceConfig { variant: Variant::Sparse { memory: 6 }, ..Default::default() },
            truth: GroundTruthConfig::default(),
            oracle: OracleKind::Exact,
            calibration: CalibrationConfig::default(),
            random_rho: 0.01,
            frequency_top_k: 5,
            match_redundancy: None,
        }
    }
}

/// One benchmark run; metrics are means over the run's sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceBenchRow {
    pub seed: u64,
    pub vocab_size: usize,
    pub redundancy: f64,
    pub realized_eps: Option<f64>,
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shd: f64,
    pub granger_precision: f64,
    pub granger_recall: f64,
    pub granger_f1: f64,
    pub random_f1: f64,
    pub frequency_f1: f64,
    pub tests: usize,
    pub particle_buffer_bytes: usize,
    pub wall_seconds: f64,
}

impl TraceBenchRow {
    pub const COLUMNS: [&'static str; 16] = [
        "seed",
        "vocab_size",
        "redundancy",
        "realized_eps",
        "tau",
        "precision",
        "recall",
        "f1",
        "shd",
        "granger_precision",
        "granger_recall",
        "granger_f1",
        "random_f1",
        "frequency_f1",
        "tests",
        "peak_particle_buffer_bytes",
    ];

    pub fn values(&self) -> [f64; 16] {
        [
            self.seed as f64,
            self.vocab_size as f64,
            self.redundancy,
            self.realized_eps.unwrap_or(0.0),
            self.tau,
            self.precision,
            self.recall,
            self.f1,
            self.shd,
            self.granger_precision,
            self.granger_recall,
            self.granger_f1,
            self.random_f1,
            self.frequency_f1,
            self.tests as f64,
            self.particle_buffer_bytes as f64,
        ]
    }
}

pub fn run_trace_bench(cfg: &TraceBenchConfig, seed: u64) -> Result<TraceBenchRow> {
    let start = Instant::now();
    if cfg.n_sequences == 0 {
        return Err(Error::Config("benchmark needs at least one sequence".into()));
    }
    let params = ScmParams { seed, ..cfg.scm };
    let params = match cfg.match_redundancy {
        Some(r) => tune_weight_scale(&params, r, 0.01, 32, 32)?.0,
        None => params,
    };
    let spec = Arc::new(generate_scm(&params)?);
    let n = spec.vocab_size();
    let memory = spec.memory();
    let ent = entropy_stats(&spec, 32, 32, seed)?;
    let truth = ground_truth_graph(&spec, &GroundTruthConfig { seed, ..cfg.truth })?;
    let (est, realized_eps) = build_estimator(spec.clone(), cfg.oracle, &CalibrationConfig { seed, ..cfg.calibration })?;
    let data = sample_dataset(&spec, cfg.n_sequences, cfg.seq_len, rng::mix(seed, &[domain::SCM_SAMPLE]))?;
    let tcfg = TraceConfig { seed, ..cfg.trace };
    let tau = tcfg.tau_for(n)?;
    let random = random_baseline(n, cfg.random_rho, seed)?;
    let freq = frequency_baseline(&data, n, cfg.frequency_top_k)?;

    struct PerSeq {
        trace: Prf,
        granger: Prf,
        random: Prf,
        freq: Prf,
        shd: usize,
        tests: usize,
        bytes: usize,
    }
    let per: Vec<PerSeq> = data
        .par_iter()
        .map(|seq| -> Result<PerSeq> {
            let scores = score_pairs(seq, est.as_ref(), &tcfg)?;
            let t = unrolled_truth(&truth.adjacency, seq, scores.context, memory);
            let nodes: BTreeSet<EventId> = seq.events().iter().copied().collect();
            let pred = project_summary(&scores.instance_graph(tau)?, seq, Aggregate::Max)?.edge_set();
            let granger = project_summary(&scores.granger_graph(tau)?, seq, Aggregate::Max)?.edge_set();
            Ok(PerSeq {
                trace: Prf::from_sets(&pred, &t),
                granger: Prf::from_sets(&granger, &t),
                random: Prf::from_sets(&restrict(&random, &nodes), &t),
                freq: Prf::from_sets(&restrict(&freq, &nodes), &t),
                shd: pred.symmetric_difference(&t).count(),
                tests: scores.tests,
                bytes: scores.particle_buffer_bytes,
            })
        })
        .collect::<Result<_>>()?;
    let k = per.len() as f64;
    let mean = |f: &dyn Fn(&PerSeq) -> f64| per.iter().map(f).sum::<f64>() / k;
    Ok(TraceBenchRow {
        seed,
        vocab_size: n,
        redundancy: ent.redundancy,
        realized_eps,
        tau,
        precision: mean(&|p| p.trace.precision),
        recall: mean(&|p| p.trace.recall),
        f1: mean(&|p| p.trace.f1),
        shd: mean(&|p| p.shd as f64),
        granger_precision: mean(&|p| p.granger.precision),
        granger_recall: mean(&|p| p.granger.recall),
        granger_f1: mean(&|p| p.granger.f1),
        random_f1: mean(&|p| p.random.f1),
        frequency_f1: mean(&|p| p.freq.f1),
        tests: per.iter().map(|p| p.tests).sum(),
        particle_buffer_bytes: per.iter().map(|p| p.bytes).max().unwrap_or(0),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Population mean and std of each column.
pub fn column_stats<const N: usize>(rows: &[[f64; N]]) -> [(f64, f64); N] {
    let mut out = [(0.0, 0.0); N];
    if rows.is_empty() {
        return out;
    }
    for (c, slot) in out.iter_mut().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        *slot = crate::info::mean_std(col.iter().copied());
    }
    out
}

/// Per-run rows followed by one `mean±std` row. The first column is the
/// configuration hash. Wall time is left out so reruns are byte-identical.
pub fn trace_bench_csv(rows: &[TraceBenchRow], config_hash: &str) -> String {
    let vals: Vec<[f64; 16]> = rows.iter().map(|r| r.values()).collect();
    rows_csv(&TraceBenchRow::COLUMNS, &vals, config_hash)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscarBenchConfig {
    pub scm: ScmParams,
    pub n_labels: usize,
    pub min_vars: usize,
    pub max_vars: usize,
    pub rule_shape: RuleShape,
    pub n_sequences: usize,
    pub seq_len: usize,
    /// Completions per label-posterior query.
    pub n_rollouts: usize,
    pub oscar: OscarConfig,
    pub fusion: FusionConfig,
}

impl Default for OscarBenchConfig {
    fn default() -> Self {
        OscarBenchConfig {
            scm: ScmParams { vocab_size: 50, weight_scale: 2.0, ..Default::default() },
            n_labels: 20,
            min_vars: 1,
            max_vars: 4,
            rule_shape: RuleShape::Disjunction,
            n_sequences: 200,
            seq_len: 40,
            n_rollouts: 32,
            oscar: OscarConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

/// Support-weighted metrics. Sample-level values are means over the scored
/// sequences.
///
/// Two references are used. The identifiable boundary of a positive label in
/// one sequence is its rule variables observed after the context region, the
/// only positions OSCAR can flag; labels with none are skipped. The rule
/// boundary is all rule variables and is the reference for fused graphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscarBenchRow {
    pub seed: u64,
    pub n_sequences: usize,
    /// Sequences with a positive label whose identifiable boundary is nonempty.
    pub n_scored: usize,
    pub sample_precision: f64,
    pub sample_recall: f64,
    pub sample_f1: f64,
    pub sample_rule_precision: f64,
    pub sample_rule_recall: f64,
    pub sample_rule_f1: f64,
    pub fused_precision: f64,
    pub fused_recall: f64,
    pub fused_f1: f64,
    pub union_precision: f64,
    pub union_recall: f64,
    pub union_f1: f64,
    pub wall_seconds: f64,
}

impl OscarBenchRow {
    pub const COLUMNS: [&'static str; 15] = [
        "seed",
        "n_sequences",
        "n_scored",
        "sample_precision",
        "sample_recall",
        "sample_f1",
        "sample_rule_precision",
        "sample_rule_recall",
        "sample_rule_f1",
        "fused_precision",
        "fused_recall",
        "fused_f1",
        "union_precision",
        "union_recall",
        "union_f1",
    ];

    pub fn values(&self) -> [f64; 15] {
        [
            self.seed as f64,
            self.n_sequences as f64,
            self.n_scored as f64,
            self.sample_precision,
            self.sample_recall,
            self.sample_f1,
            self.sample_rule_precision,
            self.sample_rule_recall,
            self.sample_rule_f1,
            self.fused_precision,
            self.fused_recall,
            self.fused_f1,
            self.union_precision,
            self.union_recall,
            self.union_f1,
        ]
    }
}

/// Benchmark row together with the per-sequence and fused graphs.
pub struct OscarBenchRun {
    pub row: OscarBenchRow,
    pub graphs: Vec<MarkovBoundaryGraph>,
    pub fused: MarkovBoundaryGraph,
}

#[derive(Default)]
struct PrfSum {
    p: f64,
    r: f64,
    f1: f64,
    n: usize,
}

impl PrfSum {
    fn add(&mut self, g: &MarkovBoundaryGraph, truth: &BTreeMap<u32, BTreeSet<EventId>>) {
        let w = mb_metrics(g, truth).weighted;
        self.p += w.precision;
        self.r += w.recall;
        self.f1 += w.f1;
        self.n += 1;
    }

    fn mean(&self) -> (f64, f64, f64) {
        let k = self.n.max(1) as f64;
        (self.p / k, self.r / k, self.f1 / k)
    }
}

pub fn run_oscar_bench(cfg: &OscarBenchConfig, seed: u64) -> Result<OscarBenchRun> {
    let start = Instant::now();
    let spec = Arc::new(generate_scm(&ScmParams { seed, ..cfg.scm })?);
    let vocab = spec.vocabulary();
    let plan = random_label_plan(&vocab, cfg.n_labels, cfg.min_vars, cfg.max_vars, cfg.rule_shape, seed)?;
    let data = sample_dataset(&spec, cfg.n_sequences, cfg.seq_len, rng::mix(seed, &[domain::SCM_SAMPLE]))?;
    let labeled = plant_labels(&plan, &data, &vocab)?;
    let est: Arc<dyn EventDensityEstimator> = Arc::new(ExactOracle::new(spec.clone()));
    let post = RolloutPosterior::new(est.clone(), plan.clone(), cfg.seq_len, cfg.n_rollouts, seed)?;
    let ocfg = OscarConfig { sampling: crate::info::SamplingConfig { seed, ..cfg.oscar.sampling }, ..cfg.oscar };
    let seqs: Vec<EventSequence> = labeled.iter().map(|l| l.sequence.clone()).collect();
    let bits: Vec<Vec<bool>> = labeled.iter().map(|l| l.labels.clone()).collect();
    let graphs = batch_discover(&seqs, Some(&bits), est.as_ref(), &post, &ocfg)?;

    let c = ocfg.context;
    let (mut ident, mut rule) = (PrfSum::default(), PrfSum::default());
    let mut all_labels = BTreeSet::new();
    for (g, l) in graphs.iter().zip(&labeled) {
        let observed: BTreeSet<EventId> = l.sequence.tokens()[c + 1..].iter().copied().collect();
        let full: BTreeMap<u32, BTreeSet<EventId>> = l.positive_labels().map(|j| (j, plan.boundary(j as usize))).collect();
        let t: BTreeMap<u32, BTreeSet<EventId>> = full
            .iter()
            .map(|(&j, b)| (j, b.intersection(&observed).copied().collect::<BTreeSet<_>>()))
            .filter(|(_, b)| !b.is_empty())
            .collect();
        if full.is_empty() {
            continue;
        }
        all_labels.extend(full.keys().copied());
        rule.add(g, &full);
        if !t.is_empty() {
            ident.add(g, &t);
        }
    }
    if ident.n == 0 {
        return Err(Error::Degenerate("no sequence has a positive label with an identifiable boundary".into()));
    }
    let truth: BTreeMap<u32, BTreeSet<EventId>> =
        all_labels.into_iter().map(|j| (j, plan.boundary(j as usize))).collect();
    let fused = fuse(&graphs, &cfg.fusion)?;
    let fr = mb_metrics(&fused, &truth).weighted;
    let union = fuse(&graphs, &FusionConfig { strategy: FusionStrategy::Union, ..cfg.fusion })?;
    let ur = mb_metrics(&union, &truth).weighted;
    let (sp, sr, sf) = ident.mean();
    let (rp, rr, rf) = rule.mean();
    Ok(OscarBenchRun {
        row: OscarBenchRow {
            seed,
            n_sequences: graphs.len(),
            n_scored: ident.n,
            sample_precision: sp,
            sample_recall: sr,
            sample_f1: sf,
            sample_rule_precision: rp,
            sample_rule_recall: rr,
            sample_rule_f1: rf,
            fused_precision: fr.precision,
            fused_recall: fr.recall,
            fused_f1: fr.f1,
            union_precision: ur.precision,
            union_recall: ur.recall,
            union_f1: ur.f1,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        graphs,
        fused,
    })
}

pub fn oscar_bench_csv(rows: &[OscarBenchRow], config_hash: &str) -> String {
    let vals: Vec<[f64; 15]> = rows.iter().map(|r| r.values()).collect();
    rows_csv(&OscarBenchRow::COLUMNS, &vals, config_hash)
}

pub fn rows_csv<const N: usize>(columns: &[&str; N], vals: &[[f64; N]], config_hash: &str) -> String {
    let mut s = format!("config_hash,{}\n", columns.join(","));
    for v in vals {
        let cells: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "{config_hash},{}", cells.join(","));
    }
    let cells: Vec<String> = column_stats(vals).iter().skip(1).map(|(m, sd)| format!("{m:.6}±{sd:.6}")).collect();
    let _ = writeln!(s, "{config_hash},mean±std,{}", cells.join(","));
    s
}

/// Bernoulli model of imperfect per-sequence tests: each label's true
/// boundary events are detected with `detect` and every other event with
/// `spurious`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSimConfig {
    pub n_graphs: usize,
    pub n_labels: usize,
    pub vocab_size: usize,
    pub boundary_size: usize,
    pub detect: f64,
    pub spurious: f64,
    /// Probability that a graph carries a given label.
    pub label_rate: f64,
    pub seed: u64,
}

impl Default for FusionSimConfig {
    fn default() -> Self {
        FusionSimConfig {
            n_graphs: 200,
            n_labels: 5,
            vocab_size: 30,
            boundary_size: 3,
            detect: 0.7,
            spurious: 0.1,
            label_rate: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionSimResult {
    pub truth: BTreeMap<u32, BTreeSet<EventId>>,
    pub union: Prf,
    pub adaptive: Prf,
    /// Weighted metrics averaged over the input graphs.
    pub sample: Prf,
}

pub fn simulate_fusion_noise(cfg: &FusionSimConfig, fusion: &FusionConfig) -> Result<FusionSimResult> {
    if cfg.boundary_size > cfg.vocab_size || cfg.n_graphs == 0 || cfg.n_labels == 0 {
        return Err(Error::Config("simulation sizes are inconsistent".into()));
    }
    let mut r = rng::stream(cfg.seed, &[domain::SIMULATION]);
    let truth: BTreeMap<u32, BTreeSet<EventId>> = (0..cfg.n_labels as u32)
        .map(|j| (j, index::sample(&mut r, cfg.vocab_size, cfg.boundary_size).into_iter().map(|e| e as EventId).collect()))
        .collect();
    let mut graphs = Vec::with_capacity(cfg.n_graphs);
    let mut sample = (0.0, 0.0, 0.0);
    for _ in 0..cfg.n_graphs {
        let present: Vec<u32> = (0..cfg.n_labels as u32).filter(|_| r.gen::<f64>() < cfg.label_rate).collect();
        let mut g = MarkovBoundaryGraph::with_present(present.iter().copied());
        for &j in &present {
            for e in 0..cfg.vocab_size as EventId {
                let p = if truth[&j].contains(&e) { cfg.detect } else { cfg.spurious };
                if r.gen::<f64>() < p {
                    g.insert(j, e, MbEdge { cmi: 1.0, ace_mean: 0.0, ace_std: 0.0, frequency: None })?;
                }
            }
        }
        let t: BTreeMap<u32, BTreeSet<EventId>> = present.iter().map(|&j| (j, truth[&j].clone())).collect();
        let m = mb_metrics(&g, &t).weighted;
        sample.0 += m.precision;
        sample.1 += m.recall;
        sample.2 += m.f1;
        graphs.push(g);
    }
    let score = |g: &MarkovBoundaryGraph| {
        let w = mb_metrics(g, &truth).weighted;
        Prf { precision: w.precision, recall: w.recall, f1: w.f1, empty_prediction: g.edge_count() == 0 }
    };
    let union = score(&fuse(&graphs, &FusionConfig { strategy: FusionStrategy::Union, ..*fusion })?);
    let adaptive = score(&fuse(&graphs, fusion)?);
    let k = cfg.n_graphs as f64;
    Ok(FusionSimResult {
        truth,
        union,
        adaptive,
        sample: Prf { precision: sample.0 / k, recall: sample.1 / k, f1: sample.2 / k, empty_prediction: false },
    })
}

/// Default threshold for a vocabulary, exposed for reporting.
pub fn default_tau(vocab_size: usize) -> Result<f64> {
    recommended_threshold(vocab_size)
}
