use std::collections::{BTreeMap, BTreeSet};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use seq2cause::density::{
    serve_bridge, train_lagged_softmax, BridgeEstimator, EventDensityEstimator, ExactOracle, LabelPosteriorEstimator,
    RolloutPosterior,
};
use seq2cause::eval::{mb_metrics, pooled_mb_metrics, Counts, MetricReport};
use seq2cause::experiment::{
    build_estimator, oscar_bench_csv, rows_csv, run_oscar_bench, run_trace_bench, simulate_fusion_noise,
    trace_bench_csv,
};
use seq2cause::fusion::{fuse_detailed, FusionStrategy};
use seq2cause::io::{read_dataset, write_labeled, write_sequences, DatasetRecord};
use seq2cause::oscar::batch_discover;
use seq2cause::parallel::with_workers;
use seq2cause::scm::{generate_scm, plant_labels, random_label_plan, sample_dataset, LabelPlan, ScmSpec};
use seq2cause::trace::{score_pairs, Variant};
use seq2cause::{
    project_summary, BooleanRule, EventId, EventSequence, GraphDocument, InstanceTimeGraph, MarkovBoundaryGraph,
    SummaryGraph, Vocabulary,
};

use crate::config::{BenchKind, DensityKind, ExperimentConfig, Run};
use crate::{
    BenchArgs, BenchKindArg, Cli, CliError, Command, DensityArgs, EstimatorArg, EvalArgs, FuseArgs, OscarArgs,
    PlantArgs, SampleArgs, ScmFlags, ServeArgs, StrategyArg, TraceArgs, VariantArg,
};

type CliResult<T = ()> = Result<T, CliError>;

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(anyhow::anyhow!("{msg}"))
}

pub fn run(cli: Cli) -> CliResult {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.out_dir {
        cfg.io.out_dir = d;
    }
    cfg.resolve_seeds();
    with_workers(cli.workers, move || dispatch(cli.command, cfg))?
}

fn dispatch(cmd: Command, mut cfg: ExperimentConfig) -> CliResult {
    match cmd {
        Command::GenScm(f) => gen_scm(&f, &mut cfg),
        Command::Sample(a) => sample(&a, &mut cfg),
        Command::PlantLabels(a) => plant(&a, &mut cfg),
        Command::DiscoverOscar(a) => discover_oscar(&a, &mut cfg),
        Command::Fuse(a) => fuse(&a, &mut cfg),
        Command::DiscoverTrace(a) => discover_trace(&a, &mut cfg),
        Command::Eval(a) => eval(&a, &mut cfg),
        Command::Bench(a) => bench(&a, &mut cfg),
        Command::Serve(a) => serve(&a),
    }
}

fn report(path: &Path) {
    println!("{}", path.display());
}

fn apply_scm_flags(f: &ScmFlags, cfg: &mut ExperimentConfig) {
    let s = &mut cfg.scm;
    s.vocab_size = f.vocab.unwrap_or(s.vocab_size);
    s.memory = f.memory.unwrap_or(s.memory);
    s.density = f.density.unwrap_or(s.density);
    s.gamma = f.decay.unwrap_or(s.gamma);
    s.weight_scale = f.weight_scale.unwrap_or(s.weight_scale);
    s.bias_scale = f.bias_scale.unwrap_or(s.bias_scale);
}

fn read_scm(path: &Path) -> CliResult<ScmSpec> {
    let f = std::fs::File::open(path).map_err(|e| runtime(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn read_plan(path: &Path, vocab: &Vocabulary) -> CliResult<LabelPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("cannot open {}: {e}", path.display())))?;
    let plan: LabelPlan = serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(LabelPlan::new(plan.rules, vocab)?)
}

fn read_records(path: &Path, vocab: &Vocabulary) -> CliResult<Vec<DatasetRecord>> {
    let f = std::fs::File::open(path).map_err(|e| runtime(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(BufReader::new(f), vocab).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn gen_scm(f: &ScmFlags, cfg: &mut ExperimentConfig) -> CliResult {
    apply_scm_flags(f, cfg);
    let spec = generate_scm(&cfg.scm)?;
    let run = Run::new("gen-scm", cfg, &[])?;
    report(&run.write("scm", "json", serde_json::to_string(&spec)?.as_bytes())?);
    Ok(())
}

fn sample(a: &SampleArgs, cfg: &mut ExperimentConfig) -> CliResult {
    apply_scm_flags(&a.gen, cfg);
    cfg.sample.len = a.len.unwrap_or(cfg.sample.len);
    cfg.sample.count = a.count.unwrap_or(cfg.sample.count);
    let mut inputs = Vec::new();
    let spec = match &a.scm {
        Some(p) => {
            inputs.push(("scm", p.as_path()));
            read_scm(p)?
        }
        None => generate_scm(&cfg.scm)?,
    };
    let data = sample_dataset(&spec, cfg.sample.count, cfg.sample.len, cfg.seed)?;
    let run = Run::new("sample", cfg, &inputs)?;
    let mut buf = Vec::new();
    write_sequences(&mut buf, &data)?;
    report(&run.write("data", "jsonl", &buf)?);
    Ok(())
}

/// Vocabulary from an SCM file, an explicit size, or the configuration.
fn vocabulary(scm: Option<&ScmSpec>, vocab: Option<usize>, cfg: &ExperimentConfig) -> CliResult<Vocabulary> {
    Ok(match (scm, vocab) {
        (Some(s), _) => s.vocabulary(),
        (None, Some(n)) => Vocabulary::new(n)?,
        (None, None) => Vocabulary::new(cfg.scm.vocab_size)?,
    })
}

fn plant(a: &PlantArgs, cfg: &mut ExperimentConfig) -> CliResult {
    let spec = a.scm.as_deref().map(read_scm).transpose()?;
    let vocab = vocabulary(spec.as_ref(), a.vocab, cfg)?;
    cfg.scm.vocab_size = vocab.size();
    if !a.rules.is_empty() {
        cfg.labels.rules = a.rules.clone();
    }
    cfg.labels.n_labels = a.n_labels.unwrap_or(cfg.labels.n_labels);
    let records = read_records(&a.data, &vocab)?;
    let plan = if cfg.labels.rules.is_empty() {
        let l = &cfg.labels;
        random_label_plan(&vocab, l.n_labels, l.min_vars, l.max_vars, l.shape, cfg.seed)?
    } else {
        let rules = cfg
            .labels
            .rules
            .iter()
            .map(|r| r.parse::<BooleanRule>())
            .collect::<Result<Vec<_>, _>>()?;
        LabelPlan::new(rules, &vocab)?
    };
    let seqs: Vec<EventSequence> = records.into_iter().map(|r| r.sequence).collect();
    let labeled = plant_labels(&plan, &seqs, &vocab)?;
    let mut inputs = vec![("data", a.data.as_path())];
    if let Some(p) = &a.scm {
        inputs.push(("scm", p.as_path()));
    }
    let run = Run::new("plant-labels", cfg, &inputs)?;
    let mut buf = Vec::new();
    write_labeled(&mut buf, &labeled)?;
    report(&run.write("labeled", "jsonl", &buf)?);
    report(&run.write("plan", "json", serde_json::to_string(&plan)?.as_bytes())?);
    Ok(())
}

/// Estimators selected by the configuration and flags, plus the inputs they
/// were built from.
struct Estimators {
    events: Arc<dyn EventDensityEstimator>,
    bridge: Option<Arc<BridgeEstimator>>,
    vocab: Vocabulary,
    inputs: Vec<(&'static str, PathBuf)>,
}

fn apply_density_flags(d: &DensityArgs, cfg: &mut ExperimentConfig) -> CliResult {
    if let Some(cmd) = &d.bridge {
        cfg.density.estimator = DensityKind::Bridge { cmd: cmd.clone() };
    }
    match d.estimator {
        Some(EstimatorArg::Exact) => cfg.density.estimator = DensityKind::Exact,
        Some(EstimatorArg::Learned) => cfg.density.estimator = DensityKind::Learned,
        Some(EstimatorArg::Perturbed) => {
            let eps = d.eps.ok_or_else(|| CliError::Config("--estimator perturbed needs --eps".into()))?;
            cfg.density.estimator = DensityKind::Perturbed { eps };
        }
        None => {
            if let (Some(eps), DensityKind::Perturbed { .. }) = (d.eps, &cfg.density.estimator) {
                cfg.density.estimator = DensityKind::Perturbed { eps };
            }
        }
    }
    Ok(())
}

/// Reads the dataset alongside the estimators so a learned model can be fitted
/// on it.
fn estimators(d: &DensityArgs, data: &Path, cfg: &mut ExperimentConfig) -> CliResult<(Estimators, Vec<DatasetRecord>)> {
    apply_density_flags(d, cfg)?;
    let mut inputs: Vec<(&'static str, PathBuf)> = vec![("data", data.to_path_buf())];
    let spec = match (&cfg.density.estimator, &d.scm) {
        (DensityKind::Bridge { .. }, _) => None,
        (_, Some(p)) => {
            inputs.push(("scm", p.clone()));
            Some(Arc::new(read_scm(p)?))
        }
        (DensityKind::Learned, None) => None,
        _ => return Err(CliError::Config("oracle estimators need --scm".into())),
    };
    let (events, bridge, vocab): (Arc<dyn EventDensityEstimator>, _, Vocabulary) = match cfg.density.estimator.clone() {
        DensityKind::Bridge { cmd } => {
            let (prog, args) = cmd.split_first().ok_or_else(|| CliError::Config("empty bridge command".into()))?;
            let b = Arc::new(BridgeEstimator::spawn(prog, args)?);
            let vocab = Vocabulary::new(EventDensityEstimator::vocab_size(b.as_ref()))?;
            (b.clone(), Some(b), vocab)
        }
        DensityKind::Learned => {
            let vocab = vocabulary(spec.as_deref(), d.vocab, cfg)?;
            let records = read_records(data, &vocab)?;
            let corpus: Vec<EventSequence> = records.iter().map(|r| r.sequence.clone()).collect();
            let m = train_lagged_softmax(&corpus, vocab.size(), &cfg.density.train)?;
            return Ok((Estimators { events: Arc::new(m), bridge: None, vocab, inputs }, records));
        }
        _ => {
            let spec = spec.expect("oracle kinds require an SCM");
            let vocab = spec.vocabulary();
            let kind = cfg.oracle_kind().expect("oracle kind");
            (build_estimator(spec, kind, &cfg.density.calibration)?.0, None, vocab)
        }
    };
    cfg.scm.vocab_size = vocab.size();
    let records = read_records(data, &vocab)?;
    Ok((Estimators { events, bridge, vocab, inputs }, records))
}

fn input_refs<'a>(inputs: &'a [(&'static str, PathBuf)]) -> Vec<(&'static str, &'a Path)> {
    inputs.iter().map(|(r, p)| (*r, p.as_path())).collect()
}

fn graphs_jsonl<G: GraphDocument>(graphs: &[G]) -> Vec<u8> {
    let mut s = String::new();
    for g in graphs {
        s.push_str(&g.to_json());
        s.push('\n');
    }
    s.into_bytes()
}

fn discover_oscar(a: &OscarArgs, cfg: &mut ExperimentConfig) -> CliResult {
    let o = &mut cfg.oscar;
    o.context = a.context.unwrap_or(o.context);
    o.sampling.n_particles = a.particles.unwrap_or(o.sampling.n_particles);
    o.k = a.k.unwrap_or(o.k);
    if a.all_labels {
        o.only_positive_labels = false;
    }
    cfg.posterior.n_rollouts = a.rollouts.unwrap_or(cfg.posterior.n_rollouts);
    cfg.posterior.horizon = a.horizon.or(cfg.posterior.horizon);
    let (est, records) = estimators(&a.density, &a.data, cfg)?;
    let mut inputs = est.inputs.clone();
    let posterior: Arc<dyn LabelPosteriorEstimator> = match (&est.bridge, &a.plan) {
        (Some(b), None) => b.clone(),
        (_, Some(p)) => {
            inputs.push(("plan", p.clone()));
            let plan = read_plan(p, &est.vocab)?;
            let longest = records.iter().map(|r| r.sequence.len()).max().unwrap_or(1);
            let horizon = cfg.posterior.horizon.unwrap_or(longest);
            Arc::new(RolloutPosterior::new(est.events.clone(), plan, horizon, cfg.posterior.n_rollouts, cfg.seed)?)
        }
        (None, None) => return Err(CliError::Config("discover-oscar needs --plan or a bridge estimator".into())),
    };
    let seqs: Vec<EventSequence> = records.iter().map(|r| r.sequence.clone()).collect();
    let labels: Option<Vec<Vec<bool>>> = records.iter().map(|r| r.labels.clone()).collect();
    let graphs = batch_discover(&seqs, labels.as_deref(), est.events.as_ref(), posterior.as_ref(), &cfg.oscar)?;
    let run = Run::new("discover-oscar", cfg, &input_refs(&inputs))?;
    report(&run.write("oscar", "jsonl", &graphs_jsonl(&graphs))?);
    Ok(())
}

fn read_graphs<G: GraphDocument>(path: &Path) -> CliResult<Vec<G>> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("cannot open {}: {e}", path.display())))?;
    // one (possibly pretty-printed) document, or one document per line
    if serde_json::from_str::<serde_json::Value>(&text).is_ok() {
        return Ok(vec![G::from_json(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?]);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| G::from_json(l).map_err(|e| runtime(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

fn fuse(a: &FuseArgs, cfg: &mut ExperimentConfig) -> CliResult {
    let f = &mut cfg.fusion;
    match a.strategy {
        Some(StrategyArg::Union) => f.strategy = FusionStrategy::Union,
        Some(StrategyArg::Adaptive) => f.strategy = FusionStrategy::Adaptive,
        Some(StrategyArg::Static) => {
            let tau = a.tau.ok_or_else(|| CliError::Config("--strategy static needs --tau".into()))?;
            f.strategy = FusionStrategy::StaticFrequency { tau };
        }
        None => {}
    }
    f.tau_max = a.tau_max.unwrap_or(f.tau_max);
    f.tau_min = a.tau_min.unwrap_or(f.tau_min);
    f.k = a.k.or(f.k);
    let graphs: Vec<MarkovBoundaryGraph> = read_graphs(&a.graphs)?;
    let res = fuse_detailed(&graphs, &cfg.fusion)?;
    let run = Run::new("fuse", cfg, &[("graphs", a.graphs.as_path())])?;
    report(&run.write("fused", "json", res.graph.to_json().as_bytes())?);
    report(&run.write("fused", "dot", res.graph.to_dot().as_bytes())?);
    report(&run.write("fusion", "csv", res.report_csv().as_bytes())?);
    Ok(())
}

fn discover_trace(a: &TraceArgs, cfg: &mut ExperimentConfig) -> CliResult {
    let t = &mut cfg.trace;
    t.tau = a.tau.or(t.tau);
    t.context = a.context.or(t.context);
    t.n_particles = a.particles.unwrap_or(t.n_particles);
    match (a.variant, a.memory) {
        (Some(VariantArg::Full), _) => t.variant = Variant::Full,
        (Some(VariantArg::Sparse), m) | (None, m @ Some(_)) => {
            let memory = m.or(match t.variant {
                Variant::Sparse { memory } => Some(memory),
                Variant::Full => None,
            });
            let memory = memory.ok_or_else(|| CliError::Config("--variant sparse needs --memory".into()))?;
            t.variant = Variant::Sparse { memory };
        }
        (None, None) => {}
    }
    let (est, records) = estimators(&a.density, &a.data, cfg)?;
    let tau = cfg.trace.tau_for(est.vocab.size())?;
    let tcfg = cfg.trace;
    let aggregate = cfg.summary.aggregate;
    let results: Vec<(InstanceTimeGraph, SummaryGraph)> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let per_seq = || -> seq2cause::Result<_> {
                let inst = score_pairs(&r.sequence, est.events.as_ref(), &tcfg)?.instance_graph(tau)?;
                let summary = project_summary(&inst, &r.sequence, aggregate)?;
                Ok((inst, summary))
            };
            per_seq().map_err(|e| seq2cause::Error::AtSequence { index: i, source: Box::new(e) })
        })
        .collect::<Result<_, _>>()?;
    let (inst, summ): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let run = Run::new("discover-trace", cfg, &input_refs(&est.inputs))?;
    report(&run.write("trace", "jsonl", &graphs_jsonl(&inst))?);
    report(&run.write("summary", "jsonl", &graphs_jsonl(&summ))?);
    Ok(())
}

fn doc_kind(path: &Path) -> CliResult<String> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("cannot open {}: {e}", path.display())))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let v: serde_json::Value = serde_json::from_str(first)
        .or_else(|_| serde_json::from_str(&text))
        .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(v.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string())
}

fn edge_report<G>(pred: &[G], truth: &[G], edges: impl Fn(&G) -> BTreeSet<(u64, u64)>) -> CliResult<MetricReport> {
    if pred.len() != truth.len() {
        return Err(runtime(format!("{} predicted graphs for {} reference graphs", pred.len(), truth.len())));
    }
    Ok(MetricReport::from_counts(pred.iter().zip(truth).enumerate().map(|(i, (p, t))| {
        let (p, t) = (edges(p), edges(t));
        (i as u32, t.len(), Counts::from_sets(&p, &t))
    })))
}

fn eval(a: &EvalArgs, cfg: &mut ExperimentConfig) -> CliResult {
    let kind = doc_kind(&a.pred)?;
    let mut inputs = vec![("pred", a.pred.as_path())];
    let metrics = match (kind.as_str(), &a.truth, &a.plan) {
        ("mb", _, Some(plan_path)) => {
            inputs.push(("plan", plan_path.as_path()));
            let pred: Vec<MarkovBoundaryGraph> = read_graphs(&a.pred)?;
            let text = std::fs::read_to_string(plan_path)?;
            let plan: LabelPlan = serde_json::from_str(&text)?;
            let truths: Vec<BTreeMap<u32, BTreeSet<EventId>>> = pred
                .iter()
                .map(|g| {
                    (0..plan.n_labels() as u32)
                        .filter(|&j| cfg.eval.all_labels || g.mentions_label(j))
                        .map(|j| (j, plan.boundary(j as usize)))
                        .collect()
                })
                .collect();
            match pred.as_slice() {
                [one] => mb_metrics(one, &truths[0]),
                many => pooled_mb_metrics(many.iter().zip(&truths)),
            }
        }
        ("mb", Some(t), None) => {
            inputs.push(("truth", t.as_path()));
            let pred: Vec<MarkovBoundaryGraph> = read_graphs(&a.pred)?;
            let truth: Vec<MarkovBoundaryGraph> = read_graphs(t)?;
            if pred.len() != truth.len() {
                return Err(runtime(format!("{} predicted graphs for {} reference graphs", pred.len(), truth.len())));
            }
            let maps: Vec<BTreeMap<u32, BTreeSet<EventId>>> =
                truth.iter().map(|g| g.labels().map(|l| (l, g.boundary_set(l))).collect()).collect();
            pooled_mb_metrics(pred.iter().zip(&maps))
        }
        ("summary", Some(t), None) => {
            inputs.push(("truth", t.as_path()));
            let pred: Vec<SummaryGraph> = read_graphs(&a.pred)?;
            let truth: Vec<SummaryGraph> = read_graphs(t)?;
            edge_report(&pred, &truth, |g| g.edges().map(|(s, d, _)| (s as u64, d as u64)).collect())?
        }
        ("instance", Some(t), None) => {
            inputs.push(("truth", t.as_path()));
            let pred: Vec<InstanceTimeGraph> = read_graphs(&a.pred)?;
            let truth: Vec<InstanceTimeGraph> = read_graphs(t)?;
            edge_report(&pred, &truth, |g| g.edges().map(|(s, d, _)| (s as u64, d as u64)).collect())?
        }
        (k, _, _) => {
            return Err(CliError::Config(format!(
                "cannot evaluate `{k}` graphs with the given references (mb graphs take --plan or --truth, others --truth)"
            )))
        }
    };
    let run = Run::new("eval", cfg, &inputs)?;
    report(&run.write("eval", "csv", metrics.to_csv().as_bytes())?);
    Ok(())
}

fn bench(a: &BenchArgs, cfg: &mut ExperimentConfig) -> CliResult {
    let b = &mut cfg.bench;
    match a.kind {
        Some(BenchKindArg::Trace) => b.kind = BenchKind::Trace,
        Some(BenchKindArg::Oscar) => b.kind = BenchKind::Oscar,
        Some(BenchKindArg::FusionSim) => b.kind = BenchKind::FusionSim,
        None => {}
    }
    b.n_seeds = a.seeds.unwrap_or(b.n_seeds);
    if let Some(n) = a.count {
        b.trace.n_sequences = n;
        b.oscar.n_sequences = n;
        b.fusion_sim.n_graphs = n;
    }
    if let Some(v) = a.vocab {
        b.trace.scm.vocab_size = v;
        b.oscar.scm.vocab_size = v;
    }
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + cfg.bench.n_seeds).collect();
    let run = Run::new("bench", cfg, &[])?;
    let b = &cfg.bench;
    let start = Instant::now();
    let csv = match b.kind {
        BenchKind::Trace => {
            let eps: Vec<Option<f64>> = if b.eps.is_empty() { vec![None] } else { b.eps.iter().map(|&e| Some(e)).collect() };
            let vocab: Vec<Option<usize>> =
                if b.vocab.is_empty() { vec![None] } else { b.vocab.iter().map(|&v| Some(v)).collect() };
            let mut out = String::new();
            for v in &vocab {
                for e in &eps {
                    let mut tc = b.trace;
                    if let Some(e) = e {
                        tc.oracle = seq2cause::experiment::OracleKind::Perturbed { eps: *e };
                    }
                    if let Some(v) = v {
                        tc.scm.density = b.trace.scm.density * b.trace.scm.vocab_size as f64 / *v as f64;
                        tc.scm.vocab_size = *v;
                    }
                    let rows = seeds.iter().map(|&s| run_trace_bench(&tc, s)).collect::<Result<Vec<_>, _>>()?;
                    for r in &rows {
                        eprintln!("seed {} vocab {} f1 {:.4} in {:.1}s", r.seed, r.vocab_size, r.f1, r.wall_seconds);
                    }
                    append_block(&mut out, &trace_bench_csv(&rows, &run.hash));
                }
            }
            out
        }
        BenchKind::Oscar => {
            let rows = seeds
                .iter()
                .map(|&s| run_oscar_bench(&b.oscar, s).map(|r| r.row))
                .collect::<Result<Vec<_>, _>>()?;
            for r in &rows {
                eprintln!("seed {} sample f1 {:.4} fused f1 {:.4} in {:.1}s", r.seed, r.sample_f1, r.fused_f1, r.wall_seconds);
            }
            oscar_bench_csv(&rows, &run.hash)
        }
        BenchKind::FusionSim => {
            let vals = seeds
                .iter()
                .map(|&s| {
                    let r = simulate_fusion_noise(&seq2cause::experiment::FusionSimConfig { seed: s, ..b.fusion_sim }, &cfg.fusion)?;
                    Ok([
                        s as f64,
                        r.sample.precision,
                        r.sample.recall,
                        r.sample.f1,
                        r.union.precision,
                        r.union.recall,
                        r.union.f1,
                        r.adaptive.precision,
                        r.adaptive.recall,
                        r.adaptive.f1,
                    ])
                })
                .collect::<Result<Vec<_>, seq2cause::Error>>()?;
            let cols = [
                "seed",
                "sample_precision",
                "sample_recall",
                "sample_f1",
                "union_precision",
                "union_recall",
                "union_f1",
                "fused_precision",
                "fused_recall",
                "fused_f1",
            ];
            rows_csv(&cols, &vals, &run.hash)
        }
    };
    eprintln!("bench finished in {:.1}s", start.elapsed().as_secs_f64());
    report(&run.write("bench", "csv", csv.as_bytes())?);
    Ok(())
}

/// Appends a CSV block, keeping only the first header.
fn append_block(out: &mut String, block: &str) {
    if out.is_empty() {
        out.push_str(block);
    } else {
        for line in block.lines().skip(1) {
            out.push_str(line);
            out.push('\n');
        }
    }
}

fn serve(a: &ServeArgs) -> CliResult {
    let spec = Arc::new(read_scm(&a.scm)?);
    let vocab = spec.vocabulary();
    let events: Arc<dyn EventDensityEstimator> = Arc::new(ExactOracle::new(spec));
    let post = match &a.plan {
        Some(p) => Some(RolloutPosterior::new(events.clone(), read_plan(p, &vocab)?, a.horizon, a.rollouts, 0)?),
        None => None,
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_bridge(
        events.as_ref(),
        post.as_ref().map(|p| p as &dyn LabelPosteriorEstimator),
        stdin.lock(),
        stdout.lock(),
    )?;
    Ok(())
}
