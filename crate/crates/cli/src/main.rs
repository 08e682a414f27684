//! `bimetric`: build indices, run budget sweeps and check invariants from the
//! command line.
//!
//! stdout carries JSON (or nothing, when a command writes files only); logs go
//! to stderr. Exit codes: 0 success, 1 failed check, 2 bad configuration,
//! 3 I/O or malformed input.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bimetric::anngraph::{build_alpha_graph, verify_shortcut_reachability, ReachabilityGraph};
use bimetric::covertree::{check_invariants, check_truth_descendant_bound, CoverTree};
use bimetric::dataset::{self, BiMetricDataset, Qrels, EXACT_STATS_LIMIT};
use bimetric::harness::{
    self, ablation_modes, instance_seed, load_or_compute, Bench, BuildParams, Method, MethodSpec, SweepOptions,
    SweepRow, SynthParams, EVAL_K,
};
use bimetric::metric::{
    rescale_proxy, validate_c_approx, CountingOracle, DistanceOracle, OracleKind, PairSample, PointRef, Scaled,
};
use clap::{Parser, Subcommand};
use config::{ConfigArgs, Resolved};
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] bimetric::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use bimetric::Error as E;
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                E::Io { .. } | E::RawIo(_) | E::Format { .. } | E::Parse { .. } | E::Csv(_) => 3,
                E::Parameter(_) | E::Dataset(_) | E::Config(_) => 2,
                _ => 1,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "bimetric", version, about = "Bi-metric nearest neighbor indices and budget sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the proxy graph (plus the ground-truth graph and cover tree when configured) into out_dir
    Build(ConfigArgs),
    /// Answer one query with one method and print the result
    Search(SearchArgs),
    /// Run every (method, budget) cell and write sweep.csv (and ablation.csv)
    Sweep(ConfigArgs),
    /// Exhaustively check graph reachability, the approximation factor and cover-tree invariants
    Verify(ConfigArgs),
    /// Print aspect ratio, doubling dimension estimate and approximation factor
    Stats(ConfigArgs),
    /// Write a synthetic instance as fvecs files plus qrels.tsv
    GenSynth(ConfigArgs),
    /// Compute (or reuse) the cached brute-force ground truth
    TruthCache(ConfigArgs),
}

#[derive(Debug, clap::Args)]
struct SearchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Query id (row of the query files)
    #[arg(long)]
    query: u32,
    /// Ground-truth distance budget for this query
    #[arg(long)]
    budget: u64,
    /// bimetric-ours, bimetric-baseline, single-metric or cover-tree
    #[arg(long, default_value = "bimetric-ours")]
    method: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let args = match &cli.command {
        Command::Search(s) => &s.config,
        Command::Build(a)
        | Command::Sweep(a)
        | Command::Verify(a)
        | Command::Stats(a)
        | Command::GenSynth(a)
        | Command::TruthCache(a) => a,
    };
    let cfg = args.resolve()?;
    if let Some(t) = cfg.threads {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = match &cli.command {
        Command::Build(_) => cmd_build(&cfg)?,
        Command::Search(s) => cmd_search(&cfg, s)?,
        Command::Sweep(_) => cmd_sweep(&cfg)?,
        Command::Verify(_) => return cmd_verify(&cfg),
        Command::Stats(_) => cmd_stats(&cfg)?,
        Command::GenSynth(_) => cmd_gen_synth(&cfg)?,
        Command::TruthCache(_) => cmd_truth_cache(&cfg)?,
    };
    print_json(&out);
    Ok(())
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

/// One dataset to operate on, with its CSV tag.
struct Instance {
    tag: String,
    data: BiMetricDataset,
    /// Factor the instance was generated with, if synthetic.
    c: Option<f64>,
}

fn synth_params(cfg: &Resolved, seed: u64) -> SynthParams {
    let s = cfg.synth.clone().unwrap_or_default();
    SynthParams {
        n: s.n,
        n_queries: s.n_queries,
        dim: s.dim,
        c: s.c,
        qrels_k: s.qrels_k,
        seed: instance_seed(cfg.seed, seed),
        distortion: cfg.distortion,
    }
}

fn synth_instance(cfg: &Resolved, seed: u64) -> Result<Instance> {
    let p = synth_params(cfg, seed);
    log::info!("generating synthetic instance n={} dim={} C={} seed={seed}", p.n, p.dim, p.c);
    Ok(Instance {
        tag: format!("synth-c{}-s{seed}", p.c),
        c: Some(p.c),
        data: harness::generate(&p)?,
    })
}

fn file_instance(cfg: &Resolved) -> Result<Instance> {
    let p = &cfg.paths;
    let load = |path: &Option<PathBuf>| -> Result<dataset::EmbeddingSet> {
        let path = path.as_ref().expect("validated");
        Ok(dataset::load_fvecs(path)?)
    };
    let qrels = match &p.qrels {
        Some(path) => dataset::load_qrels(path)?,
        None => Qrels::new(),
    };
    let data = BiMetricDataset::new(
        load(&p.corpus_proxy)?,
        load(&p.corpus_truth)?,
        load(&p.queries_proxy)?,
        load(&p.queries_truth)?,
        qrels,
    )?;
    let tag = p.tag.clone().unwrap_or_else(|| {
        p.corpus_proxy
            .as_ref()
            .and_then(|c| c.parent())
            .and_then(|d| d.file_name())
            .map(|d| d.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    Ok(Instance { tag, data, c: None })
}

/// Files when paths are configured; otherwise the synthetic instance of the
/// first seed.
fn primary_instance(cfg: &Resolved) -> Result<Instance> {
    if cfg.has_files() {
        file_instance(cfg)
    } else {
        synth_instance(cfg, cfg.sweep.seeds[0])
    }
}

fn build_params(cfg: &Resolved) -> BuildParams {
    BuildParams { alpha: cfg.index.alpha, cap: cfg.cap() }
}

fn needs_truth_graph(cfg: &Resolved) -> bool {
    cfg.methods.contains(&Method::SingleMetric)
}

fn build_graph(set: &dataset::EmbeddingSet, kind: OracleKind, cfg: &Resolved) -> Result<ReachabilityGraph> {
    let p = build_params(cfg);
    log::info!("building {kind:?} graph over {} points (alpha={}, cap={:?})", set.len(), p.alpha, p.cap);
    Ok(build_alpha_graph(&DistanceOracle::new(kind, set), p.alpha, p.cap)?)
}

fn proxy_graph_path(cfg: &Resolved) -> PathBuf {
    cfg.out_dir().join("proxy.bmag")
}

fn truth_graph_path(cfg: &Resolved) -> PathBuf {
    cfg.out_dir().join("truth.bmag")
}

fn cover_tree_path(cfg: &Resolved) -> PathBuf {
    cfg.out_dir().join("cover_tree.json")
}

/// Loads a persisted graph, or builds (and saves) it when allowed.
fn graph_from_disk(
    path: &Path,
    set: &dataset::EmbeddingSet,
    kind: OracleKind,
    cfg: &Resolved,
) -> Result<ReachabilityGraph> {
    if path.exists() {
        let g = ReachabilityGraph::load(path)?;
        if g.len() != set.len() {
            return Err(CliError::Config(format!(
                "{} indexes {} points but the deduplicated corpus has {}; rebuild it",
                path.display(),
                g.len(),
                set.len()
            )));
        }
        return Ok(g);
    }
    if !cfg.sweep.build_if_missing {
        return Err(CliError::Config(format!(
            "{} not found; run `bimetric build` first or pass --build-if-missing true",
            path.display()
        )));
    }
    let g = build_graph(set, kind, cfg)?;
    create_dir(&cfg.out_dir())?;
    g.save(path)?;
    Ok(g)
}

fn cmd_build(cfg: &Resolved) -> Result<serde_json::Value> {
    let inst = primary_instance(cfg)?;
    let (reduced, dedup) = inst.data.dedup();
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    let proxy = build_graph(&reduced.corpus_proxy, OracleKind::Proxy, cfg)?;
    proxy.save(proxy_graph_path(cfg))?;
    let truth = if needs_truth_graph(cfg) {
        let g = build_graph(&reduced.corpus_truth, OracleKind::Truth, cfg)?;
        g.save(truth_graph_path(cfg))?;
        Some(g.stats())
    } else {
        None
    };
    let cover = match cfg.index.t {
        Some(t) => {
            let tree = CoverTree::build(&DistanceOracle::new(OracleKind::Proxy, &reduced.corpus_proxy), t)?;
            tree.save(cover_tree_path(cfg))?;
            Some(json!({
                "nodes": tree.node_count(),
                "top_level": tree.top_level(),
                "scale": tree.header.scale,
                "scale_exact": tree.header.scale_exact,
            }))
        }
        None => None,
    };
    Ok(json!({
        "dataset": inst.tag,
        "points": inst.data.corpus_len(),
        "unique_points": dedup.representatives.len(),
        "proxy_graph": proxy.stats(),
        "truth_graph": truth,
        "cover_tree": cover,
        "out_dir": dir,
    }))
}

fn cmd_search(cfg: &Resolved, args: &SearchArgs) -> Result<serde_json::Value> {
    let inst = primary_instance(cfg)?;
    if args.query as usize >= inst.data.query_len() {
        return Err(CliError::Config(format!(
            "query {} out of range ({} queries)",
            args.query,
            inst.data.query_len()
        )));
    }
    if args.method == "cover-tree" {
        let (reduced, dedup) = inst.data.dedup();
        let path = cover_tree_path(cfg);
        if !path.exists() {
            return Err(CliError::Config(format!("{} not found; build with --T set", path.display())));
        }
        let tree = CoverTree::load(&path)?;
        let truth = DistanceOracle::new(OracleKind::Truth, &reduced.corpus_truth).with_queries(&reduced.queries_truth);
        let oracle = CountingOracle::truth(truth, Some(args.budget));
        let r = tree.search(&oracle, PointRef::Query(args.query), cfg.index.eps)?;
        return Ok(json!({
            "query": args.query,
            "method": "cover-tree",
            "budget": args.budget,
            "ids": dedup.expand(&[r.point], 1),
            "distance": r.distance,
            "calls_D": r.calls,
            "exit": r.exit,
        }));
    }
    let method: Method = args.method.parse().map_err(|e: bimetric::Error| CliError::Config(e.to_string()))?;
    let bench = load_bench(cfg, inst, &[method])?;
    let spec = MethodSpec { method, start_mode: cfg.start_mode(), k: cfg.sweep.k };
    let out = bench.run_query(&spec, args.budget, args.query)?;
    Ok(json!({
        "query": args.query,
        "method": method.name(),
        "budget": args.budget,
        "ids": out.ids,
        "calls_D": out.calls_truth,
        "calls_d": out.calls_proxy,
    }))
}

/// Depth of the cached ground truth; sweep and truth-cache share the file.
fn truth_k(data: &BiMetricDataset) -> usize {
    EVAL_K.min(data.corpus_len())
}

fn ground_truth(cfg: &Resolved, data: &BiMetricDataset) -> Result<harness::GroundTruth> {
    let k = truth_k(data);
    let (gt, hit) = load_or_compute(data, k, &cfg.out_dir().join("gt"))?;
    log::info!("ground truth for {} queries ({})", gt.rows.len(), if hit { "cached" } else { "computed" });
    Ok(gt)
}

/// Bench over persisted graphs for file datasets; synthetic instances are
/// rebuilt in memory since each seed is a different corpus.
fn load_bench(cfg: &Resolved, inst: Instance, methods: &[Method]) -> Result<Bench> {
    let gt = ground_truth(cfg, &inst.data)?;
    let (reduced, _) = inst.data.dedup();
    let want_truth = methods.contains(&Method::SingleMetric);
    let (proxy, truth) = if cfg.has_files() {
        let proxy = graph_from_disk(&proxy_graph_path(cfg), &reduced.corpus_proxy, OracleKind::Proxy, cfg)?;
        let truth = if want_truth {
            Some(graph_from_disk(&truth_graph_path(cfg), &reduced.corpus_truth, OracleKind::Truth, cfg)?)
        } else {
            None
        };
        (proxy, truth)
    } else {
        let proxy = build_graph(&reduced.corpus_proxy, OracleKind::Proxy, cfg)?;
        let truth = if want_truth {
            Some(build_graph(&reduced.corpus_truth, OracleKind::Truth, cfg)?)
        } else {
            None
        };
        (proxy, truth)
    };
    let mut bench = Bench::new(inst.tag, inst.data, proxy, truth, Some(gt))?;
    if let Some(beam) = cfg.index.beam_stage1 {
        bench = bench.with_stage1_beam(beam);
    }
    Ok(bench)
}

fn cmd_sweep(cfg: &Resolved) -> Result<serde_json::Value> {
    let specs: Vec<MethodSpec> = cfg
        .methods
        .iter()
        .map(|&method| MethodSpec { method, start_mode: cfg.start_mode(), k: cfg.sweep.k })
        .collect();
    let ablation: Vec<MethodSpec> = ablation_modes()
        .into_iter()
        .map(|start_mode| MethodSpec { method: Method::Ours, start_mode, k: cfg.sweep.k })
        .collect();
    let opts = SweepOptions { timing: cfg.sweep.timing };
    let instances: Vec<Option<u64>> = if cfg.has_files() {
        if cfg.sweep.seeds.len() > 1 {
            log::warn!("file dataset: seeds only affect synthetic instances, running once");
        }
        vec![None]
    } else {
        cfg.sweep.seeds.iter().copied().map(Some).collect()
    };
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut ablation_rows: Vec<SweepRow> = Vec::new();
    let mut tags = Vec::new();
    for seed in instances {
        let inst = match seed {
            Some(s) => synth_instance(cfg, s)?,
            None => file_instance(cfg)?,
        };
        tags.push(inst.tag.clone());
        let bench = load_bench(cfg, inst, &cfg.methods)?;
        rows.extend(harness::sweep(&bench, &specs, &cfg.sweep.budgets, opts)?);
        if cfg.sweep.ablation {
            ablation_rows.extend(harness::sweep(&bench, &ablation, &cfg.sweep.budgets, opts)?);
        }
    }
    harness::check_budget(&rows)
        .and_then(|_| harness::check_budget(&ablation_rows))
        .map_err(|e| CliError::Check(e.to_string()))?;
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    let csv_path = dir.join("sweep.csv");
    write_file(&csv_path, |w| harness::write_csv(&rows, w))?;
    let ablation_path = if cfg.sweep.ablation {
        let path = dir.join("ablation.csv");
        write_file(&path, |w| harness::write_ablation_csv(&ablation_rows, w))?;
        Some(path)
    } else {
        None
    };
    Ok(json!({
        "csv": csv_path,
        "ablation_csv": ablation_path,
        "datasets": tags,
        "rows": rows.len(),
        "ablation_rows": ablation_rows.len(),
        "cells": rows.iter().map(|r| json!({
            "dataset": r.dataset,
            "method": r.method.name(),
            "Q": r.q,
            "recall_at_10": r.recall_at_10,
            "ndcg_at_10": r.ndcg_at_10,
        })).collect::<Vec<_>>(),
    }))
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> bimetric::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn cmd_verify(cfg: &Resolved) -> Result<()> {
    let inst = primary_instance(cfg)?;
    let (reduced, _) = inst.data.dedup();
    let n = reduced.corpus_len();
    if n > EXACT_STATS_LIMIT {
        return Err(CliError::Config(format!(
            "verify is exhaustive and needs at most {EXACT_STATS_LIMIT} unique points, got {n}"
        )));
    }
    let d = DistanceOracle::new(OracleKind::Proxy, &reduced.corpus_proxy);
    let big = DistanceOracle::new(OracleKind::Truth, &reduced.corpus_truth);
    let path = proxy_graph_path(cfg);
    let graph = if path.exists() {
        ReachabilityGraph::load(&path)?
    } else {
        log::info!("{} not found, verifying a freshly built graph", path.display());
        build_graph(&reduced.corpus_proxy, OracleKind::Proxy, cfg)?
    };
    if graph.len() != n {
        return Err(CliError::Config(format!("graph has {} nodes, corpus {n}", graph.len())));
    }
    let alpha = graph.alpha();
    let mut failures: Vec<String> = Vec::new();

    // proxy side: the graph was pruned under d at alpha
    let proxy_cx = verify_shortcut_reachability(&graph, &d, alpha);
    if let Some(cx) = proxy_cx {
        failures.push(format!("proxy reachability at alpha={alpha}: p={} q={}", cx.p, cx.q));
    }

    // factor between the two metrics: the configured C, or the measured one
    // after rescaling d to sit below D
    let configured_c = cfg.index.t.or(inst.c);
    let rescale = rescale_proxy(&d, &big, PairSample::Exhaustive)?;
    let (scale, c) = match configured_c {
        Some(c) => (1.0, c),
        None => (rescale.scale, rescale.c_hat * (1.0 + 1e-9)),
    };
    let scaled = Scaled { inner: &d, factor: scale };
    let approx = validate_c_approx(&scaled, &big, c, PairSample::Exhaustive)?;
    if let Some(v) = approx.violations.first() {
        failures.push(format!(
            "C={c} approximation: pair ({}, {}) has d={} D={}",
            v.x, v.y, v.d_value, v.big_d_value
        ));
    }
    // transfer to the ground truth at alpha / C
    let truth_alpha = alpha / c;
    let truth_cx = if approx.holds() {
        verify_shortcut_reachability(&graph, &big, truth_alpha)
    } else {
        None
    };
    if let Some(cx) = truth_cx {
        failures.push(format!("ground-truth reachability at alpha/C={truth_alpha}: p={} q={}", cx.p, cx.q));
    }

    let cover = match cfg.index.t {
        Some(t) => {
            let cpath = cover_tree_path(cfg);
            let tree = if cpath.exists() { CoverTree::load(&cpath)? } else { CoverTree::build(&d, t)? };
            let report = check_invariants(&tree, &d);
            if let Some(f) = &report.first_failure {
                failures.push(format!("cover tree: {f}"));
            }
            let bound = if approx.holds() { check_truth_descendant_bound(&tree, &big) } else { None };
            if let Some((a, q, level)) = bound {
                failures.push(format!("cover tree ground-truth bound: ancestor {a} descendant {q} level {level}"));
            }
            Some(json!({
                "invariants": report,
                "truth_descendant_bound": bound.is_none(),
            }))
        }
        None => None,
    };

    let pass = failures.is_empty();
    print_json(&json!({
        "dataset": inst.tag,
        "n": n,
        "alpha": alpha,
        "cap": graph.cap(),
        "proxy_reachability": { "alpha": alpha, "pass": proxy_cx.is_none(), "counterexample": proxy_cx },
        "approximation": {
            "C": c,
            "proxy_scale": scale,
            "c_hat": rescale.c_hat,
            "pass": approx.holds(),
            "violations": approx.violation_count,
        },
        "truth_reachability": {
            "alpha": truth_alpha,
            "checked": approx.holds(),
            "pass": approx.holds() && truth_cx.is_none(),
            "counterexample": truth_cx,
        },
        "cover_tree": cover,
        "pass": pass,
    }));
    if pass {
        Ok(())
    } else {
        Err(CliError::Check(failures[0].clone()))
    }
}

fn cmd_stats(cfg: &Resolved) -> Result<serde_json::Value> {
    let inst = primary_instance(cfg)?;
    let (reduced, _) = inst.data.dedup();
    let stats = dataset::compute_stats(&reduced.corpus_proxy, Some(&reduced.corpus_truth), 200_000, cfg.seed)?;
    Ok(json!({
        "dataset": inst.tag,
        "points": inst.data.corpus_len(),
        "unique_points": reduced.corpus_len(),
        "queries": inst.data.query_len(),
        "dim_proxy": inst.data.corpus_proxy.dim(),
        "dim_truth": inst.data.corpus_truth.dim(),
        "stats": stats,
    }))
}

fn cmd_gen_synth(cfg: &Resolved) -> Result<serde_json::Value> {
    let mut written = Vec::new();
    for &seed in &cfg.sweep.seeds {
        let inst = synth_instance(cfg, seed)?;
        let dir = cfg.out_dir().join(&inst.tag);
        create_dir(&dir)?;
        let d = &inst.data;
        for (name, set) in [
            ("corpus_proxy", &d.corpus_proxy),
            ("corpus_truth", &d.corpus_truth),
            ("queries_proxy", &d.queries_proxy),
            ("queries_truth", &d.queries_truth),
        ] {
            dataset::save_fvecs(dir.join(format!("{name}.fvecs")), set)?;
        }
        dataset::save_qrels(dir.join("qrels.tsv"), &d.qrels)?;
        written.push(json!({ "dataset": inst.tag, "dir": dir, "points": d.corpus_len(), "queries": d.query_len() }));
    }
    Ok(json!({ "instances": written }))
}

fn cmd_truth_cache(cfg: &Resolved) -> Result<serde_json::Value> {
    let inst = primary_instance(cfg)?;
    let k = truth_k(&inst.data);
    let dir = cfg.out_dir().join("gt");
    let (gt, hit) = load_or_compute(&inst.data, k, &dir)?;
    Ok(json!({
        "dataset": inst.tag,
        "path": harness::cache_path(&dir, &inst.data, k),
        "hit": hit,
        "queries": gt.rows.len(),
        "k": gt.k,
    }))
}
