//! End-to-end runs of the `bimetric` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bimetric::anngraph::{verify_shortcut_reachability, ReachabilityGraph};
use bimetric::dataset::{save_fvecs, EmbeddingSet};
use bimetric::metric::{DistanceOracle, OracleKind};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bimetric"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn bimetric")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn line_set(xs: &[f32]) -> EmbeddingSet {
    EmbeddingSet::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
}

/// Writes proxy == truth files for a 1-d corpus and returns the path flags.
fn write_line_dataset(dir: &Path, corpus: &[f32], queries: &[f32]) -> Vec<String> {
    let c = line_set(corpus);
    let q = line_set(queries);
    let mut flags = Vec::new();
    for (name, set) in [("corpus-proxy", &c), ("corpus-truth", &c), ("queries-proxy", &q), ("queries-truth", &q)] {
        let path = dir.join(format!("{name}.fvecs"));
        save_fvecs(&path, set).unwrap();
        flags.push(format!("--{name}"));
        flags.push(path.display().to_string());
    }
    flags
}

fn with(base: &[String], extra: &[&str]) -> Vec<String> {
    base.iter().cloned().chain(extra.iter().map(|s| s.to_string())).collect()
}

fn run_owned(args: &[String]) -> Output {
    bin().args(args).output().expect("spawn bimetric")
}

#[test]
fn missing_corpus_file_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope").join("corpus.fvecs");
    let mut args = vec!["build".to_string()];
    args.extend(write_line_dataset(dir.path(), &[0.0, 1.0], &[0.5]));
    args[2] = missing.display().to_string();
    let out = run_owned(&args);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&missing.display().to_string()), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn line_fixture_graph_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let files = write_line_dataset(dir.path(), &[0.0, 1.0, 2.0], &[0.4]);
    let args = with(
        &files,
        &["--alpha", "2", "--cap", "0", "--methods", "bimetric-ours", "--out-dir", out_dir.to_str().unwrap()],
    );
    let out = run_owned(&with(&["build".to_string()], &args.iter().map(String::as_str).collect::<Vec<_>>()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = stdout_json(&out);
    assert_eq!(stats["proxy_graph"]["edges"], 4);

    // N(0) = {1}, N(1) = {0, 2}, N(2) = {1}; the medoid 1 is the entry
    let mut expected = b"BMAG".to_vec();
    for v in [1u32, 3] {
        expected.extend(v.to_le_bytes());
    }
    expected.extend(2.0f64.to_le_bytes());
    for v in [0u32, 1, 1, 1, 2, 0, 2, 1, 1] {
        expected.extend(v.to_le_bytes());
    }
    let bytes = std::fs::read(out_dir.join("proxy.bmag")).unwrap();
    assert_eq!(bytes, expected);
    assert!(!out_dir.join("truth.bmag").exists());
}

#[test]
fn default_build_uses_standard_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let files = write_line_dataset(dir.path(), &[0.0, 1.0, 2.0, 5.0], &[0.4]);
    let mut args = vec!["build".to_string()];
    args.extend(files);
    args.extend(["--out-dir".into(), out_dir.display().to_string()]);
    let out = run_owned(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let g = ReachabilityGraph::load(out_dir.join("proxy.bmag")).unwrap();
    assert_eq!(g.alpha(), 1.2);
    assert_eq!(g.cap(), Some(64));
    // single-metric is among the default methods, so its graph is built too
    assert!(out_dir.join("truth.bmag").exists());
}

fn synth_sweep_args(out_dir: &Path) -> Vec<String> {
    [
        "sweep",
        "--synth-n",
        "300",
        "--synth-n-queries",
        "8",
        "--synth-dim",
        "3",
        "--synth-c",
        "2",
        "--methods",
        "bimetric-ours,bimetric-baseline",
        "--budgets",
        "20,60",
        "--seeds",
        "3",
        "--ablation",
        "true",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn sweep_writes_one_row_per_cell_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run_owned(&synth_sweep_args(&out_dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["rows"], 4);
    assert_eq!(summary["datasets"][0], "synth-c2-s3");

    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(
        lines[0],
        "dataset,method,Q,ndcg_at_10,recall_at_10,mean_calls_D,mean_calls_d,wall_seconds"
    );
    for row in &lines[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 8);
        let q: f64 = fields[2].parse().unwrap();
        let calls: f64 = fields[5].parse().unwrap();
        assert!(calls <= q, "{row}");
    }
    let ablation = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    assert!(ablation.starts_with("dataset,method,start_mode,Q,"));
    assert_eq!(ablation.lines().count(), 1 + 4 * 2);

    // the ground-truth cache is now warm; the rerun must match byte for byte
    let first = std::fs::read(out_dir.join("sweep.csv")).unwrap();
    let first_ablation = std::fs::read(out_dir.join("ablation.csv")).unwrap();
    let again = run_owned(&synth_sweep_args(&out_dir));
    assert!(again.status.success());
    assert_eq!(std::fs::read(out_dir.join("sweep.csv")).unwrap(), first);
    assert_eq!(std::fs::read(out_dir.join("ablation.csv")).unwrap(), first_ablation);
    assert!(std::fs::read_dir(out_dir.join("gt")).unwrap().count() == 1);
}

#[test]
fn sweep_on_files_requires_built_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let files = write_line_dataset(dir.path(), &(0..40).map(|i| i as f32).collect::<Vec<_>>(), &[3.3, 17.8]);
    let mut args = vec!["sweep".to_string()];
    args.extend(files);
    args.extend(
        ["--out-dir", out_dir.to_str().unwrap(), "--budgets", "10,40", "--methods", "bimetric-ours"].map(String::from),
    );
    let out = run_owned(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("proxy.bmag"));

    args.extend(["--build-if-missing".to_string(), "true".to_string()]);
    let out = run_owned(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("proxy.bmag").exists());
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    // at Q = n every point is affordable, so the top 10 are exact
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert_eq!(last[4], "1");
}

/// Synthetic instance on disk plus the flags that point at it.
fn gen_synth(dir: &Path, c: &str) -> (Vec<String>, PathBuf) {
    let out = run(&[
        "gen-synth",
        "--synth-n",
        "150",
        "--synth-n-queries",
        "5",
        "--synth-dim",
        "3",
        "--synth-c",
        c,
        "--synth-distortion",
        "fine-noise",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let info = stdout_json(&out);
    let data_dir = PathBuf::from(info["instances"][0]["dir"].as_str().unwrap());
    let mut flags = Vec::new();
    for name in ["corpus_proxy", "corpus_truth", "queries_proxy", "queries_truth"] {
        flags.push(format!("--{}", name.replace('_', "-")));
        flags.push(data_dir.join(format!("{name}.fvecs")).display().to_string());
    }
    flags.push("--qrels".into());
    flags.push(data_dir.join("qrels.tsv").display().to_string());
    (flags, data_dir)
}

#[test]
fn verify_passes_on_fresh_graph_and_catches_a_deleted_edge() {
    let dir = tempfile::tempdir().unwrap();
    let (files, data_dir) = gen_synth(dir.path(), "2");
    let out_dir = dir.path().join("index");
    let common = with(
        &files,
        &["--alpha", "3", "--cap", "0", "--T", "2", "--methods", "bimetric-ours", "--out-dir", out_dir.to_str().unwrap()],
    );
    let build = run_owned(&with(&["build".to_string()], &common.iter().map(String::as_str).collect::<Vec<_>>()));
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));

    let verify_args = with(&["verify".to_string()], &common.iter().map(String::as_str).collect::<Vec<_>>());
    let ok = run_owned(&verify_args);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let report = stdout_json(&ok);
    assert_eq!(report["pass"], true);
    // the proxy graph at alpha = 3 transfers to the ground truth at 3 / 2
    assert_eq!(report["truth_reachability"]["alpha"], 1.5);
    assert_eq!(report["truth_reachability"]["pass"], true);
    assert_eq!(report["approximation"]["pass"], true);
    assert_eq!(report["cover_tree"]["invariants"]["nesting"], true);

    // mutate: drop the first edge whose loss breaks proxy reachability
    let path = out_dir.join("proxy.bmag");
    let graph = ReachabilityGraph::load(&path).unwrap();
    let proxy = bimetric::dataset::load_fvecs(data_dir.join("corpus_proxy.fvecs")).unwrap();
    let d = DistanceOracle::new(OracleKind::Proxy, &proxy);
    let (mutated, cx) = (0..graph.len() as u32)
        .flat_map(|p| graph.neighbors(p).iter().map(move |&q| (p, q)))
        .find_map(|(p, q)| {
            let mut g = graph.clone();
            g.remove_edge(p, q);
            verify_shortcut_reachability(&g, &d, g.alpha()).map(|cx| (g, cx))
        })
        .expect("some edge is essential");
    mutated.save(&path).unwrap();

    let bad = run_owned(&verify_args);
    assert_eq!(bad.status.code(), Some(1));
    let report = stdout_json(&bad);
    assert_eq!(report["pass"], false);
    assert_eq!(report["proxy_reachability"]["counterexample"]["p"], cx.p);
    assert_eq!(report["proxy_reachability"]["counterexample"]["q"], cx.q);
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains(&format!("p={} q={}", cx.p, cx.q)), "{err}");
}

#[test]
fn verify_rejects_a_wrong_factor() {
    let dir = tempfile::tempdir().unwrap();
    let (files, _) = gen_synth(dir.path(), "3");
    let args = with(&files, &["--cap", "0", "--T", "1.5", "--out-dir", dir.path().join("x").to_str().unwrap()]);
    let out = run_owned(&with(&["verify".to_string()], &args.iter().map(String::as_str).collect::<Vec<_>>()));
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["approximation"]["pass"], false);
}

#[test]
fn stats_search_and_truth_cache_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let (files, _) = gen_synth(dir.path(), "2");
    let out_dir = dir.path().join("index");
    let common = with(&files, &["--T", "2", "--methods", "bimetric-ours", "--out-dir", out_dir.to_str().unwrap()]);
    let call = |sub: &str, extra: &[&str]| {
        let mut args = vec![sub.to_string()];
        args.extend(common.iter().cloned());
        args.extend(extra.iter().map(|s| s.to_string()));
        run_owned(&args)
    };
    let stats = call("stats", &[]);
    assert!(stats.status.success());
    let s = stdout_json(&stats);
    assert_eq!(s["points"], 150);
    assert!(s["stats"]["c_hat"].as_f64().unwrap() <= 2.0);

    let first = stdout_json(&call("truth-cache", &[]));
    assert_eq!(first["hit"], false);
    let second = stdout_json(&call("truth-cache", &[]));
    assert_eq!(second["hit"], true);
    assert_eq!(first["path"], second["path"]);

    // search reads the same cache
    assert!(call("build", &[]).status.success());
    let hit = call("search", &["--query", "1", "--budget", "40"]);
    assert!(hit.status.success(), "{}", String::from_utf8_lossy(&hit.stderr));
    let r = stdout_json(&hit);
    assert_eq!(r["ids"].as_array().unwrap().len(), 10);
    assert!(r["calls_D"].as_u64().unwrap() <= 40);
    let cover = stdout_json(&call("search", &["--query", "1", "--budget", "150", "--method", "cover-tree"]));
    assert_eq!(cover["ids"].as_array().unwrap().len(), 1);

}

/// Every config key, in `[section] key` form, with its flag.
const KEYS: &[(&str, &str)] = &[
    ("seed", "--seed"),
    ("threads", "--threads"),
    ("paths.corpus_proxy", "--corpus-proxy"),
    ("paths.corpus_truth", "--corpus-truth"),
    ("paths.queries_proxy", "--queries-proxy"),
    ("paths.queries_truth", "--queries-truth"),
    ("paths.qrels", "--qrels"),
    ("paths.out_dir", "--out-dir"),
    ("paths.tag", "--tag"),
    ("index.alpha", "--alpha"),
    ("index.cap", "--cap"),
    ("index.beam_stage1", "--beam-stage1"),
    ("index.T", "--T"),
    ("index.eps", "--eps"),
    ("sweep.budgets", "--budgets"),
    ("sweep.methods", "--methods"),
    ("sweep.start_mode", "--start-mode"),
    ("sweep.k", "--k"),
    ("sweep.seeds", "--seeds"),
    ("sweep.ablation", "--ablation"),
    ("sweep.timing", "--timing"),
    ("sweep.build_if_missing", "--build-if-missing"),
    ("synth.n", "--synth-n"),
    ("synth.n_queries", "--synth-n-queries"),
    ("synth.dim", "--synth-dim"),
    ("synth.c", "--synth-c"),
    ("synth.distortion", "--synth-distortion"),
    ("synth.qrels_k", "--synth-qrels-k"),
];

#[test]
fn help_lists_every_flag() {
    let top = String::from_utf8(run(&["--help"]).stdout).unwrap();
    for sub in ["build", "search", "sweep", "verify", "stats", "gen-synth", "truth-cache"] {
        assert!(top.contains(sub), "{sub} missing from top-level help");
        let help = String::from_utf8(run(&[sub, "--help"]).stdout).unwrap();
        for (_, flag) in KEYS {
            assert!(help.contains(&format!("{flag} ")), "{flag} missing from `{sub} --help`");
        }
        assert!(help.contains("--config"));
    }
    let search = String::from_utf8(run(&["search", "--help"]).stdout).unwrap();
    for flag in ["--query", "--budget", "--method"] {
        assert!(search.contains(flag));
    }
}

#[test]
fn every_flag_has_a_config_key_and_the_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
seed = 5
threads = 1
[paths]
out_dir = "out"
tag = "t"
[index]
alpha = 1.5
cap = 0
beam_stage1 = 300
T = 2.0
eps = 0.5
[sweep]
budgets = [20, 40]
methods = ["bimetric-ours"]
start_mode = "top-half"
k = 10
seeds = [1]
ablation = false
timing = false
build_if_missing = false
[synth]
n = 120
n_queries = 3
dim = 2
c = 2.0
distortion = "diagonal"
qrels_k = 10
"#,
    )
    .unwrap();
    let text = std::fs::read_to_string(&config).unwrap();
    let mut section = "";
    let mut seen = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(s) = line.strip_prefix('[') {
            section = s.trim_end_matches(']');
        } else {
            let key = line.split('=').next().unwrap().trim();
            seen.push(if section.is_empty() { key.to_string() } else { format!("{section}.{key}") });
        }
    }
    // the paths section also takes the four dataset files and qrels
    let documented: Vec<&str> = KEYS.iter().map(|(k, _)| *k).filter(|k| !k.starts_with("paths.") || k.ends_with("out_dir") || k.ends_with("tag")).collect();
    assert_eq!(seen, documented);

    let out = run(&["stats", "--config", config.to_str().unwrap(), "--synth-n", "90"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stdout_json(&out);
    assert_eq!(s["points"], 90);
    assert_eq!(s["dataset"], "synth-c2-s1");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[index]\nalpha_typo = 2.0\n").unwrap();
    assert_eq!(run(&["stats", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bundled_example_config_loads() {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/synthetic_c3.toml");
    let out = run(&["stats", "--config", config, "--synth-n", "200", "--synth-n-queries", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stdout_json(&out);
    assert_eq!(s["dataset"], "synth-c3-s0");
    assert_eq!(s["dim_proxy"], 32);
}
