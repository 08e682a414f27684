//! Run configuration: a two-level TOML file whose every key has a matching
//! command line flag. Flags override the file.

use std::path::{Path, PathBuf};

use bimetric::anngraph::{StartMode, DEFAULT_ALPHA, DEFAULT_MAX_OUTDEGREE};
use bimetric::harness::{Distortion, Method};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus_proxy: Option<PathBuf>,
    pub corpus_truth: Option<PathBuf>,
    pub queries_proxy: Option<PathBuf>,
    pub queries_truth: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Dataset name in CSV rows; defaults to the corpus file's directory name.
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexParams {
    pub alpha: f64,
    /// Maximum out-degree; 0 builds the uncapped graph.
    pub cap: usize,
    /// First-stage beam; unset picks 5000, or 30000 above a million points.
    pub beam_stage1: Option<usize>,
    /// Cover-tree slack, normally the validated approximation factor `C`.
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub eps: f64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            cap: DEFAULT_MAX_OUTDEGREE,
            beam_stage1: None,
            t: None,
            eps: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepParams {
    pub budgets: Vec<u64>,
    pub methods: Vec<String>,
    pub start_mode: String,
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Also run the start-mode ablation for `bimetric-ours`.
    pub ablation: bool,
    /// Record wall-clock seconds (makes the CSV run-dependent).
    pub timing: bool,
    /// Build missing graph files in `out_dir` instead of failing.
    pub build_if_missing: bool,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            budgets: vec![100, 200, 400, 800, 1600],
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            start_mode: StartMode::HalfBudget.label(),
            k: 10,
            seeds: vec![0],
            ablation: false,
            timing: false,
            build_if_missing: false,
        }
    }
}

/// Synthetic instance parameters, used when no corpus files are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n: usize,
    pub n_queries: usize,
    pub dim: usize,
    pub c: f64,
    pub distortion: String,
    pub qrels_k: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n: 10_000,
            n_queries: 100,
            dim: 8,
            c: 3.0,
            distortion: "diagonal".into(),
            qrels_k: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random component derives its own stream from it.
    pub seed: Option<u64>,
    /// Worker threads; unset uses every core.
    pub threads: Option<usize>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub index: IndexParams,
    #[serde(default)]
    pub sweep: SweepParams,
    pub synth: Option<SynthSection>,
}

/// Flags mirroring every config key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// seed: root seed of every random stream
    #[arg(long)]
    pub seed: Option<u64>,
    /// threads: worker thread limit (default: all cores)
    #[arg(long, env = "BIMETRIC_THREADS")]
    pub threads: Option<usize>,

    /// [paths] corpus_proxy: corpus embeddings from the proxy model (fvecs)
    #[arg(long)]
    pub corpus_proxy: Option<PathBuf>,
    /// [paths] corpus_truth: corpus embeddings from the ground-truth model (fvecs)
    #[arg(long)]
    pub corpus_truth: Option<PathBuf>,
    /// [paths] queries_proxy: query embeddings from the proxy model (fvecs)
    #[arg(long)]
    pub queries_proxy: Option<PathBuf>,
    /// [paths] queries_truth: query embeddings from the ground-truth model (fvecs)
    #[arg(long)]
    pub queries_truth: Option<PathBuf>,
    /// [paths] qrels: relevance judgments, `query_id<TAB>doc_id<TAB>grade`
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// [paths] out_dir: where indices, caches and CSVs are written
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// [paths] tag: dataset name used in CSV rows
    #[arg(long)]
    pub tag: Option<String>,

    /// [index] alpha: pruning parameter of the graph index
    #[arg(long)]
    pub alpha: Option<f64>,
    /// [index] cap: maximum out-degree, 0 for uncapped
    #[arg(long)]
    pub cap: Option<usize>,
    /// [index] beam_stage1: beam width of the proxy search
    #[arg(long)]
    pub beam_stage1: Option<usize>,
    /// [index] T: cover-tree slack (the approximation factor C)
    #[arg(long = "T")]
    pub t: Option<f64>,
    /// [index] eps: cover-tree search accuracy, in (0, 1)
    #[arg(long)]
    pub eps: Option<f64>,

    /// [sweep] budgets: comma-separated ascending ground-truth budgets Q
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<u64>>,
    /// [sweep] methods: comma-separated subset of bimetric-ours, bimetric-baseline, single-metric
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// [sweep] start_mode: top-half, top-<K> or default
    #[arg(long)]
    pub start_mode: Option<String>,
    /// [sweep] k: result size
    #[arg(long)]
    pub k: Option<usize>,
    /// [sweep] seeds: comma-separated instance seeds for synthetic runs
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// [sweep] ablation: also write the start-mode ablation CSV
    #[arg(long)]
    pub ablation: Option<bool>,
    /// [sweep] timing: record wall-clock seconds in the CSV
    #[arg(long)]
    pub timing: Option<bool>,
    /// [sweep] build_if_missing: build graphs absent from out_dir
    #[arg(long)]
    pub build_if_missing: Option<bool>,

    /// [synth] n: synthetic corpus size
    #[arg(long)]
    pub synth_n: Option<usize>,
    /// [synth] n_queries: synthetic query count
    #[arg(long)]
    pub synth_n_queries: Option<usize>,
    /// [synth] dim: synthetic intrinsic dimension
    #[arg(long)]
    pub synth_dim: Option<usize>,
    /// [synth] c: synthetic approximation factor C
    #[arg(long)]
    pub synth_c: Option<f64>,
    /// [synth] distortion: diagonal or fine-noise
    #[arg(long)]
    pub synth_distortion: Option<String>,
    /// [synth] qrels_k: judged neighbors per synthetic query
    #[arg(long)]
    pub synth_qrels_k: Option<usize>,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub index: IndexParams,
    pub sweep: SweepParams,
    pub synth: Option<SynthSection>,
    #[serde(skip)]
    pub methods: Vec<Method>,
    #[serde(skip)]
    pub start_mode: Option<StartMode>,
    #[serde(skip)]
    pub distortion: Distortion,
}

impl Resolved {
    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("bimetric-out"))
    }

    pub fn cap(&self) -> Option<usize> {
        (self.index.cap > 0).then_some(self.index.cap)
    }

    pub fn has_files(&self) -> bool {
        self.paths.corpus_proxy.is_some()
    }

    pub fn start_mode(&self) -> StartMode {
        self.start_mode.unwrap_or(StartMode::HalfBudget)
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn load_file(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))?;
    // relative paths in a file are relative to that file
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut Option<PathBuf>| {
        if let Some(v) = p {
            if v.is_relative() {
                *v = base.join(&*v);
            }
        }
    };
    rebase(&mut cfg.paths.corpus_proxy);
    rebase(&mut cfg.paths.corpus_truth);
    rebase(&mut cfg.paths.queries_proxy);
    rebase(&mut cfg.paths.queries_truth);
    rebase(&mut cfg.paths.qrels);
    rebase(&mut cfg.paths.out_dir);
    Ok(cfg)
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let mut cfg = match &self.config {
            Some(path) => load_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $slot:expr) => {
                if let Some(v) = &$flag {
                    $slot = v.clone().into();
                }
            };
        }
        set!(self.seed, cfg.seed);
        set!(self.threads, cfg.threads);
        set!(self.corpus_proxy, cfg.paths.corpus_proxy);
        set!(self.corpus_truth, cfg.paths.corpus_truth);
        set!(self.queries_proxy, cfg.paths.queries_proxy);
        set!(self.queries_truth, cfg.paths.queries_truth);
        set!(self.qrels, cfg.paths.qrels);
        set!(self.out_dir, cfg.paths.out_dir);
        set!(self.tag, cfg.paths.tag);
        set!(self.alpha, cfg.index.alpha);
        set!(self.cap, cfg.index.cap);
        set!(self.beam_stage1, cfg.index.beam_stage1);
        set!(self.t, cfg.index.t);
        set!(self.eps, cfg.index.eps);
        set!(self.budgets, cfg.sweep.budgets);
        set!(self.methods, cfg.sweep.methods);
        set!(self.start_mode, cfg.sweep.start_mode);
        set!(self.k, cfg.sweep.k);
        set!(self.seeds, cfg.sweep.seeds);
        set!(self.ablation, cfg.sweep.ablation);
        set!(self.timing, cfg.sweep.timing);
        set!(self.build_if_missing, cfg.sweep.build_if_missing);
        let synth_flags = self.synth_n.is_some()
            || self.synth_n_queries.is_some()
            || self.synth_dim.is_some()
            || self.synth_c.is_some()
            || self.synth_distortion.is_some()
            || self.synth_qrels_k.is_some();
        if synth_flags && cfg.synth.is_none() {
            cfg.synth = Some(SynthSection::default());
        }
        if let Some(s) = cfg.synth.as_mut() {
            set!(self.synth_n, s.n);
            set!(self.synth_n_queries, s.n_queries);
            set!(self.synth_dim, s.dim);
            set!(self.synth_c, s.c);
            set!(self.synth_distortion, s.distortion);
            set!(self.synth_qrels_k, s.qrels_k);
        }
        validate(cfg)
    }
}

fn validate(cfg: RunConfig) -> Result<Resolved, CliError> {
    let p = &cfg.paths;
    let files = [
        ("corpus_proxy", &p.corpus_proxy),
        ("corpus_truth", &p.corpus_truth),
        ("queries_proxy", &p.queries_proxy),
        ("queries_truth", &p.queries_truth),
    ];
    let given = files.iter().filter(|(_, v)| v.is_some()).count();
    if given != 0 && given != files.len() {
        let missing: Vec<&str> = files.iter().filter(|(_, v)| v.is_none()).map(|(k, _)| *k).collect();
        return Err(config_err(format!("paths incomplete, missing: {}", missing.join(", "))));
    }
    for (key, path) in files.iter().map(|(k, v)| (*k, *v)).chain([("qrels", &p.qrels)]) {
        if let Some(path) = path {
            if !path.is_file() {
                return Err(config_err(format!("{key}: file not found: {}", path.display())));
            }
        }
    }
    if !(cfg.index.alpha > 1.0) {
        return Err(config_err(format!("alpha must be > 1, got {}", cfg.index.alpha)));
    }
    if !(cfg.index.eps > 0.0 && cfg.index.eps < 1.0) {
        return Err(config_err(format!("eps must be in (0, 1), got {}", cfg.index.eps)));
    }
    if let Some(t) = cfg.index.t {
        if !(t >= 1.0) {
            return Err(config_err(format!("T must be >= 1, got {t}")));
        }
    }
    if cfg.sweep.k == 0 {
        return Err(config_err("k must be >= 1"));
    }
    if cfg.sweep.budgets.is_empty() || cfg.sweep.budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(config_err(format!("budgets must be non-empty and ascending, got {:?}", cfg.sweep.budgets)));
    }
    if let Some(&q) = cfg.sweep.budgets.iter().find(|&&q| (q as usize) < cfg.sweep.k) {
        return Err(config_err(format!("budget {q} is smaller than k = {}", cfg.sweep.k)));
    }
    if cfg.sweep.seeds.is_empty() {
        return Err(config_err("seeds must not be empty"));
    }
    let methods = cfg
        .sweep
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| config_err(e.to_string()))?;
    if methods.is_empty() {
        return Err(config_err("methods must not be empty"));
    }
    let start_mode = cfg
        .sweep
        .start_mode
        .parse::<StartMode>()
        .map_err(|e| config_err(e.to_string()))?;
    let distortion = match &cfg.synth {
        Some(s) => {
            if s.n == 0 || s.dim == 0 || !(s.c >= 1.0) {
                return Err(config_err("synth needs n >= 1, dim >= 1 and c >= 1"));
            }
            s.distortion.parse::<Distortion>().map_err(|e| config_err(e.to_string()))?
        }
        None => Distortion::Diagonal,
    };
    if cfg.threads == Some(0) {
        return Err(config_err("threads must be >= 1"));
    }
    Ok(Resolved {
        seed: cfg.seed.unwrap_or(0),
        threads: cfg.threads,
        paths: cfg.paths,
        index: cfg.index,
        sweep: cfg.sweep,
        synth: cfg.synth,
        methods,
        start_mode: Some(start_mode),
        distortion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_encode_the_standard_parameters() {
        let r = ConfigArgs::default().resolve().unwrap();
        assert_eq!(r.index.alpha, 1.2);
        assert_eq!(r.cap(), Some(64));
        assert_eq!(r.sweep.k, 10);
        assert_eq!(r.methods.len(), 3);
        assert_eq!(r.start_mode(), StartMode::HalfBudget);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[index]\nalpha = 2.0\ncap = 8\n[sweep]\nbudgets = [50, 100]\n").unwrap();
        let args = ConfigArgs { config: Some(path), cap: Some(0), ..Default::default() };
        let r = args.resolve().unwrap();
        assert_eq!(r.index.alpha, 2.0);
        assert_eq!(r.cap(), None);
        assert_eq!(r.sweep.budgets, vec![50, 100]);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let cases = [
            ConfigArgs { budgets: Some(vec![200, 100]), ..Default::default() },
            ConfigArgs { k: Some(0), ..Default::default() },
            ConfigArgs { budgets: Some(vec![5]), ..Default::default() },
            ConfigArgs { alpha: Some(1.0), ..Default::default() },
            ConfigArgs { methods: Some(vec!["nope".into()]), ..Default::default() },
            ConfigArgs { start_mode: Some("top-0".into()), ..Default::default() },
            ConfigArgs { corpus_proxy: Some("/nonexistent/a.fvecs".into()), ..Default::default() },
        ];
        for args in cases {
            assert!(matches!(args.resolve(), Err(CliError::Config(_))), "{args:?}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[index]\nbeta = 2.0\n").unwrap();
        let args = ConfigArgs { config: Some(path), ..Default::default() };
        assert!(matches!(args.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[paths]\nout_dir = \"out\"\n").unwrap();
        let r = ConfigArgs { config: Some(path), ..Default::default() }.resolve().unwrap();
        assert_eq!(r.out_dir(), dir.path().join("out"));
    }
}
