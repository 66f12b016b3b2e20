//! Command implementations behind the `msynfd` binary.
//!
//! Every command returns a [`CliError`] carrying its exit code: 2 for
//! configuration problems, 3 for data, 4 for checkpoints, 5 for unknown
//! query ids and 1 for a failed gradient check.

use std::fs;
use std::path::{Path, PathBuf};

use msynfd_core::check::{gradcheck_suite, small_config, CaseReport, GRADCHECK_TOL};
use msynfd_core::config::{CorpusFormat, RunConfig};
use msynfd_core::data::embed::VectorTable;
use msynfd_core::data::synthetic::{gen_synthetic_bias, gen_synthetic_multihop, BiasParams, MultihopParams};
use msynfd_core::data::{encode_all, load_corpus, to_jsonl_line, DataError, DocFreq, NewsExample, Vocab};
use msynfd_core::model::{EncodedExample, Model};
use msynfd_core::tensor::{BackwardFault, Tensor};
use msynfd_core::train::ablation::{mean_acc, run_once, RunResult, Splits};
use msynfd_core::train::checkpoint::{self, CheckpointError};
use msynfd_core::train::{compute_metrics, predict_scores, MetricsReport, TrainError, TrainOptions};
use msynfd_core::ModelConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const CONFIG_ENV: &str = "MSYNFD_CONFIG";

pub const EXIT_GRADCHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;
pub const EXIT_QUERY: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<msynfd_core::ConfigError> for CliError {
    fn from(e: msynfd_core::ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let mut msg = e.to_string();
        if let DataError::Invalid { errors, .. } = &e {
            for err in errors.iter().skip(1).take(20) {
                msg.push_str(&format!("\n  {err}"));
            }
        }
        Self::data(msg)
    }
}

impl From<msynfd_core::TensorError> for CliError {
    fn from(e: msynfd_core::TensorError) -> Self {
        Self::new(1, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::new(EXIT_CHECKPOINT, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => c.into(),
            TrainError::EmptySplit(_) => Self::config(e.to_string()),
            other => Self::new(1, other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Collects output files and refuses to clobber existing ones without
/// `--force`.
pub struct OutputDir {
    pub root: PathBuf,
    force: bool,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn new(root: &Path, force: bool) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::config(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            force,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn check(&self, name: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        if p.exists() && !self.force {
            return Err(CliError::config(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let p = self.check(name)?;
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::config(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&p, bytes).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
        self.written.push(p.clone());
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).expect("serializable");
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: String,
    pub config_hash: String,
    pub corpora: Vec<CorpusRecord>,
    pub model_seeds: Vec<u64>,
    pub train_seeds: Vec<u64>,
    pub artifacts: Vec<FileRecord>,
}

/// Config from `--config`, else `$MSYNFD_CONFIG`, else defaults; then
/// `--set` overrides in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    let path = path.map(Path::to_path_buf).or(env_path);
    let mut cfg = match &path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o)
            .map_err(|e| CliError::config(format!("--set {o}: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_split(path: &Path, format: CorpusFormat) -> CliResult<Vec<NewsExample>> {
    let loaded = load_corpus(path, format, false)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded.examples)
}

fn external_vectors(cfg: &RunConfig, vocab: &Vocab) -> CliResult<Option<Tensor>> {
    match cfg.model.embedding {
        msynfd_core::config::EmbeddingMode::Trainable => Ok(None),
        msynfd_core::config::EmbeddingMode::External => {
            let path = cfg
                .data
                .vectors
                .as_ref()
                .ok_or_else(|| CliError::config("model.embedding = external requires data.vectors"))?;
            let table = VectorTable::load(path)?;
            if table.dim != cfg.model.d_model {
                return Err(CliError::config(format!(
                    "vector dimension {} differs from model.d_model {}",
                    table.dim, cfg.model.d_model
                )));
            }
            Ok(Some(table.build_table(vocab)))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateSummary {
    pub replicates: usize,
    pub mean_acc: f64,
    pub mean_mac_f1: f64,
    pub runs: Vec<ReplicateRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRow {
    pub replicate: u64,
    pub dir: String,
    pub metrics: MetricsReport,
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub replicates: Option<usize>,
    pub quiet: bool,
}

/// Trains, evaluates on the test split (or validation when absent) and
/// writes `checkpoint.bin`, `history.json`, `metrics.json` and
/// `manifest.json`. With several replicates each run gets a `rep<r>/`
/// subdirectory and a `summary.json` holds the means.
pub fn cmd_train(args: &TrainArgs) -> CliResult<PathBuf> {
    let mut cfg = load_config(args.config.as_deref(), &args.overrides)?;
    if let Some(r) = args.replicates {
        cfg.set("train.replicates", &r.to_string())?;
    }
    cfg.validate()?;
    let train_path = cfg.data.train.clone().ok_or_else(|| CliError::config("data.train is not set"))?;
    let val_path = cfg.data.val.clone().ok_or_else(|| CliError::config("data.val is not set"))?;
    let out_root = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("run"));

    let fmt = cfg.data.format;
    let train_raw = load_split(&train_path, fmt)?;
    let val_raw = load_split(&val_path, fmt)?;
    let test_raw = match &cfg.data.test {
        Some(p) => Some(load_split(p, fmt)?),
        None => None,
    };
    if train_raw.is_empty() || val_raw.is_empty() {
        return Err(CliError::data("train and validation splits must be non-empty"));
    }

    let vocab = Vocab::build(train_raw.iter());
    let df = DocFreq::from_examples(train_raw.iter());
    let m = &cfg.model;
    let k = cfg.data.keywords_k;
    let enc = |x: &[NewsExample]| encode_all(x, &vocab, m.max_len, m.hops, &df, k);
    let (train, val) = (enc(&train_raw), enc(&val_raw));
    let test = test_raw.as_deref().map(enc);
    let vectors = external_vectors(&cfg, &vocab)?;
    let eval_split = test.as_deref().unwrap_or(&val);
    let splits = Splits {
        train: &train,
        val: &val,
        test: eval_split,
        vocab_size: vocab.len(),
        vectors: vectors.as_ref(),
    };

    let mut corpora = vec![
        CorpusRecord {
            role: "train".into(),
            path: train_path.display().to_string(),
            sha256: file_hash(&train_path)?,
            n: train.len(),
        },
        CorpusRecord {
            role: "val".into(),
            path: val_path.display().to_string(),
            sha256: file_hash(&val_path)?,
            n: val.len(),
        },
    ];
    if let (Some(p), Some(t)) = (&cfg.data.test, &test) {
        corpora.push(CorpusRecord {
            role: "test".into(),
            path: p.display().to_string(),
            sha256: file_hash(p)?,
            n: t.len(),
        });
    }

    let opts = TrainOptions {
        max_steps: None,
        verbose: !args.quiet,
    };
    let reps = cfg.train.replicates;
    let mut out = OutputDir::new(&out_root, args.force)?;
    let mut results: Vec<RunResult> = Vec::new();
    let mut rows = Vec::new();
    for r in 0..reps as u64 {
        let prefix = if reps == 1 { String::new() } else { format!("rep{r}/") };
        // fail before training rather than after
        for f in ["checkpoint.bin", "history.json", "metrics.json", "manifest.json"] {
            out.check(&format!("{prefix}{f}"))?;
        }
        let first = out.written().len();
        let (model, result) = run_once(&cfg.model, &cfg.train, &splits, r, &opts)?;
        out.write(&format!("{prefix}checkpoint.bin"), &checkpoint::to_bytes(&model, &vocab))?;
        out.write_json(&format!("{prefix}history.json"), &result.history)?;
        out.write_json(&format!("{prefix}metrics.json"), &result.test)?;
        if !args.quiet {
            eprintln!("replicate {r}: acc {:.4}", result.test.acc);
        }
        let mut rep_cfg = cfg.clone();
        rep_cfg.model.seed = result.model_seed;
        rep_cfg.train.seed = result.train_seed;
        let artifacts = out.written()[first..]
            .iter()
            .map(|p| {
                Ok(FileRecord {
                    path: p.display().to_string(),
                    sha256: file_hash(p)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = RunManifest {
            tool: "msynfd".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: rep_cfg.to_text(None),
            config_hash: rep_cfg.model.config_hash(),
            corpora: corpora.clone(),
            model_seeds: vec![result.model_seed],
            train_seeds: vec![result.train_seed],
            artifacts,
        };
        out.write_json(&format!("{prefix}manifest.json"), &manifest)?;
        rows.push(ReplicateRow {
            replicate: r,
            dir: out.path(&prefix).display().to_string(),
            metrics: result.test.clone(),
        });
        results.push(result);
    }
    if reps > 1 {
        let summary = ReplicateSummary {
            replicates: reps,
            mean_acc: mean_acc(&results),
            mean_mac_f1: results.iter().map(|r| r.test.mac_f1).sum::<f64>() / reps as f64,
            runs: rows,
        };
        out.write_json("summary.json", &summary)?;
    }
    Ok(out_root)
}

/// Loads a checkpoint and encodes a corpus with its vocabulary.
pub fn load_for_inference(
    checkpoint_path: &Path,
    corpus: &Path,
    format: CorpusFormat,
) -> CliResult<(Model, Vocab, Vec<NewsExample>, Vec<EncodedExample>)> {
    let (model, vocab) = checkpoint::load(checkpoint_path)?;
    let raw = load_split(corpus, format)?;
    let df = DocFreq::from_examples(raw.iter());
    let c = &model.config;
    let enc = encode_all(&raw, &vocab, c.max_len, c.hops, &df, 5);
    Ok((model, vocab, raw, enc))
}

pub fn cmd_eval(checkpoint_path: &Path, corpus: &Path, format: CorpusFormat) -> CliResult<MetricsReport> {
    let (model, _, _, enc) = load_for_inference(checkpoint_path, corpus, format)?;
    if enc.is_empty() {
        return Err(CliError::data(format!("{}: no examples to evaluate", corpus.display())));
    }
    let scores = predict_scores(&model, &enc)?;
    let labels: Vec<u8> = enc.iter().map(|e| e.label).collect();
    let m = compute_metrics(&scores, &labels);
    if m.auc.is_none() {
        eprintln!("warning: only one class present; auc and spauc are undefined");
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionRow {
    pub id: String,
    pub p_fake_main: f64,
    pub fake: bool,
    pub label: u8,
}

pub fn cmd_predict(checkpoint_path: &Path, corpus: &Path, format: CorpusFormat) -> CliResult<Vec<PredictionRow>> {
    let (model, _, _, enc) = load_for_inference(checkpoint_path, corpus, format)?;
    let scores = predict_scores(&model, &enc)?;
    Ok(enc
        .iter()
        .zip(scores)
        .map(|(e, p)| PredictionRow {
            id: e.id.clone(),
            p_fake_main: p,
            fake: p > 0.5,
            label: e.label,
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct HeadDump {
    pub head: usize,
    #[serde(flatten)]
    pub trace: msynfd_core::saa::SaaHeadTrace,
}

#[derive(Debug, Clone, Serialize)]
pub struct SemanticDump {
    pub head: usize,
    pub slope: f64,
    pub attention: Tensor,
}

#[derive(Debug, Clone, Serialize)]
pub struct InspectDump {
    pub id: String,
    pub tokens: Vec<String>,
    pub p_fake: f64,
    pub hops: usize,
    /// Tree distances; `null` for token pairs in different trees.
    pub distances: Vec<Vec<Option<usize>>>,
    pub hop_adjacency: Vec<Tensor>,
    pub saa: Vec<HeadDump>,
    pub semantic: Vec<SemanticDump>,
    pub pooling: Vec<f64>,
}

pub fn cmd_inspect(checkpoint_path: &Path, corpus: &Path, format: CorpusFormat, id: &str) -> CliResult<InspectDump> {
    let (model, _, raw, enc) = load_for_inference(checkpoint_path, corpus, format)?;
    let k = enc
        .iter()
        .position(|e| e.id == id)
        .ok_or_else(|| CliError::new(EXIT_QUERY, format!("no example with id `{id}` in {}", corpus.display())))?;
    let ex = &enc[k];
    let (pred, trace) = model.trace(ex)?;
    let n = ex.ids.len();
    Ok(InspectDump {
        id: ex.id.clone(),
        tokens: raw[k].tokens[..n].to_vec(),
        p_fake: pred.p_fake(),
        hops: ex.hops.hops(),
        distances: (0..n).map(|i| (0..n).map(|j| ex.hops.distance(i, j)).collect()).collect(),
        hop_adjacency: ex.hops.adjacencies().to_vec(),
        saa: trace
            .saa
            .into_iter()
            .enumerate()
            .map(|(head, trace)| HeadDump { head, trace })
            .collect(),
        semantic: trace
            .semantic
            .map(|s| {
                s.attention
                    .into_iter()
                    .zip(s.slopes)
                    .enumerate()
                    .map(|(head, (attention, slope))| SemanticDump { head, slope, attention })
                    .collect()
            })
            .unwrap_or_default(),
        pooling: trace.pooling,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScale {
    Small,
    Full,
}

pub fn gradcheck_config(scale: GradScale) -> ModelConfig {
    match scale {
        GradScale::Small => small_config(),
        GradScale::Full => ModelConfig {
            d_model: 24,
            heads: 4,
            hops: 3,
            d_hidden: 32,
            d_ffn: Some(48),
            gate_tau: 1.0,
            ..ModelConfig::default()
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub passed: bool,
    pub max_rel_error: f64,
    pub cases: Vec<CaseReport>,
}

pub fn cmd_gradcheck(scale: GradScale, seed: u64, fault: Option<BackwardFault>) -> CliResult<GradcheckReport> {
    let cases = gradcheck_suite(&gradcheck_config(scale), seed, fault).map_err(|e| CliError::new(1, e.to_string()))?;
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOL,
        passed: cases.iter().all(|c| c.passed),
        max_rel_error: cases.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max),
        cases,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    Multihop,
    Bias,
}

#[derive(Debug, Clone)]
pub struct GenArgs {
    pub kind: GenKind,
    pub out: PathBuf,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub k_hop: usize,
    pub vocab_size: usize,
    pub flip_rate: f64,
    pub label_noise: f64,
    pub force: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenSplit {
    pub name: String,
    pub path: String,
    pub n: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenManifest {
    pub kind: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub splits: Vec<GenSplit>,
}

fn jsonl(examples: &[NewsExample]) -> String {
    examples.iter().map(|e| to_jsonl_line(e) + "\n").collect()
}

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and `gen_manifest.json`.
///
/// For the bias corpus the validation split is drawn with the keyword
/// uninformative (`flip_rate = 0.5`), so model selection does not reward
/// the shortcut.
pub fn cmd_gen(args: &GenArgs) -> CliResult<GenManifest> {
    let (splits, params): ([(&str, Vec<NewsExample>); 3], serde_json::Value) = match args.kind {
        GenKind::Multihop => {
            if args.k_hop < 2 {
                return Err(CliError::config("k_hop must be at least 2"));
            }
            let p = MultihopParams {
                n_examples: args.n_train + args.n_val + args.n_test,
                seed: args.seed,
                k_hop: args.k_hop,
                vocab_size: args.vocab_size,
                min_len: (2 * args.k_hop + 2).max(8),
                max_len: (2 * args.k_hop + 2).max(8) + 8,
            };
            let mut all = gen_synthetic_multihop(&p);
            let test = all.split_off(args.n_train + args.n_val);
            let val = all.split_off(args.n_train);
            (
                [("train", all), ("val", val), ("test", test)],
                serde_json::to_value(p).expect("params serialize"),
            )
        }
        GenKind::Bias => {
            if !(0.0..=1.0).contains(&args.flip_rate) || !(0.0..=1.0).contains(&args.label_noise) {
                return Err(CliError::config("flip_rate and label_noise must lie in [0, 1]"));
            }
            let p = BiasParams {
                n_train: args.n_train,
                n_test: args.n_test,
                seed: args.seed,
                flip_rate: args.flip_rate,
                label_noise: args.label_noise,
                vocab_size: args.vocab_size,
                ..BiasParams::default()
            };
            let (train, test) = gen_synthetic_bias(&p);
            let vp = BiasParams {
                n_train: args.n_val,
                n_test: 0,
                seed: args.seed.wrapping_add(0x5eed),
                flip_rate: 0.5,
                ..p
            };
            let (mut val, _) = gen_synthetic_bias(&vp);
            for e in &mut val {
                e.id = e.id.replacen("bt", "bv", 1);
            }
            (
                [("train", train), ("val", val), ("test", test)],
                serde_json::json!({ "corpus": p, "val": vp }),
            )
        }
    };
    let mut out = OutputDir::new(&args.out, args.force)?;
    let mut records = Vec::new();
    for (name, examples) in &splits {
        let body = jsonl(examples);
        let file = format!("{name}.jsonl");
        let path = out.write(&file, body.as_bytes())?;
        records.push(GenSplit {
            name: name.to_string(),
            path: path.display().to_string(),
            n: examples.len(),
            sha256: sha256_hex(body.as_bytes()),
        });
    }
    let manifest = GenManifest {
        kind: match args.kind {
            GenKind::Multihop => "multihop".into(),
            GenKind::Bias => "bias".into(),
        },
        seed: args.seed,
        params,
        splits: records,
    };
    out.write_json("gen_manifest.json", &manifest)?;
    Ok(manifest)
}

pub fn write_json_to(path: Option<&Path>, value: &impl Serialize, force: bool) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    if let Some(p) = path {
        if p.exists() && !force {
            return Err(CliError::config(format!("{} exists; pass --force to overwrite", p.display())));
        }
        fs::write(p, &s).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
    }
    Ok(s)
}
