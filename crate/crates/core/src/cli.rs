//! Pipeline commands behind the `qecs` binary.
//!
//! Every stage writes its artifacts under the configured paths plus a JSON
//! manifest recording the stage's config hash and a SHA-256 per artifact.
//! Downstream stages refuse to run when an upstream manifest is missing or was
//! produced under a different configuration.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Stage};
use crate::corpus::{
    build_vocabulary, encode_tokens, generate_synthetic_corpus, preprocess_all, read_triples,
    split_dataset, tokenize_identifier, write_triples, DatasetSplit, Source, SplitManifest,
    TokenStream, Triple, Vocabulary,
};
use crate::encoder::{train_cs, EncodedPair, EncoderModel, CHECKPOINT_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::nn::PARAM_FORMAT_VERSION;
use crate::qse::{train_qse, QsePair, Seq2SeqModel};
use crate::ranker::{
    build_eval_pools, build_index, enricher_for, evaluate_testset, read_pools, search, write_pools,
    EvalField, EvalPool, RankMode, Ranker, SearchIndex, Snippet, SynonymLexicon,
    INDEX_FORMAT_VERSION,
};
use crate::rl::{train_rl, write_reward_trace, CriticModel};

pub const MANIFEST_VERSION: u32 = 1;

const CORPUS_FILE: &str = "corpus.jsonl";
const SPLIT_FILE: &str = "split.json";
const CODE_VOCAB: &str = "code_vocab.txt";
const TEXT_VOCAB: &str = "text_vocab.txt";
const QUERY_VOCAB: &str = "query_vocab.txt";

#[derive(Parser, Debug)]
#[command(
    name = "qecs",
    version,
    about = "Query-enriched neural code search pipeline"
)]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed, propagated to every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root directory for relative artifact paths.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum CommandArgs {
    /// Ingest or synthesize triples, split them, build vocabularies.
    Prepare {
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train the joint code/description embedding model.
    TrainCs,
    /// Train the query-to-description generator with teacher forcing.
    TrainQse,
    /// Critic pretraining then actor-critic fine-tuning of the generator.
    TrainRl,
    /// Embed every corpus snippet into a search index.
    BuildIndex,
    /// Sample the fixed negative pools for the test split.
    BuildPools,
    /// Score the test split and write a metric report.
    Evaluate {
        #[arg(long)]
        eval_field: Option<EvalField>,
        #[arg(long)]
        mode: Option<RankMode>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Evaluate over a grid of alpha or beta values; writes a CSV.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        eval_field: Option<EvalField>,
    },
    /// Read queries line by line and print the top results.
    Search {
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        mode: Option<RankMode>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Enrich a batch of queries; writes JSONL.
    Decode {
        /// Plain-text queries, one per line; the test split's queries when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Alpha,
    Beta,
}

impl ValueEnum for RankMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[
            RankMode::BaseOnly,
            RankMode::EnrichedOnly,
            RankMode::Hybrid,
            RankMode::QeBaseline,
            RankMode::NoRl,
        ]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

impl ValueEnum for EvalField {
    fn value_variants<'a>() -> &'a [Self] {
        &[EvalField::Query, EvalField::Description]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

/// Splits `--section.key=value` overrides from the arguments clap understands.
pub fn split_overrides(args: &[String]) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for a in args {
        if let Some(body) = a.strip_prefix("--") {
            if let Some((k, v)) = body.split_once('=') {
                if k.contains('.') {
                    overrides.push((k.to_owned(), v.to_owned()));
                    continue;
                }
            }
        }
        rest.push(a.clone());
    }
    (rest, overrides)
}

/// Folds command-line flags into the configuration.
pub fn resolve_config(cli: &Cli, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut all: Vec<(String, String)> = Vec::new();
    if let Some(s) = cli.seed {
        all.push(("seed".into(), s.to_string()));
    }
    if let Some(w) = &cli.workdir {
        all.push((
            "paths.workdir".into(),
            json_string(&w.display().to_string()),
        ));
    }
    match &cli.command {
        CommandArgs::Prepare { synthetic, corpus } => {
            if let Some(n) = synthetic {
                all.push(("corpus.synthetic".into(), n.to_string()));
            }
            if let Some(p) = corpus {
                all.push(("paths.corpus".into(), json_string(&p.display().to_string())));
            }
        }
        CommandArgs::Evaluate {
            eval_field,
            mode,
            beta,
        } => {
            push_eval_flags(&mut all, *eval_field, *mode, *beta);
        }
        CommandArgs::Sweep { eval_field, .. } => push_eval_flags(&mut all, *eval_field, None, None),
        CommandArgs::Search { top_k, mode, beta } => {
            push_eval_flags(&mut all, None, *mode, *beta);
            if let Some(k) = top_k {
                all.push(("eval.top_k".into(), k.to_string()));
            }
        }
        _ => {}
    }
    all.extend(overrides.iter().cloned());
    RunConfig::load(cli.config.as_deref(), &all)
}

fn json_string(s: &str) -> String {
    Value::String(s.to_owned()).to_string()
}

fn push_eval_flags(
    all: &mut Vec<(String, String)>,
    field: Option<EvalField>,
    mode: Option<RankMode>,
    beta: Option<f64>,
) {
    if let Some(f) = field {
        all.push(("eval.field".into(), json_string(f.name())));
    }
    if let Some(m) = mode {
        all.push(("hybrid.mode".into(), json_string(m.name())));
    }
    if let Some(b) = beta {
        all.push(("hybrid.beta".into(), b.to_string()));
    }
}

/// Parses `args` (without the program name), runs the command, and returns the exit code.
/// Failures print one diagnostic line to `err`.
pub fn main_with_args(
    args: &[String],
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let (rest, overrides) = split_overrides(args);
    let argv = std::iter::once("qecs".to_owned()).chain(rest);
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let first = e
                .to_string()
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .to_owned();
            let _ = writeln!(err, "qecs: {first}");
            return 2;
        }
    };
    let result =
        resolve_config(&cli, &overrides).and_then(|cfg| run(&cli.command, &cfg, input, out));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "qecs: error: {msg}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

/// Stage record written next to the artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Artifact path (relative to the workdir when possible) -> SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub details: Value,
}

fn versions() -> BTreeMap<String, String> {
    [
        ("qecs", env!("CARGO_PKG_VERSION").to_owned()),
        ("checkpoint_format", CHECKPOINT_FORMAT_VERSION.to_string()),
        ("param_format", PARAM_FORMAT_VERSION.to_string()),
        ("index_format", INDEX_FORMAT_VERSION.to_string()),
        ("manifest_format", MANIFEST_VERSION.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect()
}

/// SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn display_rel(cfg: &RunConfig, p: &Path) -> String {
    p.strip_prefix(&cfg.paths.workdir)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}

fn manifest_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.manifests_dir().join(format!("{name}.json"))
}

fn write_manifest(
    cfg: &RunConfig,
    name: &str,
    hash: String,
    artifacts: &[PathBuf],
    details: Value,
) -> Result<Manifest> {
    let mut files = Vec::new();
    for a in artifacts {
        collect_files(a, &mut files)?;
    }
    let artifacts = files
        .iter()
        .map(|f| Ok((display_rel(cfg, f), file_sha256(f)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let m = Manifest {
        manifest_version: MANIFEST_VERSION,
        command: name.to_owned(),
        config_hash: hash,
        seed: cfg.seed,
        versions: versions(),
        artifacts,
        details,
    };
    fs::create_dir_all(cfg.paths.manifests_dir())?;
    fs::write(
        manifest_path(cfg, name),
        serde_json::to_string_pretty(&m)? + "\n",
    )?;
    Ok(m)
}

pub fn read_manifest(cfg: &RunConfig, name: &str) -> Result<Option<Manifest>> {
    let p = manifest_path(cfg, name);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
}

/// Hash `stage` must carry under `cfg`: its own section chained with the
/// recorded hashes of its (validated) inputs.
pub fn expected_hash(cfg: &RunConfig, stage: Stage) -> Result<String> {
    let upstream = stage
        .inputs()
        .iter()
        .map(|&s| Ok(require_stage(cfg, s)?.config_hash))
        .collect::<Result<Vec<_>>>()?;
    Ok(cfg.stage_hash(stage, &upstream))
}

/// Fails unless `stage` has run under a matching configuration.
///
/// Corpus options are read only by `prepare`; later commands check the
/// prepared data by seed alone.
pub fn require_stage(cfg: &RunConfig, stage: Stage) -> Result<Manifest> {
    let m = read_manifest(cfg, stage.name())?
        .ok_or_else(|| Error::MissingPrerequisite(format!("run `{}` first", stage.name())))?;
    if stage == Stage::Prepare {
        if m.seed != cfg.seed {
            return Err(Error::MissingPrerequisite(format!(
                "data was prepared with seed {}, current seed is {}",
                m.seed, cfg.seed
            )));
        }
        return Ok(m);
    }
    if m.config_hash != expected_hash(cfg, stage)? {
        return Err(Error::MissingPrerequisite(format!(
            "`{}` artifacts were produced under a different configuration; rerun `{}`",
            stage.name(),
            stage.name()
        )));
    }
    Ok(m)
}

/// Exclusive lock on the checkpoint directory, held until dropped.
pub struct CheckpointLock {
    _file: File,
}

impl CheckpointLock {
    pub fn acquire(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.paths.checkpoint_dir();
        fs::create_dir_all(&dir)?;
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(".lock"))?;
        match file.try_lock() {
            Ok(()) => Ok(CheckpointLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(Error::InvalidInput(format!(
                "checkpoint directory {} is locked by another process",
                dir.display()
            ))),
            Err(fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }
}

/// The prepared corpus, split and vocabularies.
pub struct Prepared {
    pub corpus: Vec<Triple>,
    pub split: DatasetSplit,
    pub code_vocab: Vocabulary,
    pub text_vocab: Vocabulary,
    pub query_vocab: Option<Vocabulary>,
}

pub fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    require_stage(cfg, Stage::Prepare)?;
    let dir = cfg.paths.data_dir();
    let corpus = read_triples(&dir.join(CORPUS_FILE))?;
    let manifest: SplitManifest = serde_json::from_str(&fs::read_to_string(dir.join(SPLIT_FILE))?)?;
    let split = DatasetSplit::from_manifest(&manifest, &corpus)?;
    let qpath = dir.join(QUERY_VOCAB);
    Ok(Prepared {
        code_vocab: Vocabulary::load(&dir.join(CODE_VOCAB))?,
        text_vocab: Vocabulary::load(&dir.join(TEXT_VOCAB))?,
        query_vocab: if qpath.exists() {
            Some(Vocabulary::load(&qpath)?)
        } else {
            None
        },
        corpus,
        split,
    })
}

fn ts(text: &str, source: Source) -> TokenStream {
    TokenStream::from_clean(text, source)
}

fn encode_code(t: &Triple, vocab: &Vocabulary, max_len: usize) -> Result<Vec<usize>> {
    encode_tokens(&ts(&t.code, Source::Code), vocab, false, max_len)
}

fn cs_pairs(triples: &[Triple], model: &EncoderModel) -> Result<Vec<EncodedPair>> {
    let c = &model.config;
    triples
        .iter()
        .map(|t| {
            Ok(EncodedPair {
                description: encode_tokens(
                    &ts(&t.description, Source::Description),
                    &model.text_vocab,
                    false,
                    c.max_desc_len,
                )?,
                code: encode_code(t, &model.code_vocab, c.max_code_len)?,
            })
        })
        .collect()
}

fn qse_pairs(triples: &[Triple], model: &Seq2SeqModel) -> Result<Vec<QsePair>> {
    let max_q = model.config.max_decode_len.max(2);
    triples
        .iter()
        .filter_map(|t| t.query.as_deref().map(|q| (q, t)))
        .map(|(q, t)| {
            Ok(QsePair {
                query: encode_tokens(&ts(q, Source::Query), &model.query_vocab, true, max_q)?,
                description: encode_tokens(
                    &ts(&t.description, Source::Description),
                    &model.desc_vocab,
                    true,
                    model.config.max_decode_len + 2,
                )?,
            })
        })
        .collect()
}

/// Runs one command against a resolved configuration.
pub fn run(
    cmd: &CommandArgs,
    cfg: &RunConfig,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<()> {
    match cmd {
        CommandArgs::Prepare { .. } => prepare(cfg, out),
        CommandArgs::TrainCs => cmd_train_cs(cfg, out),
        CommandArgs::TrainQse => cmd_train_qse(cfg, out),
        CommandArgs::TrainRl => cmd_train_rl(cfg, out),
        CommandArgs::BuildIndex => cmd_build_index(cfg, out),
        CommandArgs::BuildPools => cmd_build_pools(cfg, out),
        CommandArgs::Evaluate { .. } => {
            let ctx = EvalContext::load(cfg)?;
            let report = ctx.evaluate(cfg)?;
            let dir = cfg.paths.reports_dir();
            fs::create_dir_all(&dir)?;
            let name = format!(
                "evaluate-{}-{}.json",
                cfg.hybrid.mode.name(),
                cfg.eval.field.name()
            );
            fs::write(
                dir.join(&name),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            writeln!(
                out,
                "{} {} R@1 {:.4} R@5 {:.4} R@10 {:.4} MRR {:.4} ({} queries, pool {})",
                cfg.hybrid.mode.name(),
                cfg.eval.field.name(),
                report.recall(1),
                report.recall(5),
                report.recall(10),
                report.mrr,
                report.n_queries,
                report.metadata.pool_size
            )?;
            Ok(())
        }
        CommandArgs::Sweep { param, values, .. } => cmd_sweep(cfg, *param, values, out),
        CommandArgs::Search { .. } => cmd_search(cfg, input, out),
        CommandArgs::Decode { input: src, output } => {
            cmd_decode(cfg, src.as_deref(), output.as_deref(), out)
        }
    }
}

fn prepare(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let raw = match (cfg.corpus.synthetic, cfg.paths.corpus_file()) {
        (Some(n), _) => {
            if n > crate::corpus::SYNTHETIC_CAPACITY {
                return Err(Error::Config(format!(
                    "corpus: synthetic size is limited to {}",
                    crate::corpus::SYNTHETIC_CAPACITY
                )));
            }
            generate_synthetic_corpus(n, cfg.seed)
        }
        (None, Some(p)) => {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "corpus file {} does not exist",
                    p.display()
                )));
            }
            read_triples(&p)?
        }
        (None, None) => return Err(Error::Config("set corpus.synthetic or paths.corpus".into())),
    };
    let (corpus, dropped) = preprocess_all(&raw)?;
    let split = split_dataset(&corpus, cfg.seed)?;
    let streams = |f: &dyn Fn(&Triple) -> Option<&str>, s: Source| -> Vec<TokenStream> {
        split
            .train
            .iter()
            .filter_map(|t| f(t).map(|x| ts(x, s)))
            .collect()
    };
    let code_vocab = build_vocabulary(
        &streams(&|t| Some(&t.code), Source::Code),
        cfg.corpus.vocab_size,
    )?;
    let text_vocab = build_vocabulary(
        &streams(&|t| Some(&t.description), Source::Description),
        cfg.corpus.vocab_size,
    )?;
    let queries = streams(&|t| t.query.as_deref(), Source::Query);

    let dir = cfg.paths.data_dir();
    fs::create_dir_all(&dir)?;
    write_triples(&dir.join(CORPUS_FILE), &corpus)?;
    fs::write(
        dir.join(SPLIT_FILE),
        serde_json::to_string_pretty(&split.manifest())? + "\n",
    )?;
    code_vocab.save(&dir.join(CODE_VOCAB))?;
    text_vocab.save(&dir.join(TEXT_VOCAB))?;
    let qpath = dir.join(QUERY_VOCAB);
    if queries.is_empty() {
        if qpath.exists() {
            fs::remove_file(&qpath)?;
        }
    } else {
        build_vocabulary(&queries, cfg.corpus.vocab_size)?.save(&qpath)?;
    }
    let details = json!({
        "triples": corpus.len(),
        "dropped": dropped,
        "train": split.train.len(),
        "valid": split.valid.len(),
        "test": split.test.len(),
        "code_vocab": code_vocab.len(),
        "text_vocab": text_vocab.len(),
    });
    write_manifest(
        cfg,
        Stage::Prepare.name(),
        cfg.stage_hash(Stage::Prepare, &[]),
        &[dir],
        details,
    )?;
    writeln!(
        out,
        "prepared {} triples ({} dropped): train {} valid {} test {}",
        corpus.len(),
        dropped,
        split.train.len(),
        split.valid.len(),
        split.test.len()
    )?;
    Ok(())
}

fn cmd_train_cs(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let data = load_prepared(cfg)?;
    let _lock = CheckpointLock::acquire(cfg)?;
    let mut model = EncoderModel::new(cfg.encoder.clone(), data.code_vocab, data.text_vocab)?;
    let train = cs_pairs(&data.split.train, &model)?;
    let valid = cs_pairs(&data.split.valid, &model)?;
    let history = train_cs(&mut model, &train, &valid, cfg.encoder.epochs)?;
    let ckpt = cfg.paths.checkpoint("cs");
    model.save(&ckpt)?;
    let reports = cfg.paths.reports_dir();
    fs::create_dir_all(&reports)?;
    let hist_path = reports.join("train-cs.json");
    fs::write(&hist_path, serde_json::to_string_pretty(&history)? + "\n")?;
    let last = history.last();
    write_manifest(
        cfg,
        Stage::TrainCs.name(),
        expected_hash(cfg, Stage::TrainCs)?,
        &[ckpt, hist_path],
        json!({ "fingerprint": model.fingerprint(), "epochs": history.len() }),
    )?;
    writeln!(
        out,
        "train-cs: {} epochs, final loss {:.5}",
        history.len(),
        last.map(|e| e.mean_loss).unwrap_or(f64::NAN)
    )?;
    Ok(())
}

fn cmd_train_qse(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let data = load_prepared(cfg)?;
    let query_vocab = data.query_vocab.ok_or_else(|| {
        Error::MissingPrerequisite("the corpus has no queries to train the enricher on".into())
    })?;
    let _lock = CheckpointLock::acquire(cfg)?;
    let mut model = Seq2SeqModel::new(cfg.seq2seq.clone(), query_vocab, data.text_vocab)?;
    let pairs = qse_pairs(&data.split.train, &model)?;
    let losses = train_qse(&mut model, &pairs, cfg.seq2seq.epochs)?;
    let ckpt = cfg.paths.checkpoint("qse");
    model.save(&ckpt)?;
    write_manifest(
        cfg,
        Stage::TrainQse.name(),
        expected_hash(cfg, Stage::TrainQse)?,
        &[ckpt],
        json!({ "fingerprint": model.fingerprint(), "losses": losses, "pairs": pairs.len() }),
    )?;
    writeln!(
        out,
        "train-qse: {} pairs, final loss {:.5}",
        pairs.len(),
        losses.last().copied().unwrap_or(f64::NAN)
    )?;
    Ok(())
}

/// Trains the RL stage starting from the teacher-forced checkpoint; returns the actor.
fn run_rl(
    cfg: &RunConfig,
    data: &Prepared,
    cs: &EncoderModel,
    actor_dir: &Path,
    critic_dir: &Path,
    trace: &Path,
) -> Result<Seq2SeqModel> {
    let mut actor = Seq2SeqModel::load(&cfg.paths.checkpoint("qse"))?;
    let mut critic =
        CriticModel::for_actor(&actor, cfg.rl.critic_hidden, cfg.rl.init_scale, cfg.seed)?;
    let with_query: Vec<&Triple> = data
        .split
        .train
        .iter()
        .filter(|t| t.query.is_some())
        .collect();
    let max_q = actor.config.max_decode_len.max(2);
    let mut queries = Vec::with_capacity(with_query.len());
    let mut codes = Vec::with_capacity(with_query.len());
    let mut gold = Vec::with_capacity(with_query.len());
    for t in &with_query {
        queries.push(encode_tokens(
            &ts(t.query.as_deref().unwrap_or_default(), Source::Query),
            &actor.query_vocab,
            true,
            max_q,
        )?);
        codes.push(encode_code(t, &cs.code_vocab, cs.config.max_code_len)?);
        gold.push(encode_tokens(
            &ts(&t.description, Source::Description),
            &actor.desc_vocab,
            false,
            actor.config.max_decode_len,
        )?);
    }
    let rows = train_rl(&mut actor, &mut critic, cs, &queries, &codes, gold, &cfg.rl)?;
    actor.save(actor_dir)?;
    critic.save(critic_dir)?;
    if let Some(parent) = trace.parent() {
        fs::create_dir_all(parent)?;
    }
    write_reward_trace(trace, &rows)?;
    Ok(actor)
}

fn cmd_train_rl(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let data = load_prepared(cfg)?;
    require_stage(cfg, Stage::TrainCs)?;
    require_stage(cfg, Stage::TrainQse)?;
    let _lock = CheckpointLock::acquire(cfg)?;
    let cs = EncoderModel::load(&cfg.paths.checkpoint("cs"))?;
    let (actor_dir, critic_dir) = (cfg.paths.checkpoint("rl"), cfg.paths.checkpoint("critic"));
    let trace = cfg.paths.reports_dir().join("reward_trace.csv");
    let actor = run_rl(cfg, &data, &cs, &actor_dir, &critic_dir, &trace)?;
    write_manifest(
        cfg,
        Stage::TrainRl.name(),
        expected_hash(cfg, Stage::TrainRl)?,
        &[actor_dir, critic_dir, trace.clone()],
        json!({ "fingerprint": actor.fingerprint(), "alpha": cfg.rl.alpha }),
    )?;
    writeln!(out, "train-rl: reward trace written to {}", trace.display())?;
    Ok(())
}

fn cmd_build_index(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let data = load_prepared(cfg)?;
    require_stage(cfg, Stage::TrainCs)?;
    let cs = EncoderModel::load(&cfg.paths.checkpoint("cs"))?;
    let snippets: Vec<Snippet> = data
        .corpus
        .iter()
        .map(|t| {
            Ok((
                t.id.clone(),
                encode_code(t, &cs.code_vocab, cs.config.max_code_len)?,
                t.code.clone(),
            ))
        })
        .collect::<Result<_>>()?;
    let index = build_index(&cs, &snippets)?;
    let path = cfg.paths.index_file();
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    index.save(&path)?;
    write_manifest(
        cfg,
        Stage::BuildIndex.name(),
        expected_hash(cfg, Stage::BuildIndex)?,
        &[path],
        json!({ "entries": index.len(), "dim": index.dim, "fingerprint": index.fingerprint }),
    )?;
    writeln!(out, "build-index: {} entries", index.len())?;
    Ok(())
}

fn cmd_build_pools(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let data = load_prepared(cfg)?;
    let ids: Vec<String> = data.corpus.iter().map(|t| t.id.clone()).collect();
    let set = build_eval_pools(&data.split.test, &ids, cfg.seed)?;
    let path = cfg.paths.pools_file();
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    write_pools(&path, &set.pools)?;
    write_manifest(
        cfg,
        Stage::BuildPools.name(),
        expected_hash(cfg, Stage::BuildPools)?,
        &[path],
        json!({ "pools": set.pools.len(), "negatives_per_pool": set.negatives_per_pool, "fallback": set.fallback }),
    )?;
    writeln!(
        out,
        "build-pools: {} pools of {} negatives{}",
        set.pools.len(),
        set.negatives_per_pool,
        if set.fallback {
            " (small-corpus fallback)"
        } else {
            ""
        }
    )?;
    Ok(())
}

/// Models and data loaded once for evaluation, sweeps and search.
pub struct EvalContext {
    pub corpus: Vec<Triple>,
    pub pools: Vec<EvalPool>,
    pub cs: EncoderModel,
    pub pre_rl: Option<Seq2SeqModel>,
    pub post_rl: Option<Seq2SeqModel>,
    pub lexicon: Option<SynonymLexicon>,
}

impl EvalContext {
    /// Loads whatever the configured mode needs, enforcing stage prerequisites.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        Self::load_for(cfg, cfg.hybrid.mode, true)
    }

    fn load_for(cfg: &RunConfig, mode: RankMode, with_pools: bool) -> Result<Self> {
        let data = load_prepared(cfg)?;
        require_stage(cfg, Stage::TrainCs)?;
        let cs = EncoderModel::load(&cfg.paths.checkpoint("cs"))?;
        let pools = if with_pools {
            require_stage(cfg, Stage::BuildPools)?;
            read_pools(&cfg.paths.pools_file())?
        } else {
            Vec::new()
        };
        let pre_rl = if mode == RankMode::NoRl {
            require_stage(cfg, Stage::TrainQse)?;
            Some(Seq2SeqModel::load(&cfg.paths.checkpoint("qse"))?)
        } else {
            None
        };
        let post_rl = if matches!(mode, RankMode::Hybrid | RankMode::EnrichedOnly) {
            require_stage(cfg, Stage::TrainRl)?;
            Some(Seq2SeqModel::load(&cfg.paths.checkpoint("rl"))?)
        } else {
            None
        };
        let lexicon = if mode == RankMode::QeBaseline {
            let p = cfg.paths.lexicon_file().ok_or_else(|| {
                Error::MissingPrerequisite("qe_baseline needs paths.lexicon".into())
            })?;
            Some(SynonymLexicon::load(&p)?)
        } else {
            None
        };
        Ok(EvalContext {
            corpus: data.corpus,
            pools,
            cs,
            pre_rl,
            post_rl,
            lexicon,
        })
    }

    pub fn ranker<'a>(&'a self, cfg: &'a RunConfig) -> Result<Ranker<'a>> {
        let enricher = enricher_for(cfg.hybrid.mode, self.post_rl.as_ref(), self.pre_rl.as_ref());
        Ranker::new(&self.cs, enricher, self.lexicon.as_ref(), &cfg.hybrid)
    }

    pub fn evaluate(&self, cfg: &RunConfig) -> Result<MetricReport> {
        let ranker = self.ranker(cfg)?;
        let mut report =
            evaluate_testset(&ranker, &self.pools, &self.corpus, cfg.eval.field, cfg.seed)?.report;
        report.metadata.config_hash = Some(cfg.config_hash());
        Ok(report)
    }
}

fn format_sweep_value(v: f64) -> String {
    format!("{v}")
}

fn cmd_sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
    out: &mut dyn Write,
) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep: --values is empty".into()));
    }
    let mut base = cfg.clone();
    if !matches!(base.hybrid.mode, RankMode::Hybrid | RankMode::NoRl) {
        base.hybrid.mode = RankMode::Hybrid;
    }
    let mut rows = Vec::with_capacity(values.len());
    match param {
        SweepParam::Beta => {
            let ctx = EvalContext::load(&base)?;
            for &v in values {
                let mut c = base.clone();
                c.hybrid.beta = v;
                c.validate()?;
                rows.push((v, ctx.evaluate(&c)?));
            }
        }
        SweepParam::Alpha => {
            base.hybrid.mode = RankMode::Hybrid;
            let data = load_prepared(&base)?;
            require_stage(&base, Stage::TrainCs)?;
            require_stage(&base, Stage::TrainQse)?;
            let mut ctx = EvalContext::load_for(&base, RankMode::BaseOnly, true)?;
            let _lock = CheckpointLock::acquire(&base)?;
            for &v in values {
                let mut c = base.clone();
                c.rl.alpha = v;
                c.validate()?;
                let tag = format!("sweep-alpha-{}", format_sweep_value(v));
                let dir = c.paths.checkpoint(&tag);
                let trace = c
                    .paths
                    .reports_dir()
                    .join(format!("{tag}-reward_trace.csv"));
                let actor = run_rl(
                    &c,
                    &data,
                    &ctx.cs,
                    &dir.join("rl"),
                    &dir.join("critic"),
                    &trace,
                )?;
                ctx.post_rl = Some(actor);
                rows.push((v, ctx.evaluate(&c)?));
            }
        }
    }
    let name = match param {
        SweepParam::Alpha => "alpha",
        SweepParam::Beta => "beta",
    };
    let mut csv = String::from("param,value,r1,r5,r10,mrr\n");
    for (v, r) in &rows {
        csv.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            format_sweep_value(*v),
            r.recall(1),
            r.recall(5),
            r.recall(10),
            r.mrr
        ));
    }
    let dir = cfg.paths.reports_dir();
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("sweep-{name}-{}.csv", cfg.eval.field.name()));
    fs::write(&path, &csv)?;
    out.write_all(csv.as_bytes())?;
    Ok(())
}

/// Cleans free text the same way corpus fields are cleaned.
pub fn clean_query(text: &str) -> TokenStream {
    TokenStream::new(tokenize_identifier(text), Source::Query)
}

fn cmd_search(cfg: &RunConfig, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    require_stage(cfg, Stage::BuildIndex)?;
    let ctx = EvalContext::load_for(cfg, cfg.hybrid.mode, false)?;
    let index = SearchIndex::load_for(&cfg.paths.index_file(), &ctx.cs)?;
    let ranker = ctx.ranker(cfg)?;
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let query = clean_query(&line);
        if query.is_empty() {
            continue;
        }
        if ranker.config.mode.needs_enricher() {
            writeln!(out, "enriched: {}", ranker.enrich(&query)?.join(" "))?;
        }
        for (rank, (id, score)) in search(&index, &ranker, &query, cfg.eval.top_k)?
            .iter()
            .enumerate()
        {
            writeln!(out, "{}\t{id}\t{score:.6}", rank + 1)?;
        }
        writeln!(out)?;
        out.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DecodeRow<'a> {
    query: &'a str,
    enriched_query: String,
    log_prob: f64,
}

fn cmd_decode(
    cfg: &RunConfig,
    src: Option<&Path>,
    dst: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let (stage, ckpt) = if cfg.hybrid.mode != RankMode::NoRl
        && read_manifest(cfg, Stage::TrainRl.name())?.is_some()
    {
        (Stage::TrainRl, "rl")
    } else {
        (Stage::TrainQse, "qse")
    };
    require_stage(cfg, stage)?;
    let model = Seq2SeqModel::load(&cfg.paths.checkpoint(ckpt))?;
    let queries: Vec<String> = match src {
        Some(p) => fs::read_to_string(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect(),
        None => load_prepared(cfg)?
            .split
            .test
            .into_iter()
            .filter_map(|t| t.query)
            .collect(),
    };
    let max_q = model.config.max_decode_len.max(2);
    let rows: Vec<(String, String, f64)> = queries
        .iter()
        .filter_map(|q| {
            let cleaned = clean_query(q);
            (!cleaned.is_empty()).then_some((q, cleaned))
        })
        .map(|(q, cleaned)| {
            let idx = encode_tokens(&cleaned, &model.query_vocab, true, max_q)?;
            let g = model.greedy_decode(&idx)?;
            Ok((
                q.clone(),
                model.desc_vocab.decode(&g.content()).join(" "),
                g.total_logprob(),
            ))
        })
        .collect::<Result<_>>()?;
    let path = match dst {
        Some(p) => p.to_path_buf(),
        None => cfg.paths.reports_dir().join("decode.jsonl"),
    };
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    let mut w = BufWriter::new(File::create(&path)?);
    for (q, e, lp) in &rows {
        serde_json::to_writer(
            &mut w,
            &DecodeRow {
                query: q,
                enriched_query: e.clone(),
                log_prob: *lp,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    writeln!(
        out,
        "decode: {} queries with the {ckpt} checkpoint -> {}",
        rows.len(),
        path.display()
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_splitting() {
        let args: Vec<String> = [
            "evaluate",
            "--encoder.epochs=3",
            "--beta",
            "0.2",
            "--mode=hybrid",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let (rest, ov) = split_overrides(&args);
        assert_eq!(rest, ["evaluate", "--beta", "0.2", "--mode=hybrid"]);
        assert_eq!(ov, [("encoder.epochs".to_owned(), "3".to_owned())]);
    }

    #[test]
    fn flags_fold_into_config() {
        let cli = Cli::try_parse_from([
            "qecs",
            "--seed",
            "3",
            "evaluate",
            "--mode",
            "base_only",
            "--beta",
            "0",
        ])
        .unwrap();
        let cfg = resolve_config(&cli, &[("rl.alpha".into(), "0.5".into())]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.hybrid.mode, RankMode::BaseOnly);
        assert_eq!(cfg.hybrid.beta, 0.0);
        assert_eq!(cfg.rl.alpha, 0.5);
    }

    #[test]
    fn missing_stage_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let args: Vec<String> = ["--workdir", dir.path().to_str().unwrap(), "train-rl"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = main_with_args(&args, &mut std::io::empty(), &mut out, &mut err);
        assert_eq!(code, 1);
        let msg = String::from_utf8(err).unwrap();
        assert_eq!(msg.lines().count(), 1);
        assert!(msg.contains("prepare"), "{msg}");
    }
}
