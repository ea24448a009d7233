//! Run configuration: JSON file, dotted `--key=value` overrides, and stage hashes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::qse::Seq2SeqConfig;
use crate::ranker::{EvalField, HybridConfig};
use crate::rl::RlConfig;

/// Artifact locations. Relative entries resolve against `workdir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub workdir: PathBuf,
    /// Raw JSONL corpus; unused when `corpus.synthetic` is set.
    pub corpus: Option<PathBuf>,
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub index: PathBuf,
    pub pools: PathBuf,
    pub reports: PathBuf,
    pub manifests: PathBuf,
    pub lexicon: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            workdir: PathBuf::from("qecs-run"),
            corpus: None,
            data: PathBuf::from("data"),
            checkpoints: PathBuf::from("checkpoints"),
            index: PathBuf::from("index.jsonl"),
            pools: PathBuf::from("pools.jsonl"),
            reports: PathBuf::from("reports"),
            manifests: PathBuf::from("manifests"),
            lexicon: None,
        }
    }
}

impl PathsConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve(&self.data)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.resolve(&self.checkpoints)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.checkpoint_dir().join(name)
    }

    pub fn index_file(&self) -> PathBuf {
        self.resolve(&self.index)
    }

    pub fn pools_file(&self) -> PathBuf {
        self.resolve(&self.pools)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.resolve(&self.reports)
    }

    pub fn manifests_dir(&self) -> PathBuf {
        self.resolve(&self.manifests)
    }

    pub fn corpus_file(&self) -> Option<PathBuf> {
        self.corpus.as_deref().map(|p| self.resolve(p))
    }

    pub fn lexicon_file(&self) -> Option<PathBuf> {
        self.lexicon.as_deref().map(|p| self.resolve(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Generate this many synthetic triples instead of reading `paths.corpus`.
    pub synthetic: Option<usize>,
    pub vocab_size: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            synthetic: None,
            vocab_size: crate::corpus::DEFAULT_VOCAB_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub field: EvalField,
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            field: EvalField::Query,
            top_k: 10,
        }
    }
}

/// Everything a pipeline run needs. Module seeds are taken from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub encoder: EncoderConfig,
    pub seq2seq: Seq2SeqConfig,
    pub rl: RlConfig,
    pub hybrid: HybridConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    /// Desk scale: the long schedule with every epoch count divided by ten, and
    /// batches of two so the shortened schedule still takes enough optimizer steps.
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: 7,
            paths: PathsConfig::default(),
            corpus: CorpusConfig::default(),
            encoder: EncoderConfig {
                epochs: 12,
                batch_size: 2,
                ..Default::default()
            },
            seq2seq: Seq2SeqConfig {
                epochs: 4,
                batch_size: 2,
                ..Default::default()
            },
            rl: RlConfig {
                epochs_critic: 2,
                epochs_joint: 8,
                ..Default::default()
            },
            hybrid: HybridConfig::default(),
            eval: EvalConfig::default(),
        };
        cfg.propagate_seed();
        cfg
    }
}

/// Pipeline stages whose artifacts carry a config hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Prepare,
    TrainCs,
    TrainQse,
    TrainRl,
    BuildIndex,
    BuildPools,
}

impl Stage {
    /// Stages whose artifacts this stage consumes.
    pub fn inputs(self) -> &'static [Stage] {
        match self {
            Stage::Prepare => &[],
            Stage::TrainCs | Stage::TrainQse | Stage::BuildPools => &[Stage::Prepare],
            Stage::TrainRl => &[Stage::Prepare, Stage::TrainCs, Stage::TrainQse],
            Stage::BuildIndex => &[Stage::Prepare, Stage::TrainCs],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::TrainCs => "train-cs",
            Stage::TrainQse => "train-qse",
            Stage::TrainRl => "train-rl",
            Stage::BuildIndex => "build-index",
            Stage::BuildPools => "build-pools",
        }
    }
}

impl RunConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or defaults when `None`) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut v = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for (k, val) in overrides {
            apply_override(&mut v, k, val)?;
        }
        Self::from_value(v)
    }

    pub fn propagate_seed(&mut self) {
        self.encoder.seed = self.seed;
        self.seq2seq.seed = self.seed;
        self.rl.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.seq2seq.validate()?;
        self.rl.validate()?;
        self.hybrid.validate()?;
        if self.corpus.vocab_size == 0 {
            return Err(Error::Config(
                "corpus: vocab_size must be at least 1".into(),
            ));
        }
        if self.eval.top_k == 0 {
            return Err(Error::Config("eval: top_k must be at least 1".into()));
        }
        Ok(())
    }

    /// The configuration section `stage` reads directly, excluding anything
    /// inherited from upstream stages.
    ///
    /// Paths, hybrid and evaluation settings never appear here, so relocating
    /// a run or changing the ranking mode keeps artifacts valid.
    pub fn stage_section(&self, stage: Stage) -> Value {
        match stage {
            Stage::Prepare => {
                serde_json::json!({ "seed": self.seed, "corpus": json(&self.corpus) })
            }
            Stage::TrainCs => json(&self.encoder),
            Stage::TrainQse => json(&self.seq2seq),
            Stage::TrainRl => json(&self.rl),
            Stage::BuildIndex | Stage::BuildPools => serde_json::json!({ "seed": self.seed }),
        }
    }

    /// Hash of `stage`'s own section chained with the hashes of its inputs.
    pub fn stage_hash(&self, stage: Stage, upstream: &[String]) -> String {
        hash_value(&serde_json::json!({
            "stage": stage.name(),
            "upstream": upstream,
            "section": self.stage_section(stage),
        }))
    }

    /// Hash of the whole configuration except paths.
    pub fn config_hash(&self) -> String {
        let mut v = json(self);
        if let Value::Object(m) = &mut v {
            m.remove("paths");
        }
        hash_value(&v)
    }
}

fn json<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("config sections serialize")
}

/// SHA-256 of the compact JSON encoding (object keys are sorted by `serde_json`).
pub fn hash_value(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// Sets the dotted `key` in `root`. The value parses as JSON when possible, else as a string.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    if key.is_empty() {
        return Err(Error::Config("empty override key".into()));
    }
    let parsed =
        serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override {key}: {} is not a section",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), parsed);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_owned())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

/// The long-schedule variant of the default configuration.
pub fn paper_scale() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.encoder.epochs = 120;
    cfg.seq2seq.epochs = 20;
    cfg.rl.epochs_critic = 10;
    cfg.rl.epochs_joint = 40;
    cfg.encoder.batch_size = EncoderConfig::default().batch_size;
    cfg.seq2seq.batch_size = Seq2SeqConfig::default().batch_size;
    cfg
}
