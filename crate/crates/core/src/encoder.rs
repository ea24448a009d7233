//! Two-tower code/text embedding models trained with a margin ranking loss.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Vocabulary, NUM_SPECIALS, PAD};
use crate::error::{Error, Result};
use crate::metrics::{self, RankResult};
use crate::nn::{self, Adam, Gradients, Linear, Lstm, Matrix, ParamId, ParamStore, Tape, Var};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Embedding table with learned attention pooling.
    BagAttention,
    /// Bi-directional LSTM, final states projected to the joint space.
    Recurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TowerKind {
    Code,
    Text,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub model_kind: ModelKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Epochs without validation MRR improvement before the learning rate decays.
    pub decay_patience: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub init_scale: f64,
    pub max_code_len: usize,
    pub max_desc_len: usize,
    pub max_query_len: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            model_kind: ModelKind::BagAttention,
            embed_dim: 128,
            hidden_dim: 256,
            margin: 0.05,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            decay_patience: 2,
            epochs: 120,
            batch_size: 32,
            clip_norm: 5.0,
            init_scale: 0.1,
            max_code_len: 200,
            max_desc_len: 60,
            max_query_len: 30,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if self.margin.is_nan() || self.margin <= 0.0 {
            return bad("margin must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("dimensions must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.max_code_len == 0 || self.max_desc_len == 0 || self.max_query_len == 0 {
            return bad("max lengths must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Tower {
    Bag {
        emb: ParamId,
        attn: ParamId,
    },
    Recurrent {
        emb: ParamId,
        fwd: Lstm,
        bwd: Lstm,
        /// Separate recurrent pair over the method name (code tower only).
        name: Option<(Lstm, Lstm)>,
        proj: Linear,
    },
}

/// Joint embedding model: a code tower and a text tower over separate vocabularies.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub params: ParamStore,
    pub code_vocab: Vocabulary,
    pub text_vocab: Vocabulary,
    code_tower: Tower,
    text_tower: Tower,
}

fn build_tower<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    kind: ModelKind,
    vocab_size: usize,
    cfg: &EncoderConfig,
    with_name: bool,
    rng: &mut R,
) -> Tower {
    let s = cfg.init_scale;
    let emb = store.add_uniform(format!("{prefix}.emb"), vocab_size, cfg.embed_dim, s, rng);
    match kind {
        ModelKind::BagAttention => {
            let attn = store.add_uniform(format!("{prefix}.attn"), cfg.embed_dim, 1, s, rng);
            Tower::Bag { emb, attn }
        }
        ModelKind::Recurrent => {
            let h = cfg.hidden_dim;
            let fwd = Lstm::new(store, &format!("{prefix}.fwd"), cfg.embed_dim, h, s, rng);
            let bwd = Lstm::new(store, &format!("{prefix}.bwd"), cfg.embed_dim, h, s, rng);
            let name = with_name.then(|| {
                (
                    Lstm::new(
                        store,
                        &format!("{prefix}.name_fwd"),
                        cfg.embed_dim,
                        h,
                        s,
                        rng,
                    ),
                    Lstm::new(
                        store,
                        &format!("{prefix}.name_bwd"),
                        cfg.embed_dim,
                        h,
                        s,
                        rng,
                    ),
                )
            });
            let width = if with_name { 4 * h } else { 2 * h };
            let proj = Linear::new(
                store,
                &format!("{prefix}.proj"),
                width,
                cfg.embed_dim,
                s,
                rng,
            );
            Tower::Recurrent {
                emb,
                fwd,
                bwd,
                name,
                proj,
            }
        }
    }
}

fn bi_final(t: &mut Tape, fwd: &Lstm, bwd: &Lstm, xs: Var) -> Var {
    let (_, hf) = fwd.run(t, xs, false);
    let (_, hb) = bwd.run(t, xs, true);
    t.concat_cols(&[hf, hb])
}

impl EncoderModel {
    pub fn new(
        config: EncoderConfig,
        code_vocab: Vocabulary,
        text_vocab: Vocabulary,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let kind = config.model_kind;
        let code_tower = build_tower(
            &mut params,
            "code",
            kind,
            code_vocab.len(),
            &config,
            true,
            &mut rng,
        );
        let text_tower = build_tower(
            &mut params,
            "text",
            kind,
            text_vocab.len(),
            &config,
            false,
            &mut rng,
        );
        Ok(EncoderModel {
            config,
            params,
            code_vocab,
            text_vocab,
            code_tower,
            text_tower,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn vocab(&self, tower: TowerKind) -> &Vocabulary {
        match tower {
            TowerKind::Code => &self.code_vocab,
            TowerKind::Text => &self.text_vocab,
        }
    }

    /// Records the embedding of `indices` (positions where `mask` is false are skipped).
    pub fn embed_on_tape(
        &self,
        t: &mut Tape,
        tower: TowerKind,
        indices: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        if indices.is_empty() {
            return Err(Error::Empty("index sequence"));
        }
        if indices.len() != mask.len() {
            return Err(Error::DimensionMismatch {
                left: indices.len(),
                right: mask.len(),
            });
        }
        let valid: Vec<usize> = indices
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&i, _)| i)
            .collect();
        if valid.is_empty() {
            return Err(Error::Empty("all positions are masked"));
        }
        let vocab_len = self.vocab(tower).len();
        if let Some(&bad) = valid.iter().find(|&&i| i >= vocab_len) {
            return Err(Error::InvalidInput(format!(
                "index {bad} outside vocabulary of {vocab_len}"
            )));
        }
        let spec = match tower {
            TowerKind::Code => &self.code_tower,
            TowerKind::Text => &self.text_tower,
        };
        Ok(match spec {
            Tower::Bag { emb, attn } => {
                let xs = t.gather(*emb, &valid);
                let a = t.param(*attn);
                let scores = t.matmul(xs, a);
                let scores = t.transpose(scores);
                let weights = t.softmax_rows(scores);
                t.matmul(weights, xs)
            }
            Tower::Recurrent {
                emb,
                fwd,
                bwd,
                name,
                proj,
            } => {
                let xs = t.gather(*emb, &valid);
                let mut state = bi_final(t, fwd, bwd, xs);
                if let Some((nf, nb)) = name {
                    let first = valid
                        .iter()
                        .copied()
                        .find(|&i| i >= NUM_SPECIALS)
                        .unwrap_or(valid[0]);
                    let nx = t.gather(*emb, &[first]);
                    let ns = bi_final(t, nf, nb, nx);
                    state = t.concat_cols(&[state, ns]);
                }
                let y = proj.forward(t, state);
                t.tanh(y)
            }
        })
    }

    /// Embedding of one sequence with an explicit validity mask.
    pub fn embed_sequence(
        &self,
        tower: TowerKind,
        indices: &[usize],
        mask: &[bool],
    ) -> Result<Vec<f64>> {
        let mut t = Tape::new(&self.params);
        let v = self.embed_on_tape(&mut t, tower, indices, mask)?;
        Ok(t.value(v).data.clone())
    }

    /// Embedding with PAD positions masked out.
    pub fn embed(&self, tower: TowerKind, indices: &[usize]) -> Result<Vec<f64>> {
        let mask: Vec<bool> = indices.iter().map(|&i| i != PAD).collect();
        self.embed_sequence(tower, indices, &mask)
    }

    /// Embeds many sequences in parallel; output order matches input order.
    pub fn embed_all(&self, tower: TowerKind, seqs: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        seqs.par_iter().map(|s| self.embed(tower, s)).collect()
    }

    /// Records `max(0, margin - sim(d, c+) + sim(d, c-))`.
    pub fn triplet_loss_on_tape(
        &self,
        t: &mut Tape,
        description: &[usize],
        positive_code: &[usize],
        negative_code: &[usize],
    ) -> Result<Var> {
        let full = |s: &[usize]| vec![true; s.len()];
        let d = self.embed_on_tape(t, TowerKind::Text, description, &full(description))?;
        let cp = self.embed_on_tape(t, TowerKind::Code, positive_code, &full(positive_code))?;
        let cn = self.embed_on_tape(t, TowerKind::Code, negative_code, &full(negative_code))?;
        let sp = t.cosine(d, cp);
        let sn = t.cosine(d, cn);
        let diff = t.sub(sn, sp);
        let margin = t.constant(Matrix::scalar(self.config.margin));
        let raw = t.add(diff, margin);
        Ok(t.relu(raw))
    }

    /// SHA-256 over the configuration, both vocabularies and every parameter bit.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for v in [&self.code_vocab, &self.text_vocab] {
            for tok in v.tokens() {
                h.update(tok.as_bytes());
                h.update([0u8]);
            }
        }
        h.update(self.params.fingerprint().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "encoder".into(),
            config: serde_json::to_value(&self.config)?,
        };
        fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        self.code_vocab.save(&dir.join("code_vocab.txt"))?;
        self.text_vocab.save(&dir.join("text_vocab.txt"))?;
        let mut blob = Vec::new();
        self.params.write_to(&mut blob)?;
        fs::write(dir.join("params.bin"), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = CheckpointMeta::read(dir, "encoder")?;
        let config: EncoderConfig = serde_json::from_value(meta.config)?;
        let code_vocab = Vocabulary::load(&dir.join("code_vocab.txt"))?;
        let text_vocab = Vocabulary::load(&dir.join("text_vocab.txt"))?;
        let mut model = EncoderModel::new(config, code_vocab, text_vocab)?;
        let params = ParamStore::read_from(fs::File::open(dir.join("params.bin"))?)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Checkpoint(
                "parameter layout does not match config".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }
}

/// Header written as `config.json` in every checkpoint directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: String,
    pub config: serde_json::Value,
}

impl CheckpointMeta {
    pub fn read(dir: &Path, expected_kind: &str) -> Result<Self> {
        let path = dir.join("config.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_FORMAT_VERSION,
                found: meta.format_version,
            });
        }
        if meta.kind != expected_kind {
            return Err(Error::Checkpoint(format!(
                "expected a {expected_kind} checkpoint, found {}",
                meta.kind
            )));
        }
        Ok(meta)
    }
}

/// Cosine similarity; 0 when either vector has norm below 1e-12.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(nn::cosine(a, b))
}

/// `max(0, margin - sim_pos + sim_neg)`.
pub fn ranking_loss(sim_pos: f64, sim_neg: f64, margin: f64) -> f64 {
    (margin - sim_pos + sim_neg).max(0.0)
}

/// Uniform draw from `ids` excluding every occurrence of `positive`.
pub fn sample_negative<I: PartialEq + Clone, R: Rng>(
    ids: &[I],
    positive: &I,
    rng: &mut R,
) -> Result<I> {
    if ids.len() < 2 {
        return Err(Error::InvalidInput(
            "negative sampling needs at least two ids".into(),
        ));
    }
    let candidates: Vec<&I> = ids.iter().filter(|i| *i != positive).collect();
    candidates
        .choose(rng)
        .map(|&i| i.clone())
        .ok_or_else(|| Error::InvalidInput("no id differs from the positive".into()))
}

/// A description/code training pair, both as index sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub description: Vec<usize>,
    pub code: Vec<usize>,
}

/// Optimizer and sampling state that persists across CS training epochs.
#[derive(Clone, Debug)]
pub struct CsTrainer {
    pub optimizer: Adam,
    rng: ChaCha8Rng,
}

impl CsTrainer {
    pub fn new(model: &EncoderModel) -> Self {
        CsTrainer {
            optimizer: Adam::new(&model.params, model.config.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x5eed_c0de),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.lr
    }

    pub fn decay(&mut self, factor: f64) {
        self.optimizer.lr *= factor;
    }
}

/// One shuffled pass of triplet updates. Returns the mean triplet loss.
pub fn train_cs_epoch(
    trainer: &mut CsTrainer,
    model: &mut EncoderModel,
    pairs: &[EncodedPair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least two pairs to sample negatives".into(),
        ));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut trainer.rng);
    let positions: Vec<usize> = (0..pairs.len()).collect();
    let triplets: Vec<(usize, usize)> = order
        .iter()
        .map(|&p| sample_negative(&positions, &p, &mut trainer.rng).map(|n| (p, n)))
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    for batch in triplets.chunks(model.config.batch_size) {
        let results: Vec<Result<(f64, Option<Gradients>)>> = batch
            .par_iter()
            .map(|&(p, n)| {
                let mut t = Tape::new(&model.params);
                let loss = model.triplet_loss_on_tape(
                    &mut t,
                    &pairs[p].description,
                    &pairs[p].code,
                    &pairs[n].code,
                )?;
                let value = t.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite("ranking loss"));
                }
                Ok((value, (value > 0.0).then(|| t.backward(loss))))
            })
            .collect();
        let mut grads = Gradients::new(model.params.len());
        for r in results {
            let (value, g) = r?;
            total += value;
            if let Some(g) = g {
                grads.merge(&g);
            }
        }
        grads.scale(1.0 / batch.len() as f64);
        if !grads.all_finite() {
            return Err(Error::NonFinite("ranking loss gradient"));
        }
        grads.clip_global_norm(&model.params, model.config.clip_norm);
        trainer.optimizer.step(&mut model.params, &grads);
        if !model.params.all_finite() {
            return Err(Error::NonFinite("encoder parameters"));
        }
    }
    Ok(total / pairs.len() as f64)
}

/// Ranks every pair's code against all codes in `pairs` using its description.
pub fn pool_ranks(model: &EncoderModel, pairs: &[EncodedPair]) -> Result<Vec<RankResult>> {
    let descs: Vec<Vec<usize>> = pairs.iter().map(|p| p.description.clone()).collect();
    let codes: Vec<Vec<usize>> = pairs.iter().map(|p| p.code.clone()).collect();
    let dv = model.embed_all(TowerKind::Text, &descs)?;
    let cv = model.embed_all(TowerKind::Code, &codes)?;
    dv.par_iter()
        .enumerate()
        .map(|(i, d)| {
            let scores: Vec<(usize, f64)> = cv
                .iter()
                .enumerate()
                .map(|(j, c)| Ok((j, similarity(d, c)?)))
                .collect::<Result<_>>()?;
            metrics::frank(&scores, &i)
        })
        .collect()
}

/// Per-epoch record of a CS training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_mrr: Option<f64>,
    pub learning_rate: f64,
}

/// Full CS schedule: `epochs` passes, halving-style decay on a validation plateau.
pub fn train_cs(
    model: &mut EncoderModel,
    train: &[EncodedPair],
    valid: &[EncodedPair],
    epochs: usize,
) -> Result<Vec<CsEpoch>> {
    let mut trainer = CsTrainer::new(model);
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let lr = trainer.learning_rate();
        let mean_loss = train_cs_epoch(&mut trainer, model, train)?;
        let valid_mrr = if valid.len() >= 2 {
            Some(metrics::mrr(&pool_ranks(model, valid)?)?)
        } else {
            None
        };
        if let Some(m) = valid_mrr {
            if m > best {
                best = m;
                stale = 0;
            } else {
                stale += 1;
                if stale >= model.config.decay_patience {
                    trainer.decay(model.config.lr_decay);
                    stale = 0;
                }
            }
        }
        log::info!("cs epoch {epoch}: loss {mean_loss:.5} valid_mrr {valid_mrr:?} lr {lr:e}");
        history.push(CsEpoch {
            epoch,
            mean_loss,
            valid_mrr,
            learning_rate: lr,
        });
    }
    Ok(history)
}
