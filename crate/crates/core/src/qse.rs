//! Query enrichment: a bi-LSTM encoder over the query and an attention LSTM
//! decoder that generates description-vocabulary text.
//!
//! Decoder wiring at step `t`:
//!
//! ```text
//! ctx_t = sum_i softmax_i(v . tanh(W_a e_i + U_a h_{t-1} + b_a)) e_i
//! h_t   = LSTM([emb(d_{t-1}); ctx_t], h_{t-1})
//! p(d_t | d_<t, q) = softmax(W h_t + b)
//! ```
//!
//! where `e_i` are the concatenated forward/backward encoder states and
//! `h_0 = tanh(W_0 [fwd_last; bwd_first] + b_0)`. PAD and BOS are never
//! emitted: their logits are pinned to a large negative constant.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Vocabulary, BOS, EOS, NUM_SPECIALS, PAD};
use crate::encoder::{CheckpointMeta, CHECKPOINT_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Gradients, Linear, Lstm, Matrix, ParamId, ParamStore, Tape, Var};

const BANNED_LOGIT: f64 = -1e30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seq2SeqConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub max_decode_len: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Half-width of the uniform init for dense weights.
    pub init_scale: f64,
    /// Half-width of the uniform init for the two embedding tables.
    pub embed_init_scale: f64,
    pub seed: u64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            embed_dim: 128,
            hidden_dim: 256,
            attention_dim: 256,
            max_decode_len: 60,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            clip_norm: 5.0,
            init_scale: 0.1,
            embed_init_scale: 1.0,
            seed: 0,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("seq2seq: {m}")));
        if self.max_decode_len < 2 {
            return bad("max_decode_len must be at least 2");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.attention_dim == 0 {
            return bad("dimensions must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sampled,
}

/// Generated description indices (no BOS; EOS only as the final token) with
/// the log-probability of each chosen token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub mode: DecodeMode,
}

impl GenerationResult {
    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }

    /// True when generation stopped on EOS rather than the length cap.
    pub fn ended_with_eos(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    /// Content tokens only: EOS and UNK removed.
    pub fn content(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .copied()
            .filter(|&t| t >= NUM_SPECIALS)
            .collect()
    }
}

/// Per-step diagnostics of one decode.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub probs: Vec<f64>,
    pub attention: Vec<f64>,
    /// Decoder hidden state that produced this step's distribution.
    pub hidden: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Layout {
    q_emb: ParamId,
    enc_fwd: Lstm,
    enc_bwd: Lstm,
    init: Linear,
    d_emb: ParamId,
    att_enc: ParamId,
    att_dec: Linear,
    att_v: ParamId,
    dec: Lstm,
    out: Linear,
}

#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    pub config: Seq2SeqConfig,
    pub params: ParamStore,
    pub query_vocab: Vocabulary,
    pub desc_vocab: Vocabulary,
    layout: Layout,
}

/// Encoder outputs recorded on a tape.
pub struct Encoded {
    outputs: Var,
    projected: Var,
    h0: Var,
    c0: Var,
}

/// One decoder step recorded on a tape.
pub struct Step {
    pub logits: Var,
    pub hidden: Var,
    pub cell: Var,
    pub attention: Var,
}

impl Seq2SeqModel {
    pub fn new(
        config: Seq2SeqConfig,
        query_vocab: Vocabulary,
        desc_vocab: Vocabulary,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let (e, h, a, s) = (
            config.embed_dim,
            config.hidden_dim,
            config.attention_dim,
            config.init_scale,
        );
        let es = config.embed_init_scale;
        let q_emb = p.add_uniform("enc.emb", query_vocab.len(), e, es, &mut rng);
        let enc_fwd = Lstm::new(&mut p, "enc.fwd", e, h, s, &mut rng);
        let enc_bwd = Lstm::new(&mut p, "enc.bwd", e, h, s, &mut rng);
        let init = Linear::new(&mut p, "dec.init", 2 * h, h, s, &mut rng);
        let d_emb = p.add_uniform("dec.emb", desc_vocab.len(), e, es, &mut rng);
        let att_enc = p.add_uniform("att.enc", 2 * h, a, s, &mut rng);
        let att_dec = Linear::new(&mut p, "att.dec", h, a, s, &mut rng);
        let att_v = p.add_uniform("att.v", a, 1, s, &mut rng);
        let dec = Lstm::new(&mut p, "dec.lstm", e + 2 * h, h, s, &mut rng);
        let out = Linear::new(&mut p, "dec.out", h, desc_vocab.len(), s, &mut rng);
        let layout = Layout {
            q_emb,
            enc_fwd,
            enc_bwd,
            init,
            d_emb,
            att_enc,
            att_dec,
            att_v,
            dec,
            out,
        };
        Ok(Seq2SeqModel {
            config,
            params: p,
            query_vocab,
            desc_vocab,
            layout,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn logit_mask(&self) -> Matrix {
        let mut m = Matrix::zeros(1, self.desc_vocab.len());
        m.data[PAD] = BANNED_LOGIT;
        m.data[BOS] = BANNED_LOGIT;
        m
    }

    pub fn encode_on_tape(&self, t: &mut Tape, query: &[usize]) -> Result<Encoded> {
        let valid: Vec<usize> = query.iter().copied().filter(|&i| i != PAD).collect();
        if valid.is_empty() {
            return Err(Error::Empty("query"));
        }
        if let Some(&bad) = valid.iter().find(|&&i| i >= self.query_vocab.len()) {
            return Err(Error::InvalidInput(format!(
                "query index {bad} outside vocabulary"
            )));
        }
        let l = &self.layout;
        let xs = t.gather(l.q_emb, &valid);
        let (fw, fw_last) = l.enc_fwd.run(t, xs, false);
        let (bw, bw_first) = l.enc_bwd.run(t, xs, true);
        let rows: Vec<Var> = fw
            .iter()
            .zip(&bw)
            .map(|(&f, &b)| t.concat_cols(&[f, b]))
            .collect();
        let outputs = t.stack_rows(&rows);
        let att_enc = t.param(l.att_enc);
        let projected = t.matmul(outputs, att_enc);
        let summary = t.concat_cols(&[fw_last, bw_first]);
        let h0 = l.init.forward(t, summary);
        let h0 = t.tanh(h0);
        let c0 = t.constant(Matrix::zeros(1, self.config.hidden_dim));
        Ok(Encoded {
            outputs,
            projected,
            h0,
            c0,
        })
    }

    /// Initial decoder state `(h_0, c_0)`.
    pub fn initial_state(&self, enc: &Encoded) -> (Var, Var) {
        (enc.h0, enc.c0)
    }

    pub fn step_on_tape(&self, t: &mut Tape, enc: &Encoded, prev: usize, h: Var, c: Var) -> Step {
        let l = &self.layout;
        let u = l.att_dec.forward(t, h);
        let z = t.add_row(enc.projected, u);
        let z = t.tanh(z);
        let v = t.param(l.att_v);
        let scores = t.matmul(z, v);
        let scores = t.transpose(scores);
        let attention = t.softmax_rows(scores);
        let ctx = t.matmul(attention, enc.outputs);
        let emb = t.gather(l.d_emb, &[prev]);
        let x = t.concat_cols(&[emb, ctx]);
        let (hidden, cell) = l.dec.step(t, x, h, c);
        let raw = l.out.forward(t, hidden);
        let mask = t.constant(self.logit_mask());
        let logits = t.add(raw, mask);
        Step {
            logits,
            hidden,
            cell,
            attention,
        }
    }

    /// Mean per-token negative log-likelihood of `target` (BOS ... EOS) given `query`.
    pub fn teacher_forcing_loss_on_tape(
        &self,
        t: &mut Tape,
        query: &[usize],
        target: &[usize],
    ) -> Result<Var> {
        let target: Vec<usize> = target.iter().copied().filter(|&i| i != PAD).collect();
        if target.len() < 2 || target[0] != BOS {
            return Err(Error::InvalidInput(
                "target must be framed with BOS and EOS".into(),
            ));
        }
        if let Some(&bad) = target.iter().find(|&&i| i >= self.desc_vocab.len()) {
            return Err(Error::InvalidInput(format!(
                "target index {bad} outside vocabulary"
            )));
        }
        let enc = self.encode_on_tape(t, query)?;
        let (mut h, mut c) = self.initial_state(&enc);
        let mut terms = Vec::with_capacity(target.len() - 1);
        for w in target.windows(2) {
            let step = self.step_on_tape(t, &enc, w[0], h, c);
            terms.push(t.log_softmax_pick(step.logits, w[1]));
            h = step.hidden;
            c = step.cell;
        }
        let total = t.sum_scalars(&terms);
        Ok(t.scale(total, -1.0 / terms.len() as f64))
    }

    pub fn teacher_forcing_loss(&self, query: &[usize], target: &[usize]) -> Result<f64> {
        let mut t = Tape::new(&self.params);
        let loss = self.teacher_forcing_loss_on_tape(&mut t, query, target)?;
        let v = t.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite("teacher-forcing loss"));
        }
        Ok(v)
    }

    /// Replays `actions` and records `log p_T(action_t)` and the decoder state per step.
    pub fn forced_steps_on_tape(
        &self,
        t: &mut Tape,
        query: &[usize],
        actions: &[usize],
        temperature: f64,
    ) -> Result<Vec<(Var, Var)>> {
        let enc = self.encode_on_tape(t, query)?;
        let (mut h, mut c) = self.initial_state(&enc);
        let mut prev = BOS;
        let mut out = Vec::with_capacity(actions.len());
        for &a in actions {
            let step = self.step_on_tape(t, &enc, prev, h, c);
            let scaled = if temperature == 1.0 {
                step.logits
            } else {
                t.scale(step.logits, 1.0 / temperature)
            };
            out.push((t.log_softmax_pick(scaled, a), step.hidden));
            h = step.hidden;
            c = step.cell;
            prev = a;
        }
        Ok(out)
    }

    fn decode<R: Rng>(
        &self,
        query: &[usize],
        sampling: Option<(&mut R, f64)>,
    ) -> Result<(GenerationResult, Vec<StepTrace>)> {
        if query.iter().all(|&i| i == PAD) {
            return Err(Error::Empty("query"));
        }
        if let Some((_, temp)) = &sampling {
            if temp.is_nan() || *temp <= 0.0 {
                return Err(Error::InvalidInput("temperature must be positive".into()));
            }
        }
        let mode = if sampling.is_some() {
            DecodeMode::Sampled
        } else {
            DecodeMode::Greedy
        };
        let mut sampling = sampling;
        let mut t = Tape::new(&self.params);
        let enc = self.encode_on_tape(&mut t, query)?;
        let (mut h, mut c) = self.initial_state(&enc);
        let mut prev = BOS;
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut traces = Vec::new();
        let mut probs = vec![0.0; self.desc_vocab.len()];
        while tokens.len() < self.config.max_decode_len {
            let step = self.step_on_tape(&mut t, &enc, prev, h, c);
            let logits = &t.value(step.logits).data;
            let token = match sampling.as_mut() {
                None => {
                    let lse = nn::softmax_into(logits, &mut probs);
                    let tok = argmax(logits);
                    logprobs.push(logits[tok] - lse);
                    tok
                }
                Some((rng, temp)) => {
                    let scaled: Vec<f64> = logits.iter().map(|x| x / *temp).collect();
                    let lse = nn::softmax_into(&scaled, &mut probs);
                    let tok = sample_index(&probs, *rng);
                    logprobs.push(scaled[tok] - lse);
                    tok
                }
            };
            traces.push(StepTrace {
                probs: probs.clone(),
                attention: t.value(step.attention).data.clone(),
                hidden: t.value(step.hidden).data.clone(),
            });
            tokens.push(token);
            if token == EOS {
                break;
            }
            h = step.hidden;
            c = step.cell;
            prev = token;
        }
        Ok((
            GenerationResult {
                tokens,
                logprobs,
                mode,
            },
            traces,
        ))
    }

    /// Stepwise argmax decoding; stops at EOS or `max_decode_len`.
    pub fn greedy_decode(&self, query: &[usize]) -> Result<GenerationResult> {
        Ok(self.decode::<ChaCha8Rng>(query, None)?.0)
    }

    pub fn greedy_decode_traced(
        &self,
        query: &[usize],
    ) -> Result<(GenerationResult, Vec<StepTrace>)> {
        self.decode::<ChaCha8Rng>(query, None)
    }

    /// Draws each token from `softmax(logits / temperature)`.
    pub fn sample_decode<R: Rng>(
        &self,
        query: &[usize],
        rng: &mut R,
        temperature: f64,
    ) -> Result<GenerationResult> {
        Ok(self.decode(query, Some((rng, temperature)))?.0)
    }

    pub fn sample_decode_traced<R: Rng>(
        &self,
        query: &[usize],
        rng: &mut R,
        temperature: f64,
    ) -> Result<(GenerationResult, Vec<StepTrace>)> {
        self.decode(query, Some((rng, temperature)))
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for v in [&self.query_vocab, &self.desc_vocab] {
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
            kind: "seq2seq".into(),
            config: serde_json::to_value(&self.config)?,
        };
        fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        self.query_vocab.save(&dir.join("query_vocab.txt"))?;
        self.desc_vocab.save(&dir.join("desc_vocab.txt"))?;
        let mut blob = Vec::new();
        self.params.write_to(&mut blob)?;
        fs::write(dir.join("params.bin"), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = CheckpointMeta::read(dir, "seq2seq")?;
        let config: Seq2SeqConfig = serde_json::from_value(meta.config)?;
        let query_vocab = Vocabulary::load(&dir.join("query_vocab.txt"))?;
        let desc_vocab = Vocabulary::load(&dir.join("desc_vocab.txt"))?;
        let mut model = Seq2SeqModel::new(config, query_vocab, desc_vocab)?;
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

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// A query/description pair framed with BOS and EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QsePair {
    pub query: Vec<usize>,
    pub description: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct QseTrainer {
    pub optimizer: Adam,
    rng: ChaCha8Rng,
}

impl QseTrainer {
    pub fn new(model: &Seq2SeqModel) -> Self {
        QseTrainer {
            optimizer: Adam::new(&model.params, model.config.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x0005_e95e),
        }
    }
}

/// One shuffled teacher-forcing pass; returns the mean per-pair loss.
pub fn train_qse_epoch(
    trainer: &mut QseTrainer,
    model: &mut Seq2SeqModel,
    pairs: &[QsePair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut trainer.rng);
    let mut total = 0.0;
    for batch in order.chunks(model.config.batch_size) {
        let results: Vec<Result<(f64, Gradients)>> = batch
            .par_iter()
            .map(|&i| {
                let mut t = Tape::new(&model.params);
                let loss = model.teacher_forcing_loss_on_tape(
                    &mut t,
                    &pairs[i].query,
                    &pairs[i].description,
                )?;
                let v = t.scalar(loss);
                if !v.is_finite() {
                    return Err(Error::NonFinite("teacher-forcing loss"));
                }
                Ok((v, t.backward(loss)))
            })
            .collect();
        let mut grads = Gradients::new(model.params.len());
        for r in results {
            let (v, g) = r?;
            total += v;
            grads.merge(&g);
        }
        grads.scale(1.0 / batch.len() as f64);
        if !grads.all_finite() {
            return Err(Error::NonFinite("teacher-forcing gradient"));
        }
        grads.clip_global_norm(&model.params, model.config.clip_norm);
        trainer.optimizer.step(&mut model.params, &grads);
        if !model.params.all_finite() {
            return Err(Error::NonFinite("seq2seq parameters"));
        }
    }
    Ok(total / pairs.len() as f64)
}

/// Runs `epochs` teacher-forcing passes, returning the loss per epoch.
pub fn train_qse(model: &mut Seq2SeqModel, pairs: &[QsePair], epochs: usize) -> Result<Vec<f64>> {
    let mut trainer = QseTrainer::new(model);
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let loss = train_qse_epoch(&mut trainer, model, pairs)?;
        log::info!("qse epoch {epoch}: loss {loss:.5}");
        losses.push(loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, Source, TokenStream};

    fn vocab(n: usize) -> Vocabulary {
        let toks: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        build_vocabulary(&[TokenStream::new(toks, Source::Query)], n).unwrap()
    }

    fn tiny(seed: u64) -> Seq2SeqModel {
        let cfg = Seq2SeqConfig {
            embed_dim: 5,
            hidden_dim: 6,
            attention_dim: 4,
            max_decode_len: 8,
            init_scale: 0.5,
            seed,
            ..Default::default()
        };
        Seq2SeqModel::new(cfg, vocab(5), vocab(7)).unwrap()
    }

    #[test]
    fn step_distributions_are_normalized() {
        let m = tiny(1);
        let (res, trace) = m.greedy_decode_traced(&[BOS, 4, 6, EOS]).unwrap();
        assert_eq!(res.tokens.len(), trace.len());
        for (step, &tok) in trace.iter().zip(&res.tokens) {
            assert!((step.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((step.attention.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(step.attention.iter().all(|&a| a >= 0.0));
            assert_eq!(step.probs[PAD], 0.0);
            assert_eq!(step.probs[BOS], 0.0);
            let max = step.probs.iter().cloned().fold(0.0, f64::max);
            assert_eq!(step.probs[tok], max);
        }
    }

    #[test]
    fn decode_contracts() {
        let m = tiny(2);
        let q = [BOS, 5, 7, 8, EOS];
        let a = m.greedy_decode(&q).unwrap();
        assert_eq!(a, m.greedy_decode(&q).unwrap());
        assert!(a.tokens.len() <= 8);
        assert!(m.greedy_decode(&[]).is_err());
        assert!(m.greedy_decode(&[PAD, PAD]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.sample_decode(&q, &mut rng, 0.0).is_err());
        for _ in 0..50 {
            let s = m.sample_decode(&q, &mut rng, 1.0).unwrap();
            assert!(s.logprobs.iter().all(|&l| l <= 0.0));
            assert!(!s.tokens.contains(&BOS));
            let eos = s.tokens.iter().filter(|&&x| x == EOS).count();
            assert!(eos <= 1);
            if eos == 1 {
                assert!(s.ended_with_eos());
            }
        }
        let cold = m.sample_decode(&q, &mut rng, 1e-4).unwrap();
        assert_eq!(cold.tokens, a.tokens);
    }

    #[test]
    fn forced_replay_matches_sampled_logprobs() {
        let m = tiny(3);
        let q = [BOS, 4, 5, EOS];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = m.sample_decode(&q, &mut rng, 0.7).unwrap();
        let mut t = Tape::new(&m.params);
        let steps = m.forced_steps_on_tape(&mut t, &q, &s.tokens, 0.7).unwrap();
        for ((lp, _), &expected) in steps.iter().zip(&s.logprobs) {
            assert!((t.scalar(*lp) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn sampler_follows_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let probs = [0.7, 0.2, 0.1];
        let n = 1000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_index(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = tiny(4);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Seq2SeqModel::load(dir.path()).unwrap();
        assert_eq!(back.fingerprint(), m.fingerprint());
        assert!(crate::encoder::EncoderModel::load(dir.path()).is_err());
    }
}
