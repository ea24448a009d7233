//! Advantage actor-critic fine-tuning of the query enricher.
//!
//! The actor is a [`Seq2SeqModel`]. Each rollout samples one enriched query,
//! receives a sparse terminal reward mixing the reciprocal rank of the correct
//! snippet and BLEU-4 against the gold description, and is updated with
//! `-(R_t - V(s_t)) log p(d_t)`. The critic is a one-hidden-layer value head
//! reading detached decoder states.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, NUM_SPECIALS};
use crate::encoder::{
    similarity, CheckpointMeta, EncoderModel, TowerKind, CHECKPOINT_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::metrics::{self, bleu4};
use crate::nn::{Adam, Gradients, Linear, Matrix, ParamStore, Tape};
use crate::qse::Seq2SeqModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub pool_size: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 1.0,
            pool_size: 100,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("rl: alpha must be in [0, 1]".into()));
        }
        if self.pool_size < 2 {
            return Err(Error::Config("rl: pool_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// The RL block of the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub alpha: f64,
    pub pool_size: usize,
    pub epochs_critic: usize,
    pub epochs_joint: usize,
    pub temperature: f64,
    pub rollouts_per_query: usize,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub critic_hidden: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            alpha: 1.0,
            pool_size: 100,
            epochs_critic: 10,
            epochs_joint: 40,
            temperature: 1.0,
            rollouts_per_query: 1,
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            critic_hidden: 64,
            batch_size: 32,
            clip_norm: 5.0,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            alpha: self.alpha,
            pool_size: self.pool_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reward().validate()?;
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config("rl: temperature must be positive".into()));
        }
        if self.rollouts_per_query == 0 || self.batch_size == 0 || self.critic_hidden == 0 {
            return Err(Error::Config("rl: counts must be at least 1".into()));
        }
        if !(self.actor_learning_rate > 0.0 && self.critic_learning_rate > 0.0) {
            return Err(Error::Config("rl: learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Terminal reward split into its two terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub total: f64,
    pub rank_term: f64,
    pub bleu_term: f64,
}

/// One rollout with everything the A2C update needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub query: Vec<usize>,
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub reward: RewardBreakdown,
    pub returns: Vec<f64>,
}

impl Episode {
    pub fn terminal_reward(&self) -> f64 {
        self.reward.total
    }
}

/// Candidate pool for one reward evaluation: indices into a code-vector table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RewardPool {
    pub positive: usize,
    pub members: Vec<usize>,
}

/// `alpha * RR + (1 - alpha) * BLEU` for a finished generation.
///
/// `text` holds the generated description indices before EOS; specials and
/// UNK are dropped. The reciprocal-rank term scores `pool` by similarity
/// between the text-tower embedding of `text` and each code vector. BLEU is
/// not evaluated when `alpha == 1`.
pub fn terminal_reward(
    text: &[usize],
    pool: &RewardPool,
    code_vectors: &[Vec<f64>],
    gold_description: &[usize],
    cfg: &RewardConfig,
    cs_model: &EncoderModel,
) -> Result<RewardBreakdown> {
    if !pool.members.contains(&pool.positive) {
        return Err(Error::InvalidInput(
            "reward pool lacks the positive snippet".into(),
        ));
    }
    let content: Vec<usize> = text
        .iter()
        .copied()
        .filter(|&t| t >= NUM_SPECIALS)
        .collect();
    let query_vec = if content.is_empty() {
        vec![0.0; cs_model.embed_dim()]
    } else {
        cs_model.embed(TowerKind::Text, &content)?
    };
    let scores: Vec<(usize, f64)> = pool
        .members
        .iter()
        .map(|&m| Ok((m, similarity(&query_vec, &code_vectors[m])?)))
        .collect::<Result<_>>()?;
    let rank = metrics::frank(&scores, &pool.positive)?;
    let rank_term = metrics::mrr(&[rank])?;
    let bleu_term = if cfg.alpha == 1.0 {
        0.0
    } else {
        let gold: Vec<usize> = gold_description
            .iter()
            .copied()
            .filter(|&t| t >= NUM_SPECIALS)
            .collect();
        bleu4(&content, &gold)
    };
    let total = cfg.alpha * rank_term + (1.0 - cfg.alpha) * bleu_term;
    Ok(RewardBreakdown {
        total,
        rank_term,
        bleu_term,
    })
}

/// Per-step reward: zero unless `token` ends the generation (EOS, or the
/// last step of a length-truncated rollout).
#[allow(clippy::too_many_arguments)]
pub fn step_reward(
    prefix: &[usize],
    token: usize,
    truncated: bool,
    pool: &RewardPool,
    code_vectors: &[Vec<f64>],
    gold_description: &[usize],
    cfg: &RewardConfig,
    cs_model: &EncoderModel,
) -> Result<f64> {
    if token == EOS {
        Ok(terminal_reward(prefix, pool, code_vectors, gold_description, cfg, cs_model)?.total)
    } else if truncated {
        let mut text = prefix.to_vec();
        text.push(token);
        Ok(terminal_reward(&text, pool, code_vectors, gold_description, cfg, cs_model)?.total)
    } else {
        Ok(0.0)
    }
}

/// Sparse reward vector: `terminal` at the last step, zero elsewhere.
pub fn sparse_rewards(len: usize, terminal: f64) -> Vec<f64> {
    let mut r = vec![0.0; len];
    if let Some(last) = r.last_mut() {
        *last = terminal;
    }
    r
}

/// `R_t = sum_{t' >= t} r_{t'}`.
pub fn episode_returns(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    out
}

/// `(-sum (R_t - V_t) log p_t, sum (V_t - R_t)^2)`; the advantage is a constant.
pub fn a2c_losses(ep: &Episode) -> (f64, f64) {
    let actor = -ep
        .returns
        .iter()
        .zip(&ep.values)
        .zip(&ep.logprobs)
        .map(|((r, v), lp)| (r - v) * lp)
        .sum::<f64>();
    let critic = ep
        .values
        .iter()
        .zip(&ep.returns)
        .map(|(v, r)| (v - r).powi(2))
        .sum();
    (actor, critic)
}

/// Gradient of the actor term of [`a2c_losses`] with respect to the actor.
pub fn actor_gradients(actor: &Seq2SeqModel, ep: &Episode, temperature: f64) -> Result<Gradients> {
    let mut t = Tape::new(&actor.params);
    let steps = actor.forced_steps_on_tape(&mut t, &ep.query, &ep.actions, temperature)?;
    let terms: Vec<_> = steps
        .iter()
        .zip(ep.returns.iter().zip(&ep.values))
        .map(|(&(lp, _), (r, v))| t.scale(lp, -(r - v)))
        .collect();
    if terms.is_empty() {
        return Ok(Gradients::new(actor.params.len()));
    }
    let loss = t.sum_scalars(&terms);
    if !t.scalar(loss).is_finite() {
        return Err(Error::NonFinite("actor loss"));
    }
    Ok(t.backward(loss))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub state_dim: usize,
    pub hidden: usize,
    pub init_scale: f64,
    pub seed: u64,
}

/// `V(s) = w2 . tanh(W1 s + b1) + b2`.
#[derive(Clone, Debug)]
pub struct CriticModel {
    pub config: CriticConfig,
    pub params: ParamStore,
    hidden: Linear,
    out: Linear,
}

impl CriticModel {
    pub fn new(config: CriticConfig) -> Result<Self> {
        if config.state_dim == 0 || config.hidden == 0 {
            return Err(Error::Config("critic dimensions must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let hidden = Linear::new(
            &mut params,
            "critic.hidden",
            config.state_dim,
            config.hidden,
            config.init_scale,
            &mut rng,
        );
        let out = Linear::new(
            &mut params,
            "critic.out",
            config.hidden,
            1,
            config.init_scale,
            &mut rng,
        );
        Ok(CriticModel {
            config,
            params,
            hidden,
            out,
        })
    }

    /// Critic sized for `actor`'s decoder state.
    pub fn for_actor(
        actor: &Seq2SeqModel,
        hidden: usize,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::new(CriticConfig {
            state_dim: actor.hidden_dim(),
            hidden,
            init_scale,
            seed,
        })
    }

    fn value_on_tape(&self, t: &mut Tape, state: &[f64]) -> crate::nn::Var {
        let s = t.constant(Matrix::row_vector(state.to_vec()));
        let h = self.hidden.forward(t, s);
        let h = t.tanh(h);
        self.out.forward(t, h)
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        let mut t = Tape::new(&self.params);
        let v = self.value_on_tape(&mut t, state);
        t.scalar(v)
    }

    pub fn values(&self, states: &[Vec<f64>]) -> Vec<f64> {
        states.iter().map(|s| self.value(s)).collect()
    }

    /// Gradient of `sum_t (V(s_t) - R_t)^2`, plus the loss value.
    pub fn loss_gradients(&self, states: &[Vec<f64>], returns: &[f64]) -> Result<(f64, Gradients)> {
        let mut t = Tape::new(&self.params);
        let mut terms = Vec::with_capacity(states.len());
        for (s, &r) in states.iter().zip(returns) {
            let v = self.value_on_tape(&mut t, s);
            let target = t.constant(Matrix::scalar(r));
            let d = t.sub(v, target);
            terms.push(t.mul(d, d));
        }
        if terms.is_empty() {
            return Ok((0.0, Gradients::new(self.params.len())));
        }
        let loss = t.sum_scalars(&terms);
        let value = t.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        Ok((value, t.backward(loss)))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "critic".into(),
            config: serde_json::to_value(&self.config)?,
        };
        std::fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        let mut blob = Vec::new();
        self.params.write_to(&mut blob)?;
        std::fs::write(dir.join("params.bin"), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = CheckpointMeta::read(dir, "critic")?;
        let mut model = CriticModel::new(serde_json::from_value(meta.config)?)?;
        let params = ParamStore::read_from(std::fs::File::open(dir.join("params.bin"))?)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Checkpoint(
                "critic parameter layout does not match config".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }
}

/// Source of terminal rewards for rollouts over a fixed list of queries.
pub trait RewardFn: Sync {
    /// Reward for item `item` given the generated text (tokens before EOS).
    /// `episode_seed` drives any sampling the reward needs.
    fn terminal_reward(
        &self,
        item: usize,
        episode_seed: u64,
        text: &[usize],
    ) -> Result<RewardBreakdown>;
}

/// Retrieval reward over a frozen code-search model.
pub struct RetrievalReward<'a> {
    cs_model: &'a EncoderModel,
    /// Actor description index -> code-search text index.
    remap: Vec<usize>,
    code_vectors: Vec<Vec<f64>>,
    gold: Vec<Vec<usize>>,
    cfg: RewardConfig,
}

impl<'a> RetrievalReward<'a> {
    /// `codes[i]` and `gold_descriptions[i]` belong to training item `i`;
    /// negatives for item `i` are drawn from the other items' code.
    pub fn new(
        cs_model: &'a EncoderModel,
        actor: &Seq2SeqModel,
        codes: &[Vec<usize>],
        gold_descriptions: Vec<Vec<usize>>,
        cfg: RewardConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if codes.len() != gold_descriptions.len() {
            return Err(Error::DimensionMismatch {
                left: codes.len(),
                right: gold_descriptions.len(),
            });
        }
        if codes.len() < 2 {
            return Err(Error::InvalidInput(
                "reward pools need at least two snippets".into(),
            ));
        }
        let remap = actor
            .desc_vocab
            .tokens()
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                if i < NUM_SPECIALS {
                    i
                } else {
                    cs_model.text_vocab.id(tok)
                }
            })
            .collect();
        let code_vectors = cs_model.embed_all(TowerKind::Code, codes)?;
        Ok(RetrievalReward {
            cs_model,
            remap,
            code_vectors,
            gold: gold_descriptions,
            cfg,
        })
    }

    pub fn config(&self) -> &RewardConfig {
        &self.cfg
    }

    /// Positive plus `pool_size - 1` distinct negatives, seeded.
    pub fn pool(&self, item: usize, episode_seed: u64) -> RewardPool {
        let n = self.code_vectors.len();
        let negatives = (self.cfg.pool_size - 1).min(n - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let mut members: Vec<usize> = rand::seq::index::sample(&mut rng, n - 1, negatives)
            .into_iter()
            .map(|j| if j >= item { j + 1 } else { j })
            .collect();
        members.push(item);
        RewardPool {
            positive: item,
            members,
        }
    }
}

impl RewardFn for RetrievalReward<'_> {
    fn terminal_reward(
        &self,
        item: usize,
        episode_seed: u64,
        text: &[usize],
    ) -> Result<RewardBreakdown> {
        let pool = self.pool(item, episode_seed);
        let mapped: Vec<usize> = text
            .iter()
            .map(|&t| self.remap.get(t).copied().unwrap_or(t))
            .collect();
        let gold: Vec<usize> = self.gold[item]
            .iter()
            .map(|&t| self.remap.get(t).copied().unwrap_or(t))
            .collect();
        terminal_reward(
            &mapped,
            &pool,
            &self.code_vectors,
            &gold,
            &self.cfg,
            self.cs_model,
        )
    }
}

fn episode_seed(seed: u64, phase: u64, epoch: usize, item: usize, rollout: usize) -> u64 {
    // splitmix64 over the tuple
    let mut z = seed
        ^ phase.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (epoch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (item as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
        ^ (rollout as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples one episode and fills in reward, returns and critic values.
pub fn rollout<F: RewardFn + ?Sized>(
    actor: &Seq2SeqModel,
    critic: &CriticModel,
    reward: &F,
    item: usize,
    query: &[usize],
    seed: u64,
    temperature: f64,
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gen, trace) = actor.sample_decode_traced(query, &mut rng, temperature)?;
    let text: Vec<usize> = gen
        .tokens
        .iter()
        .copied()
        .filter(|&t| t != EOS && t != BOS)
        .collect();
    let breakdown = reward.terminal_reward(item, rng.gen(), &text)?;
    let returns = episode_returns(&sparse_rewards(gen.tokens.len(), breakdown.total));
    let states: Vec<Vec<f64>> = trace.into_iter().map(|s| s.hidden).collect();
    let values = critic.values(&states);
    Ok(Episode {
        query: query.to_vec(),
        actions: gen.tokens,
        logprobs: gen.logprobs,
        values,
        states,
        reward: breakdown,
        returns,
    })
}

/// One row of the reward trace CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTraceRow {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_rank_term: f64,
    pub mean_bleu_term: f64,
}

pub fn write_reward_trace(path: &Path, rows: &[RewardTraceRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,mean_reward,mean_rank_term,mean_bleu_term")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.epoch, r.mean_reward, r.mean_rank_term, r.mean_bleu_term
        )?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn collect_rollouts<F: RewardFn + ?Sized>(
    actor: &Seq2SeqModel,
    critic: &CriticModel,
    reward: &F,
    queries: &[Vec<usize>],
    items: &[usize],
    cfg: &RlConfig,
    phase: u64,
    epoch: usize,
) -> Result<Vec<(usize, Episode)>> {
    let jobs: Vec<(usize, usize)> = items
        .iter()
        .flat_map(|&i| (0..cfg.rollouts_per_query).map(move |r| (i, r)))
        .collect();
    jobs.par_iter()
        .map(|&(i, r)| {
            let seed = episode_seed(cfg.seed, phase, epoch, i, r);
            rollout(actor, critic, reward, i, &queries[i], seed, cfg.temperature).map(|e| (i, e))
        })
        .collect()
}

fn critic_step(
    critic: &mut CriticModel,
    opt: &mut Adam,
    episodes: &[(usize, Episode)],
    clip: f64,
) -> Result<f64> {
    let parts: Vec<Result<(f64, Gradients)>> = episodes
        .par_iter()
        .map(|(_, e)| critic.loss_gradients(&e.states, &e.returns))
        .collect();
    let mut grads = Gradients::new(critic.params.len());
    let mut total = 0.0;
    for p in parts {
        let (l, g) = p?;
        total += l;
        grads.merge(&g);
    }
    grads.scale(1.0 / episodes.len() as f64);
    grads.clip_global_norm(&critic.params, clip);
    opt.step(&mut critic.params, &grads);
    if !critic.params.all_finite() {
        return Err(Error::NonFinite("critic parameters"));
    }
    Ok(total / episodes.len() as f64)
}

/// Trains the critic on rollouts of the frozen actor. Returns mean critic loss per epoch.
pub fn pretrain_critic<F: RewardFn + ?Sized>(
    critic: &mut CriticModel,
    actor: &Seq2SeqModel,
    reward: &F,
    queries: &[Vec<usize>],
    cfg: &RlConfig,
    epochs: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if queries.is_empty() {
        return Err(Error::Empty("rl queries"));
    }
    let mut opt = Adam::new(&critic.params, cfg.critic_learning_rate);
    let items: Vec<usize> = (0..queries.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut total = 0.0;
        let mut count = 0;
        for batch in items.chunks(cfg.batch_size) {
            let eps = collect_rollouts(actor, critic, reward, queries, batch, cfg, 1, epoch)?;
            total += critic_step(critic, &mut opt, &eps, cfg.clip_norm)? * eps.len() as f64;
            count += eps.len();
        }
        let mean = total / count as f64;
        log::info!("critic pretrain epoch {epoch}: loss {mean:.5}");
        losses.push(mean);
    }
    Ok(losses)
}

/// Joint actor-critic training. Returns the per-epoch reward trace.
pub fn train_a2c<F: RewardFn + ?Sized>(
    actor: &mut Seq2SeqModel,
    critic: &mut CriticModel,
    reward: &F,
    queries: &[Vec<usize>],
    cfg: &RlConfig,
    epochs: usize,
) -> Result<Vec<RewardTraceRow>> {
    cfg.validate()?;
    if queries.is_empty() {
        return Err(Error::Empty("rl queries"));
    }
    let mut actor_opt = Adam::new(&actor.params, cfg.actor_learning_rate);
    let mut critic_opt = Adam::new(&critic.params, cfg.critic_learning_rate);
    let items: Vec<usize> = (0..queries.len()).collect();
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (mut sum_r, mut sum_rank, mut sum_bleu, mut count) = (0.0, 0.0, 0.0, 0usize);
        for batch in items.chunks(cfg.batch_size) {
            let eps = collect_rollouts(actor, critic, reward, queries, batch, cfg, 2, epoch)?;
            for (_, e) in &eps {
                sum_r += e.reward.total;
                sum_rank += e.reward.rank_term;
                sum_bleu += e.reward.bleu_term;
            }
            count += eps.len();

            let parts: Vec<Result<Gradients>> = eps
                .par_iter()
                .map(|(_, e)| actor_gradients(actor, e, cfg.temperature))
                .collect();
            let mut grads = Gradients::new(actor.params.len());
            for p in parts {
                grads.merge(&p?);
            }
            grads.scale(1.0 / eps.len() as f64);
            if !grads.all_finite() {
                return Err(Error::NonFinite("actor gradient"));
            }
            grads.clip_global_norm(&actor.params, cfg.clip_norm);
            actor_opt.step(&mut actor.params, &grads);
            if !actor.params.all_finite() {
                return Err(Error::NonFinite("actor parameters"));
            }
            critic_step(critic, &mut critic_opt, &eps, cfg.clip_norm)?;
        }
        let n = count as f64;
        let row = RewardTraceRow {
            epoch,
            mean_reward: sum_r / n,
            mean_rank_term: sum_rank / n,
            mean_bleu_term: sum_bleu / n,
        };
        log::info!("rl epoch {epoch}: mean reward {:.5}", row.mean_reward);
        trace.push(row);
    }
    Ok(trace)
}

/// Critic pretraining followed by joint training, with a retrieval reward
/// built from the frozen `cs_model`.
#[allow(clippy::too_many_arguments)]
pub fn train_rl(
    actor: &mut Seq2SeqModel,
    critic: &mut CriticModel,
    cs_model: &EncoderModel,
    queries: &[Vec<usize>],
    codes: &[Vec<usize>],
    gold_descriptions: Vec<Vec<usize>>,
    cfg: &RlConfig,
) -> Result<Vec<RewardTraceRow>> {
    let reward = RetrievalReward::new(cs_model, actor, codes, gold_descriptions, cfg.reward())?;
    pretrain_critic(critic, actor, &reward, queries, cfg, cfg.epochs_critic)?;
    train_a2c(actor, critic, &reward, queries, cfg, cfg.epochs_joint)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(returns: Vec<f64>, values: Vec<f64>, logprobs: Vec<f64>) -> Episode {
        let n = returns.len();
        Episode {
            query: vec![BOS, 4, EOS],
            actions: vec![4; n],
            logprobs,
            values,
            states: vec![vec![0.0]; n],
            reward: RewardBreakdown::default(),
            returns,
        }
    }

    #[test]
    fn returns_are_suffix_sums() {
        assert_eq!(episode_returns(&[0.0, 0.0, 0.0, 0.7]), vec![0.7; 4]);
        assert_eq!(episode_returns(&[0.0; 3]), vec![0.0; 3]);
        let r = episode_returns(&[0.1, 0.0, 0.2]);
        assert!((r[0] - 0.3).abs() < 1e-12 && r[1] == 0.2 && r[2] == 0.2);
        assert_eq!(sparse_rewards(3, 0.4), vec![0.0, 0.0, 0.4]);
    }

    #[test]
    fn loss_examples() {
        let (a, c) = a2c_losses(&episode(vec![0.7], vec![0.5], vec![-1.0]));
        assert!((c - 0.04).abs() < 1e-12);
        assert!((a - 0.2).abs() < 1e-12);
        let (a, _) = a2c_losses(&episode(vec![0.3, 0.3], vec![0.3, 0.3], vec![-2.0, -0.5]));
        assert_eq!(a, 0.0);
        let (a, _) = a2c_losses(&episode(vec![0.9, 0.9], vec![0.1, -0.4], vec![0.0, 0.0]));
        assert_eq!(a, 0.0);
    }

    #[test]
    fn episode_seeds_differ() {
        let a = episode_seed(1, 2, 3, 4, 0);
        assert_ne!(a, episode_seed(1, 2, 3, 5, 0));
        assert_ne!(a, episode_seed(1, 2, 4, 4, 0));
        assert_eq!(a, episode_seed(1, 2, 3, 4, 0));
    }
}
