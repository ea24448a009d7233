//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Pass criterion ids (`ac3 ac10`) to run a subset.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use qecs::cli::{file_sha256, main_with_args, EvalContext};
use qecs::config::RunConfig;
use qecs::corpus::{encode_tokens, Language, Source, Triple, EOS};
use qecs::encoder::{pool_ranks, train_cs_epoch, CsTrainer, ModelKind, TowerKind};
use qecs::metrics::{frank, mrr, recall_at_k, RankResult};
use qecs::qse::{train_qse_epoch, QseTrainer, Seq2SeqConfig};
use qecs::ranker::{frame, sort_ranked, HybridConfig, RankMode, Ranker};
use qecs::rl::{
    actor_gradients, episode_returns, pretrain_critic, rollout, sparse_rewards, step_reward,
    terminal_reward, train_a2c, CriticModel, RetrievalReward, RewardBreakdown, RewardConfig,
    RewardFn, RlConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- AC1

/// Sort-based rank: order candidates by score descending, putting the
/// positive after every candidate it ties with, and read off its position.
fn brute_rank(scores: &[f64], positive: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == positive).cmp(&(b == positive)))
    });
    order.iter().position(|&i| i == positive).unwrap() + 1
}

fn ac1_metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ranks_checked = 0;
    for m in 0..1000 {
        let n_queries = rng.gen_range(1..=20);
        let pool = rng.gen_range(1..=50);
        // Coarse values on every third matrix so ties are common.
        let coarse = m % 3 == 0;
        let mut ours = Vec::new();
        let mut brute = Vec::new();
        for _ in 0..n_queries {
            let scores: Vec<f64> = (0..pool)
                .map(|_| {
                    if coarse {
                        rng.gen_range(0..4) as f64 / 4.0
                    } else {
                        rng.gen::<f64>()
                    }
                })
                .collect();
            let positive = rng.gen_range(0..pool);
            let keyed: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
            ours.push(frank(&keyed, &positive).map_err(|e| e.to_string())?);
            brute.push(brute_rank(&scores, positive));
        }
        for (o, b) in ours.iter().zip(&brute) {
            ensure(o.frank == *b, || {
                format!("matrix {m}: frank {} vs brute {b}", o.frank)
            })?;
        }
        ranks_checked += brute.len();
        let n = brute.len() as f64;
        for k in [1, 5, 10] {
            let want = brute.iter().filter(|&&r| r <= k).count() as f64 / n;
            let got = recall_at_k(&ours, k).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("matrix {m}: R@{k} {got} vs {want}"))?;
        }
        let want = brute.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let got = mrr(&ours).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("matrix {m}: MRR {got} vs {want}"))?;
    }
    Ok(format!("1000 matrices, {ranks_checked} ranks identical"))
}

// ---------------------------------------------------------------- AC2

fn ac2_gradients() -> Check {
    let errs = [
        (
            "bag encoder",
            encoder_gradient_error(ModelKind::BagAttention),
        ),
        (
            "recurrent encoder",
            encoder_gradient_error(ModelKind::Recurrent),
        ),
        ("seq2seq", seq2seq_gradient_error()),
    ];
    let detail = errs
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(errs.iter().all(|(_, e)| *e < 1e-4), || detail.clone())?;
    Ok(format!("max relative error: {detail}"))
}

// ---------------------------------------------------------------- AC3

fn alpha_word(i: usize, j: usize, tag: char) -> String {
    let l = |x: usize| (b'a' + x as u8) as char;
    format!("{tag}{}{}", l(i), l(j))
}

fn ac3_cs_overfit() -> Check {
    let triples: Vec<Triple> = (0..8)
        .map(|i| Triple {
            id: format!("p{i}"),
            language: Language::Synthetic,
            code: (0..3)
                .map(|j| alpha_word(i, j, 'k'))
                .collect::<Vec<_>>()
                .join(" "),
            description: (0..3)
                .map(|j| alpha_word(i, j, 'w'))
                .collect::<Vec<_>>()
                .join(" "),
            query: None,
        })
        .collect();
    let mut cfg = small_encoder_config(ModelKind::BagAttention, 4);
    cfg.batch_size = 2;
    let mut model = encoder_for(&triples, cfg);
    let pairs = cs_pairs(&model, &triples);
    let mut trainer = CsTrainer::new(&model);
    for epoch in 1..=200 {
        train_cs_epoch(&mut trainer, &mut model, &pairs).map_err(|e| e.to_string())?;
        let ranks = pool_ranks(&model, &pairs).map_err(|e| e.to_string())?;
        if recall_at_k(&ranks, 1).unwrap() == 1.0 {
            return Ok(format!("training R@1 = 1.0 at epoch {epoch}"));
        }
    }
    Err("training R@1 below 1.0 after 200 epochs".into())
}

// ---------------------------------------------------------------- AC4

fn ac4_qse_overfit() -> Check {
    let triples = unique_query_triples(32, 3);
    let (mut model, pairs) = seq2seq_for(&triples, small_seq2seq_config(5));
    let mut trainer = QseTrainer::new(&model);
    let mut last = 0.0;
    for epoch in 1..=300 {
        train_qse_epoch(&mut trainer, &mut model, &pairs).map_err(|e| e.to_string())?;
        if epoch % 10 == 0 || epoch == 300 {
            last = exact_match_rate(&model, &pairs);
            if last >= 0.9 {
                return Ok(format!("exact match {last:.3} at epoch {epoch}"));
            }
        }
    }
    Err(format!("exact match {last:.3} after 300 epochs"))
}

// ---------------------------------------------------------------- AC5

fn ac5_reward_contract() -> Check {
    let triples = cleaned_synthetic(60, 1);
    let cs = encoder_for(&triples, small_encoder_config(ModelKind::BagAttention, 2));
    let (actor, pairs) = seq2seq_for(&triples, small_seq2seq_config(2));
    let codes: Vec<Vec<usize>> = cs_pairs(&cs, &triples)
        .into_iter()
        .map(|p| p.code)
        .collect();
    let code_vectors = cs
        .embed_all(TowerKind::Code, &codes)
        .map_err(|e| e.to_string())?;
    let cfg = RewardConfig {
        alpha: 1.0,
        pool_size: 20,
    };
    let reward = RetrievalReward::new(
        &cs,
        &actor,
        &codes,
        pairs.iter().map(|p| p.description.clone()).collect(),
        cfg.clone(),
    )
    .map_err(|e| e.to_string())?;
    let text_len = cs.text_vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for (item, triple) in triples.iter().enumerate() {
        let pool = reward.pool(item, rng.gen());
        let gold = encode_tokens(
            &stream(&triple.description, Source::Description),
            &cs.text_vocab,
            true,
            60,
        )
        .unwrap();
        let prefix: Vec<usize> = (0..rng.gen_range(0..8))
            .map(|_| rng.gen_range(4..text_len))
            .collect();
        let token = rng.gen_range(4..text_len);
        let r = step_reward(
            &prefix,
            token,
            false,
            &pool,
            &code_vectors,
            &gold,
            &cfg,
            &cs,
        )
        .map_err(|e| e.to_string())?;
        ensure(r == 0.0, || format!("non-terminal reward {r}"))?;

        let garbage: Vec<usize> = (0..rng.gen_range(1..30))
            .map(|_| rng.gen_range(0..text_len))
            .collect();
        let a = terminal_reward(&prefix, &pool, &code_vectors, &gold, &cfg, &cs)
            .map_err(|e| e.to_string())?;
        let b = terminal_reward(&prefix, &pool, &code_vectors, &garbage, &cfg, &cs)
            .map_err(|e| e.to_string())?;
        ensure(a.total.to_bits() == b.total.to_bits(), || {
            format!("alpha=1 reward depends on gold: {} vs {}", a.total, b.total)
        })?;
        let at_eos = step_reward(&prefix, EOS, false, &pool, &code_vectors, &gold, &cfg, &cs)
            .map_err(|e| e.to_string())?;
        ensure(at_eos.to_bits() == a.total.to_bits(), || {
            "EOS reward differs from terminal".into()
        })?;

        // Rank term is the single-query MRR over the pool.
        let content: Vec<usize> = prefix.iter().copied().filter(|&t| t >= 4).collect();
        let qv = if content.is_empty() {
            vec![0.0; cs.embed_dim()]
        } else {
            cs.embed(TowerKind::Text, &content).unwrap()
        };
        let scores: Vec<(usize, f64)> = pool
            .members
            .iter()
            .map(|&m| (m, qecs::encoder::similarity(&qv, &code_vectors[m]).unwrap()))
            .collect();
        let want = mrr(&[frank(&scores, &pool.positive).unwrap()]).unwrap();
        ensure(a.rank_term == want, || {
            format!("rank term {} vs {want}", a.rank_term)
        })?;
        checked += 1;
    }

    let critic = CriticModel::for_actor(&actor, 8, 0.1, 1).map_err(|e| e.to_string())?;
    let mut episodes = 0;
    for (item, p) in pairs.iter().enumerate().take(20) {
        let ep = rollout(
            &actor,
            &critic,
            &reward,
            item,
            &p.query,
            100 + item as u64,
            1.0,
        )
        .map_err(|e| e.to_string())?;
        let rewards = sparse_rewards(ep.actions.len(), ep.terminal_reward());
        ensure(
            rewards[..rewards.len() - 1].iter().all(|&r| r == 0.0),
            || "non-terminal reward".into(),
        )?;
        ensure(ep.returns == episode_returns(&rewards), || {
            "returns are not suffix sums".into()
        })?;
        ensure(
            ep.returns.iter().all(|&r| r == ep.terminal_reward()),
            || "returns not constant".into(),
        )?;
        episodes += 1;
    }
    Ok(format!(
        "{checked} reward evaluations, {episodes} sparse episodes"
    ))
}

// ---------------------------------------------------------------- AC6

struct Bandit {
    rewarded: usize,
}

impl RewardFn for Bandit {
    fn terminal_reward(
        &self,
        _item: usize,
        _seed: u64,
        text: &[usize],
    ) -> qecs::Result<RewardBreakdown> {
        let total = if text.first() == Some(&self.rewarded) {
            1.0
        } else {
            0.0
        };
        Ok(RewardBreakdown {
            total,
            rank_term: total,
            bleu_term: 0.0,
        })
    }
}

fn ac6_a2c_sanity() -> Check {
    let qv = vocab_of(["find the thing"], Source::Query);
    let dv = vocab_of(["tokena tokenb"], Source::Description);
    let a = dv.id("tokena");
    let cfg = Seq2SeqConfig {
        max_decode_len: 2,
        ..small_seq2seq_config(8)
    };
    let mut actor = qecs::qse::Seq2SeqModel::new(cfg, qv, dv).map_err(|e| e.to_string())?;
    let query = frame(&[4, 5, 6]);
    let p_a = |m: &qecs::qse::Seq2SeqModel| m.greedy_decode_traced(&query).unwrap().1[0].probs[a];
    let before = p_a(&actor);
    let mut critic = CriticModel::for_actor(&actor, 16, 0.1, 8).map_err(|e| e.to_string())?;
    let rl = RlConfig {
        batch_size: 16,
        seed: 8,
        ..Default::default()
    };
    let queries = vec![query.clone(); 16];
    let bandit = Bandit { rewarded: a };
    let mut epochs = 0;
    while p_a(&actor) <= 0.95 && epochs < 400 {
        train_a2c(&mut actor, &mut critic, &bandit, &queries, &rl, 10)
            .map_err(|e| e.to_string())?;
        epochs += 10;
    }
    let after = p_a(&actor);
    ensure(after > 0.95, || {
        format!("P(rewarded) {before:.3} -> {after:.3} after {epochs} epochs")
    })?;

    // Zero advantage: values equal to returns give an exactly zero actor gradient.
    let mut zero_checked = 0;
    for seed in 0..10 {
        let mut ep =
            rollout(&actor, &critic, &bandit, 0, &query, seed, 1.0).map_err(|e| e.to_string())?;
        ep.values = ep.returns.clone();
        let g = actor_gradients(&actor, &ep, 1.0).map_err(|e| e.to_string())?;
        ensure(g.is_zero(), || {
            format!("non-zero gradient for zero advantage (seed {seed})")
        })?;
        zero_checked += 1;
    }
    Ok(format!(
        "P(rewarded) {before:.3} -> {after:.3} in {epochs} epochs; {zero_checked} zero-advantage episodes give zero gradient"
    ))
}

// ---------------------------------------------------------------- AC7

struct Constant(f64);

impl RewardFn for Constant {
    fn terminal_reward(
        &self,
        _item: usize,
        _seed: u64,
        _text: &[usize],
    ) -> qecs::Result<RewardBreakdown> {
        Ok(RewardBreakdown {
            total: self.0,
            rank_term: self.0,
            bleu_term: 0.0,
        })
    }
}

fn ac7_critic_regression() -> Check {
    let c = 0.37;
    let triples = cleaned_synthetic(60, 6);
    let (actor, pairs) = seq2seq_for(&triples, small_seq2seq_config(6));
    let queries: Vec<Vec<usize>> = pairs.iter().map(|p| p.query.clone()).collect();
    let (train, held_out) = queries.split_at(48);
    let mut critic = CriticModel::for_actor(&actor, 16, 0.1, 6).map_err(|e| e.to_string())?;
    let cfg = RlConfig {
        batch_size: 8,
        seed: 6,
        ..Default::default()
    };
    let losses = pretrain_critic(&mut critic, &actor, &Constant(c), train, &cfg, 100)
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (i, q) in held_out.iter().enumerate() {
        let ep = rollout(&actor, &critic, &Constant(c), i, q, 9_000 + i as u64, 1.0)
            .map_err(|e| e.to_string())?;
        for v in &ep.values {
            worst = worst.max((v - c).abs());
        }
    }
    ensure(worst < 0.05, || {
        format!("max |V - c| = {worst:.4} on held-out rollouts")
    })?;
    Ok(format!(
        "max |V - c| = {worst:.4} on held-out rollouts; critic loss {:.4} -> {:.6}",
        losses[0],
        losses.last().unwrap()
    ))
}

// ---------------------------------------------------------------- pipeline (AC8-AC10)

fn cli<S: AsRef<str>>(args: &[S]) -> std::result::Result<String, String> {
    let args: Vec<String> = args.iter().map(|s| s.as_ref().to_owned()).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with_args(&args, &mut std::io::empty(), &mut out, &mut err);
    if code == 0 {
        Ok(String::from_utf8_lossy(&out).into_owned())
    } else {
        Err(format!(
            "`qecs {}` exited {code}: {}",
            args.join(" "),
            String::from_utf8_lossy(&err).trim()
        ))
    }
}

fn report_mrr(dir: &Path, mode: &str, field: &str) -> f64 {
    let path = dir
        .join("reports")
        .join(format!("evaluate-{mode}-{field}.json"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["mrr"].as_f64().unwrap()
}

struct Pipeline {
    dir: tempfile::TempDir,
    cs_elapsed: Duration,
}

impl Pipeline {
    fn workdir(&self) -> String {
        self.dir.path().display().to_string()
    }

    fn run(&self, args: &[&str]) -> std::result::Result<String, String> {
        let wd = self.workdir();
        let mut all = args.to_vec();
        all.extend(["--workdir", wd.as_str()]);
        cli(&all)
    }
}

fn start_pipeline() -> std::result::Result<Pipeline, String> {
    let t = Instant::now();
    let p = Pipeline {
        dir: tempfile::tempdir().unwrap(),
        cs_elapsed: Duration::ZERO,
    };
    p.run(&["prepare", "--synthetic", "500", "--seed", "7"])?;
    p.run(&["train-cs"])?;
    p.run(&["build-pools"])?;
    Ok(Pipeline {
        cs_elapsed: t.elapsed(),
        ..p
    })
}

fn ac9_description_vs_query(p: &Pipeline) -> Check {
    let t = Instant::now();
    p.run(&["evaluate", "--mode", "base_only", "--eval-field", "query"])?;
    p.run(&[
        "evaluate",
        "--mode",
        "base_only",
        "--eval-field",
        "description",
    ])?;
    let elapsed = p.cs_elapsed + t.elapsed();
    let (q, d) = (
        report_mrr(p.dir.path(), "base_only", "query"),
        report_mrr(p.dir.path(), "base_only", "description"),
    );
    ensure(d >= q, || {
        format!("description MRR {d:.4} < query MRR {q:.4}")
    })?;
    ensure(elapsed < Duration::from_secs(600), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "description MRR {d:.4} >= query MRR {q:.4} ({:.0} s)",
        elapsed.as_secs_f64()
    ))
}

fn ac10_full_pipeline(p: &Pipeline) -> Check {
    let t = Instant::now();
    p.run(&["train-qse"])?;
    p.run(&["train-rl"])?;
    p.run(&["evaluate", "--mode", "hybrid", "--eval-field", "query"])?;
    let elapsed = p.cs_elapsed + t.elapsed();
    let base = report_mrr(p.dir.path(), "base_only", "query");
    let hybrid = report_mrr(p.dir.path(), "hybrid", "query");
    let trace = fs::read_to_string(p.dir.path().join("reports/reward_trace.csv")).unwrap();
    let means: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let (first, last) = (means[0], *means.last().unwrap());
    let detail = format!(
        "hybrid MRR {hybrid:.4} vs base {base:.4}; reward {first:.4} -> {last:.4} over {} epochs ({:.0} s)",
        means.len(),
        elapsed.as_secs_f64()
    );
    ensure(hybrid >= base - 0.02, || detail.clone())?;
    ensure(last >= first - 0.02, || detail.clone())?;
    ensure(elapsed < Duration::from_secs(1800), || detail.clone())?;
    Ok(detail)
}

/// Full candidate orderings of every evaluation pool under `cfg`.
fn pool_orderings(ctx: &EvalContext, cfg: &RunConfig) -> Vec<Vec<(String, f64)>> {
    let hybrid = HybridConfig {
        beta: cfg.hybrid.beta,
        mode: cfg.hybrid.mode,
    };
    let enricher = ctx
        .post_rl
        .as_ref()
        .filter(|_| cfg.hybrid.mode.needs_enricher());
    let ranker = Ranker::new(&ctx.cs, enricher, None, &hybrid).unwrap();
    let by_id: BTreeMap<&str, &Triple> = ctx.corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    ctx.pools
        .iter()
        .filter_map(|pool| {
            let q = by_id[pool.query_id.as_str()].query.as_deref()?;
            let qv = ranker.query_vectors(&stream(q, Source::Query)).unwrap();
            let mut scored: Vec<(String, f64)> = pool
                .candidates()
                .map(|id| {
                    let code = &by_id[id.as_str()].code;
                    let idx = encode_tokens(
                        &stream(code, Source::Code),
                        &ctx.cs.code_vocab,
                        false,
                        ctx.cs.config.max_code_len,
                    )
                    .unwrap();
                    let v = ctx.cs.embed(TowerKind::Code, &idx).unwrap();
                    (id.clone(), ranker.score(&qv, &v).unwrap())
                })
                .collect();
            sort_ranked(&mut scored);
            Some(scored)
        })
        .collect()
}

fn ac8_hybrid_degeneracy(p: &Pipeline) -> Check {
    let cfg_for = |mode: RankMode, beta: f64| {
        let mut cfg = RunConfig::default();
        cfg.paths.workdir = p.dir.path().to_path_buf();
        cfg.seed = 7;
        cfg.propagate_seed();
        cfg.hybrid.mode = mode;
        cfg.hybrid.beta = beta;
        cfg
    };
    let hybrid0 = cfg_for(RankMode::Hybrid, 0.0);
    let ctx = EvalContext::load(&hybrid0).map_err(|e| e.to_string())?;
    let same = |a: &[Vec<(String, f64)>], b: &[Vec<(String, f64)>]| {
        a.len() == b.len()
            && a.iter().zip(b).all(|(x, y)| {
                x.len() == y.len()
                    && x.iter()
                        .zip(y)
                        .all(|(u, v)| u.0 == v.0 && u.1.to_bits() == v.1.to_bits())
            })
    };
    let h0 = pool_orderings(&ctx, &hybrid0);
    let base = pool_orderings(&ctx, &cfg_for(RankMode::BaseOnly, 0.6));
    ensure(same(&h0, &base), || "beta=0 differs from base_only".into())?;
    let h1 = pool_orderings(&ctx, &cfg_for(RankMode::Hybrid, 1.0));
    let enriched = pool_orderings(&ctx, &cfg_for(RankMode::EnrichedOnly, 0.6));
    ensure(same(&h1, &enriched), || {
        "beta=1 differs from enriched_only".into()
    })?;

    // The CLI reports agree as well.
    p.run(&[
        "evaluate",
        "--mode",
        "hybrid",
        "--beta",
        "0",
        "--eval-field",
        "query",
    ])?;
    let m0 = report_mrr(p.dir.path(), "hybrid", "query");
    ensure(m0 == report_mrr(p.dir.path(), "base_only", "query"), || {
        "beta=0 report MRR differs".into()
    })?;
    p.run(&[
        "evaluate",
        "--mode",
        "enriched_only",
        "--eval-field",
        "query",
    ])?;
    p.run(&[
        "evaluate",
        "--mode",
        "hybrid",
        "--beta",
        "1",
        "--eval-field",
        "query",
    ])?;
    let m1 = report_mrr(p.dir.path(), "hybrid", "query");
    ensure(
        m1 == report_mrr(p.dir.path(), "enriched_only", "query"),
        || "beta=1 report MRR differs".into(),
    )?;
    Ok(format!(
        "{} pools: beta=0 == base_only, beta=1 == enriched_only (bitwise)",
        h0.len()
    ))
}

// ---------------------------------------------------------------- AC11

fn ac11_random_calibration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 5000;
    let pool = 1000;
    let ranks: Vec<RankResult> = (0..n)
        .map(|_| {
            let scores: Vec<(usize, f64)> = (0..pool).map(|i| (i, rng.gen::<f64>())).collect();
            frank(&scores, &0).unwrap()
        })
        .collect();
    let got = mrr(&ranks).unwrap();
    let harmonic: f64 = (1..=pool).map(|k| 1.0 / k as f64).sum::<f64>() / pool as f64;
    ensure((got - 0.0075).abs() <= 0.003, || {
        format!("MRR {got:.5}, oracle {harmonic:.5}")
    })?;
    Ok(format!(
        "MRR {got:.5} over {n} queries; oracle H(1000)/1000 = {harmonic:.5}"
    ))
}

// ---------------------------------------------------------------- AC12

fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != ".lock") {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, file_sha256(&path).unwrap());
            }
        }
    }
    out
}

const SMALL_RUN: [&str; 13] = [
    "--encoder.embed_dim=16",
    "--encoder.hidden_dim=16",
    "--encoder.epochs=2",
    "--seq2seq.embed_dim=16",
    "--seq2seq.hidden_dim=16",
    "--seq2seq.attention_dim=16",
    "--seq2seq.max_decode_len=12",
    "--seq2seq.epochs=1",
    "--rl.epochs_critic=1",
    "--rl.epochs_joint=1",
    "--rl.pool_size=10",
    "--seed",
    "13",
];

fn ac12_determinism() -> Check {
    let stages: [&[&str]; 9] = [
        &["prepare", "--synthetic", "60"],
        &["train-cs"],
        &["train-qse"],
        &["train-rl"],
        &["build-index"],
        &["build-pools"],
        &["evaluate", "--mode", "hybrid"],
        &["sweep", "--param", "beta", "--values", "0,0.5,1"],
        &["decode"],
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut snapshots = Vec::new();
    for (d, rerun) in [(0, false), (0, true), (1, false)] {
        let wd = dirs[d].path().display().to_string();
        for stage in stages {
            let mut args: Vec<String> = stage
                .iter()
                .chain(&SMALL_RUN)
                .map(|s| s.to_string())
                .collect();
            args.extend(["--workdir".into(), wd.clone()]);
            if stage[0] == "decode" {
                let input = dirs[d].path().join("queries.txt");
                fs::write(&input, "how to parse json\nsort list in memory\n").unwrap();
                args.extend(["--input".into(), input.display().to_string()]);
            }
            cli(&args)?;
        }
        let mut h = tree_hashes(dirs[d].path());
        h.remove("queries.txt");
        snapshots.push((d, rerun, h));
    }
    let first = &snapshots[0].2;
    for (d, rerun, h) in &snapshots[1..] {
        if h != first {
            let diff: Vec<&String> = first
                .keys()
                .chain(h.keys())
                .filter(|k| first.get(*k) != h.get(*k))
                .collect();
            return Err(format!("workdir {d} (rerun {rerun}) differs in {diff:?}"));
        }
    }
    Ok(format!(
        "{} artifacts identical across a rerun and a fresh workdir",
        first.len()
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.starts_with("ac"))
        .map(|a| a.to_lowercase())
        .collect();
    let selected = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    panic::set_hook(Box::new(|_| {}));

    let mut results: Vec<(String, &str, bool, String)> = Vec::new();
    let mut record = |id: &str, name: &'static str, f: &dyn Fn() -> Check| {
        if !selected(id) {
            return;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        println!(
            "{} {:>4} {name}: {detail} [{secs:.1} s]",
            if ok { "PASS" } else { "FAIL" },
            id.to_uppercase()
        );
        results.push((id.to_owned(), name, ok, detail));
    };

    record("ac1", "metric oracle equivalence", &ac1_metric_oracle);
    record("ac2", "gradient correctness", &ac2_gradients);
    record("ac3", "code-search overfit", &ac3_cs_overfit);
    record("ac4", "enricher overfit", &ac4_qse_overfit);
    record("ac5", "reward contract", &ac5_reward_contract);
    record("ac6", "A2C sanity", &ac6_a2c_sanity);
    record("ac7", "critic regression", &ac7_critic_regression);

    let needs_pipeline = ["ac8", "ac9", "ac10"].iter().any(|id| selected(id));
    if needs_pipeline {
        match start_pipeline() {
            Ok(p) => {
                record("ac9", "description beats query", &|| {
                    ac9_description_vs_query(&p)
                });
                record("ac10", "enriched pipeline keeps base quality", &|| {
                    ac10_full_pipeline(&p)
                });
                record("ac8", "hybrid degeneracy", &|| {
                    if !p.dir.path().join("checkpoints/rl").exists() {
                        p.run(&["train-qse"])?;
                        p.run(&["train-rl"])?;
                    }
                    p.run(&["evaluate", "--mode", "base_only", "--eval-field", "query"])?;
                    ac8_hybrid_degeneracy(&p)
                });
            }
            Err(e) => {
                for (id, name) in [
                    ("ac8", "hybrid degeneracy"),
                    ("ac9", "description beats query"),
                    ("ac10", "enriched pipeline keeps base quality"),
                ] {
                    let msg = format!("pipeline setup failed: {e}");
                    record(id, name, &|| Err(msg.clone()));
                }
            }
        }
    }

    record(
        "ac11",
        "random-scorer calibration",
        &ac11_random_calibration,
    );
    record("ac12", "CLI determinism", &ac12_determinism);

    let failed = results.iter().filter(|r| !r.2).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
