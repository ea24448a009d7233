//! Retrieval: code index, hybrid scoring of original and enriched queries,
//! the synonym-expansion baseline, and fixed-pool test-set evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_tokens, Source, TokenStream, Triple, BOS, EOS};
use crate::encoder::{similarity, EncoderModel, TowerKind};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport, RankResult, ReportMetadata};
use crate::qse::Seq2SeqModel;

pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_POOL_NEGATIVES: usize = 999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// `sim(q, c)` only.
    BaseOnly,
    /// `sim(q', c)` only (no hybrid ranking).
    EnrichedOnly,
    /// `beta sim(q', c) + (1 - beta) sim(q, c)` with the RL-tuned enricher.
    Hybrid,
    /// `sim(expand(q), c)` with a synonym lexicon.
    QeBaseline,
    /// Hybrid ranking with the enricher from before RL fine-tuning.
    NoRl,
}

impl RankMode {
    pub fn name(self) -> &'static str {
        match self {
            RankMode::BaseOnly => "base_only",
            RankMode::EnrichedOnly => "enriched_only",
            RankMode::Hybrid => "hybrid",
            RankMode::QeBaseline => "qe_baseline",
            RankMode::NoRl => "no_rl",
        }
    }

    pub fn needs_enricher(self) -> bool {
        matches!(
            self,
            RankMode::EnrichedOnly | RankMode::Hybrid | RankMode::NoRl
        )
    }
}

impl std::str::FromStr for RankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "base_only" => RankMode::BaseOnly,
            "enriched_only" => RankMode::EnrichedOnly,
            "hybrid" => RankMode::Hybrid,
            "qe_baseline" => RankMode::QeBaseline,
            "no_rl" => RankMode::NoRl,
            other => return Err(Error::Config(format!("unknown ranking mode {other}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalField {
    Query,
    Description,
}

impl EvalField {
    pub fn name(self) -> &'static str {
        match self {
            EvalField::Query => "query",
            EvalField::Description => "description",
        }
    }
}

impl std::str::FromStr for EvalField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(EvalField::Query),
            "description" => Ok(EvalField::Description),
            other => Err(Error::Config(format!("unknown eval field {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub beta: f64,
    pub mode: RankMode,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            beta: 0.6,
            mode: RankMode::Hybrid,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("hybrid: beta must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `beta * sim_enriched + (1 - beta) * sim_original`.
pub fn hybrid_score(sim_enriched: f64, sim_original: f64, beta: f64) -> f64 {
    beta * sim_enriched + (1.0 - beta) * sim_original
}

/// Token -> synonyms, normalized so no token lists itself and lists hold no duplicates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    from = "BTreeMap<String, Vec<String>>",
    into = "BTreeMap<String, Vec<String>>"
)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl From<BTreeMap<String, Vec<String>>> for SynonymLexicon {
    fn from(raw: BTreeMap<String, Vec<String>>) -> Self {
        let entries = raw
            .into_iter()
            .map(|(k, syns)| {
                let mut seen = HashSet::new();
                let list: Vec<String> = syns
                    .into_iter()
                    .filter(|s| *s != k && !s.is_empty() && seen.insert(s.clone()))
                    .collect();
                (k, list)
            })
            .filter(|(_, l)| !l.is_empty())
            .collect();
        SynonymLexicon { entries }
    }
}

impl From<SynonymLexicon> for BTreeMap<String, Vec<String>> {
    fn from(l: SynonymLexicon) -> Self {
        l.entries
    }
}

impl SynonymLexicon {
    pub fn synonyms(&self, token: &str) -> &[String] {
        self.entries.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

/// Keeps every query token in order and appends each token's unseen synonyms after it.
pub fn qe_expand(query: &TokenStream, lexicon: &SynonymLexicon) -> TokenStream {
    let original: HashSet<&str> = query.tokens.iter().map(String::as_str).collect();
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(query.len());
    for tok in &query.tokens {
        out.push(tok.clone());
        seen.insert(tok.clone());
        for syn in lexicon.synonyms(tok) {
            if !original.contains(syn.as_str()) && seen.insert(syn.clone()) {
                out.push(syn.clone());
            }
        }
    }
    TokenStream::new(out, query.source)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub vector: Vec<f64>,
    pub code: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct IndexHeader {
    format_version: u32,
    dim: usize,
    fingerprint: String,
    count: usize,
}

/// Code vectors for a corpus, tagged with the fingerprint of the model that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchIndex {
    pub dim: usize,
    pub fingerprint: String,
    pub entries: Vec<IndexEntry>,
}

/// A snippet to index: id, code indices, raw code text.
pub type Snippet = (String, Vec<usize>, String);

pub fn build_index(cs_model: &EncoderModel, snippets: &[Snippet]) -> Result<SearchIndex> {
    if snippets.is_empty() {
        return Err(Error::Empty("snippet list"));
    }
    let mut ids = HashSet::new();
    for (id, _, _) in snippets {
        if !ids.insert(id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate snippet id {id}")));
        }
    }
    let entries = snippets
        .par_iter()
        .map(|(id, code, raw)| {
            Ok(IndexEntry {
                id: id.clone(),
                vector: cs_model.embed(TowerKind::Code, code)?,
                code: raw.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchIndex {
        dim: cs_model.embed_dim(),
        fingerprint: cs_model.fingerprint(),
        entries,
    })
}

impl SearchIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn check_model(&self, cs_model: &EncoderModel) -> Result<()> {
        let model = cs_model.fingerprint();
        if model != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                index: self.fingerprint.clone(),
                model,
            });
        }
        Ok(())
    }

    /// JSONL: a header line, then one entry per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = IndexHeader {
            format_version: INDEX_FORMAT_VERSION,
            dim: self.dim,
            fingerprint: self.fingerprint.clone(),
            count: self.entries.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let mut lines = BufReader::new(File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| Error::Parse {
            path: shown.clone(),
            line: 1,
            message: "missing header".into(),
        })??;
        let header: IndexHeader = serde_json::from_str(&first)?;
        if header.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: INDEX_FORMAT_VERSION,
                found: header.format_version,
            });
        }
        let mut entries = Vec::with_capacity(header.count);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let e: IndexEntry = serde_json::from_str(&line).map_err(|err| Error::Parse {
                path: shown.clone(),
                line: i + 2,
                message: err.to_string(),
            })?;
            if e.vector.len() != header.dim {
                return Err(Error::DimensionMismatch {
                    left: e.vector.len(),
                    right: header.dim,
                });
            }
            entries.push(e);
        }
        if entries.len() != header.count {
            return Err(Error::Parse {
                path: shown,
                line: 1,
                message: "entry count mismatch".into(),
            });
        }
        Ok(SearchIndex {
            dim: header.dim,
            fingerprint: header.fingerprint,
            entries,
        })
    }

    /// Loads and verifies the fingerprint against `cs_model`.
    pub fn load_for(path: &Path, cs_model: &EncoderModel) -> Result<Self> {
        let index = Self::load(path)?;
        index.check_model(cs_model)?;
        Ok(index)
    }
}

/// Vectors a query contributes to scoring under a given mode.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryVectors {
    pub original: Option<Vec<f64>>,
    pub enriched: Option<Vec<f64>>,
    /// Enriched query text (UNK removed), when an enricher ran.
    pub enriched_text: Option<Vec<String>>,
    /// Expanded query text, in the synonym-expansion mode.
    pub expanded_text: Option<Vec<String>>,
}

/// Bundles the frozen models needed to score queries against code vectors.
#[derive(Clone, Copy)]
pub struct Ranker<'a> {
    pub cs_model: &'a EncoderModel,
    pub enricher: Option<&'a Seq2SeqModel>,
    pub lexicon: Option<&'a SynonymLexicon>,
    pub config: &'a HybridConfig,
}

impl<'a> Ranker<'a> {
    pub fn new(
        cs_model: &'a EncoderModel,
        enricher: Option<&'a Seq2SeqModel>,
        lexicon: Option<&'a SynonymLexicon>,
        config: &'a HybridConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.mode.needs_enricher() && enricher.is_none() {
            return Err(Error::MissingPrerequisite(format!(
                "mode {} needs a query enricher checkpoint",
                config.mode.name()
            )));
        }
        if config.mode == RankMode::QeBaseline && lexicon.is_none() {
            return Err(Error::MissingPrerequisite(
                "mode qe_baseline needs a synonym lexicon".into(),
            ));
        }
        Ok(Ranker {
            cs_model,
            enricher,
            lexicon,
            config,
        })
    }

    fn embed_text(&self, tokens: &[String]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Ok(vec![0.0; self.cs_model.embed_dim()]);
        }
        let ts = TokenStream::new(tokens.to_vec(), Source::Query);
        let max = self
            .cs_model
            .config
            .max_desc_len
            .max(self.cs_model.config.max_query_len);
        let idx = encode_tokens(&ts, &self.cs_model.text_vocab, false, max)?;
        self.cs_model.embed(TowerKind::Text, &idx)
    }

    /// Greedy enrichment; UNK and specials are dropped from the output.
    pub fn enrich(&self, query: &TokenStream) -> Result<Vec<String>> {
        let enricher = self
            .enricher
            .ok_or_else(|| Error::MissingPrerequisite("no query enricher loaded".into()))?;
        let max_len = self.cs_model.config.max_query_len.max(2);
        let idx = encode_tokens(query, &enricher.query_vocab, true, max_len)?;
        let generated = enricher.greedy_decode(&idx)?;
        Ok(enricher.desc_vocab.decode(&generated.content()))
    }

    pub fn query_vectors(&self, query: &TokenStream) -> Result<QueryVectors> {
        if query.is_empty() {
            return Err(Error::Empty("query"));
        }
        let mut qv = QueryVectors {
            original: None,
            enriched: None,
            enriched_text: None,
            expanded_text: None,
        };
        match self.config.mode {
            RankMode::BaseOnly => qv.original = Some(self.embed_text(&query.tokens)?),
            RankMode::EnrichedOnly | RankMode::Hybrid | RankMode::NoRl => {
                let text = self.enrich(query)?;
                qv.enriched = Some(self.embed_text(&text)?);
                qv.enriched_text = Some(text);
                if self.config.mode != RankMode::EnrichedOnly {
                    qv.original = Some(self.embed_text(&query.tokens)?);
                }
            }
            RankMode::QeBaseline => {
                let lex = self.lexicon.expect("checked in Ranker::new");
                let expanded = qe_expand(query, lex);
                qv.original = Some(self.embed_text(&expanded.tokens)?);
                qv.expanded_text = Some(expanded.tokens);
            }
        }
        Ok(qv)
    }

    pub fn score(&self, qv: &QueryVectors, code: &[f64]) -> Result<f64> {
        let sim = |v: &Option<Vec<f64>>| -> Result<f64> {
            similarity(v.as_ref().expect("vector present for mode"), code)
        };
        Ok(match self.config.mode {
            RankMode::BaseOnly | RankMode::QeBaseline => sim(&qv.original)?,
            RankMode::EnrichedOnly => sim(&qv.enriched)?,
            RankMode::Hybrid | RankMode::NoRl => {
                hybrid_score(sim(&qv.enriched)?, sim(&qv.original)?, self.config.beta)
            }
        })
    }
}

/// Picks the enricher a mode ranks with: the pre-RL checkpoint for `no_rl`, else the post-RL one.
pub fn enricher_for<'a>(
    mode: RankMode,
    post_rl: Option<&'a Seq2SeqModel>,
    pre_rl: Option<&'a Seq2SeqModel>,
) -> Option<&'a Seq2SeqModel> {
    match mode {
        RankMode::NoRl => pre_rl,
        RankMode::EnrichedOnly | RankMode::Hybrid => post_rl,
        RankMode::BaseOnly | RankMode::QeBaseline => None,
    }
}

/// Top `top_k` entries by descending score, ties by ascending id.
pub fn search(
    index: &SearchIndex,
    ranker: &Ranker,
    query: &TokenStream,
    top_k: usize,
) -> Result<Vec<(String, f64)>> {
    if query.is_empty() {
        return Err(Error::Empty("query"));
    }
    if index.is_empty() {
        return Err(Error::Empty("index"));
    }
    index.check_model(ranker.cs_model)?;
    let qv = ranker.query_vectors(query)?;
    let mut scored: Vec<(String, f64)> = index
        .entries
        .par_iter()
        .map(|e| Ok((e.id.clone(), ranker.score(&qv, &e.vector)?)))
        .collect::<Result<_>>()?;
    sort_ranked(&mut scored);
    scored.truncate(top_k);
    Ok(scored)
}

/// Descending score, ascending id on ties.
pub fn sort_ranked(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// A test query with its positive snippet and fixed negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPool {
    pub query_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
    pub seed: u64,
}

impl EvalPool {
    pub fn candidates(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.positive_id).chain(self.negative_ids.iter())
    }

    pub fn size(&self) -> usize {
        self.negative_ids.len() + 1
    }
}

/// Pool construction outcome: per-query pools plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolSet {
    pub pools: Vec<EvalPool>,
    pub negatives_per_pool: usize,
    /// True when the corpus was too small for 999 negatives.
    pub fallback: bool,
}

fn pool_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_add(0x632B_E59B_D9B4_E019)
}

/// Samples, per test triple, up to 999 distinct negatives from `corpus_ids` without replacement.
pub fn build_eval_pools(test: &[Triple], corpus_ids: &[String], seed: u64) -> Result<PoolSet> {
    let unique: Vec<&String> = {
        let mut seen = HashSet::new();
        corpus_ids
            .iter()
            .filter(|id| seen.insert(id.as_str()))
            .collect()
    };
    if unique.len() < 2 {
        return Err(Error::InvalidInput(
            "corpus needs at least two snippets for pools".into(),
        ));
    }
    let negatives_per_pool = DEFAULT_POOL_NEGATIVES.min(unique.len() - 1);
    let fallback = negatives_per_pool < DEFAULT_POOL_NEGATIVES;
    let pools = test
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let others: Vec<&String> = unique.iter().copied().filter(|id| **id != t.id).collect();
            if others.len() < negatives_per_pool {
                return Err(Error::InvalidInput(format!(
                    "not enough negatives for {}",
                    t.id
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(pool_seed(seed, i));
            let picked = rand::seq::index::sample(&mut rng, others.len(), negatives_per_pool);
            Ok(EvalPool {
                query_id: t.id.clone(),
                positive_id: t.id.clone(),
                negative_ids: picked.into_iter().map(|j| others[j].clone()).collect(),
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PoolSet {
        pools,
        negatives_per_pool,
        fallback,
    })
}

pub fn write_pools(path: &Path, pools: &[EvalPool]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pools {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pools(path: &Path) -> Result<Vec<EvalPool>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Ranks each pool's positive with an arbitrary scorer `(pool, candidate id) -> score`.
pub fn rank_pools<F>(pools: &[EvalPool], scorer: F) -> Result<Vec<RankResult>>
where
    F: Fn(&EvalPool, &str) -> Result<f64> + Sync,
{
    pools
        .par_iter()
        .map(|p| {
            let scores: Vec<(&str, f64)> = p
                .candidates()
                .map(|c| Ok((c.as_str(), scorer(p, c)?)))
                .collect::<Result<_>>()?;
            metrics::frank(&scores, &p.positive_id.as_str())
        })
        .collect()
}

/// Evaluation output: the report plus per-query ranks in pool order.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub ranks: Vec<RankResult>,
}

/// Scores every pool with the search text chosen by `field` and aggregates R@1/5/10 and MRR.
///
/// `corpus` must contain every triple referenced by a pool. Queries without a
/// query field are skipped when `field` is [`EvalField::Query`].
pub fn evaluate_testset(
    ranker: &Ranker,
    pools: &[EvalPool],
    corpus: &[Triple],
    field: EvalField,
    seed: u64,
) -> Result<Evaluation> {
    let by_id: HashMap<&str, &Triple> = corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("pool references unknown id {id}")))
    };
    let selected: Vec<(&EvalPool, TokenStream)> = pools
        .iter()
        .map(|p| {
            let t = lookup(&p.query_id)?;
            let text = match field {
                EvalField::Description => Some(t.description.as_str()),
                EvalField::Query => t.query.as_deref(),
            };
            Ok(text.map(|s| (p, TokenStream::from_clean(s, Source::Query))))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if selected.is_empty() {
        return Err(Error::Empty("evaluation queries"));
    }

    let mut needed: Vec<&str> = selected
        .iter()
        .flat_map(|(p, _)| p.candidates().map(String::as_str))
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let cs = ranker.cs_model;
    let max_code = cs.config.max_code_len;
    let vectors: HashMap<&str, Vec<f64>> = needed
        .par_iter()
        .map(|&id| {
            let t = lookup(id)?;
            let ts = TokenStream::from_clean(&t.code, Source::Code);
            let idx = encode_tokens(&ts, &cs.code_vocab, false, max_code)?;
            Ok((id, cs.embed(TowerKind::Code, &idx)?))
        })
        .collect::<Result<_>>()?;

    let ranks: Vec<RankResult> = selected
        .par_iter()
        .map(|(p, text)| {
            let qv = ranker.query_vectors(text)?;
            let scores: Vec<(&str, f64)> = p
                .candidates()
                .map(|c| Ok((c.as_str(), ranker.score(&qv, &vectors[c.as_str()])?)))
                .collect::<Result<_>>()?;
            metrics::frank(&scores, &p.positive_id.as_str())
        })
        .collect::<Result<_>>()?;

    let pool_size = selected[0].0.size();
    let mut meta = ReportMetadata::new(pool_size, pool_size < DEFAULT_POOL_NEGATIVES + 1, seed);
    meta.mode = Some(ranker.config.mode.name().into());
    meta.eval_field = Some(field.name().into());
    if matches!(ranker.config.mode, RankMode::Hybrid | RankMode::NoRl) {
        meta.beta = Some(ranker.config.beta);
    }
    let report = MetricReport::from_ranks(&ranks, meta)?;
    Ok(Evaluation { report, ranks })
}

/// Frames an input for the enricher: BOS + tokens + EOS.
pub fn frame(indices: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(indices.len() + 2);
    v.push(BOS);
    v.extend_from_slice(indices);
    v.push(EOS);
    v
}
