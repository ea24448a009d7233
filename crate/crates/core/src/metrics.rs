//! Ranking metrics (FRank, R@k, MRR) and sentence-level smoothed BLEU-4.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIE_POLICY: &str = "pessimistic";
pub const BLEU_SMOOTHING: &str = "add-one on n-gram orders 2-4";
pub const REPORT_KS: [usize; 3] = [1, 5, 10];

/// Rank of the correct candidate within a scored pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub frank: usize,
    pub pool_size: usize,
}

/// `1 + #{score > pos} + #{other candidates with score == pos}`.
///
/// Ties count against the positive, so the result does not depend on the
/// order of `scores`.
pub fn frank<I: PartialEq>(scores: &[(I, f64)], positive: &I) -> Result<RankResult> {
    let mut positive_score = None;
    for (id, s) in scores {
        if id == positive {
            if positive_score.is_some() {
                return Err(Error::InvalidInput(
                    "positive appears more than once".into(),
                ));
            }
            positive_score = Some(*s);
        }
    }
    let pos =
        positive_score.ok_or_else(|| Error::InvalidInput("positive missing from pool".into()))?;
    if pos.is_nan() {
        return Err(Error::NonFinite("positive score"));
    }
    let ahead = scores
        .iter()
        .filter(|(id, s)| id != positive && *s >= pos)
        .count();
    Ok(RankResult {
        frank: 1 + ahead,
        pool_size: scores.len(),
    })
}

/// Fraction of queries whose positive ranks within the top `k`.
pub fn recall_at_k(franks: &[RankResult], k: usize) -> Result<f64> {
    if franks.is_empty() {
        return Err(Error::Empty("rank list"));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let hits = franks.iter().filter(|r| r.frank <= k).count();
    Ok(hits as f64 / franks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(franks: &[RankResult]) -> Result<f64> {
    if franks.is_empty() {
        return Err(Error::Empty("rank list"));
    }
    Ok(franks.iter().map(|r| 1.0 / r.frank as f64).sum::<f64>() / franks.len() as f64)
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 with brevity penalty.
///
/// Unigram precision is unsmoothed; orders 2-4 use `(matches + 1) / (total + 1)`,
/// so candidates shorter than four tokens still score. An empty candidate scores 0.
pub fn bleu4<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    (bp * (log_sum / 4.0).exp()).clamp(0.0, 1.0)
}

/// Provenance recorded next to every report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tie_policy: String,
    pub bleu_smoothing: String,
    pub pool_size: usize,
    pub pool_fallback: bool,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

impl ReportMetadata {
    pub fn new(pool_size: usize, pool_fallback: bool, seed: u64) -> Self {
        ReportMetadata {
            tie_policy: TIE_POLICY.into(),
            bleu_smoothing: BLEU_SMOOTHING.into(),
            pool_size,
            pool_fallback,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub n_queries: usize,
    pub metadata: ReportMetadata,
}

impl MetricReport {
    pub fn from_ranks(franks: &[RankResult], metadata: ReportMetadata) -> Result<Self> {
        let mut r_at = BTreeMap::new();
        for k in REPORT_KS {
            r_at.insert(k, recall_at_k(franks, k)?);
        }
        Ok(MetricReport {
            r_at,
            mrr: mrr(franks)?,
            n_queries: franks.len(),
            metadata,
        })
    }

    pub fn recall(&self, k: usize) -> f64 {
        self.r_at.get(&k).copied().unwrap_or(f64::NAN)
    }
}
