//! Triple ingestion: identifier tokenization, cleaning, vocabularies,
//! deterministic splits and a synthetic corpus generator.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Java,
    Python,
    Synthetic,
}

/// One aligned code / description / query record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub id: String,
    pub language: Language,
    pub code: String,
    pub description: String,
    #[serde(default)]
    pub query: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Code,
    Description,
    Query,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<String>,
    pub source: Source,
}

impl TokenStream {
    pub fn new(tokens: Vec<String>, source: Source) -> Self {
        TokenStream { tokens, source }
    }

    /// Splits already-cleaned text on whitespace.
    pub fn from_clean(text: &str, source: Source) -> Self {
        TokenStream {
            tokens: text.split_whitespace().map(str::to_owned).collect(),
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Lower,
    Upper,
    Digit,
    Other,
}

fn class_of(c: char) -> CharClass {
    if c.is_uppercase() {
        CharClass::Upper
    } else if c.is_numeric() {
        CharClass::Digit
    } else if c.is_alphabetic() {
        CharClass::Lower
    } else {
        CharClass::Other
    }
}

/// Splits camelCase, snake_case, acronyms and letter/digit runs into lowercase tokens.
///
/// Any character that is neither a letter nor a digit separates tokens. A run
/// of capitals stays together except that its last capital starts the next
/// token when a lowercase letter follows (`HTTPServer` gives `http`, `server`).
pub fn tokenize_identifier(raw: &str) -> Vec<String> {
    let chars: Vec<char> = raw.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            tokens.push(current.to_lowercase());
            current.clear();
        }
    };
    for (i, &ch) in chars.iter().enumerate() {
        let class = class_of(ch);
        if class == CharClass::Other {
            flush(&mut current, &mut tokens);
            continue;
        }
        if i > 0 && !current.is_empty() {
            let prev = class_of(chars[i - 1]);
            let next = chars.get(i + 1).map(|&c| class_of(c));
            let boundary = match (prev, class) {
                (CharClass::Lower, CharClass::Upper) => true,
                (CharClass::Upper, CharClass::Upper) => next == Some(CharClass::Lower),
                (CharClass::Digit, CharClass::Lower | CharClass::Upper) => true,
                (CharClass::Lower | CharClass::Upper, CharClass::Digit) => true,
                _ => false,
            };
            if boundary {
                flush(&mut current, &mut tokens);
            }
        }
        current.push(ch);
    }
    flush(&mut current, &mut tokens);
    tokens
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    EmptyCode,
    EmptyDescription,
}

/// Outcome of cleaning one record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cleaned {
    Kept(Triple),
    Dropped { id: String, reason: DropReason },
}

/// Replaces every field by the space-joined output of [`tokenize_identifier`].
/// A query that cleans to nothing becomes absent.
pub fn preprocess_triple(t: &Triple) -> Cleaned {
    let code = tokenize_identifier(&t.code).join(" ");
    if code.is_empty() {
        return Cleaned::Dropped {
            id: t.id.clone(),
            reason: DropReason::EmptyCode,
        };
    }
    let description = tokenize_identifier(&t.description).join(" ");
    if description.is_empty() {
        return Cleaned::Dropped {
            id: t.id.clone(),
            reason: DropReason::EmptyDescription,
        };
    }
    let query = t
        .query
        .as_deref()
        .map(|q| tokenize_identifier(q).join(" "))
        .filter(|q| !q.is_empty());
    Cleaned::Kept(Triple {
        id: t.id.clone(),
        language: t.language,
        code,
        description,
        query,
    })
}

/// Cleans all records in parallel, keeping input order. Returns kept triples and the drop count.
pub fn preprocess_all(triples: &[Triple]) -> Result<(Vec<Triple>, usize)> {
    let mut seen = HashSet::new();
    for t in triples {
        if !seen.insert(t.id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate triple id {}", t.id)));
        }
    }
    let cleaned: Vec<Cleaned> = triples.par_iter().map(preprocess_triple).collect();
    let mut kept = Vec::with_capacity(cleaned.len());
    let mut dropped = 0;
    for c in cleaned {
        match c {
            Cleaned::Kept(t) => kept.push(t),
            Cleaned::Dropped { .. } => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

/// Method-name heuristic for recurrent code towers: the first identifier token.
pub fn method_name(code_tokens: &[String]) -> Option<&str> {
    code_tokens.first().map(String::as_str)
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<bos>", "<eos>"];
pub const DEFAULT_VOCAB_SIZE: usize = 10_000;

/// Frequency-ranked token index with the four reserved specials at 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Number of entries including specials.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= NUM_SPECIALS
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Content tokens for `ids`, skipping specials and UNK.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i >= NUM_SPECIALS)
            .filter_map(|&i| self.tokens.get(i).cloned())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut tokens = Vec::new();
        for line in reader.lines() {
            tokens.push(line?);
        }
        let shown = path.display().to_string();
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::Parse {
                    path: shown,
                    line: i + 1,
                    message: format!("expected {special}"),
                });
            }
        }
        let mut seen = HashSet::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || !seen.insert(t.as_str()) {
                return Err(Error::Parse {
                    path: shown,
                    line: i + 1,
                    message: "empty or duplicate token".into(),
                });
            }
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Keeps the `max_size` most frequent tokens, ties broken lexicographically.
pub fn build_vocabulary(streams: &[TokenStream], max_size: usize) -> Result<Vocabulary> {
    if max_size == 0 {
        return Err(Error::InvalidInput(
            "vocabulary max_size must be at least 1".into(),
        ));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in streams {
        for t in &s.tokens {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    freq.retain(|t, _| !SPECIAL_TOKENS.contains(t));
    if freq.is_empty() {
        return Err(Error::Empty("vocabulary input has no tokens"));
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().take(max_size).map(|(t, _)| t.to_owned()))
        .collect();
    Ok(Vocabulary::from_tokens(tokens))
}

/// Maps tokens to indices, UNK for unknown, truncated to `max_len` with EOS kept last.
pub fn encode_tokens(
    ts: &TokenStream,
    vocab: &Vocabulary,
    add_bos_eos: bool,
    max_len: usize,
) -> Result<Vec<usize>> {
    if ts.is_empty() {
        return Err(Error::Empty("token stream"));
    }
    if add_bos_eos && max_len < 2 {
        return Err(Error::InvalidInput(
            "max_len must be at least 2 with BOS/EOS".into(),
        ));
    }
    if max_len == 0 {
        return Err(Error::InvalidInput("max_len must be positive".into()));
    }
    let body = if add_bos_eos { max_len - 2 } else { max_len };
    let mut out = Vec::with_capacity(ts.len().min(body) + 2);
    if add_bos_eos {
        out.push(BOS);
    }
    out.extend(ts.tokens.iter().take(body).map(|t| vocab.id(t)));
    if add_bos_eos {
        out.push(EOS);
    }
    Ok(out)
}

/// Train / valid / test partition of triples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub seed: u64,
}

/// Serialized form of a split: only ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[Triple]| v.iter().map(|t| t.id.clone()).collect();
        SplitManifest {
            seed: self.seed,
            train: ids(&self.train),
            valid: ids(&self.valid),
            test: ids(&self.test),
        }
    }

    /// Rebuilds a split from a manifest and the cleaned corpus.
    pub fn from_manifest(m: &SplitManifest, triples: &[Triple]) -> Result<Self> {
        let by_id: HashMap<&str, &Triple> = triples.iter().map(|t| (t.id.as_str(), t)).collect();
        let pick = |ids: &[String]| -> Result<Vec<Triple>> {
            ids.iter()
                .map(|id| {
                    by_id.get(id.as_str()).map(|t| (*t).clone()).ok_or_else(|| {
                        Error::InvalidInput(format!("split references unknown id {id}"))
                    })
                })
                .collect()
        };
        Ok(DatasetSplit {
            train: pick(&m.train)?,
            valid: pick(&m.valid)?,
            test: pick(&m.test)?,
            seed: m.seed,
        })
    }
}

/// Seeded shuffle followed by an 8:1:1 partition; rounding remainder goes to train.
pub fn split_dataset(triples: &[Triple], seed: u64) -> Result<DatasetSplit> {
    if triples.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 triples to split, got {}",
            triples.len()
        )));
    }
    let mut shuffled = triples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let held = n / 10;
    let test = shuffled.split_off(n - held);
    let valid = shuffled.split_off(n - 2 * held);
    Ok(DatasetSplit {
        train: shuffled,
        valid,
        test,
        seed,
    })
}

pub fn read_triples(path: &Path) -> Result<Vec<Triple>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Triple = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[Triple]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in triples {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

const VERBS: [&str; 16] = [
    "sort", "parse", "read", "write", "merge", "filter", "convert", "remove", "find", "compare",
    "split", "load", "save", "encode", "decode", "validate",
];
const OBJECTS: [&str; 20] = [
    "list", "string", "file", "array", "map", "image", "date", "number", "json", "xml", "url",
    "matrix", "tree", "queue", "buffer", "record", "token", "path", "column", "header",
];
const QUALIFIERS: [&str; 15] = [
    "duplicate",
    "empty",
    "nested",
    "sorted",
    "large",
    "temporary",
    "binary",
    "unicode",
    "remote",
    "local",
    "hidden",
    "invalid",
    "cached",
    "compressed",
    "encrypted",
];
const CONTEXTS: [&str; 15] = [
    "directory",
    "database",
    "socket",
    "stream",
    "config",
    "request",
    "response",
    "cache",
    "thread",
    "archive",
    "table",
    "document",
    "network",
    "console",
    "memory",
];

/// Number of distinct keyword combinations the synthetic grammar can produce.
pub const SYNTHETIC_CAPACITY: usize =
    VERBS.len() * OBJECTS.len() * QUALIFIERS.len() * CONTEXTS.len();

/// Probability that a qualifier (context) is drawn from the pair tied to the
/// verb (object) rather than uniformly.
const AFFINITY: f64 = 0.8;

/// Description templates over (verb, qualifier, object, context).
const DESCRIPTION_TEMPLATES: [&str; 6] = [
    "{v} the {q} {o} from a given {c}",
    "{v} all {q} {o} items in the {c} and hand back the result",
    "this method will {v} each {q} {o} that is stored in the current {c} using a simple loop",
    "helper to {v} {q} {o} values taken from the {c}",
    "{v} a {q} {o} with the {c} then give a fresh {o} to the caller",
    "given a {c} {v} every {q} {o} it contains and collect them for later use by other parts",
];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Generates `n` triples whose descriptions each carry a distinct set of four
/// keywords (verb, qualifier, object, context). Qualifiers lean on the verb
/// and contexts on the object, so a query's missing keywords are partly
/// predictable. Code embeds exactly those keywords in identifiers; queries
/// keep the verb and object plus an optional third keyword and filler words.
///
/// Panics if `n` exceeds [`SYNTHETIC_CAPACITY`].
pub fn generate_synthetic_corpus(n: usize, seed: u64) -> Vec<Triple> {
    assert!(
        n <= SYNTHETIC_CAPACITY,
        "synthetic corpus is limited to {SYNTHETIC_CAPACITY} triples"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut misses = 0usize;
    while out.len() < n {
        let (vi, oi) = (
            rng.gen_range(0..VERBS.len()),
            rng.gen_range(0..OBJECTS.len()),
        );
        // Usually pick one of the two qualifiers tied to the verb and one of the
        // two contexts tied to the object; the rest of the time draw uniformly.
        // Once affine combinations run out the uniform draw takes over.
        let affine = misses < 64 && rng.gen_bool(AFFINITY);
        let qi = if affine {
            (3 * vi + rng.gen_range(0..2)) % QUALIFIERS.len()
        } else {
            rng.gen_range(0..QUALIFIERS.len())
        };
        let affine = misses < 64 && rng.gen_bool(AFFINITY);
        let ci = if affine {
            (2 * oi + rng.gen_range(0..2)) % CONTEXTS.len()
        } else {
            rng.gen_range(0..CONTEXTS.len())
        };
        let combo = (vi, qi, oi, ci);
        if !used.insert(combo) {
            misses += 1;
            continue;
        }
        misses = 0;
        let (v, q, o, c) = (
            VERBS[combo.0],
            QUALIFIERS[combo.1],
            OBJECTS[combo.2],
            CONTEXTS[combo.3],
        );
        let template = DESCRIPTION_TEMPLATES[rng.gen_range(0..DESCRIPTION_TEMPLATES.len())];
        let description = template
            .replace("{v}", v)
            .replace("{q}", q)
            .replace("{o}", o)
            .replace("{c}", c);
        let code = if rng.gen_bool(0.5) {
            format!(
                "public static {O} {v}{Q}{O}({C} {c}) {{ {O} out = {c}.{v}(); return out; }}",
                O = capitalize(o),
                Q = capitalize(q),
                C = capitalize(c),
            )
        } else {
            format!("def {v}_{q}_{o}(src_{c}):\n    out = src_{c}.{v}()\n    return out")
        };

        let mut keywords = vec![v];
        if rng.gen_bool(0.35) {
            keywords.push(q);
        }
        keywords.push(o);
        if rng.gen_bool(0.25) {
            keywords.extend(["in", c]);
        }
        let prefixes: [&[&str]; 3] = [&[], &["how", "to"], &["how", "do", "i"]];
        let mut prefix = prefixes[rng.gen_range(0..prefixes.len())].to_vec();
        while prefix.len() + keywords.len() > 7 {
            prefix.pop();
        }
        if prefix.len() + keywords.len() < 3 {
            prefix = vec!["how", "to"];
        }
        let query = prefix
            .iter()
            .chain(keywords.iter())
            .copied()
            .collect::<Vec<_>>()
            .join(" ");

        out.push(Triple {
            id: format!("syn-{seed}-{:06}", out.len()),
            language: Language::Synthetic,
            code,
            description,
            query: Some(query),
        });
    }
    out
}
