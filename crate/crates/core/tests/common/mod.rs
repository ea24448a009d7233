#![allow(dead_code)]

use std::collections::HashSet;

use qecs::corpus::{
    build_vocabulary, encode_tokens, generate_synthetic_corpus, preprocess_all, Source,
    TokenStream, Triple, Vocabulary,
};
use qecs::encoder::{EncodedPair, EncoderConfig, EncoderModel, ModelKind};
use qecs::qse::{QsePair, Seq2SeqConfig, Seq2SeqModel};

pub fn cleaned_synthetic(n: usize, seed: u64) -> Vec<Triple> {
    preprocess_all(&generate_synthetic_corpus(n, seed))
        .unwrap()
        .0
}

pub fn stream(text: &str, source: Source) -> TokenStream {
    TokenStream::from_clean(text, source)
}

pub fn vocab_of<'a>(texts: impl IntoIterator<Item = &'a str>, source: Source) -> Vocabulary {
    let streams: Vec<TokenStream> = texts.into_iter().map(|t| stream(t, source)).collect();
    build_vocabulary(&streams, 10_000).unwrap()
}

/// The first `n` triples whose queries are pairwise distinct.
pub fn unique_query_triples(n: usize, seed: u64) -> Vec<Triple> {
    let mut seen = HashSet::new();
    let picked: Vec<Triple> = cleaned_synthetic(4 * n + 50, seed)
        .into_iter()
        .filter(|t| t.query.as_ref().is_some_and(|q| seen.insert(q.clone())))
        .take(n)
        .collect();
    assert_eq!(picked.len(), n);
    picked
}

pub fn small_seq2seq_config(seed: u64) -> Seq2SeqConfig {
    Seq2SeqConfig {
        embed_dim: 32,
        hidden_dim: 64,
        attention_dim: 32,
        max_decode_len: 30,
        batch_size: 2,
        seed,
        ..Default::default()
    }
}

pub fn seq2seq_for(triples: &[Triple], config: Seq2SeqConfig) -> (Seq2SeqModel, Vec<QsePair>) {
    let qv = vocab_of(
        triples.iter().filter_map(|t| t.query.as_deref()),
        Source::Query,
    );
    let dv = vocab_of(
        triples.iter().map(|t| t.description.as_str()),
        Source::Description,
    );
    let model = Seq2SeqModel::new(config, qv, dv).unwrap();
    let pairs = qse_pairs(&model, triples);
    (model, pairs)
}

pub fn qse_pairs(model: &Seq2SeqModel, triples: &[Triple]) -> Vec<QsePair> {
    triples
        .iter()
        .filter_map(|t| {
            let q = t.query.as_deref()?;
            Some(QsePair {
                query: encode_tokens(&stream(q, Source::Query), &model.query_vocab, true, 64)
                    .unwrap(),
                description: encode_tokens(
                    &stream(&t.description, Source::Description),
                    &model.desc_vocab,
                    true,
                    64,
                )
                .unwrap(),
            })
        })
        .collect()
}

pub fn small_encoder_config(kind: ModelKind, seed: u64) -> EncoderConfig {
    EncoderConfig {
        model_kind: kind,
        embed_dim: 32,
        hidden_dim: 32,
        batch_size: 8,
        seed,
        ..Default::default()
    }
}

pub fn encoder_for(train: &[Triple], config: EncoderConfig) -> EncoderModel {
    let cv = vocab_of(train.iter().map(|t| t.code.as_str()), Source::Code);
    let tv = vocab_of(
        train.iter().map(|t| t.description.as_str()),
        Source::Description,
    );
    EncoderModel::new(config, cv, tv).unwrap()
}

pub fn cs_pairs(model: &EncoderModel, triples: &[Triple]) -> Vec<EncodedPair> {
    triples
        .iter()
        .map(|t| EncodedPair {
            description: encode_tokens(
                &stream(&t.description, Source::Description),
                &model.text_vocab,
                false,
                60,
            )
            .unwrap(),
            code: encode_tokens(
                &stream(&t.code, Source::Code),
                &model.code_vocab,
                false,
                200,
            )
            .unwrap(),
        })
        .collect()
}

/// Fraction of pairs whose greedy decode reproduces the target content exactly.
pub fn exact_match_rate(model: &Seq2SeqModel, pairs: &[QsePair]) -> f64 {
    let hits = pairs
        .iter()
        .filter(|p| {
            let g = model.greedy_decode(&p.query).unwrap();
            let target: Vec<usize> = p.description[1..p.description.len() - 1].to_vec();
            g.ended_with_eos() && g.content() == target
        })
        .count();
    hits as f64 / pairs.len() as f64
}

/// Largest relative disagreement between `analytic` and central differences of `loss`
/// over every scalar of every parameter. The denominator is floored at 1e-6 so
/// near-zero gradients are judged on absolute error.
pub fn max_relative_fd_error(
    params: &qecs::nn::ParamStore,
    analytic: &qecs::nn::Gradients,
    loss: impl Fn(&qecs::nn::ParamStore) -> f64,
) -> f64 {
    let h = 1e-5;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        let (rows, cols) = (params.get(id).rows, params.get(id).cols);
        let g = analytic.dense(id, rows, cols);
        for k in 0..rows * cols {
            let orig = params.get(id).data[k];
            probe.get_mut(id).data[k] = orig + h;
            let up = loss(&probe);
            probe.get_mut(id).data[k] = orig - h;
            let down = loss(&probe);
            probe.get_mut(id).data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = g.data[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

fn letters(n: usize, prefix: &str) -> String {
    (0..n)
        .map(|i| format!("{prefix}{}", (b'a' + i as u8) as char))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Encoder under 2k parameters with a six-word vocabulary per tower.
pub fn tiny_encoder(kind: ModelKind) -> EncoderModel {
    let cfg = EncoderConfig {
        model_kind: kind,
        embed_dim: 4,
        hidden_dim: 3,
        init_scale: 0.5,
        seed: 11,
        ..Default::default()
    };
    let code = letters(6, "c");
    let text = letters(6, "t");
    EncoderModel::new(
        cfg,
        vocab_of([code.as_str()], Source::Code),
        vocab_of([text.as_str()], Source::Description),
    )
    .unwrap()
}

/// Seq2seq model under 2k parameters with four-word vocabularies.
pub fn tiny_seq2seq() -> Seq2SeqModel {
    let cfg = Seq2SeqConfig {
        embed_dim: 4,
        hidden_dim: 4,
        attention_dim: 4,
        init_scale: 0.5,
        embed_init_scale: 0.5,
        seed: 3,
        ..Default::default()
    };
    let q = letters(4, "q");
    let d = letters(4, "d");
    Seq2SeqModel::new(
        cfg,
        vocab_of([q.as_str()], Source::Query),
        vocab_of([d.as_str()], Source::Description),
    )
    .unwrap()
}

/// Finite-difference error of the triplet ranking loss gradient.
pub fn encoder_gradient_error(kind: ModelKind) -> f64 {
    let model = tiny_encoder(kind);
    assert!(model.params.num_scalars() <= 2000);
    let (desc, pos, neg) = (vec![4, 6, 5, 9], vec![7, 4, 8], vec![5, 9, 6, 4, 4]);
    let loss_of = |m: &EncoderModel| {
        let mut t = qecs::nn::Tape::new(&m.params);
        let l = m.triplet_loss_on_tape(&mut t, &desc, &pos, &neg).unwrap();
        (t.scalar(l), t.backward(l))
    };
    let (value, grads) = loss_of(&model);
    assert!(value > 1e-3, "hinge inactive: {value}");
    max_relative_fd_error(&model.params, &grads, |p| {
        let mut m = model.clone();
        m.params = p.clone();
        loss_of(&m).0
    })
}

/// Finite-difference error of the teacher-forcing loss gradient.
pub fn seq2seq_gradient_error() -> f64 {
    let model = tiny_seq2seq();
    assert!(model.params.num_scalars() <= 2000);
    let (query, target) = (vec![2, 5, 4, 7, 3], vec![2, 6, 4, 5, 7, 3]);
    let mut t = qecs::nn::Tape::new(&model.params);
    let l = model
        .teacher_forcing_loss_on_tape(&mut t, &query, &target)
        .unwrap();
    let grads = t.backward(l);
    max_relative_fd_error(&model.params, &grads, |p| {
        let mut m = model.clone();
        m.params = p.clone();
        m.teacher_forcing_loss(&query, &target).unwrap()
    })
}
