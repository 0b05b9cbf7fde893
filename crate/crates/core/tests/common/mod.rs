//! Independent reference implementations used as test oracles, plus random
//! data generators. Nothing here calls into the library's scoring, span or
//! entropy code.

#![allow(dead_code)]

pub mod mock_server;

use cp_retrieval::corpus::{CorpusSplit, LabelScheme, SplitName, TaggedSentence};
use rand::seq::SliceRandom;
use rand::Rng;

pub const NER_TYPES: [&str; 4] = ["PER", "ORG", "LOC", "MISC"];

pub fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn sls(a: usize, b: usize, t: f64) -> f64 {
    let d = (a as f64 - b as f64).abs();
    1.0 / (1.0 + (d / t).exp())
}

/// Entropy from a sorted copy of the labels, counting runs.
pub fn entropy(labels: &[String]) -> f64 {
    let mut sorted = labels.to_vec();
    sorted.sort();
    let n = sorted.len() as f64;
    let mut h = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let p = (j - i) as f64 / n;
        h += -p * p.log2();
        i = j;
    }
    h.max(0.0)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    (dot / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

fn max_of(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    m
}

/// Complexity score of every pool sentence against `test`, written from the
/// formulas directly.
pub fn scores(
    test: &TaggedSentence,
    test_vec: &[f64],
    pool: &[TaggedSentence],
    pool_vecs: &[Vec<f64>],
    w: [f64; 3],
    t: f64,
) -> Vec<f64> {
    let sims: Vec<f64> = pool_vecs.iter().map(|v| cosine(v, test_vec)).collect();
    let lens: Vec<f64> = pool.iter().map(|s| sls(s.tokens.len(), test.tokens.len(), t)).collect();
    let ents: Vec<f64> = pool.iter().map(|s| entropy(&s.labels)).collect();
    let (ms, ml, me) = (max_of(&sims), max_of(&lens), max_of(&ents));
    (0..pool.len())
        .map(|i| {
            let ne = if me == 0.0 { 1.0 } else { ents[i] / me };
            w[0] * (lens[i] / ml) + w[1] * ne + w[2] * (sims[i] / ms)
        })
        .collect()
}

/// Full sort of every candidate, best first, lower id first on ties.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    ids
}

/// Span extraction following the conlleval chunk start/end rules, returning
/// `(start, end_exclusive, type)`.
pub fn spans(labels: &[String]) -> Vec<(usize, usize, String)> {
    let split = |l: &str| -> (char, String) {
        if l == "O" {
            ('O', String::new())
        } else {
            (l.chars().next().unwrap(), l[2..].to_string())
        }
    };
    let mut out = Vec::new();
    let mut start = None;
    let (mut prev_tag, mut prev_type) = ('O', String::new());
    for (i, label) in labels.iter().enumerate() {
        let (tag, ty) = split(label);
        let ends = matches!(prev_tag, 'B' | 'I') && (tag == 'B' || tag == 'O' || ty != prev_type);
        let starts = tag == 'B' || (tag == 'I' && (prev_tag == 'O' || ty != prev_type));
        if ends {
            out.push((start.take().unwrap(), i, prev_type.clone()));
        }
        if starts {
            start = Some(i);
        }
        prev_tag = tag;
        prev_type = ty;
    }
    if let Some(s) = start {
        out.push((s, labels.len(), prev_type));
    }
    out.sort();
    out
}

/// Positions of `I-X` labels not preceded by `B-X` or `I-X`, by direct scan.
pub fn bio_violations(labels: &[String]) -> Vec<usize> {
    (0..labels.len())
        .filter(|&i| {
            let Some(ty) = labels[i].strip_prefix("I-") else {
                return false;
            };
            i == 0 || (labels[i - 1] != format!("B-{ty}") && labels[i - 1] != format!("I-{ty}"))
        })
        .collect()
}

/// Arbitrary (possibly ill-formed) BIO sequence over `types`.
pub fn random_bio<R: Rng>(rng: &mut R, len: usize, types: &[&str]) -> Vec<String> {
    (0..len)
        .map(|_| match rng.gen_range(0..3) {
            0 => "O".to_string(),
            1 => format!("B-{}", types.choose(rng).unwrap()),
            _ => format!("I-{}", types.choose(rng).unwrap()),
        })
        .collect()
}

pub fn random_token<R: Rng>(rng: &mut R) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,-:;()%$/'";
    let len = rng.gen_range(1..8);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap() as char).collect()
}

/// Random NER sentences with valid BIO labels and tokens drawn from a small
/// vocabulary so that embeddings overlap.
pub fn random_ner_split<R: Rng>(rng: &mut R, n: usize, max_len: usize) -> CorpusSplit {
    let vocab: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
    let sentences = (0..n)
        .map(|id| {
            let len = rng.gen_range(1..=max_len);
            let tokens: Vec<String> = (0..len).map(|_| vocab.choose(rng).unwrap().clone()).collect();
            let mut labels = random_bio(rng, len, &NER_TYPES);
            cp_retrieval::corpus::repair_bio(&mut labels);
            TaggedSentence::new(id, tokens, labels).unwrap()
        })
        .collect();
    CorpusSplit::new(SplitName::Train, LabelScheme::conll2003_ner(), sentences).unwrap()
}
