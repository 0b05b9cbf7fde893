//! Small seeded toy corpora for demos and offline end-to-end runs.
//!
//! Every word belongs to exactly one entity phrase or one tag, so the gold
//! labels are a function of the tokens.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusSplit, LabelScheme, SplitName, TaggedSentence};

const ENTITIES: &[(&str, &[&str])] = &[
    ("PER", &["Peter", "Blackburn"]),
    ("PER", &["Anna", "Karenina"]),
    ("PER", &["Mahler"]),
    ("ORG", &["European", "Commission"]),
    ("ORG", &["Reuters"]),
    ("ORG", &["Singapore", "International", "Monetary", "Exchange"]),
    ("LOC", &["Commonwealth", "of", "Independent", "States"]),
    ("LOC", &["London"]),
    ("LOC", &["Brussels"]),
    ("MISC", &["German"]),
    ("MISC", &["Swiss"]),
    ("MISC", &["Dutch"]),
];

const FILLER: &[&str] = &[
    "the", "said", "on", "Friday", "bonds", "ended", "mostly", "higher", "market", "closed",
    "in", "a", "new", "price", "for", "sales", "rates", "rose", "after", "talks", "with",
    "officials", "and", "is", "expected", "to", "announce", "its", "plan", ".", ",",
];

const POS_LEXICON: &[(&str, &[&str])] = &[
    ("DET", &["the", "a", "this", "every"]),
    ("ADJ", &["many", "cognitive", "quiet", "new", "mental"]),
    ("NOUN", &["forms", "culture", "psychology", "field", "processes", "brain", "memories"]),
    ("VERB", &["passed", "examining", "think", "pulls", "formed", "gives"]),
    ("ADP", &["of", "through", "from", "on"]),
    ("AUX", &["are", "is", "been"]),
    ("PRON", &["they", "me", "it", "someone"]),
    ("ADV", &["down", "also", "how", "else"]),
    ("CCONJ", &["and", "or"]),
    ("PROPN", &["Figure", "Psychologists"]),
    ("NUM", &["7.2", "six"]),
    ("PUNCT", &[".", ",", "?"]),
];

/// `n` NER sentences of 3 to 15 tokens over the CoNLL-2003 labels.
pub fn ner_corpus(n: usize, seed: u64) -> CorpusSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..n)
        .map(|id| {
            let target = rng.gen_range(3..=15);
            let mut tokens = Vec::new();
            let mut labels = Vec::new();
            while tokens.len() < target {
                if rng.gen_bool(0.25) {
                    let (ty, words) = ENTITIES.choose(&mut rng).expect("non-empty");
                    for (i, word) in words.iter().enumerate() {
                        tokens.push(word.to_string());
                        labels.push(format!("{}-{ty}", if i == 0 { "B" } else { "I" }));
                    }
                } else {
                    tokens.push(FILLER.choose(&mut rng).expect("non-empty").to_string());
                    labels.push("O".to_string());
                }
            }
            TaggedSentence::new(id, tokens, labels).expect("generated sentence is valid")
        })
        .collect();
    CorpusSplit::new(SplitName::Train, LabelScheme::conll2003_ner(), sentences)
        .expect("generated labels are in the scheme")
}

/// `n` UPOS-tagged sentences of 3 to 15 tokens.
pub fn pos_corpus(n: usize, seed: u64) -> CorpusSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..n)
        .map(|id| {
            let len = rng.gen_range(3..=15);
            let (tokens, labels) = (0..len)
                .map(|_| {
                    let (tag, words) = POS_LEXICON.choose(&mut rng).expect("non-empty");
                    (words.choose(&mut rng).expect("non-empty").to_string(), tag.to_string())
                })
                .unzip();
            TaggedSentence::new(id, tokens, labels).expect("generated sentence is valid")
        })
        .collect();
    CorpusSplit::new(SplitName::Train, LabelScheme::upos(), sentences)
        .expect("generated labels are in the scheme")
}
