//! Reads a CoNLL-2003 style file, repairs stray `I-` tags, and writes the
//! canonical form back out together with a seeded test subset.
//!
//!     cargo run --example ingest_corpus [path/to/eng.train]

use cp_retrieval::corpus::{parse_conll_with, sample_test_subset, serialize, ConllOptions, Task};

const SAMPLE: &str = "\
-DOCSTART- -X- -X- O

EU NNP B-NP B-ORG
rejects VBZ B-VP O
German JJ B-NP B-MISC
call NN I-NP O
to TO B-VP O
boycott VB I-VP O
British JJ B-NP I-MISC
lamb NN I-NP O
. . O O

Peter NNP B-NP B-PER
Blackburn NNP I-NP I-PER

BRUSSELS NNP B-NP B-LOC
1996-08-22 CD I-NP O
";

fn main() -> cp_retrieval::Result<()> {
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => SAMPLE.as_bytes().to_vec(),
    };
    let opts = ConllOptions::for_task(Task::Ner).expect("NER has a column convention");
    let (split, report) = parse_conll_with(&bytes, &opts)?;

    println!("{report:#?}");
    for (label, count) in split.label_counts() {
        println!("{label:>8} {count}");
    }

    // "British" was tagged I-MISC after an O; the reader rewrote it to B-MISC.
    let canonical = serialize(&split);
    print!("{canonical}");
    let (again, _) = parse_conll_with(canonical.as_bytes(), &opts)?;
    for (a, b) in again.sentences.iter().zip(&split.sentences) {
        assert_eq!((&a.tokens, &a.labels), (&b.tokens, &b.labels));
    }

    let subset = sample_test_subset(&split, 2, 1000);
    for sentence in &subset.sentences {
        println!("#{} {}", sentence.id, sentence.text());
    }
    Ok(())
}
