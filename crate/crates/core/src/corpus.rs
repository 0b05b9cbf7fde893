//! Tagged corpora: label schemes, CoNLL / CoNLL-U readers, canonical writers,
//! BIO validation and deterministic test-subset sampling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed used when sampling evaluation subsets unless the caller overrides it.
pub const DEFAULT_SAMPLE_SEED: u64 = 1000;

/// Number of test sentences drawn per task by default.
pub const DEFAULT_TEST_SAMPLE: usize = 1000;

/// Delimiter between a token and its label in rendered prompts.
pub const TOKEN_LABEL_DELIMITER: char = '_';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ner,
    Chunk,
    Pos,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Ner => "ner",
            Task::Chunk => "chunk",
            Task::Pos => "pos",
        }
    }

    pub fn default_scheme(&self) -> LabelScheme {
        match self {
            Task::Ner => LabelScheme::conll2003_ner(),
            Task::Chunk => LabelScheme::conll2000_chunk(),
            Task::Pos => LabelScheme::upos(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ner" => Ok(Task::Ner),
            "chunk" | "chunking" => Ok(Task::Chunk),
            "pos" => Ok(Task::Pos),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Bio,
    Flat,
}

/// Closed label vocabulary of one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelScheme {
    task: Task,
    kind: SchemeKind,
    labels: Vec<String>,
}

const CHUNK_TYPES: [&str; 11] = [
    "ADJP", "ADVP", "CONJP", "INTJ", "LST", "NP", "PP", "PRT", "SBAR", "UCP", "VP",
];

const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

impl LabelScheme {
    pub fn new<I, S>(task: Task, kind: SchemeKind, labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Scheme("label scheme is empty".into()));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() || label.contains(char::is_whitespace) {
                return Err(Error::Scheme(format!("malformed label {label:?}")));
            }
            if label.contains(TOKEN_LABEL_DELIMITER) {
                return Err(Error::Scheme(format!(
                    "label {label:?} contains the token/label delimiter"
                )));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::Scheme(format!("duplicate label {label:?}")));
            }
        }
        if kind == SchemeKind::Bio {
            if !seen.contains("O") {
                return Err(Error::Scheme("BIO scheme must contain \"O\"".into()));
            }
            if let Some(bad) = labels
                .iter()
                .find(|l| l.as_str() != "O" && !l.starts_with("B-") && !l.starts_with("I-"))
            {
                return Err(Error::Scheme(format!(
                    "label {bad:?} is neither \"O\" nor B-/I- prefixed"
                )));
            }
        }
        Ok(Self { task, kind, labels })
    }

    /// Builds a BIO scheme with `O` plus `B-`/`I-` labels for every type.
    pub fn bio_from_types(task: Task, types: &[&str]) -> Result<Self> {
        let mut labels = vec!["O".to_string()];
        for ty in types {
            labels.push(format!("B-{ty}"));
            labels.push(format!("I-{ty}"));
        }
        Self::new(task, SchemeKind::Bio, labels)
    }

    /// The nine CoNLL-2003 NER labels.
    pub fn conll2003_ner() -> Self {
        Self::bio_from_types(Task::Ner, &["PER", "ORG", "LOC", "MISC"]).expect("static scheme")
    }

    /// The CoNLL-2000 chunking labels in BIO encoding.
    pub fn conll2000_chunk() -> Self {
        Self::bio_from_types(Task::Chunk, &CHUNK_TYPES).expect("static scheme")
    }

    /// The seventeen Universal Dependencies UPOS tags.
    pub fn upos() -> Self {
        Self::new(Task::Pos, SchemeKind::Flat, UPOS_TAGS).expect("static scheme")
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn is_bio(&self) -> bool {
        self.kind == SchemeKind::Bio
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    /// Label used when a prediction cannot be mapped onto the scheme:
    /// `O` for BIO schemes, `NOUN` (the majority UPOS tag) for flat ones.
    pub fn fallback_label(&self) -> &str {
        match self.kind {
            SchemeKind::Bio => "O",
            SchemeKind::Flat => {
                if self.contains("NOUN") {
                    "NOUN"
                } else {
                    &self.labels[0]
                }
            }
        }
    }
}

/// One sentence of a split: tokens with their aligned gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub id: usize,
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    /// Original column rows, kept so the canonical writer can reproduce the input.
    #[serde(skip)]
    pub rows: Option<Vec<Vec<String>>>,
}

impl TaggedSentence {
    pub fn new(id: usize, tokens: Vec<String>, labels: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Domain(format!("sentence {id} has no tokens")));
        }
        if tokens.len() != labels.len() {
            return Err(Error::Domain(format!(
                "sentence {id} has {} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        for token in &tokens {
            check_token(token)?;
        }
        Ok(Self {
            id,
            tokens,
            labels,
            rows: None,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens joined by single spaces, the text form used for prompts and embedding keys.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Rejects tokens that cannot be rendered unambiguously in a prompt.
pub fn check_token(token: &str) -> Result<()> {
    if token.is_empty() {
        return Err(Error::Token {
            token: token.into(),
            reason: "empty token".into(),
        });
    }
    if token.contains(TOKEN_LABEL_DELIMITER) {
        return Err(Error::Token {
            token: token.into(),
            reason: "underscore is reserved as the token/label delimiter".into(),
        });
    }
    if token.contains(char::is_whitespace) {
        return Err(Error::Token {
            token: token.into(),
            reason: "whitespace inside token".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

/// File layout a split was read from; decides how it is written back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Conll { tag_column: usize },
    Conllu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub name: SplitName,
    pub sentences: Vec<TaggedSentence>,
    pub scheme: LabelScheme,
    pub format: Option<SourceFormat>,
}

impl CorpusSplit {
    /// Builds a split, renumbering sentence ids densely in the given order.
    pub fn new(name: SplitName, scheme: LabelScheme, sentences: Vec<TaggedSentence>) -> Result<Self> {
        let mut sentences = sentences;
        for (idx, sentence) in sentences.iter_mut().enumerate() {
            sentence.id = idx;
            if let Some(bad) = sentence.labels.iter().find(|l| !scheme.contains(l)) {
                return Err(Error::Scheme(format!(
                    "sentence {idx} uses label {bad:?} which is not in the {} scheme",
                    scheme.task()
                )));
            }
        }
        Ok(Self {
            name,
            sentences,
            scheme,
            format: None,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&TaggedSentence> {
        self.sentences.get(id)
    }

    pub fn with_name(mut self, name: SplitName) -> Self {
        self.name = name;
        self
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(TaggedSentence::len).sum()
    }

    /// Label frequencies over the whole split.
    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for sentence in &self.sentences {
            for label in &sentence.labels {
                *counts.entry(label.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Writes `{id, tokens, labels}` records, one per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for sentence in &self.sentences {
            serde_json::to_writer(&mut out, sentence)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// What to do with an `I-X` that does not continue an `X` span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BioPolicy {
    /// Rewrite the offending label to `B-X`.
    #[default]
    Repair,
    /// Drop the sentence from the split.
    Reject,
}

#[derive(Debug, Clone)]
pub struct ConllOptions {
    pub tag_column: usize,
    pub scheme: LabelScheme,
    pub bio_policy: BioPolicy,
    pub split: SplitName,
}

impl ConllOptions {
    pub fn new(tag_column: usize, scheme: LabelScheme) -> Self {
        Self {
            tag_column,
            scheme,
            bio_policy: BioPolicy::default(),
            split: SplitName::Train,
        }
    }

    /// Column conventions of the two shared-task files: NER tags sit in the
    /// fourth column of CoNLL-2003, chunk tags in the third column of CoNLL-2000.
    pub fn for_task(task: Task) -> Option<Self> {
        match task {
            Task::Ner => Some(Self::new(3, LabelScheme::conll2003_ner())),
            Task::Chunk => Some(Self::new(2, LabelScheme::conll2000_chunk())),
            Task::Pos => None,
        }
    }
}

/// Counters collected while reading a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub sentences: usize,
    pub tokens: usize,
    pub skipped_documents: usize,
    pub skipped_multiword: usize,
    pub repaired_labels: usize,
    pub rejected_sentences: usize,
}

/// Positions holding an `I-X` that follows neither `B-X` nor `I-X`.
pub fn bio_violations(labels: &[String]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev: &str = "O";
    for (i, label) in labels.iter().enumerate() {
        if let Some(ty) = label.strip_prefix("I-") {
            let continues = prev
                .strip_prefix("B-")
                .or_else(|| prev.strip_prefix("I-"))
                .is_some_and(|p| p == ty);
            if !continues {
                out.push(i);
            }
        }
        prev = label;
    }
    out
}

/// Rewrites every invalid `I-X` to `B-X`, left to right. Returns the number of rewrites.
pub fn repair_bio(labels: &mut [String]) -> usize {
    let mut repaired = 0;
    for i in 0..labels.len() {
        let Some(ty) = labels[i].strip_prefix("I-") else {
            continue;
        };
        let continues = i > 0
            && labels[i - 1]
                .strip_prefix("B-")
                .or_else(|| labels[i - 1].strip_prefix("I-"))
                .is_some_and(|p| p == ty);
        if !continues {
            labels[i] = format!("B-{ty}");
            repaired += 1;
        }
    }
    repaired
}

/// Parses a whitespace-columned CoNLL file with default options (BIO repair on).
pub fn parse_conll(bytes: &[u8], tag_column: usize, scheme: LabelScheme) -> Result<CorpusSplit> {
    parse_conll_with(bytes, &ConllOptions::new(tag_column, scheme)).map(|(split, _)| split)
}

struct Block {
    first_line: usize,
    rows: Vec<Vec<String>>,
    is_document_marker: bool,
}

fn blocks(text: &str) -> impl Iterator<Item = Block> + '_ {
    let mut lines = text.lines().enumerate().peekable();
    std::iter::from_fn(move || {
        while lines.peek().is_some_and(|(_, l)| l.trim().is_empty()) {
            lines.next();
        }
        let (first_idx, _) = *lines.peek()?;
        let mut block = Block {
            first_line: first_idx + 1,
            rows: Vec::new(),
            is_document_marker: false,
        };
        while let Some((_, line)) = lines.next_if(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if fields.first().is_some_and(|f| f == "-DOCSTART-") {
                block.is_document_marker = true;
            }
            block.rows.push(fields);
        }
        Some(block)
    })
}

pub fn parse_conll_with(bytes: &[u8], opts: &ConllOptions) -> Result<(CorpusSplit, IngestReport)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(0, format!("invalid UTF-8: {e}")))?;
    let scheme = &opts.scheme;
    let mut report = IngestReport::default();
    let mut width: Option<usize> = None;
    let mut sentences = Vec::new();

    for block in blocks(text) {
        if block.is_document_marker {
            report.skipped_documents += 1;
            continue;
        }
        let mut tokens = Vec::with_capacity(block.rows.len());
        let mut labels = Vec::with_capacity(block.rows.len());
        for (offset, fields) in block.rows.iter().enumerate() {
            let line = block.first_line + offset;
            let expected = *width.get_or_insert(fields.len());
            if fields.len() != expected {
                return Err(Error::parse(
                    line,
                    format!("expected {expected} columns, found {}", fields.len()),
                ));
            }
            if opts.tag_column >= fields.len() || opts.tag_column == 0 {
                return Err(Error::parse(
                    line,
                    format!(
                        "tag column {} is not a label column of a {}-column row",
                        opts.tag_column,
                        fields.len()
                    ),
                ));
            }
            let token = &fields[0];
            check_token(token).map_err(|e| Error::parse(line, e.to_string()))?;
            let label = &fields[opts.tag_column];
            if !scheme.contains(label) {
                return Err(Error::Scheme(format!(
                    "unknown label {label:?} at line {line} (scheme {})",
                    scheme.task()
                )));
            }
            tokens.push(token.clone());
            labels.push(label.clone());
        }

        if scheme.is_bio() && !bio_violations(&labels).is_empty() {
            match opts.bio_policy {
                BioPolicy::Repair => report.repaired_labels += repair_bio(&mut labels),
                BioPolicy::Reject => {
                    report.rejected_sentences += 1;
                    continue;
                }
            }
        }
        report.tokens += tokens.len();
        sentences.push(TaggedSentence {
            id: sentences.len(),
            tokens,
            labels,
            rows: Some(block.rows),
        });
    }

    if report.repaired_labels > 0 {
        log::info!("repaired {} invalid I- labels", report.repaired_labels);
    }
    if report.rejected_sentences > 0 {
        log::warn!("rejected {} sentences with invalid BIO transitions", report.rejected_sentences);
    }
    report.sentences = sentences.len();
    let split = CorpusSplit {
        name: opts.split,
        sentences,
        scheme: scheme.clone(),
        format: Some(SourceFormat::Conll {
            tag_column: opts.tag_column,
        }),
    };
    Ok((split, report))
}

/// Parses a CoNLL-U file, keeping FORM as the token and UPOS as the label.
pub fn parse_conllu(bytes: &[u8]) -> Result<CorpusSplit> {
    parse_conllu_with(bytes, &LabelScheme::upos(), SplitName::Train).map(|(split, _)| split)
}

pub fn parse_conllu_with(
    bytes: &[u8],
    scheme: &LabelScheme,
    split: SplitName,
) -> Result<(CorpusSplit, IngestReport)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(0, format!("invalid UTF-8: {e}")))?;
    let mut report = IngestReport::default();
    let mut sentences = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();

    let flush = |rows: &mut Vec<Vec<String>>, sentences: &mut Vec<TaggedSentence>| {
        if rows.is_empty() {
            return;
        }
        let rows = std::mem::take(rows);
        let tokens = rows.iter().map(|r| r[1].clone()).collect();
        let labels = rows.iter().map(|r| r[3].clone()).collect();
        sentences.push(TaggedSentence {
            id: sentences.len(),
            tokens,
            labels,
            rows: Some(rows),
        });
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            flush(&mut rows, &mut sentences);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 10 {
            return Err(Error::parse(
                line_no,
                format!("expected 10 tab-separated columns, found {}", fields.len()),
            ));
        }
        let id = fields[0];
        if id.contains('-') || id.contains('.') {
            report.skipped_multiword += 1;
            continue;
        }
        if id.parse::<usize>().is_err() {
            return Err(Error::parse(line_no, format!("invalid word id {id:?}")));
        }
        check_token(fields[1]).map_err(|e| Error::parse(line_no, e.to_string()))?;
        let upos = fields[3];
        if upos == "_" {
            return Err(Error::Scheme(format!("missing UPOS for word {id} at line {line_no}")));
        }
        if !scheme.contains(upos) {
            return Err(Error::Scheme(format!("unknown UPOS label {upos:?} at line {line_no}")));
        }
        rows.push(fields.into_iter().map(str::to_string).collect());
    }
    flush(&mut rows, &mut sentences);

    report.sentences = sentences.len();
    report.tokens = sentences.iter().map(TaggedSentence::len).sum();
    let split = CorpusSplit {
        name: split,
        sentences,
        scheme: scheme.clone(),
        format: Some(SourceFormat::Conllu),
    };
    Ok((split, report))
}

/// Writes a split back in the layout it was read from. Sentences built in
/// memory are written as two-column `token label` rows.
pub fn serialize(split: &CorpusSplit) -> String {
    let mut out = String::new();
    for sentence in &split.sentences {
        for (i, (token, label)) in sentence.tokens.iter().zip(&sentence.labels).enumerate() {
            let row = sentence.rows.as_ref().and_then(|rows| rows.get(i));
            match (split.format, row) {
                (Some(SourceFormat::Conllu), Some(row)) => {
                    let mut row = row.clone();
                    row[1] = token.clone();
                    row[3] = label.clone();
                    out.push_str(&row.join("\t"));
                }
                (Some(SourceFormat::Conll { tag_column }), Some(row)) if tag_column < row.len() => {
                    let mut row = row.clone();
                    row[0] = token.clone();
                    row[tag_column] = label.clone();
                    out.push_str(&row.join(" "));
                }
                (Some(SourceFormat::Conllu), None) => {
                    out.push_str(&format!("{}\t{token}\t_\t{label}\t_\t_\t_\t_\t_\t_", i + 1));
                }
                _ => {
                    out.push_str(token);
                    out.push(' ');
                    out.push_str(label);
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Sorted indices of a seeded uniform sample of `n` out of `len` items.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, len, n).into_vec();
    picked.sort_unstable();
    picked
}

/// Deterministic random subset of `n` sentences, kept in file order and renumbered.
pub fn sample_test_subset(split: &CorpusSplit, n: usize, seed: u64) -> CorpusSplit {
    if n > split.len() {
        log::warn!(
            "requested {n} sentences but the split only has {}; using all of them",
            split.len()
        );
    }
    let mut sentences: Vec<TaggedSentence> = sample_indices(split.len(), n, seed)
        .into_iter()
        .map(|i| split.sentences[i].clone())
        .collect();
    for (idx, sentence) in sentences.iter_mut().enumerate() {
        sentence.id = idx;
    }
    CorpusSplit {
        name: split.name,
        sentences,
        scheme: split.scheme.clone(),
        format: split.format,
    }
}
