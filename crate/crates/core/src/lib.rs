//! Complexity-based demonstration retrieval for few-shot sequence tagging.
//!
//! For every test sentence, each training sentence is scored by a weighted sum
//! of three pool-normalized metrics: embedding cosine similarity, a
//! sigmoid-smoothed length similarity and the entropy of its label
//! distribution. The top-k candidates are rendered into a `Context:` /
//! `Tagged:` prompt and the test sentence is labeled one token at a time
//! through a [`plm::CompletionClient`].
//!
//! ```no_run
//! use cp_retrieval::prelude::*;
//!
//! let pool = synthetic::ner_corpus(200, 1);
//! let test = synthetic::ner_corpus(20, 2).with_name(SplitName::Test);
//! let embedder = HashEmbedder::new(384, 0)?;
//! let cache = EmbeddingCache::in_memory();
//! let index = PoolIndex::new(&pool, cache.embed_all(&pool.sentences, &embedder)?)?;
//! let test_embeddings = cache.embed_all(&test.sentences, &embedder)?;
//! let cfg = SelectionConfig::for_task(Task::Ner).with_provider(embedder.id());
//! let client = OracleClient::new(&test);
//! let predictions = run_task(
//!     &test, &test_embeddings, &index, &cfg, &Strategy::Complexity, &client, &RunOptions::default(),
//! )?;
//! println!("{}", evaluate(&predictions, &test)?);
//! # Ok::<(), cp_retrieval::Error>(())
//! ```

pub mod config;
pub mod corpus;
pub mod decoder;
pub mod embedder;
pub mod error;
pub mod evaluation;
pub mod http;
pub mod plm;
pub mod prompting;
pub mod scoring;
pub mod synthetic;
pub mod tuner;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::corpus::{
        parse_conll, parse_conllu, sample_test_subset, CorpusSplit, LabelScheme, SplitName, TaggedSentence, Task,
    };
    pub use crate::decoder::{decode_sentence, run_task, PredictionSet, RunOptions, Strategy};
    pub use crate::embedder::{cosine_similarity, EmbeddingCache, EmbeddingProvider, EmbeddingVector, HashEmbedder};
    pub use crate::evaluation::{evaluate, micro_f1, token_accuracy, EvalReport};
    pub use crate::plm::{CompletionClient, CompletionRequest, CompletionResponse, OracleClient};
    pub use crate::prompting::{parse_tagged_line, render_prompt, RenderedPrompt};
    pub use crate::scoring::{score_pool, select_top_k, CandidateScore, PoolIndex, SelectionConfig, Weights};
    pub use crate::synthetic;
    pub use crate::tuner::{grid_search, simplex_lattice};
}
