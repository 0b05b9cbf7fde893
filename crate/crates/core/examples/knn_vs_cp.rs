//! Compares complexity-based selection with plain nearest-neighbour retrieval
//! using a client that copies labels from the chosen demonstrations, so the
//! score depends only on which examples were selected.

use cp_retrieval::corpus::{SplitName, Task};
use cp_retrieval::decoder::{run_task, RunOptions, Strategy};
use cp_retrieval::embedder::{EmbeddingCache, EmbeddingProvider, HashEmbedder};
use cp_retrieval::evaluation::evaluate;
use cp_retrieval::plm::DemonstrationCopyClient;
use cp_retrieval::scoring::{PoolIndex, SelectionConfig};
use cp_retrieval::synthetic;

fn main() -> cp_retrieval::Result<()> {
    let pool = synthetic::ner_corpus(400, 11);
    let test = synthetic::ner_corpus(100, 12).with_name(SplitName::Test);
    let embedder = HashEmbedder::new(384, 0)?;
    let cache = EmbeddingCache::in_memory();
    let index = PoolIndex::new(&pool, cache.embed_all(&pool.sentences, &embedder)?)?;
    let test_embeddings = cache.embed_all(&test.sentences, &embedder)?;
    let client = DemonstrationCopyClient::new(&test.scheme);

    for k in [1, 5] {
        let cfg = SelectionConfig::for_task(Task::Ner).with_provider(embedder.id()).with_k(k);
        for strategy in [Strategy::NearestNeighbour, Strategy::Complexity] {
            let pred = run_task(&test, &test_embeddings, &index, &cfg, &strategy, &client, &RunOptions::default())?;
            let report = evaluate(&pred, &test)?;
            println!("k={k} {strategy:?}: F1 {:.4}", report.headline());
        }
    }
    Ok(())
}
