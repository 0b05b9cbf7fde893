//! Grid search over the weight simplex on a small dev split, writing the
//! full table as CSV to stdout.

use cp_retrieval::corpus::{SplitName, Task};
use cp_retrieval::decoder::RunOptions;
use cp_retrieval::embedder::{EmbeddingCache, EmbeddingProvider, HashEmbedder};
use cp_retrieval::plm::DemonstrationCopyClient;
use cp_retrieval::scoring::{PoolIndex, SelectionConfig};
use cp_retrieval::synthetic;
use cp_retrieval::tuner::grid_search;

fn main() -> cp_retrieval::Result<()> {
    let step: f64 = std::env::args().nth(1).map_or(Ok(0.1), |s| s.parse()).expect("step is a number");
    let pool = synthetic::ner_corpus(200, 21);
    let dev = synthetic::ner_corpus(40, 22).with_name(SplitName::Dev);
    let embedder = HashEmbedder::new(384, 0)?;
    let cache = EmbeddingCache::in_memory();
    let index = PoolIndex::new(&pool, cache.embed_all(&pool.sentences, &embedder)?)?;
    let dev_embeddings = cache.embed_all(&dev.sentences, &embedder)?;
    let cfg = SelectionConfig::for_task(Task::Ner).with_provider(embedder.id()).with_k(1);
    let client = DemonstrationCopyClient::new(&dev.scheme);
    let opts = RunOptions {
        jobs: 4,
        ..RunOptions::default()
    };

    let report = grid_search(&dev, &dev_embeddings, &index, &cfg, &client, step, &opts)?;
    report.write_csv(std::io::stdout().lock())?;
    if let (Some(best), Some(metric)) = (report.best, report.best_metric) {
        eprintln!("best {best} with dev F1 {metric:.4}");
    }
    Ok(())
}
