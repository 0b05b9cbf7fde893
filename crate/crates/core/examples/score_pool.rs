//! Scores one test sentence against a candidate pool and prints the metric
//! breakdown of the best candidates under the NER weight preset.

use cp_retrieval::corpus::Task;
use cp_retrieval::embedder::{EmbeddingCache, EmbeddingProvider, HashEmbedder};
use cp_retrieval::scoring::{select_top_k, PoolIndex, SelectionConfig};
use cp_retrieval::synthetic;

fn main() -> cp_retrieval::Result<()> {
    let pool = synthetic::ner_corpus(300, 1);
    let test = synthetic::ner_corpus(1, 99).sentences.remove(0);

    let embedder = HashEmbedder::new(384, 0)?;
    let cache = EmbeddingCache::in_memory();
    let index = PoolIndex::new(&pool, cache.embed_all(&pool.sentences, &embedder)?)?;
    let test_embedding = cache.embed(&test, &embedder)?;

    let cfg = SelectionConfig::for_task(Task::Ner).with_provider(embedder.id());
    let scores = index.score(&test, &test_embedding, &cfg)?;
    let best = select_top_k(&scores, cfg.k);

    println!("test: {}", test.text());
    println!("weights {}", cfg.weights);
    println!("{:>5} {:>8} {:>8} {:>8} {:>8}  sentence", "id", "sls", "entropy", "sim", "score");
    for id in best {
        let s = &scores[id];
        println!(
            "{:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4}  {}",
            id,
            s.norm_sls,
            s.norm_entropy,
            s.norm_sim,
            s.complexity,
            pool.sentences[id].text()
        );
    }
    Ok(())
}
