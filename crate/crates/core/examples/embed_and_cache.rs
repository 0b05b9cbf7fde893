//! Embeds a corpus through the persistent cache twice; the second pass is
//! served entirely from disk.

use cp_retrieval::embedder::{EmbeddingCache, EmbeddingProvider, HashEmbedder};
use cp_retrieval::synthetic;

fn main() -> cp_retrieval::Result<()> {
    let dir = std::env::temp_dir().join(format!("cpr-embed-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("embeddings.jsonl");

    let corpus = synthetic::ner_corpus(1000, 7);
    let provider = HashEmbedder::new(384, 0)?;

    let cache = EmbeddingCache::open(&path)?.with_max_in_flight(4);
    let first = cache.embed_all(&corpus.sentences, &provider)?;
    println!("first pass:  {:?}", cache.stats());
    drop(cache);

    let cache = EmbeddingCache::open(&path)?;
    let second = cache.embed_all(&corpus.sentences, &provider)?;
    println!("second pass: {:?}", cache.stats());
    assert_eq!(first, second);
    println!(
        "{} vectors of dim {} under provider {}",
        second.len(),
        provider.dim(),
        provider.id()
    );

    std::fs::remove_dir_all(dir)?;
    Ok(())
}
