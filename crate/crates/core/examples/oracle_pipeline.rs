//! End-to-end run with the oracle client: select, render, decode, evaluate.
//! The exact oracle scores perfectly; the noisy one lands near `1 - p`.

use cp_retrieval::corpus::{CorpusSplit, SplitName, Task};
use cp_retrieval::decoder::{run_task, RunOptions, Strategy};
use cp_retrieval::embedder::{EmbeddingCache, EmbeddingProvider, HashEmbedder};
use cp_retrieval::evaluation::evaluate;
use cp_retrieval::plm::{CompletionClient, OracleClient};
use cp_retrieval::scoring::{PoolIndex, SelectionConfig};
use cp_retrieval::synthetic;

fn run(task: Task, pool: &CorpusSplit, test: &CorpusSplit, client: &dyn CompletionClient) -> cp_retrieval::Result<()> {
    let embedder = HashEmbedder::new(384, 0)?;
    let cache = EmbeddingCache::in_memory();
    let index = PoolIndex::new(pool, cache.embed_all(&pool.sentences, &embedder)?)?;
    let test_embeddings = cache.embed_all(&test.sentences, &embedder)?;
    let cfg = SelectionConfig::for_task(task).with_provider(embedder.id());
    let opts = RunOptions {
        jobs: 4,
        ..RunOptions::default()
    };
    let pred = run_task(test, &test_embeddings, &index, &cfg, &Strategy::Complexity, client, &opts)?;
    print!("{}", evaluate(&pred, test)?);
    println!();
    Ok(())
}

fn main() -> cp_retrieval::Result<()> {
    let ner_pool = synthetic::ner_corpus(500, 1);
    let ner_test = synthetic::ner_corpus(50, 2).with_name(SplitName::Test);
    run(Task::Ner, &ner_pool, &ner_test, &OracleClient::new(&ner_test))?;

    let pos_pool = synthetic::pos_corpus(500, 3);
    let pos_test = synthetic::pos_corpus(300, 4).with_name(SplitName::Test);
    run(Task::Pos, &pos_pool, &pos_test, &OracleClient::new(&pos_test))?;
    run(Task::Pos, &pos_pool, &pos_test, &OracleClient::noisy(&pos_test, 0.2, 42)?)?;
    Ok(())
}
