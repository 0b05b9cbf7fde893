//! Decodes against an HTTP completion endpoint through a record/replay
//! fixture. Pass an endpoint URL to use a real service; without one a local
//! stand-in answering with gold labels is started.
//!
//!     CPR_API_KEY=... cargo run --example remote_endpoint -- https://host/v1/completions

#[path = "../tests/common/mock_server.rs"]
mod mock_server;

use cp_retrieval::corpus::{SplitName, Task};
use cp_retrieval::decoder::{run_task, RunOptions, Strategy};
use cp_retrieval::embedder::{EmbeddingCache, EmbeddingProvider, HashEmbedder};
use cp_retrieval::evaluation::evaluate;
use cp_retrieval::plm::{CompletionClient, CompletionRequest, HttpCompletionClient, OracleClient, ReplayClient};
use cp_retrieval::scoring::{PoolIndex, SelectionConfig};
use cp_retrieval::synthetic;

fn main() -> cp_retrieval::Result<()> {
    let pool = synthetic::ner_corpus(200, 31);
    let test = synthetic::ner_corpus(10, 32).with_name(SplitName::Test);

    let _server;
    let url = match std::env::args().nth(1) {
        Some(url) => url,
        None => {
            let oracle = OracleClient::new(&test);
            let server = mock_server::MockServer::start(move |body, _| {
                let req = CompletionRequest::new(body["prompt"].as_str().unwrap_or_default());
                match oracle.complete(&req) {
                    Ok(resp) => (200, serde_json::to_string(&resp).expect("serializable")),
                    Err(e) => (400, serde_json::json!({ "error": e.to_string() }).to_string()),
                }
            });
            let url = server.url.clone();
            _server = server;
            url
        }
    };

    let embedder = HashEmbedder::new(384, 0)?;
    let cache = EmbeddingCache::in_memory();
    let index = PoolIndex::new(&pool, cache.embed_all(&pool.sentences, &embedder)?)?;
    let test_embeddings = cache.embed_all(&test.sentences, &embedder)?;
    let cfg = SelectionConfig::for_task(Task::Ner).with_provider(embedder.id());

    let fixture = std::env::temp_dir().join(format!("cpr-fixture-{}.jsonl", std::process::id()));
    let http = HttpCompletionClient::from_env(url)?.with_rate_limit(600, std::time::Duration::from_secs(60));
    let recorder = ReplayClient::record(&fixture, Box::new(http))?;
    let recorded = run_task(&test, &test_embeddings, &index, &cfg, &Strategy::Complexity, &recorder, &RunOptions::default())?;
    println!("recorded {} responses", recorder.len());

    let replay = ReplayClient::replay(&fixture)?;
    let replayed = run_task(&test, &test_embeddings, &index, &cfg, &Strategy::Complexity, &replay, &RunOptions::default())?;
    assert_eq!(recorded, replayed);
    print!("{}", evaluate(&replayed, &test)?);

    std::fs::remove_file(fixture)?;
    Ok(())
}
