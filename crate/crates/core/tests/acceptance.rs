//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod common;

use std::time::{Duration, Instant};

use common::mock_server::MockServer;
use cp_retrieval::corpus::{
    parse_conll, parse_conll_with, parse_conllu, ConllOptions, CorpusSplit, LabelScheme, SplitName, TaggedSentence,
    Task,
};
use cp_retrieval::decoder::{run_task, select_examples, PredictionRecord, PredictionSet, RunOptions, Strategy};
use cp_retrieval::embedder::{EmbeddingCache, EmbeddingProvider, EmbeddingVector, HashEmbedder};
use cp_retrieval::evaluation::{evaluate, extract_spans, micro_f1};
use cp_retrieval::plm::{CompletionClient, CompletionRequest, DemonstrationCopyClient, HttpCompletionClient, OracleClient, ReplayClient};
use cp_retrieval::prompting::{parse_prompt, render_prompt};
use cp_retrieval::scoring::{label_entropy, normalize, smoothed_length_similarity, PoolIndex, SelectionConfig, Weights};
use cp_retrieval::synthetic;
use cp_retrieval::tuner::{grid_search, simplex_lattice, DEFAULT_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn embed(split: &CorpusSplit, embedder: &HashEmbedder, cache: &EmbeddingCache) -> Result<Vec<EmbeddingVector>, String> {
    ok(cache.embed_all(&split.sentences, embedder))
}

fn metric_formulas() -> Check {
    let sls = smoothed_length_similarity(10, 13, 3.0);
    ensure!((sls - 0.26894142).abs() <= 1e-8, "SLS(10,13,3) = {sls}");
    for n in [0, 1, 7, 250] {
        ensure!(smoothed_length_similarity(n, n, 3.0) == 0.5, "SLS({n},{n}) != 0.5");
    }
    let h = ok(label_entropy(&common::strings(&["O", "O", "O", "B-PER"]), &LabelScheme::conll2003_ner()))?;
    ensure!((h - 0.81127812).abs() <= 1e-8, "entropy = {h}");
    let norm = ok(normalize(&[2.0, 4.0, 8.0]))?;
    ensure!(norm == [0.25, 0.5, 1.0], "normalize = {norm:?}");
    Ok(format!("SLS {sls:.8}, H {h:.8}, normalize {norm:?}"))
}

fn selection_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let embedder = HashEmbedder::new(64, 0).unwrap();
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let n = rng.gen_range(1..=500);
        let pool = common::random_ner_split(&mut rng, n, 20);
        let test = common::random_ner_split(&mut rng, 1, 20).sentences.remove(0);
        let cache = EmbeddingCache::in_memory();
        let vecs = embed(&pool, &embedder, &cache)?;
        let test_vec = ok(cache.embed(&test, &embedder))?;
        let w = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.05..1.0)];
        let k = rng.gen_range(1..=8);
        let cfg = SelectionConfig::for_task(Task::Ner)
            .with_weights(ok(Weights::new(w[0], w[1], w[2]))?)
            .with_k(k);
        let index = ok(PoolIndex::new(&pool, vecs.clone()))?;
        let raw: Vec<Vec<f64>> = vecs.iter().map(|v| v.values().to_vec()).collect();
        let expected = common::scores(&test, test_vec.values(), &pool.sentences, &raw, w, 3.0);
        if expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max) <= 0.0 {
            continue;
        }
        let scores = ok(index.score(&test, &test_vec, &cfg))?;
        for (s, e) in scores.iter().zip(&expected) {
            worst = worst.max((s.complexity - e).abs());
        }
        let got = ok(index.select(&test, &test_vec, &cfg))?;
        let want: Vec<usize> = common::ranking(&expected).into_iter().take(k).collect();
        ensure!(got == want, "trial {trial}: selected {got:?}, oracle {want:?}");
    }
    ensure!(worst <= 1e-12, "max score deviation {worst:e}");
    Ok(format!("50 pools, max score deviation {worst:e}"))
}

fn knn_reduction() -> Check {
    let pool = synthetic::ner_corpus(200, 5);
    let test = synthetic::ner_corpus(100, 6);
    let embedder = HashEmbedder::new(384, 0).unwrap();
    let cache = EmbeddingCache::in_memory();
    let index = ok(PoolIndex::new(&pool, embed(&pool, &embedder, &cache)?))?;
    let test_vecs = embed(&test, &embedder, &cache)?;
    let cp = SelectionConfig::for_task(Task::Ner).with_weights(Weights::nearest_neighbour());
    let knn = SelectionConfig::for_task(Task::Ner);
    for (s, v) in test.sentences.iter().zip(&test_vecs) {
        let a = ok(select_examples(s, Some(v), &index, &knn, &Strategy::NearestNeighbour))?;
        let b = ok(select_examples(s, Some(v), &index, &cp, &Strategy::Complexity))?;
        ensure!(a == b, "sentence {}: knn {a:?} vs cp {b:?}", s.id);
    }
    Ok(format!("{} test sentences, identical id lists", test.len()))
}

fn to_conll(split: &CorpusSplit) -> String {
    let mut text = String::new();
    for s in &split.sentences {
        for (t, l) in s.tokens.iter().zip(&s.labels) {
            text.push_str(&format!("{t} NNP B-NP {l}\n"));
        }
        text.push('\n');
    }
    text
}

fn to_conllu(split: &CorpusSplit) -> String {
    let mut text = String::new();
    for s in &split.sentences {
        text.push_str(&format!("# sent_id = {}\n", s.id));
        for (i, (t, l)) in s.tokens.iter().zip(&s.labels).enumerate() {
            text.push_str(&format!("{}\t{t}\t_\t{l}\t_\t_\t0\troot\t_\t_\n", i + 1));
        }
        text.push('\n');
    }
    text
}

fn pipeline(pool: &CorpusSplit, test: &CorpusSplit, task: Task, client: &dyn CompletionClient) -> Result<f64, String> {
    let embedder = HashEmbedder::new(384, 0).unwrap();
    let cache = EmbeddingCache::in_memory();
    let index = ok(PoolIndex::new(pool, embed(pool, &embedder, &cache)?))?;
    let test_vecs = embed(test, &embedder, &cache)?;
    let cfg = SelectionConfig::for_task(task).with_provider(embedder.id());
    let opts = RunOptions {
        jobs: 4,
        ..RunOptions::default()
    };
    let pred = ok(run_task(test, &test_vecs, &index, &cfg, &Strategy::Complexity, client, &opts))?;
    ensure!(pred.failures.is_empty(), "{} failures", pred.failures.len());
    Ok(ok(evaluate(&pred, test))?.headline())
}

fn oracle_end_to_end() -> Check {
    let opts = ConllOptions::for_task(Task::Ner).unwrap();
    let (ner_pool, _) = ok(parse_conll_with(to_conll(&synthetic::ner_corpus(300, 1)).as_bytes(), &opts))?;
    let (ner_test, _) = ok(parse_conll_with(to_conll(&synthetic::ner_corpus(50, 2)).as_bytes(), &opts))?;
    let f1 = pipeline(&ner_pool, &ner_test, Task::Ner, &OracleClient::new(&ner_test))?;
    ensure!(f1 == 1.0, "NER F1 {f1}");

    let pos_pool = ok(parse_conllu(to_conllu(&synthetic::pos_corpus(300, 3)).as_bytes()))?;
    let pos_test = ok(parse_conllu(to_conllu(&synthetic::pos_corpus(50, 4)).as_bytes()))?;
    let acc = pipeline(&pos_pool, &pos_test, Task::Pos, &OracleClient::new(&pos_test))?;
    ensure!(acc == 1.0, "POS accuracy {acc}");
    Ok(format!("NER F1 {f1:.3}, POS accuracy {acc:.3}"))
}

fn noisy_calibration() -> Check {
    let pool = synthetic::pos_corpus(300, 7);
    let test = synthetic::pos_corpus(300, 8);
    ensure!(test.n_tokens() >= 2000, "only {} tokens", test.n_tokens());
    let acc = pipeline(&pool, &test, Task::Pos, &ok(OracleClient::noisy(&test, 0.2, 1000))?)?;
    ensure!((0.77..=0.83).contains(&acc), "accuracy {acc}");
    Ok(format!("{} tokens, accuracy {acc:.4}", test.n_tokens()))
}

fn prompt_fidelity() -> Check {
    let fixture = include_str!("fixtures/chunk_prompt.txt");
    let split = ok(parse_conll(fixture.as_bytes(), 1, LabelScheme::conll2000_chunk()))?;
    let (test, demos) = split.sentences.split_last().unwrap();
    ensure!(demos.len() == 5, "{} demonstrations", demos.len());
    let refs: Vec<&TaggedSentence> = demos.iter().collect();
    let prompt = ok(render_prompt(&refs, test, &split.scheme))?;

    let mut expected = String::new();
    for d in demos {
        expected += &format!("Context: {}\n", d.tokens.join(" "));
        let units: Vec<String> = d.tokens.iter().zip(&d.labels).map(|(t, l)| format!("{t}_{l}")).collect();
        expected += &format!("Tagged: {}\n", units.join(" "));
    }
    expected += &format!("Context: {}\nTagged:", test.tokens.join(" "));
    ensure!(prompt.text == expected, "rendered prompt differs:\n{}", prompt.text);
    let markers = prompt.text.matches("Context:").count();
    ensure!(markers == 6, "{markers} Context markers");
    ensure!(
        prompt.text.contains("Tagged: Shearson_B-NP is_B-VP offering_I-VP"),
        "unexpected first tagged line"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scheme = LabelScheme::conll2003_ner();
    for i in 0..1000 {
        let n_demos = rng.gen_range(1..6);
        let mut sentence = || {
            let len = rng.gen_range(1..25);
            let tokens = (0..len).map(|_| common::random_token(&mut rng)).collect();
            TaggedSentence::new(0, tokens, common::random_bio(&mut rng, len, &common::NER_TYPES)).unwrap()
        };
        let demos: Vec<TaggedSentence> = (0..n_demos).map(|_| sentence()).collect();
        let test = sentence();
        let refs: Vec<&TaggedSentence> = demos.iter().collect();
        let parsed = ok(parse_prompt(&ok(render_prompt(&refs, &test, &scheme))?.text))?;
        let want: Vec<(Vec<String>, Vec<String>)> = demos.into_iter().map(|d| (d.tokens, d.labels)).collect();
        ensure!(parsed.demonstrations == want && parsed.tail.context == test.tokens, "round trip {i} failed");
    }
    Ok(format!("{markers} Context markers, 1000 fuzzed round trips"))
}

fn evaluator_fidelity() -> Check {
    let tokens = common::strings(&["Peter", "Blackburn", "visited", "London"]);
    let gold = CorpusSplit::new(
        SplitName::Test,
        LabelScheme::conll2003_ner(),
        vec![TaggedSentence::new(0, tokens.clone(), common::strings(&["B-PER", "I-PER", "O", "B-LOC"])).unwrap()],
    )
    .unwrap();
    let pred = PredictionSet {
        records: vec![PredictionRecord {
            test_id: 0,
            tokens,
            gold: gold.sentences[0].labels.clone(),
            predicted: common::strings(&["B-PER", "I-PER", "O", "O"]),
            example_ids: vec![],
            prompt_hash: String::new(),
            repairs: vec![],
        }],
        failures: vec![],
    };
    let f1 = ok(micro_f1(&pred, &gold))?.f1.unwrap();
    ensure!((f1 - 0.66667).abs() <= 1e-5, "F1 {f1}");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let len = rng.gen_range(0..30);
        let labels = common::random_bio(&mut rng, len, &common::NER_TYPES);
        let ours: Vec<(usize, usize, String)> = extract_spans(&labels).into_iter().map(|s| (s.start, s.end, s.kind)).collect();
        ensure!(ours == common::spans(&labels), "sequence {i}: {labels:?}");
    }
    Ok(format!("F1 {f1:.5}, 1000 span sequences agree"))
}

/// Every dev sentence appears twice in the pool: first with all-`O` labels,
/// then with its gold labels. Both copies are equally similar and equally
/// long, so only a positive entropy weight picks the gold copy, and only a
/// positive similarity weight separates it from other gold copies.
fn planted_grid() -> (CorpusSplit, CorpusSplit) {
    let n = 20;
    let dev: Vec<TaggedSentence> = (0..n)
        .map(|i| {
            let tokens = vec![format!("a{i}"), format!("b{i}"), format!("c{i}"), format!("d{i}")];
            TaggedSentence::new(i, tokens, common::strings(&["B-PER", "I-PER", "O", "B-LOC"])).unwrap()
        })
        .collect();
    let mut pool: Vec<TaggedSentence> = dev
        .iter()
        .map(|s| TaggedSentence::new(0, s.tokens.clone(), vec!["O".into(); 4]).unwrap())
        .collect();
    pool.extend(dev.iter().cloned());
    let scheme = LabelScheme::conll2003_ner();
    (
        CorpusSplit::new(SplitName::Train, scheme.clone(), pool).unwrap(),
        CorpusSplit::new(SplitName::Dev, scheme, dev).unwrap(),
    )
}

fn tuner() -> Check {
    let half = ok(simplex_lattice(0.5))?;
    ensure!(half.len() == 6, "{} points at step 0.5", half.len());
    let fine = ok(simplex_lattice(DEFAULT_STEP))?;
    ensure!(fine.len() == 231, "{} points at step 0.05", fine.len());
    for task in [Task::Ner, Task::Chunk, Task::Pos] {
        let w = Weights::for_task(task);
        ensure!(
            fine.iter().any(|p| p.as_array().iter().zip(w.as_array()).all(|(a, b)| (a - b).abs() < 1e-12)),
            "lattice misses {w}"
        );
    }

    let (pool, dev) = planted_grid();
    let embedder = HashEmbedder::new(384, 0).unwrap();
    let cache = EmbeddingCache::in_memory();
    let index = ok(PoolIndex::new(&pool, embed(&pool, &embedder, &cache)?))?;
    let dev_vecs = embed(&dev, &embedder, &cache)?;
    let cfg = SelectionConfig::for_task(Task::Ner).with_k(1);
    let opts = RunOptions {
        jobs: 4,
        ..RunOptions::default()
    };
    let client = DemonstrationCopyClient::new(&dev.scheme);
    let report = ok(grid_search(&dev, &dev_vecs, &index, &cfg, &client, DEFAULT_STEP, &opts))?;
    for point in &report.points {
        let w = point.weights;
        let planted = w.entropy > 0.0 && w.similarity > 0.0;
        ensure!((point.metric == Some(1.0)) == planted, "unexpected metric {:?} at {w}", point.metric);
    }
    let best = report.best.ok_or("no best point")?;
    ensure!(
        best.length == 0.0 && (best.entropy - 0.05).abs() < 1e-12 && (best.similarity - 0.95).abs() < 1e-12,
        "recovered {best}"
    );
    Ok(format!("6 and 231 points, planted optimum recovered at {best}"))
}

fn endpoint_replay() -> Check {
    let pool = synthetic::ner_corpus(150, 9);
    let test = synthetic::ner_corpus(15, 10);
    let oracle = OracleClient::noisy(&test, 0.1, 3).unwrap();
    let server = MockServer::start(move |body, _| {
        let req = CompletionRequest::new(body["prompt"].as_str().unwrap_or_default());
        match oracle.complete(&req) {
            Ok(resp) => (200, serde_json::to_string(&resp).unwrap()),
            Err(e) => (400, serde_json::json!({ "error": e.to_string() }).to_string()),
        }
    });
    let dir = ok(tempfile::tempdir())?;
    let fixture = dir.path().join("fixture.jsonl");
    let embedder = HashEmbedder::new(384, 0).unwrap();
    let cache = EmbeddingCache::in_memory();
    let index = ok(PoolIndex::new(&pool, embed(&pool, &embedder, &cache)?))?;
    let test_vecs = embed(&test, &embedder, &cache)?;
    let cfg = SelectionConfig::for_task(Task::Ner);
    let run = |client: &dyn CompletionClient| {
        ok(run_task(&test, &test_vecs, &index, &cfg, &Strategy::Complexity, client, &RunOptions::default()))
    };

    let http = ok(HttpCompletionClient::new(&server.url, None))?;
    let recorded = run(&ok(ReplayClient::record(&fixture, Box::new(http)))?)?;
    let live_requests = server.hits();
    ensure!(recorded.failures.is_empty(), "live run failed: {:?}", recorded.failures.first());
    let replayed = run(&ok(ReplayClient::replay(&fixture))?)?;
    let again = run(&ok(ReplayClient::replay(&fixture))?)?;
    ensure!(server.hits() == live_requests, "replay reached the endpoint");
    ensure!(replayed == recorded && again == recorded, "replayed predictions differ");
    let a = ok(evaluate(&recorded, &test))?;
    let b = ok(evaluate(&replayed, &test))?;
    ensure!(a.to_string() == b.to_string(), "reports differ");
    Ok(format!(
        "{live_requests} live requests, replay identical (F1 {:.4}); absolute scores against a hosted model are not gated",
        a.headline()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Option<Duration>); 9] = [
        ("metric formulas", metric_formulas, Some(Duration::from_secs(1))),
        ("selection oracle equivalence", selection_oracle, Some(Duration::from_secs(30))),
        ("baseline reduction", knn_reduction, None),
        ("end-to-end oracle run", oracle_end_to_end, Some(Duration::from_secs(20))),
        ("noisy-oracle calibration", noisy_calibration, None),
        ("prompt format fidelity", prompt_fidelity, None),
        ("evaluator fidelity", evaluator_fidelity, None),
        ("tuner", tuner, None),
        ("endpoint record/replay", endpoint_replay, None),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (other, _) => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {}. {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {}. {name} ({elapsed:.2?}): {reason}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
