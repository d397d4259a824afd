//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

#[path = "../common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use contract_qa_core::cms::seed::read_csv;
use contract_qa_core::cms::ContractRecord;
use contract_qa_core::eval::{
    load_benchmark, prepare, run_benchmark, standalone_numbers, EngineSource, PreparedQuestion, QuestionKind, Verdict,
};
use contract_qa_core::index::{embed, EmbeddingVector, IndexEntry, IndexMeta, MetadataFilter, Metric, VectorIndex};
use contract_qa_core::ingest::{chunk_document, load_manifest, parse_document, Chunk, ChunkMetadata, HeadingRules};
use contract_qa_core::llm::ScriptedProvider;
use contract_qa_core::orchestrator::{ChatSession, Engine, EngineConfig, EngineParts, Role, SessionStore};
use contract_qa_core::sql_agent::{self, validate_sql, SqlAgentConfig, SqlAgentError};

type Outcome = Result<String, String>;

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, name: &str, limit: Option<Duration>, started: Instant, outcome: Outcome) {
        let elapsed = started.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if elapsed > l => {
                Err(format!("took {:.2} s, limit {} s", elapsed.as_secs_f64(), l.as_secs()))
            }
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            self.failed += 1;
        }
        println!("{tag} {name}: {detail} [{:.2} s]", elapsed.as_secs_f64());
    }
}

fn sha256(path: &Path) -> String {
    let bytes = std::fs::read(path).expect("database readable");
    format!("{:x}", Sha256::digest(bytes))
}

fn contracts() -> Vec<ContractRecord> {
    read_csv(&common::fixtures_dir().join("contracts.csv")).unwrap()
}

const PRECISION_TEMPLATES: &[&str] = &[
    "What is the subject of the OCS {} contract?",
    "Who is the manager of the OCS {} contract?",
    "What is the term of contract {}?",
    "Who is the supplier of the {} contract?",
    "What penalties apply under OCS {}?",
    "What is the total value of the OCS {} contract?",
    "How is payment made under contract {}?",
];

async fn filter_precision(w: &common::World) -> Outcome {
    let records = contracts();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let questions: Vec<(String, String)> = (0..50)
        .map(|i| {
            let c = records.choose(&mut rng).unwrap();
            let t = PRECISION_TEMPLATES[i % PRECISION_TEMPLATES.len()];
            (c.ocs.clone(), t.replace("{}", &c.ocs))
        })
        .collect();

    let engine = w.engine(EngineConfig::default());
    let session = ChatSession::new("precision", Role::SupportUnitManager);
    let (mut retrieved, mut mismatched) = (0usize, 0usize);
    for (ocs, q) in &questions {
        let answer = engine.answer(&session, q).await.map_err(|e| format!("{q}: {e}"))?;
        if answer.sources.is_empty() {
            return Err(format!("no chunks retrieved for {q:?}"));
        }
        for id in &answer.sources {
            retrieved += 1;
            let chunk = w.index.get(id).ok_or_else(|| format!("unknown chunk {id}"))?.chunk;
            if chunk.metadata.contract != *ocs {
                mismatched += 1;
            }
        }
    }

    // same questions without the metadata filter
    let (mut ablated, mut contaminated) = (0usize, 0usize);
    for (ocs, q) in &questions {
        let v = embed(q, w.embedder.as_ref()).await.map_err(|e| e.to_string())?;
        for hit in w
            .index
            .query(&v, &MetadataFilter::default(), 4, true)
            .map_err(|e| e.to_string())?
        {
            ablated += 1;
            if hit.chunk.metadata.contract != *ocs {
                contaminated += 1;
            }
        }
    }
    let detail = format!(
        "filtered: {}/{} chunks match the named contract; unfiltered ablation: {}/{} chunks from other contracts",
        retrieved - mismatched,
        retrieved,
        contaminated,
        ablated
    );
    if mismatched == 0 && contaminated > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn brute_force(
    entries: &[(String, String, Vec<f32>)],
    q: &[f32],
    metric: Metric,
    contract: Option<&str>,
    k: usize,
) -> Vec<String> {
    fn score(metric: Metric, a: &[f32], b: &[f32]) -> f64 {
        let pairs = a.iter().zip(b).map(|(&x, &y)| (f64::from(x), f64::from(y)));
        match metric {
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in pairs {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
            }
            Metric::Euclidean => 1.0 / (1.0 + pairs.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()),
            Metric::Manhattan => 1.0 / (1.0 + pairs.map(|(x, y)| (x - y).abs()).sum::<f64>()),
        }
    }
    let mut all: Vec<(f64, &str)> = entries
        .iter()
        .filter(|(_, c, _)| contract.is_none_or(|want| c == want))
        .map(|(id, _, v)| (score(metric, q, v), id.as_str()))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    all.into_iter().take(k).map(|(_, id)| id.to_owned()).collect()
}

fn synthetic_chunk(id: &str, contract: &str) -> Chunk {
    let header = format!("[contract: {contract} | clause: X]\n");
    Chunk {
        id: id.into(),
        body_offset: header.len(),
        text: format!("{header}body"),
        metadata: ChunkMetadata {
            source: format!("{contract}.txt"),
            contract: contract.into(),
            clause: "X".into(),
            section: 0,
            part: None,
            neighbor_prev: None,
            neighbor_next: None,
        },
    }
}

fn oracle_equivalence() -> Outcome {
    const DIM: usize = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut entries: Vec<(String, String, Vec<f32>)> = Vec::with_capacity(200);
    for i in 0..200 {
        let v: Vec<f32> = if i % 10 == 9 {
            // exact duplicates force score ties
            entries[i - 5].2.clone()
        } else {
            (0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
        };
        entries.push((format!("v{:03}", (i * 37) % 200), format!("{}/2020", i % 7), v));
    }
    let queries: Vec<Vec<f32>> = (0..50)
        .map(|i| {
            if i % 10 == 0 {
                entries[i].2.clone()
            } else {
                (0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
            }
        })
        .collect();

    let mut checked = 0usize;
    for metric in [Metric::Cosine, Metric::Euclidean, Metric::Manhattan] {
        let index = VectorIndex::in_memory(IndexMeta::new(DIM, metric, "synthetic"));
        index
            .upsert(
                entries
                    .iter()
                    .map(|(id, c, v)| IndexEntry {
                        chunk: synthetic_chunk(id, c),
                        vector: EmbeddingVector::new(v.clone()).unwrap(),
                    })
                    .collect(),
            )
            .map_err(|e| e.to_string())?;
        for q in &queries {
            let qv = EmbeddingVector::new(q.clone()).unwrap();
            for k in [1, 5, 10] {
                for contract in [None, Some("3/2020")] {
                    let filter = contract.map(MetadataFilter::contract).unwrap_or_default();
                    let got: Vec<String> = index
                        .query(&qv, &filter, k, false)
                        .map_err(|e| e.to_string())?
                        .into_iter()
                        .map(|r| r.chunk.id)
                        .collect();
                    let want = brute_force(&entries, q, metric, contract, k);
                    if got != want {
                        return Err(format!(
                            "{metric:?} k={k} filter={contract:?}: got {got:?}, want {want:?}"
                        ));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!(
        "{checked} queries identical to the full-scan ranking (200 vectors, 50 queries, k in 1/5/10, 3 metrics)"
    ))
}

fn corpus(name: &str) -> Vec<String> {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)).unwrap();
    text.split("\n=====\n")
        .map(|s| s.trim_end_matches('\n').to_owned())
        .filter(|s| !s.trim().is_empty())
        .collect()
}

async fn sql_safety(w: &common::World, checksum_at_start: &str) -> Outcome {
    let mutations = corpus("sql_mutations.txt");
    let reads = corpus("sql_readonly.txt");
    if mutations.len() < 100 || reads.len() < 50 {
        return Err(format!(
            "corpus too small: {} mutations, {} reads",
            mutations.len(),
            reads.len()
        ));
    }
    let false_accepts: Vec<&String> = mutations.iter().filter(|s| validate_sql(s).ok).collect();
    let false_rejects: Vec<&String> = reads.iter().filter(|s| !validate_sql(s).ok).collect();
    let failed_reads: Vec<String> = reads
        .iter()
        .filter_map(|s| w.db.execute_readonly(s, 500, 5000).err().map(|e| format!("{s}: {e}")))
        .collect();

    // the store alone, with no validator in front
    for s in &mutations {
        let _ = w.db.execute_readonly(s, 10, 2000);
    }
    // the agent path: a model that proposes each mutation
    let schema = w.db.introspect_schema().map_err(|e| e.to_string())?;
    let mut agent_accepts = Vec::new();
    for s in &mutations {
        let llm = ScriptedProvider::new();
        llm.push(format!("```sql\n{s}\n```"));
        match sql_agent::run("q", &schema, &llm, &w.db, SqlAgentConfig::default(), None).await {
            Err(SqlAgentError::ValidationFailed { .. }) => {}
            other => agent_accepts.push(format!("{s}: {:?}", other.map(|o| o.candidate.sql))),
        }
    }

    let checksum_now = sha256(&w.db_path);
    let detail = format!(
        "{} mutations: {} false accepts ({} via agent); {} read-only: {} false rejects, {} execution failures; db checksum {}",
        mutations.len(),
        false_accepts.len(),
        agent_accepts.len(),
        reads.len(),
        false_rejects.len(),
        failed_reads.len(),
        if checksum_now == checksum_at_start { "unchanged" } else { "CHANGED" }
    );
    if false_accepts.is_empty()
        && agent_accepts.is_empty()
        && false_rejects.is_empty()
        && failed_reads.is_empty()
        && checksum_now == checksum_at_start
    {
        Ok(detail)
    } else {
        Err(format!(
            "{detail}; accepts {false_accepts:?} {agent_accepts:?}; rejects {false_rejects:?}; failures {failed_reads:?}"
        ))
    }
}

fn chunker_losslessness() -> Outcome {
    let rules = HeadingRules::default();
    let entries = load_manifest(&common::fixtures_dir().join("manifest.jsonl")).map_err(|e| e.to_string())?;
    let mut chunks_total = 0;
    for entry in &entries {
        let raw = std::fs::read_to_string(&entry.text_file).map_err(|e| e.to_string())?;
        let doc = parse_document(&raw, &entry.source, &rules).map_err(|e| e.to_string())?;
        let chunks = chunk_document(&doc);
        let joined: String = chunks.iter().map(Chunk::body).collect();
        if joined != raw {
            return Err(format!(
                "{}: concatenated chunk bodies differ from the input",
                entry.source
            ));
        }
        let headings = raw.lines().filter(|l| l.starts_with("CLÁUSULA ")).count();
        let preamble = raw.split("\nCLÁUSULA ").next().is_some_and(|p| !p.trim().is_empty());
        let expected = headings + usize::from(preamble);
        if chunks.len() != expected {
            return Err(format!(
                "{}: {} chunks for {} headings",
                entry.source,
                chunks.len(),
                headings
            ));
        }
        let mut again = chunk_document(&parse_document(&raw, &entry.source, &rules).unwrap());
        again.iter_mut().zip(&chunks).for_each(|(a, b)| assert_eq!(a.id, b.id));
        chunks_total += chunks.len();
    }
    Ok(format!(
        "{} documents, {chunks_total} chunks, bodies byte-identical, one chunk per clause heading",
        entries.len()
    ))
}

type CsvRow = BTreeMap<String, String>;

fn raw_contract_rows() -> Vec<CsvRow> {
    let mut reader = csv::Reader::from_path(common::fixtures_dir().join("contracts.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|r| {
            headers
                .iter()
                .map(str::to_owned)
                .zip(r.unwrap().iter().map(str::to_owned))
                .collect()
        })
        .collect()
}

/// Numbers the fixture CSVs imply for the numeric benchmark questions,
/// computed from the raw rows without SQL.
fn csv_oracle(id: &str, rows: &[CsvRow], asked: &str) -> Option<f64> {
    let count = |f: &dyn Fn(&CsvRow) -> bool| Some(rows.iter().filter(|r| f(r)).count() as f64);
    match id {
        "indirect-active" => count(&|r| r["situation"] == "active"),
        "indirect-supplier-count" => count(&|r| r["supplier"].starts_with("IBM ")),
        "indirect-inexigibility" => count(&|r| r["procurement_mode"] == "inexigibility"),
        "indirect-waivers" => {
            count(&|r| r["procurement_mode"] == "waiver_of_bidding" && r["start_date"].starts_with("2022"))
        }
        "indirect-manager-count" => {
            let name = asked.split("employee ").nth(1)?.split(" have").next()?;
            count(&|r| r["manager"] == name)
        }
        "indirect-summary" => rows.iter().find(|r| r["ocs"] == "278/2023")?["total_value"]
            .parse()
            .ok(),
        _ => None,
    }
}

async fn benchmark(w: &common::World) -> Outcome {
    let file = load_benchmark(&common::fixtures_dir().join("benchmark.json")).map_err(|e| e.to_string())?;
    if file.questions.len() != 14 {
        return Err(format!("{} questions, expected 14", file.questions.len()));
    }
    let prepared = prepare(&file.questions, &w.db).map_err(|e| e.to_string())?;
    let source = EngineSource {
        engine: w.engine(EngineConfig::default()),
        sessions: Arc::new(SessionStore::in_memory()),
        role: Role::SupportUnitManager,
    };
    let report = run_benchmark(&prepared, &source, 2).await.map_err(|e| e.to_string())?;
    let correct = report.fully_correct();

    let records = raw_contract_rows();
    let mut numeric_mismatch = Vec::new();
    let mut numeric_checked = 0;
    for q in &prepared {
        let Some(expected) = csv_oracle(&q.question.id, &records, &q.text) else {
            continue;
        };
        numeric_checked += 1;
        let answer = source.fresh_answer_text(&q.text).await?;
        if !standalone_numbers(&answer).iter().any(|n| (n - expected).abs() < 0.005) {
            numeric_mismatch.push(format!("{}: expected {expected}", q.question.id));
        }
    }

    let md = report.markdown();
    let layout_ok = md.contains("## Direct questions")
        && md.contains("## Indirect questions")
        && md.matches("| Question | Correct | Incomplete |").count() == 2
        && report.rows.iter().filter(|r| r.kind == QuestionKind::Direct).count() == 6;
    let not_correct: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.correct != report.trials)
        .map(|r| format!("{} ({:?})", r.id, r.sample.verdict))
        .collect();
    let detail =
        format!(
        "{correct}/14 Correct; {}/{numeric_checked} numeric answers equal the CSV-derived values; report layout {}{}",
        numeric_checked - numeric_mismatch.len(),
        if layout_ok { "ok" } else { "WRONG" },
        if not_correct.is_empty() { String::new() } else { format!("; not correct: {not_correct:?}") }
    );
    if correct >= 12 && numeric_mismatch.is_empty() && layout_ok {
        Ok(detail)
    } else {
        Err(format!("{detail}; {numeric_mismatch:?}"))
    }
}

trait FreshText {
    async fn fresh_answer_text(&self, q: &str) -> Result<String, String>;
}

impl FreshText for EngineSource {
    async fn fresh_answer_text(&self, q: &str) -> Result<String, String> {
        use contract_qa_core::eval::AnswerSource;
        self.fresh_answer(q).await.map_err(|e| e.to_string())
    }
}

async fn verdicts(
    engine: Engine,
    prepared: &[PreparedQuestion],
    kind: QuestionKind,
) -> Result<BTreeMap<String, Verdict>, String> {
    let source = EngineSource {
        engine,
        sessions: Arc::new(SessionStore::in_memory()),
        role: Role::SupportUnitManager,
    };
    let mut out = BTreeMap::new();
    for q in prepared.iter().filter(|q| q.question.kind == kind) {
        let answer = source.fresh_answer_text(&q.text).await?;
        out.insert(q.question.id.clone(), q.judge(&answer).verdict);
    }
    Ok(out)
}

async fn degradation(w: &common::World) -> Outcome {
    let file = load_benchmark(&common::fixtures_dir().join("benchmark.json")).map_err(|e| e.to_string())?;
    let prepared = prepare(&file.questions, &w.db).map_err(|e| e.to_string())?;

    // SQL agent disabled: direct questions from the documents alone
    let executions = w.db.execution_count();
    let no_sql = w.engine(EngineConfig {
        sql_enabled: false,
        ..EngineConfig::default()
    });
    let direct = verdicts(no_sql, &prepared, QuestionKind::Direct).await?;
    let direct_ok = direct.values().filter(|v| **v == Verdict::Correct).count();
    let sql_untouched = w.db.execution_count() == executions;

    // empty index: indirect questions from the database alone
    let empty = Arc::new(common::empty_index(&w.embedder));
    let no_docs = Engine::new(EngineParts {
        index: empty.clone(),
        db: Some(w.db.clone()),
        llm: Arc::new(contract_qa_core::llm::FixtureAnalyst::new()),
        embedder: w.embedder.clone(),
        config: EngineConfig::default(),
        audit: None,
    })
    .map_err(|e| e.to_string())?;
    let indirect = verdicts(no_docs, &prepared, QuestionKind::Indirect).await?;
    let indirect_ok = indirect.values().filter(|v| **v == Verdict::Correct).count();

    // out of domain: no retrieval, no SQL
    let engine = w.engine(EngineConfig::default());
    let session = ChatSession::new("ood", Role::Support);
    let (queries, executions) = (w.index.query_count(), w.db.execution_count());
    let mut refused = 0;
    let off_topic = [
        "What will the weather be like in Rio de Janeiro tomorrow?",
        "Write a short poem about the sea.",
        "Who won the 2022 football world cup?",
        "Recommend a good recipe for pasta carbonara.",
        "What is the capital of Australia?",
    ];
    for q in off_topic {
        let a = engine.answer(&session, q).await.map_err(|e| e.to_string())?;
        refused += usize::from(a.out_of_domain && a.sources.is_empty() && a.table.is_none());
    }
    let index_delta = w.index.query_count() - queries;
    let db_delta = w.db.execution_count() - executions;

    let detail = format!(
        "SQL disabled: {direct_ok}/{} direct Correct (db untouched: {sql_untouched}); empty index: {indirect_ok}/{} indirect Correct; out of domain: {refused}/{} refused, {index_delta} index queries, {db_delta} db queries",
        direct.len(),
        indirect.len(),
        off_topic.len()
    );
    if direct_ok == direct.len()
        && sql_untouched
        && indirect_ok == indirect.len()
        && refused == off_topic.len()
        && index_delta == 0
        && db_delta == 0
    {
        Ok(detail)
    } else {
        Err(format!("{detail}; direct {direct:?}; indirect {indirect:?}"))
    }
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let mut gate = Gate { failed: 0 };
    rt.block_on(async {
        let world = common::world().await;
        let checksum = sha256(&world.db_path);

        let t = Instant::now();
        let o = filter_precision(&world).await;
        gate.report("retrieval filter precision", Some(Duration::from_secs(30)), t, o);

        let t = Instant::now();
        gate.report(
            "index oracle equivalence",
            Some(Duration::from_secs(10)),
            t,
            oracle_equivalence(),
        );

        let t = Instant::now();
        gate.report("chunker losslessness", None, t, chunker_losslessness());

        let t = Instant::now();
        let o = benchmark(&world).await;
        gate.report("end-to-end benchmark", Some(Duration::from_secs(60)), t, o);

        let t = Instant::now();
        let o = degradation(&world).await;
        gate.report("degradation", None, t, o);

        // last, so the checksum spans every other criterion
        let t = Instant::now();
        let o = sql_safety(&world, &checksum).await;
        gate.report("sql safety", None, t, o);
    });
    if gate.failed > 0 {
        println!("{} acceptance criteria failed", gate.failed);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
