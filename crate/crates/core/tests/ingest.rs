use std::fs;
use std::path::Path;

use irdqn_core::corpus::{ingest, read_corpus, write_corpus, write_qrels, write_queries};
use irdqn_core::Error;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const DOCS: &str = r#"{"id": "d1", "text": "The Stock Market fell sharply."}
{"id": "d2", "text": "Markets rallied; stock prices rose."}

{"id": "d3", "text": "Rain is expected over the weekend."}
"#;
const QUERIES: &str = r#"{"qid": "q1", "text": "stock market"}
{"qid": "q2", "text": "weekend weather"}
"#;

#[test]
fn three_document_collection() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, queries, judgments) = ingest(
        &write(dir.path(), "c.jsonl", DOCS),
        &write(dir.path(), "q.jsonl", QUERIES),
        &write(dir.path(), "r.tsv", "# qid\tdoc\nq1\td1\nq1\td2\nq2\td3\n"),
    )
    .unwrap();
    assert_eq!(corpus.len(), 3);
    assert_eq!(queries.len(), 2);
    assert_eq!(corpus.docs[0].len(), 5);
    let stock = corpus.vocab.get("stock").unwrap();
    assert_eq!(corpus.doc_freq(stock), 2);
    assert!(corpus.vocab.get("Stock").is_none());
    let total: u64 = corpus.docs.iter().map(|d| d.len() as u64).sum();
    assert_eq!(corpus.collection.total_tokens(), total);
    assert!((corpus.collection.prob(stock) - 2.0 / total as f64).abs() < 1e-15);
    assert_eq!(judgments.relevant("q1").unwrap().len(), 2);
    assert_eq!(judgments.relevant("q2").unwrap().iter().copied().collect::<Vec<_>>(), vec![2]);
}

#[test]
fn malformed_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.jsonl", "\n\n");
    assert!(matches!(read_corpus(&empty), Err(Error::NoDocuments(_))));
    let blank_doc = write(dir.path(), "blank.jsonl", "{\"id\": \"x\", \"text\": \"...\"}\n");
    assert!(matches!(read_corpus(&blank_doc), Err(Error::Parse { line: 1, .. })));
    let garbage = write(dir.path(), "bad.jsonl", "{\"id\": \"a\", \"text\": \"ok\"}\nnot json\n");
    assert!(matches!(read_corpus(&garbage), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(read_corpus(&dir.path().join("missing")), Err(Error::Io { .. })));

    let c = write(dir.path(), "c.jsonl", DOCS);
    let q = write(dir.path(), "q.jsonl", QUERIES);
    let unknown_doc = write(dir.path(), "r1.tsv", "q1\td9\n");
    assert!(matches!(ingest(&c, &q, &unknown_doc), Err(Error::UnknownDocument(d)) if d == "d9"));
    let unknown_q = write(dir.path(), "r2.tsv", "q7\td1\n");
    assert!(matches!(ingest(&c, &q, &unknown_q), Err(Error::UnknownQuery(d)) if d == "q7"));
    let columns = write(dir.path(), "r3.tsv", "q1 d1\n");
    assert!(matches!(ingest(&c, &q, &columns), Err(Error::Parse { .. })));
    let dup = write(dir.path(), "dup.jsonl", "{\"qid\": \"q1\", \"text\": \"a\"}\n{\"qid\": \"q1\", \"text\": \"b\"}\n");
    let r = write(dir.path(), "r.tsv", "q1\td1\n");
    assert!(matches!(ingest(&c, &dup, &r), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn write_back_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, queries, judgments) = ingest(
        &write(dir.path(), "c.jsonl", DOCS),
        &write(dir.path(), "q.jsonl", QUERIES),
        &write(dir.path(), "r.tsv", "q1\td1\nq1\td2\nq2\td3\n"),
    )
    .unwrap();
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    write_corpus(&out.join("c.jsonl"), &corpus).unwrap();
    write_queries(&out.join("q.jsonl"), &queries).unwrap();
    write_qrels(&out.join("r.tsv"), &corpus, &judgments).unwrap();
    let (c2, q2, j2) = ingest(&out.join("c.jsonl"), &out.join("q.jsonl"), &out.join("r.tsv")).unwrap();
    assert_eq!(c2.docs, corpus.docs);
    assert_eq!(c2.vocab, corpus.vocab);
    assert_eq!(q2, queries);
    for q in &queries {
        assert_eq!(j2.relevant(&q.qid), judgments.relevant(&q.qid));
    }
}
