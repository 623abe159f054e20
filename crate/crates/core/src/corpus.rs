//! Document collections, queries, relevance judgments and their unigram
//! language models.
//!
//! File formats:
//! - corpus: JSON lines `{"id": ..., "text": ...}`
//! - queries: JSON lines `{"qid": ..., "text": ...}`
//! - qrels: `qid<TAB>docid` per line, `#` comments ignored

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TermId = u32;

/// Splits text into lowercase tokens.
///
/// Runs of alphanumeric characters form one token; each CJK codepoint is a
/// token of its own. Everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if is_cjk(ch) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn is_cjk(ch: char) -> bool {
    matches!(ch as u32,
        0x3040..=0x30FF       // kana
        | 0x3400..=0x4DBF     // ext A
        | 0x4E00..=0x9FFF     // unified ideographs
        | 0xAC00..=0xD7AF     // hangul syllables
        | 0xF900..=0xFAFF     // compatibility ideographs
        | 0x20000..=0x3134F)  // ext B..G
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, TermId>,
}

impl Vocabulary {
    fn intern(&mut self, term: &str) -> TermId {
        if let Some(&id) = self.index.get(term) {
            return id;
        }
        let id = self.terms.len() as TermId;
        self.terms.push(term.to_owned());
        self.index.insert(term.to_owned(), id);
        id
    }

    pub fn get(&self, term: &str) -> Option<TermId> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.terms[id as usize]
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<TermId>,
    /// Term counts sorted by term id.
    pub counts: Vec<(TermId, u32)>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn count(&self, term: TermId) -> u32 {
        self.counts
            .binary_search_by_key(&term, |&(t, _)| t)
            .map(|i| self.counts[i].1)
            .unwrap_or(0)
    }

    pub fn contains(&self, term: TermId) -> bool {
        self.count(term) > 0
    }
}

/// Background unigram model P(t|C) over the whole collection.
#[derive(Debug, Clone)]
pub struct CollectionModel {
    probs: Vec<f64>,
    total_tokens: u64,
}

impl CollectionModel {
    pub fn prob(&self, term: TermId) -> f64 {
        self.probs[term as usize]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }
}

/// Smoothed document model P(t|θ_d), dense over the vocabulary.
#[derive(Debug, Clone)]
pub struct DocModel {
    pub owner: String,
    pub probs: Vec<f64>,
}

impl DocModel {
    pub fn prob(&self, term: TermId) -> f64 {
        self.probs[term as usize]
    }
}

/// Jelinek-Mercer interpolation of the document's maximum-likelihood model
/// with the collection model.
pub fn build_doc_model(
    doc: &Document,
    collection: &CollectionModel,
    lambda_d: f64,
) -> Result<DocModel> {
    if !(0.0..=1.0).contains(&lambda_d) {
        return Err(Error::invalid(format!("lambda_d = {lambda_d} outside [0, 1]")));
    }
    if doc.is_empty() {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    let len = doc.len() as f64;
    let mut probs: Vec<f64> = collection.probs.iter().map(|p| lambda_d * p).collect();
    for &(t, c) in &doc.counts {
        probs[t as usize] += (1.0 - lambda_d) * c as f64 / len;
    }
    Ok(DocModel {
        owner: doc.id.clone(),
        probs,
    })
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub docs: Vec<Document>,
    pub vocab: Vocabulary,
    pub collection: CollectionModel,
    doc_freq: Vec<u32>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from `(id, text)` pairs. Documents that tokenize to
    /// nothing are rejected.
    pub fn from_texts<I, S, T>(docs: I) -> Result<Corpus>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        let mut out = Vec::new();
        let mut by_id = HashMap::new();
        for (id, text) in docs {
            let (id, text) = (id.into(), text.into());
            let tokens: Vec<TermId> = tokenize(&text).iter().map(|t| vocab.intern(t)).collect();
            if tokens.is_empty() {
                return Err(Error::EmptyDocument(id));
            }
            let mut counts: BTreeMap<TermId, u32> = BTreeMap::new();
            for &t in &tokens {
                *counts.entry(t).or_default() += 1;
            }
            if by_id.insert(id.clone(), out.len()).is_some() {
                return Err(Error::DuplicateDocument(id));
            }
            out.push(Document {
                id,
                text,
                tokens,
                counts: counts.into_iter().collect(),
            });
        }

        let mut cf = vec![0u64; vocab.len()];
        let mut doc_freq = vec![0u32; vocab.len()];
        for doc in &out {
            for &(t, c) in &doc.counts {
                cf[t as usize] += c as u64;
                doc_freq[t as usize] += 1;
            }
        }
        let total: u64 = cf.iter().sum();
        let probs = cf.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
        Ok(Corpus {
            docs: out,
            vocab,
            collection: CollectionModel {
                probs,
                total_tokens: total,
            },
            doc_freq,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn doc_freq(&self, term: TermId) -> u32 {
        self.doc_freq[term as usize]
    }

    /// `ln(|corpus| / df(t))`.
    pub fn idf(&self, term: TermId) -> f64 {
        let df = self.doc_freq(term).max(1) as f64;
        (self.len() as f64 / df).ln()
    }

    pub fn doc_models(&self, lambda_d: f64) -> Result<Vec<DocModel>> {
        self.docs
            .iter()
            .map(|d| build_doc_model(d, &self.collection, lambda_d))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub text: String,
}

impl Query {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }
}

/// Binary relevance: query id to the set of relevant document indices.
#[derive(Debug, Clone, Default)]
pub struct JudgmentSet {
    rel: BTreeMap<String, BTreeSet<usize>>,
}

impl JudgmentSet {
    pub fn insert(&mut self, qid: impl Into<String>, doc: usize) {
        self.rel.entry(qid.into()).or_default().insert(doc);
    }

    pub fn relevant(&self, qid: &str) -> Option<&BTreeSet<usize>> {
        self.rel.get(qid).filter(|s| !s.is_empty())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.rel.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rel.is_empty()
    }
}

#[derive(Deserialize)]
struct DocLine {
    id: String,
    text: String,
}

#[derive(Serialize)]
struct DocLineOut<'a> {
    id: &'a str,
    text: &'a str,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn non_blank_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (lineno, line) in non_blank_lines(path)? {
        let d: DocLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if tokenize(&d.text).is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno,
                msg: format!("document `{}` has no tokens", d.id),
            });
        }
        docs.push((d.id, d.text));
    }
    if docs.is_empty() {
        return Err(Error::NoDocuments(path.to_owned()));
    }
    Corpus::from_texts(docs)
}

pub fn read_queries(path: &Path) -> Result<Vec<Query>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (lineno, line) in non_blank_lines(path)? {
        let q: Query = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if !seen.insert(q.qid.clone()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno,
                msg: format!("duplicate query id `{}`", q.qid),
            });
        }
        out.push(q);
    }
    Ok(out)
}

pub fn read_qrels(path: &Path, corpus: &Corpus, queries: &[Query]) -> Result<JudgmentSet> {
    let qids: BTreeSet<&str> = queries.iter().map(|q| q.qid.as_str()).collect();
    let mut judgments = JudgmentSet::default();
    for (lineno, line) in non_blank_lines(path)? {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t').map(str::trim);
        let (Some(qid), Some(docid), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno,
                msg: "expected `qid<TAB>docid`".into(),
            });
        };
        if !qids.contains(qid) {
            return Err(Error::UnknownQuery(qid.to_owned()));
        }
        let doc = corpus
            .doc_index(docid)
            .ok_or_else(|| Error::UnknownDocument(docid.to_owned()))?;
        judgments.insert(qid, doc);
    }
    Ok(judgments)
}

pub fn ingest(
    corpus_path: &Path,
    queries_path: &Path,
    qrels_path: &Path,
) -> Result<(Corpus, Vec<Query>, JudgmentSet)> {
    let corpus = read_corpus(corpus_path)?;
    let queries = read_queries(queries_path)?;
    let judgments = read_qrels(qrels_path, &corpus, &queries)?;
    Ok((corpus, queries, judgments))
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in &corpus.docs {
        let line = serde_json::to_string(&DocLineOut {
            id: &d.id,
            text: &d.text,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in queries {
        writeln!(w, "{}", serde_json::to_string(q)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_qrels(path: &Path, corpus: &Corpus, judgments: &JudgmentSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (qid, docs) in &judgments.rel {
        for &d in docs {
            writeln!(w, "{qid}\t{}", corpus.docs[d].id).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Emulates recognition errors: every token is independently replaced, with
/// probability `rate`, by a token drawn from the collection distribution.
///
/// Returns the corrupted corpus and the number of replacement events.
pub fn inject_noise(corpus: &Corpus, rate: f64, seed: u64) -> Result<(Corpus, usize)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("noise rate {rate} outside [0, 1]")));
    }
    if rate == 0.0 {
        return Ok((corpus.clone(), 0));
    }
    let sampler = WeightedIndex::new(corpus.collection.probs())
        .map_err(|e| Error::invalid(format!("collection model: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replaced = 0;
    let mut texts = Vec::with_capacity(corpus.len());
    for doc in &corpus.docs {
        let words: Vec<&str> = doc
            .tokens
            .iter()
            .map(|&t| {
                if rng.random::<f64>() < rate {
                    replaced += 1;
                    corpus.vocab.term(sampler.sample(&mut rng) as TermId)
                } else {
                    corpus.vocab.term(t)
                }
            })
            .collect();
        texts.push((doc.id.clone(), words.join(" ")));
    }
    Ok((Corpus::from_texts(texts)?, replaced))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Corpus {
        Corpus::from_texts([("d1", "a a b"), ("d2", "b c"), ("d3", "c c c a")]).unwrap()
    }

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("A a b."), vec!["a", "a", "b"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("新聞台"), vec!["新", "聞", "台"]);
        assert_eq!(tokenize("TV新聞 2003年"), vec!["tv", "新", "聞", "2003", "年"]);
    }

    #[test]
    fn counts_sum_to_length() {
        let c = toy();
        for d in &c.docs {
            let s: u32 = d.counts.iter().map(|&(_, n)| n).sum();
            assert_eq!(s as usize, d.len());
        }
        let total: f64 = c.collection.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(c.collection.probs().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn doc_model_max_likelihood_and_smoothed() {
        let c = Corpus::from_texts([("d1", "a a b"), ("d2", "a b b")]).unwrap();
        let a = c.vocab.get("a").unwrap();
        let b = c.vocab.get("b").unwrap();
        assert!((c.collection.prob(a) - 0.5).abs() < 1e-12);

        let ml = build_doc_model(&c.docs[0], &c.collection, 0.0).unwrap();
        assert!((ml.prob(a) - 2.0 / 3.0).abs() < 1e-12);
        assert!((ml.prob(b) - 1.0 / 3.0).abs() < 1e-12);

        let half = build_doc_model(&c.docs[0], &c.collection, 0.5).unwrap();
        assert!((half.prob(a) - 0.583_333_333_333_333_4).abs() < 1e-12);

        let full = build_doc_model(&c.docs[0], &c.collection, 1.0).unwrap();
        assert_eq!(full.probs, c.collection.probs());
    }

    #[test]
    fn doc_model_rejects_bad_lambda_and_empty_doc() {
        let c = toy();
        assert!(build_doc_model(&c.docs[0], &c.collection, 1.5).is_err());
        let empty = Document {
            id: "e".into(),
            text: String::new(),
            tokens: vec![],
            counts: vec![],
        };
        assert!(matches!(
            build_doc_model(&empty, &c.collection, 0.5),
            Err(Error::EmptyDocument(_))
        ));
    }

    #[test]
    fn doc_model_moves_toward_collection_with_lambda() {
        let c = toy();
        let mut prev: Option<Vec<f64>> = None;
        for step in 0..=10 {
            let m = build_doc_model(&c.docs[2], &c.collection, step as f64 / 10.0).unwrap();
            let gap: Vec<f64> = m
                .probs
                .iter()
                .zip(c.collection.probs())
                .map(|(p, q)| (p - q).abs())
                .collect();
            assert!((m.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if let Some(prev) = &prev {
                for (g, p) in gap.iter().zip(prev) {
                    assert!(*g <= p + 1e-15);
                }
            }
            prev = Some(gap);
        }
    }

    #[test]
    fn empty_documents_are_rejected() {
        assert!(matches!(
            Corpus::from_texts([("d1", "a"), ("d2", "...")]),
            Err(Error::EmptyDocument(id)) if id == "d2"
        ));
    }

    #[test]
    fn noise_identity_and_saturation() {
        let c = toy();
        let (same, n) = inject_noise(&c, 0.0, 7).unwrap();
        assert_eq!(n, 0);
        assert_eq!(same.docs[2].text, c.docs[2].text);

        let total: usize = c.docs.iter().map(Document::len).sum();
        let (_, n) = inject_noise(&c, 1.0, 7).unwrap();
        assert_eq!(n, total);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let c = toy();
        let (a, _) = inject_noise(&c, 0.5, 11).unwrap();
        let (b, _) = inject_noise(&c, 0.5, 11).unwrap();
        for (x, y) in a.docs.iter().zip(&b.docs) {
            assert_eq!(x.text, y.text);
        }
    }

    #[test]
    fn noise_rate_matches_binomial_expectation() {
        // 10_000 tokens at rate 0.1: mean 1000, sd 30, so [900, 1100] is a
        // 3.3-sigma band on each side.
        let text = (0..100).map(|i| format!("w{}", i % 37)).collect::<Vec<_>>().join(" ");
        let docs: Vec<_> = (0..100).map(|i| (format!("d{i}"), text.clone())).collect();
        let c = Corpus::from_texts(docs).unwrap();
        for seed in 0..20 {
            let (_, n) = inject_noise(&c, 0.1, seed).unwrap();
            assert!((900..=1100).contains(&n), "seed {seed}: {n}");
        }
    }
}
