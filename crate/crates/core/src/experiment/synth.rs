//! Desk-scale synthetic collection: documents drawn from topic mixtures,
//! queries drawn from single topics, relevance by dominant topic.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, write_qrels, write_queries, Corpus, JudgmentSet, Query};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub docs: usize,
    pub topics: usize,
    pub vocab: usize,
    pub doc_len: usize,
    pub queries: usize,
    /// Distinct terms per query.
    pub query_len: usize,
    /// Width of each topic's block of the vocabulary, as a multiple of `vocab / topics`;
    /// values above 1 make neighbouring topics share terms.
    pub topic_spread: f64,
    /// Share of every topic's mass on a Zipf background over the whole vocabulary.
    pub background: f64,
    /// Dirichlet concentration of the per-document topic mixtures.
    pub mixture_concentration: f64,
    /// Extra weight given to each document's dominant topic before normalizing.
    pub dominant_boost: f64,
    /// Query terms are drawn from this many of the topic's most probable terms.
    pub query_pool: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            docs: 500,
            topics: 10,
            vocab: 2000,
            doc_len: 100,
            queries: 50,
            query_len: 2,
            topic_spread: 1.5,
            background: 0.4,
            mixture_concentration: 0.5,
            dominant_boost: 0.6,
            query_pool: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    pub judgments: JudgmentSet,
    /// Dominant topic of every document.
    pub dominant: Vec<usize>,
    /// Source topic of every query.
    pub query_topic: Vec<usize>,
}

impl SyntheticCollection {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_corpus(&dir.join("corpus.jsonl"), &self.corpus)?;
        write_queries(&dir.join("queries.jsonl"), &self.queries)?;
        write_qrels(&dir.join("qrels.tsv"), &self.corpus, &self.judgments)
    }
}

fn term_name(t: usize) -> String {
    format!("w{t:05}")
}

pub fn make_synthetic(p: &SynthParams, seed: u64) -> Result<SyntheticCollection> {
    if p.docs == 0 || p.topics == 0 || p.vocab < p.topics || p.doc_len == 0 || p.queries == 0 || p.query_len == 0 {
        return Err(Error::invalid("synthetic corpus sizes must be positive, with vocab >= topics"));
    }
    if p.docs < p.topics {
        return Err(Error::invalid("need at least one document per topic"));
    }
    if !(0.0..1.0).contains(&p.background) || !(p.mixture_concentration > 0.0) || !(p.dominant_boost >= 0.0) {
        return Err(Error::invalid("background in [0, 1), concentration > 0, boost >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = p.vocab;
    let k = p.topics;

    // Topic-word distributions: a Zipf background plus a random-weighted block.
    let zipf: Vec<f64> = {
        let w: Vec<f64> = (1..=v).map(|r| 1.0 / r as f64).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    };
    let stride = v as f64 / k as f64;
    let width = ((stride * p.topic_spread).round() as usize).clamp(1, v);
    let mut topic_word = Vec::with_capacity(k);
    for z in 0..k {
        let start = (z as f64 * stride).round() as usize;
        let mut block = vec![0.0; v];
        for i in 0..width {
            let t = (start + i) % v;
            block[t] = rng.random::<f64>().powi(3) + 1e-3;
        }
        let s: f64 = block.iter().sum();
        let row: Vec<f64> = (0..v)
            .map(|t| p.background * zipf[t] + (1.0 - p.background) * block[t] / s)
            .collect();
        topic_word.push(row);
    }
    let word_samplers: Vec<WeightedIndex<f64>> = topic_word
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<_>>()?;

    // Dominant topics, redrawn until every topic owns a document.
    let dominant: Vec<usize> = loop {
        let d: Vec<usize> = (0..p.docs).map(|_| rng.random_range(0..k)).collect();
        let mut seen = vec![false; k];
        d.iter().for_each(|&z| seen[z] = true);
        if seen.iter().all(|&s| s) {
            break d;
        }
    };
    let gamma = Gamma::new(p.mixture_concentration, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut texts = Vec::with_capacity(p.docs);
    for (i, &dz) in dominant.iter().enumerate() {
        let mut mix: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let s: f64 = mix.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        mix.iter_mut().for_each(|x| *x /= s);
        // make the designated topic dominant
        let top = mix.iter().copied().fold(0.0, f64::max);
        mix[dz] = top + p.dominant_boost;
        let topic_pick = WeightedIndex::new(&mix).map_err(|e| Error::invalid(e.to_string()))?;
        let words: Vec<String> = (0..p.doc_len)
            .map(|_| term_name(word_samplers[topic_pick.sample(&mut rng)].sample(&mut rng)))
            .collect();
        texts.push((format!("d{:04}", i + 1), words.join(" ")));
    }
    let corpus = Corpus::from_texts(texts)?;

    // Queries: distinct terms from the leading terms of one topic's block.
    let mut queries = Vec::with_capacity(p.queries);
    let mut query_topic = Vec::with_capacity(p.queries);
    let mut judgments = JudgmentSet::default();
    for qi in 0..p.queries {
        let z = qi % k;
        let mut ranked: Vec<usize> = (0..v)
            .filter(|&t| corpus.vocab.get(&term_name(t)).is_some())
            .collect();
        let specific = |t: usize| topic_word[z][t] - p.background * zipf[t];
        ranked.sort_by(|&a, &b| specific(b).total_cmp(&specific(a)).then(a.cmp(&b)));
        ranked.truncate(p.query_pool.max(p.query_len));
        let mut terms = Vec::new();
        while terms.len() < p.query_len.min(ranked.len()) {
            let t = ranked[rng.random_range(0..ranked.len())];
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        let qid = format!("q{:03}", qi + 1);
        let text = terms.iter().map(|&t| term_name(t)).collect::<Vec<_>>().join(" ");
        for (d, &dz) in dominant.iter().enumerate() {
            if dz == z {
                judgments.insert(qid.clone(), d);
            }
        }
        queries.push(Query { qid, text });
        query_topic.push(z);
    }
    Ok(SyntheticCollection {
        corpus,
        queries,
        judgments,
        dominant,
        query_topic,
    })
}
