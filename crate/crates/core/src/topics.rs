//! PLSA topic model fit by EM, used by the Return Topic action and by the
//! simulated user's notion of relevant topics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TermId};
use crate::error::{Error, Result};
use crate::retrieval::TermDist;

#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    /// P(t|z), one dense row per topic.
    pub topic_word: Vec<Vec<f64>>,
    /// P(z|d), one row per document in corpus order.
    pub doc_topic: Vec<Vec<f64>>,
}

impl TopicModel {
    pub fn num_topics(&self) -> usize {
        self.topic_word.len()
    }

    pub fn topic_dist(&self, z: usize) -> Result<TermDist> {
        self.topic_word
            .get(z)
            .map(|row| TermDist::from_dense(row))
            .ok_or(Error::UnknownTopic(z))
    }

    /// The `n` most probable terms of topic `z`.
    pub fn top_terms(&self, z: usize, n: usize) -> Vec<TermId> {
        let mut idx: Vec<usize> = (0..self.topic_word[z].len()).collect();
        idx.sort_by(|&a, &b| self.topic_word[z][b].total_cmp(&self.topic_word[z][a]).then(a.cmp(&b)));
        idx.into_iter().take(n).map(|t| t as TermId).collect()
    }

    pub fn to_json(&self, corpus: &Corpus) -> TopicModelJson {
        TopicModelJson {
            k: self.num_topics(),
            topic_word: self
                .topic_word
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(t, &p)| (corpus.vocab.term(t as TermId).to_owned(), p))
                        .collect()
                })
                .collect(),
            doc_topic: corpus
                .docs
                .iter()
                .zip(&self.doc_topic)
                .map(|(d, row)| (d.id.clone(), row.clone()))
                .collect(),
        }
    }

    pub fn from_json(json: &TopicModelJson, corpus: &Corpus) -> Result<Self> {
        if json.topic_word.len() != json.k {
            return Err(Error::Config(format!(
                "topic model declares K = {} but has {} topics",
                json.k,
                json.topic_word.len()
            )));
        }
        let v = corpus.vocab.len();
        let topic_word = json
            .topic_word
            .iter()
            .map(|pairs| {
                let mut row = vec![0.0; v];
                for (term, p) in pairs {
                    let t = corpus.vocab.get(term).ok_or_else(|| {
                        Error::Config(format!("topic model term `{term}` not in corpus"))
                    })?;
                    row[t as usize] = *p;
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        let doc_topic = corpus
            .docs
            .iter()
            .map(|d| {
                json.doc_topic
                    .get(&d.id)
                    .filter(|row| row.len() == json.k)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("topic model lacks document `{}`", d.id)))
            })
            .collect::<Result<_>>()?;
        Ok(TopicModel {
            topic_word,
            doc_topic,
        })
    }
}

/// On-disk form: `{"K": int, "topic_word": [[[token, prob], ...], ...], "doc_topic": {docid: [prob, ...]}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModelJson {
    #[serde(rename = "K")]
    pub k: usize,
    pub topic_word: Vec<Vec<(String, f64)>>,
    pub doc_topic: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PlsaFit {
    pub model: TopicModel,
    /// Training log-likelihood before each EM iteration and after the last.
    pub log_likelihood: Vec<f64>,
}

pub fn fit_topics(corpus: &Corpus, k: usize, em_iters: usize, seed: u64) -> Result<TopicModel> {
    fit_topics_traced(corpus, k, em_iters, seed).map(|f| f.model)
}

pub fn fit_topics_traced(corpus: &Corpus, k: usize, em_iters: usize, seed: u64) -> Result<PlsaFit> {
    if k == 0 || em_iters == 0 {
        return Err(Error::invalid("PLSA needs K >= 1 and at least one EM iteration"));
    }
    if k > corpus.len() {
        return Err(Error::TooManyTopics {
            topics: k,
            docs: corpus.len(),
        });
    }
    let v = corpus.vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_rows = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| {
                let row: Vec<f64> = (0..cols).map(|_| 0.5 + rng.random::<f64>()).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(|x| x / s).collect()
            })
            .collect()
    };
    let mut topic_word = random_rows(k, v);
    let mut doc_topic = random_rows(corpus.len(), k);

    let mut history = Vec::with_capacity(em_iters + 1);
    let mut post = vec![0.0; k];
    for _ in 0..em_iters {
        let mut tw_acc = vec![vec![0.0; v]; k];
        let mut ll = 0.0;
        for (d, doc) in corpus.docs.iter().enumerate() {
            let mut dt_acc = vec![0.0; k];
            for &(t, n) in &doc.counts {
                let t = t as usize;
                let mut mix = 0.0;
                for z in 0..k {
                    post[z] = doc_topic[d][z] * topic_word[z][t];
                    mix += post[z];
                }
                let n = n as f64;
                ll += n * mix.max(f64::MIN_POSITIVE).ln();
                if mix <= 0.0 {
                    continue;
                }
                for z in 0..k {
                    let r = n * post[z] / mix;
                    tw_acc[z][t] += r;
                    dt_acc[z] += r;
                }
            }
            let s: f64 = dt_acc.iter().sum();
            doc_topic[d] = dt_acc.into_iter().map(|x| x / s).collect();
        }
        for (row, acc) in topic_word.iter_mut().zip(tw_acc) {
            let s: f64 = acc.iter().sum();
            if s > 0.0 {
                *row = acc.into_iter().map(|x| x / s).collect();
            }
        }
        history.push(ll);
    }
    history.push(log_likelihood(corpus, &topic_word, &doc_topic));
    Ok(PlsaFit {
        model: TopicModel {
            topic_word,
            doc_topic,
        },
        log_likelihood: history,
    })
}

fn log_likelihood(corpus: &Corpus, topic_word: &[Vec<f64>], doc_topic: &[Vec<f64>]) -> f64 {
    let mut ll = 0.0;
    for (d, doc) in corpus.docs.iter().enumerate() {
        for &(t, n) in &doc.counts {
            let mix: f64 = doc_topic[d]
                .iter()
                .zip(topic_word)
                .map(|(pz, row)| pz * row[t as usize])
                .sum();
            ll += n as f64 * mix.max(f64::MIN_POSITIVE).ln();
        }
    }
    ll
}
