//! Simulated user that answers from the relevance judgments.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, JudgmentSet, TermId};
use crate::env::{Payload, Response, SessionState, User};
use crate::error::{Error, Result};
use crate::retrieval::RankedList;
use crate::topics::TopicModel;

/// First document of the list that is relevant.
pub fn respond_documents(list: &RankedList, relevant: &BTreeSet<usize>) -> Option<usize> {
    list.docs().find(|d| relevant.contains(d))
}

/// Yes iff the term occurs in strictly more than half of the relevant documents.
pub fn respond_keyterm(corpus: &Corpus, term: TermId, relevant: &BTreeSet<usize>) -> bool {
    let hits = relevant.iter().filter(|&&d| corpus.docs[d].contains(term)).count();
    2 * hits > relevant.len()
}

/// The term with the largest summed TF-IDF over the relevant documents,
/// skipping `exclude`. Ties go to the lexicographically smaller term.
pub fn respond_request(
    corpus: &Corpus,
    relevant: &BTreeSet<usize>,
    exclude: &BTreeSet<TermId>,
) -> Result<TermId> {
    let mut tf: BTreeMap<TermId, f64> = BTreeMap::new();
    for &d in relevant {
        for &(t, c) in &corpus.docs[d].counts {
            *tf.entry(t).or_default() += c as f64;
        }
    }
    tf.into_iter()
        .filter(|(t, _)| !exclude.contains(t))
        .map(|(t, c)| (t, c * corpus.idf(t)))
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| corpus.vocab.term(b.0).cmp(corpus.vocab.term(a.0)))
        })
        .map(|(t, _)| t)
        .ok_or(Error::NoCandidateTerm)
}

/// Uniform choice among the offered topics that are relevant.
pub fn respond_topic(offered: &[usize], truth: &BTreeSet<usize>, rng: &mut impl Rng) -> Option<usize> {
    let hits: Vec<usize> = offered.iter().copied().filter(|z| truth.contains(z)).collect();
    if hits.is_empty() {
        None
    } else {
        Some(hits[rng.random_range(0..hits.len())])
    }
}

/// Topics whose mean P(z|d) over the relevant documents reaches 1/K.
pub fn topic_truth(topics: &TopicModel, relevant: &BTreeSet<usize>) -> BTreeSet<usize> {
    let k = topics.num_topics();
    if relevant.is_empty() {
        return BTreeSet::new();
    }
    let n = relevant.len() as f64;
    (0..k)
        .filter(|&z| {
            let mean: f64 = relevant.iter().map(|&d| topics.doc_topic[d][z]).sum::<f64>() / n;
            mean >= 1.0 / k as f64 - 1e-12
        })
        .collect()
}

/// Seed for the topic choice at one turn of one query. Depends only on its
/// arguments, so a session's answers are a function of its path.
pub fn turn_seed(seed: u64, qid: &str, turn: usize) -> u64 {
    // FNV-1a over the query id, mixed with the seed and turn.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in qid.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut x = h ^ seed.rotate_left(17) ^ (turn as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone)]
pub struct SimUser {
    corpus: Arc<Corpus>,
    judgments: Arc<JudgmentSet>,
    truth: Arc<BTreeMap<String, BTreeSet<usize>>>,
    seed: u64,
}

impl SimUser {
    pub fn new(
        corpus: Arc<Corpus>,
        judgments: Arc<JudgmentSet>,
        topics: &TopicModel,
        seed: u64,
    ) -> Self {
        let truth = judgments
            .query_ids()
            .filter_map(|q| judgments.relevant(q).map(|rel| (q.to_owned(), topic_truth(topics, rel))))
            .collect();
        SimUser {
            corpus,
            judgments,
            truth: Arc::new(truth),
            seed,
        }
    }

    /// Same cached data, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        SimUser {
            seed,
            ..self.clone()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn judgments(&self) -> &Arc<JudgmentSet> {
        &self.judgments
    }

    pub fn relevant(&self, qid: &str) -> Result<&BTreeSet<usize>> {
        self.judgments
            .relevant(qid)
            .ok_or_else(|| Error::NoRelevant(qid.to_owned()))
    }

    pub fn topic_truth(&self, qid: &str) -> Option<&BTreeSet<usize>> {
        self.truth.get(qid)
    }
}

impl User for SimUser {
    fn respond(&mut self, state: &SessionState, payload: &Payload) -> Result<Response> {
        let relevant = self.relevant(&state.qid)?;
        Ok(match payload {
            Payload::Documents { list } => Response::Document(respond_documents(list, relevant)),
            Payload::KeyTerm { term } => {
                Response::Answer(term.is_some_and(|t| respond_keyterm(&self.corpus, t, relevant)))
            }
            Payload::Request { .. } => {
                match respond_request(&self.corpus, relevant, &state.query.key_terms) {
                    Ok(t) => Response::Term(Some(self.corpus.vocab.term(t).to_owned())),
                    Err(Error::NoCandidateTerm) => Response::Term(None),
                    Err(e) => return Err(e),
                }
            }
            Payload::Topics { topics } => {
                let empty = BTreeSet::new();
                let truth = self.truth.get(&state.qid).unwrap_or(&empty);
                let mut rng = ChaCha8Rng::seed_from_u64(turn_seed(self.seed, &state.qid, state.turn));
                Response::Topic(respond_topic(topics, truth, &mut rng))
            }
            Payload::Final { .. } => Response::Acknowledge,
        })
    }
}
