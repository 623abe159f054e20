//! KL-divergence language-model retrieval with a negative information model,
//! plus the query-model updates driven by user feedback.
//!
//! The relevance score of document `d` is
//!
//! ```text
//! S(q, d) = -[ KL(θ_q ‖ θ_d) - β · KL(θ_N ‖ θ_d) ]
//! ```
//!
//! with KL taken over the support of its left argument, natural log. When the
//! user has rejected no terms, θ_N is empty and its term contributes nothing.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{CollectionModel, Corpus, DocModel, Document, TermId};
use crate::error::{Error, Result};

/// A sparse probability distribution over term ids, sorted by id, with no
/// zero entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TermDist {
    entries: Vec<(TermId, f64)>,
}

impl TermDist {
    pub fn point(term: TermId) -> Self {
        TermDist {
            entries: vec![(term, 1.0)],
        }
    }

    pub fn uniform<I: IntoIterator<Item = TermId>>(terms: I) -> Self {
        let set: BTreeSet<TermId> = terms.into_iter().collect();
        let p = 1.0 / set.len().max(1) as f64;
        TermDist {
            entries: set.into_iter().map(|t| (t, p)).collect(),
        }
    }

    /// Normalizes non-negative weights; zero weights are dropped.
    pub fn from_weights<I: IntoIterator<Item = (TermId, f64)>>(weights: I) -> Self {
        let mut acc: BTreeMap<TermId, f64> = BTreeMap::new();
        for (t, w) in weights {
            *acc.entry(t).or_default() += w;
        }
        let total: f64 = acc.values().sum();
        if total <= 0.0 {
            return TermDist::default();
        }
        TermDist {
            entries: acc
                .into_iter()
                .filter(|&(_, w)| w > 0.0)
                .map(|(t, w)| (t, w / total))
                .collect(),
        }
    }

    pub fn from_dense(probs: &[f64]) -> Self {
        Self::from_weights(probs.iter().enumerate().map(|(t, &p)| (t as TermId, p)))
    }

    pub fn get(&self, term: TermId) -> f64 {
        self.entries
            .binary_search_by_key(&term, |&(t, _)| t)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    /// `(1 - w) · self + w · other`.
    pub fn mix(&self, other: &TermDist, w: f64) -> TermDist {
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let (t, p) = match (a.get(i), b.get(j)) {
                (Some(&(ta, pa)), Some(&(tb, pb))) if ta == tb => {
                    i += 1;
                    j += 1;
                    (ta, (1.0 - w) * pa + w * pb)
                }
                (Some(&(ta, pa)), Some(&(tb, _))) if ta < tb => {
                    i += 1;
                    (ta, (1.0 - w) * pa)
                }
                (Some(&(ta, pa)), None) => {
                    i += 1;
                    (ta, (1.0 - w) * pa)
                }
                (_, Some(&(tb, pb))) => {
                    j += 1;
                    (tb, w * pb)
                }
                (None, None) => unreachable!(),
            };
            if p > 0.0 {
                out.push((t, p));
            }
        }
        TermDist { entries: out }
    }

    /// `Σ p ln p` over the support.
    fn neg_entropy(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p * p.ln()).sum()
    }
}

/// KL(p ‖ q) over the support of `p`.
pub fn kl_divergence(p: &TermDist, q: impl Fn(TermId) -> f64, owner: &str) -> Result<f64> {
    let mut kl = 0.0;
    for (t, pt) in p.iter() {
        let qt = q(t);
        if qt <= 0.0 {
            return Err(Error::ZeroProbability {
                term: t,
                doc: owner.to_owned(),
            });
        }
        kl += pt * (pt / qt).ln();
    }
    Ok(kl)
}

/// θ_q together with its key term set (the regularization anchor).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryModel {
    pub dist: TermDist,
    pub key_terms: BTreeSet<TermId>,
}

impl QueryModel {
    /// Maximum-likelihood model of the query's in-vocabulary tokens; the key
    /// term set starts as those tokens.
    pub fn from_terms(qid: &str, terms: &[TermId]) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyQuery(qid.to_owned()));
        }
        Ok(QueryModel {
            dist: TermDist::from_weights(terms.iter().map(|&t| (t, 1.0))),
            key_terms: terms.iter().copied().collect(),
        })
    }
}

/// θ_N: uniform over the terms the user rejected.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NegativeModel {
    pub dist: TermDist,
    pub terms: BTreeSet<TermId>,
}

impl NegativeModel {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Documents ordered by descending score; ties by ascending document id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub entries: Vec<(usize, f64)>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn docs(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(d, _)| d)
    }

    pub fn top(&self, n: usize) -> &[(usize, f64)] {
        &self.entries[..n.min(self.entries.len())]
    }

    pub fn min_score(&self) -> Option<f64> {
        self.entries.last().map(|&(_, s)| s)
    }
}

pub fn score(query: &QueryModel, neg: &NegativeModel, doc: &DocModel, beta: f64) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::invalid(format!("beta = {beta} is negative")));
    }
    let kl_q = kl_divergence(&query.dist, |t| doc.prob(t), &doc.owner)?;
    let kl_n = if neg.is_empty() || beta == 0.0 {
        0.0
    } else {
        kl_divergence(&neg.dist, |t| doc.prob(t), &doc.owner)?
    };
    Ok(-(kl_q - beta * kl_n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    /// Jelinek-Mercer weight on the collection model.
    pub lambda_d: f64,
    /// Weight of the negative model in the score.
    pub beta: f64,
    /// Feedback interpolation weight α.
    pub alpha: f64,
    /// Background weight λ_f in the feedback mixture.
    pub lambda_f: f64,
    /// Key-term regularization weight μ.
    pub mu: f64,
    pub em_iters: usize,
    pub key_term_weight: f64,
    pub topic_weight: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            lambda_d: 0.5,
            beta: 0.3,
            alpha: 0.5,
            lambda_f: 0.5,
            mu: 0.2,
            em_iters: 30,
            key_term_weight: 0.3,
            topic_weight: 0.3,
        }
    }
}

/// Precomputed document statistics for fast KL ranking.
///
/// With Jelinek-Mercer smoothing,
/// `ln P(t|θ_d) = ln(λ P(t|C)) + ln(1 + (1-λ) c(t,d) / (|d| λ P(t|C)))`,
/// so the cross-entropy of any model against θ_d splits into a
/// document-independent part and a sum over the document's own terms.
#[derive(Debug, Clone)]
struct Index {
    log_background: Vec<f64>,
    gains: Vec<Vec<(TermId, f64)>>,
}

impl Index {
    fn new(corpus: &Corpus, lambda_d: f64) -> Option<Index> {
        if lambda_d <= 0.0 {
            return None;
        }
        let bg = &corpus.collection;
        let log_background = bg.probs().iter().map(|p| (lambda_d * p).ln()).collect();
        let gains = corpus
            .docs
            .iter()
            .map(|d| {
                let len = d.len() as f64;
                d.counts
                    .iter()
                    .map(|&(t, c)| {
                        let ratio = (1.0 - lambda_d) * c as f64 / (len * lambda_d * bg.prob(t));
                        (t, ratio.ln_1p())
                    })
                    .collect()
            })
            .collect();
        Some(Index {
            log_background,
            gains,
        })
    }
}

/// Per-model terms of the split cross-entropy.
struct Prepared {
    dense: Vec<f64>,
    /// `Σ p ln p - Σ p ln(λ P(t|C))`
    base: f64,
}

impl Prepared {
    fn new(dist: &TermDist, index: &Index) -> Prepared {
        let mut dense = vec![0.0; index.log_background.len()];
        let mut cross = 0.0;
        for (t, p) in dist.iter() {
            dense[t as usize] = p;
            cross += p * index.log_background[t as usize];
        }
        Prepared {
            dense,
            base: dist.neg_entropy() - cross,
        }
    }

    fn kl(&self, gains: &[(TermId, f64)]) -> f64 {
        self.base
            - gains
                .iter()
                .map(|&(t, g)| self.dense[t as usize] * g)
                .sum::<f64>()
    }
}

/// The corpus plus everything needed to rank it.
#[derive(Debug, Clone)]
pub struct Retriever {
    corpus: Arc<Corpus>,
    params: RetrievalParams,
    index: Option<Index>,
}

impl Retriever {
    pub fn new(corpus: Arc<Corpus>, params: RetrievalParams) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot rank an empty corpus"));
        }
        if !(0.0..=1.0).contains(&params.lambda_d) {
            return Err(Error::invalid(format!("lambda_d = {} outside [0, 1]", params.lambda_d)));
        }
        let index = Index::new(&corpus, params.lambda_d);
        Ok(Retriever {
            corpus,
            params,
            index,
        })
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn params(&self) -> &RetrievalParams {
        &self.params
    }

    pub fn query_terms(&self, query: &crate::corpus::Query) -> Vec<TermId> {
        query
            .tokens()
            .iter()
            .filter_map(|t| self.corpus.vocab.get(t))
            .collect()
    }

    /// S(q, d) for every document, in corpus order.
    pub fn score_all(&self, query: &QueryModel, neg: &NegativeModel) -> Result<Vec<f64>> {
        let beta = self.params.beta;
        match &self.index {
            Some(index) => {
                let q = Prepared::new(&query.dist, index);
                let n = (!neg.is_empty() && beta > 0.0).then(|| Prepared::new(&neg.dist, index));
                Ok(index
                    .gains
                    .iter()
                    .map(|g| {
                        let kl_n = n.as_ref().map_or(0.0, |n| n.kl(g));
                        -(q.kl(g) - beta * kl_n)
                    })
                    .collect())
            }
            None => self
                .corpus
                .docs
                .iter()
                .map(|d| {
                    let m = crate::corpus::build_doc_model(d, &self.corpus.collection, 0.0)?;
                    score(query, neg, &m, beta)
                })
                .collect(),
        }
    }

    pub fn rank(&self, query: &QueryModel, neg: &NegativeModel) -> Result<RankedList> {
        let scores = self.score_all(query, neg)?;
        Ok(rank_scores(&self.corpus, scores))
    }

    /// Scores the collection model as a pseudo-document.
    pub fn score_collection(&self, query: &QueryModel, neg: &NegativeModel) -> Result<f64> {
        let bg = &self.corpus.collection;
        let kl_q = kl_divergence(&query.dist, |t| bg.prob(t), "<collection>")?;
        let kl_n = if neg.is_empty() {
            0.0
        } else {
            kl_divergence(&neg.dist, |t| bg.prob(t), "<collection>")?
        };
        Ok(-(kl_q - self.params.beta * kl_n))
    }

    /// Feedback re-estimation with this retriever's parameters.
    pub fn expand(&self, query: &QueryModel, feedback: &[&Document]) -> Result<QueryModel> {
        let p = &self.params;
        expand_query(
            query,
            feedback,
            &self.corpus.collection,
            p.alpha,
            p.lambda_f,
            p.mu,
            p.em_iters,
        )
    }
}

/// Sorts per-document scores into a ranked list.
pub fn rank_scores(corpus: &Corpus, scores: Vec<f64>) -> RankedList {
    let mut entries: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    entries.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| corpus.docs[a.0].id.cmp(&corpus.docs[b.0].id))
    });
    RankedList { entries }
}

/// Query-regularized mixture-model feedback.
///
/// A feedback model θ_F is fit by EM to the feedback documents under the
/// mixture `(1-λ_f) θ_F + λ_f P(·|C)`, pulled toward the key terms as
/// `(1-μ) θ_F + μ · Uniform(key_terms)`, and interpolated into the query as
/// `(1-α) θ_q + α θ_F'`. No feedback documents leaves the query unchanged.
pub fn expand_query(
    query: &QueryModel,
    feedback: &[&Document],
    collection: &CollectionModel,
    alpha: f64,
    lambda_f: f64,
    mu: f64,
    em_iters: usize,
) -> Result<QueryModel> {
    for (name, v) in [("alpha", alpha), ("lambda_f", lambda_f), ("mu", mu)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
        }
    }
    if em_iters == 0 {
        return Err(Error::invalid("em_iters must be at least 1"));
    }
    if feedback.is_empty() || alpha == 0.0 {
        return Ok(query.clone());
    }

    let mut counts: BTreeMap<TermId, f64> = BTreeMap::new();
    for doc in feedback {
        for &(t, c) in &doc.counts {
            *counts.entry(t).or_default() += c as f64;
        }
    }
    let terms: Vec<TermId> = counts.keys().copied().collect();
    let counts: Vec<f64> = counts.into_values().collect();
    let total: f64 = counts.iter().sum();
    let mut theta: Vec<f64> = counts.iter().map(|c| c / total).collect();

    for _ in 0..em_iters {
        let next: Vec<f64> = terms
            .iter()
            .zip(&counts)
            .zip(&theta)
            .map(|((&t, &c), &p)| {
                let fg = (1.0 - lambda_f) * p;
                let denom = fg + lambda_f * collection.prob(t);
                if denom > 0.0 {
                    c * fg / denom
                } else {
                    0.0
                }
            })
            .collect();
        let z: f64 = next.iter().sum();
        if z <= 0.0 {
            break;
        }
        theta = next.into_iter().map(|v| v / z).collect();
    }

    let mut feedback_model = TermDist::from_weights(terms.into_iter().zip(theta));
    if mu > 0.0 && !query.key_terms.is_empty() {
        let anchor = TermDist::uniform(query.key_terms.iter().copied());
        feedback_model = feedback_model.mix(&anchor, mu);
    }
    Ok(QueryModel {
        dist: query.dist.mix(&feedback_model, alpha),
        key_terms: query.key_terms.clone(),
    })
}

/// Adds a confirmed term: `(1-w) θ_q + w δ_term`, and extends the key terms.
pub fn add_key_term(query: &QueryModel, term: TermId, w: f64) -> Result<QueryModel> {
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::invalid(format!("key term weight {w} outside (0, 1)")));
    }
    let mut key_terms = query.key_terms.clone();
    key_terms.insert(term);
    Ok(QueryModel {
        dist: query.dist.mix(&TermDist::point(term), w),
        key_terms,
    })
}

pub fn update_negative(neg: &NegativeModel, term: TermId) -> NegativeModel {
    let mut terms = neg.terms.clone();
    terms.insert(term);
    NegativeModel {
        dist: TermDist::uniform(terms.iter().copied()),
        terms,
    }
}

pub fn interpolate_topic(query: &QueryModel, topic: &TermDist, w: f64) -> Result<QueryModel> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("topic weight {w} outside [0, 1]")));
    }
    Ok(QueryModel {
        dist: query.dist.mix(topic, w),
        key_terms: query.key_terms.clone(),
    })
}
