//! State features for the dialogue policies: seven query-performance
//! predictors, the turn index, and the raw top-N relevance scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, TermId};
use crate::error::{Error, Result};
use crate::retrieval::{NegativeModel, QueryModel, RankedList, Retriever};

pub const HANDCRAFTED: usize = 7;

pub const HANDCRAFTED_NAMES: [&str; HANDCRAFTED] = [
    "clarity",
    "scope",
    "scs",
    "ambiguity",
    "qc_similarity",
    "wig",
    "query_feedback",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Number of raw top-N scores.
    pub n_raw: usize,
    /// Include the seven predictors.
    pub handcrafted: bool,
    /// Documents in the relevance model behind the clarity score.
    pub clarity_docs: usize,
    pub ambiguity_docs: usize,
    pub wig_docs: usize,
    /// Overlap depth for query feedback, capped at a tenth of the corpus.
    pub feedback_overlap: usize,
    /// Pseudo-relevant documents used by query feedback.
    pub feedback_docs: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_raw: 100,
            handcrafted: true,
            clarity_docs: 10,
            ambiguity_docs: 10,
            wig_docs: 10,
            feedback_overlap: 50,
            feedback_docs: 10,
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        self.handcrafted as usize * HANDCRAFTED + 1 + self.n_raw
    }

    /// Narrows a fully extracted vector to this configuration.
    pub fn project(&self, full: &FeatureVector) -> FeatureVector {
        assert!(
            full.raw_scores.len() >= self.n_raw,
            "cannot project {} raw scores to {}",
            full.raw_scores.len(),
            self.n_raw
        );
        FeatureVector {
            handcrafted: if self.handcrafted { full.handcrafted } else { None },
            turn: full.turn,
            raw_scores: full.raw_scores[..self.n_raw].to_vec(),
        }
    }

    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> = Vec::new();
        if self.handcrafted {
            cols.extend(HANDCRAFTED_NAMES.iter().map(|s| s.to_string()));
        }
        cols.push("t".into());
        cols.extend((1..=self.n_raw).map(|i| format!("s_{i}")));
        cols.join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub handcrafted: Option<[f64; HANDCRAFTED]>,
    pub turn: usize,
    pub raw_scores: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.handcrafted.map_or(0, |_| HANDCRAFTED) + 1 + self.raw_scores.len()
    }

    /// `[handcrafted ‖ turn ‖ raw_scores]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        if let Some(h) = &self.handcrafted {
            v.extend_from_slice(h);
        }
        v.push(self.turn as f64);
        v.extend_from_slice(&self.raw_scores);
        v
    }

    pub fn csv_row(&self) -> String {
        self.to_vec()
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// The first `n` scores of the list, padded with the list's minimum.
pub fn raw_scores(list: &RankedList, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let min = list.min_score().ok_or(Error::EmptyList)?;
    let mut out: Vec<f64> = list.top(n).iter().map(|&(_, s)| s).collect();
    out.resize(n, min);
    Ok(out)
}

/// Everything the predictors look at.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalView<'a> {
    pub query: &'a QueryModel,
    pub neg: &'a NegativeModel,
    /// Original query tokens (in vocabulary), repeats kept.
    pub original: &'a [TermId],
    pub list: &'a RankedList,
}

pub fn extract_handcrafted(
    view: RetrievalView<'_>,
    retriever: &Retriever,
    cfg: &FeatureConfig,
) -> Result<[f64; HANDCRAFTED]> {
    if view.list.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok([
        clarity(view, retriever, cfg.clarity_docs),
        query_scope(view.original, retriever),
        simplified_clarity(view.original, retriever),
        ambiguity(view.list, retriever, cfg.ambiguity_docs),
        query_collection_similarity(view.original, retriever),
        weighted_information_gain(view, retriever, cfg.wig_docs)?,
        query_feedback(view, retriever, cfg)?,
    ])
}

pub fn extract(
    view: RetrievalView<'_>,
    turn: usize,
    retriever: &Retriever,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    let handcrafted = if cfg.handcrafted {
        Some(extract_handcrafted(view, retriever, cfg)?)
    } else {
        None
    };
    Ok(FeatureVector {
        handcrafted,
        turn,
        raw_scores: raw_scores(view.list, cfg.n_raw)?,
    })
}

/// KL between the relevance model of the top documents and the collection.
/// The relevance model weighs each document model by `exp(S(q, d))`.
fn clarity(view: RetrievalView<'_>, retriever: &Retriever, top: usize) -> f64 {
    let corpus = retriever.corpus();
    let bg = corpus.collection.probs();
    let lambda = retriever.params().lambda_d;
    let top = view.list.top(top.max(1));
    let max = top[0].1;
    let weights: Vec<f64> = top.iter().map(|&(_, s)| (s - max).exp()).collect();
    let wsum: f64 = weights.iter().sum();

    let mut rm: Vec<f64> = bg.iter().map(|p| lambda * p * wsum).collect();
    for (&(d, _), w) in top.iter().zip(&weights) {
        let doc = &corpus.docs[d];
        let len = doc.len() as f64;
        for &(t, c) in &doc.counts {
            rm[t as usize] += w * (1.0 - lambda) * c as f64 / len;
        }
    }
    let z: f64 = rm.iter().sum();
    rm.iter()
        .zip(bg)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| {
            let p = p / z;
            p * (p / q).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// `-ln(n_q / |corpus|)` with `n_q` the number of documents containing an
/// original query term (at least 1).
fn query_scope(original: &[TermId], retriever: &Retriever) -> f64 {
    let corpus = retriever.corpus();
    let terms: BTreeSet<TermId> = original.iter().copied().collect();
    let n_q = corpus
        .docs
        .iter()
        .filter(|d| terms.iter().any(|&t| d.contains(t)))
        .count()
        .max(1);
    -(n_q as f64 / corpus.len() as f64).ln()
}

fn query_ml(original: &[TermId]) -> BTreeMap<TermId, f64> {
    let mut m: BTreeMap<TermId, f64> = BTreeMap::new();
    for &t in original {
        *m.entry(t).or_default() += 1.0;
    }
    let n = original.len().max(1) as f64;
    m.values_mut().for_each(|v| *v /= n);
    m
}

fn simplified_clarity(original: &[TermId], retriever: &Retriever) -> f64 {
    let bg = &retriever.corpus().collection;
    query_ml(original)
        .into_iter()
        .map(|(t, p)| p * (p / bg.prob(t)).ln())
        .sum::<f64>()
        .max(0.0)
}

fn cosine_counts(a: &Document, b: &Document) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.counts.len() && j < b.counts.len() {
        let (ta, ca) = a.counts[i];
        let (tb, cb) = b.counts[j];
        match ta.cmp(&tb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += ca as f64 * cb as f64;
                i += 1;
                j += 1;
            }
        }
    }
    let norm = |d: &Document| d.counts.iter().map(|&(_, c)| (c as f64).powi(2)).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

/// Mean pairwise cosine similarity of the top documents' count vectors.
/// A single document counts as perfectly coherent.
fn ambiguity(list: &RankedList, retriever: &Retriever, top: usize) -> f64 {
    let corpus = retriever.corpus();
    let docs: Vec<&Document> = list.top(top).iter().map(|&(d, _)| &corpus.docs[d]).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..docs.len() {
        for j in i + 1..docs.len() {
            sum += cosine_counts(docs[i], docs[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        1.0
    } else {
        sum / pairs as f64
    }
}

fn query_collection_similarity(original: &[TermId], retriever: &Retriever) -> f64 {
    let bg = &retriever.corpus().collection;
    let q = query_ml(original);
    let dot: f64 = q.iter().map(|(&t, &w)| w * bg.prob(t)).sum();
    let nq = q.values().map(|w| w * w).sum::<f64>().sqrt();
    let nc = bg.probs().iter().map(|p| p * p).sum::<f64>().sqrt();
    if nq == 0.0 || nc == 0.0 {
        0.0
    } else {
        dot / (nq * nc)
    }
}

/// `(1/K) Σ_{top K} [S(q,d) - S(q,C)] / |q|`.
fn weighted_information_gain(
    view: RetrievalView<'_>,
    retriever: &Retriever,
    top: usize,
) -> Result<f64> {
    let s_c = retriever.score_collection(view.query, view.neg)?;
    let top = view.list.top(top);
    let qlen = view.original.len().max(1) as f64;
    Ok(top.iter().map(|&(_, s)| s - s_c).sum::<f64>() / (top.len() as f64 * qlen))
}

/// Overlap between the current top-K and the top-K after pseudo-relevance
/// feedback from the current top documents.
fn query_feedback(view: RetrievalView<'_>, retriever: &Retriever, cfg: &FeatureConfig) -> Result<f64> {
    let corpus = retriever.corpus();
    let k = cfg.feedback_overlap.min(corpus.len() / 10).max(1);
    let feedback: Vec<&Document> = view
        .list
        .top(cfg.feedback_docs)
        .iter()
        .map(|&(d, _)| &corpus.docs[d])
        .collect();
    let expanded = retriever.expand(view.query, &feedback)?;
    let relist = retriever.rank(&expanded, view.neg)?;
    let before: BTreeSet<usize> = view.list.top(k).iter().map(|&(d, _)| d).collect();
    let overlap = relist.top(k).iter().filter(|(d, _)| before.contains(d)).count();
    Ok(overlap as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::Corpus;
    use crate::retrieval::RetrievalParams;

    fn list(scores: &[f64]) -> RankedList {
        RankedList {
            entries: scores.iter().enumerate().map(|(i, &s)| (i, s)).collect(),
        }
    }

    #[test]
    fn raw_scores_prefix_and_padding() {
        let l = list(&[-1.0, -2.0, -5.0]);
        assert_eq!(raw_scores(&l, 2).unwrap(), vec![-1.0, -2.0]);
        assert_eq!(raw_scores(&l, 5).unwrap(), vec![-1.0, -2.0, -5.0, -5.0, -5.0]);
        assert_eq!(raw_scores(&l, 1).unwrap(), vec![-1.0]);
        assert!(matches!(raw_scores(&RankedList::default(), 3), Err(Error::EmptyList)));
    }

    fn setup(docs: &[(&str, &str)]) -> Retriever {
        let c = Arc::new(Corpus::from_texts(docs.iter().copied()).unwrap());
        Retriever::new(c, RetrievalParams::default()).unwrap()
    }

    fn features_for(r: &Retriever, query: &str) -> [f64; HANDCRAFTED] {
        let original: Vec<TermId> = crate::corpus::tokenize(query)
            .iter()
            .filter_map(|t| r.corpus().vocab.get(t))
            .collect();
        let q = QueryModel::from_terms("q", &original).unwrap();
        let neg = NegativeModel::default();
        let l = r.rank(&q, &neg).unwrap();
        let view = RetrievalView {
            query: &q,
            neg: &neg,
            original: &original,
            list: &l,
        };
        extract_handcrafted(view, r, &FeatureConfig::default()).unwrap()
    }

    #[test]
    fn clarity_and_scs_vanish_when_query_matches_collection() {
        // Identical documents make every document model, and hence the
        // relevance model, equal to the collection model.
        let r = setup(&[("d1", "a b b c"), ("d2", "a b b c"), ("d3", "a b b c")]);
        let f = features_for(&r, "a b b c");
        assert!(f[0].abs() < 1e-12, "clarity {}", f[0]);
        assert!(f[2].abs() < 1e-12, "scs {}", f[2]);
        assert!(f[5].abs() < 1e-12, "wig {}", f[5]);
        assert!((f[3] - 1.0).abs() < 1e-12, "ambiguity {}", f[3]);
    }

    #[test]
    fn scope_of_term_in_one_of_three_documents() {
        let r = setup(&[("d1", "a b"), ("d2", "b c"), ("d3", "c d")]);
        let f = features_for(&r, "a");
        assert!((f[1] - 1.098_612_288_668_109_8).abs() < 1e-12);
        // OOV-free query appearing nowhere is impossible; a term in all
        // documents has zero scope.
        let r = setup(&[("d1", "a b"), ("d2", "a c"), ("d3", "a d")]);
        assert!(features_for(&r, "a")[1].abs() < 1e-12);
    }

    #[test]
    fn predictors_are_finite_and_kl_ones_non_negative() {
        let r = setup(&[
            ("d1", "apple banana apple"),
            ("d2", "banana cherry"),
            ("d3", "engine wheel"),
            ("d4", "wheel apple brake"),
        ]);
        for q in ["apple", "wheel brake", "cherry apple engine"] {
            let f = features_for(&r, q);
            assert!(f.iter().all(|x| x.is_finite()));
            assert!(f[0] >= 0.0 && f[2] >= 0.0);
            assert!((0.0..=1.0).contains(&f[6]));
        }
    }

    #[test]
    fn projection_and_layout() {
        let full = FeatureVector {
            handcrafted: Some([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]),
            turn: 3,
            raw_scores: vec![-1.0; 100],
        };
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.dim(), 108);
        assert_eq!(full.to_vec().len(), 108);
        assert_eq!(full.to_vec()[7], 3.0);
        let raw_only = FeatureConfig {
            handcrafted: false,
            n_raw: 5,
            ..cfg
        };
        let p = raw_only.project(&full);
        assert_eq!(p.dim(), raw_only.dim());
        assert_eq!(p.to_vec(), vec![3.0, -1.0, -1.0, -1.0, -1.0, -1.0]);
        assert_eq!(raw_only.csv_header(), "t,s_1,s_2,s_3,s_4,s_5");
        assert!(cfg.csv_header().starts_with("clarity,scope,scs,ambiguity,qc_similarity,wig,query_feedback,t,s_1"));
    }
}
