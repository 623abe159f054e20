//! JSON shapes of payloads and user responses.

use irdqn_core::env::{ActionId, Payload, Response};
use irdqn_core::retrieval::RankedList;
use irdqn_core::Corpus;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::ApiError;

#[derive(Debug, Clone, Serialize)]
pub struct DocEntry {
    pub id: String,
    pub snippet: String,
    pub score: f64,
}

/// How much of each list and document the payloads carry.
#[derive(Debug, Clone, Copy)]
pub struct PayloadLimits {
    pub documents: usize,
    pub final_list: usize,
    pub snippet_words: usize,
    pub topic_terms: usize,
}

impl Default for PayloadLimits {
    fn default() -> Self {
        PayloadLimits {
            documents: 10,
            final_list: 100,
            snippet_words: 30,
            topic_terms: 8,
        }
    }
}

pub fn snippet(text: &str, words: usize) -> String {
    let mut it = text.split_whitespace();
    let head: Vec<&str> = it.by_ref().take(words).collect();
    let mut s = head.join(" ");
    if it.next().is_some() {
        s.push_str(" ...");
    }
    s
}

fn docs(list: &RankedList, n: usize, corpus: &Corpus, lim: &PayloadLimits) -> Vec<DocEntry> {
    list.top(n)
        .iter()
        .map(|&(d, score)| DocEntry {
            id: corpus.docs[d].id.clone(),
            snippet: snippet(&corpus.docs[d].text, lim.snippet_words),
            score,
        })
        .collect()
}

pub fn payload_json(
    payload: &Payload,
    corpus: &Corpus,
    topics: &irdqn_core::TopicModel,
    lim: &PayloadLimits,
) -> Value {
    match payload {
        Payload::Documents { list } => json!({
            "type": "documents",
            "docs": docs(list, lim.documents, corpus, lim),
        }),
        Payload::KeyTerm { term } => json!({
            "type": "keyterm",
            "term": term.map(|t| corpus.vocab.term(t)),
        }),
        Payload::Request { prompt } => json!({ "type": "request", "prompt": prompt }),
        Payload::Topics { topics: offered } => {
            let cards: Vec<Value> = offered
                .iter()
                .map(|&z| {
                    let terms: Vec<&str> = topics
                        .top_terms(z, lim.topic_terms)
                        .into_iter()
                        .map(|t| corpus.vocab.term(t))
                        .collect();
                    json!({ "id": z, "top_terms": terms })
                })
                .collect();
            json!({ "type": "topics", "topics": cards })
        }
        Payload::Final { list } => json!({
            "type": "final",
            "docs": docs(list, lim.final_list, corpus, lim),
        }),
    }
}

/// Wire key of the response each action expects.
pub fn expected_key(action: ActionId) -> &'static str {
    match action {
        ActionId::ReturnDocuments => "doc",
        ActionId::ReturnKeyTerm => "answer",
        ActionId::ReturnRequest => "term",
        ActionId::ReturnTopic => "topic",
        ActionId::ShowList => "none",
    }
}

fn mismatch(action: ActionId) -> ApiError {
    let example = match action {
        ActionId::ReturnDocuments => r#"{"doc": "<doc id>"} or {"doc": null}"#,
        ActionId::ReturnKeyTerm => r#"{"answer": "yes"} or {"answer": "no"}"#,
        ActionId::ReturnRequest => r#"{"term": "<text>"} or {"term": null}"#,
        ActionId::ReturnTopic => r#"{"topic": <id>} or {"topic": null}"#,
        ActionId::ShowList => "no response",
    };
    ApiError::bad_request(format!(
        "pending {} action expects a `{}` response: {example}",
        action.name(),
        expected_key(action)
    ))
}

/// Parses a response body against the pending action.
pub fn parse_response(body: &Value, action: ActionId, corpus: &Corpus, offered: &[usize]) -> Result<Response, ApiError> {
    let obj: &Map<String, Value> = body
        .as_object()
        .ok_or_else(|| ApiError::bad_request("response body must be a JSON object"))?;
    let key = expected_key(action);
    if obj.len() != 1 || !obj.contains_key(key) {
        return Err(mismatch(action));
    }
    let v = &obj[key];
    match action {
        ActionId::ReturnDocuments => match v {
            Value::Null => Ok(Response::Document(None)),
            Value::String(id) => corpus
                .doc_index(id)
                .map(|d| Response::Document(Some(d)))
                .ok_or_else(|| ApiError::bad_request(format!("unknown document `{id}`"))),
            _ => Err(mismatch(action)),
        },
        ActionId::ReturnKeyTerm => match v.as_str() {
            Some("yes") => Ok(Response::Answer(true)),
            Some("no") => Ok(Response::Answer(false)),
            _ => Err(mismatch(action)),
        },
        ActionId::ReturnRequest => match v {
            Value::Null => Ok(Response::Term(None)),
            Value::String(s) if s.trim().is_empty() => Ok(Response::Term(None)),
            Value::String(s) => Ok(Response::Term(Some(s.trim().to_owned()))),
            _ => Err(mismatch(action)),
        },
        ActionId::ReturnTopic => match v {
            Value::Null => Ok(Response::Topic(None)),
            Value::Number(n) => {
                let z = n
                    .as_u64()
                    .map(|z| z as usize)
                    .filter(|z| offered.contains(z))
                    .ok_or_else(|| ApiError::bad_request(format!("topic {n} was not offered; choose one of {offered:?}")))?;
                Ok(Response::Topic(Some(z)))
            }
            _ => Err(mismatch(action)),
        },
        ActionId::ShowList => Err(mismatch(action)),
    }
}

/// Wire form of a response, for transcripts.
pub fn response_json(r: &Response, corpus: &Corpus) -> Value {
    match r {
        Response::Document(d) => json!({ "doc": d.map(|d| corpus.docs[d].id.as_str()) }),
        Response::Answer(yes) => json!({ "answer": if *yes { "yes" } else { "no" } }),
        Response::Term(t) => json!({ "term": t }),
        Response::Topic(z) => json!({ "topic": z }),
        Response::Acknowledge => Value::Null,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snippets_truncate() {
        assert_eq!(snippet("a b c", 5), "a b c");
        assert_eq!(snippet("a b c d", 2), "a b ...");
    }
}
