use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use irdqn_core::dqn::{DqnModel, DqnPolicy, InputScaler, QNetwork};
use irdqn_core::env::{run_episode, MenuConfig, Payload, Response, User};
use irdqn_core::experiment::{make_synthetic, SynthParams, SyntheticCollection};
use irdqn_core::topics::fit_topics;
use irdqn_core::*;
use irdqn_service::{router, AppState, PolicySpec, ServiceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    env: Environment,
    synth: SyntheticCollection,
    topics: Arc<TopicModel>,
    model: DqnModel,
    features: FeatureConfig,
}

fn fixture() -> Fixture {
    let p = SynthParams {
        docs: 80,
        topics: 4,
        vocab: 300,
        doc_len: 40,
        queries: 6,
        query_pool: 20,
        ..Default::default()
    };
    let synth = make_synthetic(&p, 11).unwrap();
    let corpus = Arc::new(synth.corpus.clone());
    let topics = Arc::new(fit_topics(&corpus, 4, 20, 11).unwrap());
    let retriever = Arc::new(Retriever::new(corpus, RetrievalParams::default()).unwrap());
    let env = Environment::new(retriever, topics.clone(), RewardConfig::default(), MenuConfig::default()).unwrap();
    let features = FeatureConfig {
        n_raw: 10,
        ..FeatureConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = DqnModel {
        net: QNetwork::new(features.dim(), &[16, 16], &mut rng).unwrap(),
        scaler: InputScaler::identity(features.dim()),
        value_scale: 1.0,
    };
    Fixture {
        env,
        synth,
        topics,
        model,
        features,
    }
}

fn app_with(f: &Fixture, config: ServiceConfig) -> axum::Router {
    let mut policies = BTreeMap::new();
    policies.insert("random".to_owned(), PolicySpec::Random);
    policies.insert(
        "dqn".to_owned(),
        PolicySpec::Dqn {
            model: f.model.clone(),
            features: f.features,
        },
    );
    let judgments = Some(Arc::new(f.synth.judgments.clone()));
    router(Arc::new(AppState::new(f.env.clone(), judgments, policies, config)))
}

fn app(f: &Fixture) -> axum::Router {
    app_with(f, ServiceConfig::default())
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

fn query_text(f: &Fixture, i: usize) -> (String, String) {
    let q = &f.synth.queries[i];
    (q.qid.clone(), q.text.clone())
}

#[tokio::test]
async fn create_and_inspect() {
    let f = fixture();
    let app = app(&f);
    let (_, text) = query_text(&f, 0);
    let (st, v) = call(&app, "POST", "/sessions", Some(json!({"query": text, "policy": "dqn"}))).await;
    assert_eq!(st, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap().to_owned();
    assert!(v["action"]["type"].is_string());

    let (st, s) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s["transcript"].as_array().unwrap().len(), 1);
    assert_eq!(s["q_values"].as_array().unwrap().len(), 5);
    assert!(s.get("return").is_none());

    let (_, v) = call(&app, "POST", "/sessions", Some(json!({"query": text, "policy": "random", "seed": 1}))).await;
    let rid = v["session_id"].as_str().unwrap();
    let (_, s) = call(&app, "GET", &format!("/sessions/{rid}"), None).await;
    assert!(s.get("q_values").is_none());
}

#[tokio::test]
async fn creation_errors() {
    let f = fixture();
    let app = app(&f);
    let (st, v) = call(&app, "POST", "/sessions", Some(json!({"query": "w00001", "policy": "nope"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let (st, v) = call(&app, "POST", "/sessions", Some(json!({"query": "  ", "policy": "dqn"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(v["error"].is_string());
    // no word of the query is in the vocabulary
    let (st, _) = call(&app, "POST", "/sessions", Some(json!({"query": "zzzz", "policy": "dqn"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let req = Request::builder()
        .method("POST")
        .uri("/sessions")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, "POST", "/sessions", Some(json!({"query": "w00001", "qid": "q999"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, v) = call(&app, "GET", "/sessions/abc", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("abc"));
    let (st, _) = call(&app, "POST", "/sessions/abc/step", Some(json!({"answer": "yes"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn policies_and_documents() {
    let f = fixture();
    let app = app(&f);
    let (st, v) = call(&app, "GET", "/policies", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["policies"], json!(["dqn", "random"]));
    let (st, v) = call(&app, "GET", "/docs/d0001", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["text"], f.synth.corpus.docs[0].text);
    let (st, v) = call(&app, "GET", "/docs/d9999", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
    let (st, _) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

/// Wire form of a core response.
fn wire(r: &Response, corpus: &Corpus) -> Value {
    match r {
        Response::Document(d) => json!({ "doc": d.map(|d| corpus.docs[d].id.clone()) }),
        Response::Answer(y) => json!({ "answer": if *y { "yes" } else { "no" } }),
        Response::Term(t) => json!({ "term": t }),
        Response::Topic(z) => json!({ "topic": z }),
        Response::Acknowledge => Value::Null,
    }
}

/// Records what the simulated user answered.
struct Recording<'a> {
    inner: &'a mut SimUser,
    log: Vec<Response>,
}

impl User for Recording<'_> {
    fn respond(&mut self, state: &SessionState, payload: &Payload) -> irdqn_core::Result<Response> {
        let r = self.inner.respond(state, payload)?;
        if !matches!(payload, Payload::Final { .. }) {
            self.log.push(r.clone());
        }
        Ok(r)
    }
}

async fn drive(app: &axum::Router, f: &Fixture, qi: usize, responses: &[Response]) -> (Vec<f64>, Value) {
    let (qid, text) = query_text(f, qi);
    let (st, v) = call(app, "POST", "/sessions", Some(json!({"query": text, "policy": "dqn", "qid": qid}))).await;
    assert_eq!(st, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap().to_owned();
    for r in responses {
        let (st, v) = call(app, "POST", &format!("/sessions/{id}/step"), Some(wire(r, &f.synth.corpus))).await;
        assert_eq!(st, StatusCode::OK, "{v}");
    }
    let (_, s) = call(app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s["terminal"], json!(true));
    let rewards = s["transcript"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["reward"].as_f64().unwrap())
        .collect();
    (rewards, s)
}

#[tokio::test]
async fn scripted_client_matches_simulation() {
    let f = fixture();
    let app = app(&f);
    let corpus = Arc::new(f.synth.corpus.clone());
    let mut sim = SimUser::new(corpus, Arc::new(f.synth.judgments.clone()), &f.topics, 42);
    for qi in 0..f.synth.queries.len() {
        let q = &f.synth.queries[qi];
        let rel = f.synth.judgments.relevant(&q.qid).unwrap();
        let mut user = Recording {
            inner: &mut sim,
            log: Vec::new(),
        };
        let mut policy = DqnPolicy { model: f.model.clone() };
        let ep = run_episode(&f.env, &mut policy, &mut user, q, rel, &f.features).unwrap();
        let expected: Vec<f64> = ep.steps.iter().map(|s| s.experience.reward).collect();
        let (got, transcript) = drive(&app, &f, qi, &user.log).await;
        assert_eq!(got, expected, "query {}", q.qid);
        let actions: Vec<&str> = transcript["transcript"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["action"].as_str().unwrap())
            .collect();
        let names: Vec<&str> = ep.actions().iter().map(|a| a.name()).collect();
        assert_eq!(actions, names);
        assert!((transcript["return"].as_f64().unwrap() - ep.total_return()).abs() < 1e-12);
    }
}

#[tokio::test]
async fn interleaved_sessions_stay_separate() {
    let f = fixture();
    let app = app(&f);
    let answers = |kind: &str| match kind {
        "documents" => json!({"doc": null}),
        "keyterm" => json!({"answer": "no"}),
        "request" => json!({"term": "w00002"}),
        "topics" => json!({"topic": null}),
        other => panic!("{other}"),
    };
    let (_, text_a) = query_text(&f, 0);
    let (_, text_b) = query_text(&f, 3);
    let mut transcripts = Vec::new();
    for interleave in [false, true] {
        let mut ids = Vec::new();
        let mut kinds = Vec::new();
        for t in [&text_a, &text_b] {
            let (_, v) = call(&app, "POST", "/sessions", Some(json!({"query": t, "policy": "dqn"}))).await;
            ids.push(v["session_id"].as_str().unwrap().to_owned());
            kinds.push(v["action"]["type"].as_str().unwrap().to_owned());
        }
        let order: Vec<usize> = if interleave { vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1] } else { vec![0; 5].into_iter().chain(vec![1; 5]).collect() };
        for i in order {
            if kinds[i] == "final" {
                continue;
            }
            let (st, v) = call(&app, "POST", &format!("/sessions/{}/step", ids[i]), Some(answers(&kinds[i]))).await;
            assert_eq!(st, StatusCode::OK);
            kinds[i] = v["action"]["type"].as_str().unwrap().to_owned();
        }
        let mut both = Vec::new();
        for id in &ids {
            let (_, s) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
            both.push(s["transcript"].clone());
        }
        transcripts.push(both);
    }
    assert_eq!(transcripts[0], transcripts[1]);
}

#[tokio::test]
async fn mismatched_and_late_responses_are_rejected() {
    let f = fixture();
    let app = app(&f);
    // find a session whose first action needs an answer
    let mut found = None;
    for seed in 0..50u64 {
        let (_, text) = query_text(&f, 1);
        let (_, v) = call(&app, "POST", "/sessions", Some(json!({"query": text, "policy": "random", "seed": seed}))).await;
        if v["action"]["type"] == "keyterm" {
            found = Some(v["session_id"].as_str().unwrap().to_owned());
            break;
        }
    }
    let id = found.expect("some seed opens with a key-term question");
    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"doc": "d0007"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("`answer`"), "{v}");
    let (st, _) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"answer": "maybe"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    // the failed attempts left the session untouched
    let (_, s) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s["transcript"].as_array().unwrap().len(), 1);

    let mut v = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"answer": "yes"}))).await.1;
    while v["terminal"] != json!(true) {
        let body = match v["action"]["type"].as_str().unwrap() {
            "documents" => json!({"doc": v["action"]["docs"][0]["id"]}),
            "keyterm" => json!({"answer": "yes"}),
            "request" => json!({"term": "w00003"}),
            "topics" => json!({"topic": v["action"]["topics"][0]["id"]}),
            other => panic!("{other}"),
        };
        let (st, next) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(body)).await;
        assert_eq!(st, StatusCode::OK, "{next}");
        v = next;
    }
    assert_eq!(v["action"]["type"], "final");
    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"answer": "yes"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn idle_sessions_expire() {
    let f = fixture();
    let app = app_with(
        &f,
        ServiceConfig {
            idle_timeout: Duration::from_millis(30),
            ..Default::default()
        },
    );
    let (_, text) = query_text(&f, 0);
    let (_, v) = call(&app, "POST", "/sessions", Some(json!({"query": text, "policy": "dqn"}))).await;
    let id = v["session_id"].as_str().unwrap().to_owned();
    let (st, _) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(60)).await;
    let (st, _) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}
