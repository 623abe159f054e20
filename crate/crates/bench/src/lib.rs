//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use irdqn_core::env::MenuConfig;
use irdqn_core::experiment::{make_synthetic, SynthParams};
use irdqn_core::topics::fit_topics;
use irdqn_core::{Environment, Query, RetrievalParams, Retriever, RewardConfig, SessionState};

pub struct Fixture {
    pub env: Environment,
    pub queries: Vec<Query>,
}

impl Fixture {
    /// The default synthetic collection with a 10-topic model.
    pub fn new() -> Self {
        let s = make_synthetic(&SynthParams::default(), 7).expect("synthetic collection");
        let corpus = Arc::new(s.corpus);
        let topics = Arc::new(fit_topics(&corpus, 10, 20, 7).expect("topics"));
        let retriever = Arc::new(Retriever::new(corpus, RetrievalParams::default()).expect("retriever"));
        let env = Environment::new(retriever, topics, RewardConfig::default(), MenuConfig::default()).expect("environment");
        Fixture { env, queries: s.queries }
    }

    pub fn start(&self, i: usize) -> SessionState {
        self.env.start(&self.queries[i % self.queries.len()]).expect("first pass")
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
