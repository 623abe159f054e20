//! Interactive retrieval as a Markov decision process.
//!
//! A KL-divergence language-model search engine is wrapped in a dialogue
//! loop whose actions ask the user for feedback. Policies choose among
//! those actions: a deep Q-network trained from replayed experience, a
//! hand-crafted two-stage baseline, a random policy, and an exhaustive
//! oracle.

pub mod baselines;
pub mod corpus;
pub mod dqn;
pub mod env;
pub mod error;
pub mod experiment;
pub mod features;
pub mod retrieval;
pub mod sim;
pub mod topics;
pub mod user_sim;

pub use corpus::{Corpus, Document, JudgmentSet, Query, TermId};
pub use env::{ActionId, Environment, Episode, Experience, Payload, Policy, Response, RewardConfig, SessionState, User};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureVector};
pub use retrieval::{NegativeModel, QueryModel, RankedList, RetrievalParams, Retriever};
pub use topics::TopicModel;
pub use user_sim::SimUser;
