//! The interactive retrieval MDP.
//!
//! A session starts from a first-pass ranking of the user's query. Each turn
//! the system takes one of five actions; the four interactive ones ask the
//! user something and fold the answer back into the query or negative model,
//! after which the collection is re-ranked. Show List ends the session. The
//! reward of the action taken at turn `k` is
//!
//! ```text
//! r_k = -C_k + τ · [AP(s_k) - AP(s_{k-1})]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Query, TermId};
use crate::error::{Error, Result};
use crate::features::{self, FeatureConfig, FeatureVector, RetrievalView};
use crate::retrieval::{self, NegativeModel, QueryModel, RankedList, Retriever};
use crate::topics::TopicModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionId {
    ReturnDocuments,
    ReturnKeyTerm,
    ReturnRequest,
    ReturnTopic,
    ShowList,
}

impl ActionId {
    pub const COUNT: usize = 5;

    pub const ALL: [ActionId; 5] = [
        ActionId::ReturnDocuments,
        ActionId::ReturnKeyTerm,
        ActionId::ReturnRequest,
        ActionId::ReturnTopic,
        ActionId::ShowList,
    ];

    /// Every action except Show List.
    pub const INTERACTIVE: [ActionId; 4] = [
        ActionId::ReturnDocuments,
        ActionId::ReturnKeyTerm,
        ActionId::ReturnRequest,
        ActionId::ReturnTopic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionId> {
        Self::ALL.get(i).copied()
    }

    pub fn is_terminal(self) -> bool {
        self == ActionId::ShowList
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionId::ReturnDocuments => "ReturnDocuments",
            ActionId::ReturnKeyTerm => "ReturnKeyTerm",
            ActionId::ReturnRequest => "ReturnRequest",
            ActionId::ReturnTopic => "ReturnTopic",
            ActionId::ShowList => "ShowList",
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionCosts {
    pub documents: f64,
    pub key_term: f64,
    pub request: f64,
    pub topic: f64,
}

impl Default for ActionCosts {
    fn default() -> Self {
        ActionCosts {
            documents: 30.0,
            key_term: 10.0,
            request: 50.0,
            topic: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Trade-off between user effort and retrieval gain.
    pub tau: f64,
    pub costs: ActionCosts,
    /// Episode length cap; the last allowed step is always Show List.
    pub t_max: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            tau: 1000.0,
            costs: ActionCosts::default(),
            t_max: 5,
        }
    }
}

impl RewardConfig {
    pub fn cost(&self, action: ActionId) -> f64 {
        match action {
            ActionId::ReturnDocuments => self.costs.documents,
            ActionId::ReturnKeyTerm => self.costs.key_term,
            ActionId::ReturnRequest => self.costs.request,
            ActionId::ReturnTopic => self.costs.topic,
            ActionId::ShowList => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        let c = &self.costs;
        if [c.documents, c.key_term, c.request, c.topic].iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::invalid("action costs must be non-negative"));
        }
        if self.t_max == 0 {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MenuConfig {
    /// Top documents mined for the key term t*.
    pub key_term_docs: usize,
    /// Topics offered by Return Topic.
    pub topics_offered: usize,
    /// Top documents whose topic mass ranks the offered topics.
    pub topic_docs: usize,
}

impl Default for MenuConfig {
    fn default() -> Self {
        MenuConfig {
            key_term_docs: 10,
            topics_offered: 5,
            topic_docs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub qid: String,
    /// In-vocabulary tokens of the query as entered.
    pub original: Vec<TermId>,
    pub query: QueryModel,
    pub neg: NegativeModel,
    pub ranked: RankedList,
    pub turn: usize,
    pub asked_terms: BTreeSet<TermId>,
    pub terminal: bool,
}

impl SessionState {
    pub fn view(&self) -> RetrievalView<'_> {
        RetrievalView {
            query: &self.query,
            neg: &self.neg,
            original: &self.original,
            list: &self.ranked,
        }
    }
}

/// What the system shows or asks.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Documents { list: RankedList },
    /// `None` when no candidate term remains; any answer is then a no-op.
    KeyTerm { term: Option<TermId> },
    Request { prompt: String },
    Topics { topics: Vec<usize> },
    Final { list: RankedList },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Documents { .. } => "documents",
            Payload::KeyTerm { .. } => "keyterm",
            Payload::Request { .. } => "request",
            Payload::Topics { .. } => "topics",
            Payload::Final { .. } => "final",
        }
    }
}

/// The user's answer. `None` inside a variant means "none of these" or a
/// refusal: the models stay unchanged but the action's cost is still paid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Response {
    Document(Option<usize>),
    Answer(bool),
    Term(Option<String>),
    Topic(Option<usize>),
    Acknowledge,
}

impl Response {
    pub fn kind(&self) -> &'static str {
        match self {
            Response::Document(_) => "document",
            Response::Answer(_) => "answer",
            Response::Term(_) => "term",
            Response::Topic(_) => "topic",
            Response::Acknowledge => "acknowledge",
        }
    }
}

fn expected_response(action: ActionId) -> &'static str {
    match action {
        ActionId::ReturnDocuments => "document",
        ActionId::ReturnKeyTerm => "answer",
        ActionId::ReturnRequest => "term",
        ActionId::ReturnTopic => "topic",
        ActionId::ShowList => "acknowledge",
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    /// The action actually applied (Show List when the cap forced it).
    pub action: ActionId,
    pub payload: Payload,
    pub next: SessionState,
    /// Present when judgments were supplied.
    pub reward: Option<f64>,
    pub ap_before: Option<f64>,
    pub ap_after: Option<f64>,
    pub terminal: bool,
}

/// AP of the full list: mean over relevant documents of precision at each
/// relevant rank. Relevant documents missing from the list contribute 0.
pub fn average_precision(list: &RankedList, relevant: &BTreeSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevantSet);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    let mut exact = Some((0i128, 1i128));
    for (i, d) in list.docs().enumerate() {
        if relevant.contains(&d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
            exact = exact.and_then(|(n, m)| add_fraction(n, m, hits as i128, (i + 1) as i128));
        }
    }
    let r = relevant.len() as i128;
    // the rational sum rounds once; large lists fall back to the float sum
    Ok(match exact.and_then(|(n, m)| Some((n, m.checked_mul(r)?))) {
        Some((n, m)) if n.unsigned_abs() < 1 << 53 && m.unsigned_abs() < 1 << 53 => n as f64 / m as f64,
        _ => sum / relevant.len() as f64,
    })
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

/// `n/m + p/q` in lowest terms, or `None` on overflow.
fn add_fraction(n: i128, m: i128, p: i128, q: i128) -> Option<(i128, i128)> {
    let g = gcd(m, q);
    let num = n.checked_mul(q / g)?.checked_add(p.checked_mul(m / g)?)?;
    let den = (m / g).checked_mul(q)?;
    let h = gcd(num, den).max(1);
    Some((num / h, den / h))
}

/// Holds the immutable retrieval machinery and applies actions to sessions.
#[derive(Debug, Clone)]
pub struct Environment {
    retriever: Arc<Retriever>,
    topics: Arc<TopicModel>,
    reward: RewardConfig,
    menu: MenuConfig,
}

impl Environment {
    pub fn new(
        retriever: Arc<Retriever>,
        topics: Arc<TopicModel>,
        reward: RewardConfig,
        menu: MenuConfig,
    ) -> Result<Self> {
        reward.validate()?;
        if topics.doc_topic.len() != retriever.corpus().len() {
            return Err(Error::invalid("topic model does not match the corpus"));
        }
        Ok(Environment {
            retriever,
            topics,
            reward,
            menu,
        })
    }

    pub fn retriever(&self) -> &Arc<Retriever> {
        &self.retriever
    }

    pub fn topics(&self) -> &Arc<TopicModel> {
        &self.topics
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn menu(&self) -> &MenuConfig {
        &self.menu
    }

    /// First-pass retrieval for a query.
    pub fn start(&self, query: &Query) -> Result<SessionState> {
        let original = self.retriever.query_terms(query);
        self.start_terms(&query.qid, original)
    }

    pub fn start_terms(&self, qid: &str, original: Vec<TermId>) -> Result<SessionState> {
        let query = QueryModel::from_terms(qid, &original)?;
        let neg = NegativeModel::default();
        let ranked = self.retriever.rank(&query, &neg)?;
        Ok(SessionState {
            qid: qid.to_owned(),
            original,
            query,
            neg,
            ranked,
            turn: 0,
            asked_terms: BTreeSet::new(),
            terminal: false,
        })
    }

    pub fn features(&self, state: &SessionState, cfg: &FeatureConfig) -> Result<FeatureVector> {
        features::extract(state.view(), state.turn, &self.retriever, cfg)
    }

    /// Show List is forced on the last step the cap allows.
    pub fn effective_action(&self, state: &SessionState, action: ActionId) -> ActionId {
        if state.turn + 1 >= self.reward.t_max {
            ActionId::ShowList
        } else {
            action
        }
    }

    pub fn propose(&self, state: &SessionState, action: ActionId) -> Result<Payload> {
        if state.terminal {
            return Err(Error::Terminal);
        }
        Ok(match action {
            ActionId::ReturnDocuments => Payload::Documents {
                list: state.ranked.clone(),
            },
            ActionId::ReturnKeyTerm => Payload::KeyTerm {
                term: self.key_term_candidate(state),
            },
            ActionId::ReturnRequest => Payload::Request {
                prompt: "Please provide an additional query term.".into(),
            },
            ActionId::ReturnTopic => Payload::Topics {
                topics: self.topic_menu(state),
            },
            ActionId::ShowList => Payload::Final {
                list: state.ranked.clone(),
            },
        })
    }

    /// Highest TF-IDF term over the top documents that is not already part
    /// of the query, rejected, or asked before. Ties go to the
    /// lexicographically smaller term.
    pub fn key_term_candidate(&self, state: &SessionState) -> Option<TermId> {
        let corpus = self.retriever.corpus();
        let mut tf: BTreeMap<TermId, f64> = BTreeMap::new();
        for (d, _) in state.ranked.top(self.menu.key_term_docs) {
            for &(t, c) in &corpus.docs[*d].counts {
                *tf.entry(t).or_default() += c as f64;
            }
        }
        tf.into_iter()
            .filter(|(t, _)| {
                !state.query.key_terms.contains(t)
                    && !state.neg.terms.contains(t)
                    && !state.asked_terms.contains(t)
            })
            .map(|(t, c)| (t, c * corpus.idf(t)))
            .max_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then_with(|| corpus.vocab.term(b.0).cmp(corpus.vocab.term(a.0)))
            })
            .map(|(t, _)| t)
    }

    /// Topics ordered by their total P(z|d) over the top documents.
    pub fn topic_menu(&self, state: &SessionState) -> Vec<usize> {
        let k = self.topics.num_topics();
        let mut mass = vec![0.0; k];
        for (d, _) in state.ranked.top(self.menu.topic_docs) {
            for (z, p) in self.topics.doc_topic[*d].iter().enumerate() {
                mass[z] += p;
            }
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
        order.truncate(self.menu.topics_offered);
        order
    }

    /// Applies `action` with the user's `response`, re-ranks, advances the
    /// turn, and scores the step when `relevant` is given.
    pub fn transition(
        &self,
        state: &SessionState,
        action: ActionId,
        response: &Response,
        relevant: Option<&BTreeSet<usize>>,
    ) -> Result<StepResult> {
        if state.terminal {
            return Err(Error::Terminal);
        }
        let action = self.effective_action(state, action);
        let payload = self.propose(state, action)?;
        let mismatch = || Error::ResponseMismatch {
            action,
            expected: expected_response(action),
        };
        let corpus = self.retriever.corpus();
        let params = self.retriever.params();

        let mut next = state.clone();
        let mut changed = false;
        match (&payload, response) {
            (Payload::Final { .. }, _) => {}
            (Payload::Documents { .. }, Response::Document(choice)) => {
                if let Some(d) = *choice {
                    let doc = corpus
                        .docs
                        .get(d)
                        .ok_or_else(|| Error::UnknownDocument(format!("#{d}")))?;
                    next.query = self.retriever.expand(&state.query, &[doc])?;
                    changed = true;
                }
            }
            (Payload::KeyTerm { term }, Response::Answer(yes)) => {
                if let Some(t) = *term {
                    next.asked_terms.insert(t);
                    if *yes {
                        next.query = retrieval::add_key_term(&state.query, t, params.key_term_weight)?;
                    } else {
                        next.neg = retrieval::update_negative(&state.neg, t);
                    }
                    changed = true;
                }
            }
            (Payload::Request { .. }, Response::Term(text)) => {
                let terms: Vec<TermId> = text
                    .as_deref()
                    .map(|s| {
                        crate::corpus::tokenize(s)
                            .iter()
                            .filter_map(|t| corpus.vocab.get(t))
                            .collect()
                    })
                    .unwrap_or_default();
                for t in terms {
                    next.query = retrieval::add_key_term(&next.query, t, params.key_term_weight)?;
                    changed = true;
                }
            }
            (Payload::Topics { .. }, Response::Topic(choice)) => {
                if let Some(z) = *choice {
                    let dist = self.topics.topic_dist(z)?;
                    next.query = retrieval::interpolate_topic(&state.query, &dist, params.topic_weight)?;
                    changed = true;
                }
            }
            _ => return Err(mismatch()),
        }

        if changed {
            next.ranked = self.retriever.rank(&next.query, &next.neg)?;
        }
        next.turn += 1;
        next.terminal = action.is_terminal() || next.turn >= self.reward.t_max;

        let (reward, ap_before, ap_after) = match relevant {
            Some(rel) => {
                let before = average_precision(&state.ranked, rel)?;
                let after = if changed {
                    average_precision(&next.ranked, rel)?
                } else {
                    before
                };
                let r = -self.reward.cost(action) + self.reward.tau * (after - before);
                (Some(r), Some(before), Some(after))
            }
            None => (None, None, None),
        };
        Ok(StepResult {
            action,
            payload,
            terminal: next.terminal,
            next,
            reward,
            ap_before,
            ap_after,
        })
    }
}

pub trait Policy {
    fn act(&mut self, features: &FeatureVector) -> Result<ActionId>;

    /// Current action values, for policies that have them.
    fn q_values(&self, _features: &FeatureVector) -> Option<[f64; ActionId::COUNT]> {
        None
    }
}

pub trait User {
    fn respond(&mut self, state: &SessionState, payload: &Payload) -> Result<Response>;
}

/// One replayable transition. States are feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: ActionId,
    pub reward: f64,
    pub next: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub turn: usize,
    pub experience: Experience,
    pub ap_before: f64,
    pub ap_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub qid: String,
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    /// Undiscounted return `Σ r_k`.
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.experience.reward).sum()
    }

    pub fn initial_ap(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.ap_before)
    }

    pub fn final_ap(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.ap_after)
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.steps.iter().map(|s| s.experience.action).collect()
    }

    pub fn records(&self) -> Vec<TrajectoryRecord> {
        self.steps
            .iter()
            .map(|s| TrajectoryRecord {
                qid: self.qid.clone(),
                k: s.turn,
                action: s.experience.action,
                reward: s.experience.reward,
                ap_before: s.ap_before,
                ap_after: s.ap_after,
                terminal: s.experience.terminal,
            })
            .collect()
    }
}

/// One JSON line of an exported trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub qid: String,
    pub k: usize,
    pub action: ActionId,
    pub reward: f64,
    pub ap_before: f64,
    pub ap_after: f64,
    pub terminal: bool,
}

/// Runs one session to its end: propose, respond, transition, until the
/// policy shows the list or the cap forces it.
pub fn run_episode(
    env: &Environment,
    policy: &mut dyn Policy,
    user: &mut dyn User,
    query: &Query,
    relevant: &BTreeSet<usize>,
    features: &FeatureConfig,
) -> Result<Episode> {
    let mut state = env.start(query)?;
    let mut obs = env.features(&state, features)?;
    let mut steps = Vec::new();
    while !state.terminal {
        let chosen = policy.act(&obs)?;
        let action = env.effective_action(&state, chosen);
        let payload = env.propose(&state, action)?;
        let response = user.respond(&state, &payload)?;
        let step = env.transition(&state, action, &response, Some(relevant))?;
        let next_obs = env.features(&step.next, features)?;
        steps.push(EpisodeStep {
            turn: state.turn,
            experience: Experience {
                state: obs.to_vec(),
                action: step.action,
                reward: step.reward.unwrap_or_default(),
                next: next_obs.to_vec(),
                terminal: step.terminal,
            },
            ap_before: step.ap_before.unwrap_or_default(),
            ap_after: step.ap_after.unwrap_or_default(),
        });
        state = step.next;
        obs = next_obs;
    }
    Ok(Episode {
        qid: query.qid.clone(),
        steps,
    })
}

/// Replays a fixed list of actions, then Show List.
#[derive(Debug, Clone)]
pub struct FixedSequence {
    actions: Vec<ActionId>,
    pos: usize,
}

impl FixedSequence {
    pub fn new(actions: Vec<ActionId>) -> Self {
        FixedSequence { actions, pos: 0 }
    }
}

impl Policy for FixedSequence {
    fn act(&mut self, _features: &FeatureVector) -> Result<ActionId> {
        let a = self.actions.get(self.pos).copied().unwrap_or(ActionId::ShowList);
        self.pos += 1;
        Ok(a)
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub ActionId);

impl Policy for ConstantPolicy {
    fn act(&mut self, _features: &FeatureVector) -> Result<ActionId> {
        Ok(self.0)
    }
}

/// Replays scripted responses in order; used to drive sessions by hand.
#[derive(Debug, Clone)]
pub struct ScriptedUser {
    responses: std::collections::VecDeque<Response>,
}

impl ScriptedUser {
    pub fn new(responses: impl IntoIterator<Item = Response>) -> Self {
        ScriptedUser {
            responses: responses.into_iter().collect(),
        }
    }
}

impl User for ScriptedUser {
    fn respond(&mut self, _state: &SessionState, payload: &Payload) -> Result<Response> {
        if let Payload::Final { .. } = payload {
            return Ok(Response::Acknowledge);
        }
        self.responses
            .pop_front()
            .ok_or_else(|| Error::invalid("scripted user ran out of responses"))
    }
}
