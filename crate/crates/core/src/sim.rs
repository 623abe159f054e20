//! Step-wise simulators over the environment and a simulated user.
//!
//! With a seeded simulated user the session is a deterministic function of
//! the path of (action, response) pairs taken from the first-pass state, so
//! every visited state can be memoized. [`CachedSim`] stores that tree and
//! makes repeated episodes over the same queries cheap; [`LiveSim`] runs the
//! environment directly.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::Query;
use crate::env::{ActionId, Environment, Episode, EpisodeStep, Experience, Policy, Response, SessionState, User};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureVector};
use crate::user_sim::SimUser;

/// Outcome of one simulated step, with the observation already projected.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStep {
    pub action: ActionId,
    pub reward: f64,
    pub next: FeatureVector,
    pub terminal: bool,
    pub ap_before: f64,
    pub ap_after: f64,
}

pub trait Simulator {
    /// Starts a session for `qid`; `seed` drives the user's random choices.
    fn reset(&mut self, qid: &str, seed: u64) -> Result<FeatureVector>;
    fn step(&mut self, action: ActionId) -> Result<SimStep>;
    fn observation(&self) -> &FeatureConfig;
    fn set_observation(&mut self, cfg: FeatureConfig) -> Result<()>;
}

/// Runs a whole episode through a simulator.
pub fn simulate_episode(
    sim: &mut dyn Simulator,
    policy: &mut dyn Policy,
    qid: &str,
    seed: u64,
) -> Result<Episode> {
    let mut obs = sim.reset(qid, seed)?;
    let mut steps = Vec::new();
    loop {
        let action = policy.act(&obs)?;
        let s = sim.step(action)?;
        steps.push(EpisodeStep {
            turn: obs.turn,
            experience: Experience {
                state: obs.to_vec(),
                action: s.action,
                reward: s.reward,
                next: s.next.to_vec(),
                terminal: s.terminal,
            },
            ap_before: s.ap_before,
            ap_after: s.ap_after,
        });
        if s.terminal {
            break;
        }
        obs = s.next;
    }
    Ok(Episode {
        qid: qid.to_owned(),
        steps,
    })
}

fn query_map(queries: &[Query]) -> BTreeMap<String, Query> {
    queries.iter().map(|q| (q.qid.clone(), q.clone())).collect()
}

/// Drives the environment directly, extracting features at every step.
#[derive(Debug, Clone)]
pub struct LiveSim {
    env: Environment,
    user: SimUser,
    queries: BTreeMap<String, Query>,
    cfg: FeatureConfig,
    current: Option<SessionState>,
}

impl LiveSim {
    pub fn new(env: Environment, user: SimUser, queries: &[Query], cfg: FeatureConfig) -> Self {
        LiveSim {
            env,
            user,
            queries: query_map(queries),
            cfg,
            current: None,
        }
    }
}

impl Simulator for LiveSim {
    fn reset(&mut self, qid: &str, seed: u64) -> Result<FeatureVector> {
        let q = self
            .queries
            .get(qid)
            .ok_or_else(|| Error::UnknownQuery(qid.to_owned()))?;
        self.user = self.user.with_seed(seed);
        let state = self.env.start(q)?;
        let obs = self.env.features(&state, &self.cfg)?;
        self.current = Some(state);
        Ok(obs)
    }

    fn step(&mut self, action: ActionId) -> Result<SimStep> {
        let state = self.current.as_ref().ok_or(Error::Terminal)?;
        let action = self.env.effective_action(state, action);
        let payload = self.env.propose(state, action)?;
        let response = self.user.respond(state, &payload)?;
        let rel = self.user.relevant(&state.qid)?;
        let step = self.env.transition(state, action, &response, Some(rel))?;
        let next = self.env.features(&step.next, &self.cfg)?;
        self.current = (!step.terminal).then_some(step.next);
        Ok(SimStep {
            action: step.action,
            reward: step.reward.unwrap_or_default(),
            next,
            terminal: step.terminal,
            ap_before: step.ap_before.unwrap_or_default(),
            ap_after: step.ap_after.unwrap_or_default(),
        })
    }

    fn observation(&self) -> &FeatureConfig {
        &self.cfg
    }

    fn set_observation(&mut self, cfg: FeatureConfig) -> Result<()> {
        self.cfg = cfg;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Node {
    qid: String,
    turn: usize,
    /// Features under the cache's full configuration.
    features: FeatureVector,
    ap: f64,
    terminal: bool,
    /// Kept only while actions other than Show List remain possible.
    state: Option<SessionState>,
}

/// Memoized simulator. Features are extracted once per state under a full
/// configuration and projected to the observation configuration on demand,
/// so one cache serves every narrower feature set.
#[derive(Debug, Clone)]
pub struct CachedSim {
    env: Environment,
    user: SimUser,
    queries: BTreeMap<String, Query>,
    full: FeatureConfig,
    cfg: FeatureConfig,
    nodes: Vec<Node>,
    roots: HashMap<String, usize>,
    /// Responses that do not depend on the user's seed.
    fixed_responses: HashMap<(usize, ActionId), Response>,
    edges: HashMap<(usize, ActionId, Response), (usize, f64)>,
    cursor: Option<(usize, u64)>,
}

impl CachedSim {
    /// `full` must cover every observation configuration used later: all
    /// predictors on and the largest N.
    pub fn new(env: Environment, user: SimUser, queries: &[Query], full: FeatureConfig) -> Self {
        CachedSim {
            env,
            user,
            queries: query_map(queries),
            cfg: full,
            full,
            nodes: Vec::new(),
            roots: HashMap::new(),
            fixed_responses: HashMap::new(),
            edges: HashMap::new(),
            cursor: None,
        }
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn user(&self) -> &SimUser {
        &self.user
    }

    /// Number of distinct states visited so far.
    pub fn cached_states(&self) -> usize {
        self.nodes.len()
    }

    /// AP of the first-pass ranking of a query.
    pub fn first_pass_ap(&mut self, qid: &str) -> Result<f64> {
        let root = self.root(qid)?;
        Ok(self.nodes[root].ap)
    }

    fn push(&mut self, qid: &str, state: SessionState, ap: f64) -> Result<usize> {
        let features = self.env.features(&state, &self.full)?;
        let keep = !state.terminal && state.turn + 1 < self.env.reward_config().t_max;
        self.nodes.push(Node {
            qid: qid.to_owned(),
            turn: state.turn,
            features,
            ap,
            terminal: state.terminal,
            state: keep.then_some(state),
        });
        Ok(self.nodes.len() - 1)
    }

    fn root(&mut self, qid: &str) -> Result<usize> {
        if let Some(&r) = self.roots.get(qid) {
            return Ok(r);
        }
        let q = self
            .queries
            .get(qid)
            .ok_or_else(|| Error::UnknownQuery(qid.to_owned()))?
            .clone();
        let rel = self.user.relevant(qid)?;
        let state = self.env.start(&q)?;
        let ap = crate::env::average_precision(&state.ranked, rel)?;
        let r = self.push(qid, state, ap)?;
        self.roots.insert(qid.to_owned(), r);
        Ok(r)
    }

    fn response(&mut self, node: usize, action: ActionId, seed: u64) -> Result<Response> {
        if action == ActionId::ShowList {
            return Ok(Response::Acknowledge);
        }
        if action != ActionId::ReturnTopic {
            if let Some(r) = self.fixed_responses.get(&(node, action)) {
                return Ok(r.clone());
            }
        }
        let state = self.nodes[node].state.as_ref().ok_or(Error::Terminal)?;
        let payload = self.env.propose(state, action)?;
        let r = self.user.with_seed(seed).respond(state, &payload)?;
        if action != ActionId::ReturnTopic {
            self.fixed_responses.insert((node, action), r.clone());
        }
        Ok(r)
    }

    /// Child of `node` under `action`, creating it if needed. Returns the
    /// child index, the action actually applied, and the step reward.
    fn child(&mut self, node: usize, action: ActionId, seed: u64) -> Result<(usize, ActionId, f64)> {
        let n = &self.nodes[node];
        if n.terminal {
            return Err(Error::Terminal);
        }
        let action = if n.turn + 1 >= self.env.reward_config().t_max {
            ActionId::ShowList
        } else {
            action
        };
        let response = self.response(node, action, seed)?;
        let key = (node, action, response);
        if let Some(&(c, r)) = self.edges.get(&key) {
            return Ok((c, action, r));
        }
        let (child, reward) = if action == ActionId::ShowList {
            // Show List leaves the models alone: same list, next turn.
            let n = &self.nodes[node];
            let mut features = n.features.clone();
            features.turn += 1;
            let leaf = Node {
                qid: n.qid.clone(),
                turn: n.turn + 1,
                features,
                ap: n.ap,
                terminal: true,
                state: None,
            };
            self.nodes.push(leaf);
            (self.nodes.len() - 1, 0.0)
        } else {
            let n = &self.nodes[node];
            let qid = n.qid.clone();
            let state = n.state.as_ref().ok_or(Error::Terminal)?;
            let rel = self.user.relevant(&qid)?;
            let step = self.env.transition(state, action, &key.2, Some(rel))?;
            let ap = step.ap_after.unwrap_or_default();
            let reward = step.reward.unwrap_or_default();
            (self.push(&qid, step.next, ap)?, reward)
        };
        self.edges.insert(key, (child, reward));
        Ok((child, action, reward))
    }
}

impl Simulator for CachedSim {
    fn reset(&mut self, qid: &str, seed: u64) -> Result<FeatureVector> {
        let r = self.root(qid)?;
        self.cursor = Some((r, seed));
        Ok(self.cfg.project(&self.nodes[r].features))
    }

    fn step(&mut self, action: ActionId) -> Result<SimStep> {
        let (node, seed) = self.cursor.ok_or(Error::Terminal)?;
        let (c, action, reward) = self.child(node, action, seed)?;
        let child = &self.nodes[c];
        let out = SimStep {
            action,
            reward,
            next: self.cfg.project(&child.features),
            terminal: child.terminal,
            ap_before: self.nodes[node].ap,
            ap_after: child.ap,
        };
        self.cursor = (!out.terminal).then_some((c, seed));
        Ok(out)
    }

    fn observation(&self) -> &FeatureConfig {
        &self.cfg
    }

    fn set_observation(&mut self, cfg: FeatureConfig) -> Result<()> {
        if cfg.n_raw > self.full.n_raw || (cfg.handcrafted && !self.full.handcrafted) || cfg.n_raw == 0 {
            return Err(Error::invalid(format!(
                "observation (N = {}, handcrafted = {}) is not covered by the cache (N = {}, handcrafted = {})",
                cfg.n_raw, cfg.handcrafted, self.full.n_raw, self.full.handcrafted
            )));
        }
        self.cfg = cfg;
        Ok(())
    }
}
