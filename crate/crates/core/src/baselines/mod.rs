//! Comparison policies: uniform random, the two-stage hand-crafted
//! baseline (AP state estimation followed by fitted value iteration), and
//! the exhaustive oracle.

mod fvi;
mod regressor;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use fvi::{fvi_train, FviConfig, FviOutcome, GBasisQ, ScalarExperience};
pub use regressor::{fit_ap_regressor, APRegressor};

use crate::dqn::argmax;
use crate::env::{ActionId, FixedSequence, Policy};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureVector};
use crate::sim::{simulate_episode, Simulator};

pub fn random_action(rng: &mut impl Rng) -> ActionId {
    ActionId::ALL[rng.random_range(0..ActionId::COUNT)]
}

/// Uniform over all five actions, Show List included.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _features: &FeatureVector) -> Result<ActionId> {
        Ok(random_action(&mut self.rng))
    }
}

/// Estimate AP from features, then act greedily on the Gaussian-basis Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandcraftedPolicy {
    pub regressor: APRegressor,
    pub q: GBasisQ,
}

impl HandcraftedPolicy {
    pub fn estimate(&self, features: &FeatureVector) -> f64 {
        self.regressor.predict(&features.to_vec())
    }
}

impl Policy for HandcraftedPolicy {
    fn act(&mut self, features: &FeatureVector) -> Result<ActionId> {
        Ok(handcrafted_action(&self.regressor, &self.q, features))
    }

    fn q_values(&self, features: &FeatureVector) -> Option<[f64; ActionId::COUNT]> {
        Some(self.q.q_all(self.estimate(features)))
    }
}

/// `argmax_a Q(ŝ, a)` with `ŝ` the estimated AP; ties to the lowest index.
pub fn handcrafted_action(regressor: &APRegressor, q: &GBasisQ, features: &FeatureVector) -> ActionId {
    let s = regressor.predict(&features.to_vec());
    ActionId::ALL[argmax(&q.q_all(s))]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandcraftedConfig {
    /// Inputs of the AP regressor.
    pub features: FeatureConfig,
    /// Random-policy episodes per training query used as FVI data.
    pub episodes_per_query: usize,
    pub ridge: f64,
    pub fvi: FviConfig,
}

impl Default for HandcraftedConfig {
    fn default() -> Self {
        HandcraftedConfig {
            features: FeatureConfig {
                n_raw: 1,
                handcrafted: true,
                ..FeatureConfig::default()
            },
            episodes_per_query: 20,
            ridge: 1e-3,
            fvi: FviConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HandcraftedOutcome {
    pub policy: HandcraftedPolicy,
    pub residuals: Vec<f64>,
}

/// Two-stage training from random-policy episodes: fit the AP regressor on
/// every visited state, map transitions to estimated AP, then run FVI.
pub fn train_handcrafted(
    sim: &mut dyn Simulator,
    train: &[String],
    cfg: &HandcraftedConfig,
    seed: u64,
) -> Result<HandcraftedOutcome> {
    if train.is_empty() {
        return Err(Error::invalid("no training queries"));
    }
    let saved = *sim.observation();
    sim.set_observation(cfg.features)?;
    let result = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut episodes = Vec::new();
        for q in train {
            for _ in 0..cfg.episodes_per_query.max(1) {
                let mut policy = RandomPolicy::new(rng.random());
                episodes.push(simulate_episode(sim, &mut policy, q, rng.random())?);
            }
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for ep in &episodes {
            for st in &ep.steps {
                xs.push(st.experience.state.clone());
                ys.push(st.ap_before);
                if st.experience.terminal {
                    xs.push(st.experience.next.clone());
                    ys.push(st.ap_after);
                }
            }
        }
        let regressor = fit_ap_regressor(&xs, &ys, cfg.ridge)?;
        let data: Vec<ScalarExperience> = episodes
            .iter()
            .flat_map(|ep| &ep.steps)
            .map(|st| ScalarExperience {
                s: regressor.predict(&st.experience.state),
                action: st.experience.action,
                reward: st.experience.reward,
                s_next: regressor.predict(&st.experience.next),
                terminal: st.experience.terminal,
            })
            .collect();
        let out = fvi_train(&data, &cfg.fvi)?;
        Ok(HandcraftedOutcome {
            policy: HandcraftedPolicy { regressor, q: out.q },
            residuals: out.residuals,
        })
    })();
    sim.set_observation(saved)?;
    result
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub qid: String,
    /// Actions actually applied, ending with Show List.
    pub best_sequence: Vec<ActionId>,
    pub best_return: f64,
    pub best_final_ap: f64,
    pub evaluated: usize,
}

/// `Σ_{k<max_len} 4^k`: interactive prefixes of length below `max_len`.
pub fn sequence_count(max_len: usize) -> usize {
    (0..max_len).map(|k| 4usize.pow(k as u32)).sum()
}

/// Every sequence of interactive actions of length `0..max_len`, shortest
/// first, each in action-index order.
pub fn enumerate_sequences(max_len: usize) -> Vec<Vec<ActionId>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 1..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for a in ActionId::INTERACTIVE {
                let mut s: Vec<ActionId> = p.clone();
                s.push(a);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Runs every enumerated sequence (then Show List) against the seeded user
/// and keeps the best return. Earlier (shorter) sequences win ties.
pub fn oracle_search(sim: &mut dyn Simulator, qid: &str, max_len: usize, seed: u64) -> Result<OracleResult> {
    if max_len == 0 {
        return Err(Error::invalid("oracle max_len must be at least 1"));
    }
    let mut best: Option<(f64, f64, Vec<ActionId>)> = None;
    let mut evaluated = 0;
    for seq in enumerate_sequences(max_len) {
        let mut policy = FixedSequence::new(seq);
        let ep = simulate_episode(sim, &mut policy, qid, seed)?;
        evaluated += 1;
        let r = ep.total_return();
        if best.as_ref().is_none_or(|b| r > b.0) {
            best = Some((r, ep.final_ap(), ep.actions()));
        }
    }
    let (best_return, best_final_ap, best_sequence) = best.expect("at least one sequence");
    Ok(OracleResult {
        qid: qid.to_owned(),
        best_sequence,
        best_return,
        best_final_ap,
        evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub qid: String,
    pub best_sequence: Vec<String>,
    #[serde(rename = "return")]
    pub ret: f64,
    pub evaluated: usize,
}

impl From<&OracleResult> for OracleRecord {
    fn from(r: &OracleResult) -> Self {
        OracleRecord {
            qid: r.qid.clone(),
            best_sequence: r.best_sequence.iter().map(|a| a.name().to_owned()).collect(),
            ret: r.best_return,
            evaluated: r.evaluated,
        }
    }
}

pub fn write_oracle_report(path: &Path, results: &[OracleResult]) -> Result<()> {
    let mut body = Vec::new();
    for r in results {
        serde_json::to_writer(&mut body, &OracleRecord::from(r))?;
        body.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts() {
        assert_eq!(sequence_count(1), 1);
        assert_eq!(sequence_count(4), 85);
        assert_eq!(sequence_count(5), 341);
        for n in 1..=5 {
            let seqs = enumerate_sequences(n);
            assert_eq!(seqs.len(), sequence_count(n));
            let distinct: std::collections::BTreeSet<_> = seqs.iter().collect();
            assert_eq!(distinct.len(), seqs.len());
        }
        assert_eq!(enumerate_sequences(1), vec![Vec::<ActionId>::new()]);
    }

    #[test]
    fn random_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = [0usize; 5];
        for _ in 0..100_000 {
            counts[random_action(&mut rng).index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.2).abs() < 0.005, "{counts:?}");
        }
        let a: Vec<_> = (0..20).map(|_| random_action(&mut ChaCha8Rng::seed_from_u64(3))).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    fn fv() -> FeatureVector {
        FeatureVector {
            handcrafted: None,
            turn: 0,
            raw_scores: vec![0.2],
        }
    }

    #[test]
    fn handcrafted_choices() {
        // the regressor maps features [t, s_1] to s_1
        let reg = APRegressor {
            weights: vec![0.0, 1.0],
            bias: 0.0,
        };
        let mut q = GBasisQ::zeros(vec![0.25, 0.5, 0.75], 0.25);
        assert_eq!(handcrafted_action(&reg, &q, &fv()), ActionId::ReturnDocuments);
        q.weights[ActionId::ShowList.index()] = vec![1.0, 1.0, 1.0];
        assert_eq!(handcrafted_action(&reg, &q, &fv()), ActionId::ShowList);
        // request peaks at low AP, documents at high AP
        let mut q = GBasisQ::zeros(vec![0.25, 0.5, 0.75], 0.25);
        q.weights[ActionId::ReturnRequest.index()] = vec![2.0, 0.0, 0.0];
        q.weights[ActionId::ReturnDocuments.index()] = vec![0.0, 0.0, 2.0];
        assert_eq!(handcrafted_action(&reg, &q, &fv()), ActionId::ReturnRequest);
        let high = FeatureVector {
            raw_scores: vec![0.9],
            ..fv()
        };
        assert_eq!(handcrafted_action(&reg, &q, &high), ActionId::ReturnDocuments);
    }

    #[test]
    fn oracle_record_shape() {
        let r = OracleResult {
            qid: "q1".into(),
            best_sequence: vec![ActionId::ReturnKeyTerm, ActionId::ShowList],
            best_return: 12.5,
            best_final_ap: 0.5,
            evaluated: 85,
        };
        let line = serde_json::to_string(&OracleRecord::from(&r)).unwrap();
        assert_eq!(
            line,
            r#"{"qid":"q1","best_sequence":["ReturnKeyTerm","ShowList"],"return":12.5,"evaluated":85}"#
        );
    }
}
