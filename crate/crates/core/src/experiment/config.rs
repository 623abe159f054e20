use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::synth::SynthParams;
use crate::baselines::HandcraftedConfig;
use crate::dqn::TrainerConfig;
use crate::env::{MenuConfig, RewardConfig};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::retrieval::RetrievalParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Firstpass,
    Random,
    Handcrafted,
    Dqn,
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Firstpass,
        PolicyKind::Random,
        PolicyKind::Handcrafted,
        PolicyKind::Dqn,
        PolicyKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Firstpass => "firstpass",
            PolicyKind::Random => "random",
            PolicyKind::Handcrafted => "handcrafted",
            PolicyKind::Dqn => "dqn",
            PolicyKind::Oracle => "oracle",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}` (expected one of firstpass, random, handcrafted, dqn, oracle)")))
    }
}

/// Input files. When all three are absent a synthetic collection is generated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// Token replacement rate applied after loading.
    pub noise_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicConfig {
    pub k: usize,
    pub em_iters: usize,
}

impl Default for TopicConfig {
    fn default() -> Self {
        TopicConfig { k: 10, em_iters: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Seeded episodes per held-out query.
    pub episodes: usize,
    /// Episodes per query for the random policy.
    pub random_episodes: usize,
    /// Oracle sequence length bound, Show List included.
    pub oracle_max_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 20,
            random_episodes: 1000,
            oracle_max_len: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub folds: usize,
    pub policy: PolicyKind,
    pub data: DataConfig,
    pub synthetic: SynthParams,
    pub retrieval: RetrievalParams,
    pub topics: TopicConfig,
    pub reward: RewardConfig,
    pub menu: MenuConfig,
    pub features: FeatureConfig,
    pub trainer: TrainerConfig,
    pub handcrafted: HandcraftedConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            folds: 10,
            policy: PolicyKind::Dqn,
            data: DataConfig::default(),
            synthetic: SynthParams::default(),
            retrieval: RetrievalParams::default(),
            topics: TopicConfig::default(),
            // episodes no longer than the oracle's sequences
            reward: RewardConfig {
                t_max: 4,
                ..RewardConfig::default()
            },
            menu: MenuConfig::default(),
            features: FeatureConfig::default(),
            trainer: TrainerConfig {
                total_steps: 20_000,
                epsilon_decay_steps: 15_000,
                eval_every: 2_000,
                ..TrainerConfig::default()
            },
            handcrafted: HandcraftedConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a TOML file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.corpus, &mut cfg.data.queries, &mut cfg.data.qrels]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        let d = &self.data;
        let given = [&d.corpus, &d.queries, &d.qrels].iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err(Error::Config("data.corpus, data.queries and data.qrels go together".into()));
        }
        for p in [&d.corpus, &d.queries, &d.qrels].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if !(0.0..=1.0).contains(&d.noise_rate) {
            return Err(Error::Config("data.noise_rate must lie in [0, 1]".into()));
        }
        if self.eval.episodes == 0 || self.eval.random_episodes == 0 || self.eval.oracle_max_len == 0 {
            return Err(Error::Config("evaluation counts must be positive".into()));
        }
        self.reward.validate()?;
        self.trainer.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("seed = 3\nfolds = 5\npolicy = \"random\"\n[reward]\ntau = 500.0\n").unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.policy, PolicyKind::Random);
        assert_eq!(partial.reward.tau, 500.0);
        assert_eq!(partial.reward.costs.request, 50.0);
        assert_eq!(partial.trainer.batch_size, 32);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ExperimentConfig {
            folds: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.folds = 2;
        cfg.data.corpus = Some("/nonexistent/corpus.jsonl".into());
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml("policy = \"nope\"").is_err());
        assert!("nope".parse::<PolicyKind>().is_err());
        assert_eq!("oracle".parse::<PolicyKind>().unwrap(), PolicyKind::Oracle);
    }
}
