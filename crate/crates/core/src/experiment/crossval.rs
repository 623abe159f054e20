use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyKind};
use super::synth::make_synthetic;
use crate::baselines::{oracle_search, train_handcrafted, HandcraftedConfig, RandomPolicy};
use crate::corpus::{inject_noise, Corpus, JudgmentSet, Query};
use crate::dqn::{train, CurvePoint, DqnModel, DqnPolicy, TrainerConfig};
use crate::env::{Environment, Policy};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::retrieval::Retriever;
use crate::sim::{simulate_episode, CachedSim, Simulator};
use crate::topics::{fit_topics, TopicModel};
use crate::user_sim::{turn_seed, SimUser};

/// Loaded collection, fitted models, and a shared simulator cache.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub corpus: Arc<Corpus>,
    pub queries: Vec<Query>,
    pub judgments: Arc<JudgmentSet>,
    pub topics: Arc<TopicModel>,
    pub env: Environment,
    pub sim: CachedSim,
}

/// The features the cache extracts: every predictor and the largest N.
pub fn full_features(cfg: &ExperimentConfig) -> FeatureConfig {
    FeatureConfig {
        n_raw: cfg.features.n_raw.max(cfg.handcrafted.features.n_raw).max(100),
        handcrafted: true,
        ..cfg.features
    }
}

impl Experiment {
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (corpus, queries, judgments) = match (&config.data.corpus, &config.data.queries, &config.data.qrels) {
            (Some(c), Some(q), Some(r)) => crate::corpus::ingest(c, q, r)?,
            _ => {
                let s = make_synthetic(&config.synthetic, config.seed)?;
                (s.corpus, s.queries, s.judgments)
            }
        };
        let corpus = if config.data.noise_rate > 0.0 {
            inject_noise(&corpus, config.data.noise_rate, config.seed)?.0
        } else {
            corpus
        };
        Self::from_parts(config, corpus, queries, judgments)
    }

    pub fn from_parts(
        config: ExperimentConfig,
        corpus: Corpus,
        queries: Vec<Query>,
        judgments: JudgmentSet,
    ) -> Result<Self> {
        let corpus = Arc::new(corpus);
        let judgments = Arc::new(judgments);
        // Only queries with judgments take part in experiments.
        let queries: Vec<Query> = queries
            .into_iter()
            .filter(|q| judgments.relevant(&q.qid).is_some())
            .collect();
        let topics = Arc::new(fit_topics(&corpus, config.topics.k, config.topics.em_iters, config.seed)?);
        let retriever = Arc::new(Retriever::new(corpus.clone(), config.retrieval)?);
        let env = Environment::new(retriever, topics.clone(), config.reward, config.menu)?;
        let user = SimUser::new(corpus.clone(), judgments.clone(), &topics, config.seed);
        let sim = CachedSim::new(env.clone(), user, &queries, full_features(&config));
        Ok(Experiment {
            config,
            corpus,
            queries,
            judgments,
            topics,
            env,
            sim,
        })
    }

    pub fn query_ids(&self) -> Vec<String> {
        self.queries.iter().map(|q| q.qid.clone()).collect()
    }

    /// Seeded shuffle of the query ids dealt round-robin into `folds` parts.
    pub fn folds(&self) -> Result<Vec<Vec<String>>> {
        partition(&self.query_ids(), self.config.folds, self.config.seed)
    }

    /// User seeds of the evaluation episodes; shared by every policy so
    /// that per-(query, seed) comparisons line up.
    pub fn eval_seeds(&self, n: usize) -> Vec<u64> {
        (0..n as u64).map(|e| self.config.seed.wrapping_mul(1_000_003).wrapping_add(e)).collect()
    }

    /// Trains a DQN on `train_qids` under the given observation.
    pub fn train_dqn(
        &mut self,
        train_qids: &[String],
        curve_qids: &[String],
        features: FeatureConfig,
        trainer: &TrainerConfig,
        seed: u64,
    ) -> Result<(DqnModel, Vec<CurvePoint>)> {
        self.sim.set_observation(features)?;
        let out = train(&mut self.sim, train_qids, curve_qids, trainer, seed)?;
        Ok((out.model, out.curve))
    }

    /// Mean final AP and mean return per query of `policy` over the eval seeds.
    pub fn evaluate_policy(
        &mut self,
        policy: &mut dyn Policy,
        features: FeatureConfig,
        qids: &[String],
        episodes: usize,
    ) -> Result<Vec<QueryResult>> {
        self.sim.set_observation(features)?;
        let seeds = self.eval_seeds(episodes);
        let mut out = Vec::with_capacity(qids.len());
        for q in qids {
            let mut ret = 0.0;
            let mut ap = 0.0;
            for &s in &seeds {
                let ep = simulate_episode(&mut self.sim, policy, q, s)?;
                ret += ep.total_return();
                ap += ep.final_ap();
            }
            out.push(QueryResult {
                qid: q.clone(),
                ap: ap / seeds.len() as f64,
                ret: Some(ret / seeds.len() as f64),
            });
        }
        Ok(out)
    }

    pub fn evaluate_random(&mut self, qids: &[String], episodes: usize) -> Result<Vec<QueryResult>> {
        let seeds = self.eval_seeds(episodes);
        let mut out = Vec::with_capacity(qids.len());
        for q in qids {
            let mut ret = 0.0;
            let mut ap = 0.0;
            for &s in &seeds {
                let mut policy = RandomPolicy::new(turn_seed(s, q, usize::MAX));
                let ep = simulate_episode(&mut self.sim, &mut policy, q, s)?;
                ret += ep.total_return();
                ap += ep.final_ap();
            }
            out.push(QueryResult {
                qid: q.clone(),
                ap: ap / seeds.len() as f64,
                ret: Some(ret / seeds.len() as f64),
            });
        }
        Ok(out)
    }

    pub fn evaluate_oracle(&mut self, qids: &[String], episodes: usize) -> Result<Vec<QueryResult>> {
        let seeds = self.eval_seeds(episodes);
        let max_len = self.config.eval.oracle_max_len;
        let mut out = Vec::with_capacity(qids.len());
        for q in qids {
            let mut ret = 0.0;
            let mut ap = 0.0;
            for &s in &seeds {
                let r = oracle_search(&mut self.sim, q, max_len, s)?;
                ret += r.best_return;
                ap += r.best_final_ap;
            }
            out.push(QueryResult {
                qid: q.clone(),
                ap: ap / seeds.len() as f64,
                ret: Some(ret / seeds.len() as f64),
            });
        }
        Ok(out)
    }

    pub fn evaluate_firstpass(&mut self, qids: &[String]) -> Result<Vec<QueryResult>> {
        qids.iter()
            .map(|q| {
                Ok(QueryResult {
                    qid: q.clone(),
                    ap: self.sim.first_pass_ap(q)?,
                    ret: None,
                })
            })
            .collect()
    }

    /// k-fold cross-validation of one policy. Trainable policies are fit on
    /// the other folds and evaluated greedily on the held-out fold.
    pub fn crossval(&mut self, run: &RunSpec) -> Result<CrossvalResult> {
        let folds = self.folds()?;
        let mut per_fold = Vec::with_capacity(folds.len());
        let mut curves = Vec::new();
        for (f, test) in folds.iter().enumerate() {
            let train_q: Vec<String> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, q)| q.iter().cloned())
                .collect();
            let fold_seed = self.config.seed.wrapping_add(1 + f as u64);
            let eval_n = self.config.eval.episodes;
            let queries = match &run.policy {
                RunPolicy::Firstpass => self.evaluate_firstpass(test)?,
                RunPolicy::Random => self.evaluate_random(test, self.config.eval.random_episodes)?,
                RunPolicy::Oracle => self.evaluate_oracle(test, eval_n)?,
                RunPolicy::Handcrafted(hc) => {
                    let out = train_handcrafted(&mut self.sim, &train_q, hc, fold_seed)?;
                    let mut p = out.policy;
                    self.evaluate_policy(&mut p, hc.features, test, eval_n)?
                }
                RunPolicy::Dqn { features, trainer } => {
                    let curve_q: &[String] = if run.curve_on_test { test } else { &train_q };
                    let (model, curve) = self.train_dqn(&train_q, curve_q, *features, trainer, fold_seed)?;
                    curves.push(curve);
                    let mut p = DqnPolicy { model };
                    self.evaluate_policy(&mut p, *features, test, eval_n)?
                }
            };
            tracing::info!(run = %run.label, fold = f, "fold done");
            per_fold.push(FoldResult::new(f, queries));
        }
        Ok(CrossvalResult::new(run.label.clone(), per_fold, average_curves(&curves)))
    }
}

pub fn partition(qids: &[String], folds: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if folds < 2 {
        return Err(Error::Config("folds must be at least 2".into()));
    }
    if qids.len() < folds {
        return Err(Error::Config(format!(
            "{} queries cannot fill {folds} folds",
            qids.len()
        )));
    }
    let mut ids = qids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, q) in ids.into_iter().enumerate() {
        out[i % folds].push(q);
    }
    Ok(out)
}

/// Point-wise mean of equally long curves; shorter curves truncate.
pub fn average_curves(curves: &[Vec<CurvePoint>]) -> Vec<CurvePoint> {
    let Some(len) = curves.iter().map(Vec::len).min() else {
        return Vec::new();
    };
    (0..len)
        .map(|i| {
            let n = curves.len() as f64;
            CurvePoint {
                epoch: curves[0][i].epoch,
                mean_return: curves.iter().map(|c| c[i].mean_return).sum::<f64>() / n,
                mean_map: curves.iter().map(|c| c[i].mean_map).sum::<f64>() / n,
                epsilon: curves[0][i].epsilon,
            }
        })
        .collect()
}

/// What to run in one cross-validation.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub label: String,
    pub policy: RunPolicy,
    /// Learning curves evaluate the held-out fold instead of the training folds.
    pub curve_on_test: bool,
}

#[derive(Debug, Clone)]
pub enum RunPolicy {
    Firstpass,
    Random,
    Handcrafted(HandcraftedConfig),
    Dqn {
        features: FeatureConfig,
        trainer: TrainerConfig,
    },
    Oracle,
}

impl RunSpec {
    /// The run the configuration's `policy` field selects.
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let policy = match cfg.policy {
            PolicyKind::Firstpass => RunPolicy::Firstpass,
            PolicyKind::Random => RunPolicy::Random,
            PolicyKind::Handcrafted => RunPolicy::Handcrafted(cfg.handcrafted.clone()),
            PolicyKind::Dqn => RunPolicy::Dqn {
                features: cfg.features,
                trainer: cfg.trainer.clone(),
            },
            PolicyKind::Oracle => RunPolicy::Oracle,
        };
        RunSpec {
            label: cfg.policy.name().to_owned(),
            policy,
            curve_on_test: true,
        }
    }
}

/// Raw-score sizes of the top-N ablation.
pub const ABLATION_SIZES: [usize; 5] = [1, 5, 10, 50, 100];

fn dqn_run(label: String, features: FeatureConfig, trainer: TrainerConfig) -> RunSpec {
    RunSpec {
        label,
        policy: RunPolicy::Dqn { features, trainer },
        curve_on_test: true,
    }
}

/// Named groups of runs:
/// `table` compares every policy, `layers` compares 0 and 2 hidden layers
/// on raw scores, `topn` varies the number of raw scores.
pub fn suite(name: &str, cfg: &ExperimentConfig) -> Result<Vec<RunSpec>> {
    let raw = FeatureConfig {
        handcrafted: false,
        ..cfg.features
    };
    let both = FeatureConfig {
        handcrafted: true,
        ..cfg.features
    };
    let plain = |label: &str, policy: RunPolicy| RunSpec {
        label: label.to_owned(),
        policy,
        curve_on_test: true,
    };
    Ok(match name {
        "table" => vec![
            plain("firstpass", RunPolicy::Firstpass),
            plain("random", RunPolicy::Random),
            plain("handcrafted", RunPolicy::Handcrafted(cfg.handcrafted.clone())),
            dqn_run("dqn-raw".into(), raw, cfg.trainer.clone()),
            dqn_run("dqn-raw+hand".into(), both, cfg.trainer.clone()),
            plain("oracle", RunPolicy::Oracle),
        ],
        "layers" => [0, 2]
            .into_iter()
            .map(|l| {
                let trainer = TrainerConfig {
                    hidden_layers: l,
                    ..cfg.trainer.clone()
                };
                dqn_run(format!("dqn-raw-{l}layer"), raw, trainer)
            })
            .collect(),
        "topn" => ABLATION_SIZES
            .into_iter()
            .map(|n| dqn_run(format!("dqn-raw-n{n}"), FeatureConfig { n_raw: n, ..raw }, cfg.trainer.clone()))
            .collect(),
        other => {
            return Err(Error::Config(format!(
                "unknown suite `{other}` (expected table, layers or topn)"
            )))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub qid: String,
    /// Mean final AP over the evaluation episodes.
    pub ap: f64,
    /// Mean return; absent for the first-pass ranking.
    #[serde(rename = "return")]
    pub ret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub map: f64,
    pub mean_return: Option<f64>,
    pub queries: Vec<QueryResult>,
}

impl FoldResult {
    pub fn new(fold: usize, queries: Vec<QueryResult>) -> Self {
        let n = queries.len().max(1) as f64;
        let map = queries.iter().map(|q| q.ap).sum::<f64>() / n;
        let mean_return = queries
            .iter()
            .map(|q| q.ret)
            .sum::<Option<f64>>()
            .map(|s| s / n);
        FoldResult {
            fold,
            map,
            mean_return,
            queries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalResult {
    pub label: String,
    /// Mean of the per-fold MAPs.
    pub map: f64,
    /// Mean of the per-fold mean returns.
    pub mean_return: Option<f64>,
    pub folds: Vec<FoldResult>,
    pub curve: Vec<CurvePoint>,
}

impl CrossvalResult {
    pub fn new(label: String, folds: Vec<FoldResult>, curve: Vec<CurvePoint>) -> Self {
        let n = folds.len().max(1) as f64;
        let map = folds.iter().map(|f| f.map).sum::<f64>() / n;
        let mean_return = folds.iter().map(|f| f.mean_return).sum::<Option<f64>>().map(|s| s / n);
        CrossvalResult {
            label,
            map,
            mean_return,
            folds,
            curve,
        }
    }

    /// Per-query results across all folds, sorted by query id.
    pub fn per_query(&self) -> Vec<&QueryResult> {
        let mut all: Vec<&QueryResult> = self.folds.iter().flat_map(|f| &f.queries).collect();
        all.sort_by(|a, b| a.qid.cmp(&b.qid));
        all
    }
}
