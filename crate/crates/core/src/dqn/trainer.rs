use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{argmax, QNetwork};
use super::replay::ReplayBuffer;
use crate::env::{ActionId, Experience, Policy};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::sim::{simulate_episode, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub sync_every: u64,
    pub learning_rate: f64,
    pub total_steps: u64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Uniform-random steps that fill the buffer and fit the input scaler
    /// before learning starts.
    pub warmup_steps: u64,
    /// Standardize inputs with statistics of the warm-up states.
    pub standardize_inputs: bool,
    /// Training steps between learning-curve points.
    pub eval_every: u64,
    /// Seeded greedy episodes per query at each learning-curve point.
    pub eval_episodes: usize,
    /// Rewards are multiplied by this before entering TD targets, so the
    /// network regresses Q in scaled units.
    pub reward_scale: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_steps: 50_000,
            buffer_capacity: 10_000,
            batch_size: 32,
            sync_every: 1_000,
            learning_rate: 1e-3,
            total_steps: 50_000,
            hidden_layers: 2,
            hidden_width: 128,
            warmup_steps: 1_000,
            standardize_inputs: true,
            eval_every: 1_000,
            eval_episodes: 1,
            reward_scale: 0.01,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1]"));
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::invalid("epsilon must lie in [0, 1]"));
            }
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.sync_every == 0 {
            return Err(Error::invalid("batch size, buffer capacity and sync period must be positive"));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::invalid("reward scale must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if ![0, 2, 4].contains(&self.hidden_layers) {
            return Err(Error::invalid("hidden layer count must be 0, 2 or 4"));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        Ok(())
    }

    /// Linear decay from start to end over the decay window, then flat.
    pub fn epsilon(&self, step: u64) -> f64 {
        if self.epsilon_decay_steps == 0 || step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let f = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + f * (self.epsilon_end - self.epsilon_start)
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_width; self.hidden_layers]
    }
}

/// Per-dimension affine input transform `(x − mean) · scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaler {
    pub fn identity(dim: usize) -> Self {
        InputScaler {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and inverse standard deviation of the rows; constant columns
    /// are centred only.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1.0;
            for (i, &x) in r.iter().enumerate() {
                sum[i] += x;
                sq[i] += x * x;
            }
        }
        if n == 0.0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 1e-12 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        InputScaler { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    }
}

/// A Q-network together with the input transform it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnModel {
    pub net: QNetwork,
    pub scaler: InputScaler,
    /// Network outputs divided by this are in reward units.
    pub value_scale: f64,
}

impl DqnModel {
    pub fn q_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.net.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.net.input_dim(),
                got: x.len(),
            });
        }
        let mut q = self.net.forward(&self.scaler.apply(x))?;
        q.iter_mut().for_each(|v| *v /= self.value_scale);
        Ok(q)
    }
}

/// ε-greedy: uniform over the actions with probability ε, else the argmax
/// with ties to the lowest index.
pub fn select_action(q: &[f64], epsilon: f64, rng: &mut impl Rng) -> ActionId {
    let i = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..ActionId::COUNT)
    } else {
        argmax(q)
    };
    ActionId::ALL[i]
}

/// `ŷ = r` at terminal states, else `r + γ max_a' Q(s', a'; θ⁻)`.
pub fn td_target(reward: f64, next: &[f64], target: &QNetwork, gamma: f64, terminal: bool) -> Result<f64> {
    if terminal {
        return Ok(reward);
    }
    let q = target.forward(next)?;
    Ok(reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// One gradient step on the squared TD error of the batch. Returns the
/// loss before the update. Inputs are taken as already transformed.
pub fn train_step(
    net: &mut QNetwork,
    target: &QNetwork,
    batch: &[(&[f64], ActionId, f64, &[f64], bool)],
    gamma: f64,
    lr: f64,
    step: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let dim = net.input_dim();
    let states: Vec<&[f64]> = batch.iter().map(|b| b.0).collect();
    let nexts: Vec<&[f64]> = batch.iter().map(|b| b.3).collect();
    let x = QNetwork::stack(&states, dim)?;
    let xn = QNetwork::stack(&nexts, dim)?;
    let qn = target.forward_batch(xn.view())?;
    let targets: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if b.4 {
                b.2
            } else {
                b.2 + gamma * qn.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    let actions: Vec<usize> = batch.iter().map(|b| b.1.index()).collect();
    let (loss, grads) = net.loss_and_gradients(x.view(), &actions, &targets)?;
    if !loss.is_finite() {
        return Err(Error::Diverged(step));
    }
    net.apply(&grads, lr);
    Ok(loss)
}

/// Frozen copy for the TD targets.
pub fn sync_target(net: &QNetwork) -> QNetwork {
    net.clone()
}

/// One learning-curve point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mean_return: f64,
    pub mean_map: f64,
    pub epsilon: f64,
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("epoch,mean_return,mean_map,epsilon\n");
    for p in curve {
        body.push_str(&format!("{},{:.6},{:.6},{:.6}\n", p.epoch, p.mean_return, p.mean_map, p.epsilon));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DqnModel,
    pub curve: Vec<CurvePoint>,
    pub train_steps: u64,
    pub losses: Vec<f64>,
}

/// Greedy policy over a trained model.
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    pub model: DqnModel,
}

impl Policy for DqnPolicy {
    fn act(&mut self, features: &FeatureVector) -> Result<ActionId> {
        let q = self.model.q_values(&features.to_vec())?;
        Ok(ActionId::ALL[argmax(&q)])
    }

    fn q_values(&self, features: &FeatureVector) -> Option<[f64; ActionId::COUNT]> {
        let q = self.model.q_values(&features.to_vec()).ok()?;
        q.try_into().ok()
    }
}

/// Mean return and mean final AP of greedy episodes, `episodes` seeds per query.
pub fn evaluate(
    sim: &mut dyn Simulator,
    policy: &mut dyn Policy,
    qids: &[String],
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut ret = 0.0;
    let mut ap = 0.0;
    let mut n = 0.0;
    for q in qids {
        for e in 0..episodes {
            let ep = simulate_episode(sim, policy, q, seed.wrapping_add(e as u64))?;
            ret += ep.total_return();
            ap += ep.final_ap();
            n += 1.0;
        }
    }
    if n == 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok((ret / n, ap / n))
}

/// Deep Q-learning with uniform replay and a periodically synced target.
///
/// Episodes over `train` queries are generated ε-greedily; after every
/// environment step a minibatch is drawn from the buffer and one gradient
/// step is taken. Every `eval_every` steps the greedy policy is evaluated
/// on `curve_qids` and a curve point is recorded.
pub fn train(
    sim: &mut dyn Simulator,
    train: &[String],
    curve_qids: &[String],
    cfg: &TrainerConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training queries"));
    }
    let dim = sim.observation().dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = QNetwork::new(dim, &cfg.hidden(), &mut rng)?;
    let mut model = DqnModel {
        net,
        scaler: InputScaler::identity(dim),
        value_scale: cfg.reward_scale,
    };
    if cfg.total_steps == 0 {
        return Ok(TrainOutcome {
            model,
            curve: Vec::new(),
            train_steps: 0,
            losses: Vec::new(),
        });
    }

    // Experiences record the chosen action even when the environment
    // substitutes Show List on the last turn.
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let next_episode = |rng: &mut ChaCha8Rng, sim: &mut dyn Simulator| -> Result<Vec<f64>> {
        let q = &train[rng.random_range(0..train.len())];
        Ok(sim.reset(q, rng.random())?.to_vec())
    };

    // Warm-up: random actions, no learning.
    let mut obs = next_episode(&mut rng, sim)?;
    for _ in 0..cfg.warmup_steps {
        let a = ActionId::ALL[rng.random_range(0..ActionId::COUNT)];
        let s = sim.step(a)?;
        let next = s.next.to_vec();
        buffer.store(Experience {
            state: obs,
            action: a,
            reward: s.reward,
            next: next.clone(),
            terminal: s.terminal,
        });
        obs = if s.terminal { next_episode(&mut rng, sim)? } else { next };
    }
    if cfg.standardize_inputs && !buffer.is_empty() {
        model.scaler = InputScaler::fit(buffer.iter().map(|e| e.state.as_slice()), dim);
    }
    // Stored experiences keep raw features; the scaled copies below feed the network.
    let mut scaled: std::collections::VecDeque<(Vec<f64>, Vec<f64>)> =
        buffer.iter().map(|e| (model.scaler.apply(&e.state), model.scaler.apply(&e.next))).collect();

    let mut target = sync_target(&model.net);
    let mut curve = Vec::new();
    let mut losses = Vec::new();
    let mut loss_acc = 0.0;
    let eval_seed = seed ^ 0x5eed_e7a1;

    for step in 1..=cfg.total_steps {
        let eps = cfg.epsilon(step - 1);
        let x = model.scaler.apply(&obs);
        let q = model.net.forward(&x)?;
        let a = select_action(&q, eps, &mut rng);
        let s = sim.step(a)?;
        let next = s.next.to_vec();
        if buffer.len() == buffer.capacity() {
            scaled.pop_front();
        }
        scaled.push_back((x, model.scaler.apply(&next)));
        buffer.store(Experience {
            state: obs,
            action: a,
            reward: s.reward,
            next: next.clone(),
            terminal: s.terminal,
        });
        obs = if s.terminal { next_episode(&mut rng, sim)? } else { next };

        let idx = buffer.sample_indices(cfg.batch_size, &mut rng)?;
        let batch: Vec<(&[f64], ActionId, f64, &[f64], bool)> = idx
            .iter()
            .map(|&i| {
                let e = buffer.get(i).unwrap();
                let (x, xn) = &scaled[i];
                (x.as_slice(), e.action, e.reward * cfg.reward_scale, xn.as_slice(), e.terminal)
            })
            .collect();
        loss_acc += train_step(&mut model.net, &target, &batch, cfg.gamma, cfg.learning_rate, step)?;

        if step % cfg.sync_every == 0 {
            target = sync_target(&model.net);
        }
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            losses.push(loss_acc / cfg.eval_every as f64);
            loss_acc = 0.0;
            if !curve_qids.is_empty() {
                let mut policy = DqnPolicy { model: model.clone() };
                let (r, m) = evaluate(sim, &mut policy, curve_qids, cfg.eval_episodes.max(1), eval_seed)?;
                curve.push(CurvePoint {
                    epoch: curve.len() + 1,
                    mean_return: r,
                    mean_map: m,
                    epsilon: cfg.epsilon(step),
                });
                tracing::debug!(step, mean_return = r, mean_map = m, "curve point");
                // evaluation moved the simulator; resume a fresh training episode
                obs = next_episode(&mut rng, sim)?;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        curve,
        train_steps: cfg.total_steps,
        losses,
    })
}

/// On-disk network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub activation: String,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub config: CheckpointConfig,
    pub train_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub trainer: TrainerConfig,
    pub features: crate::features::FeatureConfig,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        model: &DqnModel,
        trainer: &TrainerConfig,
        features: &crate::features::FeatureConfig,
        train_steps: u64,
    ) -> Self {
        Checkpoint {
            layer_dims: model.net.dims().to_vec(),
            activation: "relu".into(),
            weights: model.net.weight_rows(),
            biases: model.net.biases().iter().map(|b| b.to_vec()).collect(),
            config: CheckpointConfig {
                trainer: trainer.clone(),
                features: *features,
                input_mean: model.scaler.mean.clone(),
                input_scale: model.scaler.scale.clone(),
            },
            train_steps,
        }
    }

    pub fn model(&self) -> Result<DqnModel> {
        if self.activation != "relu" {
            return Err(Error::Config(format!("unsupported activation `{}`", self.activation)));
        }
        let net = QNetwork::from_rows(&self.layer_dims, &self.weights, &self.biases)?;
        let dim = net.input_dim();
        if self.config.input_mean.len() != dim || self.config.input_scale.len() != dim {
            return Err(Error::Config("checkpoint input scaler does not match layer_dims".into()));
        }
        Ok(DqnModel {
            net,
            scaler: InputScaler {
                mean: self.config.input_mean.clone(),
                scale: self.config.input_scale.clone(),
            },
            value_scale: self.config.trainer.reward_scale,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule() {
        let c = TrainerConfig::default();
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(25_000) - 0.55).abs() < 1e-12);
        assert_eq!(c.epsilon(50_000), 0.1);
        assert_eq!(c.epsilon(1_000_000), 0.1);
    }

    #[test]
    fn greedy_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[1.0, 5.0, 2.0, 0.0, 0.0], 0.0, &mut rng), ActionId::ReturnKeyTerm);
        assert_eq!(select_action(&[0.0; 5], 0.0, &mut rng), ActionId::ReturnDocuments);
    }

    #[test]
    fn td_targets() {
        let net = QNetwork::zeros(&[1, 5]).unwrap();
        assert_eq!(td_target(-10.0, &[0.0], &net, 0.9, true).unwrap(), -10.0);
        let mut t = QNetwork::zeros(&[1, 5]).unwrap();
        t.biases_mut()[0][3] = 2.0;
        assert!((td_target(1.0, &[0.0], &t, 0.9, false).unwrap() - 2.8).abs() < 1e-15);
        assert_eq!(td_target(1.0, &[0.0], &t, 0.0, false).unwrap(), 1.0);
    }

    #[test]
    fn zero_error_leaves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = QNetwork::new(2, &[3, 3], &mut rng).unwrap();
        let target = QNetwork::zeros(net.dims()).unwrap();
        let x = [0.3, -0.7];
        let q = net.forward(&x).unwrap();
        let before = net.clone();
        let loss = train_step(&mut net, &target, &[(&x, ActionId::ReturnTopic, q[3], &x, true)], 0.9, 0.1, 1).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn divergence_guard() {
        let mut net = QNetwork::zeros(&[1, 5]).unwrap();
        let target = net.clone();
        let x = [1.0];
        let err = train_step(&mut net, &target, &[(&x, ActionId::ShowList, f64::NAN, &x, true)], 0.9, 0.1, 7);
        assert!(matches!(err, Err(Error::Diverged(7))));
    }

    #[test]
    fn scaler_standardizes() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = InputScaler::fit(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(s.apply(&[1.0, 5.0]), vec![-1.0, 0.0]);
        assert_eq!(s.apply(&[3.0, 6.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = DqnModel {
            net: QNetwork::new(4, &[3, 3], &mut rng).unwrap(),
            scaler: InputScaler {
                mean: vec![0.5; 4],
                scale: vec![2.0; 4],
            },
            value_scale: TrainerConfig::default().reward_scale,
        };
        let ck = Checkpoint::new(&model, &TrainerConfig::default(), &Default::default(), 17);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.train_steps, 17);
        assert_eq!(back.model().unwrap(), model);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        for key in ["layer_dims", "activation", "weights", "biases", "config", "train_steps"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
