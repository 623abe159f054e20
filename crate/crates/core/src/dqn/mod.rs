//! Deep Q-network: feed-forward Q-function, uniform experience replay,
//! frozen target network, and the ε-greedy training loop.

mod network;
mod replay;
mod trainer;

pub use network::{argmax, Gradients, QNetwork};
pub use replay::ReplayBuffer;
pub use trainer::{
    evaluate, select_action, sync_target, td_target, train, train_step, write_curve_csv, Checkpoint,
    CheckpointConfig, CurvePoint, DqnModel, DqnPolicy, InputScaler, TrainOutcome, TrainerConfig,
};
