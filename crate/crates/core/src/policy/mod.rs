//! Dueling double-DQN policy learned offline from counterfactual databases.

pub mod net;
pub mod toy;
pub mod train;

pub use net::{dueling_q, DuelingQNet, QOutput};
pub use train::{
    argmax_first, double_q_target, rollout, train, train_replay, PolicyConfig, QTransition, ReplaySet,
    TrainedPolicy,
};
