//! Pre-training by behavioral cloning, then Reinforce with a baseline.

mod pd;
mod pretrain;
mod reinforce;

pub use pd::{Demonstrations, PdController, PdPolicy, PdWiring};
pub use pretrain::{generate_demos, imitation_loss, pretrain};
pub use reinforce::{
    collect_batch, compute_returns, policy_gradient, reinforce_update, train, EpochRecord, TrainConfig, TrainReport,
    UpdateStats,
};
