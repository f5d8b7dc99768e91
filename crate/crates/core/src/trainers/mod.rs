//! Training algorithms: the token-level soft Q learner and its two
//! ablations, and an action-level PPO baseline with a KL-shaped reward.

mod buffer;
mod etpo;
mod ppo;
mod run;

pub use buffer::ReplayBuffer;
pub use etpo::{iterate_to_convergence, EtpoLearner, EtpoModel, QView, UpdateStats};
pub use ppo::{
    clipped_surrogate, shaped_returns, Episode, PpoLearner, PpoModel, PpoStats, PpoStep, CLIP_EPS,
    EPOCHS, VALUE_WEIGHT,
};
pub use run::{
    chain_kl, entropy_regularized_return_estimate, make_env, run_training, tabular_spec, TrainRun,
    DEFAULT_TABULAR_ACTION_LEN, TABULAR_TERMINAL_PROB,
};
