//! Token-level entropy-regularized policy optimization for language agents.
//!
//! The crate models an agent whose actions are token sequences. Credit is
//! assigned per token with a soft Bellman backup that needs no discount
//! inside an action, and the optimal token policy is the reference policy
//! tilted by `exp(Q / beta)`.
//!
//! Layout:
//! - [`vocab`], [`env`]: token vocabularies and two environments, a random
//!   tabular MDP (small enough to enumerate) and an arithmetic expression task.
//! - [`policy`]: token policies and soft Q-functions, tabular and as small
//!   MLPs, plus checkpoints.
//! - [`soft_bellman`]: per-token targets, KL terms and the closed-form policy.
//! - [`oracle`]: action-level ground truth by enumeration.
//! - [`trainers`]: the token-level trainer, its two ablations and an
//!   action-level PPO baseline.
//! - [`metrics`], [`verify`]: CSV metrics and the identity check suite.

pub mod config;
pub mod env;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod soft_bellman;
pub mod trainers;
pub mod transition;
pub mod verify;
pub mod vocab;

pub use config::{Algo, BackupParams, EnvKind, Mode, RunConfig};
pub use env::{ExprEnv, StepOutcome, TabularEnv, TabularEnvSpec, TokenEnv};
pub use error::{Error, Result};
pub use metrics::{read_metrics, write_metrics, MetricsLog, MetricsRow};
pub use policy::{Context, Policy, PolicyTable, QTable, Reference, SoftQ};
pub use rng::{seeded_rng, SeededRng};
pub use trainers::{run_training, EtpoLearner, PpoLearner, ReplayBuffer, TrainRun};
pub use transition::Transition;
pub use vocab::{TokenId, TokenSeq, Vocabulary};
