//! PPO with generalized advantage estimation over graph-observation
//! environments, driving any of the four layer architectures with
//! symmetry-score logging.

mod gae;
mod policy;
mod ppo;
mod rollout;
mod trainer;

pub use gae::compute_gae;
pub use policy::{gaussian_log_prob, GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
pub use ppo::{ppo_update, PpoConfig, UpdateStats};
pub use rollout::{collect_rollouts, RolloutBatch, Sample};
pub use trainer::{train, IterationLog, TrainOutcome, TrainSettings};
