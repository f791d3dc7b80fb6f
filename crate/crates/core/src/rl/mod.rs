//! Policy optimization: rollouts, advantages, the clipped surrogate, top-p
//! masking, the Lion optimizer and the epoch loop.

pub mod gae;
pub mod lion;
pub mod nlpo;
pub mod ppo;
pub mod rollout;
pub mod train;

pub use gae::gae;
pub use lion::{lion_step, Lion, LionConfig};
pub use nlpo::{nlpo_mask, top_p_support, NlpoConfig};
pub use ppo::{clipped_surrogate, ppo_loss_and_grad, ppo_step, PpoConfig, PpoStats};
pub use rollout::{collect_rollouts, BatchReport, PolicySet, Rollout};
pub use train::{train, train_with_reward, EpochRecord, RlConfig, TrainLoopConfig, TrainOutcome, TrainingLog};
