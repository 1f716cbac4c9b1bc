//! The learned backfilling agent: observation encoding, the kernel policy
//! and value networks, PPO training and model files.

pub mod adam;
pub mod model_io;
pub mod net;
pub mod obs;
pub mod ppo;

pub use model_io::{load_model, load_model_with_shape, save_model, ModelError};
pub use net::{policy_forward, value_forward, AgentParams, AgentShape};
pub use obs::{build_observation, Observation, JOB_FEATURES, MAX_OBSV_SIZE};
pub use ppo::{
    episode_reward, ppo_train, EpochRecord, TrainConfig, TrainError, TrainOutcome, Trajectory,
};
