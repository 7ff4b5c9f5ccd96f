//! Learnable point drop: a DQN that chooses which region of a scan to erase,
//! and how much of it, so as to maximize the segmentation model's loss plus
//! prediction entropy.
//!
//! The action space is discretized into depth bands × azimuth sectors ×
//! drop ratios, plus a no-op. The agent sees the pre-drop loss and entropy
//! together with per-cell summary statistics of the scan.

mod action;
mod agent;
mod entropy;
mod pipeline;
mod state;

pub use action::{apply_drop_action, Action, ActionSpace};
pub use agent::{
    agent_train_step, q_targets_and_output_grad, select_action, AgentConfig, AgentMeta, QAgent, ReplayBuffer,
    Transition,
};
pub use entropy::{mean_entropy, point_entropies};
pub use pipeline::{
    compute_reward, evaluate_policy, read_episode_log, run_training_pipeline, write_episode_log, EpisodeRow, LpdConfig,
    PipelineOutcome, Policy, RewardRecord, EPISODE_LOG_HEADER,
};
pub use state::{build_state, LpdState};
