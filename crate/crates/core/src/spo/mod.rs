//! Self-play preference optimization: normal-form, bandit-feedback,
//! tabular history-level, practical queue-based and contextual variants.

mod contextual;
mod normal_form;
mod practical;
mod tabular;

pub use contextual::{run_spo_contextual, ContextualConfig, ContextualRun};
pub use normal_form::{
    run_selfplay_bandit, run_selfplay_dueling_check, run_selfplay_fullfeedback, spo_loss,
    BanditRunConfig, RunOptions, SelfPlayRun, TracePoint,
};
pub use practical::{
    run_practical_loop, run_spo_practical, select_checkpoint, Checkpoint, PracticalConfig,
    PracticalRun, QueueWinRate, Rewarder, TrajectoryQueue,
};
pub use tabular::{
    default_tabular_eta, run_spo_tabular, trajectory_duality_gap, CriticKind, TabularConfig,
    TabularSpoRun,
};
