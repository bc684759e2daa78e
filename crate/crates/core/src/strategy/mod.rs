//! The weighting strategy model: an actor mapping the phase descriptor to the
//! weighting coefficients `theta_T`, a critic scoring `(s, theta)`, a learned
//! stage embedding, the replay buffer, and the full-buffer update.

mod buffer;
mod fdu;
mod model;

pub use buffer::{ReplayBuffer, Transition};
pub use fdu::{fdu_update, td_targets, FduStats, GradientCombiner, MeanCombiner};
pub use model::{explore, weight, ExplorationSchedule, StrategyConfig, StrategyModel, THETA_DIM};
