//! Binary trajectory reward: state consistency times essential-action
//! coverage, quantized to a two-valued reward token.

use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvState, Task, ToolCall, Trajectory};
use crate::error::{Error, Result};

/// Serialized forms of the two conditioning tokens.
pub const HIGH_REWARD_TOKEN: &str = "<|high_reward|>";
pub const LOW_REWARD_TOKEN: &str = "<|low_reward|>";

/// Two-valued conditioning signal indicating target trajectory quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardToken {
    #[serde(rename = "<|high_reward|>")]
    High,
    #[serde(rename = "<|low_reward|>")]
    Low,
}

impl RewardToken {
    pub fn as_str(&self) -> &'static str {
        match self {
            RewardToken::High => HIGH_REWARD_TOKEN,
            RewardToken::Low => LOW_REWARD_TOKEN,
        }
    }
}

impl std::fmt::Display for RewardToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Both reward factors and their product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub r_state: u8,
    pub r_action: u8,
    pub total: u8,
}

impl RewardComponents {
    fn new(r_state: u8, r_action: u8) -> Self {
        Self {
            r_state,
            r_action,
            total: r_state * r_action,
        }
    }
}

/// 1 iff the two states' world content compares equal; the turn counter and
/// other episode bookkeeping are excluded.
pub fn state_consistency(final_state: &EnvState, gold: &EnvState) -> Result<u8> {
    if final_state.world.kind() != gold.world.kind() {
        return Err(Error::WorldMismatch(format!(
            "cannot compare {} against {}",
            final_state.world.kind(),
            gold.world.kind()
        )));
    }
    Ok(u8::from(final_state.world == gold.world))
}

/// True iff names are equal and every golden argument appears with an equal
/// value; the executed call may carry extra arguments.
pub fn matches_golden(executed: &ToolCall, golden: &ToolCall) -> bool {
    executed.name == golden.name
        && golden
            .args
            .iter()
            .all(|(k, v)| executed.arg(k) == Some(v))
}

/// 1 iff every golden call has a matching executed call; order-insensitive,
/// and an empty golden set is vacuously covered.
pub fn action_coverage(executed: &[ToolCall], golden: &[ToolCall]) -> u8 {
    u8::from(
        golden
            .iter()
            .all(|g| executed.iter().any(|e| matches_golden(e, g))),
    )
}

/// Full trajectory reward: replay the golden actions for the gold state,
/// then compose state consistency with action coverage.
pub fn trajectory_reward(trajectory: &Trajectory, task: &Task) -> Result<RewardComponents> {
    if trajectory.task_id != task.id {
        return Err(Error::Validation(format!(
            "trajectory for task '{}' scored against task '{}'",
            trajectory.task_id, task.id
        )));
    }
    trajectory.validate(task.max_turns)?;
    let (_, gold) = Env::new(task).replay_golden()?;
    let r_state = state_consistency(&trajectory.final_state, &gold)?;
    let executed: Vec<ToolCall> = trajectory.executed_calls().cloned().collect();
    let r_action = action_coverage(&executed, &task.golden_actions);
    Ok(RewardComponents::new(r_state, r_action))
}

/// Quantize a binary reward outcome to its conditioning token.
pub fn reward_token_of(total: u8) -> RewardToken {
    if total == 1 {
        RewardToken::High
    } else {
        RewardToken::Low
    }
}
