//! Episode records: the unit of reward computation and of training.

use serde::{Deserialize, Serialize};

use super::call::ToolCall;
use super::state::{EnvState, Observation};
use crate::error::{Error, Result};

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    DoneCalled,
    TurnLimit,
}

/// One decision point: the enumerated candidates, the index taken, the
/// observation returned, and the log-probability under the generating policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajStep {
    pub candidates: Vec<ToolCall>,
    pub chosen: usize,
    pub observation: Observation,
    pub logprob: f64,
}

impl TrajStep {
    pub fn chosen_call(&self) -> &ToolCall {
        &self.candidates[self.chosen]
    }
}

/// A complete multi-turn interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<TrajStep>,
    pub final_state: EnvState,
    pub termination: Termination,
}

impl Trajectory {
    /// All tool calls issued over the episode, in order, including those
    /// that returned errors.
    pub fn executed_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.steps.iter().map(|s| s.chosen_call())
    }

    /// Structural checks: non-empty, within the turn limit, chosen indices
    /// in range, and a final termination call when `DONE_CALLED`.
    pub fn validate(&self, max_turns: usize) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::DataIntegrity("trajectory has no steps".into()));
        }
        if self.steps.len() > max_turns {
            return Err(Error::DataIntegrity(format!(
                "trajectory has {} steps, task allows {max_turns}",
                self.steps.len()
            )));
        }
        for (t, step) in self.steps.iter().enumerate() {
            if step.chosen >= step.candidates.len() {
                return Err(Error::DataIntegrity(format!(
                    "step {t}: chosen index {} out of {} candidates",
                    step.chosen,
                    step.candidates.len()
                )));
            }
        }
        if self.termination == Termination::DoneCalled {
            let last = self.steps.last().unwrap().chosen_call();
            if last.name != super::TERMINATION_TOOL {
                return Err(Error::DataIntegrity(
                    "DONE_CALLED trajectory does not end with the termination tool".into(),
                ));
            }
        }
        Ok(())
    }
}
