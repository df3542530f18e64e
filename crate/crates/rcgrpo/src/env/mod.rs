//! Deterministic, seedable multi-turn tool-calling worlds.
//!
//! Two miniature worlds are bundled: a file system (ls/cd/mv/cp/rm/touch/
//! grep/mkdir) and a support-ticket tracker (create/resolve/get). Stepping
//! is a pure function of (state, call); error observations never mutate
//! world content.

pub mod call;
pub mod candidates;
pub mod filesystem;
pub mod gen;
pub mod state;
pub mod task;
pub mod trajectory;

pub use call::{ArgValue, ToolCall};
pub use state::{
    EnvState, FileSystemState, Node, ObsStatus, Observation, Ticket, TicketState, TicketStatus,
    WorldKind, WorldState,
};
pub use task::{read_tasks, write_tasks, Task, TaskSet};
pub use trajectory::{Termination, TrajStep, Trajectory};

use crate::error::{Error, Result};

/// Tool that ends an episode, present in every candidate list.
pub const TERMINATION_TOOL: &str = "done";

/// A task-bound environment. States are plain values; all methods are pure,
/// so rollouts may proceed in parallel on separate state copies.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    task: &'a Task,
}

impl<'a> Env<'a> {
    pub fn new(task: &'a Task) -> Self {
        Self { task }
    }

    pub fn task(&self) -> &Task {
        self.task
    }

    /// Fresh copy of the task's initial state at turn 0.
    ///
    /// The seed is accepted for interface symmetry with stochastic worlds;
    /// the bundled worlds are deterministic, so any seed yields the same
    /// state bit for bit.
    pub fn reset(&self, _seed: u64) -> Result<EnvState> {
        self.task.validate_static()?;
        Ok(EnvState::new(self.task.initial_state.world.clone()))
    }

    /// Execute one tool call. Unknown tools and bad arguments yield an
    /// `ERROR` observation with the world unchanged; the turn always
    /// advances. `done` is true when the termination tool was invoked or
    /// the turn budget is exhausted.
    pub fn step(&self, state: &EnvState, call: &ToolCall) -> (EnvState, Observation, bool) {
        debug_assert!(state.turn < self.task.max_turns, "stepping past the turn limit");
        let (world, observation) = if call.name == TERMINATION_TOOL {
            (state.world.clone(), Observation::success("done"))
        } else {
            let applied = match &state.world {
                WorldState::FileSystem(fs) => {
                    filesystem::apply(fs, call).map(|(w, p)| (WorldState::FileSystem(w), p))
                }
                WorldState::Ticket(ts) => {
                    ticket::apply(ts, call).map(|(w, p)| (WorldState::Ticket(w), p))
                }
            };
            match applied {
                Ok((world, payload)) => (world, Observation::success(payload)),
                Err(reason) => (state.world.clone(), Observation::error(reason)),
            }
        };
        let next = EnvState {
            world,
            turn: state.turn + 1,
        };
        let done = call.name == TERMINATION_TOOL || next.turn >= self.task.max_turns;
        (next, observation, done)
    }

    /// Deterministic, canonically ordered candidate list for this state.
    pub fn candidate_actions(&self, state: &EnvState) -> Vec<ToolCall> {
        candidates::enumerate(&state.world, self.task)
    }

    /// Replay the golden action sequence, producing the reference
    /// trajectory and the golden final state.
    pub fn replay_golden(&self) -> Result<(Trajectory, EnvState)> {
        let integrity = |msg: String| Error::TaskIntegrity {
            task_id: self.task.id.clone(),
            msg,
        };
        let mut state = self.reset(0)?;
        let mut steps = Vec::with_capacity(self.task.golden_actions.len());
        let mut termination = None;
        for (t, call) in self.task.golden_actions.iter().enumerate() {
            if termination.is_some() {
                return Err(integrity(format!("golden action {t} after termination")));
            }
            let candidates = self.candidate_actions(&state);
            let chosen = candidates.iter().position(|c| c == call).ok_or_else(|| {
                integrity(format!("golden action {call} not in turn-{t} candidates"))
            })?;
            let (next, observation, done) = self.step(&state, call);
            if observation.is_error() {
                return Err(integrity(format!(
                    "golden action {call} failed: {}",
                    observation.payload
                )));
            }
            steps.push(TrajStep {
                candidates,
                chosen,
                observation,
                logprob: 0.0,
            });
            state = next;
            if done {
                termination = Some(if call.name == TERMINATION_TOOL {
                    Termination::DoneCalled
                } else {
                    Termination::TurnLimit
                });
            }
        }
        let termination =
            termination.ok_or_else(|| integrity("golden replay did not terminate".into()))?;
        let trajectory = Trajectory {
            task_id: self.task.id.clone(),
            steps,
            final_state: state.clone(),
            termination,
        };
        Ok((trajectory, state))
    }
}

/// Full task validation: static invariants plus a clean golden replay
/// (which also proves candidate completeness along the golden path).
pub fn validate_task(task: &Task) -> Result<()> {
    task.validate_static()?;
    Env::new(task).replay_golden()?;
    Ok(())
}

/// Drive an explicit action sequence through the environment.
///
/// Actions not present in the turn's candidate list are skipped, so a
/// sequence planned against an earlier state stays executable after a
/// divergence. A terminating `done` is appended when the sequence runs out
/// with turns to spare. Recorded log-probabilities are 0 (scripted choice).
pub fn execute_sequence(task: &Task, actions: &[ToolCall]) -> Result<Trajectory> {
    let env = Env::new(task);
    let mut state = env.reset(0)?;
    let mut steps = Vec::new();
    let mut termination = None;
    let queue: Vec<&ToolCall> = actions.iter().collect();
    let done_call = ToolCall::new(TERMINATION_TOOL);
    let mut cursor = 0;
    while termination.is_none() {
        let candidates = env.candidate_actions(&state);
        let call = loop {
            match queue.get(cursor) {
                Some(call) => {
                    cursor += 1;
                    if candidates.contains(call) {
                        break (*call).clone();
                    }
                }
                None => break done_call.clone(),
            }
        };
        let chosen = candidates
            .iter()
            .position(|c| *c == call)
            .expect("termination tool is always a candidate");
        let (next, observation, done) = env.step(&state, &call);
        steps.push(TrajStep {
            candidates,
            chosen,
            observation,
            logprob: 0.0,
        });
        state = next;
        if done {
            termination = Some(if call.name == TERMINATION_TOOL {
                Termination::DoneCalled
            } else {
                Termination::TurnLimit
            });
        }
    }
    Ok(Trajectory {
        task_id: task.id.clone(),
        steps,
        final_state: state,
        termination: termination.unwrap(),
    })
}

mod ticket;
pub use ticket::next_id as next_ticket_id;
