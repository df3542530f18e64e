//! Task definitions and the line-delimited task file format.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::call::ToolCall;
use super::state::{EnvState, Node, WorldKind, WorldState};
use crate::error::{Error, Result};

pub const MAX_TURNS_LIMIT: usize = 32;

/// A solvable episode: initial world, goal text, golden action sequence,
/// and turn budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub initial_state: EnvState,
    pub goal_text: String,
    pub golden_actions: Vec<ToolCall>,
    pub max_turns: usize,
}

impl Task {
    /// Structural invariants that do not require replay: id and tree shape,
    /// turn budget, and a golden sequence that ends (only) with `done`.
    pub fn validate_static(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("task '{}': {msg}", self.id)));
        if self.id.is_empty() {
            return Err(Error::Validation("task id is empty".into()));
        }
        if self.max_turns == 0 || self.max_turns > MAX_TURNS_LIMIT {
            return fail(format!(
                "max_turns {} outside 1..={MAX_TURNS_LIMIT}",
                self.max_turns
            ));
        }
        if self.initial_state.turn != 0 {
            return fail("initial state must start at turn 0".into());
        }
        if self.golden_actions.is_empty() {
            return fail("golden_actions is empty".into());
        }
        if self.golden_actions.len() > self.max_turns {
            return fail(format!(
                "{} golden actions exceed max_turns {}",
                self.golden_actions.len(),
                self.max_turns
            ));
        }
        if self.golden_actions.last().unwrap().name != super::TERMINATION_TOOL {
            return fail("golden_actions must end with the termination tool".into());
        }
        if self
            .golden_actions
            .iter()
            .take(self.golden_actions.len() - 1)
            .any(|c| c.name == super::TERMINATION_TOOL)
        {
            return fail("termination tool appears before the end of golden_actions".into());
        }
        match &self.initial_state.world {
            WorldState::FileSystem(fs) => {
                match fs.tree.get("/") {
                    Some(Node::Dir) => {}
                    _ => return fail("file tree has no root directory".into()),
                }
                match fs.tree.get(&fs.cwd) {
                    Some(Node::Dir) => {}
                    Some(_) => return fail(format!("cwd '{}' is not a directory", fs.cwd)),
                    None => return fail(format!("cwd '{}' not present in tree", fs.cwd)),
                }
                for path in fs.tree.keys() {
                    if path == "/" {
                        continue;
                    }
                    if !path.starts_with('/') || path.ends_with('/') {
                        return fail(format!("path '{path}' is not canonical"));
                    }
                    let parent = super::filesystem::parent(path);
                    match fs.tree.get(&parent) {
                        Some(Node::Dir) => {}
                        _ => return fail(format!("path '{path}' has no parent directory")),
                    }
                }
            }
            WorldState::Ticket(ts) => {
                for id in ts.tickets.keys() {
                    if id.is_empty() {
                        return fail("ticket with empty id".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn world_kind(&self) -> WorldKind {
        self.initial_state.world.kind()
    }
}

/// Tasks indexed by id, the lookup context for losses and rewards.
#[derive(Debug, Clone, Default)]
pub struct TaskSet {
    by_id: BTreeMap<String, Task>,
}

impl TaskSet {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for task in tasks {
            if by_id.insert(task.id.clone(), task).is_some() {
                return Err(Error::Validation("duplicate task id in task set".into()));
            }
        }
        Ok(Self { by_id })
    }

    pub fn get(&self, id: &str) -> Result<&Task> {
        self.by_id
            .get(id)
            .ok_or_else(|| Error::Validation(format!("unknown task id '{id}'")))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.by_id.values()
    }

    pub fn ids(&self) -> Vec<String> {
        self.by_id.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// On-disk record: one task per JSON line.
#[derive(Serialize, Deserialize)]
struct TaskRecord {
    id: String,
    world_type: WorldKind,
    initial_state: serde_json::Value,
    goal_text: String,
    golden_actions: Vec<ToolCall>,
    max_turns: usize,
}

impl TaskRecord {
    fn from_task(task: &Task) -> Result<Self> {
        let initial_state = match &task.initial_state.world {
            WorldState::FileSystem(fs) => serde_json::to_value(fs)?,
            WorldState::Ticket(ts) => serde_json::to_value(ts)?,
        };
        Ok(Self {
            id: task.id.clone(),
            world_type: task.world_kind(),
            initial_state,
            goal_text: task.goal_text.clone(),
            golden_actions: task.golden_actions.clone(),
            max_turns: task.max_turns,
        })
    }

    fn into_task(self) -> Result<Task> {
        let world = match self.world_type {
            WorldKind::FileSystem => WorldState::FileSystem(serde_json::from_value(self.initial_state)?),
            WorldKind::Ticket => WorldState::Ticket(serde_json::from_value(self.initial_state)?),
        };
        Ok(Task {
            id: self.id,
            initial_state: EnvState::new(world),
            goal_text: self.goal_text,
            golden_actions: self.golden_actions,
            max_turns: self.max_turns,
        })
    }
}

/// Write tasks as JSON lines.
pub fn write_tasks(path: &Path, tasks: &[Task]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for task in tasks {
        let record = TaskRecord::from_task(task)?;
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read and statically validate a JSON-lines task file.
pub fn read_tasks(path: &Path) -> Result<Vec<Task>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut tasks = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Validation(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let task = record.into_task()?;
        task.validate_static()?;
        tasks.push(task);
    }
    Ok(tasks)
}
