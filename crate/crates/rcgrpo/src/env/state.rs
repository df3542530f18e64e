//! World state values and tool observations.
//!
//! States are plain values: stepping never mutates in place, and two states
//! with equal fields compare equal.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Node in the miniature file tree, keyed by absolute path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Dir,
    File { content: String },
}

impl Node {
    pub fn is_dir(&self) -> bool {
        matches!(self, Node::Dir)
    }
}

/// Miniature file-system world: a flat map from absolute path to node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSystemState {
    pub cwd: String,
    pub tree: BTreeMap<String, Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketStatus {
    Open,
    Resolved,
}

impl fmt::Display for TicketStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TicketStatus::Open => f.write_str("open"),
            TicketStatus::Resolved => f.write_str("resolved"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub title: String,
    pub status: TicketStatus,
}

/// Miniature support-ticket world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketState {
    pub tickets: BTreeMap<String, Ticket>,
}

/// Which world a task lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    FileSystem,
    Ticket,
}

impl fmt::Display for WorldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorldKind::FileSystem => f.write_str("file_system"),
            WorldKind::Ticket => f.write_str("ticket"),
        }
    }
}

/// Tagged union over the two bundled worlds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "world_type", rename_all = "snake_case")]
pub enum WorldState {
    FileSystem(FileSystemState),
    Ticket(TicketState),
}

impl WorldState {
    pub fn kind(&self) -> WorldKind {
        match self {
            WorldState::FileSystem(_) => WorldKind::FileSystem,
            WorldState::Ticket(_) => WorldKind::Ticket,
        }
    }
}

/// Full environment state: world content plus the turn counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub world: WorldState,
    pub turn: usize,
}

impl EnvState {
    pub fn new(world: WorldState) -> Self {
        Self { world, turn: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObsStatus {
    Success,
    Error,
}

/// Result of executing one tool call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub status: ObsStatus,
    pub payload: String,
}

impl Observation {
    pub fn success(payload: impl Into<String>) -> Self {
        Self {
            status: ObsStatus::Success,
            payload: payload.into(),
        }
    }

    pub fn error(payload: impl Into<String>) -> Self {
        Self {
            status: ObsStatus::Error,
            payload: payload.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.status == ObsStatus::Error
    }
}
