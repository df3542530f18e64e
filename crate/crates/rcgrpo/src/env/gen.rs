//! Seeded generator for the bundled miniature task suites.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::call::ToolCall;
use super::state::{
    EnvState, FileSystemState, Node, Ticket, TicketState, TicketStatus, WorldState,
};
use super::task::Task;
use super::{validate_task, TERMINATION_TOOL};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_TURNS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldChoice {
    FileSystem,
    Ticket,
    Mixed,
}

impl std::str::FromStr for WorldChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "file" | "file_system" | "fs" => Ok(WorldChoice::FileSystem),
            "ticket" => Ok(WorldChoice::Ticket),
            "mixed" => Ok(WorldChoice::Mixed),
            other => Err(Error::Validation(format!("unknown world '{other}'"))),
        }
    }
}

const FILE_NAMES: &[&str] = &[
    "report.csv",
    "temp.log",
    "notes.txt",
    "data.bin",
    "draft.md",
    "summary.txt",
];
const DIR_NAMES: &[&str] = &["archive", "backup", "docs", "workspace"];
const NEW_DIRS: &[&str] = &["/reports", "/outbox", "/staging"];
const NEW_FILES: &[&str] = &["/todo.txt", "/marker.tmp", "/receipt.txt"];
const TICKET_TITLES: &[&str] = &["Printer jam", "VPN down", "Password reset", "Disk full"];

fn file_content(rng: &mut ChaCha20Rng) -> String {
    let fillers = ["alpha", "beta", "gamma", "delta"];
    let mut lines = Vec::new();
    for _ in 0..rng.gen_range(1..4usize) {
        if rng.gen_bool(0.4) {
            lines.push(format!("Error: {}", fillers.choose(rng).unwrap()));
        } else {
            lines.push(fillers.choose(rng).unwrap().to_string());
        }
    }
    lines.join("\n")
}

/// Sample a small tree: root, 1-2 directories, 2-3 files in the root.
fn sample_tree(rng: &mut ChaCha20Rng) -> (BTreeMap<String, Node>, Vec<String>, Vec<String>) {
    let mut tree = BTreeMap::new();
    tree.insert("/".to_string(), Node::Dir);
    let mut dirs = Vec::new();
    let mut dir_pool: Vec<&str> = DIR_NAMES.to_vec();
    dir_pool.shuffle(rng);
    for d in dir_pool.iter().take(rng.gen_range(1..3usize)) {
        let p = format!("/{d}");
        tree.insert(p.clone(), Node::Dir);
        dirs.push(p);
    }
    let mut files = Vec::new();
    let mut file_pool: Vec<&str> = FILE_NAMES.to_vec();
    file_pool.shuffle(rng);
    for f in file_pool.iter().take(rng.gen_range(2..4usize)) {
        let p = format!("/{f}");
        tree.insert(
            p.clone(),
            Node::File {
                content: file_content(rng),
            },
        );
        files.push(f.to_string());
    }
    (tree, files, dirs)
}

fn file_task(id: String, rng: &mut ChaCha20Rng) -> Task {
    let (mut tree, files, dirs) = sample_tree(rng);
    let dir = dirs.first().cloned().unwrap_or_else(|| "/".to_string());
    let template = rng.gen_range(0..5u32);
    let (goal_text, golden) = match template {
        0 => {
            let f = files[0].clone();
            (
                format!("Move {f} to {dir}."),
                vec![ToolCall::new("mv").with("src", f).with("dst", dir)],
            )
        }
        1 => {
            let f1 = files[0].clone();
            let f2 = files[1].clone();
            (
                format!("Move {f1} to {dir} and delete {f2}."),
                vec![
                    ToolCall::new("mv").with("src", f1).with("dst", dir.clone()),
                    ToolCall::new("rm").with("path", f2),
                ],
            )
        }
        2 => {
            let nd = NEW_DIRS.choose(rng).unwrap().to_string();
            let f = files[0].clone();
            (
                format!("Create directory {nd} and move {f} into {nd}."),
                vec![
                    ToolCall::new("mkdir").with("path", nd.clone()),
                    ToolCall::new("mv").with("src", f).with("dst", nd),
                ],
            )
        }
        3 => {
            let f = files[0].clone();
            // make sure at least one line matches
            tree.insert(
                format!("/{f}"),
                Node::File {
                    content: "Error: failed\nok".to_string(),
                },
            );
            (
                format!("Find lines containing 'Error' in {f}, then delete {f}."),
                vec![
                    ToolCall::new("grep").with("path", f.clone()).with("pattern", "Error"),
                    ToolCall::new("rm").with("path", f),
                ],
            )
        }
        _ => {
            let nf = NEW_FILES.choose(rng).unwrap().to_string();
            let f = files[0].clone();
            (
                format!("Copy {f} to {dir} and create an empty file {nf}."),
                vec![
                    ToolCall::new("cp").with("src", f).with("dst", dir.clone()),
                    ToolCall::new("touch").with("path", nf),
                ],
            )
        }
    };
    let mut golden_actions = golden;
    golden_actions.push(ToolCall::new(TERMINATION_TOOL));
    Task {
        id,
        initial_state: EnvState::new(WorldState::FileSystem(FileSystemState {
            cwd: "/".to_string(),
            tree,
        })),
        goal_text,
        golden_actions,
        max_turns: DEFAULT_MAX_TURNS,
    }
}

fn ticket_task(id: String, rng: &mut ChaCha20Rng) -> Task {
    let n = rng.gen_range(2..4usize);
    let mut tickets = BTreeMap::new();
    let mut titles: Vec<&str> = TICKET_TITLES.to_vec();
    titles.shuffle(rng);
    for (i, title) in titles.iter().take(n).enumerate() {
        tickets.insert(
            format!("T{}", i + 1),
            Ticket {
                title: title.to_string(),
                status: TicketStatus::Open,
            },
        );
    }
    let template = rng.gen_range(0..3u32);
    let (goal_text, golden) = match template {
        0 => {
            let tid = format!("T{}", rng.gen_range(1..=n));
            (
                format!("Resolve ticket {tid}."),
                vec![ToolCall::new("resolve_ticket").with("id", tid)],
            )
        }
        1 => {
            let title = titles[n % titles.len()].to_string();
            let tid = format!("T{}", rng.gen_range(1..=n));
            (
                format!("Create a ticket titled '{title}' and resolve ticket {tid}."),
                vec![
                    ToolCall::new("create_ticket").with("title", title),
                    ToolCall::new("resolve_ticket").with("id", tid),
                ],
            )
        }
        _ => {
            let a = "T1".to_string();
            let b = "T2".to_string();
            (
                format!("Resolve ticket {a} and ticket {b}."),
                vec![
                    ToolCall::new("resolve_ticket").with("id", a),
                    ToolCall::new("resolve_ticket").with("id", b),
                ],
            )
        }
    };
    let mut golden_actions = golden;
    golden_actions.push(ToolCall::new(TERMINATION_TOOL));
    Task {
        id,
        initial_state: EnvState::new(WorldState::Ticket(TicketState { tickets })),
        goal_text,
        golden_actions,
        max_turns: DEFAULT_MAX_TURNS,
    }
}

/// Generate `count` validated tasks. Identical (world, count, seed) inputs
/// produce identical output.
pub fn generate(world: WorldChoice, count: usize, seed: u64) -> Result<Vec<Task>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(count);
    for i in 0..count {
        let pick_file = match world {
            WorldChoice::FileSystem => true,
            WorldChoice::Ticket => false,
            WorldChoice::Mixed => i % 3 != 2, // two file tasks per ticket task
        };
        let task = if pick_file {
            file_task(format!("fs-{seed:04x}-{i:03}"), &mut rng)
        } else {
            ticket_task(format!("tk-{seed:04x}-{i:03}"), &mut rng)
        };
        validate_task(&task)?;
        tasks.push(task);
    }
    Ok(tasks)
}
