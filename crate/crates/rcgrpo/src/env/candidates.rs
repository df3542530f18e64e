//! Candidate-action enumeration: the finite per-turn action space.
//!
//! Candidates are built by crossing the tool registry with the entity pool
//! visible in the current state and the task goal text. The list is
//! deterministic, canonically ordered, always contains the termination tool,
//! and stays within [`CANDIDATE_LIMIT`].

use std::collections::BTreeSet;

use super::call::ToolCall;
use super::filesystem::{parent, resolve};
use super::state::{FileSystemState, Node, TicketState, WorldState};
use super::task::Task;
use super::TERMINATION_TOOL;

pub const CANDIDATE_LIMIT: usize = 256;

/// Entities mentioned in goal text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoalEntities {
    /// Path-looking tokens (contain '/' or '.'), e.g. `report.csv`, `/archive`.
    pub paths: Vec<String>,
    /// Single-quoted spans, used as grep patterns and ticket titles.
    pub quoted: Vec<String>,
    /// Ticket-id tokens of the form `T<n>`.
    pub ticket_ids: Vec<String>,
}

/// Extract entities from goal text. Deterministic, first-mention order.
pub fn goal_entities(goal_text: &str) -> GoalEntities {
    let mut out = GoalEntities::default();

    // Quoted spans first, so their interiors are not re-tokenized below.
    let mut rest = goal_text;
    let mut stripped = String::with_capacity(goal_text.len());
    while let Some(start) = rest.find('\'') {
        stripped.push_str(&rest[..start]);
        match rest[start + 1..].find('\'') {
            Some(len) => {
                let span = &rest[start + 1..start + 1 + len];
                if !span.is_empty() && !out.quoted.iter().any(|q| q == span) {
                    out.quoted.push(span.to_string());
                }
                stripped.push(' ');
                rest = &rest[start + len + 2..];
            }
            None => {
                rest = &rest[start + 1..];
            }
        }
    }
    stripped.push_str(rest);

    for raw in stripped.split_whitespace() {
        let token = raw.trim_matches(|c: char| ",.;:!?\"()[]{}".contains(c) && c != '/');
        let token = token.trim_end_matches(|c: char| ",.;:!?".contains(c));
        if token.is_empty() {
            continue;
        }
        let is_ticket_id = token.len() > 1
            && token.starts_with('T')
            && token[1..].chars().all(|c| c.is_ascii_digit());
        if is_ticket_id {
            if !out.ticket_ids.iter().any(|t| t == token) {
                out.ticket_ids.push(token.to_string());
            }
            continue;
        }
        if (token.contains('/') || token.contains('.')) && token != "/" {
            if !out.paths.iter().any(|t| t == token) {
                out.paths.push(token.to_string());
            }
        }
    }
    out
}

/// Canonical reference for a tree path: basename when it sits in `cwd`,
/// absolute path otherwise.
fn path_ref(cwd: &str, path: &str) -> String {
    if parent(path) == cwd {
        super::filesystem::basename(path).to_string()
    } else {
        path.to_string()
    }
}

fn file_world_candidates(fs: &FileSystemState, goal: &GoalEntities) -> Vec<ToolCall> {
    let mut file_refs = BTreeSet::new();
    let mut dir_refs = BTreeSet::new();
    dir_refs.insert("/".to_string());
    for (path, node) in &fs.tree {
        if path == "/" {
            continue;
        }
        let r = path_ref(&fs.cwd, path);
        match node {
            Node::File { .. } => {
                file_refs.insert(r);
            }
            Node::Dir => {
                dir_refs.insert(r);
            }
        }
    }

    // Goal-mentioned paths that do not resolve to an existing node are
    // creation targets; all goal paths are movement destinations.
    let mut missing_goal_paths = BTreeSet::new();
    let mut dst_refs: BTreeSet<String> = dir_refs.clone();
    for p in &goal.paths {
        dst_refs.insert(p.clone());
        if let Ok(abs) = resolve(&fs.cwd, p) {
            if !fs.tree.contains_key(&abs) {
                missing_goal_paths.insert(p.clone());
            }
        }
    }
    let mut removable: BTreeSet<String> = file_refs.clone();
    removable.extend(dir_refs.iter().filter(|r| r.as_str() != "/").cloned());

    let mut out = Vec::new();
    out.push(ToolCall::new(TERMINATION_TOOL));
    out.push(ToolCall::new("ls"));
    for d in dir_refs.iter() {
        out.push(ToolCall::new("cd").with("path", d.as_str()));
    }
    for p in &missing_goal_paths {
        out.push(ToolCall::new("mkdir").with("path", p.as_str()));
        out.push(ToolCall::new("touch").with("path", p.as_str()));
    }
    for p in &removable {
        out.push(ToolCall::new("rm").with("path", p.as_str()));
    }
    for src in &file_refs {
        let src_abs = resolve(&fs.cwd, src).ok();
        for dst in &dst_refs {
            if resolve(&fs.cwd, dst).ok() == src_abs {
                continue;
            }
            out.push(ToolCall::new("mv").with("src", src.as_str()).with("dst", dst.as_str()));
            out.push(ToolCall::new("cp").with("src", src.as_str()).with("dst", dst.as_str()));
        }
    }
    for f in &file_refs {
        for pat in &goal.quoted {
            out.push(
                ToolCall::new("grep")
                    .with("path", f.as_str())
                    .with("pattern", pat.as_str()),
            );
        }
    }
    out
}

fn ticket_world_candidates(ts: &TicketState, goal: &GoalEntities) -> Vec<ToolCall> {
    let mut ids: BTreeSet<String> = ts.tickets.keys().cloned().collect();
    ids.extend(goal.ticket_ids.iter().cloned());

    let mut out = Vec::new();
    out.push(ToolCall::new(TERMINATION_TOOL));
    for title in &goal.quoted {
        out.push(ToolCall::new("create_ticket").with("title", title.as_str()));
    }
    for id in &ids {
        out.push(ToolCall::new("get_ticket").with("id", id.as_str()));
        out.push(ToolCall::new("resolve_ticket").with("id", id.as_str()));
    }
    out
}

/// Enumerate candidates for a state in the context of a task.
pub fn enumerate(world: &WorldState, task: &Task) -> Vec<ToolCall> {
    let goal = goal_entities(&task.goal_text);
    let mut calls = match world {
        WorldState::FileSystem(fs) => file_world_candidates(fs, &goal),
        WorldState::Ticket(ts) => ticket_world_candidates(ts, &goal),
    };
    calls.sort_by(|a, b| (a.name.as_str(), a.canonical()).cmp(&(b.name.as_str(), b.canonical())));
    calls.dedup();
    debug_assert!(!calls.is_empty());
    debug_assert!(calls.len() <= CANDIDATE_LIMIT, "candidate overflow: {}", calls.len());
    calls
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_extraction_finds_paths_quotes_and_ids() {
        let g = goal_entities(
            "Move report.csv to /archive, search 'Error' in temp.log, then resolve ticket T12.",
        );
        assert_eq!(g.paths, vec!["report.csv", "/archive", "temp.log"]);
        assert_eq!(g.quoted, vec!["Error"]);
        assert_eq!(g.ticket_ids, vec!["T12"]);
    }

    #[test]
    fn goal_extraction_ignores_plain_words() {
        let g = goal_entities("Tidy the workspace now. Then stop.");
        assert!(g.paths.is_empty());
        assert!(g.quoted.is_empty());
        assert!(g.ticket_ids.is_empty());
    }

    #[test]
    fn trailing_sentence_punctuation_is_trimmed() {
        let g = goal_entities("Delete temp.log.");
        assert_eq!(g.paths, vec!["temp.log"]);
    }
}
