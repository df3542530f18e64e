//! File-world tool semantics: ls, cd, mv, cp, rm, touch, grep, mkdir.
//!
//! Every function here is pure; callers receive a new state on success and
//! the untouched input state on error.

use super::call::ToolCall;
use super::state::{FileSystemState, Node};

/// Normalize a path to a canonical absolute form, resolving against `cwd`
/// when relative. Rejects empty paths and `.`/`..` segments.
pub fn resolve(cwd: &str, path: &str) -> Result<String, String> {
    if path.is_empty() {
        return Err("empty path".to_string());
    }
    let joined = if path.starts_with('/') {
        path.to_string()
    } else {
        format!("{}/{}", cwd.trim_end_matches('/'), path)
    };
    let mut parts: Vec<&str> = Vec::new();
    for seg in joined.split('/') {
        match seg {
            "" => {}
            "." | ".." => return Err(format!("unsupported path segment '{seg}'")),
            s => parts.push(s),
        }
    }
    if parts.is_empty() {
        Ok("/".to_string())
    } else {
        Ok(format!("/{}", parts.join("/")))
    }
}

pub fn basename(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

pub fn parent(path: &str) -> String {
    if path == "/" {
        return "/".to_string();
    }
    match path.rfind('/') {
        Some(0) | None => "/".to_string(),
        Some(i) => path[..i].to_string(),
    }
}

/// True when `q` equals `p` or lies inside the subtree rooted at `p`.
pub fn is_within(p: &str, q: &str) -> bool {
    q == p || q.starts_with(&format!("{}/", p.trim_end_matches('/')))
}

fn require_str<'a>(call: &'a ToolCall, key: &str) -> Result<&'a str, String> {
    call.str_arg(key)
        .ok_or_else(|| format!("missing required argument '{key}'"))
}

fn subtree_keys(fs: &FileSystemState, root: &str) -> Vec<String> {
    fs.tree
        .keys()
        .filter(|k| is_within(root, k))
        .cloned()
        .collect()
}

/// Apply one file-world tool call. `Err` leaves the world untouched.
pub fn apply(fs: &FileSystemState, call: &ToolCall) -> Result<(FileSystemState, String), String> {
    match call.name.as_str() {
        "ls" => {
            let mut names: Vec<&str> = fs
                .tree
                .keys()
                .filter(|k| k.as_str() != fs.cwd && parent(k) == fs.cwd)
                .map(|k| basename(k))
                .collect();
            names.sort_unstable();
            let listing = if names.is_empty() {
                "(empty)".to_string()
            } else {
                names.join(" ")
            };
            Ok((fs.clone(), listing))
        }
        "cd" => {
            let target = resolve(&fs.cwd, require_str(call, "path")?)?;
            match fs.tree.get(&target) {
                Some(Node::Dir) => {
                    let mut next = fs.clone();
                    next.cwd = target.clone();
                    Ok((next, format!("cwd is now {target}")))
                }
                Some(_) => Err(format!("'{target}' is not a directory")),
                None => Err(format!("no such directory '{target}'")),
            }
        }
        "mkdir" => {
            let target = resolve(&fs.cwd, require_str(call, "path")?)?;
            if fs.tree.contains_key(&target) {
                return Err(format!("'{target}' already exists"));
            }
            check_parent_dir(fs, &target)?;
            let mut next = fs.clone();
            next.tree.insert(target.clone(), Node::Dir);
            Ok((next, format!("created directory {target}")))
        }
        "touch" => {
            let target = resolve(&fs.cwd, require_str(call, "path")?)?;
            if fs.tree.contains_key(&target) {
                return Err(format!("'{target}' already exists"));
            }
            check_parent_dir(fs, &target)?;
            let mut next = fs.clone();
            next.tree.insert(
                target.clone(),
                Node::File {
                    content: String::new(),
                },
            );
            Ok((next, format!("created file {target}")))
        }
        "rm" => {
            let target = resolve(&fs.cwd, require_str(call, "path")?)?;
            if target == "/" {
                return Err("cannot remove the root directory".to_string());
            }
            if !fs.tree.contains_key(&target) {
                return Err(format!("no such path '{target}'"));
            }
            if is_within(&target, &fs.cwd) {
                return Err(format!("cannot remove '{target}': contains the working directory"));
            }
            let mut next = fs.clone();
            for key in subtree_keys(fs, &target) {
                next.tree.remove(&key);
            }
            Ok((next, format!("removed {target}")))
        }
        "mv" | "cp" => {
            let src = resolve(&fs.cwd, require_str(call, "src")?)?;
            let dst = resolve(&fs.cwd, require_str(call, "dst")?)?;
            if src == "/" {
                return Err("cannot move or copy the root directory".to_string());
            }
            if !fs.tree.contains_key(&src) {
                return Err(format!("no such path '{src}'"));
            }
            // Moving into an existing directory keeps the basename.
            let target = match fs.tree.get(&dst) {
                Some(Node::Dir) => format!("{}/{}", dst.trim_end_matches('/'), basename(&src)),
                _ => dst,
            };
            if fs.tree.contains_key(&target) {
                return Err(format!("'{target}' already exists"));
            }
            if is_within(&src, &target) {
                return Err(format!("cannot place '{src}' inside itself"));
            }
            check_parent_dir(fs, &target)?;
            let mut next = fs.clone();
            let keys = subtree_keys(fs, &src);
            for key in &keys {
                let node = fs.tree[key].clone();
                let rel = &key[src.len()..];
                next.tree.insert(format!("{target}{rel}"), node);
            }
            if call.name == "mv" {
                for key in &keys {
                    next.tree.remove(key);
                }
                if is_within(&src, &next.cwd) {
                    let rel = next.cwd[src.len()..].to_string();
                    next.cwd = format!("{target}{rel}");
                }
                Ok((next, format!("moved {src} -> {target}")))
            } else {
                Ok((next, format!("copied {src} -> {target}")))
            }
        }
        "grep" => {
            let target = resolve(&fs.cwd, require_str(call, "path")?)?;
            let pattern = require_str(call, "pattern")?;
            match fs.tree.get(&target) {
                Some(Node::File { content }) => {
                    let hits: Vec<&str> =
                        content.lines().filter(|l| l.contains(pattern)).collect();
                    let payload = if hits.is_empty() {
                        format!("0 matching lines in {target}")
                    } else {
                        format!("{} matching lines: {}", hits.len(), hits.join(" | "))
                    };
                    Ok((fs.clone(), payload))
                }
                Some(Node::Dir) => Err(format!("'{target}' is a directory")),
                None => Err(format!("no such file '{target}'")),
            }
        }
        other => Err(format!("unknown tool '{other}'")),
    }
}

fn check_parent_dir(fs: &FileSystemState, path: &str) -> Result<(), String> {
    let p = parent(path);
    match fs.tree.get(&p) {
        Some(Node::Dir) => Ok(()),
        Some(_) => Err(format!("'{p}' is not a directory")),
        None => Err(format!("no such directory '{p}'")),
    }
}
