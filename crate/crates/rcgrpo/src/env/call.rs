//! Tool-call values: a named tool plus an ordered argument map.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Scalar argument value carried by a tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Str(String),
    Int(i64),
    Bool(bool),
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Str(s) => write!(f, "{:?}", s),
            ArgValue::Int(i) => write!(f, "{i}"),
            ArgValue::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl From<&str> for ArgValue {
    fn from(s: &str) -> Self {
        ArgValue::Str(s.to_string())
    }
}

impl From<String> for ArgValue {
    fn from(s: String) -> Self {
        ArgValue::Str(s)
    }
}

impl From<i64> for ArgValue {
    fn from(i: i64) -> Self {
        ArgValue::Int(i)
    }
}

impl From<bool> for ArgValue {
    fn from(b: bool) -> Self {
        ArgValue::Bool(b)
    }
}

/// A named tool invocation with an ordered argument map.
///
/// Equality ignores argument order; argument names are unique by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub args: IndexMap<String, ArgValue>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            args: IndexMap::new(),
        }
    }

    /// Builder-style argument insertion. Re-inserting a name overwrites it.
    pub fn with(mut self, key: impl Into<String>, value: impl Into<ArgValue>) -> Self {
        self.args.insert(key.into(), value.into());
        self
    }

    pub fn arg(&self, key: &str) -> Option<&ArgValue> {
        self.args.get(key)
    }

    /// String argument lookup; `None` when absent or not a string.
    pub fn str_arg(&self, key: &str) -> Option<&str> {
        match self.args.get(key) {
            Some(ArgValue::Str(s)) => Some(s.as_str()),
            _ => None,
        }
    }

    /// Canonical text form: name plus arguments in sorted-key order.
    ///
    /// Used for the lexicographic candidate ordering and for feature hashing,
    /// so it must stay stable.
    pub fn canonical(&self) -> String {
        let mut keys: Vec<&String> = self.args.keys().collect();
        keys.sort();
        let args = keys
            .iter()
            .map(|k| format!("{k}={}", self.args[*k]))
            .collect::<Vec<_>>()
            .join(",");
        format!("{}({})", self.name, args)
    }
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sorts_argument_names() {
        let a = ToolCall::new("mv").with("src", "a").with("dst", "b");
        let b = ToolCall::new("mv").with("dst", "b").with("src", "a");
        assert_eq!(a.canonical(), r#"mv(dst="b",src="a")"#);
        assert_eq!(a.canonical(), b.canonical());
        assert_eq!(a, b);
    }

    #[test]
    fn equality_is_order_insensitive_but_value_sensitive() {
        let a = ToolCall::new("cp").with("src", "a").with("dst", "b");
        let c = ToolCall::new("cp").with("src", "a").with("dst", "c");
        assert_ne!(a, c);
    }

    #[test]
    fn json_round_trip_preserves_value_kinds() {
        let call = ToolCall::new("t")
            .with("s", "x")
            .with("n", 3i64)
            .with("b", true);
        let json = serde_json::to_string(&call).unwrap();
        let back: ToolCall = serde_json::from_str(&json).unwrap();
        assert_eq!(call, back);
        assert_eq!(back.arg("n"), Some(&ArgValue::Int(3)));
        assert_eq!(back.arg("b"), Some(&ArgValue::Bool(true)));
    }
}
