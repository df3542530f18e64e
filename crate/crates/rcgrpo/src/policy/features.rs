//! Hashed feature construction for the conditional policy.
//!
//! A decision context is (recent history, conditioning token, candidate
//! call). Features that do not interact with the candidate cancel inside the
//! softmax, so every contextual signal is also crossed with the candidate's
//! canonical form; the token additionally keeps a dedicated coordinate.

use serde::{Deserialize, Serialize};

use crate::env::{ToolCall, TrajStep};
use crate::reward::RewardToken;

/// Default hashed-feature dimension.
pub const DEFAULT_DIM: usize = 4096;

/// How many trailing observations feed the history features.
pub const HISTORY_WINDOW: usize = 3;

/// Turn indices are capped before hashing so late turns share features.
const TURN_CAP: usize = 12;

/// Conditioning input to the policy: a reward token, or the neutral value
/// used by the unconditioned baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    High,
    Low,
    Neutral,
}

impl Condition {
    pub fn key(&self) -> &'static str {
        match self {
            Condition::High => "h",
            Condition::Low => "l",
            Condition::Neutral => "n",
        }
    }
}

impl From<RewardToken> for Condition {
    fn from(token: RewardToken) -> Self {
        match token {
            RewardToken::High => Condition::High,
            RewardToken::Low => Condition::Low,
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::High => f.write_str("high"),
            Condition::Low => f.write_str("low"),
            Condition::Neutral => f.write_str("neutral"),
        }
    }
}

/// Where the conditioning token is injected along an episode: at every
/// assistant turn, or only on the first turn (the prompt-annotation
/// variant). Turns outside the scheme see the neutral condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningScheme {
    #[default]
    EveryTurn,
    FirstTurnOnly,
}

impl ConditioningScheme {
    pub fn condition_at(&self, token: Condition, turn: usize) -> Condition {
        match self {
            ConditioningScheme::EveryTurn => token,
            ConditioningScheme::FirstTurnOnly if turn == 0 => token,
            ConditioningScheme::FirstTurnOnly => Condition::Neutral,
        }
    }
}

/// FNV-1a 64-bit. Stable across runs and platforms by construction.
pub fn fnv1a64(key: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in key.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Hashed index of a feature key within dimension `dim`.
pub fn feature_index(key: &str, dim: usize) -> usize {
    (fnv1a64(key) % dim as u64) as usize
}

/// Sparse view of an F-dimensional feature vector: sorted unique indices
/// with summed values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub dim: usize,
    pairs: Vec<(u32, f64)>,
}

impl FeatureVector {
    fn from_keys(keys: &[String], dim: usize) -> Self {
        let mut pairs: Vec<(u32, f64)> = keys
            .iter()
            .map(|k| (feature_index(k, dim) as u32, 1.0))
            .collect();
        pairs.sort_unstable_by_key(|(i, _)| *i);
        // merge hash collisions by summing
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => merged.push((i, v)),
            }
        }
        Self { dim, pairs: merged }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.pairs.iter().map(|(i, v)| (*i as usize, *v))
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        debug_assert_eq!(weights.len(), self.dim);
        self.pairs
            .iter()
            .map(|(i, v)| weights[*i as usize] * v)
            .sum()
    }

    /// Accumulate `scale * self` into a dense buffer.
    pub fn add_scaled_into(&self, scale: f64, acc: &mut [f64]) {
        debug_assert_eq!(acc.len(), self.dim);
        for (i, v) in &self.pairs {
            acc[*i as usize] += scale * v;
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        for (i, v) in &self.pairs {
            dense[*i as usize] += v;
        }
        dense
    }
}

/// Decision context: everything the policy may condition on besides the
/// candidate itself.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryCtx {
    pub turn: usize,
    /// Most recent first: (tool name, succeeded) for up to
    /// [`HISTORY_WINDOW`] previous steps.
    pub recent: Vec<(String, bool)>,
    /// Entity tokens extracted from the task goal text.
    pub goal_tokens: Vec<String>,
}

impl HistoryCtx {
    pub fn start(goal_tokens: Vec<String>) -> Self {
        Self {
            turn: 0,
            recent: Vec::new(),
            goal_tokens,
        }
    }

    /// Context at step `upto` of a stored trajectory.
    pub fn at_step(goal_tokens: Vec<String>, steps: &[TrajStep], upto: usize) -> Self {
        let mut recent = Vec::new();
        for step in steps[..upto].iter().rev().take(HISTORY_WINDOW) {
            recent.push((
                step.chosen_call().name.clone(),
                !step.observation.is_error(),
            ));
        }
        Self {
            turn: upto,
            recent,
            goal_tokens,
        }
    }

    /// Advance after executing `call` with outcome `ok`.
    pub fn push(&mut self, call: &ToolCall, ok: bool) {
        self.recent.insert(0, (call.name.clone(), ok));
        self.recent.truncate(HISTORY_WINDOW);
        self.turn += 1;
    }
}

/// Entity tokens of a goal text, in first-mention order, as consumed by the
/// feature map.
pub fn goal_feature_tokens(goal_text: &str) -> Vec<String> {
    let e = crate::env::candidates::goal_entities(goal_text);
    let mut tokens = e.paths;
    tokens.extend(e.quoted);
    tokens.extend(e.ticket_ids);
    tokens
}

/// Featurize one (context, condition, candidate) triple.
pub fn featurize(
    ctx: &HistoryCtx,
    condition: Condition,
    candidate: &ToolCall,
    dim: usize,
) -> FeatureVector {
    let canon = candidate.canonical();
    let tok = condition.key();
    let turn = ctx.turn.min(TURN_CAP);
    let mut keys = Vec::with_capacity(6 + ctx.recent.len() + ctx.goal_tokens.len());
    keys.push(format!("tok:{tok}"));
    keys.push(format!("cand:{canon}"));
    keys.push(format!("tool:{}", candidate.name));
    keys.push(format!("tokx:{tok}|{canon}"));
    keys.push(format!("turn:{turn}|{canon}"));
    for (i, (tool, ok)) in ctx.recent.iter().enumerate() {
        let s = if *ok { "s" } else { "e" };
        keys.push(format!("hist:{}:{tool}:{s}|{canon}", i + 1));
    }
    for g in &ctx.goal_tokens {
        keys.push(format!("goal:{g}|{canon}"));
    }
    FeatureVector::from_keys(&keys, dim)
}

/// Featurize every candidate of a decision point.
pub fn featurize_all(
    ctx: &HistoryCtx,
    condition: Condition,
    candidates: &[ToolCall],
    dim: usize,
) -> Vec<FeatureVector> {
    candidates
        .iter()
        .map(|c| featurize(ctx, condition, c, dim))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_hashes_are_frozen() {
        // values recorded from the reference FNV-1a 64 computation
        assert_eq!(fnv1a64("tok:high"), 8488252456826797949);
        assert_eq!(fnv1a64("tok:low"), 18077925413637172897);
        assert_eq!(fnv1a64("cand:done()"), 9366597061458972652);
        assert_eq!(fnv1a64("tool:mv"), 17921503798795314840);
        assert_eq!(feature_index("tok:high", 4096), 3965);
        assert_eq!(feature_index("tok:low", 4096), 3745);
        assert_eq!(feature_index("cand:done()", 4096), 4076);
        assert_eq!(feature_index("tool:mv", 4096), 1688);
    }

    #[test]
    fn featurize_is_deterministic() {
        let ctx = HistoryCtx::start(vec!["report.csv".to_string()]);
        let cand = ToolCall::new("mv").with("src", "report.csv").with("dst", "/archive");
        let a = featurize(&ctx, Condition::High, &cand, DEFAULT_DIM);
        let b = featurize(&ctx, Condition::High, &cand, DEFAULT_DIM);
        assert_eq!(a, b);
    }

    #[test]
    fn token_changes_both_dedicated_and_crossed_coordinates() {
        let ctx = HistoryCtx::start(vec![]);
        let cand = ToolCall::new("done");
        let hi = featurize(&ctx, Condition::High, &cand, DEFAULT_DIM);
        let lo = featurize(&ctx, Condition::Low, &cand, DEFAULT_DIM);
        assert_ne!(hi, lo);
        let hi_dense = hi.to_dense();
        let lo_dense = lo.to_dense();
        // the dedicated token coordinate flips between the two vectors
        assert!(hi_dense[feature_index("tok:h", DEFAULT_DIM)] > 0.0);
        assert!(lo_dense[feature_index("tok:l", DEFAULT_DIM)] > 0.0);
        // and a token-crossed candidate coordinate flips as well
        assert!(hi_dense[feature_index("tokx:h|done()", DEFAULT_DIM)] > 0.0);
        assert!(lo_dense[feature_index("tokx:l|done()", DEFAULT_DIM)] > 0.0);
    }

    #[test]
    fn collisions_merge_by_summing() {
        let fv = FeatureVector::from_keys(
            &["a".to_string(), "a".to_string(), "b".to_string()],
            DEFAULT_DIM,
        );
        let dense = fv.to_dense();
        assert_eq!(dense[feature_index("a", DEFAULT_DIM)], 2.0);
        assert_eq!(dense[feature_index("b", DEFAULT_DIM)], 1.0);
        assert_eq!(dense.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn history_context_tracks_last_three() {
        let mut ctx = HistoryCtx::start(vec![]);
        for (name, ok) in [("ls", true), ("cd", false), ("mv", true), ("rm", true)] {
            ctx.push(&ToolCall::new(name), ok);
        }
        assert_eq!(ctx.turn, 4);
        assert_eq!(
            ctx.recent,
            vec![
                ("rm".to_string(), true),
                ("mv".to_string(), true),
                ("cd".to_string(), false)
            ]
        );
    }
}
