//! Stage 1: curate the mixed-quality token-labeled dataset and fit the
//! reward-conditioned policy by maximum likelihood, yielding the frozen
//! reference for stage 2. The unconditioned SFT baseline trains through the
//! same loop with the token features held neutral.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::env::{execute_sequence, Env, Task, TaskSet, ToolCall, Trajectory, TERMINATION_TOOL};
use crate::error::{Error, Result};
use crate::policy::{
    self, goal_feature_tokens, Condition, ConditioningScheme, HistoryCtx, PolicyParams,
};
use crate::reward::{reward_token_of, trajectory_reward, RewardComponents, RewardToken};

/// A trajectory paired with its binary reward, both reward factors, and the
/// conditioning token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrajectory {
    pub trajectory: Trajectory,
    pub token: RewardToken,
    pub reward: u8,
    pub r_state: u8,
    pub r_action: u8,
    /// Prompt-style rendering of the token, kept for log fidelity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

impl LabeledTrajectory {
    /// Label a trajectory by scoring it against its task.
    pub fn scored(trajectory: Trajectory, task: &Task) -> crate::error::Result<Self> {
        let components = trajectory_reward(&trajectory, task)?;
        Ok(Self::new(trajectory, components))
    }

    pub fn new(trajectory: Trajectory, components: RewardComponents) -> Self {
        let token = reward_token_of(components.total);
        Self {
            trajectory,
            token,
            reward: components.total,
            r_state: components.r_state,
            r_action: components.r_action,
            annotation: Some(format!("[Reward Goal: {token}]")),
        }
    }
}

/// Ways a golden replay is corrupted into a failure trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureMode {
    WrongTool,
    WrongArg,
    PrematureDone,
    ExtraAction,
}

pub const ALL_FAILURE_MODES: [FailureMode; 4] = [
    FailureMode::WrongTool,
    FailureMode::WrongArg,
    FailureMode::PrematureDone,
    FailureMode::ExtraAction,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub n_expert: usize,
    pub n_failure: usize,
    pub failure_modes: Vec<FailureMode>,
    /// Fraction of task ids assigned to the train side.
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            n_expert: 16,
            n_failure: 16,
            failure_modes: ALL_FAILURE_MODES.to_vec(),
            split_ratio: 0.9,
            seed: 0,
        }
    }
}

const PERTURB_RETRIES: usize = 24;

fn mutating_tool(name: &str) -> bool {
    matches!(
        name,
        "mv" | "cp" | "rm" | "touch" | "mkdir" | "create_ticket" | "resolve_ticket"
    )
}

/// Replay a prefix of non-terminal golden actions, returning the state
/// reached (candidates are looked up live, so the prefix must be clean).
fn state_after_prefix(env: &Env, prefix: &[ToolCall]) -> Result<crate::env::EnvState> {
    let mut state = env.reset(0)?;
    for call in prefix {
        let (next, _, _) = env.step(&state, call);
        state = next;
    }
    Ok(state)
}

/// Plan one corrupted action sequence, or `None` when the mode does not
/// apply to this task.
fn plan_failure(
    task: &Task,
    mode: FailureMode,
    rng: &mut ChaCha20Rng,
) -> Result<Option<Vec<ToolCall>>> {
    let env = Env::new(task);
    let body = &task.golden_actions[..task.golden_actions.len() - 1];
    let done = ToolCall::new(TERMINATION_TOOL);
    match mode {
        FailureMode::PrematureDone => {
            if body.is_empty() {
                return Ok(None);
            }
            let keep = rng.gen_range(0..body.len());
            let mut plan = body[..keep].to_vec();
            plan.push(done);
            Ok(Some(plan))
        }
        FailureMode::WrongTool | FailureMode::WrongArg => {
            if body.is_empty() {
                return Ok(None);
            }
            let mut order: Vec<usize> = (0..body.len()).collect();
            order.shuffle(rng);
            for j in order {
                let state = state_after_prefix(&env, &body[..j])?;
                let target = &body[j];
                let mut subs: Vec<ToolCall> = env
                    .candidate_actions(&state)
                    .into_iter()
                    .filter(|c| match mode {
                        FailureMode::WrongTool => c.name != target.name && c.args == target.args,
                        _ => c.name == target.name && c.args != target.args,
                    })
                    .collect();
                if subs.is_empty() {
                    continue;
                }
                let pick = rng.gen_range(0..subs.len());
                let mut plan = body[..j].to_vec();
                plan.push(subs.swap_remove(pick));
                plan.extend_from_slice(&body[j + 1..]);
                plan.push(done);
                return Ok(Some(plan));
            }
            Ok(None)
        }
        FailureMode::ExtraAction => {
            let state = state_after_prefix(&env, body)?;
            let mut extras: Vec<ToolCall> = env
                .candidate_actions(&state)
                .into_iter()
                .filter(|c| mutating_tool(&c.name))
                .collect();
            if extras.is_empty() {
                return Ok(None);
            }
            let pick = rng.gen_range(0..extras.len());
            let mut plan = body.to_vec();
            plan.push(extras.swap_remove(pick));
            plan.push(done);
            Ok(Some(plan))
        }
    }
}

/// Corrupt a golden replay until it scores reward 0.
pub fn synthesize_failure(
    task: &Task,
    modes: &[FailureMode],
    rng: &mut ChaCha20Rng,
) -> Result<Trajectory> {
    if modes.is_empty() {
        return Err(Error::Curation {
            task_id: task.id.clone(),
            msg: "no failure modes configured".into(),
        });
    }
    for _ in 0..PERTURB_RETRIES {
        let mode = *modes.choose(rng).unwrap();
        let Some(plan) = plan_failure(task, mode, rng)? else {
            continue;
        };
        let trajectory = execute_sequence(task, &plan)?;
        if trajectory_reward(&trajectory, task)?.total == 0 {
            return Ok(trajectory);
        }
    }
    Err(Error::Curation {
        task_id: task.id.clone(),
        msg: format!("no reward-0 perturbation found in {PERTURB_RETRIES} attempts"),
    })
}

/// Build the mixed-quality labeled dataset and split it by task id. Experts
/// are golden replays; failures are perturbed replays scoring reward 0; the
/// mixture keeps an exact 1:1 expert-to-failure ratio.
pub fn curate(
    tasks: &[Task],
    cfg: &CurationConfig,
) -> Result<(Vec<LabeledTrajectory>, Vec<LabeledTrajectory>)> {
    if tasks.is_empty() {
        return Err(Error::Validation("curation needs at least one task".into()));
    }
    if cfg.n_expert != cfg.n_failure {
        return Err(Error::Validation(format!(
            "expert/failure counts must match 1:1, got {}:{}",
            cfg.n_expert, cfg.n_failure
        )));
    }
    if !(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0) {
        return Err(Error::Validation(format!(
            "split_ratio must lie in (0,1), got {}",
            cfg.split_ratio
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<&Task> = tasks.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    order.shuffle(&mut rng);

    let n_train = ((cfg.split_ratio * order.len() as f64).round() as usize)
        .clamp(1, order.len());
    let train_ids: BTreeSet<String> = order[..n_train].iter().map(|t| t.id.clone()).collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..cfg.n_expert {
        let task = order[i % order.len()];
        let (expert_traj, _) = Env::new(task).replay_golden()?;
        let expert_score = trajectory_reward(&expert_traj, task)?;
        let expert = LabeledTrajectory::new(expert_traj, expert_score);
        let failure_traj = synthesize_failure(task, &cfg.failure_modes, &mut rng)?;
        let failure_score = trajectory_reward(&failure_traj, task)?;
        let failure = LabeledTrajectory::new(failure_traj, failure_score);
        let side = if train_ids.contains(&task.id) {
            &mut train
        } else {
            &mut test
        };
        side.push(expert);
        side.push(failure);
    }
    Ok((train, test))
}

/// Re-verify label soundness: recompute each trajectory's reward factors
/// and token against the task set.
pub fn verify_labels(data: &[LabeledTrajectory], tasks: &TaskSet) -> Result<()> {
    for item in data {
        let task = tasks.get(&item.trajectory.task_id)?;
        let components = trajectory_reward(&item.trajectory, task)?;
        if (components.total, components.r_state, components.r_action)
            != (item.reward, item.r_state, item.r_action)
        {
            return Err(Error::DataIntegrity(format!(
                "task '{}': stored reward fields ({}, {}, {}) but recomputed ({}, {}, {})",
                task.id,
                item.reward,
                item.r_state,
                item.r_action,
                components.total,
                components.r_state,
                components.r_action
            )));
        }
        if reward_token_of(item.reward) != item.token {
            return Err(Error::DataIntegrity(format!(
                "task '{}': token does not match reward {}",
                task.id, item.reward
            )));
        }
    }
    Ok(())
}

pub fn write_dataset(path: &Path, data: &[LabeledTrajectory]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in data {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledTrajectory>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut data = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        data.push(serde_json::from_str(&line)?);
    }
    Ok(data)
}

/// Gradient-descent settings for the maximum-likelihood stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub temperature: f64,
    /// Early-stop when the full-data loss improves by less than this
    /// between epochs. Zero disables early stopping.
    pub tol: f64,
    pub conditioning: ConditioningScheme,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            epochs: 200,
            batch: 16,
            seed: 0,
            temperature: 1.0,
            tol: 1e-7,
            conditioning: ConditioningScheme::EveryTurn,
        }
    }
}

/// Cache of per-task goal feature tokens.
struct GoalCache<'a> {
    tasks: &'a TaskSet,
    cache: BTreeMap<String, Vec<String>>,
}

impl<'a> GoalCache<'a> {
    fn new(tasks: &'a TaskSet) -> Self {
        Self {
            tasks,
            cache: BTreeMap::new(),
        }
    }

    fn get(&mut self, task_id: &str) -> Result<Vec<String>> {
        if let Some(tokens) = self.cache.get(task_id) {
            return Ok(tokens.clone());
        }
        let task = self.tasks.get(task_id)?;
        let tokens = goal_feature_tokens(&task.goal_text);
        self.cache.insert(task_id.to_string(), tokens.clone());
        Ok(tokens)
    }
}

fn trajectory_nll(
    params: &PolicyParams,
    trajectory: &Trajectory,
    token: Condition,
    goal_tokens: &[String],
    temperature: f64,
    scheme: ConditioningScheme,
) -> Result<f64> {
    let mut nll = 0.0;
    for (t, step) in trajectory.steps.iter().enumerate() {
        if step.chosen >= step.candidates.len() {
            return Err(Error::DataIntegrity(format!(
                "step {t}: chosen action is not among the stored candidates"
            )));
        }
        let ctx = HistoryCtx::at_step(goal_tokens.to_vec(), &trajectory.steps, t);
        let cond = scheme.condition_at(token, t);
        let feats = policy::featurize_all(&ctx, cond, &step.candidates, params.dim());
        let probs = policy::probs_for(params, &feats, temperature);
        nll -= probs[step.chosen].ln();
    }
    Ok(nll)
}

fn mean_nll(
    params: &PolicyParams,
    items: &[(&Trajectory, Condition)],
    goals: &mut GoalCache,
    temperature: f64,
    scheme: ConditioningScheme,
) -> Result<f64> {
    let mut total = 0.0;
    for (trajectory, token) in items {
        let goal_tokens = goals.get(&trajectory.task_id)?;
        total += trajectory_nll(params, trajectory, *token, &goal_tokens, temperature, scheme)?;
    }
    let loss = total / items.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Training("non-finite loss".into()));
    }
    Ok(loss)
}

/// Mean negative log-likelihood of the labeled data under the conditional
/// policy.
pub fn rctp_loss(
    params: &PolicyParams,
    data: &[LabeledTrajectory],
    tasks: &TaskSet,
    optim: &OptimConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Validation("loss of an empty dataset".into()));
    }
    let items: Vec<(&Trajectory, Condition)> = data
        .iter()
        .map(|d| (&d.trajectory, Condition::from(d.token)))
        .collect();
    let mut goals = GoalCache::new(tasks);
    mean_nll(params, &items, &mut goals, optim.temperature, optim.conditioning)
}

/// Shared minibatch gradient-descent loop over (trajectory, condition)
/// pairs. Deterministic for a fixed seed. Returns the trained parameters
/// together with the full-data loss before training and after each epoch.
fn train_mle(
    init: &PolicyParams,
    items: &[(&Trajectory, Condition)],
    tasks: &TaskSet,
    optim: &OptimConfig,
) -> Result<(PolicyParams, Vec<f64>)> {
    if items.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    init.assert_finite()?;
    let mut goals = GoalCache::new(tasks);
    let mut params = init.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(optim.seed);
    let initial_loss = mean_nll(&params, items, &mut goals, optim.temperature, optim.conditioning)?;
    let mut curve = vec![initial_loss];
    let mut prev_loss = initial_loss;
    let batch = optim.batch.max(1);

    for _epoch in 0..optim.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; params.dim()];
            let scale = -1.0 / chunk.len() as f64;
            for &i in chunk {
                let (trajectory, token) = items[i];
                let goal_tokens = goals.get(&trajectory.task_id)?;
                for (t, step) in trajectory.steps.iter().enumerate() {
                    if step.chosen >= step.candidates.len() {
                        return Err(Error::DataIntegrity(format!(
                            "step {t}: chosen action is not among the stored candidates"
                        )));
                    }
                    let ctx = HistoryCtx::at_step(goal_tokens.clone(), &trajectory.steps, t);
                    let cond = optim.conditioning.condition_at(token, t);
                    let feats =
                        policy::featurize_all(&ctx, cond, &step.candidates, params.dim());
                    policy::accumulate_grad_logprob(
                        &params,
                        &feats,
                        step.chosen,
                        optim.temperature,
                        scale,
                        &mut grad,
                    );
                }
            }
            for (w, g) in params.weights.iter_mut().zip(&grad) {
                *w -= optim.lr * g;
            }
            params.version += 1;
        }
        let loss = mean_nll(&params, items, &mut goals, optim.temperature, optim.conditioning)?;
        curve.push(loss);
        if optim.tol > 0.0 && (prev_loss - loss).abs() < optim.tol {
            prev_loss = loss;
            break;
        }
        prev_loss = loss;
    }

    if prev_loss > initial_loss + 1e-9 {
        return Err(Error::Training(format!(
            "loss rose from {initial_loss} to {prev_loss}; lower the learning rate"
        )));
    }
    Ok((params, curve))
}

/// Fit the reward-conditioned policy on the mixed dataset, producing the
/// stage-2 reference.
pub fn train_rctp(
    init: &PolicyParams,
    data: &[LabeledTrajectory],
    tasks: &TaskSet,
    optim: &OptimConfig,
) -> Result<PolicyParams> {
    train_rctp_with_curve(init, data, tasks, optim).map(|(p, _)| p)
}

/// [`train_rctp`] plus the per-epoch full-data loss curve.
pub fn train_rctp_with_curve(
    init: &PolicyParams,
    data: &[LabeledTrajectory],
    tasks: &TaskSet,
    optim: &OptimConfig,
) -> Result<(PolicyParams, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    verify_labels(data, tasks)?;
    let items: Vec<(&Trajectory, Condition)> = data
        .iter()
        .map(|d| (&d.trajectory, Condition::from(d.token)))
        .collect();
    train_mle(init, &items, tasks, optim)
}

/// Fit the unconditioned SFT baseline on expert-only data; the token
/// features stay at the neutral value.
pub fn train_sft(
    init: &PolicyParams,
    expert_data: &[LabeledTrajectory],
    tasks: &TaskSet,
    optim: &OptimConfig,
) -> Result<PolicyParams> {
    train_sft_with_curve(init, expert_data, tasks, optim).map(|(p, _)| p)
}

/// [`train_sft`] plus the per-epoch full-data loss curve.
pub fn train_sft_with_curve(
    init: &PolicyParams,
    expert_data: &[LabeledTrajectory],
    tasks: &TaskSet,
    optim: &OptimConfig,
) -> Result<(PolicyParams, Vec<f64>)> {
    if expert_data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if let Some(bad) = expert_data.iter().find(|d| d.reward != 1) {
        return Err(Error::Validation(format!(
            "SFT data must be expert-only; task '{}' has reward 0",
            bad.trajectory.task_id
        )));
    }
    let items: Vec<(&Trajectory, Condition)> = expert_data
        .iter()
        .map(|d| (&d.trajectory, Condition::Neutral))
        .collect();
    train_mle(init, &items, tasks, optim)
}

/// Largest per-step cross-entropy `-ln pi(a*|h*)` along golden replays:
/// the measured peakedness of a trained policy.
pub fn measure_eps_sft(
    params: &PolicyParams,
    tasks: &TaskSet,
    condition: Condition,
    temperature: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for task in tasks.tasks() {
        let (trajectory, _) = Env::new(task).replay_golden()?;
        let goal_tokens = goal_feature_tokens(&task.goal_text);
        for (t, step) in trajectory.steps.iter().enumerate() {
            let ctx = HistoryCtx::at_step(goal_tokens.clone(), &trajectory.steps, t);
            let feats = policy::featurize_all(&ctx, condition, &step.candidates, params.dim());
            let probs = policy::probs_for(params, &feats, temperature);
            worst = worst.max(-probs[step.chosen].ln());
        }
    }
    Ok(worst)
}
