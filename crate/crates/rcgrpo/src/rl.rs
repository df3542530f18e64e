//! Stage 2: group-relative policy optimization with optional
//! reward-conditioned rollouts.
//!
//! Each training step rolls out groups of trajectories under a frozen
//! snapshot, normalizes rewards within each group into advantages, and takes
//! one gradient step on the clipped trajectory-ratio objective with an exact
//! KL penalty toward the frozen stage-1 reference.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, Task, Termination, TrajStep, Trajectory, TERMINATION_TOOL};
use crate::error::{Error, Result};
use crate::metrics::{advantage_spread, grad_norm, MetricsRecord};
use crate::policy::{
    self, goal_feature_tokens, Condition, ConditioningScheme, HistoryCtx, PolicyParams,
};
use crate::reward::{trajectory_reward, RewardToken};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RLMode {
    Grpo,
    RcGrpo,
}

impl std::str::FromStr for RLMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(RLMode::Grpo),
            "rc-grpo" | "rc_grpo" => Ok(RLMode::RcGrpo),
            other => Err(Error::Validation(format!("unknown mode '{other}'"))),
        }
    }
}

/// Stage-2 configuration. Serialized field names are the config-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RLConfig {
    pub mode: RLMode,
    /// Group size G.
    pub group_size: usize,
    /// P(HIGH) when sampling conditioning tokens.
    pub p: f64,
    /// KL coefficient.
    pub beta: f64,
    /// Clipping range for the trajectory importance ratio.
    pub eps_clip: f64,
    /// Numerical stability constant in the advantage denominator.
    pub eps_stab: f64,
    pub lr: f64,
    pub steps: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Tasks sampled per training step.
    pub batch: usize,
    pub conditioning: ConditioningScheme,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            mode: RLMode::RcGrpo,
            group_size: 5,
            p: 0.5,
            beta: 0.1,
            eps_clip: 0.2,
            eps_stab: 1e-6,
            lr: 0.05,
            steps: 350,
            temperature: 1.0,
            seed: 0,
            batch: 8,
            conditioning: ConditioningScheme::EveryTurn,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Validation("group_size must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Validation(format!("p must lie in [0,1], got {}", self.p)));
        }
        if self.beta < 0.0 {
            return Err(Error::Validation("beta must be nonnegative".into()));
        }
        if self.eps_clip <= 0.0 {
            return Err(Error::Validation("eps_clip must be positive".into()));
        }
        if self.eps_stab <= 0.0 {
            return Err(Error::Validation("eps_stab must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Validation("temperature must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Validation("batch must be positive".into()));
        }
        Ok(())
    }
}

/// One task's G conditioned rollouts with group-normalized advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub task_id: String,
    pub tokens: Vec<Condition>,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<u8>,
    pub advantages: Vec<f64>,
}

impl GroupRollout {
    pub fn degenerate(&self) -> bool {
        self.rewards.iter().all(|r| *r == self.rewards[0])
    }
}

/// Draw G i.i.d. conditioning tokens with P(HIGH) = p.
pub fn sample_tokens<R: Rng>(g: usize, p: f64, rng: &mut R) -> Result<Vec<RewardToken>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Validation(format!("p must lie in [0,1], got {p}")));
    }
    Ok((0..g)
        .map(|_| {
            if rng.gen::<f64>() < p {
                RewardToken::High
            } else {
                RewardToken::Low
            }
        })
        .collect())
}

/// Conditions for one group under the configured mode: sampled tokens for
/// RC-GRPO, all neutral for plain GRPO.
pub fn group_conditions<R: Rng>(cfg: &RLConfig, rng: &mut R) -> Result<Vec<Condition>> {
    match cfg.mode {
        RLMode::Grpo => Ok(vec![Condition::Neutral; cfg.group_size]),
        RLMode::RcGrpo => Ok(sample_tokens(cfg.group_size, cfg.p, rng)?
            .into_iter()
            .map(Condition::from)
            .collect()),
    }
}

/// Group-normalized advantages with a biased (divide-by-G) standard
/// deviation. Identical rewards give an exactly zero vector.
pub fn group_advantages(rewards: &[f64], eps_stab: f64) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::Validation(format!(
            "group advantages need at least 2 rewards, got {g}"
        )));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let sigma = var.sqrt();
    Ok(rewards
        .iter()
        .map(|r| (r - mean) / (sigma + eps_stab))
        .collect())
}

enum Selection {
    Sampled(ChaCha20Rng),
    Greedy,
}

fn rollout_inner(
    params: &PolicyParams,
    task: &Task,
    token: Condition,
    temperature: f64,
    scheme: ConditioningScheme,
    mut selection: Selection,
) -> Result<Trajectory> {
    let env = Env::new(task);
    let mut state = env.reset(0)?;
    let mut ctx = HistoryCtx::start(goal_feature_tokens(&task.goal_text));
    let mut steps = Vec::new();
    let termination = loop {
        let candidates = env.candidate_actions(&state);
        let condition = scheme.condition_at(token, ctx.turn);
        let dist = policy::distribution(params, &ctx, condition, candidates, temperature)?;
        let (chosen, logprob) = match &mut selection {
            Selection::Sampled(rng) => policy::sample(&dist, rng),
            Selection::Greedy => {
                let i = policy::argmax(&dist);
                (i, dist.probs[i].ln())
            }
        };
        let call = dist.candidates[chosen].clone();
        let (next, observation, done) = env.step(&state, &call);
        ctx.push(&call, !observation.is_error());
        steps.push(TrajStep {
            candidates: dist.candidates,
            chosen,
            observation,
            logprob,
        });
        state = next;
        if done {
            break if call.name == TERMINATION_TOOL {
                Termination::DoneCalled
            } else {
                Termination::TurnLimit
            };
        }
    };
    Ok(Trajectory {
        task_id: task.id.clone(),
        steps,
        final_state: state,
        termination,
    })
}

/// Sample one trajectory conditioned on `token` under the given parameters.
pub fn rollout(
    params: &PolicyParams,
    task: &Task,
    token: Condition,
    temperature: f64,
    scheme: ConditioningScheme,
    rng: ChaCha20Rng,
) -> Result<Trajectory> {
    rollout_inner(params, task, token, temperature, scheme, Selection::Sampled(rng))
}

/// Argmax rollout, used for evaluation.
pub fn greedy_rollout(
    params: &PolicyParams,
    task: &Task,
    token: Condition,
    temperature: f64,
    scheme: ConditioningScheme,
) -> Result<Trajectory> {
    rollout_inner(params, task, token, temperature, scheme, Selection::Greedy)
}

/// Derive an independent stream so parallel rollouts stay reproducible
/// regardless of scheduling order.
fn stream(seed: u64, a: u64, b: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(
        seed ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xd1b54a32d192ed03),
    )
}

/// Roll a group of `conditions.len()` trajectories under a frozen snapshot,
/// score them, and attach group-normalized advantages.
pub fn rollout_group(
    params: &PolicyParams,
    task: &Task,
    conditions: &[Condition],
    cfg: &RLConfig,
    rng: &mut ChaCha20Rng,
) -> Result<GroupRollout> {
    let g = conditions.len();
    if g < 2 {
        return Err(Error::Validation("group size must be at least 2".into()));
    }
    let base: u64 = rng.gen();
    let mut trajectories = Vec::with_capacity(g);
    let mut rewards = Vec::with_capacity(g);
    for (j, token) in conditions.iter().enumerate() {
        let member_rng = stream(base, j as u64, 0x5eed);
        let traj = rollout(params, task, *token, cfg.temperature, cfg.conditioning, member_rng)?;
        rewards.push(trajectory_reward(&traj, task)?.total);
        trajectories.push(traj);
    }
    let reward_values: Vec<f64> = rewards.iter().map(|r| *r as f64).collect();
    let advantages = group_advantages(&reward_values, cfg.eps_stab)?;
    Ok(GroupRollout {
        task_id: task.id.clone(),
        tokens: conditions.to_vec(),
        trajectories,
        rewards,
        advantages,
    })
}

/// Trajectory-level importance ratio between two parameter snapshots,
/// computed in log space over the stored candidate lists.
pub fn importance_ratio(
    params: &PolicyParams,
    params_old: &PolicyParams,
    task: &Task,
    trajectory: &Trajectory,
    token: Condition,
    temperature: f64,
    scheme: ConditioningScheme,
) -> Result<f64> {
    let goal_tokens = goal_feature_tokens(&task.goal_text);
    let mut log_ratio = 0.0;
    for (t, step) in trajectory.steps.iter().enumerate() {
        if step.chosen >= step.candidates.len() {
            return Err(Error::DataIntegrity(format!(
                "step {t}: chosen action is not among the stored candidates"
            )));
        }
        let ctx = HistoryCtx::at_step(goal_tokens.clone(), &trajectory.steps, t);
        let cond = scheme.condition_at(token, t);
        let feats = policy::featurize_all(&ctx, cond, &step.candidates, params.dim());
        let new_lp = policy::probs_for(params, &feats, temperature)[step.chosen].ln();
        let old_lp = policy::probs_for(params_old, &feats, temperature)[step.chosen].ln();
        log_ratio += new_lp - old_lp;
    }
    if !log_ratio.is_finite() {
        return Err(Error::Numeric("non-finite log importance ratio".into()));
    }
    Ok(log_ratio.exp())
}

/// The clipped surrogate term `min(rho A, clip(rho, 1-eps, 1+eps) A)`.
pub fn clipped_term(rho: f64, advantage: f64, eps_clip: f64) -> f64 {
    let clipped = rho.clamp(1.0 - eps_clip, 1.0 + eps_clip);
    (rho * advantage).min(clipped * advantage)
}

/// Loss internals shared with the metrics log.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossDiagnostics {
    pub clip_objective: f64,
    pub mean_kl_ref: f64,
    pub mean_entropy: f64,
    pub decisions: usize,
}

fn loss_and_grad(
    params: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    task: &Task,
    group: &GroupRollout,
    cfg: &RLConfig,
    grad: &mut [f64],
    grad_weight: f64,
) -> Result<(f64, LossDiagnostics)> {
    let g = group.trajectories.len();
    if g == 0 || group.advantages.len() != g || group.tokens.len() != g {
        return Err(Error::Validation("incomplete group rollout".into()));
    }
    let goal_tokens = goal_feature_tokens(&task.goal_text);
    let temperature = cfg.temperature;

    let mut clip_objective = 0.0;
    let mut kl_sum = 0.0;
    let mut entropy_sum = 0.0;
    let mut decisions = 0usize;
    // First pass collects per-step features and log-probabilities so the
    // trajectory ratio is known before gradients are assembled.
    for (j, trajectory) in group.trajectories.iter().enumerate() {
        let token = group.tokens[j];
        let advantage = group.advantages[j];
        let mut per_step: Vec<(Vec<policy::FeatureVector>, usize)> = Vec::new();
        let mut log_ratio = 0.0;
        for (t, step) in trajectory.steps.iter().enumerate() {
            if step.chosen >= step.candidates.len() {
                return Err(Error::DataIntegrity(format!(
                    "step {t}: chosen action is not among the stored candidates"
                )));
            }
            let ctx = HistoryCtx::at_step(goal_tokens.clone(), &trajectory.steps, t);
            let cond = cfg.conditioning.condition_at(token, t);
            let feats = policy::featurize_all(&ctx, cond, &step.candidates, params.dim());
            let probs = policy::probs_for(params, &feats, temperature);
            let old_probs = policy::probs_for(params_old, &feats, temperature);
            log_ratio += probs[step.chosen].ln() - old_probs[step.chosen].ln();
            entropy_sum += policy::entropy_of(&probs);
            kl_sum += policy::kl_from_features(params, params_ref, &feats, temperature);
            decisions += 1;
            per_step.push((feats, step.chosen));
        }
        let rho = log_ratio.exp();
        clip_objective += clipped_term(rho, advantage, cfg.eps_clip) / g as f64;

        // gradient of the clipped term: zero when the clipped branch is
        // active and strictly smaller, A * rho * grad log pi otherwise
        let clipped = rho.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip);
        let unclipped_active = rho * advantage <= clipped * advantage;
        let scale = if unclipped_active { advantage * rho } else { 0.0 };
        let step_scale = -grad_weight * scale / g as f64;
        if step_scale != 0.0 {
            for (feats, chosen) in &per_step {
                policy::accumulate_grad_logprob(
                    params, feats, *chosen, temperature, step_scale, grad,
                );
            }
        }
    }

    // KL penalty, averaged uniformly over every visited decision state
    if decisions > 0 && cfg.beta > 0.0 {
        let kl_scale = grad_weight * cfg.beta / decisions as f64;
        for (j, trajectory) in group.trajectories.iter().enumerate() {
            let token = group.tokens[j];
            for (t, step) in trajectory.steps.iter().enumerate() {
                let ctx = HistoryCtx::at_step(goal_tokens.clone(), &trajectory.steps, t);
                let cond = cfg.conditioning.condition_at(token, t);
                let feats = policy::featurize_all(&ctx, cond, &step.candidates, params.dim());
                policy::accumulate_grad_kl(params, params_ref, &feats, temperature, kl_scale, grad);
            }
        }
    }

    let mean_kl = if decisions > 0 { kl_sum / decisions as f64 } else { 0.0 };
    let mean_entropy = if decisions > 0 { entropy_sum / decisions as f64 } else { 0.0 };
    let loss = -clip_objective + cfg.beta * mean_kl;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((
        loss,
        LossDiagnostics {
            clip_objective,
            mean_kl_ref: mean_kl,
            mean_entropy,
            decisions,
        },
    ))
}

/// Clipped group objective with KL penalty, plus its analytic gradient.
pub fn rc_grpo_loss(
    params: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    task: &Task,
    group: &GroupRollout,
    cfg: &RLConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.dim()];
    let (loss, _) = loss_and_grad(params, params_old, params_ref, task, group, cfg, &mut grad, 1.0)?;
    Ok((loss, grad))
}

/// Greedy success rate over a task suite under one conditioning token.
pub fn evaluate(
    params: &PolicyParams,
    tasks: &[Task],
    condition: Condition,
    temperature: f64,
    scheme: ConditioningScheme,
) -> Result<f64> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for task in tasks {
        let traj = greedy_rollout(params, task, condition, temperature, scheme)?;
        total += trajectory_reward(&traj, task)?.total as f64;
    }
    Ok(total / tasks.len() as f64)
}

/// Outcome of a stage-2 run: final parameters plus one metrics record per
/// step.
pub type RunLog = Vec<MetricsRecord>;

/// The stage-2 training loop. Each absolute step derives its own random
/// stream from the seed, so a run resumed from `start_step` continues the
/// exact step sequence of an uninterrupted run.
pub fn train_rl(
    init: &PolicyParams,
    tasks: &[Task],
    cfg: &RLConfig,
    start_step: usize,
) -> Result<(PolicyParams, RunLog)> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Validation("no tasks to train on".into()));
    }
    init.assert_finite()?;
    let params_ref = init.clone();
    let mut params = init.clone();
    let mut log = Vec::with_capacity(cfg.steps);

    for step_index in 0..cfg.steps {
        let step = start_step + step_index + 1;
        let mut rng = stream(cfg.seed, step as u64, 0xba7c4);
        let snapshot = params.clone();

        let mut grad = vec![0.0; params.dim()];
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        let mut entropy_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut decisions = 0usize;
        let mut groups = 0usize;
        let mut spread_sum = 0.0;
        let mut zero_sigma = 0usize;
        let mut high_tokens = 0usize;
        let mut token_count = 0usize;

        for _ in 0..cfg.batch {
            let task = &tasks[rng.gen_range(0..tasks.len())];
            let conditions = group_conditions(cfg, &mut rng)?;
            let group = rollout_group(&snapshot, task, &conditions, cfg, &mut rng)?;

            let (_, diag) = loss_and_grad(
                &snapshot,
                &snapshot,
                &params_ref,
                task,
                &group,
                cfg,
                &mut grad,
                1.0 / cfg.batch as f64,
            )?;

            reward_sum += group.rewards.iter().map(|r| *r as f64).sum::<f64>();
            reward_count += group.rewards.len();
            // per-decision aggregation across the whole step
            entropy_sum += diag.mean_entropy * diag.decisions as f64;
            kl_sum += diag.mean_kl_ref * diag.decisions as f64;
            decisions += diag.decisions;
            groups += 1;
            spread_sum += advantage_spread(&group.advantages)?;
            zero_sigma += usize::from(group.degenerate());
            high_tokens += conditions.iter().filter(|c| **c == Condition::High).count();
            token_count += conditions.len();
        }

        let norm = grad_norm(&grad)?;
        for (w, g) in params.weights.iter_mut().zip(&grad) {
            *w -= cfg.lr * g;
        }
        params.version += 1;
        params.assert_finite()?;

        log.push(MetricsRecord {
            step,
            mean_reward: reward_sum / reward_count.max(1) as f64,
            mean_entropy: entropy_sum / decisions.max(1) as f64,
            advantage_spread: spread_sum / groups.max(1) as f64,
            mean_kl_ref: kl_sum / decisions.max(1) as f64,
            grad_norm: norm,
            frac_zero_sigma_groups: zero_sigma as f64 / groups.max(1) as f64,
            token_high_frac: high_tokens as f64 / token_count.max(1) as f64,
        });
    }
    Ok((params, log))
}
