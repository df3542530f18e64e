//! Cross-module integration: stage-1 steerability feeding stage-2 variance,
//! and the measured variance guarantee on the trained policy.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use rcgrpo::env::gen::{generate, WorldChoice};
use rcgrpo::env::{Env, TaskSet};
use rcgrpo::policy::{self, goal_feature_tokens, Condition, HistoryCtx, PolicyParams, DEFAULT_DIM};
use rcgrpo::rctp::{self, CurationConfig, OptimConfig};
use rcgrpo::rl::{self, group_conditions, rollout_group, RLConfig, RLMode};

fn trained_reference() -> (Vec<rcgrpo::env::Task>, TaskSet, PolicyParams) {
    let tasks = generate(WorldChoice::Mixed, 10, 4242).unwrap();
    let task_set = TaskSet::new(tasks.clone()).unwrap();
    let curation = CurationConfig {
        n_expert: 20,
        n_failure: 20,
        seed: 5,
        ..Default::default()
    };
    let (train_data, _) = rctp::curate(&tasks, &curation).unwrap();
    let optim = OptimConfig {
        lr: 0.15,
        epochs: 80,
        batch: 16,
        seed: 6,
        tol: 0.0,
        ..Default::default()
    };
    let params = rctp::train_rctp(
        &PolicyParams::zeros(DEFAULT_DIM),
        &train_data,
        &task_set,
        &optim,
    )
    .unwrap();
    (tasks, task_set, params)
}

/// After stage 1 the conditioning token steers behavior: the HIGH and LOW
/// success rates separate by at least the configured minimum gap, and on at
/// least one decision state the greedy action itself differs.
#[test]
fn rctp_conditioning_separates_modes() {
    let (tasks, _, params) = trained_reference();
    let high = rl::evaluate(&params, &tasks, Condition::High, 1.0, Default::default()).unwrap();
    let low = rl::evaluate(&params, &tasks, Condition::Low, 1.0, Default::default()).unwrap();
    assert!(high > low, "HIGH ({high:.3}) must beat LOW ({low:.3})");
    let gap = high - low;
    assert!(
        gap >= 0.3,
        "conditioning gap {gap:.3} below the 0.3 minimum (high {high:.3}, low {low:.3})"
    );

    let mut argmax_differs = false;
    for task in &tasks {
        let env = Env::new(task);
        let state = env.reset(0).unwrap();
        let candidates = env.candidate_actions(&state);
        let ctx = HistoryCtx::start(goal_feature_tokens(&task.goal_text));
        let hi = policy::distribution(&params, &ctx, Condition::High, candidates.clone(), 1.0)
            .unwrap();
        let lo = policy::distribution(&params, &ctx, Condition::Low, candidates, 1.0).unwrap();
        if policy::argmax(&hi) != policy::argmax(&lo) {
            argmax_differs = true;
            break;
        }
    }
    assert!(argmax_differs, "no state where HIGH and LOW argmax differ");
}

/// Plain group-relative optimization from a saturated expert-only policy
/// collapses immediately: most groups earn identical rewards from the very
/// first steps.
#[test]
fn saturated_sft_plus_grpo_collapses_early() {
    let tasks = generate(WorldChoice::Mixed, 10, 4242).unwrap();
    let task_set = TaskSet::new(tasks.clone()).unwrap();
    let experts: Vec<_> = tasks
        .iter()
        .map(|t| {
            rcgrpo::rctp::LabeledTrajectory::scored(Env::new(t).replay_golden().unwrap().0, t)
                .unwrap()
        })
        .collect();
    let optim = OptimConfig {
        lr: 0.3,
        epochs: 1200,
        batch: experts.len(),
        seed: 8,
        tol: 0.0,
        ..Default::default()
    };
    let sft = rctp::train_sft(&PolicyParams::zeros(DEFAULT_DIM), &experts, &task_set, &optim)
        .unwrap();
    let cfg = RLConfig {
        mode: RLMode::Grpo,
        steps: 50,
        seed: 19,
        ..Default::default()
    };
    let (_, log) = rl::train_rl(&sft, &tasks, &cfg, 0).unwrap();
    let zero_sigma: f64 =
        log.iter().map(|r| r.frac_zero_sigma_groups).sum::<f64>() / log.len() as f64;
    assert!(
        zero_sigma >= 0.8,
        "zero-sigma fraction over the first 50 steps: {zero_sigma:.3}"
    );
}

/// The variance guarantee holds on the real trained policy: with kappa =
/// ((G-1)/G) p(1-p) and the measured conditional-mean gap, freshly sampled
/// groups keep E[sigma_g^2] above kappa * gap^2 (minus Monte Carlo noise).
#[test]
fn rc_grpo_maintains_group_variance_lower_bound() {
    let (tasks, _, rctp_params) = trained_reference();
    let cfg = RLConfig {
        mode: RLMode::RcGrpo,
        steps: 60,
        seed: 31,
        ..Default::default()
    };
    let (params, log) = rl::train_rl(&rctp_params, &tasks, &cfg, 0).unwrap();

    // mean training reward holds up over smoothed windows
    let w = 15usize;
    let early: f64 = log[..w].iter().map(|r| r.mean_reward).sum::<f64>() / w as f64;
    let late: f64 = log[log.len() - w..].iter().map(|r| r.mean_reward).sum::<f64>() / w as f64;
    assert!(
        late >= early - 0.05,
        "training reward regressed: {early:.3} -> {late:.3}"
    );

    // fresh groups under the final parameters
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let n_groups = 400usize;
    let mut sigma_sq_sum = 0.0;
    let mut high_rewards = Vec::new();
    let mut low_rewards = Vec::new();
    for i in 0..n_groups {
        let task = &tasks[i % tasks.len()];
        let conditions = group_conditions(&cfg, &mut rng).unwrap();
        let group = rollout_group(&params, task, &conditions, &cfg, &mut rng).unwrap();
        let mean: f64 =
            group.rewards.iter().map(|r| *r as f64).sum::<f64>() / group.rewards.len() as f64;
        sigma_sq_sum += group
            .rewards
            .iter()
            .map(|r| (*r as f64 - mean).powi(2))
            .sum::<f64>()
            / group.rewards.len() as f64;
        for (condition, reward) in group.tokens.iter().zip(&group.rewards) {
            match condition {
                Condition::High => high_rewards.push(*reward as f64),
                Condition::Low => low_rewards.push(*reward as f64),
                Condition::Neutral => {}
            }
        }
    }
    let measured = sigma_sq_sum / n_groups as f64;
    let mu_h: f64 = high_rewards.iter().sum::<f64>() / high_rewards.len() as f64;
    let mu_l: f64 = low_rewards.iter().sum::<f64>() / low_rewards.len() as f64;
    let gap = (mu_h - mu_l).abs();
    let g = cfg.group_size as f64;
    let kappa = (g - 1.0) / g * cfg.p * (1.0 - cfg.p);
    let bound = kappa * gap * gap;
    // generous noise budget: ~3 standard errors of both estimates
    let slack = 0.05;
    assert!(
        measured >= bound - slack,
        "E[sigma_g^2] {measured:.4} fell below kappa*eps^2 {bound:.4} (gap {gap:.3})"
    );
    assert!(gap > 0.2, "conditional modes collapsed: gap {gap:.3}");
}
