//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (visible under `cargo test --test acceptance -- --nocapture`).

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use rcgrpo::env::gen::{generate, WorldChoice};
use rcgrpo::env::{
    execute_sequence, Env, EnvState, FileSystemState, Node, Task, TaskSet, ToolCall, WorldState,
    TERMINATION_TOOL,
};
use rcgrpo::metrics::{pearson, window_summary, MetricsRecord};
use rcgrpo::policy::{
    self, featurize_all, goal_feature_tokens, Condition, HistoryCtx, PolicyParams, DEFAULT_DIM,
};
use rcgrpo::rctp::{self, CurationConfig, LabeledTrajectory, OptimConfig};
use rcgrpo::reward::trajectory_reward;
use rcgrpo::rl::{self, rollout_group, rc_grpo_loss, RLConfig, RLMode};
use rcgrpo::theory::{
    verify_group_moment, verify_peaked_collapse, verify_variance_bound,
    DiscreteDist,
};

fn report(criterion: u32, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion} {}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {criterion} failed: {detail}");
}

fn within_budget(elapsed: Duration, budget: Duration) -> bool {
    elapsed <= budget
}

/// The worked move-and-delete task used by the reward-semantics criterion.
fn move_delete_task() -> Task {
    let mut tree = BTreeMap::new();
    tree.insert("/".to_string(), Node::Dir);
    tree.insert("/archive".to_string(), Node::Dir);
    tree.insert(
        "/report.csv".to_string(),
        Node::File {
            content: "q1,q2\n10,20".to_string(),
        },
    );
    tree.insert(
        "/temp.log".to_string(),
        Node::File {
            content: "Error: scratch".to_string(),
        },
    );
    Task {
        id: "fs-move-delete".to_string(),
        initial_state: EnvState::new(WorldState::FileSystem(FileSystemState {
            cwd: "/".to_string(),
            tree,
        })),
        goal_text: "Move report.csv to /archive and delete temp.log.".to_string(),
        golden_actions: vec![
            ToolCall::new("mv").with("src", "report.csv").with("dst", "/archive"),
            ToolCall::new("rm").with("path", "temp.log"),
            ToolCall::new(TERMINATION_TOOL),
        ],
        max_turns: 10,
    }
}

#[test]
fn criterion_1_reward_semantics_exact() {
    let start = Instant::now();
    let task = move_delete_task();
    let mv = ToolCall::new("mv").with("src", "report.csv").with("dst", "/archive");
    let rm = ToolCall::new("rm").with("path", "temp.log");
    let touch = ToolCall::new("touch").with("path", "temp.log");
    let done = ToolCall::new(TERMINATION_TOOL);

    // scenario 1: both essential calls, order reversed
    let t1 = execute_sequence(&task, &[rm.clone(), mv.clone(), done.clone()]).unwrap();
    let r1 = trajectory_reward(&t1, &task).unwrap();
    // scenario 2: right actions, then the deleted file is re-created
    let t2 = execute_sequence(&task, &[mv.clone(), rm.clone(), touch, done.clone()]).unwrap();
    let r2 = trajectory_reward(&t2, &task).unwrap();
    // scenario 3: missing the delete entirely
    let t3 = execute_sequence(&task, &[mv, done]).unwrap();
    let r3 = trajectory_reward(&t3, &task).unwrap();

    let elapsed = start.elapsed();
    let pass = (r1.r_state, r1.r_action, r1.total) == (1, 1, 1)
        && (r2.r_state, r2.r_action, r2.total) == (0, 1, 0)
        && (r3.r_state, r3.r_action, r3.total) == (0, 0, 0)
        && within_budget(elapsed, Duration::from_secs(1));
    report(
        1,
        pass,
        &format!(
            "reward semantics (1,1,1)/(0,1,0)/(0,0,0) -> got ({},{},{})/({},{},{})/({},{},{}) in {elapsed:?}",
            r1.r_state, r1.r_action, r1.total, r2.r_state, r2.r_action, r2.total, r3.r_state,
            r3.r_action, r3.total
        ),
    );
}

#[test]
fn criterion_2_advantage_arithmetic_exact() {
    let skewed = rl::group_advantages(&[1.0, 0.0, 0.0, 0.0, 0.0], 0.0).unwrap();
    let expect = [2.0, -0.5, -0.5, -0.5, -0.5];
    let max_err = skewed
        .iter()
        .zip(expect)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0f64, f64::max);
    let uniform = rl::group_advantages(&[1.0; 5], 1e-6).unwrap();
    let pass = max_err < 1e-9 && uniform.iter().all(|a| *a == 0.0);
    report(
        2,
        pass,
        &format!("advantages [2, -0.5 x4] max err {max_err:.2e}; all-equal rewards give exact zeros"),
    );
}

#[test]
fn criterion_3_group_moment_lemma() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1001);
    let half = verify_group_moment(&DiscreteDist::bernoulli(0.5).unwrap(), 5, 100_000, &mut rng)
        .unwrap();
    let fifth = verify_group_moment(&DiscreteDist::bernoulli(0.2).unwrap(), 2, 100_000, &mut rng)
        .unwrap();
    let elapsed = start.elapsed();
    let pass = half.satisfied
        && (half.bound - 0.2).abs() < 1e-12
        && fifth.satisfied
        && (fifth.bound - 0.08).abs() < 1e-12
        && within_budget(elapsed, Duration::from_secs(10));
    report(
        3,
        pass,
        &format!(
            "E[S_G^2]: {:.5} vs 0.2 (tol {:.1e}), {:.5} vs 0.08 (tol {:.1e}) in {elapsed:?}",
            half.measured, half.tolerance, fifth.measured, fifth.tolerance
        ),
    );
}

#[test]
fn criterion_4_variance_guarantee() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1002);
    let tight =
        verify_variance_bound(0.5, 1.0, 0.0, 0.0, 0.0, 5, 100_000, &mut rng).unwrap();
    let asym =
        verify_variance_bound(0.3, 0.9, 0.1, 0.0, 0.0, 5, 100_000, &mut rng).unwrap();
    let elapsed = start.elapsed();
    let pass = tight.satisfied
        && (tight.bound - 0.2).abs() < 1e-12
        && (tight.measured - 0.2).abs() <= tight.tolerance
        && asym.satisfied
        && (asym.bound - 0.10752).abs() < 1e-12
        && within_budget(elapsed, Duration::from_secs(10));
    report(
        4,
        pass,
        &format!(
            "E[sigma_g^2] tight {:.5} ~ 0.2 (tol {:.1e}); asymmetric {:.5} >= 0.10752 in {elapsed:?}",
            tight.measured, tight.tolerance, asym.measured
        ),
    );
}

#[test]
fn criterion_5_peaked_collapse() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1003);
    // the verifier also asserts the exactly-zero policy-gradient term on
    // identical-reward groups; a violation flips `satisfied`
    let r = verify_peaked_collapse(0.01, 4, 5, 20_000, &mut rng).unwrap();
    let elapsed = start.elapsed();
    let pass = r.satisfied
        && (r.bound - 0.8187307530779818).abs() < 1e-12
        && (r.measured - r.bound).abs() <= r.tolerance
        && within_budget(elapsed, Duration::from_secs(30));
    report(
        5,
        pass,
        &format!(
            "P(identical optimal group) {:.4} vs e^-0.2 = {:.4} (tol {:.1e}, n {}) in {elapsed:?}",
            r.measured, r.bound, r.tolerance, r.n_samples
        ),
    );
}

#[test]
fn criterion_6_gradient_fidelity() {
    let start = Instant::now();
    let tasks = generate(WorldChoice::Mixed, 6, 321).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(1004);
    let mut worst_rel = 0.0f64;
    let rel_err = |analytic: f64, fd: f64| {
        let err = (analytic - fd).abs();
        if err < 1e-9 {
            0.0
        } else {
            err / fd.abs().max(1e-6)
        }
    };

    // 100 random log-probability gradient instances
    for i in 0..100 {
        let task = &tasks[i % tasks.len()];
        let env = Env::new(task);
        let state = env.reset(0).unwrap();
        let candidates = env.candidate_actions(&state);
        let goal = goal_feature_tokens(&task.goal_text);
        let ctx = HistoryCtx::start(goal);
        let mut params = PolicyParams::zeros(DEFAULT_DIM);
        for w in params.weights.iter_mut() {
            *w = rng.gen_range(-1.0..1.0);
        }
        let temperature = rng.gen_range(0.5..2.0);
        let condition = *[Condition::High, Condition::Low, Condition::Neutral]
            .choose(&mut rng)
            .unwrap();
        let chosen = rng.gen_range(0..candidates.len());
        let grad = policy::grad_logprob(&params, &ctx, condition, &candidates, chosen, temperature);
        let feats = featurize_all(&ctx, condition, &candidates, DEFAULT_DIM);
        let mut coords: Vec<usize> = feats.iter().flat_map(|f| f.iter().map(|(j, _)| j)).collect();
        coords.sort_unstable();
        coords.dedup();
        let probe: Vec<usize> = coords.choose_multiple(&mut rng, 8).cloned().collect();
        let h = 1e-5;
        for &j in &probe {
            let mut plus = params.clone();
            plus.weights[j] += h;
            let mut minus = params.clone();
            minus.weights[j] -= h;
            let lp = |p: &PolicyParams| {
                rcgrpo::policy::distribution(p, &ctx, condition, candidates.clone(), temperature)
                    .unwrap()
                    .probs[chosen]
                    .ln()
            };
            let fd = (lp(&plus) - lp(&minus)) / (2.0 * h);
            worst_rel = worst_rel.max(rel_err(grad[j], fd));
        }
    }

    // 100 random full-loss gradient instances
    let cfg = RLConfig {
        group_size: 3,
        ..Default::default()
    };
    for i in 0..100 {
        let task = &tasks[i % tasks.len()];
        let mut params_old = PolicyParams::zeros(DEFAULT_DIM);
        for w in params_old.weights.iter_mut() {
            *w = rng.gen_range(-0.4..0.4);
        }
        let mut params_ref = params_old.clone();
        for w in params_ref.weights.iter_mut() {
            *w += rng.gen_range(-0.05..0.05);
        }
        let conditions = [Condition::High, Condition::Low, Condition::High];
        let mut group = rollout_group(&params_old, task, &conditions, &cfg, &mut rng).unwrap();
        if group.degenerate() {
            group.advantages = vec![1.0, -0.5, -0.5];
        }
        let mut params = params_old.clone();
        for w in params.weights.iter_mut() {
            *w += rng.gen_range(-0.02..0.02);
        }
        let (_, grad) = rc_grpo_loss(&params, &params_old, &params_ref, task, &group, &cfg).unwrap();
        let loss_at = |p: &PolicyParams| {
            rc_grpo_loss(p, &params_old, &params_ref, task, &group, &cfg)
                .unwrap()
                .0
        };
        let active: Vec<usize> = grad
            .iter()
            .enumerate()
            .filter(|(_, g)| g.abs() > 1e-10)
            .map(|(j, _)| j)
            .collect();
        let probe: Vec<usize> = active.choose_multiple(&mut rng, 6).cloned().collect();
        let h = 1e-6;
        for &j in &probe {
            let mut plus = params.clone();
            plus.weights[j] += h;
            let mut minus = params.clone();
            minus.weights[j] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            worst_rel = worst_rel.max(rel_err(grad[j], fd));
        }
    }

    let elapsed = start.elapsed();
    let pass = worst_rel < 1e-4 && within_budget(elapsed, Duration::from_secs(60));
    report(
        6,
        pass,
        &format!("max relative FD error {worst_rel:.2e} over 200 instances in {elapsed:?}"),
    );
}

#[test]
fn criterion_7_ablation_grid_direction() {
    let start = Instant::now();
    let tasks = generate(WorldChoice::Mixed, 12, 2024).unwrap();
    let task_set = TaskSet::new(tasks.clone()).unwrap();

    // stage 1: mixed-token reference and a saturated expert-only baseline
    let curation = CurationConfig {
        n_expert: 24,
        n_failure: 24,
        seed: 1,
        ..Default::default()
    };
    let (train_data, _) = rctp::curate(&tasks, &curation).unwrap();
    let rctp_optim = OptimConfig {
        lr: 0.15,
        epochs: 80,
        batch: 16,
        seed: 3,
        tol: 0.0,
        ..Default::default()
    };
    let rctp_params = rctp::train_rctp(
        &PolicyParams::zeros(DEFAULT_DIM),
        &train_data,
        &task_set,
        &rctp_optim,
    )
    .unwrap();
    let experts: Vec<LabeledTrajectory> = tasks
        .iter()
        .map(|t| LabeledTrajectory::scored(Env::new(t).replay_golden().unwrap().0, t).unwrap())
        .collect();
    let sft_optim = OptimConfig {
        lr: 0.3,
        epochs: 1500,
        batch: experts.len(),
        seed: 4,
        tol: 0.0,
        ..Default::default()
    };
    let sft_params = rctp::train_sft(
        &PolicyParams::zeros(DEFAULT_DIM),
        &experts,
        &task_set,
        &sft_optim,
    )
    .unwrap();

    let window = 70usize;
    let seeds = [101u64, 202, 303, 404, 505];
    let mut pair_wins = 0usize;
    let mut rc_zero_sum = 0.0;
    let mut sg_zero_sum = 0.0;
    let mut rc_spread_sum = 0.0;
    let mut sg_spread_sum = 0.0;
    for &seed in &seeds {
        let mk = |mode: RLMode| RLConfig {
            mode,
            steps: 350,
            seed,
            ..Default::default()
        };
        let (p_rc, log_rc) = rl::train_rl(&rctp_params, &tasks, &mk(RLMode::RcGrpo), 0).unwrap();
        let (p_gr, _) = rl::train_rl(&rctp_params, &tasks, &mk(RLMode::Grpo), 0).unwrap();
        let (_, log_sg) = rl::train_rl(&sft_params, &tasks, &mk(RLMode::Grpo), 0).unwrap();

        let rc_high = rl::evaluate(&p_rc, &tasks, Condition::High, 1.0, Default::default()).unwrap();
        // give the unconditioned baseline its best inference condition
        let gr_neutral =
            rl::evaluate(&p_gr, &tasks, Condition::Neutral, 1.0, Default::default()).unwrap();
        let gr_high = rl::evaluate(&p_gr, &tasks, Condition::High, 1.0, Default::default()).unwrap();
        let gr_best = gr_neutral.max(gr_high);
        pair_wins += usize::from(rc_high >= gr_best);

        let ws_rc = window_summary(&log_rc, window).unwrap();
        let ws_sg = window_summary(&log_sg, window).unwrap();
        rc_zero_sum += ws_rc.late.frac_zero_sigma_groups;
        sg_zero_sum += ws_sg.late.frac_zero_sigma_groups;
        rc_spread_sum += ws_rc.late.advantage_spread;
        sg_spread_sum += ws_sg.late.advantage_spread;
    }
    let n = seeds.len() as f64;
    let a = pair_wins * 2 > seeds.len();
    let b = sg_zero_sum / n > rc_zero_sum / n;
    let c = rc_spread_sum / n > sg_spread_sum / n;
    let elapsed = start.elapsed();
    let pass = a && b && c && within_budget(elapsed, Duration::from_secs(30 * 60));
    report(
        7,
        pass,
        &format!(
            "(a) rc >= grpo in {pair_wins}/5 pairs; (b) zero-sigma sft+grpo {:.3} > rc {:.3}; (c) spread rc {:.3} > sft+grpo {:.3}; in {elapsed:?}",
            sg_zero_sum / n,
            rc_zero_sum / n,
            rc_spread_sum / n,
            sg_spread_sum / n
        ),
    );
}

#[test]
fn criterion_8_diagnostics_correctness() {
    let start = Instant::now();
    let (rho, _) = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
    let ramp: Vec<MetricsRecord> = (1..=350)
        .map(|s| MetricsRecord {
            step: s,
            mean_reward: s as f64,
            mean_entropy: 0.0,
            advantage_spread: 0.0,
            mean_kl_ref: 0.0,
            grad_norm: 0.0,
            frac_zero_sigma_groups: 0.0,
            token_high_frac: 0.5,
        })
        .collect();
    let summary = window_summary(&ramp, 70).unwrap();
    let elapsed = start.elapsed();
    let pass = (rho - 0.9934).abs() < 1e-3
        && (summary.early.mean_reward - 35.5).abs() < 1e-12
        && (summary.late.mean_reward - 315.5).abs() < 1e-12
        && within_budget(elapsed, Duration::from_secs(1));
    report(
        8,
        pass,
        &format!(
            "pearson {rho:.6} ~ 0.9934; ramp windows {}/{} in {elapsed:?}",
            summary.early.mean_reward, summary.late.mean_reward
        ),
    );
}

#[test]
fn criterion_9_reproducibility() {
    let tasks = generate(WorldChoice::Mixed, 8, 555).unwrap();
    let task_set = TaskSet::new(tasks.clone()).unwrap();
    let curation = CurationConfig {
        n_expert: 8,
        n_failure: 8,
        seed: 11,
        ..Default::default()
    };
    let optim = OptimConfig {
        epochs: 20,
        seed: 12,
        ..Default::default()
    };
    let run_stage1 = || {
        let (data, _) = rctp::curate(&tasks, &curation).unwrap();
        rctp::train_rctp(&PolicyParams::zeros(DEFAULT_DIM), &data, &task_set, &optim).unwrap()
    };
    let ref_a = run_stage1();
    let ref_b = run_stage1();

    let cfg = RLConfig {
        steps: 40,
        seed: 77,
        ..Default::default()
    };
    let (params_a, log_a) = rl::train_rl(&ref_a, &tasks, &cfg, 0).unwrap();
    let (params_b, log_b) = rl::train_rl(&ref_b, &tasks, &cfg, 0).unwrap();
    let rewards_a: Vec<f64> = log_a.iter().map(|r| r.mean_reward).collect();
    let rewards_b: Vec<f64> = log_b.iter().map(|r| r.mean_reward).collect();
    let pass = ref_a == ref_b && params_a.weights == params_b.weights && rewards_a == rewards_b
        && log_a == log_b;
    report(
        9,
        pass,
        "identical config+seed reproduces stage-1 weights, reward curves, and final checkpoints bit for bit",
    );
}
