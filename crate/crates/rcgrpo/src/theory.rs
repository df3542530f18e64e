//! Standalone verifiers for the variance-collapse and variance-guarantee
//! results: closed-form targets checked against Monte Carlo estimates with
//! explicit 3-sigma noise budgets.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::env::ToolCall;
use crate::error::{Error, Result};
use crate::policy::{self, Condition, HistoryCtx, PolicyParams};
use crate::rl::group_advantages;

/// Whether a report checks a lower bound or a two-sided equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundRelation {
    LowerBound,
    Equality,
}

/// One verified bound: the Monte Carlo measurement, the closed-form target,
/// and the noise budget that decided `satisfied`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub relation: BoundRelation,
    pub measured: f64,
    pub bound: f64,
    pub n_samples: usize,
    /// Three estimated standard errors (plus a double-precision floor).
    pub tolerance: f64,
    pub satisfied: bool,
}

impl BoundReport {
    fn new(
        name: impl Into<String>,
        relation: BoundRelation,
        measured: f64,
        bound: f64,
        n_samples: usize,
        tolerance: f64,
    ) -> Self {
        let satisfied = match relation {
            BoundRelation::LowerBound => measured >= bound - tolerance,
            BoundRelation::Equality => (measured - bound).abs() <= tolerance,
        };
        Self {
            name: name.into(),
            relation,
            measured,
            bound,
            n_samples,
            tolerance,
            satisfied,
        }
    }

    pub fn summary_line(&self) -> String {
        let op = match self.relation {
            BoundRelation::LowerBound => ">=",
            BoundRelation::Equality => "~=",
        };
        format!(
            "{:<26} measured {:>10.6} {op} bound {:>10.6} (tol {:.2e}, n {}) {}",
            self.name,
            self.measured,
            self.bound,
            self.tolerance,
            self.n_samples,
            if self.satisfied { "ok" } else { "VIOLATED" }
        )
    }
}

const TOL_FLOOR: f64 = 1e-12;

/// Finite discrete distribution over real reward values.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(Error::Validation("distribution shape mismatch".into()));
        }
        if probs.iter().any(|p| *p < 0.0) {
            return Err(Error::Validation("negative probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("probabilities sum to {total}")));
        }
        Ok(Self { values, probs })
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(vec![1.0, 0.0], vec![p, 1.0 - p])
    }

    pub fn constant(value: f64) -> Self {
        Self {
            values: vec![value],
            probs: vec![1.0],
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| p * (v - mean) * (v - mean))
            .sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for (v, p) in self.values.iter().zip(&self.probs) {
            cum += p;
            if u < cum {
                return *v;
            }
        }
        *self.values.last().unwrap()
    }
}

fn biased_second_moment(xs: &[f64]) -> f64 {
    let g = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / g;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / g
}

/// Running mean and standard error of a Monte Carlo sample.
struct McAccumulator {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl McAccumulator {
    fn new() -> Self {
        Self {
            n: 0,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn standard_error(&self) -> f64 {
        let n = self.n as f64;
        let var = (self.sum_sq / n - (self.sum / n) * (self.sum / n)).max(0.0);
        (var / n).sqrt()
    }
}

/// Expected group second central moment: the Monte Carlo estimate of
/// `E[S_G^2]` over i.i.d. draws must equal `((G-1)/G) Var(X)`.
pub fn verify_group_moment(
    dist: &DiscreteDist,
    group_size: usize,
    n_samples: usize,
    rng: &mut ChaCha20Rng,
) -> Result<BoundReport> {
    if group_size < 2 {
        return Err(Error::Validation("group size must be at least 2".into()));
    }
    let mut acc = McAccumulator::new();
    let mut draws = vec![0.0; group_size];
    for _ in 0..n_samples {
        for d in draws.iter_mut() {
            *d = dist.sample(rng);
        }
        acc.push(biased_second_moment(&draws));
    }
    let target = (group_size as f64 - 1.0) / group_size as f64 * dist.variance();
    Ok(BoundReport::new(
        "group_second_moment",
        BoundRelation::Equality,
        acc.mean(),
        target,
        n_samples,
        3.0 * acc.standard_error() + TOL_FLOOR,
    ))
}

/// Variance guarantee under token mixing: with conditional means separated
/// by eps, `E[sigma_g^2] >= ((G-1)/G) p(1-p) eps^2`. The exact law of total
/// variance is checked alongside the Monte Carlo bound.
#[allow(clippy::too_many_arguments)]
pub fn verify_variance_bound(
    p: f64,
    mu_high: f64,
    mu_low: f64,
    within_var_high: f64,
    within_var_low: f64,
    group_size: usize,
    n_samples: usize,
    rng: &mut ChaCha20Rng,
) -> Result<BoundReport> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Validation(format!("p must lie in [0,1], got {p}")));
    }
    if group_size < 2 {
        return Err(Error::Validation("group size must be at least 2".into()));
    }
    if within_var_high < 0.0 || within_var_low < 0.0 {
        return Err(Error::Validation("negative within-mode variance".into()));
    }
    let eps = (mu_high - mu_low).abs();
    let kappa = (group_size as f64 - 1.0) / group_size as f64 * p * (1.0 - p);
    let bound = kappa * eps * eps;

    // a two-point mode value mu +/- sqrt(v) realizes mean mu, variance v
    let draw_mode = |rng: &mut ChaCha20Rng, mu: f64, var: f64| {
        if var == 0.0 {
            mu
        } else if rng.gen::<bool>() {
            mu + var.sqrt()
        } else {
            mu - var.sqrt()
        }
    };

    let mut acc = McAccumulator::new();
    let mut pooled = McAccumulator::new();
    let mut draws = vec![0.0; group_size];
    for _ in 0..n_samples {
        for d in draws.iter_mut() {
            *d = if rng.gen::<f64>() < p {
                draw_mode(rng, mu_high, within_var_high)
            } else {
                draw_mode(rng, mu_low, within_var_low)
            };
            pooled.push(*d);
        }
        acc.push(biased_second_moment(&draws));
    }

    let mut report = BoundReport::new(
        "variance_guarantee",
        BoundRelation::LowerBound,
        acc.mean(),
        bound,
        n_samples,
        3.0 * acc.standard_error() + TOL_FLOOR,
    );
    // law of total variance on the pooled draws: Var(X) >= p(1-p) eps^2,
    // with a crude but sufficient noise budget for a variance estimate
    let pooled_var = pooled.sum_sq / pooled.n as f64 - pooled.mean() * pooled.mean();
    let var_budget = 10.0 * pooled_var.max(1.0) / (pooled.n as f64).sqrt() + TOL_FLOOR;
    if pooled_var + var_budget < p * (1.0 - p) * eps * eps {
        report.satisfied = false;
    }
    Ok(report)
}

/// Synthetic candidate set for the peaked-policy simulation.
fn synthetic_candidates() -> Vec<ToolCall> {
    vec![
        ToolCall::new("done"),
        ToolCall::new("ls"),
        ToolCall::new("cd").with("path", "/"),
        ToolCall::new("rm").with("path", "x.txt"),
    ]
}

/// Vanishing gradient in peaked policies: with per-step
/// `pi(a*) = e^{-eps_sft}` over T steps, the probability that all G
/// trajectories are the optimal one is at least `e^{-G T eps_sft}`. Every
/// identical-reward group must additionally assemble an exactly zero
/// policy-gradient term.
pub fn verify_peaked_collapse(
    eps_sft: f64,
    horizon: usize,
    group_size: usize,
    n_samples: usize,
    rng: &mut ChaCha20Rng,
) -> Result<BoundReport> {
    if eps_sft < 0.0 {
        return Err(Error::Validation("eps_sft must be nonnegative".into()));
    }
    if group_size < 2 || horizon == 0 {
        return Err(Error::Validation("need G >= 2 and T >= 1".into()));
    }
    let p_star = (-eps_sft).exp();

    let mut identical = 0usize;
    for _ in 0..n_samples {
        let mut all_optimal = true;
        'group: for _ in 0..group_size {
            for _ in 0..horizon {
                if rng.gen::<f64>() >= p_star {
                    all_optimal = false;
                    break 'group;
                }
            }
        }
        identical += usize::from(all_optimal);
    }
    let p_hat = identical as f64 / n_samples as f64;
    let bound = (-(group_size as f64) * horizon as f64 * eps_sft).exp();
    // binomial noise budget; the bound-based variance keeps the budget
    // meaningful when the empirical count is 0 or n
    let var = (p_hat * (1.0 - p_hat)).max(bound * (1.0 - bound));
    let sigma = (var / n_samples as f64).sqrt();
    let mut report = BoundReport::new(
        "peaked_collapse",
        BoundRelation::LowerBound,
        p_hat,
        bound,
        n_samples,
        3.0 * sigma + TOL_FLOOR,
    );

    // exact-zero gradient on identical-reward groups, assembled through the
    // real advantage and score-function paths
    let candidates = synthetic_candidates();
    let ctx = HistoryCtx::start(vec![]);
    let mut params = PolicyParams::zeros(256);
    for w in params.weights.iter_mut() {
        *w = rng.gen_range(-1.0..1.0);
    }
    let feats = policy::featurize_all(&ctx, Condition::Neutral, &candidates, params.dim());
    let mut acc = vec![0.0; params.dim()];
    for trial in 0..100 {
        let reward = f64::from(trial % 2 == 0);
        let rewards = vec![reward; group_size];
        let advantages = group_advantages(&rewards, 1e-6)?;
        for &advantage in &advantages {
            let chosen = rng.gen_range(0..candidates.len());
            policy::accumulate_grad_logprob(&params, &feats, chosen, 1.0, advantage, &mut acc);
        }
    }
    if acc.iter().any(|g| *g != 0.0) {
        report.satisfied = false;
    }
    Ok(report)
}

/// KL-probability bound: distributions constructed with
/// `D_KL(dirac_{a*} || pi) = eps` exactly must satisfy
/// `pi(a*) >= e^{-eps} >= 1 - eps`.
pub fn verify_kl_probability(eps: f64, rng: &mut ChaCha20Rng) -> Result<BoundReport> {
    if eps < 0.0 {
        return Err(Error::Validation("eps must be nonnegative".into()));
    }
    let trials = 200usize;
    let p_star = (-eps).exp();
    let mut min_p_star = f64::INFINITY;
    let mut constructed_ok = true;
    for _ in 0..trials {
        let k = rng.gen_range(2..9usize);
        let mut probs = vec![0.0; k];
        probs[0] = p_star;
        let remainder = 1.0 - p_star;
        let mut raw: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for r in raw.iter_mut() {
            *r *= remainder / total;
        }
        probs[1..].copy_from_slice(&raw);

        // KL(dirac || pi) collapses to -ln pi(a*)
        let kl = -probs[0].ln();
        if (kl - eps).abs() > 1e-12 {
            constructed_ok = false;
        }
        min_p_star = min_p_star.min(probs[0]);
    }
    let mut report = BoundReport::new(
        "kl_probability",
        BoundRelation::LowerBound,
        min_p_star,
        p_star,
        trials,
        TOL_FLOOR,
    );
    // the second inequality of the lemma chain
    if p_star + TOL_FLOOR < 1.0 - eps {
        report.satisfied = false;
    }
    if !constructed_ok {
        report.satisfied = false;
    }
    Ok(report)
}

/// Parameters for the default verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub group_size: usize,
    pub bernoulli_p: f64,
    pub prop2_p: f64,
    pub eps_sft: f64,
    pub horizon: usize,
    pub kl_eps: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 100_000,
            group_size: 5,
            bernoulli_p: 0.5,
            prop2_p: 0.5,
            eps_sft: 0.01,
            horizon: 4,
            kl_eps: 0.1,
        }
    }
}

/// The standard four-report verification battery.
pub fn default_reports(cfg: &TheoryConfig) -> Result<Vec<BoundReport>> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let dist = DiscreteDist::bernoulli(cfg.bernoulli_p)?;
    let reports = vec![
        verify_group_moment(&dist, cfg.group_size, cfg.n_samples, &mut rng)?,
        verify_variance_bound(
            cfg.prop2_p,
            1.0,
            0.0,
            0.0,
            0.0,
            cfg.group_size,
            cfg.n_samples,
            &mut rng,
        )?,
        verify_peaked_collapse(
            cfg.eps_sft,
            cfg.horizon,
            cfg.group_size,
            (cfg.n_samples / 10).max(10_000),
            &mut rng,
        )?,
        verify_kl_probability(cfg.kl_eps, &mut rng)?,
    ];
    Ok(reports)
}
