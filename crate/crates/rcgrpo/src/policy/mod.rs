//! Featurized categorical policy over candidate tool calls, conditioned on
//! a reward token.
//!
//! Probabilities are a linear-softmax over hashed features, which keeps
//! log-probabilities, entropy, KL divergence, and score-function gradients
//! exact and cheap to verify against finite differences.

pub mod features;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use features::{
    featurize, featurize_all, goal_feature_tokens, Condition, ConditioningScheme, FeatureVector,
    HistoryCtx, DEFAULT_DIM,
};

use crate::env::ToolCall;
use crate::error::{Error, Result};

/// Weight table of the policy. Snapshots are immutable once shared; updates
/// produce a new value with a bumped version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub weights: Vec<f64>,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            version: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.weights.iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric("non-finite policy weight".into()))
        }
    }
}

/// Categorical distribution over one decision point's candidates.
///
/// `logits` are the raw feature dot products; the temperature is applied
/// inside the softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub candidates: Vec<ToolCall>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Probabilities without the owning struct; the hot path for losses.
pub(crate) fn probs_for(
    params: &PolicyParams,
    feats: &[FeatureVector],
    temperature: f64,
) -> Vec<f64> {
    let logits: Vec<f64> = feats.iter().map(|f| f.dot(&params.weights)).collect();
    softmax(&logits, temperature)
}

/// Build the policy distribution over `candidates`.
pub fn distribution(
    params: &PolicyParams,
    ctx: &HistoryCtx,
    condition: Condition,
    candidates: Vec<ToolCall>,
    temperature: f64,
) -> Result<ActionDistribution> {
    if candidates.is_empty() {
        return Err(Error::Validation("no candidates to score".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Validation(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let feats = featurize_all(ctx, condition, &candidates, params.dim());
    let logits: Vec<f64> = feats.iter().map(|f| f.dot(&params.weights)).collect();
    let probs = softmax(&logits, temperature);
    debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    Ok(ActionDistribution {
        candidates,
        logits,
        probs,
    })
}

/// Draw an index from the distribution; returns `(index, ln prob)`.
pub fn sample<R: Rng>(dist: &ActionDistribution, rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut index = dist.probs.len() - 1;
    for (i, p) in dist.probs.iter().enumerate() {
        cum += p;
        if u < cum {
            index = i;
            break;
        }
    }
    (index, dist.probs[index].ln())
}

/// Index of the highest-probability candidate (ties by lower index).
pub fn argmax(dist: &ActionDistribution) -> usize {
    let mut best = 0;
    for (i, p) in dist.probs.iter().enumerate() {
        if *p > dist.probs[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats, with the 0 ln 0 = 0 convention.
pub fn entropy(dist: &ActionDistribution) -> f64 {
    entropy_of(&dist.probs)
}

pub fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Analytic gradient of `ln pi(chosen | ctx, condition)` with respect to the
/// weights: `(phi(chosen) - sum_k p_k phi(k)) / temperature`.
pub fn grad_logprob(
    params: &PolicyParams,
    ctx: &HistoryCtx,
    condition: Condition,
    candidates: &[ToolCall],
    chosen: usize,
    temperature: f64,
) -> Vec<f64> {
    let mut acc = vec![0.0; params.dim()];
    let feats = featurize_all(ctx, condition, candidates, params.dim());
    accumulate_grad_logprob(params, &feats, chosen, temperature, 1.0, &mut acc);
    acc
}

/// Sparse accumulation form of [`grad_logprob`]: adds
/// `scale * grad ln pi(chosen)` into `acc`. Skips work when `scale` is 0 so
/// zero-advantage updates stay exactly zero.
pub(crate) fn accumulate_grad_logprob(
    params: &PolicyParams,
    feats: &[FeatureVector],
    chosen: usize,
    temperature: f64,
    scale: f64,
    acc: &mut [f64],
) {
    if scale == 0.0 {
        return;
    }
    let probs = probs_for(params, feats, temperature);
    feats[chosen].add_scaled_into(scale / temperature, acc);
    for (f, p) in feats.iter().zip(&probs) {
        f.add_scaled_into(-scale * p / temperature, acc);
    }
}

/// Exact categorical KL divergence `KL(pi_p || pi_q)` over a shared
/// candidate set.
pub fn kl(
    params_p: &PolicyParams,
    params_q: &PolicyParams,
    ctx: &HistoryCtx,
    condition: Condition,
    candidates: &[ToolCall],
    temperature: f64,
) -> f64 {
    let feats = featurize_all(ctx, condition, candidates, params_p.dim());
    kl_from_features(params_p, params_q, &feats, temperature)
}

pub(crate) fn kl_from_features(
    params_p: &PolicyParams,
    params_q: &PolicyParams,
    feats: &[FeatureVector],
    temperature: f64,
) -> f64 {
    let p = probs_for(params_p, feats, temperature);
    let q = probs_for(params_q, feats, temperature);
    p.iter()
        .zip(&q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

/// Adds `scale * grad_p KL(pi_p || pi_q)` into `acc`:
/// `(1/T) sum_a p_a (ln(p_a/q_a) - KL) phi_a`.
pub(crate) fn accumulate_grad_kl(
    params_p: &PolicyParams,
    params_q: &PolicyParams,
    feats: &[FeatureVector],
    temperature: f64,
    scale: f64,
    acc: &mut [f64],
) {
    if scale == 0.0 {
        return;
    }
    let p = probs_for(params_p, feats, temperature);
    let q = probs_for(params_q, feats, temperature);
    let log_ratio: Vec<f64> = p
        .iter()
        .zip(&q)
        .map(|(pi, qi)| pi.ln() - qi.ln())
        .collect();
    let kl: f64 = p.iter().zip(&log_ratio).map(|(pi, lr)| pi * lr).sum();
    for ((f, pi), lr) in feats.iter().zip(&p).zip(&log_ratio) {
        f.add_scaled_into(scale * pi * (lr - kl) / temperature, acc);
    }
}

/// Which trainer produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Sft,
    Rctp,
    Rl,
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointKind::Sft => f.write_str("sft"),
            CheckpointKind::Rctp => f.write_str("rctp"),
            CheckpointKind::Rl => f.write_str("rl"),
        }
    }
}

/// On-disk parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Feature dimension.
    pub f: usize,
    pub temperature: f64,
    pub weights: Vec<f64>,
    pub version: u64,
    pub kind: CheckpointKind,
    /// RL steps completed when this snapshot was written (0 for stage 1).
    #[serde(default)]
    pub trained_steps: usize,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, temperature: f64, kind: CheckpointKind) -> Self {
        Self {
            f: params.dim(),
            temperature,
            weights: params.weights.clone(),
            version: params.version,
            kind,
            trained_steps: 0,
        }
    }

    pub fn params(&self) -> PolicyParams {
        PolicyParams {
            weights: self.weights.clone(),
            version: self.version,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.weights.len() != self.f {
            return Err(Error::Validation(format!(
                "checkpoint dimension {} does not match {} weights",
                self.f,
                self.weights.len()
            )));
        }
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.weights.len() != ckpt.f {
            return Err(Error::Validation(format!(
                "checkpoint dimension {} does not match {} weights",
                ckpt.f,
                ckpt.weights.len()
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn four_candidates() -> Vec<ToolCall> {
        vec![
            ToolCall::new("done"),
            ToolCall::new("ls"),
            ToolCall::new("rm").with("path", "a.txt"),
            ToolCall::new("mv").with("src", "a.txt").with("dst", "/b"),
        ]
    }

    fn ctx() -> HistoryCtx {
        HistoryCtx::start(vec!["a.txt".to_string(), "/b".to_string()])
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let params = PolicyParams::zeros(DEFAULT_DIM);
        let dist = distribution(&params, &ctx(), Condition::High, four_candidates(), 1.0).unwrap();
        for p in &dist.probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
        // doubling the temperature cannot change a uniform distribution
        let dist2 = distribution(&params, &ctx(), Condition::High, four_candidates(), 2.0).unwrap();
        assert_eq!(dist.probs, dist2.probs);
    }

    #[test]
    fn temperature_must_be_positive() {
        let params = PolicyParams::zeros(DEFAULT_DIM);
        assert!(distribution(&params, &ctx(), Condition::High, four_candidates(), 0.0).is_err());
        assert!(distribution(&params, &ctx(), Condition::High, four_candidates(), -1.0).is_err());
    }

    #[test]
    fn probs_match_brute_force_softmax() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut params = PolicyParams::zeros(DEFAULT_DIM);
            for w in params.weights.iter_mut() {
                *w = rng.gen_range(-2.0..2.0);
            }
            let temperature = rng.gen_range(0.3..3.0);
            let cands = four_candidates();
            let dist =
                distribution(&params, &ctx(), Condition::Low, cands.clone(), temperature).unwrap();
            // independent route: dense dot products, naive exp / normalize
            let dense: Vec<Vec<f64>> = cands
                .iter()
                .map(|c| featurize(&ctx(), Condition::Low, c, DEFAULT_DIM).to_dense())
                .collect();
            let dots: Vec<f64> = dense
                .iter()
                .map(|d| d.iter().zip(&params.weights).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let exps: Vec<f64> = dots.iter().map(|z| (z / temperature).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (p, e) in dist.probs.iter().zip(&exps) {
                assert!((p - e / sum).abs() < 1e-12, "expected {} got {p}", e / sum);
            }
            let total: f64 = dist.probs.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sample_respects_degenerate_distribution() {
        let dist = ActionDistribution {
            candidates: four_candidates()[..3].to_vec(),
            logits: vec![0.0, 0.0, 0.0],
            probs: vec![1.0, 0.0, 0.0],
        };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (i, lp) = sample(&dist, &mut rng);
            assert_eq!(i, 0);
            assert_eq!(lp, 0.0);
        }
    }

    #[test]
    fn sample_frequencies_match_probs_within_three_sigma() {
        let mut params = PolicyParams::zeros(DEFAULT_DIM);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for w in params.weights.iter_mut() {
            *w = rng.gen_range(-1.0..1.0);
        }
        let dist = distribution(&params, &ctx(), Condition::High, four_candidates(), 1.0).unwrap();
        let n = 100_000usize;
        let mut counts = vec![0usize; dist.probs.len()];
        for _ in 0..n {
            let (i, lp) = sample(&dist, &mut rng);
            counts[i] += 1;
            assert_eq!(lp, dist.probs[i].ln());
        }
        for (c, p) in counts.iter().zip(&dist.probs) {
            let freq = *c as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "freq {freq} vs prob {p} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn entropy_known_values() {
        let mk = |probs: Vec<f64>| ActionDistribution {
            candidates: four_candidates()[..probs.len()].to_vec(),
            logits: vec![0.0; probs.len()],
            probs,
        };
        assert!((entropy(&mk(vec![0.25; 4])) - 4.0f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&mk(vec![1.0, 0.0, 0.0])), 0.0);
        // direct summation oracle: 1.0397207708399179
        assert!((entropy(&mk(vec![0.5, 0.25, 0.25])) - 1.0397207708399179).abs() < 1e-12);
    }

    #[test]
    fn grad_is_zero_for_identical_candidates() {
        // two copies of the same call featurize identically, so the score
        // function cancels
        let cands = vec![ToolCall::new("ls"), ToolCall::new("ls")];
        let params = PolicyParams::zeros(DEFAULT_DIM);
        let g = grad_logprob(&params, &ctx(), Condition::High, &cands, 0, 1.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn grad_matches_central_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for trial in 0..20 {
            let mut params = PolicyParams::zeros(DEFAULT_DIM);
            for w in params.weights.iter_mut() {
                *w = rng.gen_range(-1.5..1.5);
            }
            let temperature = rng.gen_range(0.5..2.0);
            let cands = four_candidates();
            let chosen = rng.gen_range(0..cands.len());
            let grad = grad_logprob(&params, &ctx(), Condition::Low, &cands, chosen, temperature);

            let feats = featurize_all(&ctx(), Condition::Low, &cands, DEFAULT_DIM);
            let logprob_at = |params: &PolicyParams| {
                probs_for(params, &feats, temperature)[chosen].ln()
            };
            // probe the coordinates touched by the candidates plus a few idle ones
            let mut coords: Vec<usize> = feats.iter().flat_map(|f| f.iter().map(|(i, _)| i)).collect();
            coords.extend([0usize, 1, 2]);
            coords.sort_unstable();
            coords.dedup();
            let h = 1e-5;
            for &i in &coords {
                let mut plus = params.clone();
                plus.weights[i] += h;
                let mut minus = params.clone();
                minus.weights[i] -= h;
                let fd = (logprob_at(&plus) - logprob_at(&minus)) / (2.0 * h);
                let denom = fd.abs().max(1e-8);
                assert!(
                    (grad[i] - fd).abs() / denom < 1e-5 || (grad[i] - fd).abs() < 1e-9,
                    "trial {trial} coord {i}: analytic {} vs fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn score_function_expectation_is_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut params = PolicyParams::zeros(DEFAULT_DIM);
        for w in params.weights.iter_mut() {
            *w = rng.gen_range(-1.0..1.0);
        }
        let cands = four_candidates();
        let c = ctx();
        let feats = featurize_all(&c, Condition::High, &cands, DEFAULT_DIM);
        let dist = distribution(&params, &c, Condition::High, cands.clone(), 1.0).unwrap();
        let n = 100_000usize;
        let mut acc = vec![0.0; DEFAULT_DIM];
        for _ in 0..n {
            let (i, _) = sample(&dist, &mut rng);
            accumulate_grad_logprob(&params, &feats, i, 1.0, 1.0 / n as f64, &mut acc);
        }
        // Monte Carlo mean of the score function; per-coordinate scale is O(1)
        let max = acc.iter().cloned().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max < 0.02, "score identity violated: max |mean| = {max}");
    }

    #[test]
    fn kl_of_identical_params_is_zero() {
        let mut params = PolicyParams::zeros(DEFAULT_DIM);
        params.weights[0] = 0.7;
        let v = kl(&params, &params, &ctx(), Condition::High, &four_candidates(), 1.0);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn kl_against_uniform_matches_direct_summation() {
        // craft weights so that p = [0.9, 0.1] over two candidates, q uniform
        let cands = vec![ToolCall::new("done"), ToolCall::new("ls")];
        let c = HistoryCtx::start(vec![]);
        let feats = featurize_all(&c, Condition::Neutral, &cands, DEFAULT_DIM);
        let d0 = feats[0].to_dense();
        let d1 = feats[1].to_dense();
        let diff: Vec<f64> = d0.iter().zip(&d1).map(|(a, b)| a - b).collect();
        let norm2: f64 = diff.iter().map(|x| x * x).sum();
        let target = (0.9f64 / 0.1).ln(); // logit gap for [0.9, 0.1]
        let alpha = target / norm2;
        let mut params_p = PolicyParams::zeros(DEFAULT_DIM);
        for (w, d) in params_p.weights.iter_mut().zip(&diff) {
            *w = alpha * d;
        }
        let params_q = PolicyParams::zeros(DEFAULT_DIM);
        let dist = distribution(&params_p, &c, Condition::Neutral, cands.clone(), 1.0).unwrap();
        assert!((dist.probs[0] - 0.9).abs() < 1e-12);
        let v = kl(&params_p, &params_q, &c, Condition::Neutral, &cands, 1.0);
        // direct summation: 0.9 ln(0.9/0.5) + 0.1 ln(0.1/0.5)
        assert!((v - 0.3680642071684971).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_on_random_instances() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for _ in 0..50 {
            let mut p = PolicyParams::zeros(DEFAULT_DIM);
            let mut q = PolicyParams::zeros(DEFAULT_DIM);
            for w in p.weights.iter_mut() {
                *w = rng.gen_range(-2.0..2.0);
            }
            for w in q.weights.iter_mut() {
                *w = rng.gen_range(-2.0..2.0);
            }
            let v = kl(&p, &q, &ctx(), Condition::Low, &four_candidates(), 1.0);
            assert!(v >= -1e-15, "KL must be nonnegative, got {v}");
        }
    }

    #[test]
    fn kl_probability_bound_at_the_boundary() {
        // pi(a*) = e^{-eps} exactly, so KL(dirac || pi) = eps; the bound
        // pi(a*) >= e^{-eps} >= 1 - eps holds with equality on the left
        let eps = 0.1f64;
        let cands = vec![ToolCall::new("done"), ToolCall::new("ls")];
        let c = HistoryCtx::start(vec![]);
        let feats = featurize_all(&c, Condition::Neutral, &cands, DEFAULT_DIM);
        let p_star = (-eps).exp();
        let d0 = feats[0].to_dense();
        let d1 = feats[1].to_dense();
        let diff: Vec<f64> = d0.iter().zip(&d1).map(|(a, b)| a - b).collect();
        let norm2: f64 = diff.iter().map(|x| x * x).sum();
        let alpha = (p_star / (1.0 - p_star)).ln() / norm2;
        let mut params = PolicyParams::zeros(DEFAULT_DIM);
        for (w, d) in params.weights.iter_mut().zip(&diff) {
            *w = alpha * d;
        }
        let dist = distribution(&params, &c, Condition::Neutral, cands, 1.0).unwrap();
        assert!((dist.probs[0] - 0.9048374180359595).abs() < 1e-12);
        assert!(dist.probs[0] >= 1.0 - eps);
        // KL(dirac || pi) = -ln pi(a*) = eps
        assert!((-dist.probs[0].ln() - eps).abs() < 1e-12);
    }

    #[test]
    fn grad_kl_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(30);
        for _ in 0..10 {
            let mut p = PolicyParams::zeros(DEFAULT_DIM);
            let mut q = PolicyParams::zeros(DEFAULT_DIM);
            for w in p.weights.iter_mut() {
                *w = rng.gen_range(-1.0..1.0);
            }
            for w in q.weights.iter_mut() {
                *w = rng.gen_range(-1.0..1.0);
            }
            let cands = four_candidates();
            let c = ctx();
            let temperature = 1.3;
            let feats = featurize_all(&c, Condition::High, &cands, DEFAULT_DIM);
            let mut acc = vec![0.0; DEFAULT_DIM];
            accumulate_grad_kl(&p, &q, &feats, temperature, 1.0, &mut acc);
            let coords: Vec<usize> = feats
                .iter()
                .flat_map(|f| f.iter().map(|(i, _)| i))
                .collect();
            let h = 1e-6;
            for &i in coords.iter().take(30) {
                let mut plus = p.clone();
                plus.weights[i] += h;
                let mut minus = p.clone();
                minus.weights[i] -= h;
                let fd = (kl_from_features(&plus, &q, &feats, temperature)
                    - kl_from_features(&minus, &q, &feats, temperature))
                    / (2.0 * h);
                assert!(
                    (acc[i] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                    "coord {i}: {} vs {fd}",
                    acc[i]
                );
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join(format!("rcgrpo-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.json");
        let mut params = PolicyParams::zeros(64);
        params.weights[7] = 1.25;
        params.version = 9;
        let ckpt = Checkpoint::new(&params, 1.0, CheckpointKind::Rctp);
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, back);
        assert_eq!(back.params(), params);

        // schema: dimension, temperature, weight vector, version
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(doc["f"], 64);
        assert_eq!(doc["temperature"], 1.0);
        assert_eq!(doc["version"], 9);
        assert_eq!(doc["kind"], "rctp");
        assert_eq!(doc["weights"].as_array().unwrap().len(), 64);
        std::fs::remove_dir_all(&dir).ok();
    }
}
