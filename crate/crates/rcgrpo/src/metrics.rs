//! Training-dynamics diagnostics: per-step records, Pearson correlation
//! with significance, advantage spread, and early/late windowed summaries.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Default early/late window width, roughly one fifth of a training run.
pub const DEFAULT_WINDOW: usize = 70;

/// One training step's diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub mean_reward: f64,
    /// Mean per-decision policy entropy over the step's rollouts, in nats.
    pub mean_entropy: f64,
    /// Mean over groups of (max advantage - min advantage).
    pub advantage_spread: f64,
    /// Mean exact KL to the frozen reference over visited states.
    pub mean_kl_ref: f64,
    pub grad_norm: f64,
    /// Fraction of groups whose rewards were all identical.
    pub frac_zero_sigma_groups: f64,
    /// Fraction of sampled conditioning tokens equal to HIGH.
    pub token_high_frac: f64,
}

pub const CSV_HEADER: &str = "step,mean_reward,mean_entropy,advantage_spread,mean_kl_ref,grad_norm,frac_zero_sigma_groups,token_high_frac";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.mean_reward,
            self.mean_entropy,
            self.advantage_spread,
            self.mean_kl_ref,
            self.grad_norm,
            self.frac_zero_sigma_groups,
            self.token_high_frac
        )
    }
}

/// Write records as JSON lines, truncating or appending.
pub fn write_jsonl(path: &Path, records: &[MetricsRecord], append: bool) -> Result<()> {
    let mut opts = std::fs::OpenOptions::new();
    opts.create(true).write(true);
    if append {
        opts.append(true);
    } else {
        opts.truncate(true);
    }
    let mut out = std::io::BufWriter::new(opts.open(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// CSV export with the same columns as the JSON records.
pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 64);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Max minus min advantage within one group.
pub fn advantage_spread(advantages: &[f64]) -> Result<f64> {
    if advantages.is_empty() {
        return Err(Error::Validation("advantage spread of an empty group".into()));
    }
    let max = advantages.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = advantages.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Euclidean norm.
pub fn grad_norm(grad: &[f64]) -> Result<f64> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient entry".into()));
    }
    Ok(grad.iter().map(|g| g * g).sum::<f64>().sqrt())
}

/// Pearson correlation with a two-sided t-test p-value for rho = 0.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Validation(format!(
            "pearson over unequal lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Validation("pearson needs at least 3 points".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in one of the series".into(),
        ));
    }
    let rho = (cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p_value = if (1.0 - rho * rho) <= f64::EPSILON {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::Numeric(format!("t-distribution: {e}")))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((rho, p_value))
}

/// Significance marker at the conventional reporting thresholds.
pub fn significance_stars(p_value: f64) -> &'static str {
    if p_value < 0.001 {
        "***"
    } else if p_value < 0.01 {
        "**"
    } else {
        "n.s."
    }
}

/// Means of record fields over a window of steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub advantage_spread: f64,
    pub mean_kl_ref: f64,
    pub grad_norm: f64,
    pub frac_zero_sigma_groups: f64,
}

fn window_stats(records: &[MetricsRecord]) -> WindowStats {
    let n = records.len().max(1) as f64;
    let mean = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    WindowStats {
        mean_reward: mean(|r| r.mean_reward),
        mean_entropy: mean(|r| r.mean_entropy),
        advantage_spread: mean(|r| r.advantage_spread),
        mean_kl_ref: mean(|r| r.mean_kl_ref),
        grad_norm: mean(|r| r.grad_norm),
        frac_zero_sigma_groups: mean(|r| r.frac_zero_sigma_groups),
    }
}

/// Early/late aggregates over `W`-step windows, plus the entropy movement
/// between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window: usize,
    pub early: WindowStats,
    pub late: WindowStats,
    pub entropy_delta: f64,
    /// Percentage change of entropy from early to late window.
    pub entropy_pct_change: f64,
    /// Set when the log is shorter than 2W and the windows overlap.
    pub overlapping: bool,
    /// Set when the log is shorter than W; aggregates use what exists.
    pub truncated: bool,
}

pub fn window_summary(log: &[MetricsRecord], window: usize) -> Result<WindowSummary> {
    if log.is_empty() {
        return Err(Error::Validation("window summary of an empty log".into()));
    }
    if window == 0 {
        return Err(Error::Validation("window width must be positive".into()));
    }
    let truncated = log.len() < window;
    let w = window.min(log.len());
    let early = window_stats(&log[..w]);
    let late = window_stats(&log[log.len() - w..]);
    let entropy_delta = late.mean_entropy - early.mean_entropy;
    let entropy_pct_change = if early.mean_entropy != 0.0 {
        100.0 * entropy_delta / early.mean_entropy
    } else {
        0.0
    };
    Ok(WindowSummary {
        window,
        early,
        late,
        entropy_delta,
        entropy_pct_change,
        overlapping: log.len() < 2 * window,
        truncated,
    })
}
