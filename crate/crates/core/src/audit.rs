//! Black-box DP auditing through the sliced-MI DP statistic.
//!
//! The null hypothesis is that the mechanism satisfies `ε`-SMI DP. Every
//! `ε`-DP (and `ε`-MI DP, Rényi DP of order ≥ 1) mechanism satisfies it, so a
//! rejection certifies a violation of all of them. The test rejects when the
//! statistic exceeds `ε + r`.
//!
//! Two ways to pick the margin `r`:
//!
//! * fixed margin: the caller chooses `r`. The level guarantee of this path
//!   comes from a bound with an unknown constant, see [`type1_bound`].
//! * bootstrap null: `r` comes from bootstrap replicates of a reference sample
//!   set drawn from a mechanism calibrated exactly at `ε`. This is a heuristic
//!   and is flagged as such in the report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::smi::{smi_dp_statistic, MiEstimator, NeuralDVConfig, SliceSampleSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMethod {
    FixedMargin,
    BootstrapNull,
}

impl ThresholdMethod {
    pub fn label(self) -> &'static str {
        match self {
            ThresholdMethod::FixedMargin => "fixed-margin",
            ThresholdMethod::BootstrapNull => "bootstrap-null",
        }
    }
}

/// The privacy notion being audited. The test is the same for all of them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AuditTarget {
    Dp,
    MiDp,
    RenyiDp { order: f64 },
    SmiDp,
}

impl AuditTarget {
    /// The chain of implications a rejection relies on.
    pub fn implication(&self) -> String {
        match self {
            AuditTarget::Dp => "rejection refutes eps-SMI DP, hence eps-MI DP and eps-DP".into(),
            AuditTarget::MiDp => "rejection refutes eps-SMI DP, hence eps-MI DP".into(),
            AuditTarget::RenyiDp { order } => {
                format!("rejection refutes eps-SMI DP, hence eps-Renyi DP of order {order} (order >= 1)")
            }
            AuditTarget::SmiDp => "rejection refutes eps-SMI DP".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let AuditTarget::RenyiDp { order } = self {
            if !(*order >= 1.0) {
                return Err(Error::invalid(format!(
                    "Renyi order must be at least 1 to imply SMI DP, got {order}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub eps: f64,
    /// Type-I budget `α`.
    pub level_alpha: f64,
    pub method: ThresholdMethod,
    /// Margin `r` for the fixed-margin method; ignored by bootstrap-null.
    pub margin: Option<f64>,
    /// Projections per record.
    pub p: usize,
    pub estimator: NeuralDVConfig,
    /// Bootstrap replicates for the bootstrap-null method.
    pub n_boot: usize,
    pub target: AuditTarget,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            eps: 0.1,
            level_alpha: 0.05,
            method: ThresholdMethod::FixedMargin,
            margin: Some(0.1),
            p: 16,
            estimator: NeuralDVConfig::default(),
            n_boot: 20,
            target: AuditTarget::Dp,
            seed: 0,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::range(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.level_alpha > 0.0 && self.level_alpha < 1.0) {
            return Err(Error::range(format!(
                "alpha must lie in (0, 1), got {}",
                self.level_alpha
            )));
        }
        if self.method == ThresholdMethod::FixedMargin {
            match self.margin {
                Some(r) if r > 0.0 && r.is_finite() => {}
                Some(r) => return Err(Error::range(format!("margin must be positive, got {r}"))),
                None => return Err(Error::invalid("fixed-margin mode needs a margin")),
            }
        }
        if self.method == ThresholdMethod::BootstrapNull && self.n_boot < 2 {
            return Err(Error::invalid(
                "bootstrap-null mode needs at least 2 replicates",
            ));
        }
        if self.p == 0 {
            return Err(Error::invalid("need at least one projection"));
        }
        self.target.validate()?;
        self.estimator.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    NoViolationDetected,
    Violation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub statistic: f64,
    pub threshold: f64,
    pub margin: f64,
    pub decision: Decision,
    /// Zero-based record index attaining the statistic.
    pub argmax_row: usize,
    pub per_row: Vec<f64>,
    pub per_row_stderr: Vec<f64>,
    pub seeds: Vec<u64>,
    pub mode: String,
    /// Set for bootstrap-null thresholds, which carry no level guarantee.
    pub heuristic: bool,
    pub eps: f64,
    pub level_alpha: f64,
    pub target: AuditTarget,
    pub implication: String,
    pub estimator: String,
    pub runtime_secs: f64,
}

/// Empirical `q`-quantile with linear interpolation.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Bootstrap-null margin: replicates of the statistic on resampled reference
/// draws with fresh projections. `r` is the larger of the `(1−α)` quantile's
/// excess over `ε` and its excess over the replicate median, floored at a tiny
/// positive value.
fn bootstrap_margin(
    reference: &SliceSampleSet,
    cfg: &AuditConfig,
    inner: &dyn MiEstimator,
) -> Result<f64> {
    let reps = (0..cfg.n_boot)
        .map(|b| {
            let boot_seed = Stream::substream(cfg.seed, &[1, b as u64]).next_u64();
            let resampled = reference.bootstrap(boot_seed);
            Ok(smi_dp_statistic(&resampled, cfg.p, inner, boot_seed ^ 0xB007)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let q = quantile(&reps, 1.0 - cfg.level_alpha);
    let med = quantile(&reps, 0.5);
    Ok((q - cfg.eps).max(q - med).max(1e-12))
}

/// Runs the audit with the configured neural DV estimator.
pub fn audit_dp(
    samples: &SliceSampleSet,
    cfg: &AuditConfig,
    reference: Option<&SliceSampleSet>,
) -> Result<AuditReport> {
    audit_dp_with(samples, cfg, reference, &cfg.estimator)
}

/// Runs the audit with any inner MI estimator.
pub fn audit_dp_with(
    samples: &SliceSampleSet,
    cfg: &AuditConfig,
    reference: Option<&SliceSampleSet>,
    inner: &dyn MiEstimator,
) -> Result<AuditReport> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let stat_seed = Stream::substream(cfg.seed, &[0]).next_u64();
    let stat = smi_dp_statistic(samples, cfg.p, inner, stat_seed)?;
    let margin = match cfg.method {
        ThresholdMethod::FixedMargin => cfg.margin.expect("validated"),
        ThresholdMethod::BootstrapNull => {
            let reference = reference.ok_or_else(|| {
                Error::invalid("bootstrap-null mode needs a reference sample set")
            })?;
            bootstrap_margin(reference, cfg, inner)?
        }
    };
    let threshold = cfg.eps + margin;
    let decision = if stat.value > threshold {
        Decision::Violation
    } else {
        Decision::NoViolationDetected
    };
    Ok(AuditReport {
        statistic: stat.value,
        threshold,
        margin,
        decision,
        argmax_row: stat.argmax,
        per_row: stat.per_row.iter().map(|e| e.value).collect(),
        per_row_stderr: stat.per_row.iter().map(|e| e.stderr).collect(),
        seeds: vec![cfg.seed, stat_seed],
        mode: cfg.method.label().into(),
        heuristic: cfg.method == ThresholdMethod::BootstrapNull,
        eps: cfg.eps,
        level_alpha: cfg.level_alpha,
        target: cfg.target,
        implication: cfg.target.implication(),
        estimator: inner.label(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// `C (n³k²/r)(ℓ^{−½} + m^{−½} + p^{−½})`, a bound on the Type-I error of the
/// fixed-margin test. `C` is not known in closed form; this is diagnostic only.
pub fn type1_bound(
    n: usize,
    k: usize,
    r: f64,
    ell: usize,
    m: usize,
    p: usize,
    c: f64,
) -> Result<f64> {
    if n == 0 || k == 0 || ell == 0 || m == 0 || p == 0 || !(r > 0.0) || !(c > 0.0) {
        return Err(Error::invalid("type1_bound needs positive arguments"));
    }
    let inv_sqrt = |x: usize| 1.0 / (x as f64).sqrt();
    let (n, k) = (n as f64, k as f64);
    Ok(c * n.powi(3) * k * k / r * (inv_sqrt(ell) + inv_sqrt(m) + inv_sqrt(p)))
}
