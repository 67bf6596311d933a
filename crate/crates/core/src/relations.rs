//! Conversions between privacy notions and related closed-form bounds.
//!
//! Every conversion that only holds under extra assumptions records them in
//! [`ConversionResult::assumptions`]; none is applied silently.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::infotheory::binary_entropy;

pub const ASSUME_ALL_DISTRIBUTIONS: &str = "theta = all distributions on the database space";
pub const ASSUME_FINITE_SUPPORT: &str = "finite mechanism support or finite private image";
pub const ASSUME_DENSITY_BOUNDS: &str =
    "joint densities exist with the declared ratio and level bounds";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConversionResult {
    pub input_notion: String,
    pub output_notion: String,
    pub params_in: Vec<f64>,
    pub params_out: Vec<f64>,
    pub assumptions: Vec<String>,
    /// Set when the output guarantee is trivially true (e.g. `δ ≥ 1`).
    pub vacuous: bool,
}

impl ConversionResult {
    /// The headline output parameter.
    pub fn value(&self) -> f64 {
        self.params_out[0]
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::range(format!("eps must be non-negative, got {eps}")));
    }
    Ok(())
}

/// `ε`-PP implies `ε″`-MI PP with `ε″ = min(ε, ε²/2)`.
pub fn pp_to_mipp(eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::range(format!("eps must be positive, got {eps}")));
    }
    Ok(eps.min(0.5 * eps * eps))
}

/// `ε″`-MI PP implies `(ε′, √(2ε″))`-PP when Θ contains every distribution.
pub fn mipp_to_approx_pp(eps2: f64, eps_prime: f64) -> Result<ConversionResult> {
    check_eps(eps2)?;
    check_eps(eps_prime)?;
    let delta = (2.0 * eps2).sqrt();
    Ok(ConversionResult {
        input_notion: "mi-pp".into(),
        output_notion: "approx-pp".into(),
        params_in: vec![eps2],
        params_out: vec![eps_prime, delta],
        assumptions: vec![ASSUME_ALL_DISTRIBUTIONS.into()],
        vacuous: delta >= 1.0,
    })
}

/// `δ′ = 1 − 2(1 − δ)/(e^ε + 1)`, clamped to `[0, 1]`.
pub fn delta_prime(eps: f64, delta: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::range(format!(
            "delta must lie in [0, 1], got {delta}"
        )));
    }
    let dp = if eps.is_infinite() {
        1.0
    } else {
        1.0 - 2.0 * (1.0 - delta) / (eps.exp() + 1.0)
    };
    Ok(dp.clamp(0.0, 1.0))
}

/// `(ε, δ)`-PP to MI-PP under a finite-cardinality condition:
/// `ε* = 2 h_b(δ′) + 2 δ′ ln(min(|supp M|, max |Im g| + 1))`.
pub fn approx_pp_to_mipp_finite(
    eps: f64,
    delta: f64,
    supp_m: Option<u64>,
    max_im_g: Option<u64>,
) -> Result<ConversionResult> {
    let card = match (supp_m, max_im_g) {
        (Some(s), Some(g)) => s.min(g.saturating_add(1)),
        (Some(s), None) => s,
        (None, Some(g)) => g.saturating_add(1),
        (None, None) => {
            return Err(Error::capability(
                "need a finite mechanism support or a finite private image",
            ))
        }
    };
    if card == 0 {
        return Err(Error::invalid("cardinalities must be positive"));
    }
    let dp = delta_prime(eps, delta)?;
    let eps_star = 2.0 * binary_entropy(dp) + 2.0 * dp * (card as f64).ln();
    Ok(ConversionResult {
        input_notion: "approx-pp".into(),
        output_notion: "mi-pp".into(),
        params_in: vec![eps, delta],
        params_out: vec![eps_star, dp],
        assumptions: vec![ASSUME_FINITE_SUPPORT.into()],
        vacuous: false,
    })
}

/// Likelihood-ratio bounds for one `(a, b, c)` triple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioBound {
    pub alpha: f64,
    pub beta: f64,
}

/// Density level bounds for one `(a, c)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LevelBound {
    pub u: f64,
    pub l: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DensityBoundSummary {
    pub ratios: Vec<RatioBound>,
    pub levels: Vec<LevelBound>,
}

impl DensityBoundSummary {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() && self.levels.is_empty() {
            return Err(Error::invalid("density summary has no bounds"));
        }
        for r in &self.ratios {
            if !(r.alpha > 0.0 && r.alpha <= 1.0) || !(r.beta >= 0.0) || !r.beta.is_finite() {
                return Err(Error::invalid(format!(
                    "need 0 < alpha <= 1 and finite beta >= 0, got {r:?}"
                )));
            }
        }
        for b in &self.levels {
            if !(b.l > 0.0) {
                return Err(Error::invalid(format!(
                    "density lower bound must be positive, got {}",
                    b.l
                )));
            }
            if !(b.u >= b.l) || !b.u.is_finite() {
                return Err(Error::invalid(format!("need finite u >= l, got {b:?}")));
            }
        }
        Ok(())
    }
}

/// `ln(1/α)/(1 − α)` with its limit 1 at `α = 1`.
fn log_ratio_term(alpha: f64) -> f64 {
    if (1.0 - alpha).abs() < 1e-12 {
        1.0
    } else {
        -alpha.ln() / (1.0 - alpha)
    }
}

/// `(ε, δ)`-PP to MI-PP under density bounds:
/// `ε* = δ′ · min( max ½(ln(1/α)/(1−α) − β), max ln(u/ℓ) )`.
///
/// A branch with no bounds supplied is treated as unavailable (`+∞`).
pub fn approx_pp_to_mipp_density(
    eps: f64,
    delta: f64,
    bounds: &DensityBoundSummary,
) -> Result<ConversionResult> {
    bounds.validate()?;
    let dp = delta_prime(eps, delta)?;
    let branch1 = bounds
        .ratios
        .iter()
        .map(|r| 0.5 * (log_ratio_term(r.alpha) - r.beta))
        .reduce(f64::max)
        .unwrap_or(f64::INFINITY);
    let branch2 = bounds
        .levels
        .iter()
        .map(|b| (b.u / b.l).ln())
        .reduce(f64::max)
        .unwrap_or(f64::INFINITY);
    let eps_star = if dp == 0.0 {
        0.0
    } else {
        dp * branch1.min(branch2)
    };
    Ok(ConversionResult {
        input_notion: "approx-pp".into(),
        output_notion: "mi-pp".into(),
        params_in: vec![eps, delta],
        params_out: vec![eps_star, dp, branch1, branch2],
        assumptions: vec![ASSUME_DENSITY_BOUNDS.into()],
        vacuous: false,
    })
}

/// `η ≤ Σ ln |supp M_i|` over the mechanisms after the first.
pub fn eta_cardinality_bound(supp_sizes: &[u64]) -> Result<f64> {
    if supp_sizes.contains(&0) {
        return Err(Error::invalid("support sizes must be positive"));
    }
    Ok(supp_sizes.iter().map(|&s| (s as f64).ln()).sum())
}

/// `η ≤ ½ Σ E[ln(πe Var(M_i|g,w) / (4 Var(M_i|X)))]`, floored at zero.
pub fn eta_logconcave_bound(log_terms: &[f64]) -> Result<f64> {
    if log_terms.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("log-concave terms must be finite"));
    }
    Ok((0.5 * log_terms.iter().sum::<f64>()).max(0.0))
}

/// Conditional mutual information of an `ε`-MI DP algorithm on `n` records is at most `εn`.
pub fn cmi_bound(eps: f64, n: u64) -> Result<f64> {
    check_eps(eps)?;
    Ok(eps * n as f64)
}

/// Best achievable utility `H(f|g) + ε` is an upper bound.
pub fn utility_upper_bound(h_f_given_g: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(h_f_given_g + eps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UtilityLowerBound {
    pub value: f64,
    pub l1: f64,
    pub l2: f64,
}

/// `max(L₁, L₂)` with `L₁ = H(f|g) − H(g|f) + ε` and
/// `L₂ = H(f|g) − αH(g|f) + ε − (1−α)(ln(I(g;f) + 1) + 4)`, `α = ε/H(g)`.
pub fn utility_lower_bound(
    h_f_given_g: f64,
    h_g_given_f: f64,
    i_gf: f64,
    h_g: f64,
    eps: f64,
) -> Result<UtilityLowerBound> {
    check_eps(eps)?;
    if eps >= i_gf {
        return Err(Error::range(format!(
            "lower bound needs eps < I(g;f) = {i_gf}, got {eps}"
        )));
    }
    if !(h_g > 0.0) {
        return Err(Error::invalid("H(g) must be positive"));
    }
    let alpha = eps / h_g;
    let l1 = h_f_given_g - h_g_given_f + eps;
    let l2 = h_f_given_g - alpha * h_g_given_f + eps - (1.0 - alpha) * ((i_gf + 1.0).ln() + 4.0);
    Ok(UtilityLowerBound {
        value: l1.max(l2),
        l1,
        l2,
    })
}

/// Correlation below which jointly Gaussian scalar releases need no noise:
/// `√((e^{2ε} − 1) e^{−2ε})`.
pub fn gaussian_free_privacy_threshold(eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::range(format!("eps must be positive, got {eps}")));
    }
    Ok((-(-2.0 * eps).exp_m1()).sqrt())
}
