//! Noise calibration and sampling for additive mechanisms `M(X) = f(X) + Z`.
//!
//! Each calibrator has a raw-input form (taking already computed variance
//! terms) and a framework form that computes those terms per family member and
//! public function, then takes the supremum. Monte Carlo terms are inflated by
//! two standard errors; reports carry both the raw and the inflated bound.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::framework::{DataFunction, Database, DistributionFamily, Member, PPFramework};
use crate::infotheory::{conditional_moments, BlackBoxMechanism, ConditionalMoments, McConfig};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseFamily {
    Laplace { b: f64 },
    Gaussian { sigma2: f64 },
}

impl NoiseFamily {
    /// Laplace `b` or Gaussian `σ`.
    pub fn scale(&self) -> f64 {
        match *self {
            NoiseFamily::Laplace { b } => b,
            NoiseFamily::Gaussian { sigma2 } => sigma2.sqrt(),
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            NoiseFamily::Laplace { b } => b,
            NoiseFamily::Gaussian { sigma2 } => sigma2,
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match *self {
            NoiseFamily::Laplace { b } => rng.laplace(b),
            NoiseFamily::Gaussian { sigma2 } => sigma2.sqrt() * rng.normal(),
        }
    }
}

/// Projection `A ∈ R^{d×ℓ}` applied as `Aᵀ f(X)` before adding noise.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    /// Columns `φ_1..φ_ℓ`, stored row-major as `d × ℓ`.
    Matrix {
        d: usize,
        ell: usize,
        entries: Vec<f64>,
    },
    /// Independent `N(0, 1/d)` entries drawn from `seed`.
    Random { seed: u64, ell: usize },
}

impl Projection {
    pub fn ell(&self) -> usize {
        match self {
            Projection::Matrix { ell, .. } | Projection::Random { ell, .. } => *ell,
        }
    }

    /// The `d × ℓ` matrix for a query of output dimension `d`.
    pub fn matrix(&self, d: usize) -> Result<DMatrix<f64>> {
        let ell = self.ell();
        if ell == 0 || ell > d {
            return Err(Error::invalid(format!(
                "projection dimension {ell} must lie in 1..={d}"
            )));
        }
        match self {
            Projection::Matrix { d: pd, entries, .. } => {
                if *pd != d || entries.len() != d * ell {
                    return Err(Error::dim(format!("projection matrix is not {d} x {ell}")));
                }
                Ok(DMatrix::from_row_slice(d, ell, entries))
            }
            Projection::Random { seed, .. } => {
                let mut rng = Stream::substream(*seed, &[d as u64, ell as u64]);
                let sd = (1.0 / d as f64).sqrt();
                Ok(DMatrix::from_fn(d, ell, |_, _| sd * rng.normal()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    /// Dimension of the noise vector (`ℓ` when projected).
    pub dim: usize,
    pub projection: Option<Projection>,
}

impl NoiseSpec {
    pub fn laplace(b: f64, dim: usize) -> Self {
        NoiseSpec {
            family: NoiseFamily::Laplace { b },
            dim,
            projection: None,
        }
    }

    pub fn gaussian(sigma2: f64, dim: usize) -> Self {
        NoiseSpec {
            family: NoiseFamily::Gaussian { sigma2 },
            dim,
            projection: None,
        }
    }

    pub fn with_projection(mut self, p: Projection) -> Self {
        self.dim = p.ell();
        self.projection = Some(p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.family.parameter();
        if !p.is_finite() || p < 0.0 {
            return Err(Error::invalid(format!(
                "noise parameter must be finite and non-negative, got {p}"
            )));
        }
        Ok(())
    }

    /// Apply the projection, if any, to a query value.
    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.projection {
            None => Ok(v.to_vec()),
            Some(p) => {
                let a = p.matrix(v.len())?;
                Ok((a.transpose() * nalgebra::DVector::from_column_slice(v))
                    .as_slice()
                    .to_vec())
            }
        }
    }

    /// `Aᵀ F` for a linear query matrix `F`.
    pub fn transform_matrix(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.projection {
            None => Ok(f.clone()),
            Some(p) => Ok(p.matrix(f.nrows())?.transpose() * f),
        }
    }
}

/// Where the supremum behind a calibration was attained.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationWitness {
    pub member: String,
    pub private: Option<usize>,
    pub public: Option<usize>,
}

impl std::fmt::Display for CalibrationWitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.member)?;
        if let Some(g) = self.private {
            write!(f, ", private {g}")?;
        }
        match self.public {
            Some(w) => write!(f, ", public {w}"),
            None => write!(f, ", public constant"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub ell: usize,
    pub sigma2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub method: String,
    /// Family label of the framework, or "sensitivity" for worst-case forms.
    pub family: String,
    /// Calibrated noise, using the inflated bound.
    pub noise: NoiseSpec,
    pub bound_raw: f64,
    pub bound_inflated: f64,
    pub stderr: f64,
    pub witness: Option<CalibrationWitness>,
    pub free_regime: bool,
    pub assumptions: Vec<String>,
    pub sweep: Vec<SweepPoint>,
}

impl CalibrationReport {
    pub fn b_or_sigma2(&self) -> f64 {
        self.noise.family.parameter()
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::range(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Raw-input formulas
// ---------------------------------------------------------------------------

/// `b = Σ_j E[√Var(f_j|w)] / (d (e^{ε/d} − 1))`.
pub fn laplace_scale(e_sd: &[f64], eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let d = e_sd.len() as f64;
    if e_sd.is_empty() {
        return Ok(0.0);
    }
    Ok(e_sd.iter().sum::<f64>() / (d * (eps / d).exp_m1()))
}

/// `σ² = Σ_j E[Var(f_j|w)] / (d (e^{2ε/d} − 1))`.
pub fn gaussian_variance(e_var: &[f64], eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let d = e_var.len() as f64;
    if e_var.is_empty() {
        return Ok(0.0);
    }
    Ok(e_var.iter().sum::<f64>() / (d * (2.0 * eps / d).exp_m1()))
}

/// Deterministic projection: `E‖Σ_{f|w}‖_op · max_j ‖φ_j‖² / (e^{2ε/ℓ} − 1)`.
pub fn projection_variance_deterministic(
    op_norm: f64,
    max_col_sq: f64,
    ell: usize,
    eps: f64,
) -> Result<f64> {
    check_eps(eps)?;
    if ell == 0 {
        return Err(Error::invalid("projection dimension must be positive"));
    }
    Ok(op_norm * max_col_sq / (2.0 * eps / ell as f64).exp_m1())
}

/// Random projection: `(E‖Σ_{f|w}‖_op + E‖μ_{f|w}‖²) / (e^{2ε/ℓ} − 1)`.
pub fn projection_variance_random(op_norm: f64, mean_sq: f64, ell: usize, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if ell == 0 {
        return Err(Error::invalid("projection dimension must be positive"));
    }
    Ok((op_norm + mean_sq) / (2.0 * eps / ell as f64).exp_m1())
}

/// `(A − d e^{2ε/d} B) / (d (e^{2ε/d} − 1)) ∨ 0` with
/// `B = exp((2/d) h − 1) / (2π)` and `h` a lower bound on `h(f|g,w)`.
pub fn entropy_law_variance(a: f64, cond_entropy_lb: f64, d: usize, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if cond_entropy_lb.is_nan() || cond_entropy_lb == f64::NEG_INFINITY {
        return Err(Error::invalid(
            "conditional entropy lower bound must be finite",
        ));
    }
    if d == 0 {
        return Ok(0.0);
    }
    let df = d as f64;
    let b = ((2.0 / df) * cond_entropy_lb - 1.0).exp() / (2.0 * std::f64::consts::PI);
    let g = 2.0 * eps / df;
    Ok(((a - df * g.exp() * b) / (df * g.exp_m1())).max(0.0))
}

/// `(Var f − e^{2ε} Var(f|g)) / (e^{2ε} − 1) ∨ 0`.
pub fn ap_gaussian_variance(var_f: f64, var_f_given_g: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(((var_f - (2.0 * eps).exp() * var_f_given_g) / (2.0 * eps).exp_m1()).max(0.0))
}

fn sensitivity_report(
    method: &str,
    noise: NoiseSpec,
    bound: f64,
    assumptions: Vec<String>,
) -> CalibrationReport {
    CalibrationReport {
        method: method.into(),
        family: "sensitivity".into(),
        noise,
        bound_raw: bound,
        bound_inflated: bound,
        stderr: 0.0,
        witness: None,
        free_regime: bound == 0.0,
        assumptions,
        sweep: Vec::new(),
    }
}

/// `b = Δ₁ / (√2 d (e^{ε/d} − 1))`.
pub fn calibrate_laplace_sensitivity(delta1: f64, d: usize, eps: f64) -> Result<CalibrationReport> {
    check_eps(eps)?;
    if !delta1.is_finite() || delta1 < 0.0 || d == 0 {
        return Err(Error::invalid("need finite delta1 >= 0 and d >= 1"));
    }
    let df = d as f64;
    let b = delta1 / (std::f64::consts::SQRT_2 * df * (eps / df).exp_m1());
    Ok(sensitivity_report(
        "laplace-sensitivity",
        NoiseSpec::laplace(b, d),
        b,
        vec![],
    ))
}

/// `σ² = Δ₂² / (2d (e^{2ε/d} − 1))`, or `Δ₂² / (4 (e^{2ε} − 1))` for scalar
/// queries on a compact domain.
pub fn calibrate_gaussian_sensitivity(
    delta2: f64,
    d: usize,
    eps: f64,
    compact_scalar: bool,
) -> Result<CalibrationReport> {
    check_eps(eps)?;
    if !delta2.is_finite() || delta2 < 0.0 || d == 0 {
        return Err(Error::invalid("need finite delta2 >= 0 and d >= 1"));
    }
    if compact_scalar && d != 1 {
        return Err(Error::invalid(
            "the compact-domain bound only applies to scalar queries",
        ));
    }
    let df = d as f64;
    let (s2, assumptions) = if compact_scalar {
        (
            delta2 * delta2 / (4.0 * (2.0 * eps).exp_m1()),
            vec!["scalar query on a compact domain".to_string()],
        )
    } else {
        (
            delta2 * delta2 / (2.0 * df * (2.0 * eps / df).exp_m1()),
            vec![],
        )
    };
    Ok(sensitivity_report(
        "gaussian-sensitivity",
        NoiseSpec::gaussian(s2, d),
        s2,
        assumptions,
    ))
}

// ---------------------------------------------------------------------------
// Framework calibrators
// ---------------------------------------------------------------------------

/// One candidate value in a supremum.
struct Candidate {
    raw: f64,
    se: f64,
    witness: CalibrationWitness,
}

struct Sup {
    raw: f64,
    inflated: f64,
    se: f64,
    witness: Option<CalibrationWitness>,
}

fn supremum(cands: Vec<Candidate>) -> Sup {
    let raw = cands.iter().map(|c| c.raw).fold(0.0, f64::max);
    let best = cands
        .into_iter()
        .max_by(|a, b| (a.raw + 2.0 * a.se).total_cmp(&(b.raw + 2.0 * b.se)));
    match best {
        Some(c) => Sup {
            raw,
            inflated: (c.raw + 2.0 * c.se).max(raw),
            se: c.se,
            witness: Some(c.witness),
        },
        None => Sup {
            raw: 0.0,
            inflated: 0.0,
            se: 0.0,
            witness: None,
        },
    }
}

fn moments_per_public(
    fw: &PPFramework,
    f: &DataFunction,
    mc: &McConfig,
) -> Result<Vec<(CalibrationWitness, ConditionalMoments)>> {
    f.validate(fw.n, fw.k)?;
    let mut out = Vec::new();
    for member in fw.members() {
        for w in fw.graph.active_publics() {
            let m = conditional_moments(&member, f, fw.graph.public_fn(w), mc)?;
            out.push((
                CalibrationWitness {
                    member: member.label(),
                    private: None,
                    public: w,
                },
                m,
            ));
        }
    }
    Ok(out)
}

fn rss(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn framework_report(
    fw: &PPFramework,
    method: &str,
    sup: Sup,
    noise: impl Fn(f64) -> NoiseSpec,
    assumptions: Vec<String>,
) -> CalibrationReport {
    CalibrationReport {
        method: method.into(),
        family: fw.theta.label().into(),
        noise: noise(sup.inflated),
        bound_raw: sup.raw,
        bound_inflated: sup.inflated,
        stderr: sup.se,
        witness: sup.witness,
        free_regime: sup.raw == 0.0,
        assumptions,
        sweep: Vec::new(),
    }
}

/// Laplace scale from the conditional standard deviations, maximised over
/// family members and public functions with an edge.
pub fn calibrate_laplace(
    fw: &PPFramework,
    f: &DataFunction,
    eps: f64,
    mc: &McConfig,
) -> Result<CalibrationReport> {
    check_eps(eps)?;
    let d = f.output_dim(fw.n, fw.k);
    let cands = moments_per_public(fw, f, mc)?
        .into_iter()
        .map(|(witness, m)| -> Result<Candidate> {
            let raw = laplace_scale(&m.e_sd, eps)?;
            let se = if d == 0 {
                0.0
            } else {
                rss(&m.e_sd_se) / (d as f64 * (eps / d as f64).exp_m1())
            };
            Ok(Candidate { raw, se, witness })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(framework_report(
        fw,
        "laplace",
        supremum(cands),
        |b| NoiseSpec::laplace(b, d),
        vec![],
    ))
}

/// Gaussian variance from the conditional variances.
pub fn calibrate_gaussian(
    fw: &PPFramework,
    f: &DataFunction,
    eps: f64,
    mc: &McConfig,
) -> Result<CalibrationReport> {
    check_eps(eps)?;
    let d = f.output_dim(fw.n, fw.k);
    let cands = moments_per_public(fw, f, mc)?
        .into_iter()
        .map(|(witness, m)| -> Result<Candidate> {
            let raw = gaussian_variance(&m.e_var, eps)?;
            let se = if d == 0 {
                0.0
            } else {
                rss(&m.e_var_se) / (d as f64 * (2.0 * eps / d as f64).exp_m1())
            };
            Ok(Candidate { raw, se, witness })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(framework_report(
        fw,
        "gaussian",
        supremum(cands),
        |s| NoiseSpec::gaussian(s, d),
        vec![],
    ))
}

/// Worst-case `‖F μ‖²` over the product-Gaussian mean box, or zero otherwise.
fn mean_box_term(fw: &PPFramework, f: &DataFunction) -> Result<f64> {
    match fw.theta {
        DistributionFamily::ProductGaussian { mean_bound, .. } => {
            let fm = f.as_matrix(fw.n, fw.k).ok_or_else(|| {
                Error::capability("product-Gaussian mean term needs a linear query")
            })?;
            Ok(fm
                .row_iter()
                .map(|r| (mean_bound * r.iter().map(|v| v.abs()).sum::<f64>()).powi(2))
                .sum())
        }
        _ => Ok(0.0),
    }
}

/// Gaussian variance for the projected mechanism `Aᵀ f(X) + Z`.
///
/// `sweep_ells` requests the bound for other projection dimensions as well;
/// only the random-projection branch supports it, since its bound does not
/// depend on the particular matrix.
pub fn calibrate_gaussian_projection(
    fw: &PPFramework,
    f: &DataFunction,
    eps: f64,
    proj: &Projection,
    mc: &McConfig,
    sweep_ells: &[usize],
) -> Result<CalibrationReport> {
    check_eps(eps)?;
    let d = f.output_dim(fw.n, fw.k);
    let ell = proj.ell();
    if ell == 0 || ell > d {
        return Err(Error::invalid(format!(
            "projection dimension {ell} must lie in 1..={d}"
        )));
    }
    let moments = moments_per_public(fw, f, mc)?;
    let mean_box = if matches!(proj, Projection::Random { .. }) {
        mean_box_term(fw, f)?
    } else {
        0.0
    };
    let bound_for = |ell: usize, m: &ConditionalMoments| -> Result<(f64, f64)> {
        let denom = (2.0 * eps / ell as f64).exp_m1();
        match proj {
            Projection::Matrix { .. } => {
                let a = proj.matrix(d)?;
                let max_col = a
                    .column_iter()
                    .map(|c| c.norm_squared())
                    .fold(0.0, f64::max);
                Ok((
                    projection_variance_deterministic(m.e_op_norm, max_col, ell, eps)?,
                    m.e_op_norm_se * max_col / denom,
                ))
            }
            Projection::Random { .. } => Ok((
                projection_variance_random(m.e_op_norm, m.e_mean_sq + mean_box, ell, eps)?,
                rss(&[m.e_op_norm_se, m.e_mean_sq_se]) / denom,
            )),
        }
    };
    let cands = moments
        .iter()
        .map(|(w, m)| {
            bound_for(ell, m).map(|(raw, se)| Candidate {
                raw,
                se,
                witness: w.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let method = match proj {
        Projection::Matrix { .. } => "gaussian-projection",
        Projection::Random { .. } => "gaussian-random-projection",
    };
    let mut report = framework_report(
        fw,
        method,
        supremum(cands),
        |s| NoiseSpec::gaussian(s, ell).with_projection(proj.clone()),
        vec![],
    );
    if !sweep_ells.is_empty() {
        if !matches!(proj, Projection::Random { .. }) {
            return Err(Error::invalid("sweep mode needs a random projection spec"));
        }
        for &l in sweep_ells {
            if l == 0 || l > d {
                return Err(Error::invalid(format!(
                    "sweep dimension {l} must lie in 1..={d}"
                )));
            }
            let sigma2 = moments
                .iter()
                .map(|(_, m)| bound_for(l, m).map(|(raw, se)| raw + 2.0 * se))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            report.sweep.push(SweepPoint { ell: l, sigma2 });
        }
    }
    Ok(report)
}

/// Source of the conditional entropy term `h(f(X) | g(X), w(X))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EntropyBound {
    /// Caller-supplied lower bound, used for every edge.
    Given(f64),
    /// Exact value for Gaussian members with linear functions.
    GaussianClosedForm,
}

fn gaussian_cond_entropy(
    member: &Member,
    f: &DataFunction,
    g: &DataFunction,
    w: &DataFunction,
) -> Result<f64> {
    let Member::Gaussian { cov, n, k, .. } = member else {
        return Err(Error::capability(
            "closed-form entropy needs a Gaussian family",
        ));
    };
    let lin = |h: &DataFunction| {
        h.as_matrix(*n, *k)
            .ok_or_else(|| Error::capability("closed-form entropy needs linear functions"))
    };
    let (fm, gm, wm) = (lin(f)?, lin(g)?, lin(w)?);
    let l = DMatrix::from_fn(gm.nrows() + wm.nrows(), n * k, |r, c| {
        if r < gm.nrows() {
            gm[(r, c)]
        } else {
            wm[(r - gm.nrows(), c)]
        }
    });
    let s_l = cov * l.transpose();
    let inner = (&l * &s_l)
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let cond = cov - &s_l * inner * s_l.transpose();
    let fc = &fm * cond * fm.transpose();
    let det = fc.determinant();
    if !(det > 1e-300) {
        return Err(Error::invalid(
            "conditional entropy is -infinity (query determined by the secret)",
        ));
    }
    let d = fm.nrows() as f64;
    Ok(0.5 * (d * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + det.ln()))
}

/// Gaussian variance from the entropy-law bound, maximised over members and edges.
pub fn calibrate_gaussian_entropy_law(
    fw: &PPFramework,
    f: &DataFunction,
    eps: f64,
    entropy: EntropyBound,
    mc: &McConfig,
) -> Result<CalibrationReport> {
    check_eps(eps)?;
    f.validate(fw.n, fw.k)?;
    let d = f.output_dim(fw.n, fw.k);
    let mut cands = Vec::new();
    for member in fw.members() {
        for pair in fw.graph.pairs() {
            let w = fw.graph.public_fn(pair.public);
            let m = conditional_moments(&member, f, w, mc)?;
            let a: f64 = m.e_var.iter().sum();
            let h = match entropy {
                EntropyBound::Given(h) => h,
                EntropyBound::GaussianClosedForm => {
                    gaussian_cond_entropy(&member, f, fw.graph.private_fn(pair.private), w)?
                }
            };
            let raw = entropy_law_variance(a, h, d, eps)?;
            let se = if d == 0 {
                0.0
            } else {
                rss(&m.e_var_se) / (d as f64 * (2.0 * eps / d as f64).exp_m1())
            };
            cands.push(Candidate {
                raw,
                se: if raw > 0.0 { se } else { 0.0 },
                witness: CalibrationWitness {
                    member: member.label(),
                    private: Some(pair.private),
                    public: pair.public,
                },
            });
        }
    }
    let assumptions = match entropy {
        EntropyBound::Given(_) => vec!["caller-supplied lower bound on h(f|g,w)".to_string()],
        EntropyBound::GaussianClosedForm => vec![],
    };
    Ok(framework_report(
        fw,
        "gaussian-entropy-law",
        supremum(cands),
        |s| NoiseSpec::gaussian(s, d),
        assumptions,
    ))
}

/// Attribute-privacy Gaussian variance for scalar queries with no public functions.
pub fn calibrate_gaussian_ap(
    fw: &PPFramework,
    f: &DataFunction,
    eps: f64,
    mc: &McConfig,
) -> Result<CalibrationReport> {
    check_eps(eps)?;
    f.validate(fw.n, fw.k)?;
    if !fw.graph.publics().is_empty() {
        return Err(Error::invalid(
            "attribute-privacy calibration needs a framework without public functions",
        ));
    }
    if f.output_dim(fw.n, fw.k) != 1 {
        return Err(Error::invalid(
            "attribute-privacy calibration needs a scalar query",
        ));
    }
    let constant = DataFunction::constant();
    let mut cands = Vec::new();
    for member in fw.members() {
        let total = conditional_moments(&member, f, &constant, mc)?;
        for (gi, g) in fw.graph.privates().iter().enumerate() {
            let given = conditional_moments(&member, f, g, mc)?;
            let raw = ap_gaussian_variance(total.e_var[0], given.e_var[0], eps)?;
            let e2 = (2.0 * eps).exp();
            let se = rss(&[total.e_var_se[0], e2 * given.e_var_se[0]]) / (2.0 * eps).exp_m1();
            cands.push(Candidate {
                raw,
                se: if raw > 0.0 { se } else { 0.0 },
                witness: CalibrationWitness {
                    member: member.label(),
                    private: Some(gi),
                    public: None,
                },
            });
        }
    }
    Ok(framework_report(
        fw,
        "gaussian-ap",
        supremum(cands),
        |s| NoiseSpec::gaussian(s, 1),
        vec!["Var(f|g=a) constant in a".to_string()],
    ))
}

/// Release `Aᵀ f(x) + Z` (or `f(x) + Z` without a projection).
pub fn run_mechanism(
    f: &DataFunction,
    x: &Database,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    noise.validate()?;
    let v = noise.transform(&f.evaluate(x)?)?;
    if v.len() != noise.dim {
        return Err(Error::dim(format!(
            "query gives {} values, noise has dimension {}",
            v.len(),
            noise.dim
        )));
    }
    let mut rng = Stream::new(seed);
    Ok(v.into_iter()
        .map(|y| y + noise.family.sample(&mut rng))
        .collect())
}

/// `f(X) + Z` as a black box drawing from a caller-supplied stream, e.g. for
/// generating audit samples. Zero noise gives a deterministic release.
#[derive(Clone, Debug)]
pub struct AdditiveMechanism {
    pub f: DataFunction,
    pub noise: NoiseSpec,
}

impl AdditiveMechanism {
    pub fn new(f: DataFunction, noise: NoiseSpec) -> Result<Self> {
        noise.validate()?;
        Ok(AdditiveMechanism { f, noise })
    }
}

impl BlackBoxMechanism for AdditiveMechanism {
    fn sample(&self, x: &Database, rng: &mut Stream) -> Vec<f64> {
        let v = self
            .f
            .evaluate(x)
            .and_then(|v| self.noise.transform(&v))
            .expect("mechanism query must match the database shape");
        v.into_iter()
            .map(|y| y + self.noise.family.sample(rng))
            .collect()
    }

    fn output_dim(&self) -> usize {
        self.noise.dim
    }
}
