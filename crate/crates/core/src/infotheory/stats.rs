//! Conditional moments of a query given a public function, per family member.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::framework::{DataFunction, Database, FunctionKind, Member};
use crate::infotheory::oracle::value_labels;
use crate::rng::Stream;

/// Nested Monte Carlo settings for sample-only families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McConfig {
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_outer: 2000,
            n_inner: 200,
            seed: 0,
        }
    }
}

/// Expectations over `w(X)` of conditional moments of `f(X)` given `w(X)`.
///
/// `*_se` fields are Monte Carlo standard errors (zero for exact results).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalMoments {
    /// `E[Var(f_j | w)]` per coordinate.
    pub e_var: Vec<f64>,
    pub e_var_se: Vec<f64>,
    /// `E[√Var(f_j | w)]` per coordinate.
    pub e_sd: Vec<f64>,
    pub e_sd_se: Vec<f64>,
    /// `E[‖Σ_{f|w}‖_op]`.
    pub e_op_norm: f64,
    pub e_op_norm_se: f64,
    /// `E[‖μ_{f|w}‖²]`.
    pub e_mean_sq: f64,
    pub e_mean_sq_se: f64,
    pub exact: bool,
}

impl ConditionalMoments {
    fn exact(e_var: Vec<f64>, e_sd: Vec<f64>, e_op_norm: f64, e_mean_sq: f64) -> Self {
        let d = e_var.len();
        ConditionalMoments {
            e_var,
            e_var_se: vec![0.0; d],
            e_sd,
            e_sd_se: vec![0.0; d],
            e_op_norm,
            e_op_norm_se: 0.0,
            e_mean_sq,
            e_mean_sq_se: 0.0,
            exact: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.e_var.len()
    }
}

fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Conditional moments of `f` given `w` under one family member.
///
/// Discrete members are handled exactly; Gaussian members in closed form when
/// both functions are linear; sampled members by nested Monte Carlo when `w`
/// fixes whole rows (row selectors, row complements or the constant).
pub fn conditional_moments(
    member: &Member,
    f: &DataFunction,
    w: &DataFunction,
    mc: &McConfig,
) -> Result<ConditionalMoments> {
    match member {
        Member::Discrete { family, pmf, .. } => discrete_moments(family, pmf, f, w),
        Member::Gaussian {
            mean, cov, n, k, ..
        } => gaussian_moments(mean, cov, *n, *k, f, w),
        Member::Sampled { sampler, n, k } => {
            let free = free_rows(w, *n).ok_or_else(|| {
                Error::capability(format!(
                    "sample-only families can only condition on row-fixing public functions, got {}",
                    w.label()
                ))
            })?;
            f.validate(*n, *k)?;
            sampled_moments(sampler.as_ref(), *n, *k, f, &free, mc)
        }
    }
}

/// Alias matching the estimator name used across the crate's reports.
pub fn mc_conditional_variance(
    member: &Member,
    f: &DataFunction,
    w: &DataFunction,
    mc: &McConfig,
) -> Result<ConditionalMoments> {
    conditional_moments(member, f, w, mc)
}

fn discrete_moments(
    family: &crate::framework::DiscreteFamily,
    pmf: &[f64],
    f: &DataFunction,
    w: &DataFunction,
) -> Result<ConditionalMoments> {
    let (labels, nw) = value_labels(family, w)?;
    let values = family
        .databases()
        .iter()
        .map(|x| f.evaluate(x))
        .collect::<Result<Vec<_>>>()?;
    let d = values.first().map_or(0, Vec::len);
    let mut mass = vec![0.0; nw];
    let mut sum = vec![DVector::<f64>::zeros(d); nw];
    let mut sum_sq = vec![DMatrix::<f64>::zeros(d, d); nw];
    for (t, &p) in pmf.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let v = DVector::from_column_slice(&values[t]);
        let c = labels[t];
        mass[c] += p;
        sum[c] += &v * p;
        sum_sq[c] += &v * v.transpose() * p;
    }
    let (mut e_var, mut e_sd) = (vec![0.0; d], vec![0.0; d]);
    let (mut op, mut msq) = (0.0, 0.0);
    for c in 0..nw {
        if mass[c] == 0.0 {
            continue;
        }
        let mu = &sum[c] / mass[c];
        let mut cov = &sum_sq[c] / mass[c] - &mu * mu.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        for j in 0..d {
            let v = cov[(j, j)].max(0.0);
            e_var[j] += mass[c] * v;
            e_sd[j] += mass[c] * v.sqrt();
        }
        op += mass[c] * max_eigenvalue(&cov);
        msq += mass[c] * mu.norm_squared();
    }
    Ok(ConditionalMoments::exact(e_var, e_sd, op, msq))
}

fn gaussian_moments(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    n: usize,
    k: usize,
    f: &DataFunction,
    w: &DataFunction,
) -> Result<ConditionalMoments> {
    let fm = f
        .as_matrix(n, k)
        .ok_or_else(|| Error::capability("closed-form Gaussian moments need a linear query"))?;
    let lm = w.as_matrix(n, k).ok_or_else(|| {
        Error::capability("closed-form Gaussian moments need a linear public function")
    })?;
    // Cov(x | Lx) = Σ − Σ Lᵀ (L Σ Lᵀ)⁺ L Σ, constant in the conditioning value.
    let explained = if lm.nrows() == 0 {
        DMatrix::zeros(cov.nrows(), cov.ncols())
    } else {
        let s_l = cov * lm.transpose();
        let inner = (&lm * &s_l)
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::invalid(format!("pseudo-inverse failed: {e}")))?;
        &s_l * inner * s_l.transpose()
    };
    let cond = cov - &explained;
    let f_cond = &fm * cond * fm.transpose();
    let f_cond = (&f_cond + f_cond.transpose()) * 0.5;
    let d = fm.nrows();
    let e_var: Vec<f64> = (0..d).map(|j| f_cond[(j, j)].max(0.0)).collect();
    let e_sd = e_var.iter().map(|v| v.sqrt()).collect();
    // μ_{f|w} = F(μ + K(Lx − Lμ)), so E‖μ_{f|w}‖² = ‖Fμ‖² + tr(F Σ Lᵀ(LΣLᵀ)⁺LΣ Fᵀ).
    let fmu = &fm * mean;
    let e_mean_sq = fmu.norm_squared() + (&fm * explained * fm.transpose()).trace().max(0.0);
    Ok(ConditionalMoments::exact(
        e_var,
        e_sd,
        max_eigenvalue(&f_cond),
        e_mean_sq,
    ))
}

/// Rows left random after fixing `w(X)`, if `w` fixes whole rows.
fn free_rows(w: &DataFunction, n: usize) -> Option<Vec<usize>> {
    match w.kind {
        FunctionKind::Constant => Some((0..n).collect()),
        FunctionKind::ComplementRows(i) => Some(vec![i]),
        FunctionKind::RowSelector(i) => Some((0..n).filter(|&r| r != i).collect()),
        _ => None,
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

struct OuterStats {
    var: Vec<f64>,
    sd: Vec<f64>,
    op: f64,
    mean_sq: f64,
}

fn sampled_moments(
    sampler: &dyn crate::framework::RowSampler,
    n: usize,
    k: usize,
    f: &DataFunction,
    free: &[usize],
    mc: &McConfig,
) -> Result<ConditionalMoments> {
    if mc.n_outer == 0 || mc.n_inner < 2 {
        return Err(Error::invalid("need n_outer >= 1 and n_inner >= 2"));
    }
    let d = f.output_dim(n, k);
    let outer: Vec<OuterStats> = (0..mc.n_outer)
        .into_par_iter()
        .map(|o| {
            let mut rng = Stream::substream(mc.seed, &[o as u64]);
            let mut x: Vec<f64> = (0..n).flat_map(|_| sampler.sample_row(&mut rng)).collect();
            let mut ys = DMatrix::<f64>::zeros(d, mc.n_inner);
            for t in 0..mc.n_inner {
                for &r in free {
                    let row = sampler.sample_row(&mut rng);
                    x[r * k..(r + 1) * k].copy_from_slice(&row);
                }
                let db = Database::new(n, k, x.clone()).expect("sampler rows have k entries");
                let v = f.evaluate(&db).expect("query validated above");
                ys.set_column(t, &DVector::from_vec(v));
            }
            let mu = ys.column_mean();
            let centered = DMatrix::from_fn(d, mc.n_inner, |j, t| ys[(j, t)] - mu[j]);
            let cov = &centered * centered.transpose() / (mc.n_inner as f64 - 1.0);
            let var: Vec<f64> = (0..d).map(|j| cov[(j, j)]).collect();
            OuterStats {
                sd: var.iter().map(|v| v.sqrt()).collect(),
                op: max_eigenvalue(&cov),
                // unbiased for ‖μ‖²: subtract tr(Σ)/n_inner
                mean_sq: mu.norm_squared() - cov.trace() / mc.n_inner as f64,
                var,
            }
        })
        .collect();
    let col =
        |get: &dyn Fn(&OuterStats) -> f64| mean_and_se(&outer.iter().map(get).collect::<Vec<_>>());
    let (mut e_var, mut e_var_se, mut e_sd, mut e_sd_se) = (vec![], vec![], vec![], vec![]);
    for j in 0..d {
        let (m, s) = col(&|o| o.var[j]);
        e_var.push(m);
        e_var_se.push(s);
        let (m, s) = col(&|o| o.sd[j]);
        e_sd.push(m);
        e_sd_se.push(s);
    }
    let (e_op_norm, e_op_norm_se) = col(&|o| o.op);
    let (e_mean_sq, e_mean_sq_se) = col(&|o| o.mean_sq);
    Ok(ConditionalMoments {
        e_var,
        e_var_se,
        e_sd,
        e_sd_se,
        e_op_norm,
        e_op_norm_se,
        e_mean_sq: e_mean_sq.max(0.0),
        e_mean_sq_se,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::{
        DiscreteFamily, DistributionFamily, GaussianRows, PPFramework, SecretGraph,
    };
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    #[test]
    fn constant_query_has_zero_variance() {
        let fw = PPFramework::dp(
            DistributionFamily::ProductGaussian {
                mean_bound: 1.0,
                var_bound: 1.0,
            },
            3,
            1,
        )
        .unwrap();
        let m = &fw.members()[0];
        let r = conditional_moments(
            m,
            &DataFunction::constant(),
            &DataFunction::complement_rows(0),
            &McConfig::default(),
        )
        .unwrap();
        assert_eq!(r.dim(), 0);
        let sampled = DistributionFamily::SampleAccess {
            sampler: Arc::new(GaussianRows {
                mean: vec![0.0],
                sd: vec![1.0],
            }),
            second_moment_bound: None,
        };
        let fw = PPFramework::dp(sampled, 3, 1).unwrap();
        let zero = DataFunction::linear(1, vec![0.0; 3]).unwrap();
        let mc = McConfig {
            n_outer: 20,
            n_inner: 10,
            seed: 1,
        };
        let r = conditional_moments(
            &fw.members()[0],
            &zero,
            &DataFunction::complement_rows(0),
            &mc,
        )
        .unwrap();
        assert_eq!(r.e_var, vec![0.0]);
        assert_eq!(r.e_var_se, vec![0.0]);
    }

    #[test]
    fn gaussian_average_given_other_rows() {
        let n = 100;
        let fw = PPFramework::dp(
            DistributionFamily::ProductGaussian {
                mean_bound: 1.0,
                var_bound: 1.0,
            },
            n,
            1,
        )
        .unwrap();
        let r = conditional_moments(
            &fw.members()[0],
            &DataFunction::average(n, 1),
            &DataFunction::complement_rows(7),
            &McConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(r.e_var[0], 1e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(r.e_sd[0], 1e-2, epsilon = 1e-15);
        assert!(r.exact);
    }

    #[test]
    fn sampled_average_given_other_rows_within_three_se() {
        let n = 100;
        let fam = DistributionFamily::SampleAccess {
            sampler: Arc::new(GaussianRows {
                mean: vec![0.5],
                sd: vec![1.0],
            }),
            second_moment_bound: Some(1.0),
        };
        let fw = PPFramework::dp(fam, n, 1).unwrap();
        let mc = McConfig {
            n_outer: 200,
            n_inner: 50,
            seed: 3,
        };
        let r = conditional_moments(
            &fw.members()[0],
            &DataFunction::average(n, 1),
            &DataFunction::complement_rows(0),
            &mc,
        )
        .unwrap();
        assert!((r.e_var[0] - 1e-4).abs() <= 3.0 * r.e_var_se[0], "{:?}", r);
    }

    #[test]
    fn discrete_sum_given_constant_is_bernoulli_variance() {
        let n = 3;
        let fam = DiscreteFamily::new(vec![0.0, 1.0], n, 1, vec![vec![0.125; 8]]).unwrap();
        let fw = PPFramework::new(
            SecretGraph::ap(1),
            DistributionFamily::DiscreteFinite(fam),
            n,
            1,
        )
        .unwrap();
        let r = conditional_moments(
            &fw.members()[0],
            &DataFunction::sum(n, 1),
            &DataFunction::constant(),
            &McConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(r.e_var[0], n as f64 / 4.0, epsilon = 1e-12);

        let sampled = DistributionFamily::SampleAccess {
            sampler: Arc::new(crate::framework::UniformRows {
                lo: 0.0,
                hi: 1.0,
                k: 1,
            }),
            second_moment_bound: None,
        };
        let fw = PPFramework::new(SecretGraph::ap(1), sampled, n, 1).unwrap();
        let mc = McConfig {
            n_outer: 100,
            n_inner: 100,
            seed: 8,
        };
        let r = conditional_moments(
            &fw.members()[0],
            &DataFunction::sum(n, 1),
            &DataFunction::constant(),
            &mc,
        )
        .unwrap();
        assert!((r.e_var[0] - n as f64 / 12.0).abs() <= 3.0 * r.e_var_se[0]);
    }

    #[test]
    fn unsupported_conditioning_is_a_capability_error() {
        let fam = DistributionFamily::SampleAccess {
            sampler: Arc::new(GaussianRows {
                mean: vec![0.0, 0.0],
                sd: vec![1.0, 1.0],
            }),
            second_moment_bound: None,
        };
        let fw = PPFramework::dp(fam, 2, 2).unwrap();
        let err = conditional_moments(
            &fw.members()[0],
            &DataFunction::sum(2, 2),
            &DataFunction::column(0),
            &McConfig::default(),
        )
        .unwrap_err();
        assert!(err.is_capability());
    }

    #[test]
    fn gaussian_conditioning_on_correlated_column() {
        // rows (a, b) with corr 0.6; Var(b | a) = 1 − 0.36
        let fam = DistributionFamily::MultivariateGaussian {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 0.6], vec![0.6, 1.0]],
        };
        let fw = PPFramework::new(SecretGraph::ap(2), fam, 1, 2).unwrap();
        let r = conditional_moments(
            &fw.members()[0],
            &DataFunction::column(1),
            &DataFunction::column(0),
            &McConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(r.e_var[0], 0.64, epsilon = 1e-12);
        assert_abs_diff_eq!(r.e_mean_sq, 0.36, epsilon = 1e-12);
    }
}
