//! Brute-force evaluation of MI-PP and (ε, δ)-PP on finite families.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::framework::{DataFunction, DiscreteFamily, PPFramework, SecretPair};
use crate::infotheory::kernel::{DiscreteKernel, Discretizer, MechanismKernel};
use crate::infotheory::measures::{conditional_mi_raw, JointPMF};

/// Index-codes the values of `f` over the family grid.
///
/// Returns one label per database and the number of distinct values.
pub fn value_labels(family: &DiscreteFamily, f: &DataFunction) -> Result<(Vec<usize>, usize)> {
    let mut seen: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::with_capacity(family.grid_size());
    for x in family.databases() {
        let v = f.evaluate(&x)?;
        let idx = match seen.iter().position(|s| *s == v) {
            Some(i) => i,
            None => {
                seen.push(v);
                seen.len() - 1
            }
        };
        labels.push(idx);
    }
    Ok((labels, seen.len()))
}

/// Joint law of `(g(X), M(X), w(X))` under one member PMF.
pub fn induced_joint(
    fw: &PPFramework,
    pmf: &[f64],
    pair: SecretPair,
    kernel: &DiscreteKernel,
) -> Result<JointPMF> {
    let family = fw.discrete_family()?;
    let (gl, ng) = value_labels(family, fw.graph.private_fn(pair.private))?;
    let (wl, nw) = value_labels(family, fw.graph.public_fn(pair.public))?;
    Ok(JointPMF::from_parts_unchecked(
        vec![ng, kernel.n_outputs(), nw],
        joint_table(pmf, &gl, ng, &wl, nw, kernel),
    ))
}

fn joint_table(
    pmf: &[f64],
    gl: &[usize],
    _ng: usize,
    wl: &[usize],
    nw: usize,
    kernel: &DiscreteKernel,
) -> Vec<f64> {
    let nm = kernel.n_outputs();
    let mut p = vec![0.0; _ng * nm * nw];
    for (t, &px) in pmf.iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let row = kernel.row(t);
        let base = gl[t] * nm * nw + wl[t];
        for (m, &q) in row.iter().enumerate() {
            if q > 0.0 {
                p[base + m * nw] += px * q;
            }
        }
    }
    p
}

/// Where a supremum over members and secret pairs was attained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub member: usize,
    pub private: usize,
    pub public: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleValue {
    /// `max_{P ∈ Θ, g ∼ w} I(g(X); M(X) | w(X))` in nats.
    pub value: f64,
    pub witness: Witness,
    /// Discretisation tolerance: zero for discrete kernels, otherwise the gap
    /// between the value at the configured and at half the grid resolution,
    /// plus 1e-9.
    pub tolerance: f64,
}

fn oracle_on_table(fw: &PPFramework, kernel: &DiscreteKernel) -> Result<(f64, Witness)> {
    let family = fw.discrete_family()?;
    if kernel.n_inputs() != family.grid_size() {
        return Err(Error::dim("kernel rows do not match the family grid"));
    }
    let pairs = fw.graph.pairs();
    let mut labels = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let g = value_labels(family, fw.graph.private_fn(p.private))?;
        let w = value_labels(family, fw.graph.public_fn(p.public))?;
        labels.push((g, w));
    }
    let mut best = (
        f64::NEG_INFINITY,
        Witness {
            member: 0,
            private: 0,
            public: None,
        },
    );
    for (mi, pmf) in family.members.iter().enumerate() {
        for (p, ((gl, ng), (wl, nw))) in pairs.iter().zip(&labels) {
            let table = joint_table(pmf, gl, *ng, wl, *nw, kernel);
            let v = conditional_mi_raw(&table, *ng, kernel.n_outputs(), *nw);
            if v > best.0 {
                best = (
                    v,
                    Witness {
                        member: mi,
                        private: p.private,
                        public: p.public,
                    },
                );
            }
        }
    }
    Ok(best)
}

/// Ground-truth MI-PP level of a mechanism on a finite family.
pub fn exhaustive_mechanism_mi(fw: &PPFramework, kernel: &MechanismKernel) -> Result<OracleValue> {
    exhaustive_mechanism_mi_with(fw, kernel, &Discretizer::default())
}

pub fn exhaustive_mechanism_mi_with(
    fw: &PPFramework,
    kernel: &MechanismKernel,
    disc: &Discretizer,
) -> Result<OracleValue> {
    let family = fw.discrete_family()?;
    let table = kernel.to_discrete(family, disc)?;
    let (value, witness) = oracle_on_table(fw, &table)?;
    let tolerance = if kernel.is_continuous() {
        let coarse = Discretizer {
            bins: (disc.bins / 2).max(1),
            ..*disc
        };
        let (v2, _) = oracle_on_table(fw, &kernel.to_discrete(family, &coarse)?)?;
        (value - v2).abs() + 1e-9
    } else {
        0.0
    };
    Ok(OracleValue {
        value,
        witness,
        tolerance,
    })
}

/// A violating secret pair `(R, T)` and output event `A`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PPViolation {
    pub member: usize,
    pub private: usize,
    pub public: Option<usize>,
    /// Private value index `a` of the event `R = {g = a, w = c}`.
    pub a: usize,
    /// Private value index `b` of the event `T = {g = b, w = c}`.
    pub b: usize,
    /// Public value index `c`.
    pub c: usize,
    /// Output indices forming the event `A`.
    pub event: Vec<usize>,
    /// `P(A | R) − e^ε P(A | T) − δ`, positive for a violation.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PPCheck {
    pub holds: bool,
    pub violation: Option<PPViolation>,
}

/// Relative slack absorbing round-off when a ratio sits exactly at `e^ε`.
const RATIO_SLACK: f64 = 1e-12;

/// Exact `(ε, δ)`-PP check over all secret pairs with positive probability.
///
/// For `δ = 0` it is enough to compare singleton outputs. For `δ > 0` the
/// worst event is `{y : p(y|R) > e^ε p(y|T)}`, whose excess equals
/// `Σ_y max(0, p(y|R) − e^ε p(y|T))`; this is exact for any output alphabet.
pub fn pp_ratio_check(
    fw: &PPFramework,
    kernel: &MechanismKernel,
    eps: f64,
    delta: f64,
) -> Result<PPCheck> {
    if !(eps >= 0.0) || !(0.0..=1.0).contains(&delta) {
        return Err(Error::range("need eps >= 0 and delta in [0, 1]"));
    }
    let family = fw.discrete_family()?;
    let table = kernel.to_discrete(family, &Discretizer::default())?;
    let e = eps.exp();
    let mut worst: Option<PPViolation> = None;
    for (mi, pmf) in family.members.iter().enumerate() {
        for pair in fw.graph.pairs() {
            let joint = induced_joint(fw, pmf, pair, &table)?;
            let [ng, nm, nw] = [joint.dims()[0], joint.dims()[1], joint.dims()[2]];
            let p = joint.probs();
            for c in 0..nw {
                // conditional output laws given (g = a, w = c)
                let conds: Vec<Option<Vec<f64>>> = (0..ng)
                    .map(|a| {
                        let mass: f64 = (0..nm).map(|m| p[(a * nm + m) * nw + c]).sum();
                        (mass > 0.0)
                            .then(|| (0..nm).map(|m| p[(a * nm + m) * nw + c] / mass).collect())
                    })
                    .collect();
                for a in 0..ng {
                    for b in 0..ng {
                        let (Some(pr), Some(pt)) = (&conds[a], &conds[b]) else {
                            continue;
                        };
                        if a == b {
                            continue;
                        }
                        let found = if delta == 0.0 {
                            (0..nm)
                                .map(|y| (y, pr[y] - e * pt[y] * (1.0 + RATIO_SLACK)))
                                .filter(|&(_, x)| x > 0.0)
                                .max_by(|x, y| x.1.total_cmp(&y.1))
                                .map(|(y, x)| (vec![y], x))
                        } else {
                            let event: Vec<usize> =
                                (0..nm).filter(|&y| pr[y] > e * pt[y]).collect();
                            let mass: f64 = event.iter().map(|&y| pr[y] - e * pt[y]).sum();
                            let excess = mass - delta - RATIO_SLACK * (1.0 + e);
                            (excess > 0.0).then_some((event, excess))
                        };
                        if let Some((event, excess)) = found {
                            if worst.as_ref().is_none_or(|w| excess > w.excess) {
                                worst = Some(PPViolation {
                                    member: mi,
                                    private: pair.private,
                                    public: pair.public,
                                    a,
                                    b,
                                    c,
                                    event,
                                    excess,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(PPCheck {
        holds: worst.is_none(),
        violation: worst,
    })
}

/// Enumerates every output event explicitly; only for small alphabets.
/// Used to cross-check the closed-form characterisation.
pub fn pp_event_enumeration_check(
    fw: &PPFramework,
    kernel: &DiscreteKernel,
    eps: f64,
    delta: f64,
) -> Result<bool> {
    if kernel.n_outputs() > 20 {
        return Err(Error::capability("event enumeration limited to 20 outputs"));
    }
    let family = fw.discrete_family()?;
    let e = eps.exp();
    for pmf in &family.members {
        for pair in fw.graph.pairs() {
            let joint = induced_joint(fw, pmf, pair, kernel)?;
            let [ng, nm, nw] = [joint.dims()[0], joint.dims()[1], joint.dims()[2]];
            let p = joint.probs();
            for c in 0..nw {
                for a in 0..ng {
                    for b in (0..ng).filter(|&b| b != a) {
                        let ma: f64 = (0..nm).map(|m| p[(a * nm + m) * nw + c]).sum();
                        let mb: f64 = (0..nm).map(|m| p[(b * nm + m) * nw + c]).sum();
                        if ma == 0.0 || mb == 0.0 {
                            continue;
                        }
                        for mask in 0u32..(1 << nm) {
                            let (mut pr, mut pt) = (0.0, 0.0);
                            for y in (0..nm).filter(|y| mask >> y & 1 == 1) {
                                pr += p[(a * nm + y) * nw + c] / ma;
                                pt += p[(b * nm + y) * nw + c] / mb;
                            }
                            if pr > e * pt + delta + RATIO_SLACK * (1.0 + e) {
                                return Ok(false);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::{DistributionFamily, SecretGraph};
    use crate::rng::Stream;
    use approx::assert_abs_diff_eq;

    fn binary_dp(n: usize, members: Vec<Vec<f64>>) -> PPFramework {
        let fam = DiscreteFamily::new(vec![0.0, 1.0], n, 1, members).unwrap();
        PPFramework::new(
            SecretGraph::dp(n),
            DistributionFamily::DiscreteFinite(fam),
            n,
            1,
        )
        .unwrap()
    }

    /// Randomized response on each row independently.
    pub(crate) fn rr_kernel(n: usize, flip: f64) -> DiscreteKernel {
        let size: usize = 1 << n;
        let rows = (0..size)
            .map(|x| {
                (0..size)
                    .map(|y| {
                        let diff = (x ^ y).count_ones() as i32;
                        flip.powi(diff) * (1.0 - flip).powi(n as i32 - diff)
                    })
                    .collect()
            })
            .collect();
        DiscreteKernel::new(rows).unwrap()
    }

    #[test]
    fn independent_kernel_leaks_nothing() {
        let fw = binary_dp(2, vec![vec![0.25; 4]]);
        let k = DiscreteKernel::constant(4, &[0.3, 0.7]).unwrap();
        let v = exhaustive_mechanism_mi(&fw, &k.clone().into()).unwrap();
        assert_abs_diff_eq!(v.value, 0.0, epsilon = 1e-15);
        assert!(pp_ratio_check(&fw, &k.into(), 0.0, 0.0).unwrap().holds);
    }

    #[test]
    fn identity_kernel_reveals_each_row() {
        let fw = binary_dp(2, vec![vec![0.25; 4]]);
        let k: MechanismKernel = DiscreteKernel::identity(4).into();
        let v = exhaustive_mechanism_mi(&fw, &k).unwrap();
        assert_abs_diff_eq!(v.value, std::f64::consts::LN_2, epsilon = 1e-12);
        let chk = pp_ratio_check(&fw, &k, 1.0, 0.0).unwrap();
        assert!(!chk.holds);
        let w = chk.violation.unwrap();
        assert_ne!(w.a, w.b);
        assert_eq!(w.event.len(), 1);
    }

    #[test]
    fn randomized_response_is_exactly_eps_pp() {
        for eps in [0.1, 0.5, 1.0, 2.0] {
            let fw = binary_dp(2, vec![vec![0.25; 4], vec![0.1, 0.2, 0.3, 0.4]]);
            let k: MechanismKernel = rr_kernel(2, 1.0 / (1.0 + f64::exp(eps))).into();
            assert!(pp_ratio_check(&fw, &k, eps, 0.0).unwrap().holds);
            assert!(!pp_ratio_check(&fw, &k, eps * 0.99, 0.0).unwrap().holds);
        }
    }

    #[test]
    fn tight_delta_matches_event_enumeration() {
        let mut rng = Stream::new(5);
        for _ in 0..40 {
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    let w: Vec<f64> = (0..3).map(|_| rng.uniform() + 0.01).collect();
                    let s: f64 = w.iter().sum();
                    w.iter().map(|v| v / s).collect()
                })
                .collect();
            let k = DiscreteKernel::new(rows).unwrap();
            let fw = binary_dp(2, vec![vec![0.25; 4]]);
            let eps = rng.uniform();
            let delta = 0.3 * rng.uniform();
            let fast = pp_ratio_check(&fw, &k.clone().into(), eps, delta)
                .unwrap()
                .holds;
            let slow = pp_event_enumeration_check(&fw, &k, eps, delta).unwrap();
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn post_processing_never_increases_oracle_value() {
        let mut rng = Stream::new(9);
        for _ in 0..10 {
            let fw = binary_dp(2, vec![vec![0.25; 4], vec![0.4, 0.1, 0.1, 0.4]]);
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    let w: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
                    let s: f64 = w.iter().sum();
                    w.iter().map(|v| v / s).collect()
                })
                .collect();
            let k = DiscreteKernel::new(rows).unwrap();
            let a_rows: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    let w: Vec<f64> = (0..2).map(|_| rng.uniform()).collect();
                    let s: f64 = w.iter().sum();
                    w.iter().map(|v| v / s).collect()
                })
                .collect();
            let a = DiscreteKernel::new(a_rows).unwrap();
            let processed = crate::composition::post_process(&k, &a).unwrap();
            let v = exhaustive_mechanism_mi(&fw, &k.into()).unwrap().value;
            let vp = exhaustive_mechanism_mi(&fw, &processed.into())
                .unwrap()
                .value;
            assert!(vp <= v + 1e-12);
        }
    }

    #[test]
    fn non_discrete_family_is_a_capability_error() {
        let fw = PPFramework::dp(
            DistributionFamily::ProductGaussian {
                mean_bound: 0.0,
                var_bound: 1.0,
            },
            2,
            1,
        )
        .unwrap();
        let k: MechanismKernel = DiscreteKernel::identity(4).into();
        assert!(exhaustive_mechanism_mi(&fw, &k)
            .unwrap_err()
            .is_capability());
    }
}
