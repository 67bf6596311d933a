//! Privacy-budget accounting and kernel combinators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framework::{DistributionFamily, PPFramework, SecretGraph};
use crate::infotheory::{conditional_mi_raw, value_labels, DiscreteKernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    Adaptive,
    Nonadaptive,
}

/// Where an `η` value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaProvenance {
    ExactZeroUc,
    Enumerated,
    CardinalityBound,
    LogconcaveBound,
    User,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub id: String,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub mode: CompositionMode,
    #[serde(default)]
    pub entries: Vec<BudgetEntry>,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub eta_provenance: Option<EtaProvenance>,
}

impl PrivacyBudget {
    pub fn adaptive(eps: &[f64]) -> Self {
        PrivacyBudget {
            mode: CompositionMode::Adaptive,
            entries: eps
                .iter()
                .enumerate()
                .map(|(i, &e)| BudgetEntry {
                    id: format!("M{}", i + 1),
                    eps: e,
                })
                .collect(),
            eta: 0.0,
            eta_provenance: None,
        }
    }

    pub fn nonadaptive(eps: &[f64], eta: f64, provenance: EtaProvenance) -> Self {
        PrivacyBudget {
            mode: CompositionMode::Nonadaptive,
            eta,
            eta_provenance: Some(provenance),
            ..Self::adaptive(eps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| !(e.eps >= 0.0) || !e.eps.is_finite())
        {
            return Err(Error::invalid(format!(
                "entry {} has invalid eps {}",
                e.id, e.eps
            )));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!(
                "eta must be finite and non-negative, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    fn eps_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.eps).sum()
    }
}

/// Total MI-PP level of a composition.
pub fn compose(budget: &PrivacyBudget) -> Result<f64> {
    budget.validate()?;
    match budget.mode {
        CompositionMode::Adaptive => {
            if budget.eta > 0.0 {
                return Err(Error::Misuse(
                    "adaptive composition has no eta term; use nonadaptive mode".into(),
                ));
            }
            Ok(budget.eps_sum())
        }
        CompositionMode::Nonadaptive => {
            if budget.eta_provenance.is_none() && !budget.entries.is_empty() {
                return Err(Error::Misuse(
                    "nonadaptive composition needs an eta with provenance (exact, bounded or user-supplied)".into(),
                ));
            }
            Ok(budget.eps_sum() + budget.eta)
        }
    }
}

/// Per member: does every positive-probability secret event pin down the database?
pub fn check_uc(theta: &DistributionFamily, graph: &SecretGraph) -> Result<Vec<bool>> {
    let DistributionFamily::DiscreteFinite(family) = theta else {
        return Err(Error::capability("UC check needs a finite discrete family"));
    };
    let pairs = graph.pairs();
    let mut labels = Vec::new();
    for p in &pairs {
        labels.push((
            value_labels(family, graph.private_fn(p.private))?,
            value_labels(family, graph.public_fn(p.public))?,
        ));
    }
    Ok(family
        .members
        .iter()
        .map(|pmf| {
            labels.iter().all(|((gl, ng), (wl, nw))| {
                let mut count = vec![0u32; ng * nw];
                for (t, &p) in pmf.iter().enumerate() {
                    if p > 0.0 {
                        count[gl[t] * nw + wl[t]] += 1;
                    }
                }
                count.iter().all(|&c| c <= 1)
            })
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UcCondition {
    /// Every member of Θ is UC (checked).
    AllMembersUc,
    /// Θ contains the UC distributions and each mechanism satisfies standard PP (asserted by the caller).
    AssertedStandardPp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UcComposition {
    pub total: f64,
    pub condition: UcCondition,
}

/// Composition with `η = 0` under universal composability.
pub fn compose_uc(
    budget: &PrivacyBudget,
    theta: &DistributionFamily,
    graph: &SecretGraph,
    each_satisfies_standard_pp: bool,
) -> Result<UcComposition> {
    budget.validate()?;
    let total = budget.eps_sum();
    if check_uc(theta, graph)?.iter().all(|&u| u) {
        return Ok(UcComposition {
            total,
            condition: UcCondition::AllMembersUc,
        });
    }
    if each_satisfies_standard_pp {
        return Ok(UcComposition {
            total,
            condition: UcCondition::AssertedStandardPp,
        });
    }
    Err(Error::Misuse(
        "family has non-UC members and standard PP was not asserted; compose non-adaptively with an eta bound".into(),
    ))
}

/// `Σ_i p_i K_i`.
pub fn mixture(kernels: &[DiscreteKernel], weights: &[f64]) -> Result<DiscreteKernel> {
    if kernels.is_empty() || kernels.len() != weights.len() {
        return Err(Error::dim("need one weight per kernel"));
    }
    crate::infotheory::validate_pmf(weights)?;
    let (n_in, n_out) = (kernels[0].n_inputs(), kernels[0].n_outputs());
    if kernels
        .iter()
        .any(|k| k.n_inputs() != n_in || k.n_outputs() != n_out)
    {
        return Err(Error::dim(
            "mixture components must share input and output alphabets",
        ));
    }
    let mut probs = vec![0.0; n_in * n_out];
    for (k, &w) in kernels.iter().zip(weights) {
        for t in 0..n_in {
            for (y, &p) in k.row(t).iter().enumerate() {
                probs[t * n_out + y] += w * p;
            }
        }
    }
    Ok(DiscreteKernel::from_flat(n_in, n_out, probs))
}

/// `A ∘ K`: output `y` of `K` is mapped through the kernel `A` (rows indexed by `y`).
pub fn post_process(kernel: &DiscreteKernel, map: &DiscreteKernel) -> Result<DiscreteKernel> {
    if map.n_inputs() != kernel.n_outputs() {
        return Err(Error::dim(
            "post-processing map must take the mechanism's outputs as inputs",
        ));
    }
    let (n_in, n_out) = (kernel.n_inputs(), map.n_outputs());
    let mut probs = vec![0.0; n_in * n_out];
    for t in 0..n_in {
        for (y, &p) in kernel.row(t).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (z, &q) in map.row(y).iter().enumerate() {
                probs[t * n_out + z] += p * q;
            }
        }
    }
    Ok(DiscreteKernel::from_flat(n_in, n_out, probs))
}

/// Independent joint release `(M_1, M_2)`, output index `y1 · |Y2| + y2`.
pub fn product_kernel(a: &DiscreteKernel, b: &DiscreteKernel) -> Result<DiscreteKernel> {
    if a.n_inputs() != b.n_inputs() {
        return Err(Error::dim("product components must share the input grid"));
    }
    let (n_in, n_out) = (a.n_inputs(), a.n_outputs() * b.n_outputs());
    let mut probs = Vec::with_capacity(n_in * n_out);
    for t in 0..n_in {
        for &p in a.row(t) {
            probs.extend(b.row(t).iter().map(|&q| p * q));
        }
    }
    Ok(DiscreteKernel::from_flat(n_in, n_out, probs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EtaReport {
    /// `max_{P, g∼w} Σ_{i≥2} I(M_i; M^{i−1} | w, g)`.
    pub eta: f64,
    pub member: usize,
    pub private: usize,
    pub public: Option<usize>,
}

/// Exact `η` by enumeration over a finite family.
pub fn exact_eta(fw: &PPFramework, kernels: &[DiscreteKernel]) -> Result<EtaReport> {
    let family = fw.discrete_family()?;
    if kernels.iter().any(|k| k.n_inputs() != family.grid_size()) {
        return Err(Error::dim("kernel rows do not match the family grid"));
    }
    let mut prefixes = Vec::new();
    if let Some(first) = kernels.first() {
        prefixes.push(first.clone());
        for k in &kernels[1..kernels.len().saturating_sub(1)] {
            let next = product_kernel(prefixes.last().expect("non-empty"), k)?;
            prefixes.push(next);
        }
    }
    let mut best = EtaReport {
        eta: 0.0,
        member: 0,
        private: 0,
        public: None,
    };
    let mut first = true;
    for pair in fw.graph.pairs() {
        let (gl, _) = value_labels(family, fw.graph.private_fn(pair.private))?;
        let (wl, nw) = value_labels(family, fw.graph.public_fn(pair.public))?;
        let gw: Vec<usize> = gl.iter().zip(&wl).map(|(g, w)| g * nw + w).collect();
        let ngw = gw.iter().max().map_or(1, |m| m + 1);
        for (mi, pmf) in family.members.iter().enumerate() {
            let mut total = 0.0;
            for i in 1..kernels.len() {
                let (ki, prev) = (&kernels[i], &prefixes[i - 1]);
                let (ny, nz) = (ki.n_outputs(), prev.n_outputs());
                let mut table = vec![0.0; ny * nz * ngw];
                for (t, &px) in pmf.iter().enumerate() {
                    if px == 0.0 {
                        continue;
                    }
                    for (y, &py) in ki.row(t).iter().enumerate() {
                        if py == 0.0 {
                            continue;
                        }
                        for (z, &pz) in prev.row(t).iter().enumerate() {
                            table[(y * nz + z) * ngw + gw[t]] += px * py * pz;
                        }
                    }
                }
                total += conditional_mi_raw(&table, ny, nz, ngw);
            }
            if first || total > best.eta {
                best = EtaReport {
                    eta: total,
                    member: mi,
                    private: pair.private,
                    public: pair.public,
                };
                first = false;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::{DataFunction, DiscreteFamily};
    use crate::infotheory::exhaustive_mechanism_mi;
    use crate::rng::Stream;
    use approx::assert_abs_diff_eq;

    fn random_kernel(rng: &mut Stream, n_in: usize, n_out: usize) -> DiscreteKernel {
        let rows = (0..n_in)
            .map(|_| {
                let w: Vec<f64> = (0..n_out).map(|_| rng.uniform() + 1e-3).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            })
            .collect();
        DiscreteKernel::new(rows).unwrap()
    }

    fn binary_family(n: usize, k: usize, members: Vec<Vec<f64>>) -> DistributionFamily {
        DistributionFamily::DiscreteFinite(
            DiscreteFamily::new(vec![0.0, 1.0], n, k, members).unwrap(),
        )
    }

    #[test]
    fn compose_examples() {
        assert_abs_diff_eq!(
            compose(&PrivacyBudget::adaptive(&[0.1, 0.2, 0.3])).unwrap(),
            0.6,
            epsilon = 1e-15
        );
        let b = PrivacyBudget::nonadaptive(&[0.1, 0.2, 0.3], 0.05, EtaProvenance::User);
        assert_abs_diff_eq!(compose(&b).unwrap(), 0.65, epsilon = 1e-15);
        assert_eq!(compose(&PrivacyBudget::adaptive(&[])).unwrap(), 0.0);
        let mut bad = PrivacyBudget::adaptive(&[0.1]);
        bad.eta = 0.1;
        assert!(matches!(compose(&bad), Err(Error::Misuse(_))));
        let mut unprov = PrivacyBudget::nonadaptive(&[0.1], 0.0, EtaProvenance::User);
        unprov.eta_provenance = None;
        assert!(matches!(compose(&unprov), Err(Error::Misuse(_))));
    }

    #[test]
    fn uc_examples() {
        let mut dirac = vec![0.0; 4];
        dirac[2] = 1.0;
        assert_eq!(
            check_uc(&binary_family(2, 1, vec![dirac]), &SecretGraph::ap(1)).unwrap(),
            vec![true]
        );
        let any = vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.25; 4]];
        assert!(check_uc(&binary_family(2, 1, any), &SecretGraph::dp(2))
            .unwrap()
            .iter()
            .all(|&u| u));
        assert_eq!(
            check_uc(
                &binary_family(2, 2, vec![vec![1.0 / 16.0; 16]]),
                &SecretGraph::ap(2)
            )
            .unwrap(),
            vec![false]
        );
        let cont = DistributionFamily::ProductGaussian {
            mean_bound: 0.0,
            var_bound: 1.0,
        };
        assert!(check_uc(&cont, &SecretGraph::dp(2))
            .unwrap_err()
            .is_capability());
    }

    #[test]
    fn compose_uc_conditions() {
        let b = PrivacyBudget::adaptive(&[0.1, 0.1]);
        let uc = binary_family(2, 1, vec![vec![0.25; 4]]);
        let r = compose_uc(&b, &uc, &SecretGraph::dp(2), false).unwrap();
        assert_eq!((r.total, r.condition), (0.2, UcCondition::AllMembersUc));
        let non_uc = binary_family(2, 2, vec![vec![1.0 / 16.0; 16]]);
        let r = compose_uc(&b, &non_uc, &SecretGraph::ap(2), true).unwrap();
        assert_eq!(
            (r.total, r.condition),
            (0.2, UcCondition::AssertedStandardPp)
        );
        assert!(compose_uc(&b, &non_uc, &SecretGraph::ap(2), false).is_err());
    }

    #[test]
    fn combinator_identities() {
        let mut rng = Stream::new(2);
        let a = random_kernel(&mut rng, 4, 3);
        let b = random_kernel(&mut rng, 4, 3);
        assert_eq!(
            mixture(&[a.clone(), a.clone()], &[0.3, 0.7])
                .unwrap()
                .row(2)
                .len(),
            3
        );
        let same = mixture(&[a.clone(), a.clone()], &[0.3, 0.7]).unwrap();
        for t in 0..4 {
            for y in 0..3 {
                assert_abs_diff_eq!(same.prob(t, y), a.prob(t, y), epsilon = 1e-15);
            }
        }
        assert_eq!(mixture(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap(), a);
        assert_eq!(post_process(&a, &DiscreteKernel::identity(3)).unwrap(), a);
        assert!(mixture(&[a.clone(), b], &[1.0]).is_err());
    }

    fn dp_fw(n: usize, members: Vec<Vec<f64>>) -> PPFramework {
        PPFramework::new(SecretGraph::dp(n), binary_family(n, 1, members), n, 1).unwrap()
    }

    #[test]
    fn mixture_and_post_processing_stay_below_components() {
        let mut rng = Stream::new(17);
        for _ in 0..20 {
            let fw = dp_fw(2, vec![vec![0.25; 4], vec![0.4, 0.3, 0.2, 0.1]]);
            let a = random_kernel(&mut rng, 4, 3);
            let b = random_kernel(&mut rng, 4, 3);
            let p = rng.uniform();
            let m = mixture(&[a.clone(), b.clone()], &[p, 1.0 - p]).unwrap();
            let va = exhaustive_mechanism_mi(&fw, &a.clone().into())
                .unwrap()
                .value;
            let vb = exhaustive_mechanism_mi(&fw, &b.into()).unwrap().value;
            let vm = exhaustive_mechanism_mi(&fw, &m.into()).unwrap().value;
            assert!(vm <= va.max(vb) + 1e-12);
            let post = post_process(&a, &random_kernel(&mut rng, 3, 2)).unwrap();
            assert!(exhaustive_mechanism_mi(&fw, &post.into()).unwrap().value <= va + 1e-12);
        }
    }

    #[test]
    fn uc_members_have_zero_eta() {
        let mut rng = Stream::new(23);
        let fw = dp_fw(2, vec![vec![0.1, 0.2, 0.3, 0.4]]);
        let ks = [
            random_kernel(&mut rng, 4, 2),
            random_kernel(&mut rng, 4, 3),
            random_kernel(&mut rng, 4, 2),
        ];
        assert!(exact_eta(&fw, &ks).unwrap().eta < 1e-12);
    }

    #[test]
    fn eta_is_positive_when_outputs_share_hidden_information() {
        // AP framework: g = column 0, the other column is hidden; both
        // mechanisms reveal column 1, so they are dependent given g.
        let fam = binary_family(1, 2, vec![vec![0.25; 4]]);
        let graph = SecretGraph::new(vec![DataFunction::column(0)], vec![], vec![], true).unwrap();
        let fw = PPFramework::new(graph, fam, 1, 2).unwrap();
        let reveal = DiscreteKernel::deterministic(&[0, 1, 0, 1], 2).unwrap();
        let r = exact_eta(&fw, &[reveal.clone(), reveal]).unwrap();
        assert_abs_diff_eq!(r.eta, std::f64::consts::LN_2, epsilon = 1e-12);
    }
}
