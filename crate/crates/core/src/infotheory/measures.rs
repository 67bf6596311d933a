use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PMF_TOL: f64 = 1e-12;

/// A quantity in nats that may be infinite.
///
/// Infinite values (e.g. KL divergence without absolute continuity) are
/// carried explicitly instead of as a large float.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Nats {
    Finite(f64),
    Infinite,
}

impl Nats {
    pub fn is_finite(self) -> bool {
        matches!(self, Nats::Finite(_))
    }

    /// The value as an `f64`, with `Infinite` mapped to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        match self {
            Nats::Finite(v) => v,
            Nats::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Nats::Finite(v) => Some(v),
            Nats::Infinite => None,
        }
    }
}

impl fmt::Display for Nats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nats::Finite(v) => write!(f, "{v} nats"),
            Nats::Infinite => write!(f, "inf nats"),
        }
    }
}

pub fn validate_pmf(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid("empty PMF"));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("PMF has negative or non-finite entries"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PMF_TOL {
        return Err(Error::invalid(format!("PMF sums to {s}")));
    }
    Ok(())
}

/// `x ln x` with `0 ln 0 = 0`.
pub(crate) fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Shannon entropy without validation, for internal use on sub-normalised slices.
pub(crate) fn entropy_raw(p: &[f64]) -> f64 {
    -p.iter().map(|&v| xlogx(v)).sum::<f64>()
}

pub fn discrete_entropy(p: &[f64]) -> Result<f64> {
    validate_pmf(p)?;
    Ok(entropy_raw(p).max(0.0))
}

/// Binary entropy `h_b(p)` in nats; `p` is clamped to `[0, 1]`.
pub fn binary_entropy(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    -(xlogx(p) + xlogx(1.0 - p))
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<Nats> {
    validate_pmf(p)?;
    validate_pmf(q)?;
    if p.len() != q.len() {
        return Err(Error::dim("KL arguments have different alphabets"));
    }
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b == 0.0 {
                return Ok(Nats::Infinite);
            }
            acc += a * (a / b).ln();
        }
    }
    Ok(Nats::Finite(acc.max(0.0)))
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    validate_pmf(p)?;
    validate_pmf(q)?;
    if p.len() != q.len() {
        return Err(Error::dim("TV arguments have different alphabets"));
    }
    Ok((0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()).min(1.0))
}

/// Dense joint PMF over a product of finite, index-coded alphabets.
///
/// Axis sizes are stored in `dims`; probabilities are row-major with the last
/// axis varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPMF {
    dims: Vec<usize>,
    probs: Vec<f64>,
}

impl JointPMF {
    pub fn new(dims: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::invalid(
                "joint PMF needs at least one non-empty axis",
            ));
        }
        let total: usize = dims.iter().product();
        if probs.len() != total {
            return Err(Error::dim(format!(
                "{} probabilities for {total} cells",
                probs.len()
            )));
        }
        validate_pmf(&probs)?;
        Ok(JointPMF { dims, probs })
    }

    /// Build from unnormalised non-negative weights.
    pub fn from_weights(dims: Vec<usize>, mut weights: Vec<f64>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::invalid("weights must have positive total mass"));
        }
        weights.iter_mut().for_each(|w| *w /= s);
        JointPMF::new(dims, weights)
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, probs: Vec<f64>) -> Self {
        JointPMF { dims, probs }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.probs[self.offset(index)]
    }

    fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.dims.len()).rev() {
            out[a] = flat % self.dims[a];
            flat /= self.dims[a];
        }
    }

    /// Marginal over the listed axes, in the order given.
    pub fn marginal(&self, axes: &[usize]) -> Result<JointPMF> {
        if axes.is_empty() || axes.iter().any(|&a| a >= self.dims.len()) {
            return Err(Error::invalid("marginal axes out of range"));
        }
        let dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let mut probs = vec![0.0; dims.iter().product()];
        let mut idx = vec![0; self.dims.len()];
        for (flat, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            self.unravel(flat, &mut idx);
            let off = axes
                .iter()
                .zip(&dims)
                .fold(0, |acc, (&a, &d)| acc * d + idx[a]);
            probs[off] += p;
        }
        Ok(JointPMF { dims, probs })
    }

    /// Entropy of the marginal over `axes`.
    pub fn entropy(&self, axes: &[usize]) -> Result<f64> {
        Ok(entropy_raw(self.marginal(axes)?.probs()).max(0.0))
    }

    /// Write `(i0, ..., i{r-1}, prob)` rows with header `a0,...,prob`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dims.len()).map(|a| format!("a{a}")).collect();
        header.push("prob".into());
        w.write_record(&header)?;
        let mut idx = vec![0; self.dims.len()];
        for (flat, &p) in self.probs.iter().enumerate() {
            self.unravel(flat, &mut idx);
            let mut rec: Vec<String> = idx.iter().map(usize::to_string).collect();
            rec.push(format!("{p:?}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the layout written by [`JointPMF::write_csv`]. Axis sizes are
    /// inferred as one more than the largest index seen; missing cells are zero.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let rank = rdr
            .headers()?
            .len()
            .checked_sub(1)
            .filter(|&r| r > 0)
            .ok_or_else(|| {
                Error::Parse(
                    "joint PMF CSV needs at least one index column and a prob column".into(),
                )
            })?;
        let mut cells: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut dims = vec![0usize; rank];
        for rec in rdr.records() {
            let rec = rec?;
            let idx = (0..rank)
                .map(|a| {
                    rec[a]
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| Error::Parse(format!("index '{}': {e}", &rec[a])))
                })
                .collect::<Result<Vec<_>>>()?;
            let p: f64 = rec[rank]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("prob '{}': {e}", &rec[rank])))?;
            for (d, &i) in dims.iter_mut().zip(&idx) {
                *d = (*d).max(i + 1);
            }
            cells.push((idx, p));
        }
        let mut out = JointPMF {
            dims: dims.clone(),
            probs: vec![0.0; dims.iter().product()],
        };
        for (idx, p) in cells {
            let off = out.offset(&idx);
            out.probs[off] += p;
        }
        JointPMF::new(out.dims, out.probs)
    }
}

/// `I(G; M | W)` for a joint PMF with axes ordered `(G, M, W)`.
pub fn discrete_conditional_mi(joint: &JointPMF) -> Result<f64> {
    let d = joint.dims();
    if d.len() != 3 {
        return Err(Error::dim(
            "conditional MI needs a 3-axis PMF ordered (G, M, W)",
        ));
    }
    Ok(conditional_mi_raw(joint.probs(), d[0], d[1], d[2]))
}

/// Conditional MI on a raw `(G, M, W)` row-major tensor; no validation.
pub(crate) fn conditional_mi_raw(p: &[f64], ng: usize, nm: usize, nw: usize) -> f64 {
    let mut p_gw = vec![0.0; ng * nw];
    let mut p_mw = vec![0.0; nm * nw];
    let mut p_w = vec![0.0; nw];
    for g in 0..ng {
        for m in 0..nm {
            let base = (g * nm + m) * nw;
            for w in 0..nw {
                let v = p[base + w];
                p_gw[g * nw + w] += v;
                p_mw[m * nw + w] += v;
                p_w[w] += v;
            }
        }
    }
    let mut acc = 0.0;
    for g in 0..ng {
        for m in 0..nm {
            let base = (g * nm + m) * nw;
            for w in 0..nw {
                let v = p[base + w];
                if v > 0.0 {
                    acc += v * (v * p_w[w] / (p_gw[g * nw + w] * p_mw[m * nw + w])).ln();
                }
            }
        }
    }
    acc.max(0.0)
}

/// Exact `I(g; f + Z | w) = ½ ln(1 + Var(f|w)/σ²)` for jointly Gaussian
/// scalars where `g` explains all of `Var(f|w)`.
pub fn gaussian_conditional_mi(var_f_given_w: f64, sigma2: f64) -> Result<Nats> {
    if !var_f_given_w.is_finite() || !sigma2.is_finite() || var_f_given_w < 0.0 || sigma2 < 0.0 {
        return Err(Error::invalid("variances must be finite and non-negative"));
    }
    if var_f_given_w == 0.0 {
        return Ok(Nats::Finite(0.0));
    }
    if sigma2 == 0.0 {
        return Ok(Nats::Infinite);
    }
    Ok(Nats::Finite(0.5 * (var_f_given_w / sigma2).ln_1p()))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of Laplace(0, 1).
pub fn laplace_cdf(x: f64) -> f64 {
    if x < 0.0 {
        0.5 * x.exp()
    } else {
        1.0 - 0.5 * (-x).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(
            discrete_entropy(&[0.5, 0.5]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_eq!(discrete_entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            discrete_entropy(&[0.25; 4]).unwrap(),
            2.0 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert!(discrete_entropy(&[0.7, 0.7]).is_err());
    }

    #[test]
    fn kl_and_tv_examples() {
        let u = [0.5, 0.5];
        assert_eq!(kl_divergence(&u, &u).unwrap(), Nats::Finite(0.0));
        assert_eq!(tv_distance(&u, &u).unwrap(), 0.0);
        let p = [1.0, 0.0];
        let kl = kl_divergence(&p, &u).unwrap().value();
        assert_abs_diff_eq!(kl, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(tv_distance(&p, &u).unwrap(), 0.5);
        assert!(0.5 <= (0.5 * kl).sqrt());
        assert_abs_diff_eq!((0.5 * kl).sqrt(), 0.588705, epsilon = 1e-6);
        assert_eq!(kl_divergence(&u, &p).unwrap(), Nats::Infinite);
    }

    #[test]
    fn conditional_mi_examples() {
        // G = M uniform binary, W constant.
        let j = JointPMF::new(vec![2, 2, 1], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert_abs_diff_eq!(
            discrete_conditional_mi(&j).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );

        // Independent given W.
        let j = JointPMF::new(vec![2, 2, 2], vec![0.125; 8]).unwrap();
        assert_abs_diff_eq!(discrete_conditional_mi(&j).unwrap(), 0.0, epsilon = 1e-15);

        // Randomized response with flip probability 1/4.
        let q = 0.25;
        let j = JointPMF::new(
            vec![2, 2, 1],
            vec![0.5 * (1.0 - q), 0.5 * q, 0.5 * q, 0.5 * (1.0 - q)],
        )
        .unwrap();
        let expect = std::f64::consts::LN_2 - binary_entropy(q);
        assert_abs_diff_eq!(
            discrete_conditional_mi(&j).unwrap(),
            expect,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expect, 0.1308120359, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_mi_examples() {
        assert_eq!(
            gaussian_conditional_mi(0.0, 1.0).unwrap(),
            Nats::Finite(0.0)
        );
        let s2 = 1.0 / (std::f64::consts::E.powi(2) - 1.0);
        assert_abs_diff_eq!(
            gaussian_conditional_mi(1.0, s2).unwrap().value(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            gaussian_conditional_mi(1.0, 1.0).unwrap().value(),
            0.346574,
            epsilon = 1e-6
        );
        assert_eq!(gaussian_conditional_mi(1.0, 0.0).unwrap(), Nats::Infinite);
    }

    #[test]
    fn joint_csv_roundtrip() {
        let j = JointPMF::new(vec![2, 3], vec![0.1, 0.2, 0.0, 0.3, 0.15, 0.25]).unwrap();
        let mut buf = Vec::new();
        j.write_csv(&mut buf).unwrap();
        assert_eq!(JointPMF::read_csv(buf.as_slice()).unwrap(), j);
    }

    #[test]
    fn cdfs() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.96), 0.9750021048517795, epsilon = 1e-12);
        assert_abs_diff_eq!(laplace_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            laplace_cdf(1.0),
            1.0 - 0.5 * (-1.0f64).exp(),
            epsilon = 1e-15
        );
    }

    mod props {
        use super::*;
        use crate::rng::Stream;
        use proptest::prelude::*;

        fn random_pmf(rng: &mut Stream, n: usize, sparse: bool) -> Vec<f64> {
            let mut w: Vec<f64> = (0..n)
                .map(|_| {
                    if sparse && rng.uniform() < 0.3 {
                        0.0
                    } else {
                        -rng.uniform_open().ln()
                    }
                })
                .collect();
            if w.iter().all(|&v| v == 0.0) {
                w[0] = 1.0;
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            w
        }

        #[test]
        fn pinsker_on_random_pairs() {
            let mut rng = Stream::new(11);
            for _ in 0..1000 {
                let n = 2 + rng.index(6);
                let p = random_pmf(&mut rng, n, true);
                let q = random_pmf(&mut rng, n, true);
                if let Nats::Finite(kl) = kl_divergence(&p, &q).unwrap() {
                    assert!(tv_distance(&p, &q).unwrap() <= (0.5 * kl).sqrt() + 1e-12);
                }
            }
        }

        proptest! {
            #[test]
            fn chain_rule(seed in any::<u64>(), ng in 1usize..4, nm in 1usize..4, nw in 1usize..4) {
                let mut rng = Stream::new(seed);
                let p = random_pmf(&mut rng, ng * nm * nw, true);
                let j = JointPMF::new(vec![ng, nm, nw], p).unwrap();
                let by_def = discrete_conditional_mi(&j).unwrap();
                // I(G;M|W) = H(G,W) + H(M,W) - H(W) - H(G,M,W)
                let by_h = j.entropy(&[0, 2]).unwrap() + j.entropy(&[1, 2]).unwrap()
                    - j.entropy(&[2]).unwrap() - j.entropy(&[0, 1, 2]).unwrap();
                prop_assert!((by_def - by_h).abs() < 1e-10);
            }

            #[test]
            fn gaussian_mi_monotone(v in 0.01f64..10.0, s in 0.01f64..10.0, t in 1.01f64..3.0) {
                let base = gaussian_conditional_mi(v, s).unwrap().value();
                prop_assert!(gaussian_conditional_mi(v, s * t).unwrap().value() < base);
                prop_assert!(gaussian_conditional_mi(v * t, s).unwrap().value() > base);
            }
        }
    }
}
