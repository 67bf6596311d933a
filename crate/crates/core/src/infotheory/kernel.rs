use std::sync::Arc;

use crate::error::{Error, Result};
use crate::framework::{DataFunction, Database, DiscreteFamily};
use crate::infotheory::measures::{laplace_cdf, normal_cdf};
use crate::mechanisms::{NoiseFamily, NoiseSpec};
use crate::rng::Stream;

const ROW_TOL: f64 = 1e-12;

/// Conditional output PMF given each database of a finite grid.
///
/// Row `t` is the output law for database index `t` of the family grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteKernel {
    n_in: usize,
    n_out: usize,
    probs: Vec<f64>,
}

impl DiscreteKernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_in = rows.len();
        let n_out = rows.first().map_or(0, Vec::len);
        if n_in == 0 || n_out == 0 {
            return Err(Error::invalid(
                "kernel needs at least one input and one output",
            ));
        }
        if rows.iter().any(|r| r.len() != n_out) {
            return Err(Error::dim("kernel rows have different lengths"));
        }
        for (t, r) in rows.iter().enumerate() {
            if r.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::invalid(format!(
                    "kernel row {t} has negative entries"
                )));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::invalid(format!("kernel row {t} sums to {s}")));
            }
        }
        Ok(DiscreteKernel {
            n_in,
            n_out,
            probs: rows.concat(),
        })
    }

    pub(crate) fn from_flat(n_in: usize, n_out: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), n_in * n_out);
        DiscreteKernel { n_in, n_out, probs }
    }

    /// `M(x) = x` on a grid of `n` points.
    pub fn identity(n: usize) -> Self {
        let mut probs = vec![0.0; n * n];
        for t in 0..n {
            probs[t * n + t] = 1.0;
        }
        DiscreteKernel {
            n_in: n,
            n_out: n,
            probs,
        }
    }

    /// Output law `pmf` regardless of the input.
    pub fn constant(n_in: usize, pmf: &[f64]) -> Result<Self> {
        DiscreteKernel::new(vec![pmf.to_vec(); n_in])
    }

    /// Deterministic kernel `t ↦ map[t]`.
    pub fn deterministic(map: &[usize], n_out: usize) -> Result<Self> {
        if map.iter().any(|&o| o >= n_out) {
            return Err(Error::invalid(
                "deterministic map points outside the output alphabet",
            ));
        }
        let mut probs = vec![0.0; map.len() * n_out];
        for (t, &o) in map.iter().enumerate() {
            probs[t * n_out + o] = 1.0;
        }
        Ok(DiscreteKernel {
            n_in: map.len(),
            n_out,
            probs,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.n_out
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.n_out..(t + 1) * self.n_out]
    }

    pub fn prob(&self, t: usize, y: usize) -> f64 {
        self.probs[t * self.n_out + y]
    }
}

/// A mechanism that can only be sampled.
pub trait BlackBoxMechanism: Send + Sync + std::fmt::Debug {
    fn sample(&self, x: &Database, rng: &mut Stream) -> Vec<f64>;
    fn output_dim(&self) -> usize;
}

#[derive(Clone, Debug)]
pub enum MechanismKernel {
    Discrete(DiscreteKernel),
    AdditiveNoise { f: DataFunction, noise: NoiseSpec },
    BlackBox(Arc<dyn BlackBoxMechanism>),
}

impl From<DiscreteKernel> for MechanismKernel {
    fn from(k: DiscreteKernel) -> Self {
        MechanismKernel::Discrete(k)
    }
}

/// Exact discretisation of additive-noise mechanisms onto a finite output grid.
///
/// Each output coordinate gets `bins` equal-width cells spanning the range of
/// the noiseless values widened by `half_width` noise scales on both sides,
/// plus one overflow cell at each end. Cell probabilities come from the noise
/// CDF, so the result is the exact law of a quantised output. Quantisation is
/// a post-processing, hence the discretised MI never exceeds the true MI.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discretizer {
    pub bins: usize,
    pub half_width: f64,
    /// Refuse to build kernels with more than this many cells.
    pub max_cells: usize,
}

impl Default for Discretizer {
    fn default() -> Self {
        Discretizer {
            bins: 512,
            half_width: 8.0,
            max_cells: 1 << 26,
        }
    }
}

impl Discretizer {
    pub fn with_bins(bins: usize) -> Self {
        Discretizer {
            bins,
            ..Default::default()
        }
    }

    /// Cell probabilities for one coordinate with noiseless value `v`.
    fn cell_probs(&self, v: f64, lo: f64, width: f64, noise: &NoiseFamily, out: &mut Vec<f64>) {
        out.clear();
        let (scale, cdf): (f64, fn(f64) -> f64) = match *noise {
            NoiseFamily::Laplace { b } => (b, laplace_cdf),
            NoiseFamily::Gaussian { sigma2 } => (sigma2.sqrt(), normal_cdf),
        };
        if scale == 0.0 {
            // point mass: index of the cell containing v (overflow cells never hit)
            let idx =
                (((v - lo) / width).floor() as isize).clamp(0, self.bins as isize - 1) as usize;
            out.resize(self.bins + 2, 0.0);
            out[idx + 1] = 1.0;
            return;
        }
        let mut prev = 0.0;
        for e in 0..=self.bins {
            let c = cdf((lo + e as f64 * width - v) / scale);
            out.push(c - prev);
            prev = c;
        }
        out.push(1.0 - prev);
        for p in out.iter_mut() {
            *p = p.max(0.0);
        }
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= s);
    }

    /// Discretise `f(x) + Z` (after any projection) over the family grid.
    pub fn discretize(
        &self,
        f: &DataFunction,
        noise: &NoiseSpec,
        family: &DiscreteFamily,
    ) -> Result<DiscreteKernel> {
        if self.bins == 0 {
            return Err(Error::invalid("discretizer needs at least one bin"));
        }
        let dbs = family.databases();
        let values = dbs
            .iter()
            .map(|x| noise.transform(&f.evaluate(x)?))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let dim = noise.dim;
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::dim("noise dimension differs from the query output"));
        }
        let per = self.bins + 2;
        let n_out = per
            .checked_pow(dim as u32)
            .filter(|&c| c.saturating_mul(dbs.len()) <= self.max_cells)
            .ok_or_else(|| Error::capability("discretised output grid too large"))?;
        let scale = noise.family.scale();
        let mut grids = Vec::with_capacity(dim);
        for j in 0..dim {
            let vmin = values.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
            let vmax = values
                .iter()
                .map(|v| v[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let span = (vmax - vmin) + 2.0 * self.half_width * scale;
            let span = if span > 0.0 { span } else { 1.0 };
            let lo = vmin
                - self.half_width * scale
                - if vmax == vmin && scale == 0.0 {
                    0.5
                } else {
                    0.0
                };
            grids.push((lo, span / self.bins as f64));
        }
        let mut probs = Vec::with_capacity(dbs.len() * n_out);
        let mut coord: Vec<Vec<f64>> = vec![Vec::new(); dim];
        for v in &values {
            for j in 0..dim {
                let (lo, width) = grids[j];
                self.cell_probs(v[j], lo, width, &noise.family, &mut coord[j]);
            }
            // outer product, last coordinate fastest
            let mut row = vec![1.0];
            for c in &coord {
                row = row
                    .iter()
                    .flat_map(|&a| c.iter().map(move |&b| a * b))
                    .collect();
            }
            probs.extend(row);
        }
        Ok(DiscreteKernel::from_flat(dbs.len(), n_out, probs))
    }
}

impl MechanismKernel {
    /// Table form over a discrete family, discretising additive noise as needed.
    pub fn to_discrete(
        &self,
        family: &DiscreteFamily,
        disc: &Discretizer,
    ) -> Result<DiscreteKernel> {
        match self {
            MechanismKernel::Discrete(k) => {
                if k.n_inputs() != family.grid_size() {
                    return Err(Error::dim(format!(
                        "kernel has {} input rows, family grid has {}",
                        k.n_inputs(),
                        family.grid_size()
                    )));
                }
                Ok(k.clone())
            }
            MechanismKernel::AdditiveNoise { f, noise } => disc.discretize(f, noise, family),
            MechanismKernel::BlackBox(_) => Err(Error::capability(
                "black-box mechanisms have no exact output law",
            )),
        }
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, MechanismKernel::Discrete(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_rows_must_be_pmfs() {
        assert!(DiscreteKernel::new(vec![vec![0.5, 0.6]]).is_err());
        assert!(DiscreteKernel::new(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
        let k = DiscreteKernel::identity(3);
        assert_eq!(k.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn discretized_rows_are_pmfs_and_centered() {
        let fam = DiscreteFamily::new(vec![0.0, 1.0], 1, 1, vec![vec![0.5, 0.5]]).unwrap();
        let noise = NoiseSpec::gaussian(0.25, 1);
        let k = Discretizer::with_bins(64)
            .discretize(&DataFunction::row(0), &noise, &fam)
            .unwrap();
        assert_eq!(k.n_outputs(), 66);
        for t in 0..2 {
            assert_abs_diff_eq!(k.row(t).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        // the two rows are mirror images of each other
        for y in 0..66 {
            assert_abs_diff_eq!(k.prob(0, y), k.prob(1, 65 - y), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let fam = DiscreteFamily::new(vec![0.0, 1.0], 1, 1, vec![vec![0.5, 0.5]]).unwrap();
        let noise = NoiseSpec::gaussian(0.0, 1);
        let k = Discretizer::with_bins(8)
            .discretize(&DataFunction::row(0), &noise, &fam)
            .unwrap();
        for t in 0..2 {
            assert_eq!(k.row(t).iter().filter(|&&p| p == 1.0).count(), 1);
        }
        assert_ne!(k.row(0), k.row(1));
    }
}
