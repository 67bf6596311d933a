use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::smi::dv::MiEstimator;
use crate::smi::samples::{RowSamples, SliceSampleSet};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SMIEstimate {
    /// Arithmetic mean of `per_projection`.
    pub value: f64,
    pub per_projection: Vec<f64>,
    pub p: usize,
    pub mean: f64,
    /// Standard error of the mean across projections.
    pub stderr: f64,
}

impl SMIEstimate {
    fn from_values(per_projection: Vec<f64>) -> Self {
        let p = per_projection.len();
        let mean = per_projection.iter().sum::<f64>() / p as f64;
        let stderr = if p > 1 {
            let var = per_projection
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (p - 1) as f64;
            (var / p as f64).sqrt()
        } else {
            0.0
        };
        SMIEstimate {
            value: mean,
            per_projection,
            p,
            mean,
            stderr,
        }
    }
}

/// One projection triple `(θ, φ, ψ)`; `ψ` is empty when there is no `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionTriple {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

/// The `j`-th projection triple for a given seed.
pub fn projection_triple(seed: u64, j: usize, kx: usize, dy: usize, dz: usize) -> ProjectionTriple {
    let mut rng = Stream::substream(seed, &[j as u64]);
    ProjectionTriple {
        theta: rng.unit_vector(kx),
        phi: rng.unit_vector(dy),
        psi: if dz > 0 {
            rng.unit_vector(dz)
        } else {
            Vec::new()
        },
    }
}

fn project(data: &[f64], dir: &[f64], m: usize) -> Vec<f64> {
    let w = dir.len();
    (0..m)
        .map(|s| {
            data[s * w..(s + 1) * w]
                .iter()
                .zip(dir)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Monte Carlo sliced MI `SI(X_i; (Y, Z_i))` for one record: `p` random
/// projection triples, the inner estimator on each projected sample, then the
/// average. Projections run in parallel and are seeded by index.
pub fn smi_mc(
    record: &RowSamples,
    p: usize,
    inner: &dyn MiEstimator,
    seed: u64,
) -> Result<SMIEstimate> {
    if p == 0 {
        return Err(Error::invalid("need at least one projection"));
    }
    record.validate()?;
    let values = (0..p)
        .into_par_iter()
        .map(|j| {
            let t = projection_triple(seed, j, record.kx, record.dy, record.dz);
            let u = project(&record.x, &t.theta, record.m);
            let v1 = project(&record.y, &t.phi, record.m);
            let inner_seed = Stream::substream(seed, &[j as u64, 1]).next_u64();
            if record.dz > 0 {
                let v2 = project(&record.z, &t.psi, record.m);
                inner.estimate(&u, &[&v1, &v2], inner_seed)
            } else {
                inner.estimate(&u, &[&v1], inner_seed)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SMIEstimate::from_values(values))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmiStatistic {
    pub value: f64,
    /// Zero-based index of the record attaining the maximum.
    pub argmax: usize,
    pub per_row: Vec<SMIEstimate>,
}

/// Seed used for record `i` inside [`smi_dp_statistic`].
pub fn row_seed(seed: u64, i: usize) -> u64 {
    Stream::substream(seed, &[i as u64]).next_u64()
}

/// `max_i ŜI(X_i; (Y, Z_i))` over all records with the attaining record.
pub fn smi_dp_statistic(
    samples: &SliceSampleSet,
    p: usize,
    inner: &dyn MiEstimator,
    seed: u64,
) -> Result<SmiStatistic> {
    if samples.rows.is_empty() {
        return Err(Error::invalid("sample set has no records"));
    }
    let per_row = samples
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| smi_mc(r, p, inner, row_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut argmax = 0;
    for (i, e) in per_row.iter().enumerate() {
        if e.value > per_row[argmax].value {
            argmax = i;
        }
    }
    Ok(SmiStatistic {
        value: per_row[argmax].value,
        argmax,
        per_row,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianSmiOracle {
    pub value: f64,
    pub stderr: f64,
}

fn check_blocks(cov: &DMatrix<f64>, dims: (usize, usize, usize)) -> Result<()> {
    let (kx, dy, dz) = dims;
    if !cov.is_square() || cov.nrows() != kx + dy + dz {
        return Err(Error::dim(format!(
            "covariance is {}x{}, blocks sum to {}",
            cov.nrows(),
            cov.ncols(),
            kx + dy + dz
        )));
    }
    if kx == 0 || dy == 0 {
        return Err(Error::invalid("X and Y blocks must be non-empty"));
    }
    if (cov - cov.transpose()).amax() > 1e-10 * (1.0 + cov.amax()) {
        return Err(Error::invalid("covariance must be symmetric"));
    }
    if cov.clone().cholesky().is_none() {
        return Err(Error::invalid("covariance must be positive definite"));
    }
    Ok(())
}

/// Sliced MI of a jointly Gaussian `(X_i, Y, Z_i)` by averaging the exact
/// scalar-versus-pair Gaussian MI over `n_proj` random projection triples.
pub fn smi_gaussian_oracle(
    cov: &DMatrix<f64>,
    dims: (usize, usize, usize),
    n_proj: usize,
    seed: u64,
) -> Result<GaussianSmiOracle> {
    check_blocks(cov, dims)?;
    if n_proj == 0 {
        return Err(Error::invalid("need at least one projection"));
    }
    let (kx, dy, dz) = dims;
    let values: Vec<f64> = (0..n_proj)
        .into_par_iter()
        .map(|j| {
            let t = projection_triple(seed, j, kx, dy, dz);
            // Loadings of (u, v1, v2) on the full vector.
            let mut a = DMatrix::zeros(if dz > 0 { 3 } else { 2 }, kx + dy + dz);
            for (c, &v) in t.theta.iter().enumerate() {
                a[(0, c)] = v;
            }
            for (c, &v) in t.phi.iter().enumerate() {
                a[(1, kx + c)] = v;
            }
            for (c, &v) in t.psi.iter().enumerate() {
                a[(2, kx + dy + c)] = v;
            }
            let s = &a * cov * a.transpose();
            let var_u = s[(0, 0)];
            let q = s.nrows() - 1;
            let c = DVector::from_fn(q, |r, _| s[(0, r + 1)]);
            let svv = s.view((1, 1), (q, q)).into_owned();
            let explained = svv.cholesky().map(|ch| c.dot(&ch.solve(&c))).unwrap_or(0.0);
            let r2 = (explained / var_u).clamp(0.0, 1.0 - 1e-300);
            -0.5 * (1.0 - r2).ln()
        })
        .collect();
    let est = SMIEstimate::from_values(values);
    Ok(GaussianSmiOracle {
        value: est.value,
        stderr: est.stderr,
    })
}

/// Exact `I(X; (Y, Z))` for a jointly Gaussian vector: `½ ln(det Σ_X det Σ_YZ / det Σ)`.
pub fn gaussian_joint_mi(cov: &DMatrix<f64>, dims: (usize, usize, usize)) -> Result<f64> {
    check_blocks(cov, dims)?;
    let kx = dims.0;
    let rest = cov.nrows() - kx;
    let logdet = |m: DMatrix<f64>| -> f64 {
        let ch = m
            .cholesky()
            .expect("principal blocks of a PD matrix are PD");
        2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    };
    let lx = logdet(cov.view((0, 0), (kx, kx)).into_owned());
    let lr = logdet(cov.view((kx, kx), (rest, rest)).into_owned());
    let lall = logdet(cov.clone());
    Ok((0.5 * (lx + lr - lall)).max(0.0))
}
