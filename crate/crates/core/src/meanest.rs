//! Private mean estimation with chunked noisy means.
//!
//! The `n` samples are split into `m = ⌊mult · ln(1/β)⌋` consecutive chunks of
//! `k = ⌊n/m⌋` rows (leftover rows are dropped). Each chunk mean gets
//! independent `N(0, σ² I_d)` noise with `σ² = c·d·m²/(2n²ε)` and the noisy
//! means are aggregated with a geometric or coordinatewise median.
//!
//! `c` bounds `E‖X − μ‖²`. With `c = 1` the variance reduces to the plain
//! `d m²/(2n²ε)` form.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framework::DataFunction;
use crate::mechanisms::NoiseSpec;
use crate::rng::Stream;

/// Multiplier used by the reference algorithm; reports translate the
/// effective chunk count back into the confidence it would certify there.
pub const REFERENCE_MULTIPLIER: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianKind {
    Geometric,
    Coordinatewise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanEstConfig {
    pub eps: f64,
    pub beta: f64,
    pub d: usize,
    /// Bound `c` on `E‖X − μ‖²`.
    pub c: f64,
    pub m_multiplier: f64,
    pub median: MedianKind,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for MeanEstConfig {
    fn default() -> Self {
        MeanEstConfig {
            eps: 1.0,
            beta: 0.05,
            d: 1,
            c: 1.0,
            m_multiplier: REFERENCE_MULTIPLIER,
            median: MedianKind::Geometric,
            tol: 1e-9,
            max_iters: 1000,
            seed: 0,
        }
    }
}

impl MeanEstConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::range(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::range(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if self.d == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::range(format!(
                "second-moment bound must be positive, got {}",
                self.c
            )));
        }
        if !(self.m_multiplier > 0.0) || !self.m_multiplier.is_finite() {
            return Err(Error::range(format!(
                "m multiplier must be positive, got {}",
                self.m_multiplier
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::range("median tolerance must be positive"));
        }
        Ok(())
    }

    /// Number of chunks `⌊mult · ln(1/β)⌋`.
    pub fn chunks(&self) -> Result<usize> {
        self.validate()?;
        let m = (self.m_multiplier * (1.0 / self.beta).ln()).floor();
        if m < 1.0 {
            return Err(Error::range(format!(
                "m = floor({} ln(1/{})) is zero; raise m_multiplier or lower beta",
                self.m_multiplier, self.beta
            )));
        }
        Ok(m as usize)
    }

    /// `σ² = c·d·m²/(2n²ε)`.
    pub fn sigma2(&self, n: usize) -> Result<f64> {
        let m = self.chunks()? as f64;
        let n = n as f64;
        Ok(self.c * self.d as f64 * m * m / (2.0 * n * n * self.eps))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanEstReport {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub sigma2: f64,
    pub discarded: usize,
    pub median: MedianKind,
    pub iterations: usize,
    pub converged: bool,
    /// `1 − exp(−m/200)`: the confidence the reference multiplier would assign to `m` chunks.
    pub effective_confidence: f64,
}

/// One noisy chunk mean. Reads only rows `p·k .. (p+1)·k`.
fn noisy_chunk_mean(samples: &[Vec<f64>], p: usize, k: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for row in &samples[p * k..(p + 1) * k] {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    let mut rng = Stream::substream(seed, &[p as u64]);
    for a in mean.iter_mut() {
        *a = *a / k as f64 + sigma * rng.normal();
    }
    mean
}

/// The noisy chunk means `μ̃_1, …, μ̃_m` before aggregation.
pub fn noisy_chunk_means(
    samples: &[Vec<f64>],
    cfg: &MeanEstConfig,
) -> Result<(Vec<Vec<f64>>, usize, f64)> {
    let m = cfg.chunks()?;
    let n = samples.len();
    if n < m {
        return Err(Error::invalid(format!(
            "n = {n} is smaller than the {m} chunks; lower m_multiplier or raise beta"
        )));
    }
    if let Some(bad) = samples.iter().position(|r| r.len() != cfg.d) {
        return Err(Error::dim(format!(
            "sample {bad} has {} coordinates, expected {}",
            samples[bad].len(),
            cfg.d
        )));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let k = n / m;
    let sigma2 = cfg.sigma2(n)?;
    let sigma = sigma2.sqrt();
    let means = (0..m)
        .into_par_iter()
        .map(|p| noisy_chunk_mean(samples, p, k, sigma, cfg.seed))
        .collect();
    Ok((means, k, sigma2))
}

/// Chunked noisy means aggregated by the configured median.
pub fn private_mean(
    samples: &[Vec<f64>],
    cfg: &MeanEstConfig,
) -> Result<(Vec<f64>, MeanEstReport)> {
    let (means, k, sigma2) = noisy_chunk_means(samples, cfg)?;
    let m = means.len();
    let (estimate, iterations, converged) = match cfg.median {
        MedianKind::Geometric => {
            let g = geometric_median(&means, cfg.tol, cfg.max_iters)?;
            (g.point, g.iterations, g.converged)
        }
        MedianKind::Coordinatewise => (coordinatewise_median(&means)?, 0, true),
    };
    let report = MeanEstReport {
        n: samples.len(),
        m,
        k,
        sigma2,
        discarded: samples.len() - m * k,
        median: cfg.median,
        iterations,
        converged,
        effective_confidence: 1.0 - (-(m as f64) / REFERENCE_MULTIPLIER).exp(),
    };
    Ok((estimate, report))
}

/// The chunk-mean release as an additive mechanism on an `n × d` database:
/// a linear query with `m·d` outputs and its Gaussian noise. Lets the exact
/// oracles check the privacy of the release on small discrete families.
pub fn chunk_mechanism(n: usize, cfg: &MeanEstConfig) -> Result<(DataFunction, NoiseSpec)> {
    let m = cfg.chunks()?;
    if n < m {
        return Err(Error::invalid(format!(
            "n = {n} is smaller than the {m} chunks"
        )));
    }
    let d = cfg.d;
    let k = n / m;
    let cols = n * d;
    let mut w = vec![0.0; m * d * cols];
    for p in 0..m {
        for i in p * k..(p + 1) * k {
            for j in 0..d {
                w[(p * d + j) * cols + i * d + j] = 1.0 / k as f64;
            }
        }
    }
    Ok((
        DataFunction::linear(m * d, w)?,
        NoiseSpec::gaussian(cfg.sigma2(n)?, m * d),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeometricMedian {
    pub point: Vec<f64>,
    pub objective: f64,
    /// Norm of the (sub)gradient of the mean-distance objective at `point`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sum_dist(points: &[Vec<f64>], y: &[f64]) -> f64 {
    points.iter().map(|p| dist(p, y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::invalid("need at least one point"));
    };
    let d = first.len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::dim("points have different dimensions"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("points must be finite"));
    }
    Ok(d)
}

/// Weiszfeld iteration for `argmin_y Σ ‖y − x_i‖`.
///
/// When an iterate lands on a data point the plain update is undefined; the
/// Vardi–Zhang step then either certifies that point as optimal or moves off
/// it. Convergence is declared when the mean subgradient norm is `≤ tol`.
/// Otherwise the best iterate is returned with `converged = false`.
pub fn geometric_median(
    points: &[Vec<f64>],
    tol: f64,
    max_iters: usize,
) -> Result<GeometricMedian> {
    let d = check_points(points)?;
    let n = points.len() as f64;
    let scale = points
        .iter()
        .flatten()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
        .max(1.0);
    let coincide = 1e-12 * scale;

    let mut y: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();
    let mut best = (sum_dist(points, &y), y.clone(), f64::INFINITY);
    for it in 0..=max_iters {
        let mut numer = vec![0.0; d];
        let mut denom = 0.0;
        let mut r = vec![0.0; d];
        let mut eta = 0.0;
        for p in points {
            let dp = dist(p, &y);
            if dp <= coincide {
                eta += 1.0;
                continue;
            }
            denom += 1.0 / dp;
            for j in 0..d {
                numer[j] += p[j] / dp;
                r[j] += (p[j] - y[j]) / dp;
            }
        }
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let grad = (r_norm - eta).max(0.0) / n;
        let obj = sum_dist(points, &y);
        if obj < best.0 || (obj == best.0 && grad < best.2) {
            best = (obj, y.clone(), grad);
        }
        if grad <= tol || denom == 0.0 {
            return Ok(GeometricMedian {
                point: y,
                objective: obj,
                grad_norm: grad,
                iterations: it,
                converged: true,
            });
        }
        if it == max_iters {
            break;
        }
        let t: Vec<f64> = numer.iter().map(|v| v / denom).collect();
        y = if eta == 0.0 {
            t
        } else {
            let gamma = (eta / r_norm).min(1.0);
            t.iter()
                .zip(&y)
                .map(|(a, b)| (1.0 - gamma) * a + gamma * b)
                .collect()
        };
    }
    let (objective, point, grad_norm) = best;
    Ok(GeometricMedian {
        point,
        objective,
        grad_norm,
        iterations: max_iters,
        converged: false,
    })
}

/// Per-coordinate sample median; even counts average the two middle values.
pub fn coordinatewise_median(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = check_points(points)?;
    Ok((0..d)
        .map(|j| {
            let mut col: Vec<f64> = points.iter().map(|p| p[j]).collect();
            col.sort_by(f64::total_cmp);
            let h = col.len() / 2;
            if col.len() % 2 == 1 {
                col[h]
            } else {
                0.5 * (col[h - 1] + col[h])
            }
        })
        .collect())
}

/// Leading constants of the chunk-size lower bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConstants {
    /// `k ≥ accuracy · d c / α′²`.
    pub accuracy: f64,
    /// `k ≥ privacy · d c / (α′ √ε)`.
    pub privacy: f64,
    /// `α′ = α / inflation`.
    pub inflation: f64,
    pub m_multiplier: f64,
}

impl Default for SampleConstants {
    fn default() -> Self {
        SampleConstants {
            accuracy: 4.0 / 0.1,
            privacy: 2.0 * 20f64.ln().sqrt(),
            inflation: 1.04,
            m_multiplier: REFERENCE_MULTIPLIER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleComplexity {
    /// `mult · ln(1/β)` before flooring.
    pub m: f64,
    pub k_accuracy: f64,
    pub k_privacy: f64,
    /// `m · max(k_accuracy, k_privacy)`.
    pub n0: f64,
    /// `⌊m⌋ · ⌈max k⌉`: an integer sample size whose chunks meet both bounds.
    pub n_samples: usize,
    pub constants: SampleConstants,
}

pub fn sample_complexity(
    alpha: f64,
    beta: f64,
    eps: f64,
    d: usize,
    c: f64,
    constants: SampleConstants,
) -> Result<SampleComplexity> {
    if !(alpha > 0.0) || !(eps > 0.0) || !(c > 0.0) || d == 0 {
        return Err(Error::range("alpha, eps, c and d must be positive"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::range(format!("beta must lie in (0, 1), got {beta}")));
    }
    let a = alpha / constants.inflation;
    let dc = d as f64 * c;
    let m = constants.m_multiplier * (1.0 / beta).ln();
    let k_accuracy = constants.accuracy * dc / (a * a);
    let k_privacy = constants.privacy * dc / (a * eps.sqrt());
    let k = k_accuracy.max(k_privacy);
    Ok(SampleComplexity {
        m,
        k_accuracy,
        k_privacy,
        n0: m * k,
        n_samples: (m.floor().max(1.0) as usize) * (k.ceil() as usize),
        constants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn chunking_arithmetic() {
        let cfg = MeanEstConfig {
            beta: 0.05,
            ..Default::default()
        };
        assert_eq!(cfg.chunks().unwrap(), 599);
        assert_eq!(100_000 / 599, 166);
        assert_abs_diff_eq!(cfg.sigma2(100_000).unwrap(), 1.794005e-5, epsilon = 1e-11);
        let small = MeanEstConfig {
            beta: 0.9,
            m_multiplier: 1.0,
            ..Default::default()
        };
        assert!(small.chunks().is_err());
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let cfg = MeanEstConfig {
            beta: 0.05,
            ..Default::default()
        };
        let err = private_mean(&vec![vec![0.0]; 10], &cfg).unwrap_err();
        assert!(err.to_string().contains("m_multiplier"));
    }

    #[test]
    fn point_mass_without_noise_is_exact() {
        let cfg = MeanEstConfig {
            eps: f64::INFINITY,
            beta: 0.2,
            m_multiplier: 20.0,
            d: 2,
            ..Default::default()
        };
        let data = vec![vec![1.5, -2.0]; 400];
        for median in [MedianKind::Geometric, MedianKind::Coordinatewise] {
            let (est, rep) = private_mean(
                &data,
                &MeanEstConfig {
                    median,
                    ..cfg.clone()
                },
            )
            .unwrap();
            assert_eq!(est, vec![1.5, -2.0]);
            assert_eq!(rep.sigma2, 0.0);
            assert_eq!(rep.m, 32);
            assert_eq!(rep.k, 12);
            assert_eq!(rep.discarded, 16);
        }
    }

    #[test]
    fn geometric_median_examples() {
        let g = geometric_median(&[vec![3.0, 4.0]], 1e-12, 10).unwrap();
        assert_eq!(g.point, vec![3.0, 4.0]);
        let g = geometric_median(&[vec![-1.0], vec![0.0], vec![1.0]], 1e-12, 100).unwrap();
        assert_abs_diff_eq!(g.point[0], 0.0, epsilon = 1e-12);
        let h = 3f64.sqrt() / 2.0;
        let tri = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]];
        let g = geometric_median(&tri, 1e-10, 1000).unwrap();
        assert!(g.converged);
        assert_abs_diff_eq!(g.point[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(g.point[1], h / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn geometric_median_at_a_data_point() {
        // Heavy point at the origin is the median: three copies outweigh two unit pulls.
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ];
        let g = geometric_median(&pts, 1e-12, 100).unwrap();
        assert!(g.converged);
        assert!(g.point.iter().all(|v| v.abs() < 1e-9), "{:?}", g.point);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let pts: Vec<Vec<f64>> = (0..7)
            .map(|i| vec![(i * i) as f64, (i % 3) as f64])
            .collect();
        let g = geometric_median(&pts, 1e-300, 2).unwrap();
        assert!(!g.converged);
        assert_eq!(g.iterations, 2);
    }

    #[test]
    fn coordinatewise_examples() {
        assert_eq!(
            coordinatewise_median(&[vec![-1.0], vec![0.0], vec![1.0]]).unwrap(),
            vec![0.0]
        );
        assert_eq!(
            coordinatewise_median(&[vec![0.0], vec![1.0]]).unwrap(),
            vec![0.5]
        );
        assert!(coordinatewise_median(&[]).is_err());
    }

    #[test]
    fn sample_complexity_scaling() {
        let base = sample_complexity(0.5, 0.1, 1.0, 2, 1.0, SampleConstants::default()).unwrap();
        let half = sample_complexity(0.25, 0.1, 1.0, 2, 1.0, SampleConstants::default()).unwrap();
        assert_abs_diff_eq!(half.k_accuracy / base.k_accuracy, 4.0, epsilon = 1e-12);
        let b2 = sample_complexity(0.5, 0.01, 1.0, 2, 1.0, SampleConstants::default()).unwrap();
        assert_abs_diff_eq!(b2.m / base.m, 2.0, epsilon = 1e-12);
        let d2 = sample_complexity(0.5, 0.1, 1.0, 4, 1.0, SampleConstants::default()).unwrap();
        assert_abs_diff_eq!(d2.n0 / base.n0, 2.0, epsilon = 1e-12);
        assert!(base.n_samples as f64 >= base.m.floor() * base.k_accuracy);
    }

    #[test]
    fn chunk_mechanism_matches_chunk_means() {
        let cfg = MeanEstConfig {
            eps: f64::INFINITY,
            beta: 0.2,
            m_multiplier: 2.0,
            d: 2,
            ..Default::default()
        };
        let data: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let (f, noise) = chunk_mechanism(7, &cfg).unwrap();
        let x = crate::framework::Database::from_rows(&data).unwrap();
        let direct = f.evaluate(&x).unwrap();
        let (means, _, _) = noisy_chunk_means(&data, &cfg).unwrap();
        assert_eq!(noise.dim, 6);
        let flat: Vec<f64> = means.into_iter().flatten().collect();
        for (a, b) in direct.iter().zip(&flat) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn coordinatewise_is_permutation_invariant(mut v in proptest::collection::vec(-10.0f64..10.0, 1..20), seed in 0u64..100) {
            let pts: Vec<Vec<f64>> = v.iter().map(|&x| vec![x, -x]).collect();
            let a = coordinatewise_median(&pts).unwrap();
            let mut rng = Stream::new(seed);
            for i in (1..v.len()).rev() {
                let j = rng.index(i + 1);
                v.swap(i, j);
            }
            let shuffled: Vec<Vec<f64>> = v.iter().map(|&x| vec![x, -x]).collect();
            prop_assert_eq!(a, coordinatewise_median(&shuffled).unwrap());
        }

        #[test]
        fn geometric_beats_coordinatewise(pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 1..15)) {
            let g = geometric_median(&pts, 1e-10, 5000).unwrap();
            let c = coordinatewise_median(&pts).unwrap();
            prop_assert!(g.objective <= sum_dist(&pts, &c) + 1e-7 * (1.0 + g.objective));
        }
    }
}
