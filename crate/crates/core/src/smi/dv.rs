//! Donsker–Varadhan estimation over a box-constrained one-hidden-layer ReLU class.
//!
//! The critic is `g(z) = Σ_i β_i φ(w_iᵀz + b_i) + w₀ᵀz + b₀` with `φ` the ReLU,
//! constrained to `‖w_i‖₁ ≤ 1`, `|b_i| ≤ 1`, `|β_i| ≤ a/(2ℓ)`, `‖w₀‖₁ ≤ a`,
//! `|b₀| ≤ a` and `a = max(ln ln ℓ, 1)`. The objective is
//! `(1/m) Σ g(u_i, v_i) − ln((1/m) Σ exp g(u_i, v_{σ(i)}))` with the cyclic
//! derangement `σ(i) = i + 1 mod m`.
//!
//! Inputs are standardised per coordinate and multiplied by `input_scale`
//! before they reach the critic. The class is unchanged; the scale only sets
//! the resolution at which the bounded biases can place ReLU kinks. Training
//! is full-batch projected ascent with Adam moments, a cosine-decayed step and
//! a projection back onto the constraint set after every step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralDVConfig {
    /// Hidden width `ℓ`.
    pub neurons: usize,
    pub steps: usize,
    pub step_size: f64,
    /// Multiplier applied to standardised inputs.
    pub input_scale: f64,
    pub init_seed: u64,
}

impl Default for NeuralDVConfig {
    fn default() -> Self {
        NeuralDVConfig {
            neurons: 64,
            steps: 500,
            step_size: 0.05,
            input_scale: 20.0,
            init_seed: 0,
        }
    }
}

impl NeuralDVConfig {
    /// The class radius `a = max(ln ln ℓ, 1)`.
    pub fn a(&self) -> f64 {
        let l = self.neurons as f64;
        let lnln = l.ln().ln();
        if lnln.is_nan() {
            1.0
        } else {
            lnln.max(1.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 {
            return Err(Error::invalid("neurons must be at least 1"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.input_scale > 0.0) || !self.input_scale.is_finite() {
            return Err(Error::invalid(format!(
                "input scale must be positive, got {}",
                self.input_scale
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DvEstimate {
    pub value: f64,
    /// Set when `u` or every `v` column is constant; the value is then 0.
    pub degenerate: bool,
}

/// Euclidean projection onto the ℓ¹ ball of the given radius.
pub(crate) fn project_l1(v: &mut [f64], radius: f64) {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= radius {
        return;
    }
    let mut mag: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mag.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mag.iter().enumerate() {
        cum += u;
        let t = (cum - radius) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

/// Standardise to zero mean and unit variance; `None` if constant.
fn standardise(x: &[f64], scale: f64) -> Option<Vec<f64>> {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let sd = var.sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return None;
    }
    Some(x.iter().map(|v| scale * (v - mean) / sd).collect())
}

struct Layout {
    dim: usize,
    ell: usize,
}

impl Layout {
    fn w(&self) -> std::ops::Range<usize> {
        0..self.ell * self.dim
    }
    fn b(&self) -> std::ops::Range<usize> {
        let s = self.ell * self.dim;
        s..s + self.ell
    }
    fn beta(&self) -> std::ops::Range<usize> {
        let s = self.ell * (self.dim + 1);
        s..s + self.ell
    }
    fn w0(&self) -> std::ops::Range<usize> {
        let s = self.ell * (self.dim + 2);
        s..s + self.dim
    }
    fn b0(&self) -> usize {
        self.ell * (self.dim + 2) + self.dim
    }
    fn len(&self) -> usize {
        self.b0() + 1
    }
}

/// Sum of a slice with four independent accumulators so the loop vectorises.
fn lane_sum(x: impl Iterator<Item = f64>) -> f64 {
    let mut acc = [0.0; 4];
    for (i, v) in x.enumerate() {
        acc[i & 3] += v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Critic values at every sample. Inputs are column-major (`z[c][s]`); hidden
/// pre-activations are written neuron-major into `h`.
fn forward(theta: &[f64], lay: &Layout, z: &[Vec<f64>], h: &mut [f64], out: &mut [f64]) {
    let (dim, ell) = (lay.dim, lay.ell);
    let m = out.len();
    let w = &theta[lay.w()];
    let b = &theta[lay.b()];
    let beta = &theta[lay.beta()];
    let w0 = &theta[lay.w0()];
    out.iter_mut().for_each(|g| *g = theta[lay.b0()]);
    for c in 0..dim {
        for (g, &zc) in out.iter_mut().zip(&z[c]) {
            *g += w0[c] * zc;
        }
    }
    for j in 0..ell {
        let hj = &mut h[j * m..(j + 1) * m];
        hj.iter_mut().for_each(|x| *x = b[j]);
        for c in 0..dim {
            let wjc = w[j * dim + c];
            for (x, &zc) in hj.iter_mut().zip(&z[c]) {
                *x += wjc * zc;
            }
        }
        let bj = beta[j];
        for (g, &x) in out.iter_mut().zip(hj.iter()) {
            *g += bj * x.max(0.0);
        }
    }
}

/// Adds `Σ_s weight_s ∇g(z_s)` into `grad`; `coef` is scratch of length `m`.
fn accumulate(
    theta: &[f64],
    lay: &Layout,
    z: &[Vec<f64>],
    h: &[f64],
    weights: &[f64],
    coef: &mut [f64],
    grad: &mut [f64],
) {
    let (dim, ell) = (lay.dim, lay.ell);
    let m = weights.len();
    let beta = &theta[lay.beta()];
    let (wr, br, betar, w0r, b0i) = (lay.w(), lay.b(), lay.beta(), lay.w0(), lay.b0());
    for c in 0..dim {
        grad[w0r.start + c] += lane_sum(weights.iter().zip(&z[c]).map(|(a, b)| a * b));
    }
    grad[b0i] += lane_sum(weights.iter().copied());
    for j in 0..ell {
        let hj = &h[j * m..(j + 1) * m];
        for ((k, &x), &wt) in coef.iter_mut().zip(hj).zip(weights) {
            *k = if x > 0.0 { wt } else { 0.0 };
        }
        grad[betar.start + j] += lane_sum(coef.iter().zip(hj).map(|(k, x)| k * x));
        grad[br.start + j] += beta[j] * lane_sum(coef.iter().copied());
        for c in 0..dim {
            grad[wr.start + j * dim + c] +=
                beta[j] * lane_sum(coef.iter().zip(&z[c]).map(|(k, x)| k * x));
        }
    }
}

fn objective(g_pos: &[f64], g_neg: &[f64], softmax: &mut [f64]) -> f64 {
    let m = g_pos.len() as f64;
    let mean = g_pos.iter().sum::<f64>() / m;
    let mx = g_neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (p, &g) in softmax.iter_mut().zip(g_neg) {
        *p = (g - mx).exp();
        total += *p;
    }
    for p in softmax.iter_mut() {
        *p /= total;
    }
    let lme = mx + total.ln() - m.ln();
    mean - lme
}

fn project(theta: &mut [f64], lay: &Layout, a: f64) {
    let dim = lay.dim;
    for j in 0..lay.ell {
        let s = lay.w().start + j * dim;
        project_l1(&mut theta[s..s + dim], 1.0);
    }
    for x in &mut theta[lay.b()] {
        *x = x.clamp(-1.0, 1.0);
    }
    let cap = a / (2.0 * lay.ell as f64);
    for x in &mut theta[lay.beta()] {
        *x = x.clamp(-cap, cap);
    }
    let w0 = lay.w0();
    project_l1(&mut theta[w0], a);
    let b0 = lay.b0();
    theta[b0] = theta[b0].clamp(-a, a);
}

/// Trains the critic on `(u_i, v_i)` against `(u_i, v_{σ(i)})` and returns the
/// empirical DV objective at the trained network.
///
/// `v` is given column-wise: each slice holds one coordinate for all samples.
pub fn dv_neural_mi(u: &[f64], v: &[&[f64]], cfg: &NeuralDVConfig) -> Result<DvEstimate> {
    cfg.validate()?;
    let m = u.len();
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {m}")));
    }
    if v.is_empty() {
        return Err(Error::dim("v needs at least one coordinate"));
    }
    if let Some(col) = v.iter().find(|c| c.len() != m) {
        return Err(Error::dim(format!(
            "v column has {} samples, u has {m}",
            col.len()
        )));
    }
    if u.iter()
        .chain(v.iter().flat_map(|c| c.iter()))
        .any(|x| !x.is_finite())
    {
        return Err(Error::invalid("samples must be finite"));
    }
    let degenerate = DvEstimate {
        value: 0.0,
        degenerate: true,
    };
    let Some(us) = standardise(u, cfg.input_scale) else {
        return Ok(degenerate);
    };
    let vs: Vec<Vec<f64>> = v
        .iter()
        .filter_map(|c| standardise(c, cfg.input_scale))
        .collect();
    if vs.is_empty() {
        return Ok(degenerate);
    }

    let dim = 1 + vs.len();
    let ell = cfg.neurons;
    let lay = Layout { dim, ell };
    let a = cfg.a();

    let mut pos: Vec<Vec<f64>> = vec![us.clone()];
    let mut neg: Vec<Vec<f64>> = vec![us];
    for col in vs {
        neg.push((0..m).map(|i| col[(i + 1) % m]).collect());
        pos.push(col);
    }

    let mut rng = Stream::new(cfg.init_seed);
    let mut theta = vec![0.0; lay.len()];
    for x in &mut theta[lay.w()] {
        *x = rng.uniform() - 0.5;
    }
    for x in &mut theta[lay.b()] {
        *x = 2.0 * rng.uniform() - 1.0;
    }
    project(&mut theta, &lay, a);

    let mut h_pos = vec![0.0; m * ell];
    let mut h_neg = vec![0.0; m * ell];
    let mut g_pos = vec![0.0; m];
    let mut g_neg = vec![0.0; m];
    let mut soft = vec![0.0; m];
    let pos_w = vec![1.0 / m as f64; m];
    let mut coef = vec![0.0; m];
    let mut grad = vec![0.0; lay.len()];
    let mut m1 = vec![0.0; lay.len()];
    let mut m2 = vec![0.0; lay.len()];
    let (b1, b2, adam_eps) = (0.9_f64, 0.999_f64, 1e-8);

    for t in 0..cfg.steps {
        forward(&theta, &lay, &pos, &mut h_pos, &mut g_pos);
        forward(&theta, &lay, &neg, &mut h_neg, &mut g_neg);
        objective(&g_pos, &g_neg, &mut soft);
        for s in soft.iter_mut() {
            *s = -*s;
        }
        grad.iter_mut().for_each(|x| *x = 0.0);
        accumulate(&theta, &lay, &pos, &h_pos, &pos_w, &mut coef, &mut grad);
        accumulate(&theta, &lay, &neg, &h_neg, &soft, &mut coef, &mut grad);

        let lr = cfg.step_size
            * 0.5
            * (1.0 + (std::f64::consts::PI * t as f64 / cfg.steps as f64).cos());
        let step = (t + 1) as i32;
        let c1 = 1.0 - b1.powi(step);
        let c2 = 1.0 - b2.powi(step);
        for q in 0..theta.len() {
            m1[q] = b1 * m1[q] + (1.0 - b1) * grad[q];
            m2[q] = b2 * m2[q] + (1.0 - b2) * grad[q] * grad[q];
            theta[q] += lr * (m1[q] / c1) / ((m2[q] / c2).sqrt() + adam_eps);
        }
        project(&mut theta, &lay, a);
    }

    forward(&theta, &lay, &pos, &mut h_pos, &mut g_pos);
    forward(&theta, &lay, &neg, &mut h_neg, &mut g_neg);
    let value = objective(&g_pos, &g_neg, &mut soft);
    Ok(DvEstimate {
        value,
        degenerate: false,
    })
}

/// A scalar-versus-vector MI estimator usable inside the slicing loop.
pub trait MiEstimator: Send + Sync {
    /// Estimate `I(U; V)` with `v` given column-wise.
    fn estimate(&self, u: &[f64], v: &[&[f64]], seed: u64) -> Result<f64>;
    fn label(&self) -> String;
}

impl MiEstimator for NeuralDVConfig {
    fn estimate(&self, u: &[f64], v: &[&[f64]], seed: u64) -> Result<f64> {
        let cfg = NeuralDVConfig {
            init_seed: Stream::substream(self.init_seed, &[seed]).next_u64(),
            ..self.clone()
        };
        Ok(dv_neural_mi(u, v, &cfg)?.value)
    }

    fn label(&self) -> String {
        format!(
            "neural-dv(l={}, steps={}, step={}, scale={})",
            self.neurons, self.steps, self.step_size, self.input_scale
        )
    }
}

/// Plug-in MI on equal-frequency quantised coordinates. Cheap and biased
/// upward; meant for smoke tests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlugInEstimator {
    pub bins: usize,
}

impl Default for PlugInEstimator {
    fn default() -> Self {
        PlugInEstimator { bins: 8 }
    }
}

/// Rank-based bin index per sample; tied values share the lowest rank.
fn quantile_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let m = x.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0; m];
    let mut r = 0;
    while r < m {
        let mut e = r;
        while e + 1 < m && x[order[e + 1]] == x[order[r]] {
            e += 1;
        }
        let bin = r * bins / m;
        for &i in &order[r..=e] {
            out[i] = bin;
        }
        r = e + 1;
    }
    out
}

fn plug_in_entropy(counts: &BTreeMap<usize, usize>, m: usize) -> f64 {
    let mf = m as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / mf;
            -p * p.ln()
        })
        .sum()
}

impl MiEstimator for PlugInEstimator {
    fn estimate(&self, u: &[f64], v: &[&[f64]], _seed: u64) -> Result<f64> {
        let m = u.len();
        if m == 0 || self.bins == 0 {
            return Err(Error::invalid(
                "plug-in estimator needs samples and at least one bin",
            ));
        }
        if v.iter().any(|c| c.len() != m) {
            return Err(Error::dim("u and v sample counts differ"));
        }
        let bu = quantile_bins(u, self.bins);
        let bv: Vec<Vec<usize>> = v.iter().map(|c| quantile_bins(c, self.bins)).collect();
        let mut cu = BTreeMap::new();
        let mut cv = BTreeMap::new();
        let mut cj = BTreeMap::new();
        for i in 0..m {
            let vcell = bv.iter().fold(0usize, |acc, col| acc * self.bins + col[i]);
            *cu.entry(bu[i]).or_insert(0) += 1;
            *cv.entry(vcell).or_insert(0) += 1;
            *cj.entry(vcell * self.bins + bu[i]).or_insert(0) += 1;
        }
        let mi = plug_in_entropy(&cu, m) + plug_in_entropy(&cv, m) - plug_in_entropy(&cj, m);
        Ok(mi.max(0.0))
    }

    fn label(&self) -> String {
        format!("plug-in(bins={})", self.bins)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian_pair(m: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = Stream::new(seed);
        let x: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let y = x
            .iter()
            .map(|&a| rho * a + (1.0 - rho * rho).sqrt() * rng.normal())
            .collect();
        (x, y)
    }

    #[test]
    fn class_radius() {
        assert_eq!(
            NeuralDVConfig {
                neurons: 1,
                ..Default::default()
            }
            .a(),
            1.0
        );
        assert_eq!(
            NeuralDVConfig {
                neurons: 8,
                ..Default::default()
            }
            .a(),
            1.0
        );
        let a64 = NeuralDVConfig::default().a();
        assert!((a64 - (64f64).ln().ln()).abs() < 1e-15 && a64 > 1.0);
    }

    #[test]
    fn l1_projection_examples() {
        let mut v = vec![3.0, -1.0];
        project_l1(&mut v, 1.0);
        assert_eq!(v, vec![1.0, 0.0]);
        let mut w = vec![0.2, -0.3];
        project_l1(&mut w, 1.0);
        assert_eq!(w, vec![0.2, -0.3]);
        let mut e = vec![1.0, 1.0, 1.0];
        project_l1(&mut e, 1.5);
        for x in e {
            assert!((x - 0.5).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn l1_projection_lands_in_ball(v in proptest::collection::vec(-5.0f64..5.0, 1..6), r in 0.1f64..3.0) {
            let mut p = v.clone();
            project_l1(&mut p, r);
            prop_assert!(p.iter().map(|x| x.abs()).sum::<f64>() <= r + 1e-12);
            for (a, b) in v.iter().zip(&p) {
                prop_assert!(a * b >= 0.0);
                prop_assert!(b.abs() <= a.abs() + 1e-15);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = gaussian_pair(50, 0.5, 8);
        let z = vec![
            x.iter().map(|v| 2.0 * v).collect::<Vec<_>>(),
            y.iter().map(|v| 2.0 * v).collect(),
        ];
        let zn = vec![z[0].clone(), (0..50).map(|i| z[1][(i + 1) % 50]).collect()];
        let lay = Layout { dim: 2, ell: 5 };
        let mut rng = Stream::new(3);
        let theta: Vec<f64> = (0..lay.len()).map(|_| rng.uniform() - 0.5).collect();
        let eval = |t: &[f64]| {
            let (mut h, mut gp, mut gn, mut sm) =
                (vec![0.0; 250], vec![0.0; 50], vec![0.0; 50], vec![0.0; 50]);
            forward(t, &lay, &z, &mut h, &mut gp);
            forward(t, &lay, &zn, &mut h, &mut gn);
            objective(&gp, &gn, &mut sm)
        };
        let (mut hp, mut hn, mut gp, mut gn, mut sm) = (
            vec![0.0; 250],
            vec![0.0; 250],
            vec![0.0; 50],
            vec![0.0; 50],
            vec![0.0; 50],
        );
        forward(&theta, &lay, &z, &mut hp, &mut gp);
        forward(&theta, &lay, &zn, &mut hn, &mut gn);
        objective(&gp, &gn, &mut sm);
        sm.iter_mut().for_each(|p| *p = -*p);
        let mut grad = vec![0.0; lay.len()];
        let mut coef = vec![0.0; 50];
        accumulate(
            &theta,
            &lay,
            &z,
            &hp,
            &vec![1.0 / 50.0; 50],
            &mut coef,
            &mut grad,
        );
        accumulate(&theta, &lay, &zn, &hn, &sm, &mut coef, &mut grad);
        for q in 0..lay.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[q] += 1e-6;
            tm[q] -= 1e-6;
            let fd = (eval(&tp) - eval(&tm)) / 2e-6;
            assert!(
                (fd - grad[q]).abs() < 1e-6,
                "param {q}: fd {fd} vs {}",
                grad[q]
            );
        }
    }

    #[test]
    fn constant_input_is_flagged() {
        let u = vec![1.0; 10];
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let est = dv_neural_mi(&u, &[&v], &NeuralDVConfig::default()).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(dv_neural_mi(&[1.0], &[&[2.0]], &NeuralDVConfig::default()).is_err());
    }

    #[test]
    fn independent_samples_give_small_estimate() {
        let (x, _) = gaussian_pair(1000, 0.0, 1);
        let (y, _) = gaussian_pair(1000, 0.0, 2);
        let cfg = NeuralDVConfig {
            steps: 200,
            ..Default::default()
        };
        let est = dv_neural_mi(&x, &[&y], &cfg).unwrap();
        assert!(est.value.abs() < 0.03, "{}", est.value);
    }

    #[test]
    fn correlated_samples_give_clear_signal() {
        let (x, y) = gaussian_pair(1000, 0.8, 3);
        let cfg = NeuralDVConfig {
            steps: 200,
            ..Default::default()
        };
        let est = dv_neural_mi(&x, &[&y], &cfg).unwrap();
        assert!(est.value > 0.3 && est.value < 0.65, "{}", est.value);
    }

    #[test]
    fn plug_in_is_invariant_to_sign_flips() {
        let (x, y) = gaussian_pair(800, 0.6, 4);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let est = PlugInEstimator::default();
        let a = est.estimate(&x, &[&y], 0).unwrap();
        let b = est.estimate(&neg, &[&y], 0).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a > 0.1);
    }

    #[test]
    fn quantile_bins_are_balanced() {
        let x: Vec<f64> = (0..16).rev().map(|i| i as f64).collect();
        let b = quantile_bins(&x, 4);
        assert_eq!(b[0], 3);
        assert_eq!(b[15], 0);
        for k in 0..4 {
            assert_eq!(b.iter().filter(|&&v| v == k).count(), 4);
        }
    }
}
