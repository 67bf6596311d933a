//! Sliced mutual information.
//!
//! `SI(X; Y) = E_{θ,φ} I(θᵀX; φᵀY)` with `θ`, `φ` uniform on their unit
//! spheres. The estimator draws projection triples `(θ, φ, ψ)` for
//! `(X_i, Y, Z_i)`, hands each projected sample to a pluggable scalar MI
//! estimator and averages the results. The default inner estimator is the
//! Donsker–Varadhan ReLU network in [`dv`].
//!
//! The DP statistic is the maximum over records `i` of `SI(X_i; (Y, Z_i))`.
//! With independent records this equals the conditional sliced MI of `X_i`
//! and the output given the other records.

mod dv;
mod samples;
mod slicing;

pub use dv::{dv_neural_mi, DvEstimate, MiEstimator, NeuralDVConfig, PlugInEstimator};
pub use samples::{RowSamples, SliceSampleSet};
pub use slicing::{
    gaussian_joint_mi, projection_triple, row_seed, smi_dp_statistic, smi_gaussian_oracle, smi_mc,
    GaussianSmiOracle, ProjectionTriple, SMIEstimate, SmiStatistic,
};
