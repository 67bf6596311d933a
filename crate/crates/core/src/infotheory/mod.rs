//! Information measures and the exact oracles used to verify privacy claims.

mod kernel;
mod measures;
mod montecarlo;
mod oracle;
mod stats;

pub use kernel::{BlackBoxMechanism, DiscreteKernel, Discretizer, MechanismKernel};
pub(crate) use measures::conditional_mi_raw;
pub use measures::{
    binary_entropy, discrete_conditional_mi, discrete_entropy, gaussian_conditional_mi,
    kl_divergence, laplace_cdf, normal_cdf, tv_distance, validate_pmf, JointPMF, Nats,
};
pub use montecarlo::{mc_additive_mi, AdditiveMiEstimate};
pub use oracle::{
    exhaustive_mechanism_mi, exhaustive_mechanism_mi_with, induced_joint,
    pp_event_enumeration_check, pp_ratio_check, value_labels, OracleValue, PPCheck, PPViolation,
    Witness,
};
pub use stats::{conditional_moments, mc_conditional_variance, ConditionalMoments, McConfig};
