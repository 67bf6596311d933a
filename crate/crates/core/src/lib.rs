//! Mutual-information Pufferfish privacy toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`framework`]: databases, data functions, secret graphs and distribution
//!   families, bundled as a [`framework::PPFramework`].
//! * [`infotheory`]: exact discrete information measures, Gaussian closed
//!   forms, conditional-moment estimation and the brute-force conditional MI
//!   oracle.
//! * [`relations`]: conversions between PP, approximate PP and MI-PP, plus
//!   composition overhead, CMI and utility bounds.
//! * [`mechanisms`]: Laplace and Gaussian noise calibration.
//! * [`composition`]: budget accounting and kernel combinators.
//! * [`smi`]: sliced mutual information with a Donsker–Varadhan estimator.
//! * [`audit`]: black-box DP auditing through the SMI statistic.
//! * [`meanest`]: private mean estimation through chunked noisy means.
//!
//! All information quantities are in nats.

pub mod audit;
pub mod composition;
pub mod error;
pub mod framework;
pub mod infotheory;
pub mod meanest;
pub mod mechanisms;
pub mod relations;
pub mod rng;
pub mod smi;

pub use error::{Error, Result};
pub use framework::{DataFunction, Database, DistributionFamily, PPFramework, SecretGraph};
pub use rng::Stream;
