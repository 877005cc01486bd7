//! Identification- and boundary-robust minimum-distance inference for factor
//! models with a weakly identified variance parameter.
//!
//! The pieces compose bottom-up: [`model`] defines the link and bound maps,
//! [`moments`] turns data into sample covariances, [`estimation`] fits the
//! bounded minimum-distance problem, [`limitlaw`] simulates the limit
//! distributions of the quasi-likelihood-ratio statistic and [`rqlr`] builds
//! the robust critical value, test and confidence interval.

pub mod error;
pub mod estimation;
pub mod limitlaw;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod qp;
pub mod rng;
pub mod rqlr;

pub use error::{Error, Result};
pub use model::{
    Model, ModelSpec, OneFactorStructural, StructuralParams, ThetaPoint, TwoFactorStructural,
};
pub use moments::{compute_moments, simulate_dgp, DgpSpec, SampleMoments};
