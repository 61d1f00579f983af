//! Federated-learning privacy lab: FedSGD simulation, gradient protection
//! mechanisms, gradient-inversion attacks, complexity estimators, Maximum
//! Bayesian Privacy estimation and closed-form bound calculators.

pub mod attack;
pub mod bounds;
pub mod complexity;
pub mod error;
pub mod federated;
pub mod mbp;
pub mod models;
pub mod numerics;
pub mod protection;

pub use error::{Error, Result};
