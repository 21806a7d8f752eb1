//! Moments, densities, sampling and moment-matching fits for the projected
//! normal distribution `y = x / ||x||`, `x ~ N(mu, Sigma)`, and its
//! generalization `y = x / sqrt(x'Bx + c)`.

pub mod density;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod fit;
pub mod model;
pub mod moments;
pub mod quadratic_forms;
pub mod sampling;
pub mod spd;

pub use error::{Error, Result};
pub use model::{GaussianParams, Moments, ProjectionVariant, VariantKind};
