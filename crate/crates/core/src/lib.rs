//! GMM estimation of affine term-structure models with exact moments from
//! polynomial diffusions and a quasi-Bayesian MCMC minimiser.

pub mod error;
pub mod gmm;
pub mod linalg;
pub mod model;
pub mod polyproc;
pub mod qbayes;
pub mod riccati;
pub mod simulate;
pub mod yieldmoments;

pub use error::{Error, Result};
