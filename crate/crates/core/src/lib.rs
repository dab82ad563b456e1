//! Gaussian process modeling and sequential experimental design for
//! right-censored responses.
//!
//! The building blocks are layered: [`kernels`] and [`tmvn`] supply the
//! closed-form integrals and truncated-normal computations, [`gpmodel`]
//! fits and predicts, [`criteria`] scores candidate runs, and [`designer`]
//! drives whole campaigns.

pub mod criteria;
pub mod designer;
pub mod error;
pub mod gpmodel;
pub mod kernels;
pub mod normal;
pub mod optim;
pub mod quadrature;
pub mod tmvn;

pub use error::{Error, Result};
