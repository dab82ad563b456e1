//! Gaussian process models for right-censored data, with an optional
//! computer-model fidelity: prediction, likelihood and fitting.

mod fit;
mod io;
mod likelihood;
mod model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, LengthscaleParams};

pub use fit::{fit_mle, FitConfig};
pub use io::{read_observations, write_observations};
pub use likelihood::{censored_loglik, censored_loglik_with, ln_censored_orthant};
pub use model::limit_serde;
pub use model::{
    censoring_probability, discrepancy_estimate, predict, predict_bifidelity, predict_censored, predict_standard, FittedModel,
    ModelSnapshot, Prediction,
};

/// Relative size of the diagonal nugget added to every covariance matrix.
pub const NUGGET: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Computer,
    Physical,
}

impl Fidelity {
    pub fn is_physical(self) -> bool {
        self == Fidelity::Physical
    }
}

/// One experimental record. Censored records hold the censoring limit as
/// their value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub value: f64,
    pub censored: bool,
    pub fidelity: Fidelity,
}

impl Observation {
    pub fn physical(x: Vec<f64>, value: f64) -> Self {
        Self {
            x,
            value,
            censored: false,
            fidelity: Fidelity::Physical,
        }
    }

    pub fn censored(x: Vec<f64>, limit: f64) -> Self {
        Self {
            x,
            value: limit,
            censored: true,
            fidelity: Fidelity::Physical,
        }
    }

    pub fn computer(x: Vec<f64>, value: f64) -> Self {
        Self {
            x,
            value,
            censored: false,
            fidelity: Fidelity::Computer,
        }
    }

    /// Checks the record against a censoring limit.
    pub fn validate(&self, c: f64) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) || !self.value.is_finite() {
            return Err(Error::Argument("observation has non-finite entries".into()));
        }
        if self.censored {
            if self.fidelity != Fidelity::Physical {
                return Err(Error::Argument("computer runs cannot be censored".into()));
            }
            if self.value != c {
                return Err(Error::Argument(format!(
                    "censored value {} differs from the limit {c}",
                    self.value
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelMode {
    Standard,
    CensoredSingle,
    CensoredBiFidelity,
}

impl ModelMode {
    pub fn is_bifidelity(self) -> bool {
        self == ModelMode::CensoredBiFidelity
    }
}

/// Prior parameters. Single-fidelity models have no discrepancy; a
/// bi-fidelity model with zero discrepancy variance stores `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    mu: f64,
    signal: KernelSpec,
    discrepancy: Option<KernelSpec>,
    sigma2_eps: f64,
    bifidelity: bool,
}

impl Hyperparams {
    pub fn single(mu: f64, sigma2: f64, lengthscales: LengthscaleParams, sigma2_eps: f64) -> Result<Self> {
        Self::checked(mu, KernelSpec::gaussian(lengthscales, sigma2)?, None, sigma2_eps, false)
    }

    pub fn bi(
        mu: f64,
        sigma2_f: f64,
        theta_f: LengthscaleParams,
        sigma2_delta: f64,
        theta_delta: LengthscaleParams,
        sigma2_eps: f64,
    ) -> Result<Self> {
        if !(sigma2_delta >= 0.0 && sigma2_delta.is_finite()) {
            return Err(Error::Parameter(format!("discrepancy variance {sigma2_delta} is negative")));
        }
        if theta_delta.dim() != theta_f.dim() {
            return Err(Error::Parameter("lengthscale dimensions differ".into()));
        }
        let disc = if sigma2_delta > 0.0 {
            Some(KernelSpec::gaussian(theta_delta, sigma2_delta)?)
        } else {
            None
        };
        Self::checked(mu, KernelSpec::gaussian(theta_f, sigma2_f)?, disc, sigma2_eps, true)
    }

    fn checked(
        mu: f64,
        signal: KernelSpec,
        discrepancy: Option<KernelSpec>,
        sigma2_eps: f64,
        bifidelity: bool,
    ) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Parameter(format!("mean {mu} is not finite")));
        }
        if !(sigma2_eps >= 0.0 && sigma2_eps.is_finite()) {
            return Err(Error::Parameter(format!("noise variance {sigma2_eps} is negative")));
        }
        Ok(Self {
            mu,
            signal,
            discrepancy,
            sigma2_eps,
            bifidelity,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn signal(&self) -> &KernelSpec {
        &self.signal
    }

    pub fn discrepancy(&self) -> Option<&KernelSpec> {
        self.discrepancy.as_ref()
    }

    pub fn sigma2_delta(&self) -> f64 {
        self.discrepancy.as_ref().map_or(0.0, |d| d.variance)
    }

    pub fn sigma2_eps(&self) -> f64 {
        self.sigma2_eps
    }

    pub fn is_bifidelity(&self) -> bool {
        self.bifidelity
    }

    pub fn dim(&self) -> usize {
        self.signal.lengthscales.dim()
    }

    pub fn nugget(&self) -> f64 {
        NUGGET * self.signal.variance
    }

    /// Prior variance of the physical mean response.
    pub fn prior_variance(&self) -> f64 {
        self.signal.variance + self.sigma2_delta()
    }

    /// Prior covariance of two data rows; `same` marks a diagonal entry.
    #[inline]
    pub(crate) fn cov_rows(&self, xi: &[f64], pi: bool, xj: &[f64], pj: bool, same: bool) -> f64 {
        let mut v = self.signal.cov(xi, xj);
        if pi && pj {
            if let Some(d) = &self.discrepancy {
                v += d.cov(xi, xj);
            }
        }
        if same {
            v += self.nugget();
            if pi {
                v += self.sigma2_eps;
            }
        }
        v
    }

    /// Prior covariance of the physical mean at `x` with a data row.
    #[inline]
    pub(crate) fn cov_latent(&self, x: &[f64], xj: &[f64], pj: bool) -> f64 {
        let mut v = self.signal.cov(x, xj);
        if pj {
            if let Some(d) = &self.discrepancy {
                v += d.cov(x, xj);
            }
        }
        v
    }
}
