//! Design criteria for choosing the next run, and the accuracy metrics used
//! to judge the resulting surrogates.
//!
//! [`CriterionContext`] holds everything that depends only on the fitted
//! model, so scoring many candidates against one model is cheap. The free
//! functions build a throwaway context and are convenient for one-off calls.

mod context;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::normal::{mills_ratio, pdf, truncated_variance_factor};
use crate::quadrature::Cubature;
use crate::tmvn::QmcConfig;
use crate::{Error, Result};

pub use context::{hc_matrix, icmse_general, icmse_nocensor_training, imse_baseline, CriterionContext};

/// Coverage level used for the mean interval score: intervals are one
/// predictive standard deviation wide on each side.
pub const MIS_ALPHA: f64 = 0.32;

/// A criterion value at one candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionEval {
    /// Integrated expected variance, or its negated reduction when
    /// `constant_included` is false. Smaller is better either way.
    pub value: f64,
    /// Posterior probability that a run at the candidate is censored.
    pub lambda: f64,
    /// Integrated variance reduction from the candidate run.
    pub trace_term: f64,
    pub constant_included: bool,
}

/// The censoring-adjusted variance of the conditional mean of the latent
/// responses, embedded in the full `(n+1) x (n+1)` row layout.
#[derive(Clone, Debug, PartialEq)]
pub struct HcMatrix {
    pub matrix: DMatrix<f64>,
    pub lambda: f64,
    /// Mean of the new response given that it is censored.
    pub y_gt: f64,
    /// Mean of the new response given that it is observed.
    pub y_lt: f64,
}

/// Form of the between-branch term of `H_c`, the spread of the conditional
/// means of the latent rows between the censored and observed outcomes of
/// the new run. `FullOuter` and `SquaredDiff` coincide when no training row
/// is censored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HcCorner {
    /// `delta delta'` over the censored rows and the new run, where `delta`
    /// is the difference of the two branch means.
    #[default]
    FullOuter,
    /// `(y_gt - y_lt)^2` in the new-run corner only.
    SquaredDiff,
    /// `y_gt * y_lt` in the new-run corner only.
    Product,
}

/// How the integral over `[0,1]^p` is evaluated.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Integration {
    /// Closed-form integrated covariance products (Gaussian kernels).
    #[default]
    ClosedForm,
    Quadrature(Cubature),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImseVariant {
    /// Classical IMSE on a model where censored values were replaced by the limit.
    Impute,
    /// Censored model, ignoring the chance that the new run is censored.
    Cen,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionOptions {
    pub integration: Integration,
    /// Add the integrated current variance, which does not depend on the
    /// candidate. Leaving it out does not move the argmin.
    pub include_constant: bool,
    pub corner: HcCorner,
    /// Seed for the truncated-normal lattice rules.
    pub seed: u64,
    /// Lattice size for truncated moments; the model's own when `None`.
    pub qmc: Option<QmcConfig>,
}

impl Default for CriterionOptions {
    fn default() -> Self {
        Self {
            integration: Integration::ClosedForm,
            include_constant: false,
            corner: HcCorner::default(),
            seed: 0,
            qmc: None,
        }
    }
}

/// Censoring adjustment `h(z) = Phi(z) - z phi(z) + phi(z)^2 / (1 - Phi(z))`,
/// the fraction of variance reduction kept when the new run is censored
/// above `z` standard deviations from its predictive mean.
pub fn h_adjust(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z <= 5.0 {
        let phi = pdf(z);
        if z == f64::NEG_INFINITY {
            return 0.0;
        }
        crate::normal::cdf(z) - z * phi + phi * phi / crate::normal::sf(z)
    } else {
        1.0 - h_complement(z)
    }
}

/// `1 - h(z)`, accurate in the upper tail where `h` rounds to one.
///
/// Equals `P(Y > z) Var(Y | Y > z)` for standard normal `Y`.
pub fn h_complement(z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0 - h_adjust(z);
    }
    if z == f64::INFINITY {
        return 0.0;
    }
    pdf(z) * mills_ratio(z) * truncated_variance_factor(z)
}

/// Root mean squared error.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), truths.len())?;
    let ss: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((ss / predictions.len() as f64).sqrt())
}

/// Interval score of `[lower, upper]` at level `1 - alpha` for the value `truth`.
pub fn interval_score(lower: f64, upper: f64, truth: f64, alpha: f64) -> Result<f64> {
    if lower > upper || lower.is_nan() || upper.is_nan() {
        return Err(Error::Argument(format!("interval [{lower}, {upper}] is empty")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha {alpha} outside (0, 1)")));
    }
    let k = 2.0 / alpha;
    Ok((upper - lower) + k * (lower - truth).max(0.0) + k * (truth - upper).max(0.0))
}

/// Average interval score of `mean +/- sd` at level `1 - MIS_ALPHA`.
pub fn mean_interval_score(means: &[f64], sds: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(means.len(), truths.len())?;
    check_lengths(sds.len(), truths.len())?;
    let mut total = 0.0;
    for ((m, s), t) in means.iter().zip(sds).zip(truths) {
        total += interval_score(m - s, m + s, *t, MIS_ALPHA)?;
    }
    Ok(total / truths.len() as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 || a != b {
        return Err(Error::Argument(format!("lengths {a} and {b} must be equal and positive")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::{cdf, sf};
    use std::f64::consts::PI;

    #[test]
    fn h_at_zero() {
        assert!((h_adjust(0.0) - (0.5 + 1.0 / PI)).abs() < 1e-15);
    }

    #[test]
    fn h_limits() {
        assert!(h_adjust(6.0) >= 0.999);
        assert!(h_adjust(-6.0) <= 1e-6);
        assert!(h_adjust(-6.0) > 0.0);
        assert_eq!(h_adjust(f64::NEG_INFINITY), 0.0);
        assert_eq!(h_adjust(f64::INFINITY), 1.0);
    }

    // h(z) = 1 - P(Y > z) Var(Y | Y > z), checked against the truncated
    // moments written out directly
    #[test]
    fn h_matches_truncated_variance_identity() {
        for i in 0..81 {
            let z = -4.0 + 0.1 * i as f64;
            let q = sf(z);
            let m = pdf(z) / q;
            let var = 1.0 + z * m - m * m;
            assert!((h_adjust(z) - (1.0 - q * var)).abs() < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn branches_agree_at_switch() {
        let z = 5.0;
        let direct = cdf(z) - z * pdf(z) + pdf(z).powi(2) / sf(z);
        assert!((direct - (1.0 - h_complement(z))).abs() < 1e-14);
        let below = h_adjust(5.0 - 1e-9);
        let above = h_adjust(5.0 + 1e-9);
        assert!(above >= below);
    }

    #[test]
    fn complement_tail_is_positive_and_decreasing() {
        let mut prev = h_complement(5.0);
        for i in 1..=50 {
            let z = 5.0 + 0.5 * i as f64;
            let c = h_complement(z);
            assert!(c > 0.0 && c < prev, "z = {z}");
            prev = c;
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[-0.7], &[0.0]).unwrap(), 0.7);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn interval_score_examples() {
        assert_eq!(interval_score(0.0, 1.0, 0.5, 0.32).unwrap(), 1.0);
        assert!((interval_score(0.0, 1.0, 1.5, 0.32).unwrap() - 4.125).abs() < 1e-12);
        assert_eq!(interval_score(2.0, 2.0, 2.0, 0.32).unwrap(), 0.0);
        assert!(interval_score(1.0, 0.0, 0.5, 0.32).is_err());
        assert!(interval_score(0.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn mean_interval_score_averages() {
        let v = mean_interval_score(&[0.0, 0.0], &[0.5, 0.5], &[0.0, 1.0]).unwrap();
        // second truth lies 0.5 above the interval
        let expected = (1.0 + (1.0 + 0.5 * 2.0 / MIS_ALPHA)) / 2.0;
        assert!((v - expected).abs() < 1e-12);
    }
}
