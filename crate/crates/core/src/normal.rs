//! Standard normal density, distribution and tail helpers.
//!
//! Everything here is written to stay accurate deep in the upper tail, where
//! the censoring adjustment and truncated means get evaluated during design
//! optimization.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

/// `1 / sqrt(2 pi)`
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `ln(sqrt(2 pi))`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Beyond this many standard deviations the tail formulas switch to the
/// continued-fraction Mills ratio.
pub const TAIL_SWITCH: f64 = 8.0;

#[inline]
pub fn pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

#[inline]
pub fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// `Phi(z)`
#[inline]
pub fn cdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(z)`, accurate until it underflows near `z = 38`.
#[inline]
pub fn sf(z: f64) -> f64 {
    cdf(-z)
}

/// Mills ratio `(1 - Phi(z)) / phi(z)`.
pub fn mills_ratio(z: f64) -> f64 {
    if z > TAIL_SWITCH {
        1.0 / (z + mills_tail_remainder(z))
    } else {
        sf(z) / pdf(z)
    }
}

/// Inverse Mills ratio `phi(z) / (1 - Phi(z))`, the mean of a standard normal
/// truncated below at `z`.
pub fn inv_mills(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z > TAIL_SWITCH {
        z + mills_tail_remainder(z)
    } else {
        pdf(z) / sf(z)
    }
}

/// `inv_mills(z) - z`, computed without cancellation for large `z` through the
/// continued fraction `1/(z + 2/(z + 3/(z + ...)))`.
pub fn inv_mills_excess(z: f64) -> f64 {
    if z > TAIL_SWITCH {
        mills_tail_remainder(z)
    } else {
        inv_mills(z) - z
    }
}

// Backward evaluation of t(z) = 1/(z + 2/(z + 3/(z + ...))), where
// 1/mills(z) = z + t(z). Fifty terms is far more than needed for z > 8.
fn mills_tail_remainder(z: f64) -> f64 {
    let mut acc = z;
    for k in (2..=50).rev() {
        acc = z + k as f64 / acc;
    }
    1.0 / acc
}

/// `ln(1 - Phi(z))`, finite for all finite `z`.
pub fn ln_sf(z: f64) -> f64 {
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z > TAIL_SWITCH {
        ln_pdf(z) + mills_ratio(z).ln()
    } else if z < -5.0 {
        // 1 - tiny; ln_1p keeps the digits
        (-cdf(z)).ln_1p()
    } else {
        sf(z).ln()
    }
}

/// `ln Phi(z)`
pub fn ln_cdf(z: f64) -> f64 {
    ln_sf(-z)
}

/// Standard normal quantile.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step against the more accurate cdf
    let d = pdf(z);
    if d > 0.0 {
        z - (cdf(z) - p) / d
    } else {
        z
    }
}

/// Upper-tail quantile: the `z` with `1 - Phi(z) = q`.
#[inline]
pub fn sf_quantile(q: f64) -> f64 {
    -quantile(q)
}

/// Variance factor `1 + z m - m^2` of a standard normal truncated below at
/// `z`, with `m` the inverse Mills ratio.
pub fn truncated_variance_factor(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 1.0;
    }
    let excess = inv_mills_excess(z);
    let m = z + excess;
    // 1 + z m - m^2 = 1 - m (m - z)
    (1.0 - m * excess).max(0.0)
}

/// Bivariate standard normal density with correlation `rho`.
pub fn bivariate_pdf(x: f64, y: f64, rho: f64) -> f64 {
    let one_m = 1.0 - rho * rho;
    let q = (x * x - 2.0 * rho * x * y + y * y) / one_m;
    (-0.5 * q).exp() / (2.0 * PI * one_m.sqrt())
}
