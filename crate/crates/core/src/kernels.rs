//! Product Gaussian correlation functions, covariance assembly, and the
//! closed-form integrals of kernel products over the unit cube.
//!
//! The correlation is parameterized per dimension by `theta in (0,1)`:
//! `R(x, x') = prod_l theta_l^(4 (x_l - x'_l)^2)`. Internally we store the
//! equivalent positive rates `theta_tilde = -4 ln theta`, so that
//! `R(x, x') = exp(-sum_l theta_tilde_l (x_l - x'_l)^2)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erf;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpmodel::Hyperparams;
use crate::normal;

/// Per-dimension lengthscale parameters, stored as positive rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthscaleParams {
    theta_tilde: Vec<f64>,
}

impl LengthscaleParams {
    /// From rates `theta_tilde > 0`.
    pub fn from_rates(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::Parameter("lengthscales need at least one dimension".into()));
        }
        if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::Parameter(format!("rate {r} is not a positive finite number")));
        }
        Ok(Self { theta_tilde: rates })
    }

    /// From `theta in (0,1)`.
    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        if let Some(t) = theta.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Parameter(format!("theta {t} is outside (0,1)")));
        }
        Self::from_rates(theta.iter().map(|t| -4.0 * t.ln()).collect())
    }

    pub fn isotropic(p: usize, rate: f64) -> Result<Self> {
        Self::from_rates(vec![rate; p])
    }

    pub fn rates(&self) -> &[f64] {
        &self.theta_tilde
    }

    pub fn theta(&self) -> Vec<f64> {
        self.theta_tilde.iter().map(|r| (-0.25 * r).exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.theta_tilde.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    GaussianProduct,
}

/// `variance * R(., .)` for one Gaussian process component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: LengthscaleParams,
    pub variance: f64,
}

impl KernelSpec {
    pub fn gaussian(lengthscales: LengthscaleParams, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::Parameter(format!("kernel variance {variance} must be positive")));
        }
        Ok(Self {
            family: KernelFamily::GaussianProduct,
            lengthscales,
            variance,
        })
    }

    /// Covariance without dimension checks; callers validate once up front.
    #[inline]
    pub fn cov(&self, x: &[f64], y: &[f64]) -> f64 {
        self.variance * corr_unchecked(x, y, self.lengthscales.rates())
    }
}

#[inline]
pub(crate) fn corr_unchecked(x: &[f64], y: &[f64], rates: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), r) in x.iter().zip(y).zip(rates) {
        let d = a - b;
        s += r * d * d;
    }
    (-s).exp()
}

/// Product Gaussian correlation `prod_l theta_l^(4 (x_l - x'_l)^2)`.
pub fn corr_gaussian(x: &[f64], x_prime: &[f64], ls: &LengthscaleParams) -> Result<f64> {
    if x.len() != x_prime.len() || x.len() != ls.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {} vs {} lengthscales",
            x.len(),
            x_prime.len(),
            ls.dim()
        )));
    }
    Ok(corr_unchecked(x, x_prime, ls.rates()))
}

/// `variance * R(a_i, b_j)`, plus `nugget` on the diagonal when both point
/// lists are the same.
pub fn corr_matrix(
    points_a: &[Vec<f64>],
    points_b: &[Vec<f64>],
    spec: &KernelSpec,
    nugget: f64,
) -> Result<DMatrix<f64>> {
    let p = spec.lengthscales.dim();
    if let Some(bad) = points_a.iter().chain(points_b).find(|x| x.len() != p) {
        return Err(Error::Argument(format!(
            "point of dimension {} for a {p}-dimensional kernel",
            bad.len()
        )));
    }
    if nugget < 0.0 {
        return Err(Error::Argument(format!("nugget {nugget} is negative")));
    }
    let same = points_a == points_b;
    let mut m = DMatrix::from_fn(points_a.len(), points_b.len(), |i, j| {
        spec.cov(&points_a[i], &points_b[j])
    });
    if same {
        for i in 0..points_a.len() {
            m[(i, i)] += nugget;
        }
    }
    Ok(m)
}

/// `G([a,x],[b,y]) = int_0^1 exp(-a (x-z)^2) exp(-b (y-z)^2) dz`.
///
/// Completing the square gives `exp(-ab(x-y)^2/(a+b))` times a Gaussian mass
/// on `[0,1]`, so the exponential factor never exceeds one.
pub fn g_exp_integral(a: f64, x: f64, b: f64, y: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::Argument(format!("rates must be nonnegative, got {a} and {b}")));
    }
    Ok(g_unchecked(a, x, b, y))
}

#[inline]
pub(crate) fn g_unchecked(a: f64, x: f64, b: f64, y: f64) -> f64 {
    let s = a + b;
    if s == 0.0 {
        return 1.0;
    }
    let m = (a * x + b * y) / s;
    let d = x - y;
    let gap = a * b * d * d / s;
    let r = (2.0 * s).sqrt();
    let upper = r * (1.0 - m);
    let lower = -r * m;
    let ln_scale = 0.5 * (PI / s).ln() - gap;
    if lower >= normal::TAIL_SWITCH || upper <= -normal::TAIL_SWITCH {
        // both limits in the same far tail: stay in log space
        let (hi, lo) = if lower >= 0.0 { (lower, upper) } else { (-upper, -lower) };
        let ln_hi = normal::ln_sf(hi);
        let ln_lo = normal::ln_sf(lo);
        let ln_mass = ln_hi + (-(ln_lo - ln_hi).exp()).ln_1p();
        return (ln_scale + ln_mass).exp();
    }
    (ln_scale.exp()) * normal_mass(lower, upper)
}

// Phi(u) - Phi(l) without cancellation.
fn normal_mass(l: f64, u: f64) -> f64 {
    if l >= 0.0 {
        normal::sf(l) - normal::sf(u)
    } else if u <= 0.0 {
        normal::cdf(u) - normal::cdf(l)
    } else {
        0.5 * (erf(u * FRAC_1_SQRT_2) - erf(l * FRAC_1_SQRT_2))
    }
}

/// `prod_l G([ra_l, x_l], [rb_l, y_l])`
#[inline]
pub(crate) fn g_product(ra: &[f64], x: &[f64], rb: &[f64], y: &[f64]) -> f64 {
    let mut v = 1.0;
    for l in 0..x.len() {
        v *= g_unchecked(ra[l], x[l], rb[l], y[l]);
    }
    v
}

/// One entry of the integrated outer product of covariance vectors:
/// `int_{[0,1]^p} gamma_i(x) gamma_j(x) dx`, where row `i` carries the
/// discrepancy kernel when `phys_i` is set.
pub fn lambda_entry(
    xi: &[f64],
    phys_i: bool,
    xj: &[f64],
    phys_j: bool,
    params: &Hyperparams,
) -> f64 {
    let sig = params.signal();
    let rf = sig.lengthscales.rates();
    let vf = sig.variance;
    let mut v = vf * vf * g_product(rf, xi, rf, xj);
    if let Some(disc) = params.discrepancy() {
        let rd = disc.lengthscales.rates();
        let vd = disc.variance;
        if phys_i {
            v += vd * vf * g_product(rd, xi, rf, xj);
        }
        if phys_j {
            v += vf * vd * g_product(rf, xi, rd, xj);
        }
        if phys_i && phys_j {
            v += vd * vd * g_product(rd, xi, rd, xj);
        }
    }
    v
}

/// `Lambda = int gamma gamma^T dx` over `[0,1]^p` for the given design rows.
pub fn lambda_matrix(
    points: &[Vec<f64>],
    params: &Hyperparams,
    physical: &[bool],
) -> Result<DMatrix<f64>> {
    if points.len() != physical.len() {
        return Err(Error::Argument(format!(
            "{} points but {} fidelity flags",
            points.len(),
            physical.len()
        )));
    }
    let p = params.dim();
    if let Some(bad) = points.iter().find(|x| x.len() != p) {
        return Err(Error::Argument(format!(
            "point of dimension {} for {p}-dimensional hyperparameters",
            bad.len()
        )));
    }
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = lambda_entry(&points[i], physical[i], &points[j], physical[j], params);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}
