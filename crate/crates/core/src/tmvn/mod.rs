//! Orthant probabilities and moments of lower-truncated multivariate normals.
//!
//! Probabilities are exact in one and two dimensions and use randomized
//! lattice integration beyond. Moments come from the Tallis recursion: the
//! truncated first and second moments are linear combinations of the
//! one- and two-dimensional marginal densities of the truncated law on its
//! boundary, each of which is a lower-dimensional orthant probability.

mod bvn;
mod qmc;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use crate::error::{Error, Result};
use crate::normal;

pub use bvn::bvnu;
pub use qmc::QmcConfig;
pub(crate) use qmc::condition_estimate;

/// Below this an orthant is treated as impossible.
pub const MIN_PROB: f64 = 1e-300;

/// `N(mean, cov)`
#[derive(Clone, Debug, PartialEq)]
pub struct MvnSpec {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MvnSpec {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Argument("empty normal distribution".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Argument(format!(
                "covariance is {}x{} for a mean of length {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let scale = cov.diagonal().amax().max(1.0);
        for i in 0..d {
            if !(cov[(i, i)] > 0.0) {
                return Err(Error::Argument(format!("variance {} at index {i} is not positive", cov[(i, i)])));
            }
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Argument(format!("covariance is not symmetric at ({i},{j})")));
                }
            }
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite mean or covariance".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedMoments {
    pub prob: f64,
    pub ln_prob: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn check_lower(spec: &MvnSpec, lower: &[f64]) -> Result<()> {
    if lower.len() != spec.dim() {
        return Err(Error::Argument(format!(
            "{} bounds for a {}-dimensional normal",
            lower.len(),
            spec.dim()
        )));
    }
    if lower.iter().any(|v| v.is_nan()) {
        return Err(Error::Argument("NaN truncation bound".into()));
    }
    Ok(())
}

/// `P(Z >= lower)` componentwise for `Z ~ spec`; `lower` may hold `-inf`.
pub fn orthant_prob(spec: &MvnSpec, lower: &[f64], rng_seed: u64) -> Result<f64> {
    Ok(orthant_ln_prob(spec, lower, QmcConfig::default(), rng_seed)?.exp())
}

/// Natural log of [`orthant_prob`] with an explicit lattice size.
pub fn orthant_ln_prob(spec: &MvnSpec, lower: &[f64], qmc: QmcConfig, rng_seed: u64) -> Result<f64> {
    check_lower(spec, lower)?;
    let alpha: Vec<f64> = lower.iter().zip(spec.mean.iter()).map(|(a, m)| a - m).collect();
    ln_orthant_centered(&spec.cov, &alpha, qmc, rng_seed)
}

// ln P(X >= alpha) for X ~ N(0, cov).
pub(crate) fn ln_orthant_centered(cov: &DMatrix<f64>, alpha: &[f64], qmc: QmcConfig, seed: u64) -> Result<f64> {
    if alpha.iter().any(|a| *a == f64::INFINITY) {
        return Ok(f64::NEG_INFINITY);
    }
    let idx: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > f64::NEG_INFINITY).collect();
    match idx.len() {
        0 => Ok(0.0),
        1 => {
            let i = idx[0];
            Ok(normal::ln_sf(alpha[i] / cov[(i, i)].sqrt()))
        }
        2 => {
            let (i, j) = (idx[0], idx[1]);
            let si = cov[(i, i)].sqrt();
            let sj = cov[(j, j)].sqrt();
            let r = (cov[(i, j)] / (si * sj)).clamp(-1.0, 1.0);
            Ok(bvnu(alpha[i] / si, alpha[j] / sj, r).ln())
        }
        d => {
            let sub = DMatrix::from_fn(d, d, |r, c| cov[(idx[r], idx[c])]);
            let b: Vec<f64> = idx.iter().map(|&i| -alpha[i]).collect();
            Ok(qmc::lower_orthant(&sub, &b, qmc, seed)?.ln())
        }
    }
}

/// Moments of `N(mu, var)` truncated below at `lower`.
pub fn trunc_univariate(mu: f64, var: f64, lower: f64) -> Result<TruncatedMoments> {
    if !(var > 0.0 && var.is_finite()) || !mu.is_finite() || lower.is_nan() {
        return Err(Error::Argument(format!(
            "invalid univariate truncation: mu {mu}, var {var}, lower {lower}"
        )));
    }
    let sd = var.sqrt();
    let z = (lower - mu) / sd;
    let (prob, ln_prob, mean, v) = if z < -40.0 {
        (1.0, 0.0, mu, var)
    } else {
        (
            normal::sf(z),
            normal::ln_sf(z),
            (mu + sd * normal::inv_mills(z)).max(lower),
            var * normal::truncated_variance_factor(z),
        )
    };
    Ok(TruncatedMoments {
        prob,
        ln_prob,
        mean: DVector::from_element(1, mean),
        cov: DMatrix::from_element(1, 1, v),
    })
}

/// Mean and covariance of `Z | Z >= lower` with the default lattice size.
pub fn trunc_moments(spec: &MvnSpec, lower: &[f64], rng_seed: u64) -> Result<TruncatedMoments> {
    trunc_moments_with(spec, lower, QmcConfig::default(), rng_seed)
}

pub fn trunc_moments_with(spec: &MvnSpec, lower: &[f64], qmc: QmcConfig, rng_seed: u64) -> Result<TruncatedMoments> {
    check_lower(spec, lower)?;
    if spec.dim() == 1 {
        return trunc_univariate(spec.mean[0], spec.cov[(0, 0)], lower[0]);
    }
    tallis(spec, lower, qmc, rng_seed, true)
}

/// Orthant probability and truncated mean only, skipping the pairwise terms.
pub fn trunc_mean_with(spec: &MvnSpec, lower: &[f64], qmc: QmcConfig, rng_seed: u64) -> Result<TruncatedMoments> {
    check_lower(spec, lower)?;
    if spec.dim() == 1 {
        return trunc_univariate(spec.mean[0], spec.cov[(0, 0)], lower[0]);
    }
    tallis(spec, lower, qmc, rng_seed, false)
}

// Law of the remaining coordinates given X_S = alpha_S, as (mean, cov) of
// the rest, with X ~ N(0, cov).
fn condition_on(cov: &DMatrix<f64>, fixed: &[usize], values: &[f64]) -> Option<(Vec<usize>, DVector<f64>, DMatrix<f64>)> {
    let d = cov.nrows();
    let rest: Vec<usize> = (0..d).filter(|i| !fixed.contains(i)).collect();
    let k = fixed.len();
    let s_ff = DMatrix::from_fn(k, k, |a, b| cov[(fixed[a], fixed[b])]);
    let s_rf = DMatrix::from_fn(rest.len(), k, |a, b| cov[(rest[a], fixed[b])]);
    let chol = s_ff.cholesky()?;
    let w = chol.solve(&s_rf.transpose()); // k x r
    let v = DVector::from_column_slice(values);
    let mean = w.transpose() * v;
    let s_rr = DMatrix::from_fn(rest.len(), rest.len(), |a, b| cov[(rest[a], rest[b])]);
    let mut c = s_rr - &s_rf * &w;
    c = (&c + c.transpose()) * 0.5;
    Some((rest, mean, c))
}

fn tallis(spec: &MvnSpec, lower: &[f64], qmc: QmcConfig, seed: u64, second: bool) -> Result<TruncatedMoments> {
    let d = spec.dim();
    let s = &spec.cov;
    let alpha: Vec<f64> = lower.iter().zip(spec.mean.iter()).map(|(a, m)| a - m).collect();
    let ln_p = ln_orthant_centered(s, &alpha, qmc, seed)?;
    let prob = ln_p.exp();
    if !(ln_p > MIN_PROB.ln()) {
        return Err(Error::DegenerateTruncation { prob });
    }
    let active: Vec<usize> = (0..d).filter(|&k| alpha[k] > f64::NEG_INFINITY).collect();

    // one-dimensional boundary densities
    let mut f1 = vec![0.0; d];
    for &k in &active {
        let skk = s[(k, k)];
        let ln_dens = normal::ln_pdf(alpha[k] / skk.sqrt()) - 0.5 * skk.ln();
        let (rest, m, c) = condition_on(s, &[k], &[alpha[k]])
            .ok_or_else(|| Error::numerical("non-positive variance in truncated moments"))?;
        let a_rest: Vec<f64> = rest.iter().zip(m.iter()).map(|(&r, mr)| alpha[r] - mr).collect();
        let ln_cond = ln_orthant_centered(&c, &a_rest, qmc, seed)?;
        f1[k] = (ln_dens + ln_cond - ln_p).exp();
    }

    let mut ex = DVector::zeros(d);
    for i in 0..d {
        ex[i] = active.iter().map(|&k| s[(i, k)] * f1[k]).sum();
    }
    let mut mean = &spec.mean + &ex;
    for i in 0..d {
        if mean[i] < lower[i] {
            mean[i] = lower[i];
        }
    }
    if !second {
        return Ok(TruncatedMoments {
            prob,
            ln_prob: ln_p,
            mean,
            cov: DMatrix::zeros(d, d),
        });
    }

    // two-dimensional boundary densities
    let mut f2 = DMatrix::zeros(d, d);
    for (ai, &k) in active.iter().enumerate() {
        for &q in &active[ai + 1..] {
            let (skk, sqq, skq) = (s[(k, k)], s[(q, q)], s[(k, q)]);
            let det = skk * sqq - skq * skq;
            if !(det > 1e-14 * skk * sqq) {
                continue;
            }
            let (ak, aq) = (alpha[k], alpha[q]);
            let quad = (sqq * ak * ak - 2.0 * skq * ak * aq + skk * aq * aq) / det;
            let ln_dens = -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad;
            let ln_cond = if d > 2 {
                let (rest, m, c) = condition_on(s, &[k, q], &[ak, aq])
                    .ok_or_else(|| Error::numerical("singular pair block in truncated moments"))?;
                let a_rest: Vec<f64> = rest.iter().zip(m.iter()).map(|(&r, mr)| alpha[r] - mr).collect();
                ln_orthant_centered(&c, &a_rest, qmc, seed)?
            } else {
                0.0
            };
            let v = (ln_dens + ln_cond - ln_p).exp();
            f2[(k, q)] = v;
            f2[(q, k)] = v;
        }
    }

    let mut exx = s.clone();
    for i in 0..d {
        for j in 0..=i {
            let mut acc = 0.0;
            for &k in &active {
                let skk = s[(k, k)];
                acc += s[(i, k)] * s[(j, k)] * alpha[k] * f1[k] / skk;
                let mut inner = 0.0;
                for &q in &active {
                    if q != k {
                        inner += (s[(j, q)] - s[(k, q)] * s[(j, k)] / skk) * f2[(k, q)];
                    }
                }
                acc += s[(i, k)] * inner;
            }
            exx[(i, j)] += acc;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = exx[(i, j)] - ex[i] * ex[j];
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(TruncatedMoments {
        prob,
        ln_prob: ln_p,
        mean,
        cov,
    })
}
