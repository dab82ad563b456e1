//! Genz separation-of-variables integration of `P(Y <= b)`, `Y ~ N(0, S)`,
//! with variable reordering and randomized rank-1 lattice rules.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use std::f64::consts::SQRT_2;

use statrs::function::erf::erfc_inv;

use crate::normal::{cdf, pdf};

/// Size of the randomized lattice rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QmcConfig {
    /// Lattice points per random shift.
    pub points: usize,
    /// Independent random shifts averaged together.
    pub shifts: usize,
}

impl QmcConfig {
    pub const fn new(points: usize, shifts: usize) -> Self {
        Self { points, shifts }
    }

    pub fn total(&self) -> usize {
        self.points * self.shifts
    }
}

impl Default for QmcConfig {
    /// `2^13` points in total.
    fn default() -> Self {
        Self::new(1024, 8)
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut n = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= n).all(|&p| n % p != 0) {
            out.push(n);
        }
        n += 1;
    }
    out
}

// Cholesky factor of `cov` with Genz-Bretz ordering (most constraining
// variable first). Returns the factor and the permuted limits.
fn ordered_cholesky(cov: &DMatrix<f64>, b: &[f64]) -> Option<(DMatrix<f64>, Vec<f64>)> {
    let d = b.len();
    let mut a = cov.clone();
    let mut b = b.to_vec();
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut best = i;
        let mut best_p = f64::INFINITY;
        for j in i..d {
            let mut s = 0.0;
            let mut v = a[(j, j)];
            for m in 0..i {
                s += a[(j, m)] * y[m];
                v -= a[(j, m)] * a[(j, m)];
            }
            if v <= 0.0 {
                continue;
            }
            let p = cdf((b[j] - s) / v.sqrt());
            if p < best_p {
                best_p = p;
                best = j;
            }
        }
        if best != i {
            a.swap_rows(i, best);
            a.swap_columns(i, best);
            b.swap(i, best);
        }
        let mut v = a[(i, i)];
        for m in 0..i {
            v -= a[(i, m)] * a[(i, m)];
        }
        if !(v > 0.0) {
            return None;
        }
        let lii = v.sqrt();
        a[(i, i)] = lii;
        for r in (i + 1)..d {
            let mut s = a[(r, i)];
            for m in 0..i {
                s -= a[(r, m)] * a[(i, m)];
            }
            a[(r, i)] = s / lii;
        }
        // expected value of the truncated standardized variable
        let mut s = 0.0;
        for m in 0..i {
            s += a[(i, m)] * y[m];
        }
        let z = (b[i] - s) / lii;
        let pz = cdf(z);
        y[i] = if pz > 1e-300 { -pdf(z) / pz } else { z };
    }
    for i in 0..d {
        for j in (i + 1)..d {
            a[(i, j)] = 0.0;
        }
    }
    Some((a, b))
}

/// `P(Y <= b)` for `Y ~ N(0, cov)` and finite `b`, `d >= 1`.
pub(crate) fn lower_orthant(cov: &DMatrix<f64>, b: &[f64], qmc: QmcConfig, seed: u64) -> Result<f64> {
    let d = b.len();
    let mut jittered = cov.clone();
    let jitter = 1e-8 * cov.diagonal().mean();
    let mut factor = ordered_cholesky(&jittered, b);
    for _ in 0..2 {
        if factor.is_some() {
            break;
        }
        for i in 0..d {
            jittered[(i, i)] += jitter;
        }
        factor = ordered_cholesky(&jittered, b);
    }
    let (l, b) = factor.ok_or_else(|| Error::Numerical {
        message: "covariance is not positive definite after jitter".into(),
        condition: Some(condition_estimate(cov)),
    })?;

    let e0 = cdf(b[0] / l[(0, 0)]);
    if d == 1 {
        return Ok(e0);
    }
    let z: Vec<f64> = primes(d - 1).iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; d];
    let mut total = 0.0;
    for _ in 0..qmc.shifts {
        let shift: Vec<f64> = (0..d - 1).map(|_| rng.random::<f64>()).collect();
        let mut acc = 0.0;
        for k in 1..=qmc.points {
            let mut e = e0;
            let mut f = e0;
            for i in 1..d {
                let x = (k as f64 * z[i - 1] + shift[i - 1]).fract();
                let w = 1.0 - (2.0 * x - 1.0).abs();
                let u = (w * e).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                // the Newton-polished quantile is not worth its cost here
                y[i - 1] = -SQRT_2 * erfc_inv(2.0 * u);
                let mut s = 0.0;
                for m in 0..i {
                    s += l[(i, m)] * y[m];
                }
                e = cdf((b[i] - s) / l[(i, i)]);
                f *= e;
                if f == 0.0 {
                    break;
                }
            }
            acc += f;
        }
        total += acc / qmc.points as f64;
    }
    Ok(total / qmc.shifts as f64)
}

pub(crate) fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
