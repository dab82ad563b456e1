use nalgebra::{DMatrix, DVector};

use super::{Hyperparams, Observation};
use crate::error::{Error, Result};
use crate::normal::LN_SQRT_2PI;
use crate::tmvn::{self, QmcConfig};

/// Lattice size used by the likelihood unless told otherwise.
pub const LIKELIHOOD_QMC: QmcConfig = QmcConfig::new(512, 2);

/// Log-likelihood of censored data: the Gaussian density of the uncensored
/// responses plus the log probability that the censored block exceeds `c`
/// given them. Non-positive-definite covariances give `-inf`.
pub fn censored_loglik(params: &Hyperparams, data: &[Observation], c: f64) -> Result<f64> {
    censored_loglik_with(params, data, c, LIKELIHOOD_QMC, 0)
}

pub fn censored_loglik_with(
    params: &Hyperparams,
    data: &[Observation],
    c: f64,
    qmc: QmcConfig,
    seed: u64,
) -> Result<f64> {
    let parts = Parts::build(params, data, c)?;
    let Some(parts) = parts else {
        return Ok(f64::NEG_INFINITY);
    };
    if parts.n_c() == 0 {
        return Ok(parts.ln_density);
    }
    let ln_orthant = parts.ln_orthant(c, qmc, seed);
    Ok(parts.ln_density + ln_orthant)
}

/// Just the censoring term `ln P(y_c >= c | y_o)`.
pub fn ln_censored_orthant(params: &Hyperparams, data: &[Observation], c: f64, qmc: QmcConfig, seed: u64) -> Result<f64> {
    match Parts::build(params, data, c)? {
        Some(p) if p.n_c() > 0 => Ok(p.ln_orthant(c, qmc, seed)),
        Some(_) => Ok(0.0),
        None => Ok(f64::NEG_INFINITY),
    }
}

struct Parts {
    ln_density: f64,
    cond_mean: DVector<f64>,
    cond_cov: DMatrix<f64>,
}

impl Parts {
    fn n_c(&self) -> usize {
        self.cond_mean.len()
    }

    fn ln_orthant(&self, c: f64, qmc: QmcConfig, seed: u64) -> f64 {
        if c == f64::INFINITY {
            return f64::NEG_INFINITY;
        }
        let alpha: Vec<f64> = self.cond_mean.iter().map(|m| c - m).collect();
        tmvn::ln_orthant_centered(&self.cond_cov, &alpha, qmc, seed).unwrap_or(f64::NEG_INFINITY)
    }

    fn build(params: &Hyperparams, data: &[Observation], c: f64) -> Result<Option<Self>> {
        let p = params.dim();
        for o in data {
            if o.x.len() != p {
                return Err(Error::Argument("observation dimension differs from the parameters".into()));
            }
            o.validate(c)?;
        }
        let obs: Vec<&Observation> = data.iter().filter(|o| !o.censored).collect();
        let cen: Vec<&Observation> = data.iter().filter(|o| o.censored).collect();
        if obs.len() < 2 {
            return Err(Error::Argument(format!(
                "the likelihood needs at least two uncensored observations, got {}",
                obs.len()
            )));
        }
        let cov = |a: &Observation, b: &Observation, same: bool| {
            params.cov_rows(&a.x, a.fidelity.is_physical(), &b.x, b.fidelity.is_physical(), same)
        };
        let n_o = obs.len();
        let k_oo = DMatrix::from_fn(n_o, n_o, |i, j| cov(obs[i], obs[j], i == j));
        let Some(chol) = k_oo.cholesky() else {
            return Ok(None);
        };
        let r = DVector::from_iterator(n_o, obs.iter().map(|o| o.value - params.mu()));
        let a = chol.solve(&r);
        let ln_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let ln_density = -0.5 * r.dot(&a) - 0.5 * ln_det - n_o as f64 * LN_SQRT_2PI;

        let n_c = cen.len();
        let k_oc = DMatrix::from_fn(n_o, n_c, |i, j| cov(obs[i], cen[j], false));
        let k_cc = DMatrix::from_fn(n_c, n_c, |i, j| cov(cen[i], cen[j], i == j));
        let cond_mean = DVector::from_element(n_c, params.mu()) + k_oc.transpose() * &a;
        let s = &k_cc - k_oc.transpose() * chol.solve(&k_oc);
        let cond_cov = (&s + s.transpose()) * 0.5;
        if !ln_density.is_finite() || (0..n_c).any(|i| !(cond_cov[(i, i)] > 0.0)) {
            return Ok(None);
        }
        Ok(Some(Self {
            ln_density,
            cond_mean,
            cond_cov,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::LengthscaleParams;
    use crate::normal;

    fn params() -> Hyperparams {
        Hyperparams::single(0.2, 1.5, LengthscaleParams::from_rates(vec![4.0]).unwrap(), 0.01).unwrap()
    }

    fn data() -> Vec<Observation> {
        vec![
            Observation::physical(vec![0.1], 0.3),
            Observation::physical(vec![0.5], -0.4),
            Observation::physical(vec![0.8], 0.9),
        ]
    }

    #[test]
    fn uncensored_is_gaussian_marginal() {
        let p = params();
        let d = data();
        let n = d.len();
        let k = DMatrix::from_fn(n, n, |i, j| p.cov_rows(&d[i].x, true, &d[j].x, true, i == j));
        let r = DVector::from_iterator(n, d.iter().map(|o| o.value - p.mu()));
        let inv = k.clone().try_inverse().unwrap();
        let expected = -0.5 * (r.transpose() * inv * &r)[(0, 0)]
            - 0.5 * k.determinant().ln()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let ll = censored_loglik(&p, &d, 1.0).unwrap();
        assert!((ll - expected).abs() < 1e-10);
    }

    #[test]
    fn one_censored_row_adds_survival() {
        let p = params();
        let mut d = data();
        let base = censored_loglik(&p, &d, 1.0).unwrap();
        d.push(Observation::censored(vec![0.3], 1.0));
        // conditional normal of the censored row given the three observed
        let obs = &d[..3];
        let k = DMatrix::from_fn(3, 3, |i, j| p.cov_rows(&obs[i].x, true, &obs[j].x, true, i == j));
        let kc = DVector::from_iterator(3, obs.iter().map(|o| p.cov_rows(&o.x, true, &[0.3], true, false)));
        let r = DVector::from_iterator(3, obs.iter().map(|o| o.value - p.mu()));
        let inv = k.try_inverse().unwrap();
        let m = p.mu() + (kc.transpose() * &inv * r)[(0, 0)];
        let v = p.cov_rows(&[0.3], true, &[0.3], true, true) - (kc.transpose() * &inv * &kc)[(0, 0)];
        let expected = base + normal::ln_sf((1.0 - m) / v.sqrt());
        let ll = censored_loglik(&p, &d, 1.0).unwrap();
        assert!((ll - expected).abs() < 1e-10, "{ll} vs {expected}");
    }

    #[test]
    fn infinite_limit_reduces() {
        let p = params();
        let d = data();
        let a = censored_loglik(&p, &d, f64::INFINITY).unwrap();
        let b = censored_loglik(&p, &d, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn orthant_term_falls_as_limit_rises() {
        let p = params();
        let mut prev = 0.0;
        for k in 0..20 {
            let c = -0.5 + 0.15 * k as f64;
            let mut d = data();
            d.push(Observation::censored(vec![0.3], c));
            d.push(Observation::censored(vec![0.35], c));
            let t = ln_censored_orthant(&p, &d, c, LIKELIHOOD_QMC, 0).unwrap();
            assert!(t <= prev + 1e-12);
            prev = t;
        }
    }

    #[test]
    fn too_few_observations() {
        let d = vec![Observation::physical(vec![0.1], 0.3)];
        assert!(censored_loglik(&params(), &d, 1.0).is_err());
    }
}
