use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::likelihood::{censored_loglik_with, LIKELIHOOD_QMC};
use super::model::FittedModel;
use super::{Hyperparams, ModelMode, Observation};
use crate::error::{Error, Result};
use crate::kernels::LengthscaleParams;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::tmvn::QmcConfig;

/// Maximum-likelihood settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    /// Total number of Nelder-Mead runs, including the warm start.
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub likelihood_qmc: QmcConfig,
    /// Lattice size for the cached truncated moments of the fitted model.
    pub moment_qmc: QmcConfig,
    /// Previous optimum, used as the first start.
    pub warm_start: Option<Hyperparams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_iters: 400,
            seed: 0,
            likelihood_qmc: LIKELIHOOD_QMC,
            moment_qmc: QmcConfig::default(),
            warm_start: None,
        }
    }
}

const THETA_BOUNDS: (f64, f64) = (1e-2, 1e3);
const SIGMA2_BOUNDS: (f64, f64) = (1e-4, 1e2);
const NOISE_BOUNDS: (f64, f64) = (1e-8, 1.0);
const DELTA_BOUNDS: (f64, f64) = (1e-6, 10.0);

// Which coordinates are free, in the order
// [ln s2, ln rates.., ln noise?, ln s2_delta?, ln rates_delta.., mu?].
#[derive(Clone, Copy)]
struct Layout {
    p: usize,
    noise: bool,
    disc: bool,
    mu: bool,
    bi: bool,
}

impl Layout {
    fn len(&self) -> usize {
        1 + self.p + usize::from(self.noise) + if self.disc { 1 + self.p } else { 0 } + usize::from(self.mu)
    }
}

struct Scale {
    var: f64,
    mean: f64,
    lo: f64,
    hi: f64,
}

struct Problem<'a> {
    data: &'a [Observation],
    c: f64,
    layout: Layout,
    scale: Scale,
    qmc: QmcConfig,
    seed: u64,
}

impl Problem<'_> {
    fn bounds(&self) -> Vec<(f64, f64)> {
        let l = self.layout;
        let lv = self.scale.var.ln();
        let mut b = vec![(lv + SIGMA2_BOUNDS.0.ln(), lv + SIGMA2_BOUNDS.1.ln())];
        b.extend(std::iter::repeat_n((THETA_BOUNDS.0.ln(), THETA_BOUNDS.1.ln()), l.p));
        if l.noise {
            b.push((lv + NOISE_BOUNDS.0.ln(), lv + NOISE_BOUNDS.1.ln()));
        }
        if l.disc {
            b.push((lv + DELTA_BOUNDS.0.ln(), lv + DELTA_BOUNDS.1.ln()));
            b.extend(std::iter::repeat_n((THETA_BOUNDS.0.ln(), THETA_BOUNDS.1.ln()), l.p));
        }
        if l.mu {
            let sd = self.scale.var.sqrt();
            b.push((self.scale.lo - 3.0 * sd, self.scale.hi + 3.0 * sd));
        }
        b
    }

    fn decode(&self, v: &[f64], mu: f64) -> Result<Hyperparams> {
        let l = self.layout;
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("layout length");
        let s2 = next().exp();
        let rates: Vec<f64> = (0..l.p).map(|_| next().exp()).collect();
        let noise = if l.noise { next().exp() } else { 0.0 };
        let (sd2, rates_d) = if l.disc {
            let s = next().exp();
            (s, (0..l.p).map(|_| next().exp()).collect())
        } else {
            (0.0, rates.clone())
        };
        let mu = if l.mu { next() } else { mu };
        let ls = LengthscaleParams::from_rates(rates)?;
        if l.bi {
            Hyperparams::bi(mu, s2, ls, sd2, LengthscaleParams::from_rates(rates_d)?, noise)
        } else {
            Hyperparams::single(mu, s2, ls, noise)
        }
    }

    fn encode(&self, h: &Hyperparams) -> Vec<f64> {
        let l = self.layout;
        let mut v = vec![h.signal().variance.ln()];
        v.extend(h.signal().lengthscales.rates().iter().map(|r| r.ln()));
        if l.noise {
            v.push(h.sigma2_eps().max(1e-300).ln());
        }
        if l.disc {
            match h.discrepancy() {
                Some(d) => {
                    v.push(d.variance.ln());
                    v.extend(d.lengthscales.rates().iter().map(|r| r.ln()));
                }
                None => {
                    v.push((0.1 * self.scale.var).ln());
                    v.extend(h.signal().lengthscales.rates().iter().map(|r| r.ln()));
                }
            }
        }
        if l.mu {
            v.push(h.mu());
        }
        let bounds = self.bounds();
        v.iter().zip(&bounds).map(|(x, (lo, hi))| x.clamp(*lo, *hi)).collect()
    }

    // generalized least squares mean for fully observed data
    fn profile_mu(&self, h: &Hyperparams) -> Option<f64> {
        let n = self.data.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (&self.data[i], &self.data[j]);
            h.cov_rows(&a.x, a.fidelity.is_physical(), &b.x, b.fidelity.is_physical(), i == j)
        });
        let chol = k.cholesky()?;
        let y = DVector::from_iterator(n, self.data.iter().map(|o| o.value));
        let ki1 = chol.solve(&DVector::from_element(n, 1.0));
        Some(ki1.dot(&y) / ki1.sum())
    }

    fn params_at(&self, v: &[f64]) -> Option<Hyperparams> {
        let placeholder = self.decode(v, self.scale.mean).ok()?;
        if self.layout.mu {
            return Some(placeholder);
        }
        let mu = self.profile_mu(&placeholder)?;
        self.decode(v, mu).ok()
    }

    fn neg_loglik(&self, v: &[f64], bounds: &[(f64, f64)]) -> f64 {
        if v.iter().zip(bounds).any(|(x, (lo, hi))| !(x >= lo && x <= hi)) {
            return f64::INFINITY;
        }
        match self.params_at(v) {
            Some(h) => match censored_loglik_with(&h, self.data, self.c, self.qmc, self.seed) {
                Ok(ll) if ll.is_finite() => -ll,
                _ => f64::INFINITY,
            },
            None => f64::INFINITY,
        }
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let l = self.layout;
        let lv = self.scale.var.ln();
        let mut u = |a: f64, b: f64| a + (b - a) * rng.random::<f64>();
        let mut v = vec![lv + u(-1.0, 1.0)];
        for _ in 0..l.p {
            v.push(u(0.5f64.ln(), 50f64.ln()));
        }
        if l.noise {
            v.push(lv + u(1e-4f64.ln(), 0.1f64.ln()));
        }
        if l.disc {
            v.push(lv + u(1e-3f64.ln(), 0.5f64.ln()));
            for _ in 0..l.p {
                v.push(u(0.5f64.ln(), 50f64.ln()));
            }
        }
        if l.mu {
            let sd = self.scale.var.sqrt();
            v.push(self.scale.mean + sd * u(-1.0, 1.0));
        }
        v
    }

    fn default_start(&self) -> Vec<f64> {
        let l = self.layout;
        let lv = self.scale.var.ln();
        let mut v = vec![lv];
        v.extend(std::iter::repeat_n(5f64.ln(), l.p));
        if l.noise {
            v.push(lv + 0.01f64.ln());
        }
        if l.disc {
            v.push(lv + 0.1f64.ln());
            v.extend(std::iter::repeat_n(5f64.ln(), l.p));
        }
        if l.mu {
            v.push(self.scale.mean);
        }
        v
    }
}

/// Maximum-likelihood fit by multistart Nelder-Mead on log-transformed
/// variances and rates. The constant mean is profiled out when nothing is
/// censored and optimized jointly otherwise. Deterministic given the seed.
pub fn fit_mle(data: &[Observation], c: f64, mode: ModelMode, cfg: &FitConfig) -> Result<FittedModel> {
    if data.is_empty() {
        return Err(Error::Argument("cannot fit a model without data".into()));
    }
    if cfg.restarts == 0 {
        return Err(Error::Argument("at least one restart is required".into()));
    }
    let p = data[0].x.len();
    if p == 0 || data.iter().any(|o| o.x.len() != p) {
        return Err(Error::Argument("observations must share a positive dimension".into()));
    }
    for o in data {
        o.validate(c)?;
    }
    let bi = mode.is_bifidelity();
    let n_phys = data.iter().filter(|o| o.fidelity.is_physical()).count();
    if bi && n_phys == data.len() {
        return Err(Error::Argument("bi-fidelity fit needs computer runs".into()));
    }
    let censored = data.iter().any(|o| o.censored);
    if mode == ModelMode::Standard && censored {
        return Err(Error::Mode("standard model given censored observations".into()));
    }
    let values: Vec<f64> = data.iter().filter(|o| !o.censored).map(|o| o.value).collect();
    if values.len() < 2 {
        return Err(Error::Argument("at least two uncensored observations are required".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    let var = var.max(1e-8 * mean.abs().max(1.0).powi(2));
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let layout = Layout {
        p,
        noise: n_phys > 0,
        disc: bi && n_phys > 0,
        mu: censored,
        bi,
    };
    let problem = Problem {
        data,
        c,
        layout,
        scale: Scale { var, mean, lo, hi },
        qmc: cfg.likelihood_qmc,
        seed: cfg.seed,
    };
    let bounds = problem.bounds();
    let mut steps = vec![1.0; layout.len()];
    if layout.mu {
        steps[layout.len() - 1] = 0.5 * var.sqrt();
    }
    let opts = NelderMeadOptions {
        max_iters: cfg.max_iters,
        x_tol: 1e-4,
        f_tol: 1e-9,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![match &cfg.warm_start {
        Some(h) if h.dim() == p && h.is_bifidelity() == bi => problem.encode(h),
        _ => problem.default_start(),
    }];
    while starts.len() < cfg.restarts {
        starts.push(problem.random_start(&mut rng));
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for x0 in &starts {
        let r = nelder_mead(|v| problem.neg_loglik(v, &bounds), x0, &steps, &opts);
        if r.f.is_finite() && best.as_ref().is_none_or(|(f, _)| r.f < *f) {
            best = Some((r.f, r.x));
        }
    }
    let (f, x) = best.ok_or_else(|| Error::Fit {
        message: format!("all {} restarts ended at a non-finite likelihood", starts.len()),
        best_loglik: f64::NEG_INFINITY,
    })?;
    let params = problem.params_at(&x).ok_or_else(|| Error::Fit {
        message: "optimum could not be decoded".into(),
        best_loglik: -f,
    })?;
    FittedModel::with_options(params, data.to_vec(), c, mode, cfg.moment_qmc, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpmodel::censored_loglik;
    use rand_distr::{Distribution, StandardNormal};

    fn draw(params: &Hyperparams, xs: &[Vec<f64>], seed: u64) -> Vec<f64> {
        let n = xs.len();
        let k = DMatrix::from_fn(n, n, |i, j| params.cov_rows(&xs[i], true, &xs[j], true, i == j));
        let l = k.cholesky().unwrap().unpack();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        (l * z).iter().map(|v| v + params.mu()).collect()
    }

    #[test]
    fn optimum_beats_truth() {
        let truth = Hyperparams::single(1.0, 2.0, LengthscaleParams::from_rates(vec![8.0]).unwrap(), 0.01).unwrap();
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 + 0.5) / 40.0]).collect();
        let ys = draw(&truth, &xs, 3);
        let data: Vec<Observation> = xs.into_iter().zip(ys).map(|(x, y)| Observation::physical(x, y)).collect();
        let model = fit_mle(&data, f64::INFINITY, ModelMode::Standard, &FitConfig::default()).unwrap();
        let fitted = censored_loglik(model.params(), &data, f64::INFINITY).unwrap();
        let at_truth = censored_loglik(&truth, &data, f64::INFINITY).unwrap();
        assert!(fitted >= at_truth, "{fitted} < {at_truth}");
    }

    #[test]
    fn seeded_fit_repeats() {
        let data: Vec<Observation> = (0..8)
            .map(|i| {
                let x = i as f64 / 7.0;
                Observation::physical(vec![x], (6.0 * x).sin())
            })
            .collect();
        let cfg = FitConfig {
            seed: 11,
            ..FitConfig::default()
        };
        let a = fit_mle(&data, f64::INFINITY, ModelMode::Standard, &cfg).unwrap();
        let b = fit_mle(&data, f64::INFINITY, ModelMode::Standard, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn empty_data_rejected() {
        assert!(fit_mle(&[], 1.0, ModelMode::Standard, &FitConfig::default()).is_err());
    }
}
