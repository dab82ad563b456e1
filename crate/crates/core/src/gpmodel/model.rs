use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{Hyperparams, ModelMode, Observation};
use crate::error::{Error, Result};
use crate::tmvn::{self, MvnSpec, QmcConfig};

/// Predictive mean and variance of the physical mean response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

impl Prediction {
    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Serialized form of a fitted model; factorizations are rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub params: Hyperparams,
    pub mode: ModelMode,
    #[serde(with = "limit_serde")]
    pub censor_limit: f64,
    pub data: Vec<Observation>,
    pub qmc: QmcConfig,
    pub seed: u64,
}

/// An infinite censoring limit is written as `null`.
pub mod limit_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Hyperparameters plus data, with the covariance factorization and the
/// truncated moments of the censored block cached for prediction and
/// criterion evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "ModelSnapshot", try_from = "ModelSnapshot")]
pub struct FittedModel {
    params: Hyperparams,
    mode: ModelMode,
    censor_limit: f64,
    data: Vec<Observation>,
    qmc: QmcConfig,
    seed: u64,

    points: Vec<Vec<f64>>,
    physical: Vec<bool>,
    n_obs: usize,
    chol: Option<Cholesky<f64, Dyn>>,
    chol_obs: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    w_c: DMatrix<f64>,
    cond_mean_c: DVector<f64>,
    cond_cov_c: DMatrix<f64>,
    yc_hat: DVector<f64>,
    sigma_c: DMatrix<f64>,
}

impl From<FittedModel> for ModelSnapshot {
    fn from(m: FittedModel) -> Self {
        m.snapshot()
    }
}

impl TryFrom<ModelSnapshot> for FittedModel {
    type Error = Error;

    fn try_from(s: ModelSnapshot) -> Result<Self> {
        FittedModel::with_options(s.params, s.data, s.censor_limit, s.mode, s.qmc, s.seed)
    }
}

/// Cholesky factor, retrying with `1e-8 * mean(diag)` jitter up to twice.
pub(crate) fn robust_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let jitter = 1e-8 * m.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    let mut a = m.clone();
    for _ in 0..2 {
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(c) = a.clone().cholesky() {
            return Ok(c);
        }
    }
    Err(Error::Numerical {
        message: format!("{n}x{n} covariance matrix is not positive definite"),
        condition: Some(crate::tmvn::condition_estimate(m)),
    })
}

fn order_key(o: &Observation) -> u8 {
    if o.censored {
        2
    } else if o.fidelity.is_physical() {
        1
    } else {
        0
    }
}

impl FittedModel {
    pub fn new(params: Hyperparams, data: Vec<Observation>, censor_limit: f64, mode: ModelMode) -> Result<Self> {
        Self::with_options(params, data, censor_limit, mode, QmcConfig::default(), 0)
    }

    /// `qmc` and `seed` control the truncated-moment integration of the
    /// censored block.
    pub fn with_options(
        params: Hyperparams,
        mut data: Vec<Observation>,
        censor_limit: f64,
        mode: ModelMode,
        qmc: QmcConfig,
        seed: u64,
    ) -> Result<Self> {
        if censor_limit.is_nan() {
            return Err(Error::Argument("censoring limit is NaN".into()));
        }
        let p = params.dim();
        for (i, o) in data.iter().enumerate() {
            if o.x.len() != p {
                return Err(Error::Argument(format!(
                    "observation {i} has dimension {} but the model has {p}",
                    o.x.len()
                )));
            }
            o.validate(censor_limit)?;
        }
        match mode {
            ModelMode::Standard if data.iter().any(|o| o.censored) => {
                return Err(Error::Mode("standard model given censored observations".into()))
            }
            ModelMode::Standard | ModelMode::CensoredSingle if params.is_bifidelity() => {
                return Err(Error::Mode("single-fidelity model given bi-fidelity parameters".into()))
            }
            ModelMode::CensoredBiFidelity if !params.is_bifidelity() => {
                return Err(Error::Mode("bi-fidelity model given single-fidelity parameters".into()))
            }
            _ => {}
        }
        data.sort_by_key(order_key);

        let n = data.len();
        let n_obs = data.iter().filter(|o| !o.censored).count();
        let n_c = n - n_obs;
        let points: Vec<Vec<f64>> = data.iter().map(|o| o.x.clone()).collect();
        let physical: Vec<bool> = data.iter().map(|o| o.fidelity.is_physical()).collect();
        let mu = params.mu();

        let gamma = DMatrix::from_fn(n, n, |i, j| {
            params.cov_rows(&points[i], physical[i], &points[j], physical[j], i == j)
        });
        let chol = if n > 0 { Some(robust_cholesky(&gamma)?) } else { None };
        let k_oo = gamma.view((0, 0), (n_obs, n_obs)).into_owned();
        let chol_obs = if n_obs > 0 { Some(robust_cholesky(&k_oo)?) } else { None };
        let y_o = DVector::from_iterator(n_obs, data[..n_obs].iter().map(|o| o.value - mu));

        let (w_c, cond_mean_c, cond_cov_c, yc_hat, sigma_c) = if n_c > 0 {
            let k_oc = gamma.view((0, n_obs), (n_obs, n_c)).into_owned();
            let k_cc = gamma.view((n_obs, n_obs), (n_c, n_c)).into_owned();
            let (w, m, s) = match &chol_obs {
                Some(co) => {
                    let w = co.solve(&k_oc);
                    let m = DVector::from_element(n_c, mu) + k_oc.transpose() * co.solve(&y_o);
                    let s = &k_cc - k_oc.transpose() * &w;
                    (w, m, (&s + s.transpose()) * 0.5)
                }
                None => (DMatrix::zeros(0, n_c), DVector::from_element(n_c, mu), k_cc),
            };
            let spec = MvnSpec::new(m.clone(), s.clone())?;
            let lower = vec![censor_limit; n_c];
            let t = tmvn::trunc_moments_with(&spec, &lower, qmc, seed).map_err(|e| match e {
                Error::DegenerateTruncation { prob } => Error::Fit {
                    message: format!("censored block has probability {prob:e} under the fitted model"),
                    best_loglik: f64::NEG_INFINITY,
                },
                other => other,
            })?;
            (w, m, s, t.mean, t.cov)
        } else {
            (
                DMatrix::zeros(n_obs, 0),
                DVector::zeros(0),
                DMatrix::zeros(0, 0),
                DVector::zeros(0),
                DMatrix::zeros(0, 0),
            )
        };

        let mut resid = DVector::zeros(n);
        resid.rows_mut(0, n_obs).copy_from(&y_o);
        for k in 0..n_c {
            resid[n_obs + k] = yc_hat[k] - mu;
        }
        let alpha = match &chol {
            Some(c) => c.solve(&resid),
            None => resid,
        };

        Ok(Self {
            params,
            mode,
            censor_limit,
            data,
            qmc,
            seed,
            points,
            physical,
            n_obs,
            chol,
            chol_obs,
            alpha,
            w_c,
            cond_mean_c,
            cond_cov_c,
            yc_hat,
            sigma_c,
        })
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            params: self.params.clone(),
            mode: self.mode,
            censor_limit: self.censor_limit,
            data: self.data.clone(),
            qmc: self.qmc,
            seed: self.seed,
        }
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn censor_limit(&self) -> f64 {
        self.censor_limit
    }

    /// Observations in model order: computer, observed physical, censored.
    pub fn data(&self) -> &[Observation] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn n_observed(&self) -> usize {
        self.n_obs
    }

    pub fn n_censored(&self) -> usize {
        self.data.len() - self.n_obs
    }

    pub fn yc_hat(&self) -> &DVector<f64> {
        &self.yc_hat
    }

    pub fn sigma_c(&self) -> &DMatrix<f64> {
        &self.sigma_c
    }

    pub fn qmc(&self) -> QmcConfig {
        self.qmc
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub(crate) fn physical(&self) -> &[bool] {
        &self.physical
    }

    pub(crate) fn chol(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.chol.as_ref()
    }

    pub(crate) fn chol_obs(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.chol_obs.as_ref()
    }

    /// `K_OO^-1 K_OC`
    pub(crate) fn w_c(&self) -> &DMatrix<f64> {
        &self.w_c
    }

    /// Mean and covariance of the latent censored responses given the
    /// observed ones.
    pub(crate) fn censored_conditional(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        (&self.cond_mean_c, &self.cond_cov_c)
    }

    /// Observed responses minus the prior mean.
    pub(crate) fn observed_residuals(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_obs,
            self.data[..self.n_obs].iter().map(|o| o.value - self.params.mu()),
        )
    }

    /// Covariances of the physical mean at `x` with every data row.
    pub(crate) fn latent_cov(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.points
                .iter()
                .zip(&self.physical)
                .map(|(xi, &pi)| self.params.cov_latent(x, xi, pi)),
        )
    }

    /// Covariances of a new noisy physical response at `x` with every data row.
    pub(crate) fn row_cov(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.points
                .iter()
                .zip(&self.physical)
                .map(|(xi, &pi)| self.params.cov_rows(x, true, xi, pi, false)),
        )
    }

    /// Prior variance of a new noisy physical response.
    pub(crate) fn row_var(&self, x: &[f64]) -> f64 {
        self.params.cov_rows(x, true, x, true, true)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Argument(format!(
                "point of dimension {} for a {}-dimensional model",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite prediction point".into()));
        }
        Ok(())
    }

    // general censored predictor, valid in every mode
    fn predict_general(&self, x: &[f64]) -> Result<Prediction> {
        self.check_point(x)?;
        let prior = self.params.prior_variance();
        let Some(chol) = &self.chol else {
            return Ok(Prediction {
                mean: self.params.mu(),
                var: prior,
            });
        };
        let g = self.latent_cov(x);
        let mean = self.params.mu() + g.dot(&self.alpha);
        let h = chol.solve(&g);
        let mut var = prior - g.dot(&h);
        let n_c = self.n_censored();
        if n_c > 0 {
            let hc = h.rows(self.n_obs, n_c);
            var += (hc.transpose() * &self.sigma_c * hc)[(0, 0)];
        }
        Ok(Prediction {
            mean,
            var: clamp_variance(var, prior)?,
        })
    }
}

pub(crate) fn clamp_variance(var: f64, scale: f64) -> Result<f64> {
    if var >= 0.0 {
        Ok(var)
    } else if var >= -1e-10 * scale.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numerical {
            message: format!("negative predictive variance {var:e}"),
            condition: None,
        })
    }
}

/// Kriging predictor for fully observed data.
pub fn predict_standard(model: &FittedModel, x_new: &[f64]) -> Result<Prediction> {
    if model.mode != ModelMode::Standard || model.n_censored() > 0 {
        return Err(Error::Mode("standard prediction needs a standard model".into()));
    }
    model.check_point(x_new)?;
    let p = &model.params;
    let Some(chol) = &model.chol else {
        return Ok(Prediction {
            mean: p.mu(),
            var: p.prior_variance(),
        });
    };
    let g = model.latent_cov(x_new);
    let y = DVector::from_iterator(model.n(), model.data.iter().map(|o| o.value - p.mu()));
    let mean = p.mu() + g.dot(&chol.solve(&y));
    let var = p.prior_variance() - g.dot(&chol.solve(&g));
    Ok(Prediction {
        mean,
        var: clamp_variance(var, p.prior_variance())?,
    })
}

/// Censored single-fidelity predictor.
pub fn predict_censored(model: &FittedModel, x_new: &[f64]) -> Result<Prediction> {
    if model.mode != ModelMode::CensoredSingle {
        return Err(Error::Mode(format!("censored prediction on a {:?} model", model.mode)));
    }
    model.predict_general(x_new)
}

/// Censored bi-fidelity predictor of the physical mean.
pub fn predict_bifidelity(model: &FittedModel, x_new: &[f64]) -> Result<Prediction> {
    if model.mode != ModelMode::CensoredBiFidelity {
        return Err(Error::Mode(format!("bi-fidelity prediction on a {:?} model", model.mode)));
    }
    model.predict_general(x_new)
}

/// Predictor matching the model's mode.
pub fn predict(model: &FittedModel, x_new: &[f64]) -> Result<Prediction> {
    match model.mode {
        ModelMode::Standard => predict_standard(model, x_new),
        _ => model.predict_general(x_new),
    }
}

/// Probability that a new physical run at `x` is censored, from the
/// predictive law of the noisy response: `1 - Phi((c - mean) / sqrt(var + sigma_eps^2))`.
pub fn censoring_probability(model: &FittedModel, x: &[f64]) -> Result<f64> {
    let c = model.censor_limit();
    let pred = predict(model, x)?;
    if c == f64::INFINITY {
        return Ok(0.0);
    }
    let sd = (pred.var + model.params.sigma2_eps()).sqrt();
    if sd == 0.0 {
        return Ok(if pred.mean >= c { 1.0 } else { 0.0 });
    }
    Ok(crate::normal::sf((c - pred.mean) / sd))
}

/// Physical-minus-computer prediction.
pub fn discrepancy_estimate(model_bi: &FittedModel, model_computer: &FittedModel, x: &[f64]) -> Result<f64> {
    Ok(predict(model_bi, x)?.mean - predict(model_computer, x)?.mean)
}
