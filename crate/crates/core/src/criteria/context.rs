use nalgebra::{DMatrix, DVector};

use super::{h_adjust, CriterionEval, CriterionOptions, HcCorner, HcMatrix, ImseVariant, Integration};
use crate::gpmodel::{predict, FittedModel};
use crate::kernels::lambda_entry;
use crate::normal;
use crate::tmvn::{self, MvnSpec, TruncatedMoments};
use crate::{Error, Result};

// below this lambda is treated as zero, above one minus it as one
const LAMBDA_EPS: f64 = 1e-10;

/// Model-level quantities shared by every candidate scored against one model.
pub struct CriterionContext<'a> {
    model: &'a FittedModel,
    opts: CriterionOptions,
    // integrated outer product of the data covariance vectors
    lambda_n: DMatrix<f64>,
    // Gamma^-1 restricted to the censored columns
    gamma_inv_c: DMatrix<f64>,
    // K_OO^-1 (y_o - mu)
    alpha_o: DVector<f64>,
    sigma_bar2: f64,
    quad: Option<QuadCache>,
}

struct QuadCache {
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    // covariance vectors of the mean response at each node, one row per node
    gam: DMatrix<f64>,
}

// Variance of the conditional mean of the latent rows S = C + {new}, with
// what is needed to map it back onto the integrated variance.
struct Reduction {
    h_s: DMatrix<f64>,
    lambda: f64,
    y_gt: f64,
    y_lt: f64,
    // Gamma^-1 g and the Schur complement v - g' Gamma^-1 g for the new row
    a: DVector<f64>,
    d2: f64,
}

impl<'a> CriterionContext<'a> {
    pub fn new(model: &'a FittedModel, opts: CriterionOptions) -> Result<Self> {
        let n = model.n();
        let n_o = model.n_observed();
        let n_c = model.n_censored();
        let params = model.params();
        let pts = model.points();
        let phys = model.physical();

        let lambda_n = DMatrix::from_fn(n, n, |i, j| lambda_entry(&pts[i], phys[i], &pts[j], phys[j], params));
        let gamma_inv_c = match model.chol() {
            Some(ch) => {
                let mut e = DMatrix::zeros(n, n_c);
                for k in 0..n_c {
                    e[(n_o + k, k)] = 1.0;
                }
                ch.solve(&e)
            }
            None => DMatrix::zeros(0, 0),
        };
        let alpha_o = match model.chol_obs() {
            Some(ch) => ch.solve(&model.observed_residuals()),
            None => DVector::zeros(0),
        };

        let mut ctx = Self {
            model,
            opts,
            lambda_n,
            gamma_inv_c,
            alpha_o,
            sigma_bar2: 0.0,
            quad: None,
        };
        ctx.sigma_bar2 = match ctx.opts.integration.clone() {
            Integration::ClosedForm => ctx.closed_form_sigma_bar2(),
            Integration::Quadrature(cub) => {
                let (nodes, weights) = cub.rule(model.dim())?;
                let gam = DMatrix::from_fn(nodes.len(), n, |q, i| params.cov_latent(&nodes[q], &pts[i], phys[i]));
                let var_now = nodes
                    .iter()
                    .map(|x| predict(model, x).map(|p| p.var))
                    .collect::<Result<Vec<_>>>()?;
                let total = weights.iter().zip(&var_now).map(|(w, v)| w * v).sum();
                ctx.quad = Some(QuadCache { nodes, weights, gam });
                total
            }
        };
        Ok(ctx)
    }

    pub fn model(&self) -> &FittedModel {
        self.model
    }

    pub fn options(&self) -> &CriterionOptions {
        &self.opts
    }

    /// Integrated predictive variance of the current model.
    pub fn sigma_bar2(&self) -> f64 {
        self.sigma_bar2
    }

    fn closed_form_sigma_bar2(&self) -> f64 {
        let prior = self.model.params().prior_variance();
        let Some(ch) = self.model.chol() else {
            return prior;
        };
        let b = ch.solve(&self.lambda_n);
        let mut v = prior - b.trace();
        if self.model.n_censored() > 0 {
            let inner = self.gamma_inv_c.transpose() * &self.lambda_n * &self.gamma_inv_c;
            v += (self.model.sigma_c() * inner).trace();
        }
        v
    }

    fn gamma_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self.model.chol() {
            Some(ch) => ch.solve(b),
            None => b.clone(),
        }
    }

    fn check_candidate(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.model.dim() {
            return Err(Error::Argument(format!(
                "candidate of dimension {} for a {}-dimensional model",
                x.len(),
                self.model.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite candidate".into()));
        }
        Ok(())
    }

    // new-row quantities shared by every path
    fn new_row(&self, x: &[f64]) -> Result<(DVector<f64>, f64, DVector<f64>, f64)> {
        let g = self.model.row_cov(x);
        let v = self.model.row_var(x);
        let a = self.gamma_solve(&g);
        let d2 = v - g.dot(&a);
        if !(d2 > 0.0) {
            return Err(Error::numerical(format!(
                "new row is linearly dependent on the data (Schur complement {d2:e})"
            )));
        }
        Ok((g, v, a, d2))
    }

    /// ICMSE with the censoring probability of both the data and the new run.
    pub fn icmse(&self, x: &[f64]) -> Result<CriterionEval> {
        self.check_candidate(x)?;
        let r = self.reduction(x, self.model.censor_limit())?;
        self.finish(x, &r)
    }

    /// ICMSE for a model without censored rows, with censoring limit `c` for
    /// the new run. Uses the scalar censoring adjustment.
    pub fn icmse_nocensor(&self, x: &[f64], c: f64) -> Result<CriterionEval> {
        self.check_candidate(x)?;
        if self.model.n_censored() > 0 {
            return Err(Error::Mode("model has censored rows".into()));
        }
        if c.is_nan() {
            return Err(Error::Argument("censoring limit is NaN".into()));
        }
        let (g, _, a, d2) = self.new_row(x)?;
        // with nothing censored d2 is also the predictive variance of the new response
        let m = self.model.params().mu() + g.dot(&self.alpha_o);
        let z = (c - m) / d2.sqrt();
        let h = h_adjust(z);
        let r = Reduction {
            h_s: DMatrix::from_element(1, 1, h * d2),
            lambda: normal::sf(z),
            y_gt: f64::NAN,
            y_lt: f64::NAN,
            a,
            d2,
        };
        self.finish(x, &r)
    }

    /// IMSE baselines.
    pub fn imse(&self, x: &[f64], variant: ImseVariant) -> Result<CriterionEval> {
        self.check_candidate(x)?;
        match variant {
            ImseVariant::Impute => {
                if self.model.n_censored() > 0 {
                    return Err(Error::Mode(
                        "IMSE-Impute needs a model with censored values imputed at the limit".into(),
                    ));
                }
                let mut e = self.icmse_nocensor(x, f64::INFINITY)?;
                e.lambda = 0.0;
                Ok(e)
            }
            ImseVariant::Cen => {
                // linear update of the censored-model posterior by an exact run:
                // H = u u' / V with u = Cov(y_S, Y_new) and V = Var(Y_new)
                let n_o = self.model.n_observed();
                let n_c = self.model.n_censored();
                let (_, _, a, d2) = self.new_row(x)?;
                let a_c = a.rows(n_o, n_c).into_owned();
                let sa = self.model.sigma_c() * &a_c;
                let var = d2 + a_c.dot(&sa);
                let mut u = DVector::zeros(n_c + 1);
                u.rows_mut(0, n_c).copy_from(&sa);
                u[n_c] = var;
                let r = Reduction {
                    h_s: &u * u.transpose() / var,
                    lambda: 0.0,
                    y_gt: f64::NAN,
                    y_lt: f64::NAN,
                    a,
                    d2,
                };
                self.finish(x, &r)
            }
        }
    }

    /// `H_c` embedded in the full row layout: observed rows, censored rows,
    /// then the new run.
    pub fn hc_matrix(&self, x: &[f64]) -> Result<HcMatrix> {
        self.check_candidate(x)?;
        let r = self.reduction(x, self.model.censor_limit())?;
        let n = self.model.n();
        let n_o = self.model.n_observed();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        let d = r.h_s.nrows();
        m.view_mut((n_o, n_o), (d, d)).copy_from(&r.h_s);
        Ok(HcMatrix {
            matrix: m,
            lambda: r.lambda,
            y_gt: r.y_gt,
            y_lt: r.y_lt,
        })
    }

    // Builds H_S. A censoring limit of +inf for the new run means the run is
    // always observed.
    fn reduction(&self, x: &[f64], c_new: f64) -> Result<Reduction> {
        let model = self.model;
        let n_o = model.n_observed();
        let n_c = model.n_censored();
        let c = model.censor_limit();
        let mu = model.params().mu();
        let seed = self.opts.seed;
        let qmc = self.opts.qmc.unwrap_or_else(|| model.qmc());
        let (g, v, a, d2) = self.new_row(x)?;

        // law of (y_C, Y_new) given y_O
        let g_o = g.rows(0, n_o).into_owned();
        let g_c = g.rows(n_o, n_c).into_owned();
        let (m_c, s_cc) = model.censored_conditional();
        let (m_n, s_nn, s_cn) = match model.chol_obs() {
            Some(ch) => {
                let k_inv_g = ch.solve(&g_o);
                (mu + g_o.dot(&self.alpha_o), v - g_o.dot(&k_inv_g), &g_c - model.w_c().transpose() * &g_o)
            }
            None => (mu, v, g_c.clone()),
        };
        if !(s_nn > 0.0) {
            return Err(Error::numerical(format!("conditional variance {s_nn:e} of the new run")));
        }
        let d = n_c + 1;
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        mean.rows_mut(0, n_c).copy_from(m_c);
        mean[n_c] = m_n;
        cov.view_mut((0, 0), (n_c, n_c)).copy_from(s_cc);
        cov.view_mut((0, n_c), (n_c, 1)).copy_from(&s_cn);
        cov.view_mut((n_c, 0), (1, n_c)).copy_from(&s_cn.transpose());
        cov[(n_c, n_c)] = s_nn;

        // branch where the new run is censored: only its probability and mean
        let (ln_pa, mean_gt) = if c_new == f64::INFINITY {
            (f64::NEG_INFINITY, DVector::from_element(d, f64::INFINITY))
        } else {
            let lower = vec![c; n_c].into_iter().chain([c_new]).collect::<Vec<_>>();
            match truncate(&mean, &cov, &lower, qmc, seed, false) {
                Ok(t) => (t.ln_prob, t.mean),
                Err(Error::DegenerateTruncation { .. }) => {
                    let t = tmvn::trunc_univariate(m_n, s_nn, c_new)?;
                    let mut m = mean.clone();
                    m[n_c] = t.mean[0];
                    (f64::NEG_INFINITY, m)
                }
                Err(e) => return Err(e),
            }
        };
        let y_gt = mean_gt[n_c].max(c_new);

        // branch where it is observed, as (y_C, -Y_new) truncated below
        let mut mean_b = mean.clone();
        mean_b[n_c] = -m_n;
        let mut cov_b = cov.clone();
        for k in 0..n_c {
            cov_b[(k, n_c)] = -cov[(k, n_c)];
            cov_b[(n_c, k)] = -cov[(n_c, k)];
        }
        let lower_b = vec![c; n_c].into_iter().chain([-c_new]).collect::<Vec<_>>();
        let tb = match truncate(&mean_b, &cov_b, &lower_b, qmc, seed, true) {
            Ok(t) => t,
            Err(Error::DegenerateTruncation { .. }) => {
                // the new run is censored almost surely: no reduction
                return Ok(Reduction {
                    h_s: DMatrix::zeros(d, d),
                    lambda: 1.0,
                    y_gt,
                    y_lt: c_new,
                    a,
                    d2,
                });
            }
            Err(e) => return Err(e),
        };
        let lambda = if ln_pa == f64::NEG_INFINITY {
            0.0
        } else {
            1.0 / (1.0 + (tb.ln_prob - ln_pa).exp())
        };
        let y_lt = (-tb.mean[n_c]).min(c_new);
        if lambda > 1.0 - LAMBDA_EPS {
            return Ok(Reduction {
                h_s: DMatrix::zeros(d, d),
                lambda,
                y_gt,
                y_lt,
                a,
                d2,
            });
        }
        let lam = if lambda < LAMBDA_EPS { 0.0 } else { lambda };

        let mut sigma1 = tb.cov;
        for k in 0..n_c {
            sigma1[(k, n_c)] = -sigma1[(k, n_c)];
            sigma1[(n_c, k)] = -sigma1[(n_c, k)];
        }

        // plug-in: censored block given the new response fixed at y_lt
        let mut h_s = sigma1;
        if n_c > 0 {
            let shift = (y_lt - m_n) / s_nn;
            let m_hat = m_c + &s_cn * shift;
            let mut s_hat = s_cc - &s_cn * s_cn.transpose() / s_nn;
            s_hat = (&s_hat + s_hat.transpose()) * 0.5;
            let t_hat = truncate(&m_hat, &s_hat, &vec![c; n_c], qmc, seed, true)?;
            let mut block = h_s.view_mut((0, 0), (n_c, n_c));
            block -= &t_hat.cov;
        }
        h_s *= 1.0 - lam;
        if lam > 0.0 {
            let w = lam * (1.0 - lam);
            match self.opts.corner {
                HcCorner::FullOuter => {
                    let mut delta = DVector::zeros(d);
                    for k in 0..n_c {
                        delta[k] = mean_gt[k] - tb.mean[k];
                    }
                    delta[n_c] = y_gt - y_lt;
                    h_s += &delta * delta.transpose() * w;
                }
                HcCorner::SquaredDiff => h_s[(n_c, n_c)] += w * (y_gt - y_lt).powi(2),
                HcCorner::Product => h_s[(n_c, n_c)] += w * y_gt * y_lt,
            }
        }
        Ok(Reduction {
            h_s,
            lambda,
            y_gt,
            y_lt,
            a,
            d2,
        })
    }

    // Columns of Gamma_{n+1}^-1 for the rows in S, by the bordered inverse.
    fn x_s(&self, r: &Reduction) -> DMatrix<f64> {
        let n = self.model.n();
        let n_o = self.model.n_observed();
        let d = r.h_s.nrows();
        let n_c = d - 1;
        let mut xs = DMatrix::zeros(n + 1, d);
        for k in 0..n_c {
            let j = n_o + k;
            let aj = r.a[j];
            let mut col = xs.column_mut(k);
            col.rows_mut(0, n).copy_from(&(self.gamma_inv_c.column(k) + &r.a * (aj / r.d2)));
            col[n] = -aj / r.d2;
        }
        let mut last = xs.column_mut(n_c);
        last.rows_mut(0, n).copy_from(&(-&r.a / r.d2));
        last[n] = 1.0 / r.d2;
        xs
    }

    fn finish(&self, x: &[f64], r: &Reduction) -> Result<CriterionEval> {
        let trace_term = if r.h_s.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            let xs = self.x_s(r);
            match &self.quad {
                None => self.trace_closed_form(x, &xs, &r.h_s),
                Some(q) => self.trace_quadrature(q, x, &xs, &r.h_s),
            }
        };
        if !trace_term.is_finite() {
            return Err(Error::numerical("non-finite variance reduction"));
        }
        let include = self.opts.include_constant;
        Ok(CriterionEval {
            value: if include { self.sigma_bar2 - trace_term } else { -trace_term },
            lambda: r.lambda,
            trace_term,
            constant_included: include,
        })
    }

    // tr(H_S X_S' Lambda_{n+1} X_S)
    fn trace_closed_form(&self, x: &[f64], xs: &DMatrix<f64>, h_s: &DMatrix<f64>) -> f64 {
        let model = self.model;
        let params = model.params();
        let n = model.n();
        let pts = model.points();
        let phys = model.physical();
        let lam_new = DVector::from_fn(n, |i, _| lambda_entry(x, true, &pts[i], phys[i], params));
        let lam_nn = lambda_entry(x, true, x, true, params);
        let top = xs.rows(0, n);
        let bottom = xs.row(n);
        let mut lx = &self.lambda_n * top + &lam_new * bottom;
        let last = lam_new.transpose() * top + bottom * lam_nn;
        lx = lx.insert_row(n, 0.0);
        lx.row_mut(n).copy_from(&last);
        let m = xs.transpose() * lx;
        h_s.component_mul(&m.transpose()).sum()
    }

    fn trace_quadrature(&self, q: &QuadCache, x: &[f64], xs: &DMatrix<f64>, h_s: &DMatrix<f64>) -> f64 {
        let params = self.model.params();
        let n = self.model.n();
        let top = xs.rows(0, n);
        // u = X_S' gamma_{n+1}(node), one row per node
        let mut u = &q.gam * top;
        for (qi, node) in q.nodes.iter().enumerate() {
            let gn = params.cov_latent(node, x, true);
            for k in 0..u.ncols() {
                u[(qi, k)] += gn * xs[(n, k)];
            }
        }
        let uh = &u * h_s;
        let mut total = 0.0;
        for qi in 0..q.nodes.len() {
            total += q.weights[qi] * u.row(qi).dot(&uh.row(qi));
        }
        total
    }
}

fn truncate(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    lower: &[f64],
    qmc: tmvn::QmcConfig,
    seed: u64,
    second: bool,
) -> Result<TruncatedMoments> {
    let spec = MvnSpec::new(mean.clone(), cov.clone())?;
    if second {
        tmvn::trunc_moments_with(&spec, lower, qmc, seed)
    } else {
        tmvn::trunc_mean_with(&spec, lower, qmc, seed)
    }
}

fn reporting(integration: Integration, seed: u64) -> CriterionOptions {
    CriterionOptions {
        integration,
        include_constant: true,
        corner: HcCorner::default(),
        seed,
        qmc: None,
    }
}

/// `H_c` for a candidate, with the model's censoring limit.
pub fn hc_matrix(model: &FittedModel, x_next: &[f64], seed: u64) -> Result<HcMatrix> {
    if model.mode() == crate::gpmodel::ModelMode::Standard {
        return Err(Error::Mode("H_c needs a censored model".into()));
    }
    CriterionContext::new(model, reporting(Integration::ClosedForm, seed))?.hc_matrix(x_next)
}

/// ICMSE with the scalar censoring adjustment, for models without censored rows.
pub fn icmse_nocensor_training(
    model: &FittedModel,
    x_next: &[f64],
    c: f64,
    integration: Integration,
) -> Result<CriterionEval> {
    if model.n_censored() > 0 {
        return Err(Error::Mode("model has censored rows".into()));
    }
    CriterionContext::new(model, reporting(integration, 0))?.icmse_nocensor(x_next, c)
}

/// ICMSE for any fitted model, including the integrated current variance.
pub fn icmse_general(
    model: &FittedModel,
    x_next: &[f64],
    integration: Integration,
    seed: u64,
) -> Result<CriterionEval> {
    CriterionContext::new(model, reporting(integration, seed))?.icmse(x_next)
}

/// IMSE baselines, including the integrated current variance.
pub fn imse_baseline(
    model: &FittedModel,
    x_next: &[f64],
    variant: ImseVariant,
    integration: Integration,
) -> Result<CriterionEval> {
    CriterionContext::new(model, reporting(integration, 0))?.imse(x_next, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpmodel::{Hyperparams, ModelMode, Observation};
    use crate::kernels::LengthscaleParams;
    use crate::quadrature::Cubature;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(p: usize, rate: f64, eps: f64) -> Hyperparams {
        Hyperparams::single(0.2, 1.3, LengthscaleParams::isotropic(p, rate).unwrap(), eps).unwrap()
    }

    fn quad() -> Integration {
        Integration::Quadrature(Cubature::Tensor { nodes: 16, panels: 8 })
    }

    // Integrated variance after adding an exactly observed run at x, by
    // refitting a standard model on the augmented data and integrating its
    // predictive variance numerically.
    fn augmented_imse(params: &Hyperparams, data: &[Observation], x: &[f64]) -> f64 {
        let mut aug = data.to_vec();
        aug.push(Observation::physical(x.to_vec(), 0.0));
        let m = FittedModel::new(params.clone(), aug, f64::INFINITY, ModelMode::Standard).unwrap();
        let (nodes, w) = Cubature::Tensor { nodes: 16, panels: 8 }.rule(x.len()).unwrap();
        nodes.iter().zip(&w).map(|(q, w)| w * predict(&m, q).unwrap().var).sum()
    }

    fn three_point_1d() -> (Hyperparams, Vec<Observation>) {
        let params = single(1, 12.0, 0.01);
        let data = vec![
            Observation::physical(vec![0.1], 0.3),
            Observation::physical(vec![0.45], -0.2),
            Observation::physical(vec![0.8], 0.9),
        ];
        (params, data)
    }

    #[test]
    fn infinite_limit_is_classical_imse() {
        let (params, data) = three_point_1d();
        let model = FittedModel::new(params.clone(), data.clone(), f64::INFINITY, ModelMode::Standard).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = [rng.random::<f64>()];
            let e = icmse_nocensor_training(&model, &x, f64::INFINITY, Integration::ClosedForm).unwrap();
            let imse = imse_baseline(&model, &x, ImseVariant::Impute, Integration::ClosedForm).unwrap();
            assert!((e.value - imse.value).abs() < 1e-8);
            assert_eq!(e.lambda, 0.0);
            let oracle = augmented_imse(&params, &data, &x);
            assert!((e.value - oracle).abs() < 1e-7 * oracle.abs().max(1.0), "{} vs {oracle}", e.value);
        }
    }

    #[test]
    fn low_limit_gives_no_reduction() {
        let (params, data) = three_point_1d();
        let model = FittedModel::new(params, data, f64::INFINITY, ModelMode::Standard).unwrap();
        let ctx = CriterionContext::new(&model, reporting(Integration::ClosedForm, 0)).unwrap();
        let e = ctx.icmse_nocensor(&[0.3], -50.0).unwrap();
        assert!(e.trace_term.abs() < 1e-12);
        assert!((e.value - ctx.sigma_bar2()).abs() < 1e-12);
        assert!(e.lambda > 1.0 - 1e-12);
    }

    #[test]
    fn closed_form_matches_quadrature_without_censoring() {
        let (params, data) = three_point_1d();
        let model = FittedModel::new(params, data, f64::INFINITY, ModelMode::Standard).unwrap();
        for &x in &[0.0, 0.27, 0.6, 0.99] {
            let a = icmse_nocensor_training(&model, &[x], 0.5, Integration::ClosedForm).unwrap();
            let b = icmse_nocensor_training(&model, &[x], 0.5, quad()).unwrap();
            assert!((a.value - b.value).abs() < 1e-6 * a.value.abs(), "{} vs {}", a.value, b.value);
        }
    }

    fn random_censored_model(rng: &mut ChaCha8Rng, p: usize, n: usize, bi: bool) -> FittedModel {
        let c = 0.4;
        let rate = rng.random_range(3.0..15.0);
        let params = if bi {
            Hyperparams::bi(
                0.0,
                1.0,
                LengthscaleParams::isotropic(p, rate).unwrap(),
                0.2,
                LengthscaleParams::isotropic(p, 2.0).unwrap(),
                0.01,
            )
            .unwrap()
        } else {
            single(p, rate, 0.02)
        };
        let mut data = Vec::new();
        let mut n_c = 0;
        for i in 0..n {
            let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let y: f64 = x.iter().map(|v| (4.0 * v).sin()).sum::<f64>() * 0.6;
            if y >= c && n_c < 2 {
                data.push(Observation::censored(x, c));
                n_c += 1;
            } else if bi && i % 2 == 0 {
                data.push(Observation::computer(x, y + 0.1));
            } else {
                data.push(Observation::physical(x, y.min(c - 1e-3)));
            }
        }
        if n_c == 0 {
            data.push(Observation::censored(vec![0.35; p], c));
        }
        let mode = if bi { ModelMode::CensoredBiFidelity } else { ModelMode::CensoredSingle };
        FittedModel::new(params, data, c, mode).unwrap()
    }

    #[test]
    fn trace_path_matches_quadrature_with_censoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..10 {
            let p = 1 + k % 2;
            let model = random_censored_model(&mut rng, p, 5 + k % 3, k % 3 == 2);
            let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let a = icmse_general(&model, &x, Integration::ClosedForm, 5).unwrap();
            let b = icmse_general(&model, &x, quad(), 5).unwrap();
            assert!((a.value - b.value).abs() < 1e-6 * a.value.abs(), "case {k}: {} vs {}", a.value, b.value);
            assert!((a.trace_term - b.trace_term).abs() < 1e-6 * a.value.abs());
            assert_eq!(a.lambda, b.lambda);
        }
    }

    #[test]
    fn general_path_reduces_to_scalar_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let params = single(1, rng.random_range(2.0..20.0), 0.01);
            let data: Vec<_> = (0..4)
                .map(|i| Observation::physical(vec![0.2 * i as f64 + rng.random_range(0.0..0.1)], rng.random::<f64>() - 0.5))
                .collect();
            let c = rng.random_range(-0.5..1.0);
            let model = FittedModel::new(params, data, c, ModelMode::CensoredSingle).unwrap();
            for &x in &[0.05, 0.5, 0.93] {
                let a = icmse_general(&model, &[x], Integration::ClosedForm, 0).unwrap();
                let b = icmse_nocensor_training(&model, &[x], c, Integration::ClosedForm).unwrap();
                assert!((a.value - b.value).abs() < 1e-8, "{} vs {}", a.value, b.value);
                assert!((a.lambda - b.lambda).abs() < 1e-12);
            }
            // infinite limit: H path with lambda = 0 is classical IMSE
            let model_inf =
                FittedModel::new(model.params().clone(), model.data().to_vec(), f64::INFINITY, ModelMode::CensoredSingle)
                    .unwrap();
            let a = icmse_general(&model_inf, &[0.4], Integration::ClosedForm, 0).unwrap();
            let b = imse_baseline(&model_inf, &[0.4], ImseVariant::Impute, Integration::ClosedForm).unwrap();
            assert!((a.value - b.value).abs() < 1e-8);
        }
    }

    #[test]
    fn far_candidate_lambda_is_prior_tail() {
        let params = Hyperparams::single(0.0, 1.0, LengthscaleParams::isotropic(1, 400.0).unwrap(), 0.04).unwrap();
        let c = 0.3;
        let data = vec![Observation::censored(vec![0.05], c), Observation::physical(vec![0.1], -0.4)];
        let model = FittedModel::new(params, data, c, ModelMode::CensoredSingle).unwrap();
        let hc = hc_matrix(&model, &[0.95], 1).unwrap();
        let prior_tail = normal::sf(c / (1.0f64 + 0.04).sqrt());
        assert!((hc.lambda - prior_tail).abs() < 5e-3, "{} vs {prior_tail}", hc.lambda);
        assert!(hc.y_gt >= c && hc.y_lt <= c);
    }

    #[test]
    fn observed_block_of_hc_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_censored_model(&mut rng, 1, 6, false);
        let hc = hc_matrix(&model, &[0.61], 0).unwrap();
        let n_o = model.n_observed();
        let n = model.n();
        assert_eq!(hc.matrix.nrows(), n + 1);
        for i in 0..=n {
            for j in 0..=n {
                if i < n_o || j < n_o {
                    assert_eq!(hc.matrix[(i, j)], 0.0);
                }
            }
        }
        assert!((hc.matrix.clone() - hc.matrix.transpose()).amax() < 1e-12);
        assert!((0.0..=1.0).contains(&hc.lambda));
    }

    #[test]
    fn censored_branch_damps_reduction() {
        // censored run at 0.5; candidates near it are likely censored
        let params = single(1, 20.0, 0.01);
        let c = 0.5;
        let data = vec![
            Observation::physical(vec![0.1], -0.3),
            Observation::censored(vec![0.5], c),
            Observation::physical(vec![0.9], 0.1),
        ];
        let model = FittedModel::new(params, data, c, ModelMode::CensoredSingle).unwrap();
        let ctx = CriterionContext::new(&model, reporting(Integration::ClosedForm, 0)).unwrap();
        for &x in &[0.35, 0.45, 0.55, 0.62] {
            let full = ctx.icmse(&[x]).unwrap();
            let cen = ctx.imse(&[x], ImseVariant::Cen).unwrap();
            assert!(full.lambda > 0.05);
            assert!(cen.value < full.value, "x = {x}: {} vs {}", cen.value, full.value);
        }
    }

    #[test]
    fn imse_favors_empty_regions() {
        let params = single(1, 10.0, 1e-4);
        let data = vec![Observation::physical(vec![0.1], 0.0), Observation::physical(vec![0.2], 0.1)];
        let model = FittedModel::new(params, data, f64::INFINITY, ModelMode::Standard).unwrap();
        let grid: Vec<f64> = (0..12).map(|i| 0.22 + 0.04 * i as f64).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&x| imse_baseline(&model, &[x], ImseVariant::Impute, Integration::ClosedForm).unwrap().value)
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0], "{vals:?}");
        }
    }

    #[test]
    fn zero_discrepancy_bifidelity_collapses() {
        let ls = LengthscaleParams::isotropic(2, 6.0).unwrap();
        let bi = Hyperparams::bi(0.1, 1.0, ls.clone(), 0.0, ls.clone(), 0.0).unwrap();
        let sf = Hyperparams::single(0.1, 1.0, ls, 0.0).unwrap();
        let pts = [[0.1, 0.2], [0.7, 0.3], [0.4, 0.9], [0.8, 0.8]];
        let bi_data: Vec<_> = pts
            .iter()
            .enumerate()
            .map(|(i, x)| if i < 2 { Observation::computer(x.to_vec(), 0.3) } else { Observation::physical(x.to_vec(), -0.1) })
            .collect();
        let sf_data: Vec<_> = pts.iter().map(|x| Observation::physical(x.to_vec(), 0.0)).collect();
        let mb = FittedModel::new(bi, bi_data, f64::INFINITY, ModelMode::CensoredBiFidelity).unwrap();
        let ms = FittedModel::new(sf, sf_data, f64::INFINITY, ModelMode::Standard).unwrap();
        for x in [[0.5, 0.5], [0.05, 0.95]] {
            let a = imse_baseline(&mb, &x, ImseVariant::Impute, Integration::ClosedForm).unwrap();
            let b = imse_baseline(&ms, &x, ImseVariant::Impute, Integration::ClosedForm).unwrap();
            assert!((a.value - b.value).abs() < 1e-10);
        }
    }

    #[test]
    fn same_seed_same_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = random_censored_model(&mut rng, 2, 8, false);
        let a = icmse_general(&model, &[0.3, 0.7], Integration::ClosedForm, 42).unwrap();
        let b = icmse_general(&model, &[0.3, 0.7], Integration::ClosedForm, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corner_forms_agree_without_censored_rows() {
        let (params, data) = three_point_1d();
        let model = FittedModel::new(params, data, 0.4, ModelMode::CensoredSingle).unwrap();
        let mut opts = reporting(Integration::ClosedForm, 0);
        let full = CriterionContext::new(&model, opts.clone()).unwrap().icmse(&[0.6]).unwrap();
        opts.corner = HcCorner::SquaredDiff;
        let sq = CriterionContext::new(&model, opts.clone()).unwrap().icmse(&[0.6]).unwrap();
        opts.corner = HcCorner::Product;
        let pr = CriterionContext::new(&model, opts).unwrap().icmse(&[0.6]).unwrap();
        assert!((full.value - sq.value).abs() < 1e-14);
        assert!(full.lambda > 0.01);
        assert!((full.value - pr.value).abs() > 1e-6);
    }

    #[test]
    fn impute_rejects_censored_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_censored_model(&mut rng, 1, 5, false);
        assert!(matches!(
            imse_baseline(&model, &[0.5], ImseVariant::Impute, Integration::ClosedForm),
            Err(Error::Mode(_))
        ));
        assert!(matches!(
            icmse_nocensor_training(&model, &[0.5], 0.4, Integration::ClosedForm),
            Err(Error::Mode(_))
        ));
    }
}
