//! Sequential design: initial space-filling designs, criterion optimization,
//! and the simulation harness that runs whole campaigns on benchmark
//! problems.

mod campaign;
pub mod maxpro;
pub mod sobol;
pub mod testfns;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionContext, CriterionEval, CriterionOptions, ImseVariant};
use crate::gpmodel::{censoring_probability, limit_serde, FittedModel};
use crate::optim::{nelder_mead, reflect_unit, NelderMeadOptions};
use crate::tmvn::QmcConfig;
use crate::{Error, Result};

pub use campaign::{
    benchmark_rows, run_benchmark, run_campaign_sim, run_campaign_sim_with, write_benchmark_csv, BenchmarkRow,
    BenchmarkRun,
    CampaignHistory, CustomProblem, Problem, ProposalRecord, ResponseFn, SimOptions, StepMetrics,
};
pub use maxpro::{equispaced, initial_design};
pub use sobol::sobol_points;

/// Nelder-Mead settings for criterion optimization.
pub const PROPOSAL_NM: NelderMeadOptions = NelderMeadOptions {
    max_iters: 200,
    x_tol: 1e-4,
    f_tol: 0.0,
};

/// Lattice size for truncated moments inside the proposal search.
pub const PROPOSAL_QMC: QmcConfig = QmcConfig::new(256, 4);

// initial simplex edge in the unit cube
const PROPOSAL_STEP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Icmse,
    ImseImpute,
    ImseCen,
    #[serde(rename = "seq_maxpro")]
    SeqMaxPro,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Icmse, Method::ImseImpute, Method::ImseCen, Method::SeqMaxPro];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Icmse => "icmse",
            Method::ImseImpute => "imse_impute",
            Method::ImseCen => "imse_cen",
            Method::SeqMaxPro => "seq_maxpro",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| Error::Argument(format!("unknown method {s:?}")))
    }
}

/// Settings of one sequential design run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub p: usize,
    pub n_ini: usize,
    pub n_seq: usize,
    /// Censoring limit; `null` in JSON means no censoring.
    #[serde(with = "limit_serde")]
    pub c: f64,
    /// Initial runs are computer runs and sequential runs are physical.
    pub bifidelity: bool,
    pub method: Method,
    pub restarts: usize,
    pub seed: u64,
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Argument("dimension must be positive".into()));
        }
        if self.n_ini < 2 {
            return Err(Error::Argument(format!("n_ini must be at least 2, got {}", self.n_ini)));
        }
        if self.restarts == 0 {
            return Err(Error::Argument("restarts must be at least 1".into()));
        }
        if self.c.is_nan() {
            return Err(Error::Argument("censoring limit is NaN".into()));
        }
        Ok(())
    }
}

// Scores candidates for one method against one fitted model.
struct Scorer<'a> {
    method: Method,
    ctx: Option<CriterionContext<'a>>,
    existing: Vec<Vec<f64>>,
}

impl<'a> Scorer<'a> {
    fn new(model: &'a FittedModel, method: Method, seed: u64) -> Result<Self> {
        if method == Method::ImseImpute && model.n_censored() > 0 {
            return Err(Error::Mode("IMSE-Impute needs a model with imputed censored values".into()));
        }
        let opts = CriterionOptions {
            seed,
            qmc: Some(PROPOSAL_QMC),
            ..CriterionOptions::default()
        };
        let ctx = match method {
            Method::SeqMaxPro => None,
            _ => Some(CriterionContext::new(model, opts)?),
        };
        Ok(Self {
            method,
            ctx,
            existing: model.data().iter().map(|o| o.x.clone()).collect(),
        })
    }

    fn score(&self, x: &[f64]) -> Result<CriterionEval> {
        match (&self.ctx, self.method) {
            (Some(ctx), Method::Icmse) => ctx.icmse(x),
            (Some(ctx), Method::ImseImpute) => ctx.imse(x, ImseVariant::Impute),
            (Some(ctx), Method::ImseCen) => ctx.imse(x, ImseVariant::Cen),
            _ => Ok(CriterionEval {
                value: maxpro::maxpro_increment(&self.existing, x),
                lambda: 0.0,
                trace_term: 0.0,
                constant_included: false,
            }),
        }
    }

    // lambda from the predictive law where the criterion does not supply it
    fn diagnose(&self, model: &FittedModel, x: &[f64]) -> Result<CriterionEval> {
        let mut eval = self.score(x)?;
        if matches!(self.method, Method::SeqMaxPro | Method::ImseImpute) {
            eval.lambda = censoring_probability(model, x)?;
        }
        Ok(eval)
    }
}

fn check_dim(model: &FittedModel, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Argument(format!(
            "point has dimension {} but the model has {}",
            x.len(),
            model.dim()
        )));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Argument(format!("point {x:?} is outside the unit cube")));
    }
    Ok(())
}

/// Criterion values of `method` at each of `points`, as scored inside
/// [`propose_next`] with the same seed.
pub fn criterion_surface(
    model: &FittedModel,
    method: Method,
    points: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<CriterionEval>> {
    let scorer = Scorer::new(model, method, seed)?;
    points
        .iter()
        .map(|x| {
            check_dim(model, x)?;
            scorer.diagnose(model, x)
        })
        .collect()
}

/// Next run for `method`, chosen by Nelder-Mead from `config.restarts`
/// uniform starts with coordinates reflected into `[0,1]`. The model must
/// match the method: censored-value imputation for IMSE-Impute, the
/// censored model otherwise.
pub fn propose_next(model: &FittedModel, method: Method, config: &DesignConfig) -> Result<(Vec<f64>, CriterionEval)> {
    config.validate()?;
    let p = model.dim();
    if p != config.p {
        return Err(Error::Argument(format!("config dimension {} but model dimension {p}", config.p)));
    }
    let scorer = Scorer::new(model, method, config.seed)?;
    let objective = |v: &[f64]| -> f64 {
        let x: Vec<f64> = v.iter().map(|&t| reflect_unit(t)).collect();
        match scorer.score(&x) {
            Ok(e) if e.value.is_finite() => e.value,
            _ => f64::INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let steps = vec![PROPOSAL_STEP; p];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..config.restarts {
        let x0: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let r = nelder_mead(objective, &x0, &steps, &PROPOSAL_NM);
        if r.f.is_finite() && best.as_ref().is_none_or(|(f, _)| r.f < *f) {
            best = Some((r.f, r.x));
        }
    }
    let (_, v) = best.ok_or_else(|| {
        Error::Proposal(format!(
            "{method}: the criterion was not finite at any of {} restarts",
            config.restarts
        ))
    })?;
    let x: Vec<f64> = v.iter().map(|&t| reflect_unit(t)).collect();
    let eval = scorer.diagnose(model, &x)?;
    Ok((x, eval))
}
