//! Simulated campaigns on benchmark problems and the replication harness.

use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::maxpro::{equispaced, initial_design};
use super::sobol::sobol_points;
use super::testfns::{f_1d, f_2d, xi_1d, xi_2d};
use super::{propose_next, DesignConfig, Method};
use crate::criteria::{mean_interval_score, rmse, CriterionEval};
use crate::gpmodel::{fit_mle, predict, FitConfig, FittedModel, ModelMode, Observation};
use crate::{Error, Result};

/// A response surface on `[0,1]^p`.
pub type ResponseFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

const TEST_GRID_1D: usize = 1000;
const TEST_SOBOL: usize = 200;
const TEST_SOBOL_SEED: u64 = 20_210_601;
// proposals this close to an existing run count as repeats
const REPEAT_TOL: f64 = 1e-4;
const NOISE_STREAM: u64 = 0x6E6F_6973_65;

/// A user-supplied benchmark.
#[derive(Clone)]
pub struct CustomProblem {
    pub p: usize,
    /// Mean physical response.
    pub xi: ResponseFn,
    /// Computer model; `Some` makes the problem bi-fidelity.
    pub f: Option<ResponseFn>,
    pub sigma_eps: f64,
    pub c: f64,
}

impl fmt::Debug for CustomProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomProblem")
            .field("p", &self.p)
            .field("bifidelity", &self.f.is_some())
            .field("sigma_eps", &self.sigma_eps)
            .field("c", &self.c)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum Problem {
    /// Physical runs only on the 1D surface, censored above 0.55.
    OneDSingle,
    /// Computer runs of the shifted 1D model, then physical runs.
    OneDBi,
    /// The 2D heat-flux pair with noise variance 1, censored above 10.
    TwoDBi,
    Custom(CustomProblem),
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::OneDSingle => "one_d_single",
            Problem::OneDBi => "one_d_bi",
            Problem::TwoDBi => "two_d_bi",
            Problem::Custom(_) => "custom",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::OneDSingle | Problem::OneDBi => 1,
            Problem::TwoDBi => 2,
            Problem::Custom(c) => c.p,
        }
    }

    pub fn is_bifidelity(&self) -> bool {
        match self {
            Problem::OneDSingle => false,
            Problem::OneDBi | Problem::TwoDBi => true,
            Problem::Custom(c) => c.f.is_some(),
        }
    }

    pub fn sigma_eps(&self) -> f64 {
        match self {
            Problem::OneDSingle | Problem::OneDBi => 0.1,
            Problem::TwoDBi => 1.0,
            Problem::Custom(c) => c.sigma_eps,
        }
    }

    /// The problem's own censoring limit.
    pub fn limit(&self) -> f64 {
        match self {
            Problem::OneDSingle | Problem::OneDBi => 0.55,
            Problem::TwoDBi => 10.0,
            Problem::Custom(c) => c.c,
        }
    }

    /// Mean physical response.
    pub fn xi(&self, x: &[f64]) -> f64 {
        match self {
            Problem::OneDSingle | Problem::OneDBi => xi_1d(x[0]),
            Problem::TwoDBi => xi_2d(x[0], x[1]),
            Problem::Custom(c) => (c.xi)(x),
        }
    }

    /// Computer model, for bi-fidelity problems.
    pub fn computer(&self, x: &[f64]) -> Option<f64> {
        match self {
            Problem::OneDSingle => None,
            Problem::OneDBi => Some(f_1d(x[0])),
            Problem::TwoDBi => Some(f_2d(x[0], x[1])),
            Problem::Custom(c) => c.f.as_ref().map(|f| f(x)),
        }
    }

    /// Benchmark settings: 6 initial and 3 sequential runs for
    /// `OneDSingle`, 6 and 20 for `OneDBi`, 12 and 15 for `TwoDBi`.
    pub fn default_config(&self, method: Method, seed: u64) -> DesignConfig {
        let (n_ini, n_seq) = match self {
            Problem::OneDSingle => (6, 3),
            Problem::OneDBi => (6, 20),
            Problem::TwoDBi => (12, 15),
            Problem::Custom(c) => (5 * c.p.max(1), 10),
        };
        DesignConfig {
            p: self.dim(),
            n_ini,
            n_seq,
            c: self.limit(),
            bifidelity: self.is_bifidelity(),
            method,
            restarts: 10,
            seed,
        }
    }

    /// Held-out inputs: 1000 equally spaced points in 1D, a fixed 200-point
    /// scrambled Sobol set otherwise.
    pub fn test_inputs(&self) -> Result<Vec<Vec<f64>>> {
        if self.dim() == 1 {
            Ok(equispaced(TEST_GRID_1D))
        } else {
            sobol_points(TEST_SOBOL, self.dim(), Some(TEST_SOBOL_SEED))
        }
    }

    fn validate(&self, config: &DesignConfig) -> Result<()> {
        config.validate()?;
        if config.p != self.dim() {
            return Err(Error::Argument(format!(
                "config dimension {} but problem dimension {}",
                config.p,
                self.dim()
            )));
        }
        if config.bifidelity && !self.is_bifidelity() {
            return Err(Error::Argument(format!("{} has no computer model", self.name())));
        }
        if !(self.sigma_eps() >= 0.0 && self.sigma_eps().is_finite()) {
            return Err(Error::Argument(format!("noise sd {} is invalid", self.sigma_eps())));
        }
        Ok(())
    }
}

/// Fitting settings for simulated campaigns. Each step after the first
/// starts the likelihood search from the previous optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    /// Template for every fit; seed and warm start are set per step.
    pub fit: FitConfig,
    /// Record cumulative wall-clock seconds per step. Off by default so
    /// that histories are bit-reproducible.
    pub timing: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            fit: FitConfig {
                restarts: 3,
                ..FitConfig::default()
            },
            timing: false,
        }
    }
}

/// One sequential run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub step: usize,
    pub x: Vec<f64>,
    pub eval: CriterionEval,
    /// Simulated noisy response before censoring.
    pub draw: f64,
    pub censored: bool,
}

/// Accuracy of the censored model fitted after `step` sequential runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub rmse: f64,
    pub mis: f64,
    /// Censored sequential runs so far.
    pub censored_count: usize,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignHistory {
    pub problem: String,
    pub config: DesignConfig,
    pub observations: Vec<Observation>,
    pub proposals: Vec<ProposalRecord>,
    pub metrics: Vec<StepMetrics>,
    /// Why the campaign stopped before `n_seq` runs.
    pub termination: Option<String>,
}

impl CampaignHistory {
    pub fn censored_fraction(&self) -> f64 {
        if self.proposals.is_empty() {
            return 0.0;
        }
        self.proposals.iter().filter(|p| p.censored).count() as f64 / self.proposals.len() as f64
    }

    pub fn final_metrics(&self) -> Option<&StepMetrics> {
        self.metrics.last()
    }
}

fn mix(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn physical_run(x: Vec<f64>, draw: f64, c: f64) -> Observation {
    if draw >= c {
        Observation::censored(x, c)
    } else {
        Observation::physical(x, draw)
    }
}

// censored values replaced by the limit and treated as exact
fn imputed(data: &[Observation]) -> Vec<Observation> {
    data.iter()
        .map(|o| {
            if o.censored {
                Observation::physical(o.x.clone(), o.value)
            } else {
                o.clone()
            }
        })
        .collect()
}

struct Fitter<'a> {
    data_mode: ModelMode,
    c: f64,
    template: &'a FitConfig,
    warm: Option<crate::gpmodel::Hyperparams>,
}

impl Fitter<'_> {
    fn fit(&mut self, data: &[Observation], seed: u64) -> Result<FittedModel> {
        let cfg = FitConfig {
            seed,
            warm_start: self.warm.clone(),
            ..self.template.clone()
        };
        let model = fit_mle(data, self.c, self.data_mode, &cfg)?;
        self.warm = Some(model.params().clone());
        Ok(model)
    }
}

fn metrics(model: &FittedModel, test: &[Vec<f64>], truth: &[f64]) -> Result<(f64, f64)> {
    let mut means = Vec::with_capacity(test.len());
    let mut sds = Vec::with_capacity(test.len());
    for x in test {
        let p = predict(model, x)?;
        means.push(p.mean);
        sds.push(p.sd());
    }
    Ok((rmse(&means, truth)?, mean_interval_score(&means, &sds, truth)?))
}

/// [`run_campaign_sim_with`] with default options.
pub fn run_campaign_sim(problem: &Problem, config: &DesignConfig) -> Result<CampaignHistory> {
    run_campaign_sim_with(problem, config, &SimOptions::default())
}

/// Runs the sequential design loop on a simulated problem: initial design,
/// then `n_seq` rounds of fit, propose, simulate and censor. Metrics are
/// computed with the censored model for every method. Physical noise comes
/// from a stream keyed only by the seed, so methods compared at the same
/// seed see the same noise sequence.
///
/// Argument errors are returned. A failed fit or proposal mid-campaign
/// ends the campaign early and is recorded in `termination`.
pub fn run_campaign_sim_with(problem: &Problem, config: &DesignConfig, opts: &SimOptions) -> Result<CampaignHistory> {
    problem.validate(config)?;
    let p = config.p;
    let c = config.c;
    let sigma = problem.sigma_eps();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, NOISE_STREAM));
    let noise: Vec<f64> = (0..config.n_ini + config.n_seq)
        .map(|_| StandardNormal.sample(&mut noise_rng))
        .collect();
    let mut noise = noise.into_iter();
    let mut simulate = |x: &[f64]| problem.xi(x) + sigma * noise.next().unwrap_or(0.0);

    let design = if p == 1 {
        equispaced(config.n_ini)
    } else {
        initial_design(config.n_ini, p, config.seed)?
    };
    let mut data: Vec<Observation> = design
        .into_iter()
        .map(|x| {
            if config.bifidelity {
                let y = problem.computer(&x).unwrap_or(f64::NAN);
                Observation::computer(x, y)
            } else {
                let d = simulate(&x);
                physical_run(x, d, c)
            }
        })
        .collect();

    let test = problem.test_inputs()?;
    let truth: Vec<f64> = test.iter().map(|x| problem.xi(x)).collect();

    let mode = if config.bifidelity {
        ModelMode::CensoredBiFidelity
    } else {
        ModelMode::CensoredSingle
    };
    let mut fitter = Fitter {
        data_mode: mode,
        c,
        template: &opts.fit,
        warm: None,
    };
    let mut impute_fitter = Fitter {
        data_mode: mode,
        c,
        template: &opts.fit,
        warm: None,
    };

    let mut history = CampaignHistory {
        problem: problem.name().to_string(),
        config: config.clone(),
        observations: Vec::new(),
        proposals: Vec::new(),
        metrics: Vec::new(),
        termination: None,
    };
    let mut busy = 0.0;
    let mut repeats = 0;

    for step in 0..=config.n_seq {
        let t0 = Instant::now();
        let model = match fitter.fit(&data, mix(config.seed, 2 * step as u64 + 1)) {
            Ok(m) => m,
            Err(e) => {
                history.termination = Some(format!("fit failed at step {step}: {e}"));
                break;
            }
        };
        busy += t0.elapsed().as_secs_f64();
        let (r, m) = match metrics(&model, &test, &truth) {
            Ok(v) => v,
            Err(e) => {
                history.termination = Some(format!("prediction failed at step {step}: {e}"));
                break;
            }
        };
        let t1 = Instant::now();
        history.metrics.push(StepMetrics {
            step,
            rmse: r,
            mis: m,
            censored_count: history.proposals.iter().filter(|q| q.censored).count(),
            seconds: opts.timing.then_some(busy),
        });
        if step == config.n_seq {
            break;
        }

        let step_config = DesignConfig {
            seed: mix(config.seed, 2 * step as u64 + 2),
            ..config.clone()
        };
        let proposal = if config.method == Method::ImseImpute {
            impute_fitter
                .fit(&imputed(&data), mix(config.seed, 2 * step as u64 + 1))
                .and_then(|im| propose_next(&im, config.method, &step_config))
        } else {
            propose_next(&model, config.method, &step_config)
        };
        let (x, eval) = match proposal {
            Ok(v) => v,
            Err(e) => {
                history.termination = Some(format!("proposal failed at step {step}: {e}"));
                break;
            }
        };

        let repeat = data.iter().any(|o| {
            o.x.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < REPEAT_TOL
        });
        repeats = if repeat { repeats + 1 } else { 0 };
        if config.method == Method::ImseCen && repeats >= 2 {
            history.termination = Some(format!(
                "stopped at step {step}: two consecutive proposals repeat existing runs"
            ));
            break;
        }

        let draw = simulate(&x);
        let obs = physical_run(x.clone(), draw, c);
        history.proposals.push(ProposalRecord {
            step,
            x,
            eval,
            draw,
            censored: obs.censored,
        });
        data.push(obs);
        busy += t1.elapsed().as_secs_f64();
    }
    history.observations = data;
    Ok(history)
}

/// One replication of one method in a benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRun {
    pub replication: usize,
    pub history: CampaignHistory,
}

/// Runs `replications` campaigns for each method in parallel. Replication
/// `r` uses `template` with seed `template.seed + r` for every method.
pub fn run_benchmark(
    problem: &Problem,
    methods: &[Method],
    template: &DesignConfig,
    replications: usize,
    opts: &SimOptions,
) -> Result<Vec<BenchmarkRun>> {
    problem.validate(template)?;
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..replications).map(move |r| (m, r)))
        .collect();
    jobs.into_par_iter()
        .map(|(method, r)| {
            let config = DesignConfig {
                method,
                seed: template.seed.wrapping_add(r as u64),
                ..template.clone()
            };
            run_campaign_sim_with(problem, &config, opts).map(|history| BenchmarkRun {
                replication: r,
                history,
            })
        })
        .collect()
}

/// A line of the benchmark CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub replication: usize,
    pub step: usize,
    pub rmse: f64,
    pub mis: f64,
    pub censored_count: usize,
    pub seconds: Option<f64>,
}

/// One row per sequential step `1..=n_seq` reached by each run; the fit on
/// the initial design alone is not reported.
pub fn benchmark_rows(runs: &[BenchmarkRun]) -> Vec<BenchmarkRow> {
    runs.iter()
        .flat_map(|run| {
            run.history.metrics.iter().filter(|m| m.step > 0).map(move |m| BenchmarkRow {
                method: run.history.config.method,
                replication: run.replication,
                step: m.step,
                rmse: m.rmse,
                mis: m.mis,
                censored_count: m.censored_count,
                seconds: m.seconds,
            })
        })
        .collect()
}

/// Writes `method,replication,step,rmse,mis,censored_count,seconds`.
/// `seconds` is empty when timing was off.
pub fn write_benchmark_csv<W: Write>(writer: W, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> SimOptions {
        SimOptions {
            fit: FitConfig {
                restarts: 2,
                ..FitConfig::default()
            },
            timing: false,
        }
    }

    fn small(problem: &Problem, method: Method, n_seq: usize) -> DesignConfig {
        DesignConfig {
            n_seq,
            restarts: 4,
            ..problem.default_config(method, 11)
        }
    }

    #[test]
    fn one_d_single_is_deterministic_and_consistent() {
        let problem = Problem::OneDSingle;
        let config = small(&problem, Method::Icmse, 3);
        let a = run_campaign_sim_with(&problem, &config, &fast()).unwrap();
        let b = run_campaign_sim_with(&problem, &config, &fast()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.termination, None);
        assert_eq!(a.proposals.len(), 3);
        assert_eq!(a.metrics.len(), 4);
        assert_eq!(a.observations.len(), 9);
        for (prop, obs) in a.proposals.iter().zip(&a.observations[6..]) {
            assert_eq!(prop.x, obs.x);
            assert!(prop.x.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(prop.censored, prop.draw >= 0.55);
            assert_eq!(obs.censored, prop.censored);
        }
        assert!(a.metrics.iter().all(|m| m.rmse.is_finite() && m.mis.is_finite() && m.seconds.is_none()));
    }

    #[test]
    fn uncensored_icmse_matches_imse_cen() {
        let problem = Problem::OneDSingle;
        let mut a_cfg = small(&problem, Method::Icmse, 2);
        a_cfg.c = f64::INFINITY;
        let b_cfg = DesignConfig {
            method: Method::ImseCen,
            ..a_cfg.clone()
        };
        let a = run_campaign_sim_with(&problem, &a_cfg, &fast()).unwrap();
        let b = run_campaign_sim_with(&problem, &b_cfg, &fast()).unwrap();
        assert_eq!(a.observations.len(), b.observations.len());
        for (pa, pb) in a.proposals.iter().zip(&b.proposals) {
            assert!((pa.x[0] - pb.x[0]).abs() < 1e-10, "{:?} vs {:?}", pa.x, pb.x);
            assert!(!pa.censored && !pb.censored);
        }
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn bi_fidelity_starts_with_computer_runs() {
        let problem = Problem::OneDBi;
        let config = small(&problem, Method::SeqMaxPro, 2);
        let h = run_campaign_sim_with(&problem, &config, &fast()).unwrap();
        assert_eq!(h.termination, None);
        for (o, x) in h.observations.iter().zip(equispaced(6)) {
            assert!(!o.fidelity.is_physical());
            assert_eq!(o.x, x);
            assert_eq!(o.value, f_1d(x[0]));
        }
        assert!(h.observations[6..].iter().all(|o| o.fidelity.is_physical()));
    }

    #[test]
    fn methods_share_the_noise_stream() {
        let problem = Problem::OneDBi;
        let a = run_campaign_sim_with(&problem, &small(&problem, Method::SeqMaxPro, 2), &fast()).unwrap();
        let b = run_campaign_sim_with(&problem, &small(&problem, Method::ImseImpute, 2), &fast()).unwrap();
        for (pa, pb) in a.proposals.iter().zip(&b.proposals) {
            let ea = pa.draw - xi_1d(pa.x[0]);
            let eb = pb.draw - xi_1d(pb.x[0]);
            assert!((ea - eb).abs() < 1e-12);
        }
    }

    #[test]
    fn benchmark_csv_layout() {
        let problem = Problem::OneDSingle;
        let runs: Vec<BenchmarkRun> = [Method::SeqMaxPro, Method::ImseCen]
            .iter()
            .enumerate()
            .map(|(r, &m)| BenchmarkRun {
                replication: r,
                history: run_campaign_sim_with(&problem, &small(&problem, m, 1), &fast()).unwrap(),
            })
            .collect();
        let rows = benchmark_rows(&runs);
        assert_eq!(rows.len(), 2);
        let mut buf = Vec::new();
        write_benchmark_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,replication,step,rmse,mis,censored_count,seconds");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("seq_maxpro,0,1,"));
        assert!(lines[1].ends_with(','));
        assert!(lines[2].starts_with("imse_cen,1,1,"));
    }

    #[test]
    fn benchmark_matches_single_runs() {
        let problem = Problem::OneDSingle;
        let template = small(&problem, Method::Icmse, 1);
        let runs = run_benchmark(&problem, &[Method::SeqMaxPro, Method::Icmse], &template, 2, &fast()).unwrap();
        assert_eq!(runs.len(), 4);
        let cfg = DesignConfig {
            method: Method::Icmse,
            seed: template.seed + 1,
            ..template.clone()
        };
        let single = run_campaign_sim_with(&problem, &cfg, &fast()).unwrap();
        let found = runs
            .iter()
            .find(|r| r.replication == 1 && r.history.config.method == Method::Icmse)
            .unwrap();
        assert_eq!(found.history, single);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut config = Problem::OneDBi.default_config(Method::Icmse, 0);
        config.p = 2;
        assert!(matches!(
            run_campaign_sim(&Problem::OneDBi, &config),
            Err(Error::Argument(_))
        ));
        let config = DesignConfig {
            bifidelity: true,
            ..Problem::OneDSingle.default_config(Method::Icmse, 0)
        };
        assert!(run_campaign_sim(&Problem::OneDSingle, &config).is_err());
    }
}
