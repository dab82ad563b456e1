//! Command-line entry point: `simulate`, `fit`, `propose` and `serve`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use icmse_core::designer::{
    benchmark_rows, propose_next, run_benchmark, write_benchmark_csv, DesignConfig, Method, Problem, SimOptions,
};
use icmse_core::gpmodel::{fit_mle, read_observations, FitConfig, FittedModel, ModelMode};

use crate::error::{ServiceError, ServiceResult};
use crate::service::{CampaignService, ProposalResponse, ServiceOptions, HIGH_RISK_LAMBDA};
use crate::store::store_root_from_env;

#[derive(Debug, Parser)]
#[command(name = "icmse", version, about = "Adaptive design for right-censored experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProblemArg {
    #[value(name = "1d-single")]
    OneDSingle,
    #[value(name = "1d-bi")]
    OneDBi,
    #[value(name = "2d-bi")]
    TwoDBi,
}

impl ProblemArg {
    fn problem(self) -> Problem {
        match self {
            ProblemArg::OneDSingle => Problem::OneDSingle,
            ProblemArg::OneDBi => Problem::OneDBi,
            ProblemArg::TwoDBi => Problem::TwoDBi,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Bi-fidelity when the data has computer runs, else single fidelity.
    Auto,
    Single,
    Bi,
    Standard,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run replicated simulated campaigns and write the benchmark CSV.
    Simulate {
        #[arg(long, value_enum)]
        problem: ProblemArg,
        /// Comma-separated methods, or `all`.
        #[arg(long, default_value = "icmse")]
        method: String,
        #[arg(long)]
        n_ini: Option<usize>,
        #[arg(long)]
        n_seq: Option<usize>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Nelder-Mead restarts per proposal.
        #[arg(long)]
        restarts: Option<usize>,
        /// Likelihood starts per refit, including the warm start.
        #[arg(long)]
        fit_restarts: Option<usize>,
        /// Fill the `seconds` column.
        #[arg(long)]
        timing: bool,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model to an observation CSV and write it as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Censoring limit; no censoring when absent.
        #[arg(long)]
        censor_limit: Option<f64>,
        #[arg(long, value_enum, default_value = "auto")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propose the next run for a fitted model.
    Propose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "icmse")]
        method: String,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the campaign API. Campaigns live in `ICMSE_STORE` (default `./campaigns`).
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Overrides `ICMSE_STORE`.
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

fn parse_methods(text: &str) -> ServiceResult<Vec<Method>> {
    if text.eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    text.split(',')
        .map(|m| {
            m.trim()
                .parse::<Method>()
                .map_err(|e| ServiceError::field("method", e.to_string()))
        })
        .collect()
}

fn output(path: &Option<PathBuf>) -> ServiceResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn open_input(path: &PathBuf) -> ServiceResult<File> {
    File::open(path).map_err(|e| ServiceError::field(path.display().to_string(), e.to_string()))
}

fn simulate(cmd: &Command) -> ServiceResult<()> {
    let Command::Simulate {
        problem,
        method,
        n_ini,
        n_seq,
        reps,
        seed,
        restarts,
        fit_restarts,
        timing,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let problem = problem.problem();
    let methods = parse_methods(method)?;
    let base = problem.default_config(methods[0], *seed);
    let template = DesignConfig {
        n_ini: n_ini.unwrap_or(base.n_ini),
        n_seq: n_seq.unwrap_or(base.n_seq),
        restarts: restarts.unwrap_or(base.restarts),
        ..base
    };
    let mut opts = SimOptions {
        timing: *timing,
        ..SimOptions::default()
    };
    if let Some(r) = fit_restarts {
        opts.fit.restarts = *r;
    }
    let runs = run_benchmark(&problem, &methods, &template, *reps, &opts)?;
    for run in &runs {
        if let Some(t) = &run.history.termination {
            eprintln!("{} replication {}: {t}", run.history.config.method, run.replication);
        }
    }
    write_benchmark_csv(output(out)?, &benchmark_rows(&runs))?;
    Ok(())
}

fn fit(cmd: &Command) -> ServiceResult<()> {
    let Command::Fit {
        data,
        censor_limit,
        mode,
        seed,
        restarts,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let c = censor_limit.unwrap_or(f64::INFINITY);
    let mut obs = read_observations(BufReader::new(open_input(data)?))?;
    for o in obs.iter_mut().filter(|o| o.censored) {
        o.value = c;
    }
    let has_computer = obs.iter().any(|o| !o.fidelity.is_physical());
    let mode = match mode {
        ModeArg::Auto if has_computer => ModelMode::CensoredBiFidelity,
        ModeArg::Auto | ModeArg::Single => ModelMode::CensoredSingle,
        ModeArg::Bi => ModelMode::CensoredBiFidelity,
        ModeArg::Standard => ModelMode::Standard,
    };
    let mut cfg = FitConfig {
        seed: *seed,
        ..FitConfig::default()
    };
    if let Some(r) = restarts {
        cfg.restarts = *r;
    }
    let model = fit_mle(&obs, c, mode, &cfg)?;
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &model)?;
    writeln!(w)?;
    Ok(())
}

fn propose(cmd: &Command) -> ServiceResult<()> {
    let Command::Propose {
        model,
        method,
        restarts,
        seed,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let method = match parse_methods(method)?.as_slice() {
        [m] => *m,
        _ => return Err(ServiceError::field("method", "propose takes exactly one method")),
    };
    let model: FittedModel = serde_json::from_reader(BufReader::new(open_input(model)?))
        .map_err(|e| ServiceError::field("model", e.to_string()))?;
    let config = DesignConfig {
        p: model.dim(),
        n_ini: model.n().max(2),
        n_seq: 1,
        c: model.censor_limit(),
        bifidelity: model.mode().is_bifidelity(),
        method,
        restarts: *restarts,
        seed: *seed,
    };
    let (x, diagnostics) = propose_next(&model, method, &config)?;
    let resp = ProposalResponse {
        x_next: x,
        diagnostics,
        high_censoring_risk: diagnostics.lambda > HIGH_RISK_LAMBDA,
    };
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &resp)?;
    writeln!(w)?;
    Ok(())
}

fn serve(addr: &str, store: &Option<PathBuf>) -> ServiceResult<()> {
    let root = store.clone().unwrap_or_else(store_root_from_env);
    let svc = CampaignService::open(root, ServiceOptions::default())?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::api::serve(svc, addr))?;
    Ok(())
}

pub fn execute(cli: &Cli) -> ServiceResult<()> {
    match &cli.command {
        c @ Command::Simulate { .. } => simulate(c),
        c @ Command::Fit { .. } => fit(c),
        c @ Command::Propose { .. } => propose(c),
        Command::Serve { addr, store } => serve(addr, store),
    }
}

/// Parses `args` and runs the command. Returns the process exit code: 0 on
/// success, 2 for usage and validation errors, 3 for numerical failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let body = e.body();
            match body.field {
                Some(f) => eprintln!("error ({}): {f}: {}", body.code, body.message),
                None => eprintln!("error ({}): {}", body.code, body.message),
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_lists() {
        assert_eq!(parse_methods("all").unwrap(), Method::ALL.to_vec());
        assert_eq!(
            parse_methods("icmse, seq-maxpro").unwrap(),
            vec![Method::Icmse, Method::SeqMaxPro]
        );
        assert!(parse_methods("icmse,nope").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["icmse", "--bogus"]), 2);
        assert_eq!(run(["icmse", "simulate"]), 2);
        assert_eq!(run(["icmse", "simulate", "--problem", "3d"]), 2);
        assert_eq!(run(["icmse", "--help"]), 0);
    }

    #[test]
    fn missing_input_is_a_validation_error() {
        assert_eq!(run(["icmse", "fit", "--data", "/nonexistent/obs.csv"]), 2);
        assert_eq!(run(["icmse", "propose", "--model", "/nonexistent/m.json"]), 2);
    }
}
