//! Campaign operations. Writes to one campaign are serialized by its writer
//! lock; reads clone the latest published state and never block on a
//! refit in progress.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use icmse_core::criteria::CriterionEval;
use icmse_core::designer::{
    criterion_surface, equispaced, initial_design, propose_next, DesignConfig, Method,
};
use icmse_core::gpmodel::{
    censoring_probability, fit_mle, predict, Fidelity, FitConfig, FittedModel, ModelMode, Observation,
};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::campaign::{Campaign, CampaignStatus, EventKind, EventRecord, ProposalSource};
use crate::error::{ServiceError, ServiceResult};
use crate::store::{list_campaign_dirs, CampaignFiles};

/// Campaigns with at most this many observations are refitted inside the
/// request that added the data.
pub const SYNC_REFIT_LIMIT: usize = 200;

/// Proposals with a censoring probability above this are flagged.
pub const HIGH_RISK_LAMBDA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceOptions {
    pub sync_refit_limit: usize,
    pub fit: FitConfig,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            sync_refit_limit: SYNC_REFIT_LIMIT,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub config: DesignConfig,
    #[serde(default)]
    pub observations: Option<Vec<ObservationInput>>,
}

/// A measured run as sent by a client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationInput {
    pub x: Vec<f64>,
    pub value: f64,
    #[serde(default)]
    pub censored: bool,
    /// Defaults to the fidelity of the matching proposal, else physical.
    #[serde(default)]
    pub fidelity: Option<Fidelity>,
    /// Idempotency token; a repeated token is rejected.
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "detail", rename_all = "snake_case")]
pub enum RefitOutcome {
    Done,
    Queued,
    /// Not enough data yet, or initial-design runs still open.
    Deferred(String),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub campaign: Campaign,
    /// The censored value was replaced by the limit.
    pub normalized: bool,
    pub refit: RefitOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalResponse {
    pub x_next: Vec<f64>,
    pub diagnostics: CriterionEval,
    pub high_censoring_risk: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub x: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    pub lambda_point: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionPoint {
    pub x: Vec<f64>,
    pub value: f64,
    pub lambda: f64,
}

/// A campaign with its model rebuilt from the snapshot.
#[derive(Debug)]
pub struct Loaded {
    pub campaign: Campaign,
    pub model: Option<Arc<FittedModel>>,
}

struct Handle {
    files: CampaignFiles,
    writer: Mutex<()>,
    state: RwLock<Arc<Loaded>>,
}

impl Handle {
    fn current(&self) -> Arc<Loaded> {
        self.state.read().clone()
    }

    // Applies `kind` to a copy of the state, logs it, then publishes.
    // Callers hold the writer lock.
    fn commit(&self, kind: EventKind) -> ServiceResult<Arc<Loaded>> {
        let cur = self.current();
        let event = EventRecord {
            seq: cur.campaign.last_seq + 1,
            timestamp: Utc::now(),
            kind,
        };
        let mut campaign = cur.campaign.clone();
        campaign.apply(&event)?;
        let model = match &event.kind {
            EventKind::ModelRefit { snapshot } => Some(Arc::new(FittedModel::try_from(snapshot.clone())?)),
            _ => cur.model.clone(),
        };
        self.files.append(&event)?;
        self.files.write_snapshot(&campaign)?;
        let next = Arc::new(Loaded { campaign, model });
        *self.state.write() = next.clone();
        Ok(next)
    }
}

pub struct CampaignService {
    root: PathBuf,
    options: ServiceOptions,
    campaigns: RwLock<HashMap<String, Arc<Handle>>>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn model_mode(config: &DesignConfig) -> ModelMode {
    if config.bifidelity {
        ModelMode::CensoredBiFidelity
    } else {
        ModelMode::CensoredSingle
    }
}

/// Checks a design configuration, naming the offending field.
pub fn validate_config(config: &DesignConfig) -> ServiceResult<()> {
    if config.p == 0 {
        return Err(ServiceError::field("config.p", "dimension must be positive"));
    }
    if config.n_ini < 2 {
        return Err(ServiceError::field(
            "config.n_ini",
            format!("n_ini must be at least 2, got {}", config.n_ini),
        ));
    }
    if config.restarts == 0 {
        return Err(ServiceError::field("config.restarts", "restarts must be at least 1"));
    }
    if config.c.is_nan() {
        return Err(ServiceError::field("config.c", "censoring limit is NaN"));
    }
    Ok(())
}

fn validate_point(x: &[f64], p: usize, field: &str) -> ServiceResult<()> {
    if x.len() != p {
        return Err(ServiceError::field(
            field,
            format!("expected {p} coordinates, got {}", x.len()),
        ));
    }
    for (i, v) in x.iter().enumerate() {
        if !(0.0..=1.0).contains(v) {
            return Err(ServiceError::field(
                format!("{field}[{i}]"),
                format!("coordinate {v} is outside [0, 1]"),
            ));
        }
    }
    Ok(())
}

/// Turns a client observation into a stored one. Censored values become
/// the limit; the flag reports whether that changed the value.
pub fn normalize_observation(
    config: &DesignConfig,
    input: &ObservationInput,
    fidelity: Fidelity,
    prefix: &str,
) -> ServiceResult<(Observation, bool)> {
    let at = |f: &str| format!("{prefix}{f}");
    validate_point(&input.x, config.p, &at("x"))?;
    if fidelity == Fidelity::Computer && !config.bifidelity {
        return Err(ServiceError::field(at("fidelity"), "computer runs need a bi-fidelity campaign"));
    }
    if input.censored {
        if fidelity == Fidelity::Computer {
            return Err(ServiceError::field(at("censored"), "computer runs cannot be censored"));
        }
        if !config.c.is_finite() {
            return Err(ServiceError::field(at("censored"), "the campaign has no censoring limit"));
        }
        let normalized = input.value != config.c;
        return Ok((Observation::censored(input.x.clone(), config.c), normalized));
    }
    if !input.value.is_finite() {
        return Err(ServiceError::field(at("value"), "value must be finite"));
    }
    if fidelity == Fidelity::Physical && input.value > config.c {
        return Err(ServiceError::field(
            at("value"),
            format!(
                "uncensored value {} exceeds the limit {}; mark it censored or check the limit",
                input.value, config.c
            ),
        ));
    }
    let obs = match fidelity {
        Fidelity::Physical => Observation::physical(input.x.clone(), input.value),
        Fidelity::Computer => Observation::computer(input.x.clone(), input.value),
    };
    Ok((obs, false))
}

/// Parses `x1,x2;x1,x2` into points.
pub fn parse_grid(text: &str) -> ServiceResult<Vec<Vec<f64>>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .enumerate()
        .map(|(i, pt)| {
            pt.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| ServiceError::field(format!("grid[{i}]"), format!("cannot parse {v:?}")))
                })
                .collect()
        })
        .collect()
}

impl CampaignService {
    /// Opens the store at `root`, replaying every campaign found there.
    pub fn open(root: impl Into<PathBuf>, options: ServiceOptions) -> ServiceResult<Arc<Self>> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let mut campaigns = HashMap::new();
        for dir in list_campaign_dirs(&root)? {
            let files = CampaignFiles::open(dir);
            let campaign = Campaign::replay(&files.read_events()?)?;
            let model = campaign
                .model_snapshot
                .clone()
                .map(FittedModel::try_from)
                .transpose()?
                .map(Arc::new);
            campaigns.insert(
                campaign.id.clone(),
                Arc::new(Handle {
                    files,
                    writer: Mutex::new(()),
                    state: RwLock::new(Arc::new(Loaded { campaign, model })),
                }),
            );
        }
        Ok(Arc::new(Self {
            root,
            options,
            campaigns: RwLock::new(campaigns),
        }))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn handle(&self, id: &str) -> ServiceResult<Arc<Handle>> {
        self.campaigns
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn list(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.campaigns.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn get(&self, id: &str) -> ServiceResult<Arc<Loaded>> {
        Ok(self.handle(id)?.current())
    }

    pub fn create(self: &Arc<Self>, req: CreateRequest) -> ServiceResult<Campaign> {
        let config = req.config;
        validate_config(&config)?;
        let inputs = req.observations.unwrap_or_default();
        let mut observations = Vec::with_capacity(inputs.len());
        for (i, input) in inputs.iter().enumerate() {
            let fidelity = input.fidelity.unwrap_or(Fidelity::Physical);
            let (obs, _) = normalize_observation(&config, input, fidelity, &format!("observations[{i}]."))?;
            observations.push(obs);
        }
        let initial_design = if observations.is_empty() {
            let pts = if config.p == 1 {
                equispaced(config.n_ini)
            } else {
                initial_design(config.n_ini, config.p, config.seed)?
            };
            let fidelity = if config.bifidelity {
                Fidelity::Computer
            } else {
                Fidelity::Physical
            };
            pts.into_iter().map(|x| (x, fidelity)).collect()
        } else {
            Vec::new()
        };

        let id = uuid::Uuid::new_v4().to_string();
        let files = CampaignFiles::create(&self.root, &id)?;
        let created = EventRecord {
            seq: 1,
            timestamp: Utc::now(),
            kind: EventKind::Created {
                id: id.clone(),
                config,
                observations,
                initial_design,
            },
        };
        let campaign = Campaign::from_created(&created)?;
        files.append(&created)?;
        files.write_snapshot(&campaign)?;
        let handle = Arc::new(Handle {
            files,
            writer: Mutex::new(()),
            state: RwLock::new(Arc::new(Loaded { campaign, model: None })),
        });
        self.campaigns.write().insert(id, handle.clone());

        let _guard = handle.writer.lock();
        self.refit_locked(&handle)?;
        Ok(handle.current().campaign.clone())
    }

    // Fits the campaign's data if it is ready and records the outcome.
    fn refit_locked(&self, handle: &Handle) -> ServiceResult<RefitOutcome> {
        let cur = handle.current();
        let c = &cur.campaign;
        if c.observations.is_empty() {
            return Ok(RefitOutcome::Deferred("no observations yet".into()));
        }
        if c.open_initial_runs() > 0 {
            return Ok(RefitOutcome::Deferred(format!(
                "{} initial-design runs are still open",
                c.open_initial_runs()
            )));
        }
        let cfg = FitConfig {
            seed: c.config.seed,
            warm_start: cur.model.as_ref().map(|m| m.params().clone()),
            ..self.options.fit.clone()
        };
        match fit_mle(&c.observations, c.config.c, model_mode(&c.config), &cfg) {
            Ok(model) => {
                handle.commit(EventKind::ModelRefit {
                    snapshot: model.snapshot(),
                })?;
                Ok(RefitOutcome::Done)
            }
            Err(e) if e.is_validation() => Ok(RefitOutcome::Deferred(e.to_string())),
            Err(e) => {
                let message = format!("refit failed: {e}");
                handle.commit(EventKind::Error {
                    message: message.clone(),
                })?;
                Ok(RefitOutcome::Failed(message))
            }
        }
    }

    pub fn submit(self: &Arc<Self>, id: &str, input: ObservationInput) -> ServiceResult<SubmitResponse> {
        let handle = self.handle(id)?;
        let guard = handle.writer.lock();
        let cur = handle.current();
        let c = &cur.campaign;
        if let Some(t) = &input.token {
            if c.tokens.contains(t) {
                return Err(ServiceError::Conflict(format!("token {t:?} was already used")));
            }
        }
        let answers = c.matching_proposal(&input.x, input.fidelity);
        let fidelity = input
            .fidelity
            .or(answers.map(|i| c.proposals[i].fidelity))
            .unwrap_or(Fidelity::Physical);
        let (observation, normalized) = normalize_observation(&c.config, &input, fidelity, "")?;
        let n = c.observations.len() + 1;
        handle.commit(EventKind::ObservationAdded {
            observation,
            answers,
            normalized,
            token: input.token.clone(),
        })?;

        let refit = if n <= self.options.sync_refit_limit || handle.current().campaign.open_initial_runs() > 0 {
            self.refit_locked(&handle)?
        } else {
            drop(guard);
            let service = Arc::clone(self);
            let background = Arc::clone(&handle);
            std::thread::spawn(move || {
                let _guard = background.writer.lock();
                if background.current().campaign.model_stale {
                    // failures are recorded as Error events
                    let _ = service.refit_locked(&background);
                }
            });
            RefitOutcome::Queued
        };
        Ok(SubmitResponse {
            campaign: handle.current().campaign.clone(),
            normalized,
            refit,
        })
    }

    // Model the criterion is evaluated on: the censored model, or for
    // IMSE-Impute a refit with censored values taken at the limit.
    fn design_model(&self, loaded: &Loaded) -> ServiceResult<Arc<FittedModel>> {
        let model = loaded
            .model
            .clone()
            .ok_or_else(|| ServiceError::Conflict("the campaign has no fitted model yet".into()))?;
        if loaded.campaign.config.method != Method::ImseImpute || model.n_censored() == 0 {
            return Ok(model);
        }
        let data: Vec<Observation> = model
            .data()
            .iter()
            .map(|o| {
                if o.censored {
                    Observation::physical(o.x.clone(), o.value)
                } else {
                    o.clone()
                }
            })
            .collect();
        let cfg = FitConfig {
            seed: loaded.campaign.config.seed,
            warm_start: Some(model.params().clone()),
            ..self.options.fit.clone()
        };
        Ok(Arc::new(fit_mle(&data, model.censor_limit(), model.mode(), &cfg)?))
    }

    pub fn proposal(&self, id: &str) -> ServiceResult<ProposalResponse> {
        let handle = self.handle(id)?;
        let _guard = handle.writer.lock();
        let cur = handle.current();
        let c = &cur.campaign;
        if let Some(p) = c.open_criterion_proposal() {
            let diagnostics = p.diagnostics.unwrap_or(CriterionEval {
                value: f64::NAN,
                lambda: f64::NAN,
                trace_term: f64::NAN,
                constant_included: false,
            });
            return Ok(ProposalResponse {
                x_next: p.x.clone(),
                diagnostics,
                high_censoring_risk: diagnostics.lambda > HIGH_RISK_LAMBDA,
            });
        }
        match c.status {
            CampaignStatus::ReadyToPropose => {}
            CampaignStatus::Failed => {
                return Err(ServiceError::Conflict(format!(
                    "campaign failed: {}",
                    c.last_error.as_deref().unwrap_or("unknown error")
                )))
            }
            CampaignStatus::AwaitingObservation => {
                return Err(ServiceError::Conflict(
                    "campaign is awaiting observations before the next proposal".into(),
                ))
            }
        }
        let issued = c.proposals.iter().filter(|p| p.source == ProposalSource::Criterion).count();
        if issued >= c.config.n_seq {
            return Err(ServiceError::Conflict(format!(
                "all {} sequential runs have been proposed",
                c.config.n_seq
            )));
        }
        let model = self.design_model(&cur)?;
        let config = DesignConfig {
            seed: mix(c.config.seed, issued as u64 + 1),
            ..c.config.clone()
        };
        let (x, diagnostics) = propose_next(&model, c.config.method, &config)?;
        handle.commit(EventKind::ProposalIssued {
            x: x.clone(),
            diagnostics,
        })?;
        Ok(ProposalResponse {
            x_next: x,
            diagnostics,
            high_censoring_risk: diagnostics.lambda > HIGH_RISK_LAMBDA,
        })
    }

    pub fn predictions(&self, id: &str, grid: &[Vec<f64>]) -> ServiceResult<Vec<PredictionPoint>> {
        let cur = self.get(id)?;
        let model = cur
            .model
            .clone()
            .ok_or_else(|| ServiceError::Conflict("the campaign has no fitted model yet".into()))?;
        let p = cur.campaign.config.p;
        grid.iter()
            .enumerate()
            .map(|(i, x)| {
                validate_point(x, p, &format!("grid[{i}]"))?;
                let pred = predict(&model, x)?;
                Ok(PredictionPoint {
                    x: x.clone(),
                    mean: pred.mean,
                    var: pred.var,
                    lambda_point: censoring_probability(&model, x)?,
                })
            })
            .collect()
    }

    pub fn criterion(&self, id: &str, grid: &[Vec<f64>]) -> ServiceResult<Vec<CriterionPoint>> {
        let cur = self.get(id)?;
        let p = cur.campaign.config.p;
        for (i, x) in grid.iter().enumerate() {
            validate_point(x, p, &format!("grid[{i}]"))?;
        }
        let model = self.design_model(&cur)?;
        let issued = cur
            .campaign
            .proposals
            .iter()
            .filter(|q| q.source == ProposalSource::Criterion)
            .count();
        let seed = mix(cur.campaign.config.seed, issued as u64 + 1);
        let evals = criterion_surface(&model, cur.campaign.config.method, grid, seed)?;
        Ok(grid
            .iter()
            .zip(evals)
            .map(|(x, e)| CriterionPoint {
                x: x.clone(),
                value: e.value,
                lambda: e.lambda,
            })
            .collect())
    }

    /// The stored event log of a campaign.
    pub fn events(&self, id: &str) -> ServiceResult<Vec<EventRecord>> {
        self.handle(id)?.files.read_events()
    }

    /// The stored snapshot document of a campaign.
    pub fn snapshot_text(&self, id: &str) -> ServiceResult<String> {
        self.handle(id)?.files.read_snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> DesignConfig {
        DesignConfig {
            p: 1,
            n_ini: 4,
            n_seq: 3,
            c: 0.55,
            bifidelity: false,
            method: Method::Icmse,
            restarts: 2,
            seed: 4,
        }
    }

    fn input(x: f64, value: f64, censored: bool) -> ObservationInput {
        ObservationInput {
            x: vec![x],
            value,
            censored,
            fidelity: None,
            token: None,
        }
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1,0.2;0.3,0.4").unwrap(), vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        assert_eq!(parse_grid("0.5").unwrap(), vec![vec![0.5]]);
        assert!(parse_grid("").unwrap().is_empty());
        match parse_grid("0.1;zz") {
            Err(ServiceError::Validation { field, .. }) => assert_eq!(field.as_deref(), Some("grid[1]")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalization_rules() {
        let cfg = config();
        let (o, n) = normalize_observation(&cfg, &input(0.3, 0.9, true), Fidelity::Physical, "").unwrap();
        assert!(n && o.censored && o.value == 0.55);
        let (o, n) = normalize_observation(&cfg, &input(0.3, 0.55, true), Fidelity::Physical, "").unwrap();
        assert!(!n && o.censored);
        assert!(normalize_observation(&cfg, &input(0.3, 0.6, false), Fidelity::Physical, "").is_err());
        assert!(normalize_observation(&cfg, &input(1.3, 0.1, false), Fidelity::Physical, "").is_err());
        assert!(normalize_observation(&cfg, &input(0.3, 0.1, false), Fidelity::Computer, "").is_err());
        let open = DesignConfig {
            c: f64::INFINITY,
            ..cfg
        };
        assert!(normalize_observation(&open, &input(0.3, 0.1, true), Fidelity::Physical, "").is_err());
    }

    #[test]
    fn initial_design_flow() {
        let dir = tempfile::tempdir().unwrap();
        let svc = CampaignService::open(dir.path(), ServiceOptions::default()).unwrap();
        let c = svc
            .create(CreateRequest {
                config: config(),
                observations: None,
            })
            .unwrap();
        assert_eq!(c.status, CampaignStatus::AwaitingObservation);
        assert_eq!(c.proposals.len(), 4);
        assert!(matches!(svc.proposal(&c.id), Err(ServiceError::Conflict(_))));
        let values = [-0.2, 0.1, 0.3, 0.9];
        let mut last = None;
        for (p, v) in c.proposals.iter().zip(values) {
            let r = svc.submit(&c.id, input(p.x[0], v, v > 0.55)).unwrap();
            last = Some(r);
        }
        let last = last.unwrap();
        assert_eq!(last.refit, RefitOutcome::Done);
        assert_eq!(last.campaign.status, CampaignStatus::ReadyToPropose);
        assert!(last.normalized);
        let a = svc.proposal(&c.id).unwrap();
        let b = svc.proposal(&c.id).unwrap();
        assert_eq!(a, b);
        assert_eq!(svc.get(&c.id).unwrap().campaign.status, CampaignStatus::AwaitingObservation);
        assert!(matches!(svc.get("nope"), Err(ServiceError::NotFound(_))));
    }
}
