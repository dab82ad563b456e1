//! Campaign documents and the events that build them. A campaign is a pure
//! fold over its event log, so replaying the log reproduces it exactly.

use chrono::{DateTime, Utc};
use icmse_core::criteria::CriterionEval;
use icmse_core::designer::DesignConfig;
use icmse_core::gpmodel::{Fidelity, ModelSnapshot, Observation};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// Two points closer than this in every coordinate are the same run.
pub const SAME_POINT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CampaignStatus {
    AwaitingObservation,
    ReadyToPropose,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    InitialDesign,
    Criterion,
}

/// A run the service asked for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalEntry {
    pub x: Vec<f64>,
    pub fidelity: Fidelity,
    pub source: ProposalSource,
    pub diagnostics: Option<CriterionEval>,
    /// Index into `observations` of the answering run.
    pub answered_by: Option<usize>,
}

impl ProposalEntry {
    pub fn is_open(&self) -> bool {
        self.answered_by.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub config: DesignConfig,
    pub observations: Vec<Observation>,
    pub proposals: Vec<ProposalEntry>,
    pub model_snapshot: Option<ModelSnapshot>,
    /// Observations arrived after the snapshot was fitted.
    pub model_stale: bool,
    pub status: CampaignStatus,
    pub last_error: Option<String>,
    pub tokens: Vec<String>,
    pub last_seq: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    Created {
        id: String,
        config: DesignConfig,
        observations: Vec<Observation>,
        initial_design: Vec<(Vec<f64>, Fidelity)>,
    },
    ObservationAdded {
        observation: Observation,
        answers: Option<usize>,
        normalized: bool,
        token: Option<String>,
    },
    ProposalIssued {
        x: Vec<f64>,
        diagnostics: CriterionEval,
    },
    ModelRefit {
        snapshot: ModelSnapshot,
    },
    Error {
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Campaign {
    /// Rebuilds a campaign from its full event log.
    pub fn replay(events: &[EventRecord]) -> ServiceResult<Campaign> {
        let (first, rest) = events
            .split_first()
            .ok_or_else(|| ServiceError::Storage("empty event log".into()))?;
        let mut c = Campaign::from_created(first)?;
        for e in rest {
            c.apply(e)?;
        }
        Ok(c)
    }

    pub fn from_created(event: &EventRecord) -> ServiceResult<Campaign> {
        let EventKind::Created {
            id,
            config,
            observations,
            initial_design,
        } = &event.kind
        else {
            return Err(ServiceError::Storage("event log does not start with Created".into()));
        };
        let mut c = Campaign {
            id: id.clone(),
            created_at: event.timestamp,
            config: config.clone(),
            observations: observations.clone(),
            proposals: initial_design
                .iter()
                .map(|(x, fidelity)| ProposalEntry {
                    x: x.clone(),
                    fidelity: *fidelity,
                    source: ProposalSource::InitialDesign,
                    diagnostics: None,
                    answered_by: None,
                })
                .collect(),
            model_snapshot: None,
            model_stale: !observations.is_empty(),
            status: CampaignStatus::AwaitingObservation,
            last_error: None,
            tokens: Vec::new(),
            last_seq: event.seq,
        };
        c.update_status();
        Ok(c)
    }

    pub fn apply(&mut self, event: &EventRecord) -> ServiceResult<()> {
        if event.seq <= self.last_seq {
            return Err(ServiceError::Storage(format!(
                "event {} does not follow {}",
                event.seq, self.last_seq
            )));
        }
        match &event.kind {
            EventKind::Created { .. } => {
                return Err(ServiceError::Storage("second Created event".into()));
            }
            EventKind::ObservationAdded {
                observation,
                answers,
                token,
                ..
            } => {
                if let Some(i) = answers {
                    let entry = self
                        .proposals
                        .get_mut(*i)
                        .ok_or_else(|| ServiceError::Storage(format!("no proposal {i}")))?;
                    entry.answered_by = Some(self.observations.len());
                }
                self.observations.push(observation.clone());
                if let Some(t) = token {
                    self.tokens.push(t.clone());
                }
                self.model_stale = true;
            }
            EventKind::ProposalIssued { x, diagnostics } => {
                self.proposals.push(ProposalEntry {
                    x: x.clone(),
                    fidelity: Fidelity::Physical,
                    source: ProposalSource::Criterion,
                    diagnostics: Some(*diagnostics),
                    answered_by: None,
                });
            }
            EventKind::ModelRefit { snapshot } => {
                self.model_snapshot = Some(snapshot.clone());
                self.model_stale = snapshot.data.len() != self.observations.len();
                self.last_error = None;
            }
            EventKind::Error { message } => {
                self.last_error = Some(message.clone());
            }
        }
        self.last_seq = event.seq;
        self.update_status();
        Ok(())
    }

    fn update_status(&mut self) {
        self.status = if self.last_error.is_some() {
            CampaignStatus::Failed
        } else if self.proposals.iter().any(ProposalEntry::is_open)
            || self.model_snapshot.is_none()
            || self.model_stale
        {
            CampaignStatus::AwaitingObservation
        } else {
            CampaignStatus::ReadyToPropose
        };
    }

    /// The criterion proposal still waiting for its run, if any.
    pub fn open_criterion_proposal(&self) -> Option<&ProposalEntry> {
        self.proposals
            .iter()
            .rev()
            .find(|p| p.source == ProposalSource::Criterion && p.is_open())
    }

    /// Initial-design runs not yet performed.
    pub fn open_initial_runs(&self) -> usize {
        self.proposals
            .iter()
            .filter(|p| p.source == ProposalSource::InitialDesign && p.is_open())
            .count()
    }

    /// Open proposal at `x` with a matching fidelity, if any.
    pub fn matching_proposal(&self, x: &[f64], fidelity: Option<Fidelity>) -> Option<usize> {
        self.proposals.iter().position(|p| {
            p.is_open()
                && fidelity.is_none_or(|f| f == p.fidelity)
                && p.x.len() == x.len()
                && p.x.iter().zip(x).all(|(a, b)| (a - b).abs() <= SAME_POINT_TOL)
        })
    }

    pub fn n_censored(&self) -> usize {
        self.observations.iter().filter(|o| o.censored).count()
    }
}
