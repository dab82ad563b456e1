//! Human-in-the-loop campaign service for censored adaptive design: an
//! event-sourced campaign store, an HTTP/JSON API, and the `icmse`
//! command-line tool.

pub mod api;
pub mod campaign;
pub mod cli;
pub mod error;
pub mod service;
pub mod store;

pub use campaign::{Campaign, CampaignStatus, EventKind, EventRecord};
pub use error::{ErrorBody, ServiceError, ServiceResult};
pub use service::{CampaignService, CreateRequest, ObservationInput, ServiceOptions};
