//! On-disk layout: one directory per campaign holding an append-only
//! `events.jsonl` and a `campaign.json` snapshot rewritten after every
//! change. The event log is authoritative.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::campaign::{Campaign, EventRecord};
use crate::error::{ServiceError, ServiceResult};

const EVENTS: &str = "events.jsonl";
const SNAPSHOT: &str = "campaign.json";

/// Directory used when `ICMSE_STORE` is unset.
pub const DEFAULT_STORE: &str = "./campaigns";

/// The campaign directory: `ICMSE_STORE` or `./campaigns`.
pub fn store_root_from_env() -> PathBuf {
    std::env::var_os("ICMSE_STORE")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE))
}

#[derive(Clone, Debug)]
pub struct CampaignFiles {
    dir: PathBuf,
}

impl CampaignFiles {
    pub fn create(root: &Path, id: &str) -> ServiceResult<Self> {
        let dir = root.join(id);
        if dir.exists() {
            return Err(ServiceError::Storage(format!("{} already exists", dir.display())));
        }
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn open(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn events_path(&self) -> PathBuf {
        self.dir.join(EVENTS)
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.dir.join(SNAPSHOT)
    }

    pub fn append(&self, event: &EventRecord) -> ServiceResult<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.events_path())?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn read_events(&self) -> ServiceResult<Vec<EventRecord>> {
        let f = File::open(self.events_path())?;
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }

    /// Atomically replaces the snapshot document.
    pub fn write_snapshot(&self, campaign: &Campaign) -> ServiceResult<()> {
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        fs::write(&tmp, campaign_json(campaign)?)?;
        fs::rename(tmp, self.snapshot_path())?;
        Ok(())
    }

    pub fn read_snapshot(&self) -> ServiceResult<String> {
        Ok(fs::read_to_string(self.snapshot_path())?)
    }
}

/// The canonical campaign document.
pub fn campaign_json(campaign: &Campaign) -> ServiceResult<String> {
    Ok(serde_json::to_string_pretty(campaign)?)
}

/// Campaign directories under `root` that hold an event log.
pub fn list_campaign_dirs(root: &Path) -> ServiceResult<Vec<PathBuf>> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(EVENTS).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}
