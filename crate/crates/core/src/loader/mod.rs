//! Restartable bulk ingestion.
//!
//! A manifest of source rasters is planned into bands and jobs. A job is one
//! cut row of one zone; a band groups [`DEFAULT_ROWS_PER_BAND`] consecutive
//! rows. Jobs move through
//!
//! ```text
//! queued -> cutting -> cut -> loading -> loaded -> cleaned
//!    ^                                    |
//!    +------------- failed <--------------+   (any live state may fail)
//! ```
//!
//! Cutters stage JPEG products under `staging/{band}/`, loaders apply a whole
//! band as one store batch, and a cleaner deletes the staged files. Every
//! transition is appended to `journal.log` and fsynced before the next effect,
//! so a crashed run resumes from the journal. Re-applying a band after a crash
//! is harmless because store inserts are idempotent.
//!
//! Work directory layout:
//!
//! ```text
//! plan.json
//! journal.log                         one JSON transition per line
//! staging/{band}/{gridid}_{level}_{row}_{col}.jpg
//! staging/{band}/{gridid}_{acquired}.json
//! staging/{band}/{job}.job.json
//! ```

mod journal;
mod plan;
mod run;
mod source;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use journal::{read_journal, replay, JobState, JobStatus, JournalEntry, MAX_ATTEMPTS};
pub use plan::{Band, Excluded, Job, Plan, DEFAULT_ROWS_PER_BAND};
pub use run::{run, RunOptions};
pub use source::{read_manifest, read_raster, ManifestEntry, Sidecar, SourceRef};

use crate::pyramid::PyramidError;
use crate::store::StoreError;
use crate::Theme;

pub const PLAN_FILE: &str = "plan.json";
pub const JOURNAL_FILE: &str = "journal.log";
pub const STAGING_DIR: &str = "staging";

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("plan: {0}")]
    Plan(String),
    #[error("source: {0}")]
    Source(String),
    #[error("journal: {0}")]
    Journal(String),
    #[error("run stopped at an injected crash point")]
    Killed,
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Totals of one [`run`] invocation. Phase times are summed over workers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadStats {
    pub jobs: u64,
    pub cuts: u64,
    pub bands_loaded: u64,
    pub tiles_inserted: u64,
    pub poisoned: u64,
    pub bytes_cut: u64,
    pub bytes_loaded: u64,
    pub cut_time: Duration,
    pub load_time: Duration,
    pub cleanup_time: Duration,
    pub wall_time: Duration,
    /// Crash-injection points passed.
    pub checkpoints: u64,
}

fn mb_per_s(bytes: u64, t: Duration) -> f64 {
    let s = t.as_secs_f64();
    if s > 0.0 {
        bytes as f64 / 1e6 / s
    } else {
        0.0
    }
}

impl LoadStats {
    pub fn cut_mb_per_s(&self) -> f64 {
        mb_per_s(self.bytes_cut, self.cut_time)
    }

    pub fn load_mb_per_s(&self) -> f64 {
        mb_per_s(self.bytes_loaded, self.load_time)
    }
}

/// Plans `manifest` and writes the plan into `workdir`.
pub fn plan(manifest: &Path, workdir: &Path, rows_per_band: u32) -> Result<Plan, LoadError> {
    let plan = Plan::from_manifest(manifest, rows_per_band)?;
    plan.save(workdir)?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandProgress {
    pub id: String,
    pub theme: Theme,
    pub zone: Option<u8>,
    pub jobs: usize,
    pub states: BTreeMap<JobState, usize>,
}

/// Journal-derived view of a work directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub jobs: usize,
    pub states: BTreeMap<JobState, usize>,
    pub bands: Vec<BandProgress>,
    pub poisoned: usize,
    pub bytes_cut: u64,
    pub bytes_loaded: u64,
    /// Loaded bytes over the journal's first-to-last transition span.
    pub load_mb_per_s: f64,
    pub excluded: usize,
}

/// Replays `workdir`'s journal without touching it.
pub fn progress(workdir: &Path) -> Result<Progress, LoadError> {
    let plan = Plan::load(workdir)?;
    let entries = read_journal(workdir)?;
    let states = replay(&plan, &entries)?;
    Ok(summarize(&plan, &states, &entries))
}

pub fn summarize(
    plan: &Plan,
    states: &BTreeMap<String, JobStatus>,
    entries: &[JournalEntry],
) -> Progress {
    let count = |ids: &mut dyn Iterator<Item = &String>| {
        let mut m: BTreeMap<JobState, usize> = JobState::ALL.iter().map(|&s| (s, 0)).collect();
        for id in ids {
            *m.get_mut(&states[id].state).expect("all states") += 1;
        }
        m
    };
    let bands = plan
        .bands
        .iter()
        .map(|b| BandProgress {
            id: b.id.clone(),
            theme: b.theme,
            zone: b.zone,
            jobs: b.jobs.len(),
            states: count(&mut b.jobs.iter()),
        })
        .collect();
    let bytes_loaded: u64 = states.values().map(|s| s.bytes_loaded).sum();
    let span = match (entries.first(), entries.last()) {
        (Some(a), Some(b)) => (b.ts - a.ts).to_std().unwrap_or_default(),
        _ => Duration::ZERO,
    };
    Progress {
        jobs: plan.jobs.len(),
        states: count(&mut states.keys()),
        bands,
        poisoned: states.values().filter(|s| s.poisoned()).count(),
        bytes_cut: states.values().map(|s| s.bytes_cut).sum(),
        bytes_loaded,
        load_mb_per_s: mb_per_s(bytes_loaded, span),
        excluded: plan.excluded.len(),
    }
}
