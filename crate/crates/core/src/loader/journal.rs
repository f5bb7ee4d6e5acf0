use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::plan::Plan;
use super::LoadError;

/// Failures after which a job is left failed.
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Cutting,
    Cut,
    Loading,
    Loaded,
    Cleaned,
    Failed,
}

impl JobState {
    pub const ALL: [JobState; 7] = [
        JobState::Queued,
        JobState::Cutting,
        JobState::Cut,
        JobState::Loading,
        JobState::Loaded,
        JobState::Cleaned,
        JobState::Failed,
    ];

    /// Forward steps, failure, retry, and the two restart rollbacks.
    pub fn can_move_to(self, to: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, to),
            (Queued, Cutting)
                | (Cutting, Cut)
                | (Cut, Loading)
                | (Loading, Loaded)
                | (Loaded, Cleaned)
                | (Failed, Queued)
                | (Cutting, Queued)
                | (Loading, Cut)
        ) || (to == Failed && !matches!(self, Cleaned | Failed))
    }
}

/// One durable state transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub job: String,
    pub from: JobState,
    pub to: JobState,
    /// Failures so far, including this one when `to` is failed.
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Replayed state of one job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    pub failures: u32,
    pub since: Option<DateTime<Utc>>,
    pub bytes_cut: u64,
    pub bytes_loaded: u64,
    pub note: Option<String>,
}

impl JobStatus {
    fn new() -> JobStatus {
        JobStatus {
            state: JobState::Queued,
            failures: 0,
            since: None,
            bytes_cut: 0,
            bytes_loaded: 0,
            note: None,
        }
    }

    /// Failed for the last time.
    pub fn poisoned(&self) -> bool {
        self.state == JobState::Failed && self.failures >= MAX_ATTEMPTS
    }
}

/// Folds entries over the plan's jobs; jobs never mentioned are queued.
pub fn replay(plan: &Plan, entries: &[JournalEntry]) -> Result<BTreeMap<String, JobStatus>, LoadError> {
    let mut states: BTreeMap<String, JobStatus> =
        plan.jobs.iter().map(|j| (j.id.clone(), JobStatus::new())).collect();
    for e in entries {
        let s = states
            .get_mut(&e.job)
            .ok_or_else(|| LoadError::Journal(format!("entry {} names unknown job {}", e.seq, e.job)))?;
        apply(s, e)?;
    }
    Ok(states)
}

fn apply(s: &mut JobStatus, e: &JournalEntry) -> Result<(), LoadError> {
    if s.state != e.from || !e.from.can_move_to(e.to) {
        return Err(LoadError::Journal(format!(
            "entry {} moves {} {:?} -> {:?} but the job is {:?}",
            e.seq, e.job, e.from, e.to, s.state
        )));
    }
    s.state = e.to;
    s.since = Some(e.ts);
    s.note = e.note.clone();
    match e.to {
        JobState::Failed => s.failures = e.attempt,
        JobState::Cut if e.from == JobState::Cutting => s.bytes_cut = e.bytes.unwrap_or(0),
        JobState::Loaded => s.bytes_loaded = e.bytes.unwrap_or(0),
        _ => {}
    }
    Ok(())
}

/// Reads every complete line. A torn final line (no newline, or not JSON) is
/// reported by its byte offset; anything torn earlier is corruption.
fn read_entries(path: &Path) -> Result<(Vec<JournalEntry>, Option<u64>), LoadError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            return Ok((entries, None));
        }
        let complete = line.ends_with('\n');
        match serde_json::from_str::<JournalEntry>(line.trim_end()) {
            Ok(e) if complete => entries.push(e),
            _ => {
                let mut rest = String::new();
                reader.read_line(&mut rest)?;
                if !rest.is_empty() {
                    return Err(LoadError::Journal(format!(
                        "unreadable journal line at byte {offset}"
                    )));
                }
                return Ok((entries, Some(offset)));
            }
        }
        offset += n as u64;
    }
}

/// Entries of `workdir`'s journal without modifying it.
pub fn read_journal(workdir: &Path) -> Result<Vec<JournalEntry>, LoadError> {
    Ok(read_entries(&workdir.join(super::JOURNAL_FILE))?.0)
}

/// Append-only transition log, fsynced per entry.
pub struct Journal {
    file: File,
    next_seq: u64,
}

impl Journal {
    /// Opens (creating) the journal, truncating a torn final line.
    pub fn open(workdir: &Path) -> Result<(Journal, Vec<JournalEntry>), LoadError> {
        let path = workdir.join(super::JOURNAL_FILE);
        let (entries, torn) = read_entries(&path)?;
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(&path)?;
        if let Some(at) = torn {
            tracing::warn!(offset = at, "truncating torn journal tail");
            file.set_len(at)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        let next_seq = entries.last().map_or(1, |e| e.seq + 1);
        Ok((Journal { file, next_seq }, entries))
    }

    /// Durably appends a transition and returns it.
    pub fn append(
        &mut self,
        job: &str,
        from: JobState,
        to: JobState,
        attempt: u32,
        bytes: Option<u64>,
        note: Option<String>,
    ) -> Result<JournalEntry, LoadError> {
        let entry = self.entry(job, from, to, attempt, bytes, note);
        let mut line = serde_json::to_vec(&entry).expect("entry serialises");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.next_seq += 1;
        Ok(entry)
    }

    /// Writes the first half of an entry without a newline, as a crash in
    /// the middle of an append would.
    pub(crate) fn append_torn(&mut self, job: &str, from: JobState, to: JobState) -> Result<(), LoadError> {
        let entry = self.entry(job, from, to, 0, None, None);
        let line = serde_json::to_vec(&entry).expect("entry serialises");
        self.file.write_all(&line[..line.len() / 2])?;
        self.file.sync_data()?;
        Ok(())
    }

    fn entry(
        &self,
        job: &str,
        from: JobState,
        to: JobState,
        attempt: u32,
        bytes: Option<u64>,
        note: Option<String>,
    ) -> JournalEntry {
        JournalEntry {
            seq: self.next_seq,
            ts: Utc::now(),
            job: job.to_string(),
            from,
            to,
            attempt,
            bytes,
            note,
        }
    }
}
