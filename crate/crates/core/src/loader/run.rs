use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use super::journal::{replay, Journal, JobState, JobStatus, MAX_ATTEMPTS};
use super::plan::{Band, Job, Plan};
use super::{LoadError, LoadStats, STAGING_DIR};
use crate::gazetteer::Gazetteer;
use crate::pyramid::{self, Cut};
use crate::spatial_index::GridId;
use crate::store::{ImageMetaRecord, ImageType, OriginalMetadataRecord, Store, TileBatch, TileRecord};
use crate::{Level, Theme};

/// Worker counts and failure policy for [`run`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub cutters: usize,
    pub loaders: usize,
    /// Delay before the first retry; doubles per failure.
    pub retry_base: Duration,
    /// Secret from which per-cut SPIN-2 tile keys are derived.
    pub master_key: Vec<u8>,
    /// Simulated crash: the run stops dead at this checkpoint.
    pub kill_after: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            cutters: 1,
            loaders: 1,
            retry_base: Duration::from_millis(200),
            master_key: Vec::new(),
            kill_after: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StagedTile {
    file: String,
    level: Level,
    sub_row: u8,
    sub_col: u8,
    encrypted: bool,
    key_id: Option<String>,
}

/// Sidecar of one staged cut: `{gridid}_{acquired}.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StagedCut {
    theme: Theme,
    grid: GridId,
    acquired: NaiveDate,
    sources: Vec<String>,
    tiles: Vec<StagedTile>,
}

/// Written last by a cutter; lists the job's staged cuts.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StagedJob {
    job: String,
    cuts: Vec<String>,
}

fn band_dir(workdir: &Path, band: &str) -> PathBuf {
    workdir.join(STAGING_DIR).join(band)
}

fn job_file(workdir: &Path, job: &Job) -> PathBuf {
    band_dir(workdir, &job.band).join(format!("{}.job.json", job.id))
}

/// Counts checkpoints and fails every one past the limit.
struct Killer {
    limit: Option<u64>,
    count: AtomicU64,
}

impl Killer {
    fn check(&self) -> Result<(), LoadError> {
        let n = self.count.fetch_add(1, Ordering::SeqCst) + 1;
        match self.limit {
            Some(l) if n > l => Err(LoadError::Killed),
            _ => Ok(()),
        }
    }
}

struct Ledger {
    journal: Journal,
    states: BTreeMap<String, JobStatus>,
    /// Earliest retry time of failed jobs, this process only.
    retry_at: HashMap<String, Instant>,
    /// Bands claimed by a loader.
    claimed: BTreeSet<String>,
}

struct Shared<'a> {
    workdir: &'a Path,
    plan: &'a Plan,
    store: &'a Store,
    gazetteer: Option<&'a Gazetteer>,
    opts: &'a RunOptions,
    ledger: Mutex<Ledger>,
    changed: Condvar,
    killer: Killer,
    stop: AtomicBool,
    stats: Mutex<LoadStats>,
}

#[derive(Clone, Copy)]
enum Role {
    Cutter,
    Loader,
    Cleaner,
}

enum Next<T> {
    Work(T),
    Wait(Option<Duration>),
    Done,
}

impl Shared<'_> {
    /// Journals a transition; a simulated crash here may leave a torn line.
    fn transition(
        &self,
        ledger: &mut Ledger,
        job: &str,
        to: JobState,
        bytes: Option<u64>,
        note: Option<String>,
    ) -> Result<(), LoadError> {
        let status = ledger.states.get(job).expect("planned job").clone();
        let attempt = if to == JobState::Failed {
            status.failures + 1
        } else {
            status.failures
        };
        if let Err(e) = self.killer.check() {
            ledger.journal.append_torn(job, status.state, to)?;
            return Err(e);
        }
        ledger
            .journal
            .append(job, status.state, to, attempt, bytes, note.clone())?;
        let s = ledger.states.get_mut(job).expect("planned job");
        s.state = to;
        s.note = note;
        match to {
            JobState::Failed => s.failures = attempt,
            JobState::Cut if status.state == JobState::Cutting => s.bytes_cut = bytes.unwrap_or(0),
            JobState::Loaded => s.bytes_loaded = bytes.unwrap_or(0),
            _ => {}
        }
        self.changed.notify_all();
        Ok(())
    }

    fn finished(&self, ledger: &Ledger) -> bool {
        ledger
            .states
            .values()
            .all(|s| s.state == JobState::Cleaned || s.poisoned())
    }

    fn halt(&self) {
        self.stop.store(true, Ordering::SeqCst);
        let _guard = self.ledger.lock();
        self.changed.notify_all();
    }

    fn worker<T>(
        &self,
        mut pick: impl FnMut(&mut Ledger) -> Result<Next<T>, LoadError>,
        mut work: impl FnMut(T) -> Result<(), LoadError>,
    ) -> Result<(), LoadError> {
        loop {
            let item = {
                let mut ledger = self.ledger.lock();
                loop {
                    if self.stop.load(Ordering::SeqCst) {
                        return Ok(());
                    }
                    match pick(&mut ledger)? {
                        Next::Work(t) => break t,
                        Next::Done => return Ok(()),
                        Next::Wait(Some(d)) => {
                            self.changed.wait_for(&mut ledger, d);
                        }
                        Next::Wait(None) => {
                            self.changed.wait(&mut ledger);
                        }
                    }
                }
            };
            work(item)?;
        }
    }

    fn cutter(&self) -> Result<(), LoadError> {
        self.worker(|ledger| self.pick_cut(ledger), |job| self.cut_job(job))
    }

    fn pick_cut(&self, ledger: &mut Ledger) -> Result<Next<&Job>, LoadError> {
        if self.finished(ledger) {
            return Ok(Next::Done);
        }
        let now = Instant::now();
        let mut wait: Option<Duration> = None;
        for job in &self.plan.jobs {
            let s = &ledger.states[&job.id];
            match s.state {
                JobState::Queued => {
                    self.transition(ledger, &job.id, JobState::Cutting, None, None)?;
                    return Ok(Next::Work(job));
                }
                JobState::Failed if !s.poisoned() => {
                    let at = ledger.retry_at.get(&job.id).copied().unwrap_or(now);
                    if at <= now {
                        self.transition(ledger, &job.id, JobState::Queued, None, None)?;
                        self.transition(ledger, &job.id, JobState::Cutting, None, None)?;
                        return Ok(Next::Work(job));
                    }
                    let d = at - now;
                    wait = Some(wait.map_or(d, |w| w.min(d)));
                }
                _ => {}
            }
        }
        Ok(Next::Wait(wait))
    }

    fn fail(&self, job: &str, err: &LoadError) -> Result<(), LoadError> {
        let mut ledger = self.ledger.lock();
        self.transition(&mut ledger, job, JobState::Failed, None, Some(err.to_string()))?;
        let failures = ledger.states[job].failures;
        tracing::warn!(job, failures, error = %err, "job failed");
        if failures < MAX_ATTEMPTS {
            let delay = self.opts.retry_base * 2u32.pow(failures - 1);
            ledger.retry_at.insert(job.to_string(), Instant::now() + delay);
        }
        Ok(())
    }

    fn cut_job(&self, job: &Job) -> Result<(), LoadError> {
        let started = Instant::now();
        match self.cut_job_inner(job) {
            Ok((bytes, cuts)) => {
                {
                    let mut st = self.stats.lock();
                    st.bytes_cut += bytes;
                    st.cuts += cuts;
                    st.cut_time += started.elapsed();
                }
                let mut ledger = self.ledger.lock();
                self.transition(&mut ledger, &job.id, JobState::Cut, Some(bytes), None)
            }
            Err(LoadError::Killed) => Err(LoadError::Killed),
            Err(e) => self.fail(&job.id, &e),
        }
    }

    fn cut_job_inner(&self, job: &Job) -> Result<(u64, u64), LoadError> {
        let mut rasters = Vec::with_capacity(job.sources.len());
        for id in &job.sources {
            let src = self
                .plan
                .source(id)
                .ok_or_else(|| LoadError::Plan(format!("job {} names unknown source {id}", job.id)))?;
            rasters.push(src.read()?);
        }
        let rows = job.row..job.row + 1;
        let cuts: Vec<Cut> = match (job.theme, job.zone) {
            (Theme::Usgs, Some(zone)) => pyramid::cut_usgs_rows(&rasters, zone, rows)?,
            (Theme::Spin2, None) => pyramid::cut_spin2(&rasters, rows)?,
            _ => return Err(LoadError::Plan(format!("job {} has no valid grid", job.id))),
        };
        let dir = band_dir(self.workdir, &job.band);
        std::fs::create_dir_all(&dir)?;
        let mut bytes = 0u64;
        let mut names = Vec::with_capacity(cuts.len());
        for cut in &cuts {
            self.killer.check()?;
            let key = (cut.theme == Theme::Spin2).then(|| pyramid::cut_key(&self.opts.master_key, cut));
            let products = pyramid::process_cut(cut, key.as_ref())?;
            let mut tiles = Vec::with_capacity(products.len());
            for p in &products {
                let file = p.file_name(cut.grid);
                std::fs::write(dir.join(&file), &p.blob)?;
                bytes += p.blob.len() as u64;
                tiles.push(StagedTile {
                    file,
                    level: p.level,
                    sub_row: p.sub_row,
                    sub_col: p.sub_col,
                    encrypted: p.encrypted,
                    key_id: p.key_id.clone(),
                });
            }
            let name = format!("{}_{}.json", cut.grid, cut.acquired);
            let staged = StagedCut {
                theme: cut.theme,
                grid: cut.grid,
                acquired: cut.acquired,
                sources: cut.sources.clone(),
                tiles,
            };
            write_atomic(&dir.join(&name), &serde_json::to_vec_pretty(&staged).expect("serialises"))?;
            names.push(name);
        }
        let staged = StagedJob {
            job: job.id.clone(),
            cuts: names,
        };
        write_atomic(&job_file(self.workdir, job), &serde_json::to_vec_pretty(&staged).expect("serialises"))?;
        Ok((bytes, cuts.len() as u64))
    }

    fn loader(&self) -> Result<(), LoadError> {
        self.worker(|ledger| self.pick_band(ledger), |band| self.load_band(band))
    }

    /// With one loader, bands load strictly in plan order; otherwise any
    /// ready band may go.
    fn pick_band(&self, ledger: &mut Ledger) -> Result<Next<&Band>, LoadError> {
        let mut pending = false;
        for band in &self.plan.bands {
            if ledger.claimed.contains(&band.id) {
                continue;
            }
            let states: Vec<&JobStatus> = band.jobs.iter().map(|j| &ledger.states[j]).collect();
            let done = states.iter().all(|s| {
                matches!(s.state, JobState::Loaded | JobState::Cleaned) || s.poisoned()
            });
            if done {
                continue;
            }
            pending = true;
            let ready = states
                .iter()
                .all(|s| matches!(s.state, JobState::Cut | JobState::Loaded | JobState::Cleaned) || s.poisoned());
            if ready {
                ledger.claimed.insert(band.id.clone());
                for j in &band.jobs {
                    if ledger.states[j].state == JobState::Cut {
                        self.transition(ledger, j, JobState::Loading, None, None)?;
                    }
                }
                return Ok(Next::Work(band));
            }
            if self.opts.loaders <= 1 {
                break;
            }
        }
        if !pending && self.finished(ledger) {
            return Ok(Next::Done);
        }
        Ok(Next::Wait(if pending { Some(Duration::from_millis(500)) } else { None }))
    }

    fn load_band(&self, band: &Band) -> Result<(), LoadError> {
        let jobs: Vec<&Job> = {
            let ledger = self.ledger.lock();
            band.jobs
                .iter()
                .filter(|j| ledger.states[*j].state == JobState::Loading)
                .map(|j| self.plan.job(j).expect("planned job"))
                .collect()
        };
        let started = Instant::now();
        let result = self.load_jobs(&jobs);
        let mut ledger = self.ledger.lock();
        ledger.claimed.remove(&band.id);
        match result {
            Ok(per_job) => {
                let mut st = self.stats.lock();
                st.load_time += started.elapsed();
                st.bands_loaded += 1;
                for (job, bytes) in jobs.iter().zip(per_job) {
                    st.bytes_loaded += bytes;
                    self.transition(&mut ledger, &job.id, JobState::Loaded, Some(bytes), None)?;
                }
                Ok(())
            }
            Err(LoadError::Killed) => Err(LoadError::Killed),
            Err(e) => {
                drop(ledger);
                for job in &jobs {
                    self.fail(&job.id, &e)?;
                }
                Ok(())
            }
        }
    }

    /// One `put_tiles` batch for the whole band, then gazetteer registration.
    fn load_jobs(&self, jobs: &[&Job]) -> Result<Vec<u64>, LoadError> {
        let mut batch = TileBatch::default();
        let mut per_job = Vec::with_capacity(jobs.len());
        let mut originals = BTreeSet::new();
        for job in jobs {
            let dir = band_dir(self.workdir, &job.band);
            let staged: StagedJob = read_json(&job_file(self.workdir, job))?;
            let mut bytes = 0u64;
            for name in &staged.cuts {
                let cut: StagedCut = read_json(&dir.join(name))?;
                let key_id = cut.tiles.iter().find_map(|t| t.key_id.clone());
                batch.metas.push(ImageMetaRecord {
                    theme: cut.theme,
                    grid: cut.grid,
                    acquired: cut.acquired,
                    source: cut.sources.join(","),
                    visible: true,
                    key_id,
                    center_place_name: self
                        .gazetteer
                        .and_then(|g| g.nearest_place(cut.grid))
                        .map(|p| p.name),
                    insert_epoch: 0,
                });
                for t in cut.tiles {
                    let blob = std::fs::read(dir.join(&t.file))?;
                    bytes += blob.len() as u64;
                    batch.tiles.push(TileRecord {
                        theme: cut.theme,
                        grid: cut.grid,
                        level: t.level,
                        sub_row: t.sub_row,
                        sub_col: t.sub_col,
                        acquired: cut.acquired,
                        blob,
                        encrypted: t.encrypted,
                        key_id: t.key_id,
                        insert_epoch: 0,
                    });
                }
            }
            for id in &job.sources {
                if originals.insert(id.clone()) {
                    let src = self.plan.source(id).expect("planned source");
                    batch.originals.push(original_record(&src.sidecar));
                }
            }
            per_job.push(bytes);
        }
        let metas: Vec<(Theme, GridId, NaiveDate)> =
            batch.metas.iter().map(|m| (m.theme, m.grid, m.acquired)).collect();
        self.killer.check()?;
        let inserted = self.store.put_tiles(batch)?;
        self.stats.lock().tiles_inserted += inserted as u64;
        self.killer.check()?;
        if let Some(g) = self.gazetteer {
            for (theme, grid, acquired) in metas {
                g.register_image(theme, grid, acquired);
            }
        }
        Ok(per_job)
    }

    fn cleaner(&self) -> Result<(), LoadError> {
        self.worker(
            |ledger| {
                if let Some(job) = self
                    .plan
                    .jobs
                    .iter()
                    .find(|j| ledger.states[&j.id].state == JobState::Loaded)
                {
                    return Ok(Next::Work(job));
                }
                if self.finished(ledger) {
                    Ok(Next::Done)
                } else {
                    Ok(Next::Wait(None))
                }
            },
            |job| {
                let started = Instant::now();
                self.killer.check()?;
                remove_staged(self.workdir, job)?;
                self.stats.lock().cleanup_time += started.elapsed();
                let mut ledger = self.ledger.lock();
                self.transition(&mut ledger, &job.id, JobState::Cleaned, None, None)
            },
        )
    }
}

fn original_record(s: &super::Sidecar) -> OriginalMetadataRecord {
    let mut attributes = BTreeMap::new();
    match s.anchor {
        pyramid::RasterAnchor::Utm {
            zone,
            easting,
            northing,
        } => {
            attributes.insert("utm_zone".into(), zone.to_string());
            attributes.insert("anchor_easting".into(), format!("{easting:.3}"));
            attributes.insert("anchor_northing".into(), format!("{northing:.3}"));
        }
        pyramid::RasterAnchor::Geo { lat, lon } => {
            attributes.insert("anchor_lat".into(), format!("{lat:.7}"));
            attributes.insert("anchor_lon".into(), format!("{lon:.7}"));
        }
    }
    OriginalMetadataRecord {
        source_id: s.source_id.clone(),
        img_source: s.theme,
        image_type: s.image_type.unwrap_or(ImageType::Tiff),
        instrument: s.instrument.clone(),
        acquired: s.acquired_date,
        processed: s.processed_date,
        resolution_mm: (s.pixel_scale_m * 1000.0).round() as u32,
        width: s.width,
        height: s.height,
        attributes,
        insert_epoch: 0,
    }
}

fn remove_staged(workdir: &Path, job: &Job) -> Result<(), LoadError> {
    let path = job_file(workdir, job);
    let staged: StagedJob = match std::fs::read(&path) {
        Ok(b) => serde_json::from_slice(&b).map_err(|e| LoadError::Journal(e.to_string()))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    let dir = band_dir(workdir, &job.band);
    for name in &staged.cuts {
        let cut: Option<StagedCut> = match std::fs::read(dir.join(name)) {
            Ok(b) => serde_json::from_slice(&b).ok(),
            Err(_) => None,
        };
        for t in cut.map(|c| c.tiles).unwrap_or_default() {
            remove_if_present(&dir.join(t.file))?;
        }
        remove_if_present(&dir.join(name))?;
    }
    remove_if_present(&path)?;
    // Succeeds only once the last job of the band is gone.
    let _ = std::fs::remove_dir(&dir);
    Ok(())
}

fn remove_if_present(path: &Path) -> std::io::Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, LoadError> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| LoadError::Source(format!("{}: {e}", path.display())))
}

/// Runs the planned workflow in `workdir` to completion.
///
/// Jobs caught mid-cut or mid-load by an earlier crash are first rolled back
/// to their last durable state; that does not count as an attempt.
pub fn run(
    workdir: &Path,
    store: &Store,
    gazetteer: Option<&Gazetteer>,
    opts: &RunOptions,
) -> Result<LoadStats, LoadError> {
    let plan = Plan::load(workdir)?;
    let started = Instant::now();
    let (mut journal, entries) = Journal::open(workdir)?;
    let mut states = replay(&plan, &entries)?;
    for (job, s) in states.iter_mut() {
        let back = match s.state {
            JobState::Cutting => JobState::Queued,
            JobState::Loading => JobState::Cut,
            _ => continue,
        };
        journal.append(job, s.state, back, s.failures, None, Some("restart".into()))?;
        s.state = back;
    }
    let shared = Shared {
        workdir,
        plan: &plan,
        store,
        gazetteer,
        opts,
        ledger: Mutex::new(Ledger {
            journal,
            states,
            retry_at: HashMap::new(),
            claimed: BTreeSet::new(),
        }),
        changed: Condvar::new(),
        killer: Killer {
            limit: opts.kill_after,
            count: AtomicU64::new(0),
        },
        stop: AtomicBool::new(false),
        stats: Mutex::new(LoadStats {
            jobs: plan.jobs.len() as u64,
            ..LoadStats::default()
        }),
    };

    let results: Vec<Result<(), LoadError>> = std::thread::scope(|scope| {
        let shared = &shared;
        let guarded = |role: Role| {
            move || {
                let r = match role {
                    Role::Cutter => shared.cutter(),
                    Role::Loader => shared.loader(),
                    Role::Cleaner => shared.cleaner(),
                };
                if r.is_err() {
                    shared.halt();
                }
                r
            }
        };
        let mut handles = Vec::new();
        for _ in 0..opts.cutters.max(1) {
            handles.push(scope.spawn(guarded(Role::Cutter)));
        }
        for _ in 0..opts.loaders.max(1) {
            handles.push(scope.spawn(guarded(Role::Loader)));
        }
        handles.push(scope.spawn(guarded(Role::Cleaner)));
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(LoadError::Journal("worker panicked".into()))))
            .collect()
    });
    let mut killed = false;
    for r in results {
        match r {
            Err(LoadError::Killed) => killed = true,
            Err(e) => return Err(e),
            Ok(()) => {}
        }
    }
    if killed {
        return Err(LoadError::Killed);
    }
    let ledger = shared.ledger.into_inner();
    let mut stats = shared.stats.into_inner();
    stats.checkpoints = shared.killer.count.load(Ordering::SeqCst);
    stats.poisoned = ledger.states.values().filter(|s| s.poisoned()).count() as u64;
    stats.wall_time = started.elapsed();
    Ok(stats)
}
