//! Grid-clustered tile and metadata store.
//!
//! Layout under the store root:
//!
//! ```text
//! wal.log              appended batches: Begin, Record..., Commit
//! segments/MANIFEST    JSON: compacted-through epoch and segment file names
//! segments/*.seg       records in key order, tiles first
//! ```
//!
//! All state lives in an in-memory ordered index; tile blobs stay on disk and
//! are fetched with positioned reads. Tiles are keyed by
//! `(theme, level, grid, sub_row, sub_col, acquired)`, so after [`Store::compact`]
//! the segment files hold tiles in Morton order within each theme and level.
//!
//! Writes are serialised by a writer lock and become durable (fsync) before
//! they are visible. Reads take a shared lock and run concurrently with each
//! other and with snapshots.

mod log;
mod record;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{NaiveDate, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::spatial_index::GridId;
use crate::{Level, Theme};
use log::{decode_entry, encode_entry, read_frame, read_frame_at, write_frame, Entry, FrameRead};

pub use record::{
    HitKind, HitRecord, ImageMetaRecord, ImageType, MetaKey, OriginalMetadataRecord, PickRecord,
    Record, TileBatch, TileKey, TileRecord,
};
pub use snapshot::{read_snapshot, SnapshotKind, SnapshotSummary, SNAPSHOT_MAGIC};

const WAL_FILE: &str = "wal.log";
const SEGMENTS: &str = "segments";
const SEGMENTS_NEW: &str = "segments.new";
const SEGMENTS_OLD: &str = "segments.old";
const MANIFEST: &str = "MANIFEST";

pub const DEFAULT_SEGMENT_BYTES: u64 = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding: {0}")]
    Encoding(#[from] bincode::Error),
    #[error("corrupt store data: {0}")]
    Corrupt(String),
    #[error("batch rejected: {0}")]
    Invariant(String),
    #[error("no visible imagery at {0}")]
    NotVisible(GridId),
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    /// Segment files roll over once they exceed this size.
    pub segment_bytes: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            segment_bytes: DEFAULT_SEGMENT_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum FileId {
    Wal,
    Seg(u32),
}

#[derive(Debug, Clone, Copy)]
struct Loc {
    file: FileId,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone)]
struct TileEntry {
    loc: Loc,
    digest: [u8; 16],
    encrypted: bool,
    key_id: Option<String>,
    insert_epoch: u64,
}

fn digest(blob: &[u8]) -> [u8; 16] {
    let d = Sha256::digest(blob);
    let mut out = [0u8; 16];
    out.copy_from_slice(&d[..16]);
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    through_epoch: u64,
    files: Vec<String>,
}

#[derive(Default)]
struct State {
    epoch: u64,
    tiles: BTreeMap<TileKey, TileEntry>,
    metas: BTreeMap<MetaKey, ImageMetaRecord>,
    originals: BTreeMap<String, OriginalMetadataRecord>,
    picks: BTreeMap<(Theme, GridId, String), PickRecord>,
    hits: BTreeMap<(HitKind, String), HitRecord>,
    files: HashMap<FileId, Arc<File>>,
    segment_names: Vec<String>,
}

fn position_range(
    theme: Theme,
    level: Level,
    grid: GridId,
    sub: Option<(u8, u8)>,
) -> std::ops::RangeInclusive<TileKey> {
    let (lo, hi) = match sub {
        Some(s) => (s, s),
        None => ((0, 0), (u8::MAX, u8::MAX)),
    };
    let key = |(sub_row, sub_col), acquired| TileKey {
        theme,
        level,
        grid,
        sub_row,
        sub_col,
        acquired,
    };
    key(lo, NaiveDate::MIN)..=key(hi, NaiveDate::MAX)
}

fn meta_range(theme: Theme, grid: GridId) -> std::ops::RangeInclusive<MetaKey> {
    (theme, grid, NaiveDate::MIN)..=(theme, grid, NaiveDate::MAX)
}

impl State {
    fn is_visible(&self, theme: Theme, grid: GridId, acquired: NaiveDate) -> bool {
        self.metas
            .get(&(theme, grid, acquired))
            .is_some_and(|m| m.visible)
    }

    fn newest_meta(&self, theme: Theme, grid: GridId) -> Option<&ImageMetaRecord> {
        self.metas
            .range(meta_range(theme, grid))
            .next_back()
            .map(|e| e.1)
    }

    /// Applies one record. Same-key records replace only when not older by
    /// epoch; USGS records also replace every older acquisition of the cell.
    fn apply(&mut self, rec: Record, loc: Option<Loc>) {
        match rec {
            Record::Tile(t) => {
                let key = t.key();
                if t.theme == Theme::Usgs {
                    let same_pos: Vec<TileKey> = self
                        .tiles
                        .range(position_range(
                            t.theme,
                            t.level,
                            t.grid,
                            Some((t.sub_row, t.sub_col)),
                        ))
                        .map(|e| *e.0)
                        .collect();
                    if same_pos.iter().any(|k| k.acquired > t.acquired) {
                        return;
                    }
                    for k in same_pos.iter().filter(|k| k.acquired < t.acquired) {
                        self.tiles.remove(k);
                    }
                }
                if self
                    .tiles
                    .get(&key)
                    .is_some_and(|e| e.insert_epoch > t.insert_epoch)
                {
                    return;
                }
                let loc = loc.expect("tile records carry a location");
                self.tiles.insert(
                    key,
                    TileEntry {
                        loc,
                        digest: digest(&t.blob),
                        encrypted: t.encrypted,
                        key_id: t.key_id,
                        insert_epoch: t.insert_epoch,
                    },
                );
            }
            Record::Meta(m) => {
                if m.theme == Theme::Usgs {
                    let existing: Vec<NaiveDate> = self
                        .metas
                        .range(meta_range(m.theme, m.grid))
                        .map(|e| e.0 .2)
                        .collect();
                    if existing.iter().any(|&d| d > m.acquired) {
                        return;
                    }
                    for d in existing.into_iter().filter(|&d| d < m.acquired) {
                        self.metas.remove(&(m.theme, m.grid, d));
                        self.drop_tiles(m.theme, m.grid, d);
                    }
                }
                if self
                    .metas
                    .get(&m.key())
                    .is_some_and(|e| e.insert_epoch > m.insert_epoch)
                {
                    return;
                }
                self.metas.insert(m.key(), m);
            }
            Record::Original(o) => {
                if self
                    .originals
                    .get(&o.source_id)
                    .is_some_and(|e| e.insert_epoch > o.insert_epoch)
                {
                    return;
                }
                self.originals.insert(o.source_id.clone(), o);
            }
            Record::Pick(p) => {
                if self
                    .picks
                    .get(&p.key())
                    .is_some_and(|e| e.insert_epoch > p.insert_epoch)
                {
                    return;
                }
                self.picks.insert(p.key(), p);
            }
            Record::Hit(h) => {
                let key = (h.kind, h.key.clone());
                if self
                    .hits
                    .get(&key)
                    .is_some_and(|e| e.insert_epoch > h.insert_epoch)
                {
                    return;
                }
                self.hits.insert(key, h);
            }
        }
    }

    fn drop_tiles(&mut self, theme: Theme, grid: GridId, acquired: NaiveDate) {
        for level in Level::ALL {
            let doomed: Vec<TileKey> = self
                .tiles
                .range(position_range(theme, level, grid, None))
                .filter(|e| e.0.acquired == acquired)
                .map(|e| *e.0)
                .collect();
            for k in doomed {
                self.tiles.remove(&k);
            }
        }
    }

    fn read_tile(&self, key: &TileKey) -> Result<TileRecord, StoreError> {
        let entry = self
            .tiles
            .get(key)
            .ok_or_else(|| StoreError::Corrupt(format!("missing index entry {key:?}")))?;
        let file = self
            .files
            .get(&entry.loc.file)
            .ok_or_else(|| StoreError::Corrupt(format!("no open file for {:?}", entry.loc.file)))?;
        let payload = read_frame_at(file, entry.loc.offset, entry.loc.len)?;
        match decode_entry(&payload)? {
            Entry::Record(Record::Tile(t)) if t.key() == *key => Ok(t),
            _ => Err(StoreError::Corrupt(format!(
                "index entry for {key:?} points at a different record"
            ))),
        }
    }

    /// Every record in canonical order: tiles, metas, originals, picks, hits.
    fn for_each_record(
        &self,
        mut f: impl FnMut(&Record) -> Result<(), StoreError>,
    ) -> Result<(), StoreError> {
        for key in self.tiles.keys() {
            f(&Record::Tile(self.read_tile(key)?))?;
        }
        for m in self.metas.values() {
            f(&Record::Meta(m.clone()))?;
        }
        for o in self.originals.values() {
            f(&Record::Original(o.clone()))?;
        }
        for p in self.picks.values() {
            f(&Record::Pick(p.clone()))?;
        }
        for h in self.hits.values() {
            f(&Record::Hit(h.clone()))?;
        }
        Ok(())
    }
}

struct Writer {
    wal: File,
    wal_len: u64,
}

/// Counters reported by [`Store::stats`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub epoch: u64,
    pub tiles: usize,
    pub tile_bytes: u64,
    pub image_metas: usize,
    pub hidden_metas: usize,
    pub originals: usize,
    pub picks: usize,
    pub hit_keys: usize,
    pub wal_bytes: u64,
    pub segments: usize,
    pub segment_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompactStats {
    pub records: u64,
    pub segments: usize,
    pub bytes: u64,
}

pub struct Store {
    root: PathBuf,
    config: StoreConfig,
    writer: Mutex<Writer>,
    state: RwLock<State>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("root", &self.root)
            .finish_non_exhaustive()
    }
}

fn sync_dir(path: &Path) -> std::io::Result<()> {
    File::open(path)?.sync_all()
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Store, StoreError> {
        Store::open_with(root, StoreConfig::default())
    }

    pub fn open_with(root: impl AsRef<Path>, config: StoreConfig) -> Result<Store, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        recover_compaction(&root)?;
        let mut state = State::default();
        load_segments(&root, &mut state)?;
        let (wal, wal_len) = replay_wal(&root, &mut state)?;
        Ok(Store {
            root,
            config,
            writer: Mutex::new(Writer { wal, wal_len }),
            state: RwLock::new(state),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Current epoch: the number of the last applied write batch.
    pub fn epoch(&self) -> u64 {
        self.state.read().epoch
    }

    /// Appends one batch to the log and applies it. Records get `epoch`
    /// unless `keep_epochs` is set.
    fn commit(
        &self,
        w: &mut Writer,
        epoch: u64,
        mut records: Vec<Record>,
        keep_epochs: bool,
        durable: bool,
    ) -> Result<(), StoreError> {
        if !keep_epochs {
            for r in &mut records {
                r.set_epoch(epoch);
            }
        }
        let start = w.wal_len;
        let mut buf = BufWriter::new(&mut w.wal);
        let mut offset = start;
        let mut locs = Vec::with_capacity(records.len());
        offset += write_frame(
            &mut buf,
            &encode_entry(&Entry::Begin {
                epoch,
                records: records.len() as u32,
            })?,
        )?;
        let mut frames = Vec::new();
        for r in records {
            let entry = Entry::Record(r);
            let len = write_frame(&mut buf, &encode_entry(&entry)?)?;
            locs.push(Loc {
                file: FileId::Wal,
                offset,
                len,
            });
            offset += len;
            let Entry::Record(r) = entry else {
                unreachable!()
            };
            frames.push(r);
        }
        offset += write_frame(&mut buf, &encode_entry(&Entry::Commit { epoch })?)?;
        let write_result = buf.flush();
        drop(buf);
        if let Err(e) = write_result.and_then(|_| if durable { w.wal.sync_data() } else { Ok(()) })
        {
            // Drop the partial batch so the next append starts clean.
            let _ = w.wal.set_len(start);
            let _ = w.wal.seek(SeekFrom::Start(start));
            return Err(e.into());
        }
        w.wal_len = offset;

        let mut state = self.state.write();
        for (r, loc) in frames.into_iter().zip(locs) {
            state.apply(r, Some(loc));
        }
        state.epoch = state.epoch.max(epoch);
        Ok(())
    }

    /// Inserts a batch atomically and returns how many tile records changed.
    ///
    /// Identical records already present are skipped, so replaying a batch
    /// returns 0. A reloaded image meta keeps its current visibility.
    pub fn put_tiles(&self, batch: TileBatch) -> Result<usize, StoreError> {
        validate_batch(&batch)?;
        let mut w = self.writer.lock();
        let (epoch, records, inserted) = {
            let state = self.state.read();
            let batch_metas: HashSet<MetaKey> = batch.metas.iter().map(|m| m.key()).collect();
            for t in &batch.tiles {
                let mk = (t.theme, t.grid, t.acquired);
                if !batch_metas.contains(&mk) && !state.metas.contains_key(&mk) {
                    return Err(StoreError::Invariant(format!(
                        "tile {} {} {}/{} has no image meta for {}",
                        t.grid, t.level, t.sub_row, t.sub_col, t.acquired
                    )));
                }
            }

            let mut records = Vec::new();
            for m in batch.metas {
                let newest = state.newest_meta(m.theme, m.grid);
                if m.theme == Theme::Usgs && newest.is_some_and(|n| n.acquired > m.acquired) {
                    continue;
                }
                let mut m = m;
                if let Some(existing) = state.metas.get(&m.key()) {
                    m.visible = existing.visible;
                    if existing.same_content(&m) {
                        continue;
                    }
                } else if m.theme == Theme::Usgs
                    && state
                        .metas
                        .range(meta_range(m.theme, m.grid))
                        .any(|e| !e.1.visible)
                {
                    // A newer USGS image of a hidden cell stays hidden.
                    m.visible = false;
                }
                records.push(Record::Meta(m));
            }
            let mut inserted = 0;
            for t in batch.tiles {
                if t.theme == Theme::Usgs
                    && state
                        .newest_meta(t.theme, t.grid)
                        .is_some_and(|n| n.acquired > t.acquired)
                {
                    continue;
                }
                if let Some(e) = state.tiles.get(&t.key()) {
                    if e.digest == digest(&t.blob)
                        && e.encrypted == t.encrypted
                        && e.key_id == t.key_id
                    {
                        continue;
                    }
                }
                inserted += 1;
                records.push(Record::Tile(t));
            }
            for o in batch.originals {
                if state
                    .originals
                    .get(&o.source_id)
                    .is_some_and(|e| e.same_content(&o))
                {
                    continue;
                }
                records.push(Record::Original(o));
            }
            (state.epoch + 1, records, inserted)
        };
        if records.is_empty() {
            return Ok(0);
        }
        self.commit(&mut w, epoch, records, false, true)?;
        Ok(inserted)
    }

    /// Latest visible acquisition when `acquired` is `None`. Hidden or missing
    /// tiles are `None`.
    pub fn get_tile(
        &self,
        theme: Theme,
        grid: GridId,
        level: Level,
        sub_row: u8,
        sub_col: u8,
        acquired: Option<NaiveDate>,
    ) -> Result<Option<TileRecord>, StoreError> {
        let state = self.state.read();
        let found = state
            .tiles
            .range(position_range(theme, level, grid, Some((sub_row, sub_col))))
            .rev()
            .map(|e| e.0)
            .find(|k| {
                acquired.is_none_or(|d| d == k.acquired)
                    && state.is_visible(theme, grid, k.acquired)
            })
            .copied();
        found.map(|k| state.read_tile(&k)).transpose()
    }

    /// Visible tiles of the given cells in `(grid, sub_row, sub_col, acquired)`
    /// order.
    pub fn get_range(
        &self,
        theme: Theme,
        level: Level,
        grids: &[GridId],
    ) -> Result<Vec<TileRecord>, StoreError> {
        let cells: BTreeSet<GridId> = grids.iter().copied().collect();
        let state = self.state.read();
        let mut out = Vec::new();
        for g in cells {
            let keys: Vec<TileKey> = state
                .tiles
                .range(position_range(theme, level, g, None))
                .filter(|e| state.is_visible(theme, g, e.0.acquired))
                .map(|e| *e.0)
                .collect();
            for k in keys {
                out.push(state.read_tile(&k)?);
            }
        }
        Ok(out)
    }

    /// Sets the visibility of every acquisition at the given cells and returns
    /// how many image metas changed.
    pub fn hide_region(
        &self,
        theme: Theme,
        grids: &[GridId],
        visible: bool,
    ) -> Result<usize, StoreError> {
        let mut w = self.writer.lock();
        let (epoch, records) = {
            let state = self.state.read();
            let cells: BTreeSet<GridId> = grids.iter().copied().collect();
            let mut records = Vec::new();
            for g in cells {
                for m in state.metas.range(meta_range(theme, g)).map(|e| e.1) {
                    if m.visible != visible {
                        records.push(Record::Meta(ImageMetaRecord {
                            visible,
                            ..m.clone()
                        }));
                    }
                }
            }
            (state.epoch + 1, records)
        };
        let n = records.len();
        if n > 0 {
            self.commit(&mut w, epoch, records, false, true)?;
        }
        Ok(n)
    }

    /// Counts one request. Hits are logged without fsync.
    pub fn record_hit(&self, kind: HitKind, key: &str) -> Result<u64, StoreError> {
        let mut w = self.writer.lock();
        let (epoch, rec) = {
            let state = self.state.read();
            let count = state
                .hits
                .get(&(kind, key.to_string()))
                .map_or(0, |h| h.count)
                + 1;
            let rec = HitRecord {
                kind,
                key: key.to_string(),
                count,
                last_seen: Utc::now(),
                insert_epoch: 0,
            };
            (state.epoch + 1, rec)
        };
        let count = rec.count;
        self.commit(&mut w, epoch, vec![Record::Hit(rec)], false, false)?;
        Ok(count)
    }

    /// Highest counts first, ties by key.
    pub fn top_hits(&self, kind: HitKind, n: usize) -> Vec<HitRecord> {
        let state = self.state.read();
        let mut all: Vec<HitRecord> = state
            .hits
            .values()
            .filter(|h| h.kind == kind)
            .cloned()
            .collect();
        all.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
        all.truncate(n);
        all
    }

    /// Adds a pick; the cell must have visible imagery. Returns false if an
    /// identical pick exists.
    pub fn add_pick(&self, pick: PickRecord) -> Result<bool, StoreError> {
        if pick.grid.theme() != pick.theme {
            return Err(StoreError::Invariant(format!(
                "pick grid {} is not a {} cell",
                pick.grid, pick.theme
            )));
        }
        let mut w = self.writer.lock();
        let epoch = {
            let state = self.state.read();
            if !state
                .metas
                .range(meta_range(pick.theme, pick.grid))
                .any(|e| e.1.visible)
            {
                return Err(StoreError::NotVisible(pick.grid));
            }
            if state
                .picks
                .get(&pick.key())
                .is_some_and(|p| p.caption == pick.caption)
            {
                return Ok(false);
            }
            state.epoch + 1
        };
        self.commit(&mut w, epoch, vec![Record::Pick(pick)], false, true)?;
        Ok(true)
    }

    pub fn picks(&self) -> Vec<PickRecord> {
        self.state.read().picks.values().cloned().collect()
    }

    pub fn image_metas(&self, theme: Option<Theme>) -> Vec<ImageMetaRecord> {
        self.state
            .read()
            .metas
            .values()
            .filter(|m| theme.is_none_or(|t| t == m.theme))
            .cloned()
            .collect()
    }

    /// Newest visible image meta of a cell.
    pub fn latest_visible_meta(&self, theme: Theme, grid: GridId) -> Option<ImageMetaRecord> {
        self.state
            .read()
            .metas
            .range(meta_range(theme, grid))
            .rev()
            .map(|e| e.1)
            .find(|m| m.visible)
            .cloned()
    }

    /// Cells with at least one visible acquisition.
    pub fn visible_cells(&self, theme: Theme) -> BTreeSet<GridId> {
        self.state
            .read()
            .metas
            .values()
            .filter(|m| m.theme == theme && m.visible)
            .map(|m| m.grid)
            .collect()
    }

    pub fn original(&self, source_id: &str) -> Option<OriginalMetadataRecord> {
        self.state.read().originals.get(source_id).cloned()
    }

    pub fn stats(&self) -> Result<StoreStats, StoreError> {
        let w = self.writer.lock();
        let state = self.state.read();
        let mut segment_bytes = 0;
        for name in &state.segment_names {
            segment_bytes += fs::metadata(self.root.join(SEGMENTS).join(name))?.len();
        }
        Ok(StoreStats {
            epoch: state.epoch,
            tiles: state.tiles.len(),
            tile_bytes: state.tiles.values().map(|e| e.loc.len).sum(),
            image_metas: state.metas.len(),
            hidden_metas: state.metas.values().filter(|m| !m.visible).count(),
            originals: state.originals.len(),
            picks: state.picks.len(),
            hit_keys: state.hits.len(),
            wal_bytes: w.wal_len,
            segments: state.segment_names.len(),
            segment_bytes,
        })
    }

    /// Writes every record to a snapshot file.
    pub fn snapshot_full(&self, path: impl AsRef<Path>) -> Result<SnapshotSummary, StoreError> {
        self.snapshot(path.as_ref(), SnapshotKind::Full, 0)
    }

    /// Writes the records whose insert epoch is greater than `since`.
    pub fn snapshot_incremental(
        &self,
        path: impl AsRef<Path>,
        since: u64,
    ) -> Result<SnapshotSummary, StoreError> {
        self.snapshot(path.as_ref(), SnapshotKind::Incremental, since)
    }

    fn snapshot(
        &self,
        path: &Path,
        kind: SnapshotKind,
        since: u64,
    ) -> Result<SnapshotSummary, StoreError> {
        // Holding the writer lock keeps the store quiescent; readers proceed.
        let _w = self.writer.lock();
        let state = self.state.read();
        let mut out = snapshot::SnapshotWriter::create(path, kind)?;
        state.for_each_record(|r| {
            if r.insert_epoch() > since {
                out.push(r)?;
            }
            Ok(())
        })?;
        out.finish(path, since, state.epoch.max(since))
    }

    /// Restores snapshot files as one batch, in epoch order. Every file is
    /// verified before anything is written. Returns the number of records.
    pub fn restore<P: AsRef<Path>>(&self, paths: &[P]) -> Result<u64, StoreError> {
        let mut files = Vec::with_capacity(paths.len());
        for p in paths {
            files.push(read_snapshot(p.as_ref())?);
        }
        files.sort_by_key(|(s, _)| (s.since, s.until));
        let until = files.iter().map(|(s, _)| s.until).max().unwrap_or(0);
        let records: Vec<Record> = files.into_iter().flat_map(|(_, r)| r).collect();
        let n = records.len() as u64;

        let mut w = self.writer.lock();
        let current = self.state.read().epoch;
        let epoch = if n == 0 {
            until
        } else {
            until.max(current + 1)
        };
        if epoch > current {
            self.commit(&mut w, epoch, records, true, true)?;
        }
        Ok(n)
    }

    /// Rewrites all live records into fresh key-ordered segments and resets
    /// the log.
    pub fn compact(&self) -> Result<CompactStats, StoreError> {
        let mut w = self.writer.lock();
        let new_dir = self.root.join(SEGMENTS_NEW);
        if new_dir.exists() {
            fs::remove_dir_all(&new_dir)?;
        }
        fs::create_dir_all(&new_dir)?;

        let (through_epoch, names, records, bytes) = {
            let state = self.state.read();
            let mut names: Vec<String> = Vec::new();
            let mut current: Option<(BufWriter<File>, u64)> = None;
            let mut records = 0u64;
            let mut bytes = 0u64;
            state.for_each_record(|r| {
                if current
                    .as_ref()
                    .is_none_or(|c| c.1 >= self.config.segment_bytes)
                {
                    if let Some((mut f, len)) = current.take() {
                        f.flush()?;
                        f.get_ref().sync_all()?;
                        bytes += len;
                    }
                    let name = format!("{:06}.seg", names.len() + 1);
                    let mut f = BufWriter::new(File::create(new_dir.join(&name))?);
                    f.write_all(&log::SEG_MAGIC)?;
                    names.push(name);
                    current = Some((f, log::SEG_MAGIC.len() as u64));
                }
                let (f, len) = current.as_mut().expect("segment open");
                *len += write_frame(f, &encode_entry(&Entry::Record(r.clone()))?)?;
                records += 1;
                Ok(())
            })?;
            if let Some((mut f, len)) = current.take() {
                f.flush()?;
                f.get_ref().sync_all()?;
                bytes += len;
            }
            (state.epoch, names, records, bytes)
        };
        let manifest = Manifest {
            through_epoch,
            files: names.clone(),
        };
        let mut mf = File::create(new_dir.join(MANIFEST))?;
        mf.write_all(&serde_json::to_vec_pretty(&manifest).expect("manifest serialises"))?;
        mf.sync_all()?;
        sync_dir(&new_dir)?;

        let live = self.root.join(SEGMENTS);
        let old = self.root.join(SEGMENTS_OLD);
        if live.exists() {
            fs::rename(&live, &old)?;
        }
        fs::rename(&new_dir, &live)?;
        sync_dir(&self.root)?;

        let wal_path = self.root.join(WAL_FILE);
        let tmp = self.root.join("wal.log.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&log::WAL_MAGIC)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &wal_path)?;
        sync_dir(&self.root)?;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }

        let mut fresh = State::default();
        load_segments(&self.root, &mut fresh)?;
        let (wal, wal_len) = replay_wal(&self.root, &mut fresh)?;
        *w = Writer { wal, wal_len };
        *self.state.write() = fresh;
        Ok(CompactStats {
            records,
            segments: names.len(),
            bytes,
        })
    }

    /// Tile keys in physical file order: segments, then the log.
    pub fn physical_scan(&self) -> Result<Vec<TileKey>, StoreError> {
        let _w = self.writer.lock();
        let state = self.state.read();
        let mut out = Vec::new();
        let mut paths: Vec<PathBuf> = state
            .segment_names
            .iter()
            .map(|n| self.root.join(SEGMENTS).join(n))
            .collect();
        paths.push(self.root.join(WAL_FILE));
        for path in paths {
            let mut r = BufReader::new(File::open(&path)?);
            r.seek(SeekFrom::Start(8))?;
            while let FrameRead::Frame(p) = read_frame(&mut r)? {
                if let Entry::Record(Record::Tile(t)) = decode_entry(&p)? {
                    out.push(t.key());
                }
            }
        }
        Ok(out)
    }
}

fn validate_batch(batch: &TileBatch) -> Result<(), StoreError> {
    let reject = |msg: String| Err(StoreError::Invariant(msg));
    let mut tile_keys = HashSet::new();
    for t in &batch.tiles {
        if t.grid.theme() != t.theme {
            return reject(format!("tile grid {} is not a {} cell", t.grid, t.theme));
        }
        let n = t.theme.tiles_per_side();
        let ok = match t.level {
            Level::Tile => (t.sub_row as u32) < n && (t.sub_col as u32) < n,
            _ => t.sub_row == 0 && t.sub_col == 0,
        };
        if !ok {
            return reject(format!(
                "{} position {}/{} invalid for {}",
                t.level, t.sub_row, t.sub_col, t.theme
            ));
        }
        if t.blob.is_empty() {
            return reject(format!("empty blob for {} {}", t.grid, t.level));
        }
        if t.encrypted != t.key_id.is_some() {
            return reject(format!(
                "tile {} {} has inconsistent key id",
                t.grid, t.level
            ));
        }
        if !tile_keys.insert(t.key()) {
            return reject(format!("duplicate tile {:?}", t.key()));
        }
    }
    let mut meta_keys = HashSet::new();
    for m in &batch.metas {
        if m.grid.theme() != m.theme {
            return reject(format!(
                "image meta grid {} is not a {} cell",
                m.grid, m.theme
            ));
        }
        if !meta_keys.insert(m.key()) {
            return reject(format!("duplicate image meta {:?}", m.key()));
        }
    }
    let mut sources = HashSet::new();
    for o in &batch.originals {
        if o.source_id.is_empty() || !sources.insert(&o.source_id) {
            return reject(format!("duplicate or empty source id {:?}", o.source_id));
        }
    }
    Ok(())
}

/// Finishes or discards an interrupted compaction.
fn recover_compaction(root: &Path) -> Result<(), StoreError> {
    let live = root.join(SEGMENTS);
    let new = root.join(SEGMENTS_NEW);
    let old = root.join(SEGMENTS_OLD);
    if new.exists() {
        if !live.exists() && new.join(MANIFEST).exists() {
            // Crashed between the two renames; the new set is complete.
            fs::rename(&new, &live)?;
        } else {
            fs::remove_dir_all(&new)?;
        }
    }
    if old.exists() {
        if live.exists() {
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&old, &live)?;
        }
    }
    Ok(())
}

fn load_segments(root: &Path, state: &mut State) -> Result<(), StoreError> {
    let dir = root.join(SEGMENTS);
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Ok(());
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)
        .map_err(|e| StoreError::Corrupt(format!("segment manifest: {e}")))?;
    for (i, name) in manifest.files.iter().enumerate() {
        let id = FileId::Seg(i as u32);
        let path = dir.join(name);
        let file = File::open(&path)?;
        let mut r = BufReader::new(file.try_clone()?);
        let mut magic = [0u8; 8];
        std::io::Read::read_exact(&mut r, &mut magic)?;
        if magic != log::SEG_MAGIC {
            return Err(StoreError::Corrupt(format!(
                "{} is not a segment",
                path.display()
            )));
        }
        let mut offset = magic.len() as u64;
        loop {
            match read_frame(&mut r)? {
                FrameRead::Frame(p) => {
                    let len = p.len() as u64 + log::FRAME_HEADER;
                    if let Entry::Record(rec) = decode_entry(&p)? {
                        state.epoch = state.epoch.max(rec.insert_epoch());
                        state.apply(
                            rec,
                            Some(Loc {
                                file: id,
                                offset,
                                len,
                            }),
                        );
                    }
                    offset += len;
                }
                FrameRead::End => break,
                FrameRead::Torn => {
                    return Err(StoreError::Corrupt(format!(
                        "{} is damaged at offset {offset}",
                        path.display()
                    )))
                }
            }
        }
        state.files.insert(id, Arc::new(file));
    }
    state.epoch = state.epoch.max(manifest.through_epoch);
    state.segment_names = manifest.files;
    Ok(())
}

/// Replays committed batches newer than the compacted epoch and truncates any
/// torn tail. Returns the append handle and the log length.
fn replay_wal(root: &Path, state: &mut State) -> Result<(File, u64), StoreError> {
    let path = root.join(WAL_FILE);
    let mut wal = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(&path)?;
    if wal.metadata()?.len() < log::WAL_MAGIC.len() as u64 {
        wal.set_len(0)?;
        wal.write_all(&log::WAL_MAGIC)?;
        wal.sync_all()?;
    }
    let through = state.epoch;
    let mut r = BufReader::new(wal.try_clone()?);
    r.seek(SeekFrom::Start(0))?;
    let mut magic = [0u8; 8];
    std::io::Read::read_exact(&mut r, &mut magic)?;
    if magic != log::WAL_MAGIC {
        return Err(StoreError::Corrupt(format!(
            "{} is not a store log",
            path.display()
        )));
    }
    let mut offset = magic.len() as u64;
    let mut committed = offset;
    let mut pending: Option<(u64, Vec<(Record, Loc)>)> = None;
    loop {
        let payload = match read_frame(&mut r)? {
            FrameRead::Frame(p) => p,
            FrameRead::End | FrameRead::Torn => break,
        };
        let len = payload.len() as u64 + log::FRAME_HEADER;
        let Ok(entry) = decode_entry(&payload) else {
            break;
        };
        match entry {
            Entry::Begin { epoch, .. } => pending = Some((epoch, Vec::new())),
            Entry::Record(rec) => match pending.as_mut() {
                Some((_, recs)) => recs.push((
                    rec,
                    Loc {
                        file: FileId::Wal,
                        offset,
                        len,
                    },
                )),
                None => break,
            },
            Entry::Commit { epoch } => {
                let Some((begin, recs)) = pending.take() else {
                    break;
                };
                if begin != epoch {
                    break;
                }
                if epoch > through {
                    for (rec, loc) in recs {
                        state.apply(rec, Some(loc));
                    }
                    state.epoch = state.epoch.max(epoch);
                }
                committed = offset + len;
            }
        }
        offset += len;
    }
    drop(r);
    if wal.metadata()?.len() != committed {
        tracing::warn!(
            path = %path.display(),
            kept = committed,
            "truncating incomplete log tail"
        );
        wal.set_len(committed)?;
        wal.sync_all()?;
    }
    wal.seek(SeekFrom::Start(committed))?;
    state
        .files
        .insert(FileId::Wal, Arc::new(File::open(&path)?));
    Ok((wal, committed))
}
