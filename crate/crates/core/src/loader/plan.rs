use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::source::{read_manifest, read_sidecar, ManifestEntry, SourceRef};
use super::LoadError;
use crate::spatial_index::{GridBox, CELLS_PER_DEGREE_LAT, UGRID_CELL_HEIGHT_M};
use crate::Theme;

/// Cut rows per band when the plan does not say otherwise (12 km of northing).
pub const DEFAULT_ROWS_PER_BAND: u32 = 10;

/// A contiguous south-north strip of cut rows in one zone (or the geographic
/// grid for SPIN-2); the unit of batch loading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub id: String,
    pub theme: Theme,
    /// `None` for SPIN-2.
    pub zone: Option<u8>,
    /// Inclusive range of cut rows (northing or latitude index).
    pub first_row: u32,
    pub last_row: u32,
    /// Sources whose top-left pixel lies in this band.
    pub members: Vec<String>,
    /// Jobs in ascending row order.
    pub jobs: Vec<String>,
}

impl Band {
    /// Southern and northern edge: metres of northing for USGS, degrees of
    /// latitude for SPIN-2.
    pub fn interval(&self) -> (f64, f64) {
        let (lo, hi) = (self.first_row as f64, self.last_row as f64 + 1.0);
        match self.theme {
            Theme::Usgs => (lo * UGRID_CELL_HEIGHT_M, hi * UGRID_CELL_HEIGHT_M),
            Theme::Spin2 => (lo / CELLS_PER_DEGREE_LAT - 90.0, hi / CELLS_PER_DEGREE_LAT - 90.0),
        }
    }
}

/// One cut row: every cell of `row` touched by `sources`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub band: String,
    pub theme: Theme,
    pub zone: Option<u8>,
    pub row: u32,
    /// Source ids, sorted.
    pub sources: Vec<String>,
}

/// A manifest entry left out of the plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub path: String,
    pub reason: String,
}

/// Ordered bands and jobs for one manifest.
///
/// Bands are grouped by theme (USGS first) and zone, and run south to north
/// within a group. Within a group they are contiguous from the southernmost
/// to the northernmost touched band, so some may have no jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub rows_per_band: u32,
    pub bands: Vec<Band>,
    pub jobs: Vec<Job>,
    pub sources: Vec<SourceRef>,
    pub excluded: Vec<Excluded>,
}

type Group = (Theme, Option<u8>);

fn band_id((theme, zone): Group, index: u32) -> String {
    match zone {
        Some(z) => format!("{theme}-{z:02}-{index:03}"),
        None => format!("{theme}-{index:03}"),
    }
}

impl Plan {
    pub fn from_manifest(path: &Path, rows_per_band: u32) -> Result<Plan, LoadError> {
        let entries = read_manifest(path)?;
        Plan::from_entries(&entries, rows_per_band)
    }

    pub fn from_entries(entries: &[ManifestEntry], rows_per_band: u32) -> Result<Plan, LoadError> {
        if rows_per_band == 0 {
            return Err(LoadError::Plan("rows per band must be positive".into()));
        }
        let mut sources = Vec::new();
        let mut excluded = Vec::new();
        let mut seen = BTreeSet::new();
        // (group, top row, row span) per accepted source.
        let mut spans: Vec<(Group, u32, (u32, u32))> = Vec::new();
        for e in entries {
            let exclude = |reason: String| Excluded {
                path: e.path.display().to_string(),
                reason,
            };
            let sidecar = match read_sidecar(&e.sidecar_path) {
                Ok(s) => s,
                Err(reason) => {
                    excluded.push(exclude(reason));
                    continue;
                }
            };
            if !e.path.is_file() {
                excluded.push(exclude("raster file not found".into()));
                continue;
            }
            if !seen.insert(sidecar.source_id.clone()) {
                excluded.push(exclude(format!("duplicate source id {}", sidecar.source_id)));
                continue;
            }
            let bbox = match sidecar.footprint() {
                Ok(b) => b,
                Err(reason) => {
                    excluded.push(exclude(reason));
                    continue;
                }
            };
            let Some((_, rows)) = bbox.index_rect() else {
                excluded.push(exclude("footprint lies outside the grid".into()));
                continue;
            };
            let group = match bbox {
                GridBox::Utm { zone, .. } => (Theme::Usgs, Some(zone)),
                GridBox::Geo { .. } => (Theme::Spin2, None),
            };
            spans.push((group, rows.1, rows));
            sources.push(SourceRef {
                path: e.path.clone(),
                sidecar,
            });
        }

        // Rows touched per group, with their sources.
        let mut rows: BTreeMap<Group, BTreeMap<u32, Vec<String>>> = BTreeMap::new();
        let mut members: BTreeMap<(Group, u32), Vec<String>> = BTreeMap::new();
        for (src, (group, top, (lo, hi))) in sources.iter().zip(&spans) {
            let id = &src.sidecar.source_id;
            let g = rows.entry(*group).or_default();
            for r in *lo..=*hi {
                g.entry(r).or_default().push(id.clone());
            }
            members
                .entry((*group, top / rows_per_band))
                .or_default()
                .push(id.clone());
        }

        let mut bands = Vec::new();
        let mut jobs = Vec::new();
        for (group, by_row) in rows {
            let first = by_row.keys().next().expect("non-empty") / rows_per_band;
            let last = by_row.keys().next_back().expect("non-empty") / rows_per_band;
            for index in first..=last {
                let id = band_id(group, index);
                let first_row = index * rows_per_band;
                let last_row = first_row + rows_per_band - 1;
                let mut band_jobs = Vec::new();
                for (&row, ids) in by_row.range(first_row..=last_row) {
                    let mut ids = ids.clone();
                    ids.sort();
                    let job = Job {
                        id: format!("{id}-r{row}"),
                        band: id.clone(),
                        theme: group.0,
                        zone: group.1,
                        row,
                        sources: ids,
                    };
                    band_jobs.push(job.id.clone());
                    jobs.push(job);
                }
                let mut m = members.remove(&(group, index)).unwrap_or_default();
                m.sort();
                bands.push(Band {
                    id,
                    theme: group.0,
                    zone: group.1,
                    first_row,
                    last_row,
                    members: m,
                    jobs: band_jobs,
                });
            }
        }
        Ok(Plan {
            rows_per_band,
            bands,
            jobs,
            sources,
            excluded,
        })
    }

    pub fn job(&self, id: &str) -> Option<&Job> {
        self.jobs.iter().find(|j| j.id == id)
    }

    pub fn band(&self, id: &str) -> Option<&Band> {
        self.bands.iter().find(|b| b.id == id)
    }

    pub fn source(&self, id: &str) -> Option<&SourceRef> {
        self.sources.iter().find(|s| s.sidecar.source_id == id)
    }

    /// Writes `plan.json` into `workdir`. An existing different plan is an
    /// error: the journal refers to its job ids.
    pub fn save(&self, workdir: &Path) -> Result<(), LoadError> {
        std::fs::create_dir_all(workdir)?;
        let path = workdir.join(super::PLAN_FILE);
        if path.exists() {
            let existing = Plan::load(workdir)?;
            if existing != *self {
                return Err(LoadError::Plan(format!(
                    "{} already holds a different plan",
                    workdir.display()
                )));
            }
            return Ok(());
        }
        let tmp = workdir.join(format!("{}.tmp", super::PLAN_FILE));
        std::fs::write(&tmp, serde_json::to_vec_pretty(self).expect("plan serialises"))?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn load(workdir: &Path) -> Result<Plan, LoadError> {
        let path = workdir.join(super::PLAN_FILE);
        let bytes = std::fs::read(&path)
            .map_err(|e| LoadError::Plan(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| LoadError::Plan(format!("{}: {e}", path.display())))
    }
}
