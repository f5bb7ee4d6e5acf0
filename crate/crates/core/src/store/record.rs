use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::spatial_index::GridId;
use crate::{Level, Theme};

/// One encoded tile image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRecord {
    pub theme: Theme,
    pub grid: GridId,
    pub level: Level,
    pub sub_row: u8,
    pub sub_col: u8,
    pub acquired: NaiveDate,
    pub blob: Vec<u8>,
    pub encrypted: bool,
    pub key_id: Option<String>,
    /// Assigned by the store; ignored on input.
    pub insert_epoch: u64,
}

impl TileRecord {
    pub fn key(&self) -> TileKey {
        TileKey {
            theme: self.theme,
            level: self.level,
            grid: self.grid,
            sub_row: self.sub_row,
            sub_col: self.sub_col,
            acquired: self.acquired,
        }
    }
}

/// Clustered tile key; the derived order is the on-disk order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileKey {
    pub theme: Theme,
    pub level: Level,
    pub grid: GridId,
    pub sub_row: u8,
    pub sub_col: u8,
    pub acquired: NaiveDate,
}

/// Per-cut image metadata. `visible = false` hides every tile of the cut.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMetaRecord {
    pub theme: Theme,
    pub grid: GridId,
    pub acquired: NaiveDate,
    pub source: String,
    pub visible: bool,
    pub key_id: Option<String>,
    pub center_place_name: Option<String>,
    pub insert_epoch: u64,
}

impl ImageMetaRecord {
    pub fn key(&self) -> MetaKey {
        (self.theme, self.grid, self.acquired)
    }

    pub(crate) fn same_content(&self, other: &ImageMetaRecord) -> bool {
        ImageMetaRecord {
            insert_epoch: 0,
            ..self.clone()
        } == ImageMetaRecord {
            insert_epoch: 0,
            ..other.clone()
        }
    }
}

pub type MetaKey = (Theme, GridId, NaiveDate);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ImageType {
    Jpeg,
    Tiff,
}

/// Descriptive metadata of an ingested source image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginalMetadataRecord {
    pub source_id: String,
    pub img_source: Theme,
    pub image_type: ImageType,
    pub instrument: Option<String>,
    pub acquired: NaiveDate,
    pub processed: Option<NaiveDate>,
    /// Ground metres per source pixel, in millimetres to keep the record `Eq`.
    pub resolution_mm: u32,
    pub width: u32,
    pub height: u32,
    pub attributes: BTreeMap<String, String>,
    pub insert_epoch: u64,
}

impl OriginalMetadataRecord {
    pub(crate) fn same_content(&self, other: &OriginalMetadataRecord) -> bool {
        OriginalMetadataRecord {
            insert_epoch: 0,
            ..self.clone()
        } == OriginalMetadataRecord {
            insert_epoch: 0,
            ..other.clone()
        }
    }
}

/// A recommended image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickRecord {
    pub title: String,
    pub theme: Theme,
    pub grid: GridId,
    pub caption: String,
    #[serde(default)]
    pub insert_epoch: u64,
}

pub type PickKey = (Theme, GridId, String);

impl PickRecord {
    pub fn key(&self) -> PickKey {
        (self.theme, self.grid, self.title.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    GridRequest,
    GazetteerRequest,
}

/// Aggregated request counter for one key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitRecord {
    pub kind: HitKind,
    pub key: String,
    pub count: u64,
    pub last_seen: DateTime<Utc>,
    pub insert_epoch: u64,
}

/// Anything the store persists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Record {
    Tile(TileRecord),
    Meta(ImageMetaRecord),
    Original(OriginalMetadataRecord),
    Pick(PickRecord),
    Hit(HitRecord),
}

impl Record {
    pub fn insert_epoch(&self) -> u64 {
        match self {
            Record::Tile(r) => r.insert_epoch,
            Record::Meta(r) => r.insert_epoch,
            Record::Original(r) => r.insert_epoch,
            Record::Pick(r) => r.insert_epoch,
            Record::Hit(r) => r.insert_epoch,
        }
    }

    pub(crate) fn set_epoch(&mut self, epoch: u64) {
        match self {
            Record::Tile(r) => r.insert_epoch = epoch,
            Record::Meta(r) => r.insert_epoch = epoch,
            Record::Original(r) => r.insert_epoch = epoch,
            Record::Pick(r) => r.insert_epoch = epoch,
            Record::Hit(r) => r.insert_epoch = epoch,
        }
    }
}

/// One load unit: the tiles of one or more cuts with their metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileBatch {
    pub tiles: Vec<TileRecord>,
    pub metas: Vec<ImageMetaRecord>,
    pub originals: Vec<OriginalMetadataRecord>,
}

impl TileBatch {
    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty() && self.metas.is_empty() && self.originals.is_empty()
    }
}
