use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::LoadError;
use crate::pyramid::{footprint_box, GeoRaster, Raster, RasterAnchor};
use crate::spatial_index::{GeoPoint, GridBox, UtmCoord};
use crate::store::ImageType;
use crate::Theme;

/// One manifest line: a raster and its JSON sidecar. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub sidecar_path: PathBuf,
}

/// Georeferencing and provenance of a source raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub theme: Theme,
    pub pixel_scale_m: f64,
    /// Top-left pixel corner.
    pub anchor: RasterAnchor,
    pub acquired_date: NaiveDate,
    pub source_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrument: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_type: Option<ImageType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processed_date: Option<NaiveDate>,
}

impl Sidecar {
    /// Checks the anchor against its theme's coordinate system and returns
    /// the ground footprint.
    pub fn footprint(&self) -> Result<GridBox, String> {
        if self.width == 0 || self.height == 0 {
            return Err("empty raster".into());
        }
        if !(self.pixel_scale_m > 0.0) {
            return Err(format!("pixel scale {} m is not positive", self.pixel_scale_m));
        }
        match self.anchor {
            RasterAnchor::Utm {
                zone,
                easting,
                northing,
            } => {
                UtmCoord::new(zone, easting, northing).map_err(|e| e.to_string())?;
            }
            RasterAnchor::Geo { lat, lon } => {
                GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
            }
        }
        footprint_box(
            self.theme,
            self.anchor,
            self.pixel_scale_m,
            self.width,
            self.height,
        )
        .map_err(|e| e.to_string())
    }
}

/// A manifest entry with its sidecar read and paths made absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRef {
    pub path: PathBuf,
    pub sidecar: Sidecar,
}

impl SourceRef {
    /// Reads the raster: PNG by extension, raw 8-bit row-major otherwise.
    pub fn read(&self) -> Result<GeoRaster, LoadError> {
        let raster = read_raster(&self.path, self.sidecar.width, self.sidecar.height)?;
        Ok(GeoRaster {
            source_id: self.sidecar.source_id.clone(),
            theme: self.sidecar.theme,
            raster,
            anchor: self.sidecar.anchor,
            pixel_scale_m: self.sidecar.pixel_scale_m,
            acquired: self.sidecar.acquired_date,
        })
    }
}

pub fn read_raster(path: &Path, width: u32, height: u32) -> Result<Raster, LoadError> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let raster = if is_png {
        let img = image::open(path)
            .map_err(|e| LoadError::Source(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = img.dimensions();
        Raster::new(w, h, img.into_raw())
    } else {
        Raster::new(width, height, std::fs::read(path)?)
    }
    .map_err(|e| LoadError::Source(format!("{}: {e}", path.display())))?;
    if (raster.width(), raster.height()) != (width, height) {
        return Err(LoadError::Source(format!(
            "{}: raster is {}x{}, sidecar says {width}x{height}",
            path.display(),
            raster.width(),
            raster.height()
        )));
    }
    Ok(raster)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, LoadError> {
    let text = std::fs::read(path)?;
    let entries: Vec<ManifestEntry> = serde_json::from_slice(&text)
        .map_err(|e| LoadError::Source(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(entries
        .into_iter()
        .map(|e| ManifestEntry {
            path: base.join(e.path),
            sidecar_path: base.join(e.sidecar_path),
        })
        .collect())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}
