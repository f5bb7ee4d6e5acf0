//! Cutting source imagery into grid cells and producing the tile pyramid.
//!
//! A cut is the full-resolution raster of one grid cell. It is split into an
//! `N x N` grid of tiles (8 x 8 for USGS, 5 x 5 for SPIN-2) and reduced with an
//! area-weighted filter into three lower-resolution images: browse (8x the
//! tile's ground pixel size), thumb (16x) and jump (32x). Every product is a
//! baseline grayscale JPEG. Full-resolution SPIN-2 tiles are additionally
//! obfuscated with [`crypt::light_encrypt`].

pub mod codec;
pub mod crypt;
mod cut;
mod raster;
mod resample;

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use cut::{
    cut_spin2, cut_usgs, cut_usgs_rows, footprint_box, source_box, spin2_cut_dims, Cut,
    METERS_PER_DEGREE_LAT, NO_DATA, USGS_CUT_HEIGHT, USGS_CUT_WIDTH,
};
pub use raster::{mosaic, split_grid, GeoRaster, Raster, RasterAnchor};
pub use resample::{downsample_area, halve};

use crate::spatial_index::{GridError, GridId};
use crate::{Level, Theme};
use crypt::TileKey;

#[derive(Debug, thiserror::Error)]
pub enum PyramidError {
    #[error("raster shape: {0}")]
    Shape(String),
    #[error("image format: {0}")]
    Format(String),
    #[error("tile key: {0}")]
    Key(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One encoded product of a cut.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedTile {
    pub level: Level,
    /// Row within the cut, counted from the top; 0 for pyramid levels.
    pub sub_row: u8,
    pub sub_col: u8,
    pub blob: Vec<u8>,
    pub encrypted: bool,
    pub key_id: Option<String>,
}

impl EncodedTile {
    /// Debug/staging file name: `{gridid}_{level}_{row}_{col}.jpg`.
    pub fn file_name(&self, grid: GridId) -> String {
        format!(
            "{grid}_{}_{}_{}.jpg",
            self.level, self.sub_row, self.sub_col
        )
    }
}

/// The three reduced images of a cut.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidImages {
    pub browse: Raster,
    pub thumb: Raster,
    pub jump: Raster,
}

/// Splits a cut into its full-resolution tiles, row-major from the top-left.
pub fn slice(cut: &Cut) -> Result<Vec<Raster>, PyramidError> {
    let n = cut.theme.tiles_per_side();
    split_grid(&cut.raster, n, n)
}

/// Browse is the whole cell at 8x the tile pixel size; thumb and jump halve it.
pub fn build_pyramid(cut: &Cut) -> PyramidImages {
    let factor = cut.theme.pixel_scale_m() / Level::Browse.meters_per_pixel(cut.theme);
    let w = (cut.raster.width() as f64 * factor).round() as u32;
    let h = (cut.raster.height() as f64 * factor).round() as u32;
    let browse = downsample_area(&cut.raster, w, h);
    let thumb = halve(&browse);
    let jump = halve(&thumb);
    PyramidImages {
        browse,
        thumb,
        jump,
    }
}

/// Nonce binding an obfuscated tile to its position.
pub fn tile_nonce(grid: GridId, level: Level, sub_row: u8, sub_col: u8) -> Vec<u8> {
    let mut n = Vec::with_capacity(12);
    n.extend_from_slice(&grid.sort_key().to_le_bytes());
    n.push(grid.theme() as u8);
    n.push(level.rank() as u8);
    n.push(sub_row);
    n.push(sub_col);
    n
}

/// Per-cut key label; stable across reruns of the same acquisition.
pub fn cut_key(secret: &[u8], cut: &Cut) -> TileKey {
    tile_key(secret, cut.theme, cut.grid, cut.acquired)
}

/// Same key as [`cut_key`], from the stored identity of a cut.
pub fn tile_key(secret: &[u8], theme: Theme, grid: GridId, acquired: NaiveDate) -> TileKey {
    let label = format!("{theme}/{grid}/{acquired}");
    crypt::derive_key(secret, label.as_bytes())
}

/// Encodes every product of a cut: `N x N` tiles then browse, thumb and jump.
///
/// SPIN-2 full-resolution tiles need `key`; they are obfuscated and carry its
/// id. All other products are plain JPEG.
pub fn process_cut(cut: &Cut, key: Option<&TileKey>) -> Result<Vec<EncodedTile>, PyramidError> {
    let n = cut.theme.tiles_per_side();
    let encrypt = cut.theme == Theme::Spin2;
    let key = match (encrypt, key) {
        (true, None) => {
            return Err(PyramidError::Key(format!(
                "SPIN-2 cut {} needs a tile key",
                cut.grid
            )))
        }
        (true, Some(k)) => Some(k),
        (false, _) => None,
    };
    let mut out = Vec::with_capacity((n * n + 3) as usize);
    for (i, tile) in slice(cut)?.iter().enumerate() {
        let (row, col) = ((i as u32 / n) as u8, (i as u32 % n) as u8);
        let mut blob = codec::encode_tile(tile)?;
        let mut key_id = None;
        if let Some(k) = key {
            blob = crypt::light_encrypt(&blob, k, &tile_nonce(cut.grid, Level::Tile, row, col))?;
            key_id = Some(crypt::key_id(k));
        }
        out.push(EncodedTile {
            level: Level::Tile,
            sub_row: row,
            sub_col: col,
            blob,
            encrypted: key.is_some(),
            key_id,
        });
    }
    let p = build_pyramid(cut);
    for (level, r) in [
        (Level::Browse, &p.browse),
        (Level::Thumb, &p.thumb),
        (Level::Jump, &p.jump),
    ] {
        out.push(EncodedTile {
            level,
            sub_row: 0,
            sub_col: 0,
            blob: codec::encode_tile(r)?,
            encrypted: false,
            key_id: None,
        });
    }
    Ok(out)
}

/// Writes products as individual files for inspection; returns the paths.
pub fn dump_products(
    dir: &Path,
    grid: GridId,
    tiles: &[EncodedTile],
) -> Result<Vec<PathBuf>, PyramidError> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(tiles.len());
    for t in tiles {
        let path = dir.join(t.file_name(grid));
        std::fs::write(&path, &t.blob)?;
        paths.push(path);
    }
    Ok(paths)
}
