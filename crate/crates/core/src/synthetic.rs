//! Deterministic synthetic imagery and ingest fixtures.
//!
//! Used by the examples, the test suites and the CLI `demo` data generator.
//! The terrain texture is procedural (value noise over a few octaves plus
//! field edges and roads) so it compresses like aerial imagery rather than
//! like noise or flat colour.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::loader::{ManifestEntry, Sidecar};
use crate::pyramid::{Raster, RasterAnchor};
use crate::spatial_index::{UGRID_CELL_HEIGHT_M, UGRID_CELL_WIDTH_M, UGRID_EASTING_OFFSET_M};
use crate::Theme;

fn hash(x: i64, y: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    h = (h ^ x as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ y as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (xi, yi) = (x0 as i64, y0 as i64);
    let a = hash(xi, yi, seed);
    let b = hash(xi + 1, yi, seed);
    let c = hash(xi, yi + 1, seed);
    let d = hash(xi + 1, yi + 1, seed);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Gray level of the synthetic landscape at ground position `(x, y)` metres.
///
/// Positions are absolute, so adjacent rasters sampled from the same seed
/// agree where they overlap. Never returns 255 (the no-data value).
pub fn terrain_value(x: f64, y: f64, seed: u64) -> u8 {
    let mut v = 0.0;
    let mut amp = 0.5;
    let mut freq = 1.0 / 400.0;
    for octave in 0..5 {
        v += amp * value_noise(x * freq, y * freq, seed.wrapping_add(octave));
        amp *= 0.5;
        freq *= 2.0;
    }
    // Field parcels: flat patches with distinct tones.
    let parcel = hash((x / 220.0).floor() as i64, (y / 160.0).floor() as i64, seed ^ 0xF1E1D);
    let mut g = 60.0 + 110.0 * v + 40.0 * (parcel - 0.5);
    // A sparse road grid.
    let road_x = (x.rem_euclid(900.0) - 450.0).abs() < 4.0;
    let road_y = (y.rem_euclid(700.0) - 350.0).abs() < 4.0;
    if road_x || road_y {
        g = 205.0;
    }
    g.clamp(0.0, 250.0) as u8
}

/// A `width x height` raster whose top-left pixel corner sits at ground
/// position `(x0, y0)` with `scale` metres per pixel, y increasing southward.
pub fn terrain_raster(width: u32, height: u32, x0: f64, y0: f64, scale: f64, seed: u64) -> Raster {
    Raster::from_fn(width, height, |px, py| {
        terrain_value(
            x0 + (px as f64 + 0.5) * scale,
            y0 - (py as f64 + 0.5) * scale,
            seed,
        )
    })
}

/// Top-left corner (easting, northing) of a UTM grid cell.
pub fn ugrid_corner(easting_index: u32, northing_index: u32) -> (f64, f64) {
    (
        easting_index as f64 * UGRID_CELL_WIDTH_M - UGRID_EASTING_OFFSET_M,
        (northing_index + 1) as f64 * UGRID_CELL_HEIGHT_M,
    )
}

/// Writes a raw 8-bit raster and its JSON sidecar; returns the manifest entry.
pub fn write_source(
    dir: &Path,
    sidecar: &Sidecar,
    raster: &Raster,
) -> std::io::Result<ManifestEntry> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.raw", sidecar.source_id));
    let sidecar_path = dir.join(format!("{}.json", sidecar.source_id));
    std::fs::write(&path, raster.pixels())?;
    std::fs::write(
        &sidecar_path,
        serde_json::to_vec_pretty(sidecar).expect("sidecar serialises"),
    )?;
    Ok(ManifestEntry { path, sidecar_path })
}

/// A USGS source covering `cols x rows` cells from `(e, n)` (the south-west
/// cell's indices), optionally shifted by `offset` metres east and south.
pub fn usgs_source(
    dir: &Path,
    source_id: &str,
    zone: u8,
    (e, n): (u32, u32),
    (cols, rows): (u32, u32),
    offset: (f64, f64),
    acquired: NaiveDate,
    seed: u64,
) -> std::io::Result<ManifestEntry> {
    let (x0, _) = ugrid_corner(e, n);
    let (_, y0) = ugrid_corner(e, n + rows - 1);
    let (x0, y0) = (x0 + offset.0, y0 - offset.1);
    let width = cols * UGRID_CELL_WIDTH_M as u32;
    let height = rows * UGRID_CELL_HEIGHT_M as u32;
    let raster = terrain_raster(width, height, x0, y0, 1.0, seed);
    let sidecar = Sidecar {
        theme: Theme::Usgs,
        pixel_scale_m: 1.0,
        anchor: RasterAnchor::Utm {
            zone,
            easting: x0,
            northing: y0,
        },
        acquired_date: acquired,
        source_id: source_id.to_string(),
        width,
        height,
        instrument: Some("synthetic DOQ".into()),
        image_type: None,
        processed_date: None,
    };
    write_source(dir, &sidecar, &raster)
}

/// A SPIN-2 source whose top-left corner is at `(lat, lon)`.
pub fn spin2_source(
    dir: &Path,
    source_id: &str,
    (lat, lon): (f64, f64),
    (width, height): (u32, u32),
    acquired: NaiveDate,
    seed: u64,
) -> std::io::Result<ManifestEntry> {
    let m_per_deg_lon = crate::spatial_index::utm::meters_per_degree_lon(lat);
    let raster = terrain_raster(
        width,
        height,
        lon * m_per_deg_lon,
        lat * crate::pyramid::METERS_PER_DEGREE_LAT,
        1.56,
        seed,
    );
    let sidecar = Sidecar {
        theme: Theme::Spin2,
        pixel_scale_m: 1.56,
        anchor: RasterAnchor::Geo { lat, lon },
        acquired_date: acquired,
        source_id: source_id.to_string(),
        width,
        height,
        instrument: Some("synthetic KVR-1000".into()),
        image_type: None,
        processed_date: None,
    };
    write_source(dir, &sidecar, &raster)
}

/// Writes `entries`, relative to the manifest's directory where possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> std::io::Result<()> {
    let parent = path.parent().unwrap_or(Path::new(""));
    std::fs::create_dir_all(parent)?;
    let rel = |p: &Path| p.strip_prefix(parent).unwrap_or(p).to_path_buf();
    let entries: Vec<ManifestEntry> = entries
        .iter()
        .map(|e| ManifestEntry {
            path: rel(&e.path),
            sidecar_path: rel(&e.sidecar_path),
        })
        .collect();
    std::fs::write(path, serde_json::to_vec_pretty(&entries).expect("manifest serialises"))
}

fn three_band_entries(dir: &Path) -> std::io::Result<Vec<ManifestEntry>> {
    let date = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
    Ok(vec![
        usgs_source(dir, "doq-a", 10, (300, 3501), (1, 1), (0.0, 0.0), date(1994, 5, 1), 1)?,
        usgs_source(dir, "doq-b", 10, (300, 3512), (1, 1), (700.0, 300.0), date(1996, 7, 9), 1)?,
        usgs_source(dir, "doq-c", 10, (301, 3523), (1, 1), (0.0, 0.0), date(1997, 3, 14), 1)?,
    ])
}

/// Three USGS bands in zone 10 (rows-per-band 10), one source per band, the
/// middle one straddling two cell columns with a sub-cell offset.
/// Returns the manifest path.
pub fn three_band_fixture(dir: &Path) -> std::io::Result<PathBuf> {
    let manifest = dir.join("manifest.json");
    write_manifest(&manifest, &three_band_entries(dir)?)?;
    Ok(manifest)
}

/// [`three_band_fixture`] plus one SPIN-2 source two cells wide whose
/// north-west corner is [`SPIN2_CORNER`]. Returns the manifest path.
pub fn atlas_fixture(dir: &Path) -> std::io::Result<PathBuf> {
    let mut entries = three_band_entries(dir)?;
    let (lat, lon) = SPIN2_CORNER;
    let (w, h) = crate::pyramid::spin2_cut_dims(lat - 1.0 / 192.0);
    let date = NaiveDate::from_ymd_opt(1998, 6, 1).expect("valid date");
    // Slightly inside the two cells so the footprint touches no others.
    entries.push(spin2_source(dir, "kvr-marin", (lat, lon), (2 * w - 5, h - 5), date, 7)?);
    let manifest = dir.join("manifest.json");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// North-west corner of the SPIN-2 source in [`atlas_fixture`].
pub const SPIN2_CORNER: (f64, f64) = (12_286.0 / 96.0 - 90.0, 2757.0 / 48.0 - 180.0);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terrain_is_continuous_across_rasters() {
        let a = terrain_raster(20, 10, 1000.0, 5000.0, 1.0, 3);
        let b = terrain_raster(10, 10, 1010.0, 5000.0, 1.0, 3);
        assert_eq!(a.crop(10, 0, 10, 10).unwrap(), b);
        assert!(a.pixels().iter().all(|&p| p != 255));
    }
}
