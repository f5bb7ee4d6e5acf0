//! Coverage map: an equirectangular graticule with covered cells in green.
//!
//! Three zoom levels of 512 x 256 pixel tiles; `x` counts east from 180 W and
//! `y` counts south from 90 N.
//!
//! | level     | tiles   | degrees per tile |
//! |-----------|---------|------------------|
//! | planet    | 1 x 1   | 360 x 180        |
//! | continent | 8 x 8   | 45 x 22.5        |
//! | region    | 64 x 64 | 5.625 x 2.8125   |

use std::fmt;
use std::str::FromStr;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::spatial_index::{utm_to_geo, CellExtent, GridId, UtmCoord};

pub const TILE_WIDTH: u32 = 512;
pub const TILE_HEIGHT: u32 = 256;

pub const BACKGROUND: [u8; 3] = [214, 226, 238];
pub const GRATICULE: [u8; 3] = [160, 172, 186];
pub const COVERED: [u8; 3] = [34, 160, 60];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageLevel {
    Planet,
    Continent,
    Region,
}

impl CoverageLevel {
    pub const ALL: [CoverageLevel; 3] = [
        CoverageLevel::Planet,
        CoverageLevel::Continent,
        CoverageLevel::Region,
    ];

    pub fn tiles_per_axis(self) -> u32 {
        match self {
            CoverageLevel::Planet => 1,
            CoverageLevel::Continent => 8,
            CoverageLevel::Region => 64,
        }
    }

    fn graticule_deg(self) -> f64 {
        match self {
            CoverageLevel::Planet => 30.0,
            CoverageLevel::Continent => 5.0,
            CoverageLevel::Region => 1.0,
        }
    }

    /// Degrees per pixel along (lon, lat).
    pub fn degrees_per_pixel(self) -> (f64, f64) {
        let n = self.tiles_per_axis() as f64;
        (
            360.0 / n / TILE_WIDTH as f64,
            180.0 / n / TILE_HEIGHT as f64,
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            CoverageLevel::Planet => "planet",
            CoverageLevel::Continent => "continent",
            CoverageLevel::Region => "region",
        }
    }
}

impl fmt::Display for CoverageLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoverageLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planet" => Ok(CoverageLevel::Planet),
            "continent" => Ok(CoverageLevel::Continent),
            "region" => Ok(CoverageLevel::Region),
            _ => Err(format!("unknown coverage level {s:?}")),
        }
    }
}

/// Geographic bounding box `(south, west, north, east)` of a cell. UTM cells
/// are bounded by their projected corners and edge midpoints.
pub fn cell_bounds(grid: GridId) -> Option<(f64, f64, f64, f64)> {
    match grid.extent() {
        CellExtent::Geo {
            west,
            south,
            east,
            north,
        } => Some((south, west, north, east)),
        CellExtent::Utm {
            zone,
            min_e,
            min_n,
            max_e,
            max_n,
        } => {
            let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            let mid_e = (min_e + max_e) / 2.0;
            let mid_n = (min_n + max_n) / 2.0;
            for (e, n) in [
                (min_e, min_n),
                (min_e, max_n),
                (max_e, min_n),
                (max_e, max_n),
                (mid_e, min_n),
                (mid_e, max_n),
                (min_e, mid_n),
                (max_e, mid_n),
            ] {
                let g = utm_to_geo(UtmCoord::new(zone, e, n).ok()?).ok()?;
                b = (
                    b.0.min(g.lat()),
                    b.1.min(g.lon()),
                    b.2.max(g.lat()),
                    b.3.max(g.lon()),
                );
            }
            Some(b)
        }
    }
}

/// Centre of pixel `(px, py)` of tile `(x, y)`, or `None` off the map.
pub fn pixel_to_geo(level: CoverageLevel, x: u32, y: u32, px: u32, py: u32) -> Option<(f64, f64)> {
    let n = level.tiles_per_axis();
    if x >= n || y >= n || px >= TILE_WIDTH || py >= TILE_HEIGHT {
        return None;
    }
    let (dx, dy) = level.degrees_per_pixel();
    let lon = -180.0 + ((x * TILE_WIDTH + px) as f64 + 0.5) * dx;
    let lat = 90.0 - ((y * TILE_HEIGHT + py) as f64 + 0.5) * dy;
    Some((lat, lon))
}

/// Renders tile `(x, y)`; `None` if the tile does not exist.
pub fn render(level: CoverageLevel, x: u32, y: u32, cells: &[GridId]) -> Option<Vec<u8>> {
    let n = level.tiles_per_axis();
    if x >= n || y >= n {
        return None;
    }
    let (dx, dy) = level.degrees_per_pixel();
    let west = -180.0 + (x * TILE_WIDTH) as f64 * dx;
    let north = 90.0 - (y * TILE_HEIGHT) as f64 * dy;
    let mut img = ImageBuffer::from_pixel(TILE_WIDTH, TILE_HEIGHT, Rgb(BACKGROUND));

    // A graticule line is drawn in the pixel column/row containing it.
    let step = level.graticule_deg();
    let mut lon = (west / step).ceil() * step;
    while lon < west + TILE_WIDTH as f64 * dx {
        let px = ((lon - west) / dx).floor() as u32;
        for py in 0..TILE_HEIGHT {
            img.put_pixel(px.min(TILE_WIDTH - 1), py, Rgb(GRATICULE));
        }
        lon += step;
    }
    let mut lat = (north / step).floor() * step;
    while lat > north - TILE_HEIGHT as f64 * dy {
        let py = ((north - lat) / dy).floor() as u32;
        for px in 0..TILE_WIDTH {
            img.put_pixel(px, py.min(TILE_HEIGHT - 1), Rgb(GRATICULE));
        }
        lat -= step;
    }

    for &g in cells {
        let Some((s, w, nn, e)) = cell_bounds(g) else {
            continue;
        };
        // Pixel span touched by the box, at least one pixel.
        let x0 = ((w - west) / dx).floor();
        let x1 = ((e - west) / dx).ceil().max(x0 + 1.0);
        let y0 = ((north - nn) / dy).floor();
        let y1 = ((north - s) / dy).ceil().max(y0 + 1.0);
        if x1 <= 0.0 || y1 <= 0.0 || x0 >= TILE_WIDTH as f64 || y0 >= TILE_HEIGHT as f64 {
            continue;
        }
        let clamp_x = |v: f64| v.clamp(0.0, TILE_WIDTH as f64) as u32;
        let clamp_y = |v: f64| v.clamp(0.0, TILE_HEIGHT as f64) as u32;
        for py in clamp_y(y0)..clamp_y(y1) {
            for px in clamp_x(x0)..clamp_x(x1) {
                img.put_pixel(px, py, Rgb(COVERED));
            }
        }
    }

    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("PNG encoding to memory");
    Some(out.into_inner())
}
