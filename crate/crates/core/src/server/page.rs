//! Mosaic page descriptors.
//!
//! Each (theme, level) has a global tile index space, columns increasing east
//! and rows increasing north. At full resolution a cell spans `N x N` tiles:
//!
//! ```text
//! col = cell_col * N + sub_col
//! row = cell_row * N + (N - 1 - sub_row)      sub_row counts from the top
//! ```
//!
//! The reduced levels have one image per cell, so there `col, row` are the
//! cell indices. A page is a `cols x rows` window of that space; panning moves
//! the window by half its width or height, so a pan reuses exactly half the
//! tiles. View sizes (cols x rows):
//!
//! | level  | small  | medium | large   |
//! |--------|--------|--------|---------|
//! | tile   | 2 x 2  | 4 x 2  | 4 x 4   |
//! | browse | 4 x 4  | 8 x 4  | 8 x 8   |
//! | thumb  | 6 x 6  | 12 x 6 | 12 x 12 |
//! | jump   | 8 x 8  | 16 x 8 | 16 x 16 |

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::gazetteer::Gazetteer;
use crate::spatial_index::utm::{geo_to_utm_in_zone, zone_for_lon};
use crate::spatial_index::{
    utm_to_geo, GeoPoint, GridError, GridId, UGridId, UtmCoord, ZGridId, CELLS_PER_DEGREE_LAT,
    CELLS_PER_DEGREE_LON, UGRID_CELL_HEIGHT_M, UGRID_CELL_WIDTH_M, UGRID_EASTING_OFFSET_M,
};
use crate::store::Store;
use crate::{Level, Theme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSize {
    Small,
    Medium,
    Large,
}

impl ViewSize {
    pub const ALL: [ViewSize; 3] = [ViewSize::Small, ViewSize::Medium, ViewSize::Large];

    pub fn name(self) -> &'static str {
        match self {
            ViewSize::Small => "small",
            ViewSize::Medium => "medium",
            ViewSize::Large => "large",
        }
    }
}

impl fmt::Display for ViewSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ViewSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(ViewSize::Small),
            "medium" => Ok(ViewSize::Medium),
            "large" => Ok(ViewSize::Large),
            _ => Err(format!("unknown view size {s:?}")),
        }
    }
}

/// `(cols, rows)` of a page; both always even.
pub fn view_dims(level: Level, size: ViewSize) -> (u32, u32) {
    let side = 2 * (level.rank() as u32 + 1);
    match size {
        ViewSize::Small => (side, side),
        ViewSize::Medium => (2 * side, side),
        ViewSize::Large => (2 * side, 2 * side),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PageError {
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// What to show: the page containing `(lat, lon)`. USGS pages stay in `zone`
/// when given, otherwise the point's own zone.
#[derive(Debug, Clone, PartialEq)]
pub struct PageRequest {
    pub theme: Theme,
    pub lat: f64,
    pub lon: f64,
    pub level: Level,
    pub size: ViewSize,
    pub zone: Option<u8>,
}

impl PageRequest {
    pub fn url(&self) -> String {
        let mut u = format!(
            "/page?theme={}&lat={:.7}&lon={:.7}&level={}&size={}",
            self.theme, self.lat, self.lon, self.level, self.size
        );
        if let (Theme::Usgs, Some(z)) = (self.theme, self.zone) {
            u.push_str(&format!("&zone={z}"));
        }
        u
    }
}

/// One slot of the mosaic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSlot {
    /// `None` when the slot falls outside the grid.
    pub grid: Option<GridId>,
    pub sub_row: u8,
    pub sub_col: u8,
    /// Always set for slots on the grid; carries `date` when present.
    pub url: Option<String>,
    pub date: Option<NaiveDate>,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageCenter {
    /// Centre of the centre tile.
    pub lat: f64,
    pub lon: f64,
    pub grid: GridId,
    pub zone: Option<u8>,
    pub col: i64,
    pub row: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Navigation {
    pub north: Option<String>,
    pub south: Option<String>,
    pub east: Option<String>,
    pub west: Option<String>,
    pub zoom_in: Option<String>,
    pub zoom_out: Option<String>,
    pub theme_switch: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageDescriptor {
    pub theme: Theme,
    pub level: Level,
    pub size: ViewSize,
    pub cols: u32,
    pub rows: u32,
    pub center: PageCenter,
    pub place_name: Option<String>,
    /// Rows from north to south, each from west to east.
    pub tiles: Vec<Vec<TileSlot>>,
    pub nav: Navigation,
    /// Placeholder for a purchase flow; always null.
    pub download_url: Option<String>,
}

impl PageDescriptor {
    pub fn tile_count(&self) -> usize {
        self.tiles.iter().map(Vec::len).sum()
    }

    pub fn urls(&self) -> impl Iterator<Item = &str> {
        self.tiles
            .iter()
            .flatten()
            .filter_map(|s| s.url.as_deref())
    }
}

/// The tile index space of one (theme, zone, level).
#[derive(Debug, Clone, Copy)]
struct Space {
    theme: Theme,
    zone: Option<u8>,
    level: Level,
}

impl Space {
    fn per_cell(self) -> i64 {
        if self.level == Level::Tile {
            self.theme.tiles_per_side() as i64
        } else {
            1
        }
    }

    /// Ground size of one index step: metres for USGS, degrees for SPIN-2.
    fn step(self) -> (f64, f64) {
        let n = self.per_cell() as f64;
        match self.theme {
            Theme::Usgs => (UGRID_CELL_WIDTH_M / n, UGRID_CELL_HEIGHT_M / n),
            Theme::Spin2 => (1.0 / CELLS_PER_DEGREE_LON / n, 1.0 / CELLS_PER_DEGREE_LAT / n),
        }
    }

    fn locate(self, p: GeoPoint) -> Result<(i64, i64), PageError> {
        let (sx, sy) = self.step();
        Ok(match self.theme {
            Theme::Usgs => {
                let c = geo_to_utm_in_zone(p, self.zone.expect("USGS space has a zone"))?;
                (
                    ((c.easting() + UGRID_EASTING_OFFSET_M) / sx).floor() as i64,
                    (c.northing() / sy).floor() as i64,
                )
            }
            Theme::Spin2 => (
                ((p.lon() + 180.0) / sx).floor() as i64,
                ((p.lat() + 90.0) / sy).floor() as i64,
            ),
        })
    }

    fn center_of(self, col: i64, row: i64) -> Option<GeoPoint> {
        let (sx, sy) = self.step();
        let (x, y) = ((col as f64 + 0.5) * sx, (row as f64 + 0.5) * sy);
        match self.theme {
            Theme::Usgs => {
                let c = UtmCoord::new(self.zone?, x - UGRID_EASTING_OFFSET_M, y).ok()?;
                utm_to_geo(c).ok()
            }
            Theme::Spin2 => GeoPoint::new(y - 90.0, x - 180.0).ok(),
        }
    }

    fn slot(self, col: i64, row: i64) -> Option<(GridId, u8, u8)> {
        let n = self.per_cell();
        if col < 0 || row < 0 {
            return None;
        }
        let (u, v) = (col / n, row / n);
        let (sub_col, sub_row) = ((col % n) as u8, (n - 1 - row % n) as u8);
        let (u, v) = (u32::try_from(u).ok()?, u32::try_from(v).ok()?);
        let grid = match self.theme {
            Theme::Usgs => GridId::U(UGridId::from_indices(self.zone?, u, v).ok()?),
            Theme::Spin2 => GridId::Z(ZGridId::from_indices(u, v).ok()?),
        };
        Some((grid, sub_row, sub_col))
    }
}

fn tile_url(theme: Theme, level: Level, grid: GridId, r: u8, c: u8, date: Option<NaiveDate>) -> String {
    let mut u = format!("/tile/{theme}/{level}/{grid}/{r}/{c}");
    if let Some(d) = date {
        u.push_str(&format!("?date={d}"));
    }
    u
}

/// Builds the descriptor for `req`. Points outside the imagery still get a
/// page, with every slot absent.
pub fn build_page(
    store: &Store,
    gazetteer: Option<&Gazetteer>,
    req: &PageRequest,
) -> Result<PageDescriptor, PageError> {
    let p = GeoPoint::new(req.lat, req.lon)?;
    let zone = match req.theme {
        Theme::Usgs => Some(req.zone.unwrap_or_else(|| zone_for_lon(req.lon))),
        Theme::Spin2 => None,
    };
    let space = Space {
        theme: req.theme,
        zone,
        level: req.level,
    };
    let (col, row) = space.locate(p)?;
    let (center_grid, _, _) = space
        .slot(col, row)
        .ok_or_else(|| PageError::BadRequest("point is outside the grid".into()))?;
    let center = space
        .center_of(col, row)
        .ok_or_else(|| PageError::BadRequest("point is outside the grid".into()))?;

    let (cols, rows) = view_dims(req.level, req.size);
    let (half_c, half_r) = (cols as i64 / 2, rows as i64 / 2);
    let mut dates: HashMap<GridId, Option<NaiveDate>> = HashMap::new();
    let mut tiles = Vec::with_capacity(rows as usize);
    for i in 0..rows as i64 {
        let global_row = row + half_r - i;
        let mut line = Vec::with_capacity(cols as usize);
        for j in 0..cols as i64 {
            let global_col = col - half_c + j;
            let slot = match space.slot(global_col, global_row) {
                None => TileSlot {
                    grid: None,
                    sub_row: 0,
                    sub_col: 0,
                    url: None,
                    date: None,
                    present: false,
                },
                Some((grid, sub_row, sub_col)) => {
                    let date = *dates.entry(grid).or_insert_with(|| {
                        store
                            .latest_visible_meta(req.theme, grid)
                            .map(|m| m.acquired)
                    });
                    TileSlot {
                        grid: Some(grid),
                        sub_row,
                        sub_col,
                        url: Some(tile_url(req.theme, req.level, grid, sub_row, sub_col, date)),
                        date,
                        present: date.is_some(),
                    }
                }
            };
            line.push(slot);
        }
        tiles.push(line);
    }

    let at = |c: i64, r: i64| {
        space.center_of(c, r).map(|g| {
            PageRequest {
                lat: g.lat(),
                lon: g.lon(),
                ..req.clone()
            }
            .url()
        })
    };
    let here = |level: Level| {
        PageRequest {
            lat: center.lat(),
            lon: center.lon(),
            level,
            zone,
            ..req.clone()
        }
        .url()
    };
    let theme_switch = match req.theme.other() {
        Theme::Spin2 => Some(PageRequest {
            theme: Theme::Spin2,
            lat: center.lat(),
            lon: center.lon(),
            zone: None,
            ..req.clone()
        }),
        Theme::Usgs => (center.lat() >= 0.0 && center.lat().abs() <= 84.0).then(|| PageRequest {
            theme: Theme::Usgs,
            lat: center.lat(),
            lon: center.lon(),
            zone: Some(zone_for_lon(center.lon())),
            ..req.clone()
        }),
    };
    let nav = Navigation {
        north: at(col, row + half_r),
        south: at(col, row - half_r),
        east: at(col + half_c, row),
        west: at(col - half_c, row),
        zoom_in: req.level.finer().map(here),
        zoom_out: req.level.coarser().map(here),
        theme_switch: theme_switch.map(|r| r.url()),
    };
    let place_name = gazetteer
        .and_then(|g| g.nearest_place(center_grid))
        .map(|p| p.name);

    Ok(PageDescriptor {
        theme: req.theme,
        level: req.level,
        size: req.size,
        cols,
        rows,
        center: PageCenter {
            lat: center.lat(),
            lon: center.lon(),
            grid: center_grid,
            zone,
            col,
            row,
        },
        place_name,
        tiles,
        nav,
        download_url: None,
    })
}
