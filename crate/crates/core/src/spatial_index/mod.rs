//! Coordinate and grid-key math.
//!
//! Two cell grids are used:
//!
//! * The geographic grid divides the globe into 17280 x 17280 cells of
//!   1/48 deg longitude by 1/96 deg latitude. A cell is keyed by a [`ZGridId`],
//!   the Morton interleave of its longitude and latitude indices.
//! * The UTM grid divides each zone plane into 1800 m x 1200 m cells. A cell is
//!   keyed by a [`UGridId`]: the zone plus the Morton interleave of its easting
//!   index `floor((E + 400) / 1800)` and northing index `floor(N / 1200)`.
//!
//! Morton interleaving puts the first index on the even bits, so cells inside
//! an aligned 2^k x 2^k block share the top `30 - 2k` bits of their key.

mod grid;
pub mod morton;
pub mod utm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use grid::{
    geo_to_ugrid, geo_to_zgrid, neighbors, range_cells, ugrid_to_extent, utm_to_ugrid,
    zgrid_to_extent, GridBox, CELLS_PER_DEGREE_LAT, CELLS_PER_DEGREE_LON, UGRID_CELL_HEIGHT_M,
    UGRID_CELL_WIDTH_M, UGRID_EASTING_OFFSET_M, ZGRID_COLUMNS, ZGRID_ROWS,
};
pub use morton::{deinterleave, interleave};
pub use utm::{geo_to_utm, utm_to_geo};

use crate::Theme;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("index {value} outside 0..{limit}")]
    IndexOutOfRange { value: i64, limit: u32 },
    #[error("grid code {0} outside the 30-bit range")]
    CodeOutOfRange(u64),
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("UTM zone {0} outside 1..=60")]
    ZoneOutOfRange(i64),
    #[error("point ({lat}, {lon}) is outside the UTM projection (|lat| > 84)")]
    OutsideProjection { lat: f64, lon: f64 },
    #[error("latitude {0} is in the southern hemisphere, which the UTM grid here does not cover")]
    SouthernHemisphere(f64),
    #[error("UTM coordinate E {easting} N {northing} is outside the valid band of zone {zone}")]
    OutsideZone {
        zone: u8,
        easting: f64,
        northing: f64,
    },
    #[error("malformed grid id {0:?}")]
    Malformed(String),
}

/// A latitude/longitude pair in degrees.
///
/// Longitude lives in the half-open interval [-180, 180); +180 is folded onto
/// -180.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GridError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GridError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GridError::LongitudeOutOfRange(lon));
        }
        let lon = if lon == 180.0 { -180.0 } else { lon };
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// A northern-hemisphere UTM coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtmCoord {
    zone: u8,
    easting: f64,
    northing: f64,
}

impl UtmCoord {
    pub fn new(zone: u8, easting: f64, northing: f64) -> Result<Self, GridError> {
        if !(1..=60).contains(&zone) {
            return Err(GridError::ZoneOutOfRange(zone as i64));
        }
        if !(0.0..=utm::MAX_EASTING).contains(&easting)
            || !(0.0..=utm::MAX_NORTHING).contains(&northing)
        {
            return Err(GridError::OutsideZone {
                zone,
                easting,
                northing,
            });
        }
        Ok(UtmCoord {
            zone,
            easting,
            northing,
        })
    }

    pub fn zone(&self) -> u8 {
        self.zone
    }

    pub fn easting(&self) -> f64 {
        self.easting
    }

    pub fn northing(&self) -> f64 {
        self.northing
    }
}

/// Key of a geographic-grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ZGridId(u32);

impl ZGridId {
    pub fn from_indices(lon_index: u32, lat_index: u32) -> Result<Self, GridError> {
        for (value, limit) in [(lon_index, ZGRID_COLUMNS), (lat_index, ZGRID_ROWS)] {
            if value >= limit {
                return Err(GridError::IndexOutOfRange {
                    value: value as i64,
                    limit,
                });
            }
        }
        Ok(ZGridId(morton::interleave_unchecked(lon_index, lat_index)))
    }

    pub fn from_value(value: u32) -> Result<Self, GridError> {
        let (lon, lat) = morton::deinterleave(value)?;
        ZGridId::from_indices(lon, lat)
    }

    pub fn value(self) -> u32 {
        self.0
    }

    pub fn lon_index(self) -> u32 {
        morton::deinterleave_unchecked(self.0).0
    }

    pub fn lat_index(self) -> u32 {
        morton::deinterleave_unchecked(self.0).1
    }
}

impl fmt::Display for ZGridId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:010}", self.0)
    }
}

/// Key of a UTM-grid cell: zone plus interleaved easting/northing indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UGridId {
    zone: u8,
    interleaved: u32,
}

impl UGridId {
    pub fn from_indices(
        zone: u8,
        easting_index: u32,
        northing_index: u32,
    ) -> Result<Self, GridError> {
        if !(1..=60).contains(&zone) {
            return Err(GridError::ZoneOutOfRange(zone as i64));
        }
        Ok(UGridId {
            zone,
            interleaved: morton::interleave(easting_index, northing_index)?,
        })
    }

    pub fn from_parts(zone: u8, interleaved: u32) -> Result<Self, GridError> {
        let (e, n) = morton::deinterleave(interleaved)?;
        UGridId::from_indices(zone, e, n)
    }

    pub fn zone(self) -> u8 {
        self.zone
    }

    pub fn interleaved(self) -> u32 {
        self.interleaved
    }

    pub fn easting_index(self) -> u32 {
        morton::deinterleave_unchecked(self.interleaved).0
    }

    pub fn northing_index(self) -> u32 {
        morton::deinterleave_unchecked(self.interleaved).1
    }
}

impl fmt::Display for UGridId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}-{:010}", self.zone, self.interleaved)
    }
}

/// A cell key of either theme.
///
/// Textual form: ZGrid ids print as ten zero-padded digits, UGrid ids as
/// `ZZ-NNNNNNNNNN` (zone, dash, interleaved value).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GridId {
    Z(ZGridId),
    U(UGridId),
}

impl GridId {
    pub fn theme(self) -> Theme {
        match self {
            GridId::Z(_) => Theme::Spin2,
            GridId::U(_) => Theme::Usgs,
        }
    }

    /// Totally ordered 64-bit key: zone in the high word for UTM cells, Morton
    /// code in the low 30 bits.
    pub fn sort_key(self) -> u64 {
        match self {
            GridId::Z(z) => z.value() as u64,
            GridId::U(u) => ((u.zone() as u64) << 32) | u.interleaved() as u64,
        }
    }

    pub fn from_sort_key(theme: Theme, key: u64) -> Result<Self, GridError> {
        match theme {
            Theme::Spin2 => {
                let v = u32::try_from(key).map_err(|_| GridError::CodeOutOfRange(key))?;
                ZGridId::from_value(v).map(GridId::Z)
            }
            Theme::Usgs => {
                let zone = (key >> 32) as u8;
                UGridId::from_parts(zone, key as u32).map(GridId::U)
            }
        }
    }

    /// The two Morton lanes: (lon or easting index, lat or northing index).
    pub fn indices(self) -> (u32, u32) {
        match self {
            GridId::Z(z) => (z.lon_index(), z.lat_index()),
            GridId::U(u) => (u.easting_index(), u.northing_index()),
        }
    }

    /// Extent of the cell.
    pub fn extent(self) -> CellExtent {
        match self {
            GridId::Z(z) => zgrid_to_extent(z),
            GridId::U(u) => ugrid_to_extent(u),
        }
    }

    pub fn parse(theme: Theme, s: &str) -> Result<Self, GridError> {
        let id: GridId = s.parse()?;
        if id.theme() != theme {
            return Err(GridError::Malformed(s.to_string()));
        }
        Ok(id)
    }
}

impl fmt::Display for GridId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridId::Z(z) => z.fmt(f),
            GridId::U(u) => u.fmt(f),
        }
    }
}

impl Serialize for GridId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GridId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for GridId {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GridError::Malformed(s.to_string());
        match s.split_once('-') {
            Some((zone, code)) => {
                let zone: u8 = zone.parse().map_err(|_| bad())?;
                let code: u32 = code.parse().map_err(|_| bad())?;
                UGridId::from_parts(zone, code).map(GridId::U)
            }
            None => {
                let code: u32 = s.parse().map_err(|_| bad())?;
                ZGridId::from_value(code).map(GridId::Z)
            }
        }
    }
}

/// Bounding box of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CellExtent {
    /// Half-open [west, east) x [south, north) in degrees.
    Geo {
        west: f64,
        south: f64,
        east: f64,
        north: f64,
    },
    /// Half-open [min_e, max_e) x [min_n, max_n) in zone metres.
    Utm {
        zone: u8,
        min_e: f64,
        min_n: f64,
        max_e: f64,
        max_n: f64,
    },
}

impl CellExtent {
    /// Geographic centre of the cell.
    pub fn center(&self) -> Result<GeoPoint, GridError> {
        match *self {
            CellExtent::Geo {
                west,
                south,
                east,
                north,
            } => GeoPoint::new((south + north) / 2.0, (west + east) / 2.0),
            CellExtent::Utm {
                zone,
                min_e,
                min_n,
                max_e,
                max_n,
            } => utm_to_geo(UtmCoord::new(
                zone,
                (min_e + max_e) / 2.0,
                (min_n + max_n) / 2.0,
            )?),
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        match *self {
            CellExtent::Geo {
                west,
                south,
                east,
                north,
            } => {
                (west..east).contains(&p.lon())
                    && (south <= p.lat() && (p.lat() < north || (north >= 90.0 && p.lat() <= 90.0)))
            }
            CellExtent::Utm {
                zone,
                min_e,
                min_n,
                max_e,
                max_n,
            } => match utm::geo_to_utm_in_zone(p, zone) {
                Ok(c) => {
                    (min_e..max_e).contains(&c.easting()) && (min_n..max_n).contains(&c.northing())
                }
                Err(_) => false,
            },
        }
    }
}
