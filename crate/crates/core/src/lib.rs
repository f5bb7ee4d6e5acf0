//! A desk-scale geospatial atlas.
//!
//! Large north-up grayscale rasters are cut into fixed-size cells, sliced into
//! a four-level JPEG pyramid, and stored clustered by a bit-interleaved grid
//! key so that spatially close imagery lives close together on disk. A small
//! gazetteer resolves place names to imagery, a restartable loader drives bulk
//! ingestion, and an HTTP service serves tiles, page mosaics, name search and a
//! coverage map.
//!
//! Two imagery themes are supported:
//!
//! * [`Theme::Usgs`]: 1 m/px aerial imagery in UTM, cells of 1800 m x 1200 m
//!   keyed by [`UGridId`](spatial_index::UGridId).
//! * [`Theme::Spin2`]: 1.56 m/px satellite imagery in latitude/longitude, cells
//!   of 1/48 deg x 1/96 deg keyed by [`ZGridId`](spatial_index::ZGridId).

pub mod gazetteer;
pub mod loader;
pub mod pyramid;
pub mod server;
pub mod spatial_index;
pub mod store;
pub mod synthetic;
mod theme;

pub use theme::{Level, ParseThemeError, Theme};
