use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::PyramidError;
use crate::spatial_index::{GeoPoint, UtmCoord};
use crate::Theme;

/// An 8-bit grayscale image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, PyramidError> {
        if pixels.len() != width as usize * height as usize {
            return Err(PyramidError::Shape(format!(
                "{} pixels for a {width}x{height} raster",
                pixels.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Raster {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Raster {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let w = self.width as usize;
        &self.pixels[y as usize * w..(y as usize + 1) * w]
    }

    /// Copies out a `w x h` window whose top-left is `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<Raster, PyramidError> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(PyramidError::Shape(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w as usize * h as usize);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.row(y)[x0 as usize..(x0 + w) as usize]);
        }
        Ok(Raster {
            width: w,
            height: h,
            pixels,
        })
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&p| p as u64).sum::<u64>() as f64 / self.pixels.len() as f64
    }
}

/// Position of a source raster's top-left pixel corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RasterAnchor {
    Utm {
        zone: u8,
        easting: f64,
        northing: f64,
    },
    Geo {
        lat: f64,
        lon: f64,
    },
}

impl RasterAnchor {
    pub fn utm(c: UtmCoord) -> Self {
        RasterAnchor::Utm {
            zone: c.zone(),
            easting: c.easting(),
            northing: c.northing(),
        }
    }

    pub fn geo(p: GeoPoint) -> Self {
        RasterAnchor::Geo {
            lat: p.lat(),
            lon: p.lon(),
        }
    }
}

/// A north-up source raster positioned on the ground.
#[derive(Debug, Clone)]
pub struct GeoRaster {
    pub source_id: String,
    pub theme: Theme,
    pub raster: Raster,
    pub anchor: RasterAnchor,
    pub pixel_scale_m: f64,
    pub acquired: NaiveDate,
}

/// Splits a raster into a `cols x rows` grid of equal tiles, row-major.
pub fn split_grid(r: &Raster, cols: u32, rows: u32) -> Result<Vec<Raster>, PyramidError> {
    if cols == 0 || rows == 0 || r.width % cols != 0 || r.height % rows != 0 {
        return Err(PyramidError::Shape(format!(
            "{}x{} does not divide into {cols}x{rows} tiles",
            r.width, r.height
        )));
    }
    let (tw, th) = (r.width / cols, r.height / rows);
    let mut out = Vec::with_capacity((cols * rows) as usize);
    for row in 0..rows {
        for col in 0..cols {
            out.push(r.crop(col * tw, row * th, tw, th)?);
        }
    }
    Ok(out)
}

/// Concatenates a rectangular grid of equally-sized tiles, row-major.
pub fn mosaic(grid: &[Vec<Raster>]) -> Result<Raster, PyramidError> {
    let rows = grid.len();
    let Some(first_row) = grid.first() else {
        return Err(PyramidError::Shape("empty mosaic".into()));
    };
    let cols = first_row.len();
    let Some(first) = first_row.first() else {
        return Err(PyramidError::Shape("empty mosaic row".into()));
    };
    let (tw, th) = (first.width, first.height);
    for (i, row) in grid.iter().enumerate() {
        if row.len() != cols {
            return Err(PyramidError::Shape(format!(
                "row {i} has {} tiles, expected {cols}",
                row.len()
            )));
        }
        if let Some(t) = row.iter().find(|t| t.width != tw || t.height != th) {
            return Err(PyramidError::Shape(format!(
                "tile {}x{} in row {i}, expected {tw}x{th}",
                t.width, t.height
            )));
        }
    }
    let width = tw * cols as u32;
    let height = th * rows as u32;
    let mut pixels = Vec::with_capacity(width as usize * height as usize);
    for row in grid {
        for y in 0..th {
            for tile in row {
                pixels.extend_from_slice(tile.row(y));
            }
        }
    }
    Raster::new(width, height, pixels)
}
