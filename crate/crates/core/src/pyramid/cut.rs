use std::ops::Range;

use chrono::NaiveDate;

use super::{GeoRaster, PyramidError, Raster, RasterAnchor};
use crate::spatial_index::utm::meters_per_degree_lon;
use crate::spatial_index::{
    range_cells, CellExtent, GridBox, GridId, CELLS_PER_DEGREE_LAT, CELLS_PER_DEGREE_LON,
};
use crate::Theme;

/// USGS cuts are always this size (1 m pixels over an 1800 m x 1200 m cell).
pub const USGS_CUT_WIDTH: u32 = 1800;
pub const USGS_CUT_HEIGHT: u32 = 1200;
/// Fixed metres per degree of latitude used to size geographic cuts.
pub const METERS_PER_DEGREE_LAT: f64 = 111_320.0;
/// Pixel value treated as no-data and used to fill uncovered area.
pub const NO_DATA: u8 = 255;

const SCALE_TOLERANCE: f64 = 1e-6;

/// One grid cell's full-resolution raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub theme: Theme,
    pub grid: GridId,
    pub raster: Raster,
    /// Newest acquisition date among the contributing sources.
    pub acquired: NaiveDate,
    /// Contributing source ids, sorted.
    pub sources: Vec<String>,
}

/// Pixel size of a geographic cut centred at `lat`; both sides are multiples of 5.
pub fn spin2_cut_dims(lat: f64) -> (u32, u32) {
    let scale = Theme::Spin2.pixel_scale_m();
    let per_side = Theme::Spin2.tiles_per_side() as f64;
    let w = meters_per_degree_lon(lat) / CELLS_PER_DEGREE_LON / scale / per_side;
    let h = METERS_PER_DEGREE_LAT / CELLS_PER_DEGREE_LAT / scale / per_side;
    let side = Theme::Spin2.tiles_per_side();
    (
        (w.round() as u32).max(1) * side,
        (h.round() as u32).max(1) * side,
    )
}

/// How a cut pixel maps back onto a source pixel.
trait Footprint {
    /// Source pixel containing the centre of cut pixel `(cx, cy)`, if any.
    fn source_pixel(&self, cx: u32, cy: u32) -> Option<(u32, u32)>;
}

struct UtmMapping<'a> {
    src: &'a GeoRaster,
    e0: f64,
    n0: f64,
    min_e: f64,
    max_n: f64,
}

impl Footprint for UtmMapping<'_> {
    fn source_pixel(&self, cx: u32, cy: u32) -> Option<(u32, u32)> {
        let e = self.min_e + cx as f64 + 0.5;
        let n = self.max_n - cy as f64 - 0.5;
        let x = (e - self.e0).floor();
        let y = (self.n0 - n).floor();
        in_raster(&self.src.raster, x, y)
    }
}

struct GeoMapping<'a> {
    src: &'a GeoRaster,
    lon0: f64,
    lat0: f64,
    src_dlon: f64,
    src_dlat: f64,
    west: f64,
    north: f64,
    cut_dlon: f64,
    cut_dlat: f64,
}

impl Footprint for GeoMapping<'_> {
    fn source_pixel(&self, cx: u32, cy: u32) -> Option<(u32, u32)> {
        let lon = self.west + (cx as f64 + 0.5) * self.cut_dlon;
        let lat = self.north - (cy as f64 + 0.5) * self.cut_dlat;
        let x = ((lon - self.lon0) / self.src_dlon).floor();
        let y = ((self.lat0 - lat) / self.src_dlat).floor();
        in_raster(&self.src.raster, x, y)
    }
}

fn in_raster(r: &Raster, x: f64, y: f64) -> Option<(u32, u32)> {
    (x >= 0.0 && y >= 0.0 && x < r.width() as f64 && y < r.height() as f64)
        .then_some((x as u32, y as u32))
}

/// Degrees per source pixel for a geographic source.
pub(crate) fn spin2_source_steps(src: &GeoRaster, lat0: f64) -> (f64, f64) {
    geo_steps(src.pixel_scale_m, src.raster.height(), lat0)
}

fn geo_steps(pixel_scale_m: f64, height: u32, lat0: f64) -> (f64, f64) {
    let dlat = pixel_scale_m / METERS_PER_DEGREE_LAT;
    let center_lat = lat0 - dlat * height as f64 / 2.0;
    let dlon = pixel_scale_m / meters_per_degree_lon(center_lat);
    (dlon, dlat)
}

fn check_source(src: &GeoRaster, theme: Theme) -> Result<(), PyramidError> {
    if src.theme != theme {
        return Err(PyramidError::Format(format!(
            "source {} is {} imagery, expected {theme}",
            src.source_id, src.theme
        )));
    }
    if (src.pixel_scale_m - theme.pixel_scale_m()).abs() > SCALE_TOLERANCE {
        return Err(PyramidError::Format(format!(
            "source {} has pixel scale {} m, expected {} m",
            src.source_id,
            src.pixel_scale_m,
            theme.pixel_scale_m()
        )));
    }
    Ok(())
}

/// Ground footprint of a source as a query box on its theme's grid.
pub fn source_box(src: &GeoRaster, zone: Option<u8>) -> Result<GridBox, PyramidError> {
    if let (Some(zone), RasterAnchor::Utm { zone: z, .. }) = (zone, src.anchor) {
        if zone != z {
            return Err(PyramidError::Format(format!(
                "source {} is in zone {z}, cutting zone {zone}",
                src.source_id
            )));
        }
    }
    footprint_box(
        src.theme,
        src.anchor,
        src.pixel_scale_m,
        src.raster.width(),
        src.raster.height(),
    )
    .map_err(|e| match e {
        PyramidError::Format(m) => PyramidError::Format(format!("source {}: {m}", src.source_id)),
        other => other,
    })
}

/// Footprint of a `width x height` raster without loading its pixels.
pub fn footprint_box(
    theme: Theme,
    anchor: RasterAnchor,
    pixel_scale_m: f64,
    width: u32,
    height: u32,
) -> Result<GridBox, PyramidError> {
    let (w, h) = (width as f64, height as f64);
    match (theme, anchor) {
        (
            Theme::Usgs,
            RasterAnchor::Utm {
                easting,
                northing,
                zone,
            },
        ) => Ok(GridBox::Utm {
            zone,
            min_e: easting,
            max_e: easting + w * pixel_scale_m,
            min_n: northing - h * pixel_scale_m,
            max_n: northing,
        }),
        (Theme::Spin2, RasterAnchor::Geo { lat, lon }) => {
            let (dlon, dlat) = geo_steps(pixel_scale_m, height, lat);
            Ok(GridBox::Geo {
                west: lon,
                east: lon + w * dlon,
                north: lat,
                south: lat - h * dlat,
            })
        }
        _ => Err(PyramidError::Format(format!(
            "anchor does not match the {theme} theme"
        ))),
    }
}

/// Cuts every UTM cell touched by `sources`.
pub fn cut_usgs(sources: &[GeoRaster], zone: u8) -> Result<Vec<Cut>, PyramidError> {
    cut_usgs_rows(sources, zone, 0..u32::MAX)
}

/// Cuts the UTM cells touched by `sources` whose northing index is in `rows`.
pub fn cut_usgs_rows(
    sources: &[GeoRaster],
    zone: u8,
    rows: Range<u32>,
) -> Result<Vec<Cut>, PyramidError> {
    for s in sources {
        check_source(s, Theme::Usgs)?;
    }
    let cells = covered_cells(sources, Some(zone), &rows)?;
    let mut cuts = Vec::with_capacity(cells.len());
    for cell in cells {
        let CellExtent::Utm { min_e, max_n, .. } = cell.extent() else {
            unreachable!("UTM cell");
        };
        let mappings: Vec<(&GeoRaster, UtmMapping)> = sources
            .iter()
            .map(|src| {
                let RasterAnchor::Utm {
                    easting, northing, ..
                } = src.anchor
                else {
                    unreachable!("checked by source_box");
                };
                (
                    src,
                    UtmMapping {
                        src,
                        e0: easting,
                        n0: northing,
                        min_e,
                        max_n,
                    },
                )
            })
            .collect();
        if let Some(cut) = compose(
            Theme::Usgs,
            cell,
            USGS_CUT_WIDTH,
            USGS_CUT_HEIGHT,
            &mappings,
        ) {
            cuts.push(cut);
        }
    }
    Ok(cuts)
}

/// Cuts the geographic cells touched by `sources` whose latitude index is in
/// `lat_rows`.
pub fn cut_spin2(sources: &[GeoRaster], lat_rows: Range<u32>) -> Result<Vec<Cut>, PyramidError> {
    for s in sources {
        check_source(s, Theme::Spin2)?;
    }
    let cells = covered_cells(sources, None, &lat_rows)?;
    let mut cuts = Vec::with_capacity(cells.len());
    for cell in cells {
        let CellExtent::Geo {
            west, south, north, ..
        } = cell.extent()
        else {
            unreachable!("geographic cell");
        };
        let (w, h) = spin2_cut_dims((south + north) / 2.0);
        let mappings: Vec<(&GeoRaster, GeoMapping)> = sources
            .iter()
            .map(|src| {
                let RasterAnchor::Geo { lat, lon } = src.anchor else {
                    unreachable!("checked by source_box");
                };
                let (src_dlon, src_dlat) = spin2_source_steps(src, lat);
                (
                    src,
                    GeoMapping {
                        src,
                        lon0: lon,
                        lat0: lat,
                        src_dlon,
                        src_dlat,
                        west,
                        north,
                        cut_dlon: 1.0 / CELLS_PER_DEGREE_LON / w as f64,
                        cut_dlat: 1.0 / CELLS_PER_DEGREE_LAT / h as f64,
                    },
                )
            })
            .collect();
        if let Some(cut) = compose(Theme::Spin2, cell, w, h, &mappings) {
            cuts.push(cut);
        }
    }
    Ok(cuts)
}

fn covered_cells(
    sources: &[GeoRaster],
    zone: Option<u8>,
    rows: &Range<u32>,
) -> Result<Vec<GridId>, PyramidError> {
    let mut cells = Vec::new();
    for src in sources {
        let bbox = source_box(src, zone)?;
        cells.extend(
            range_cells(bbox)?
                .into_iter()
                .filter(|c| rows.contains(&c.indices().1)),
        );
    }
    cells.sort_by_key(|c| c.sort_key());
    cells.dedup();
    Ok(cells)
}

/// Newest acquisition first, then lowest source id.
fn priority_order<'a, F>(mappings: &'a [(&'a GeoRaster, F)]) -> Vec<&'a (&'a GeoRaster, F)> {
    let mut ordered: Vec<_> = mappings.iter().collect();
    ordered.sort_by(|a, b| {
        b.0.acquired
            .cmp(&a.0.acquired)
            .then_with(|| a.0.source_id.cmp(&b.0.source_id))
    });
    ordered
}

fn compose<F: Footprint>(
    theme: Theme,
    cell: GridId,
    width: u32,
    height: u32,
    mappings: &[(&GeoRaster, F)],
) -> Option<Cut> {
    let mut canvas = Raster::filled(width, height, NO_DATA);
    let mut claimed = vec![false; width as usize * height as usize];
    let mut contributors: Vec<(&str, NaiveDate)> = Vec::new();
    for (src, map) in priority_order(mappings) {
        let mut used = false;
        for cy in 0..height {
            for cx in 0..width {
                let idx = cy as usize * width as usize + cx as usize;
                if claimed[idx] {
                    continue;
                }
                if let Some((sx, sy)) = map.source_pixel(cx, cy) {
                    let v = src.raster.get(sx, sy);
                    if v != NO_DATA {
                        canvas.set(cx, cy, v);
                        claimed[idx] = true;
                        used = true;
                    }
                }
            }
        }
        if used {
            contributors.push((&src.source_id, src.acquired));
        }
    }
    let acquired = contributors.iter().map(|c| c.1).max()?;
    let mut sources: Vec<String> = contributors.iter().map(|c| c.0.to_string()).collect();
    sources.sort();
    Some(Cut {
        theme,
        grid: cell,
        raster: canvas,
        acquired,
        sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial_index::{UGridId, UtmCoord};

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(1997, 6, d).unwrap()
    }

    fn usgs_source(id: &str, e: f64, n: f64, raster: Raster, day: u32) -> GeoRaster {
        GeoRaster {
            source_id: id.into(),
            theme: Theme::Usgs,
            raster,
            anchor: RasterAnchor::utm(UtmCoord::new(10, e, n).unwrap()),
            pixel_scale_m: 1.0,
            acquired: date(day),
        }
    }

    fn texture(w: u32, h: u32, seed: u32) -> Raster {
        Raster::from_fn(w, h, |x, y| {
            ((x.wrapping_mul(7) ^ y.wrapping_mul(13) ^ seed) % 250) as u8
        })
    }

    /// Cell (e, n) top-left corner in zone metres.
    fn corner(e: u32, n: u32) -> (f64, f64) {
        (e as f64 * 1800.0 - 400.0, (n + 1) as f64 * 1200.0)
    }

    #[test]
    fn exact_cell_source_gives_identical_cut() {
        let (e0, n0) = corner(300, 3500);
        let r = texture(1800, 1200, 1);
        let cuts = cut_usgs(&[usgs_source("a", e0, n0, r.clone(), 1)], 10).unwrap();
        assert_eq!(cuts.len(), 1);
        assert_eq!(
            cuts[0].grid,
            GridId::U(UGridId::from_indices(10, 300, 3500).unwrap())
        );
        assert_eq!(cuts[0].raster, r);
        assert_eq!(cuts[0].sources, vec!["a".to_string()]);
    }

    #[test]
    fn aligned_double_source_gives_four_cuts() {
        let (e0, n0) = corner(300, 3501);
        let r = texture(3600, 2400, 2);
        let cuts = cut_usgs(&[usgs_source("a", e0, n0, r.clone(), 1)], 10).unwrap();
        assert_eq!(cuts.len(), 4);
        for cut in &cuts {
            let (e, n) = cut.grid.indices();
            let x0 = (e - 300) * 1800;
            let y0 = (3501 - n) * 1200;
            assert_eq!(cut.raster, r.crop(x0, y0, 1800, 1200).unwrap());
        }
    }

    #[test]
    fn partial_cell_is_white_filled() {
        let (e0, n0) = corner(300, 3500);
        let cuts = cut_usgs(
            &[usgs_source("a", e0, n0, Raster::filled(900, 1200, 40), 1)],
            10,
        )
        .unwrap();
        assert_eq!(cuts.len(), 1);
        let r = &cuts[0].raster;
        assert_eq!((r.width(), r.height()), (1800, 1200));
        assert_eq!(r.get(899, 600), 40);
        assert_eq!(r.get(900, 600), NO_DATA);
    }

    /// Reference merge: per pixel, newest non-white candidate, ties to the
    /// lowest source id.
    fn merge_oracle(sources: &[GeoRaster], e_min: f64, n_max: f64, w: u32, h: u32) -> Raster {
        Raster::from_fn(w, h, |cx, cy| {
            let (ge, gn) = (e_min + cx as f64 + 0.5, n_max - cy as f64 - 0.5);
            let mut best: Option<(NaiveDate, &str, u8)> = None;
            for s in sources {
                let RasterAnchor::Utm {
                    easting, northing, ..
                } = s.anchor
                else {
                    unreachable!()
                };
                let (x, y) = ((ge - easting).floor(), (northing - gn).floor());
                if x < 0.0
                    || y < 0.0
                    || x >= s.raster.width() as f64
                    || y >= s.raster.height() as f64
                {
                    continue;
                }
                let v = s.raster.get(x as u32, y as u32);
                if v == NO_DATA {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((d, id, _)) => {
                        s.acquired > d || (s.acquired == d && s.source_id.as_str() < id)
                    }
                };
                if better {
                    best = Some((s.acquired, &s.source_id, v));
                }
            }
            best.map(|b| b.2).unwrap_or(NO_DATA)
        })
    }

    #[test]
    fn overlapping_halves_match_merge_oracle() {
        let (e0, n0) = corner(300, 3500);
        // Two half-cells overlapping by 10% of the cell width, with white holes.
        let mut left = texture(990, 1200, 3);
        for y in 100..200 {
            for x in 850..990 {
                left.set(x, y, NO_DATA);
            }
        }
        let right = texture(990, 1200, 4);
        let sources = vec![
            usgs_source("left", e0, n0, left, 2),
            usgs_source("right", e0 + 810.0, n0, right, 1),
        ];
        let cuts = cut_usgs(&sources, 10).unwrap();
        assert_eq!(cuts.len(), 1);
        assert_eq!(cuts[0].raster, merge_oracle(&sources, e0, n0, 1800, 1200));
        assert_eq!(cuts[0].acquired, date(2));

        // Same date: tie goes to the lexically first id.
        let mut tied = sources.clone();
        tied[1].acquired = date(2);
        tied[1].source_id = "a-right".into();
        let cuts = cut_usgs(&tied, 10).unwrap();
        assert_eq!(cuts[0].raster, merge_oracle(&tied, e0, n0, 1800, 1200));
    }

    #[test]
    fn rejects_wrong_scale_and_zone() {
        let (e0, n0) = corner(300, 3500);
        let mut s = usgs_source("a", e0, n0, texture(10, 10, 0), 1);
        s.pixel_scale_m = 2.0;
        assert!(matches!(
            cut_usgs(&[s.clone()], 10),
            Err(PyramidError::Format(_))
        ));
        s.pixel_scale_m = 1.0;
        assert!(matches!(cut_usgs(&[s], 11), Err(PyramidError::Format(_))));
        assert!(cut_usgs(&[], 10).unwrap().is_empty());
    }

    #[test]
    fn spin2_dims_are_divisible_and_in_published_range() {
        for lat in [30.0, 37.0, 45.0, 52.0] {
            let (w, h) = spin2_cut_dims(lat);
            assert_eq!(w % 5, 0);
            assert_eq!(h % 5, 0);
            assert_eq!(h / 5, 149);
            assert!((167..=297).contains(&(w / 5)));
        }
        // cos(lat) = 0.80 -> about 239 px per tile column.
        let lat = 0.8f64.acos().to_degrees();
        let (w, _) = spin2_cut_dims(lat);
        let tile_w = w / 5;
        assert!((236..=240).contains(&tile_w), "{tile_w}");
        assert!((167..=239).contains(&tile_w));
    }

    #[test]
    fn spin2_single_source_single_cell() {
        let z = crate::spatial_index::ZGridId::from_indices(11_000, 12_500).unwrap();
        let CellExtent::Geo {
            west,
            south,
            north,
            east,
        } = z.into_extent()
        else {
            unreachable!()
        };
        let lat_c = (south + north) / 2.0;
        let dlat = 1.56 / METERS_PER_DEGREE_LAT;
        let dlon = 1.56 / meters_per_degree_lon(lat_c);
        let w = ((east - west) / dlon).floor() as u32 - 2;
        let h = ((north - south) / dlat).floor() as u32 - 2;
        let src = GeoRaster {
            source_id: "s".into(),
            theme: Theme::Spin2,
            raster: texture(w, h, 9),
            anchor: RasterAnchor::Geo {
                lat: north - dlat,
                lon: west + dlon,
            },
            pixel_scale_m: 1.56,
            acquired: date(3),
        };
        let cuts = cut_spin2(&[src], 0..17280).unwrap();
        assert_eq!(cuts.len(), 1);
        assert_eq!(cuts[0].grid, GridId::Z(z));
        assert_eq!(
            (cuts[0].raster.width(), cuts[0].raster.height()),
            spin2_cut_dims(lat_c)
        );
    }

    trait IntoExtent {
        fn into_extent(self) -> CellExtent;
    }
    impl IntoExtent for crate::spatial_index::ZGridId {
        fn into_extent(self) -> CellExtent {
            crate::spatial_index::zgrid_to_extent(self)
        }
    }
}
