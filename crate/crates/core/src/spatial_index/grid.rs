use super::morton::{self, INDEX_BITS};
use super::utm::{self, MAX_EASTING, MAX_NORTHING};
use super::{CellExtent, GeoPoint, GridError, GridId, UGridId, UtmCoord, ZGridId};

pub const CELLS_PER_DEGREE_LON: f64 = 48.0;
pub const CELLS_PER_DEGREE_LAT: f64 = 96.0;
/// 360 * 48.
pub const ZGRID_COLUMNS: u32 = 17_280;
/// 180 * 96.
pub const ZGRID_ROWS: u32 = 17_280;

pub const UGRID_CELL_WIDTH_M: f64 = 1800.0;
pub const UGRID_CELL_HEIGHT_M: f64 = 1200.0;
pub const UGRID_EASTING_OFFSET_M: f64 = 400.0;

/// Largest easting index a zone plane reaches.
fn max_easting_index() -> u32 {
    ((MAX_EASTING + UGRID_EASTING_OFFSET_M) / UGRID_CELL_WIDTH_M).floor() as u32
}

fn max_northing_index() -> u32 {
    (MAX_NORTHING / UGRID_CELL_HEIGHT_M).floor() as u32
}

pub fn geo_to_zgrid(p: GeoPoint) -> ZGridId {
    let lon_index = (((p.lon() + 180.0) * CELLS_PER_DEGREE_LON).floor() as i64)
        .clamp(0, ZGRID_COLUMNS as i64 - 1) as u32;
    let lat_index = (((p.lat() + 90.0) * CELLS_PER_DEGREE_LAT).floor() as i64)
        .clamp(0, ZGRID_ROWS as i64 - 1) as u32;
    ZGridId::from_indices(lon_index, lat_index).expect("indices clamped into range")
}

pub fn zgrid_to_extent(z: ZGridId) -> CellExtent {
    let (lon, lat) = (z.lon_index() as f64, z.lat_index() as f64);
    CellExtent::Geo {
        west: lon / CELLS_PER_DEGREE_LON - 180.0,
        east: (lon + 1.0) / CELLS_PER_DEGREE_LON - 180.0,
        south: lat / CELLS_PER_DEGREE_LAT - 90.0,
        north: (lat + 1.0) / CELLS_PER_DEGREE_LAT - 90.0,
    }
}

pub fn utm_to_ugrid(c: UtmCoord) -> UGridId {
    let e = ((c.easting() + UGRID_EASTING_OFFSET_M) / UGRID_CELL_WIDTH_M).floor() as u32;
    let n = (c.northing() / UGRID_CELL_HEIGHT_M).floor() as u32;
    UGridId::from_indices(c.zone(), e, n).expect("zone-plane indices fit in 15 bits")
}

pub fn geo_to_ugrid(p: GeoPoint) -> Result<UGridId, GridError> {
    utm::geo_to_utm(p).map(utm_to_ugrid)
}

pub fn ugrid_to_extent(u: UGridId) -> CellExtent {
    let (e, n) = (u.easting_index() as f64, u.northing_index() as f64);
    CellExtent::Utm {
        zone: u.zone(),
        min_e: e * UGRID_CELL_WIDTH_M - UGRID_EASTING_OFFSET_M,
        max_e: (e + 1.0) * UGRID_CELL_WIDTH_M - UGRID_EASTING_OFFSET_M,
        min_n: n * UGRID_CELL_HEIGHT_M,
        max_n: (n + 1.0) * UGRID_CELL_HEIGHT_M,
    }
}

/// The up-to-8 cells adjacent in index space, ascending by key.
///
/// Geographic cells wrap in longitude and stop at the poles. UTM cells never
/// leave their zone plane.
pub fn neighbors(g: GridId) -> Vec<GridId> {
    let mut out = Vec::with_capacity(8);
    match g {
        GridId::Z(z) => {
            let (u, v) = (z.lon_index() as i64, z.lat_index() as i64);
            for dv in -1..=1 {
                for du in -1..=1 {
                    if du == 0 && dv == 0 {
                        continue;
                    }
                    let lat = v + dv;
                    if !(0..ZGRID_ROWS as i64).contains(&lat) {
                        continue;
                    }
                    let lon = (u + du).rem_euclid(ZGRID_COLUMNS as i64);
                    out.push(GridId::Z(
                        ZGridId::from_indices(lon as u32, lat as u32).expect("in range"),
                    ));
                }
            }
        }
        GridId::U(c) => {
            let (e, n) = (c.easting_index() as i64, c.northing_index() as i64);
            let (max_e, max_n) = (max_easting_index() as i64, max_northing_index() as i64);
            for dn in -1..=1 {
                for de in -1..=1 {
                    if de == 0 && dn == 0 {
                        continue;
                    }
                    let (ne, nn) = (e + de, n + dn);
                    if !(0..=max_e).contains(&ne) || !(0..=max_n).contains(&nn) {
                        continue;
                    }
                    out.push(GridId::U(
                        UGridId::from_indices(c.zone(), ne as u32, nn as u32).expect("in range"),
                    ));
                }
            }
        }
    }
    out.sort_by_key(|g| g.sort_key());
    out.dedup();
    out
}

/// A query rectangle, half-open on its max edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridBox {
    Geo {
        south: f64,
        west: f64,
        north: f64,
        east: f64,
    },
    Utm {
        zone: u8,
        min_e: f64,
        min_n: f64,
        max_e: f64,
        max_n: f64,
    },
}

impl GridBox {
    pub fn from_extent(e: CellExtent) -> GridBox {
        match e {
            CellExtent::Geo {
                west,
                south,
                east,
                north,
            } => GridBox::Geo {
                south,
                west,
                north,
                east,
            },
            CellExtent::Utm {
                zone,
                min_e,
                min_n,
                max_e,
                max_n,
            } => GridBox::Utm {
                zone,
                min_e,
                min_n,
                max_e,
                max_n,
            },
        }
    }

    /// Inclusive index rectangle `((u0, u1), (v0, v1))`, or `None` if empty.
    pub fn index_rect(&self) -> Option<((u32, u32), (u32, u32))> {
        match *self {
            GridBox::Geo {
                south,
                west,
                north,
                east,
            } => Some((
                index_span(
                    (west + 180.0) * CELLS_PER_DEGREE_LON,
                    (east + 180.0) * CELLS_PER_DEGREE_LON,
                    ZGRID_COLUMNS - 1,
                )?,
                index_span(
                    (south + 90.0) * CELLS_PER_DEGREE_LAT,
                    (north + 90.0) * CELLS_PER_DEGREE_LAT,
                    ZGRID_ROWS - 1,
                )?,
            )),
            GridBox::Utm {
                min_e,
                min_n,
                max_e,
                max_n,
                ..
            } => Some((
                index_span(
                    (min_e + UGRID_EASTING_OFFSET_M) / UGRID_CELL_WIDTH_M,
                    (max_e + UGRID_EASTING_OFFSET_M) / UGRID_CELL_WIDTH_M,
                    max_easting_index(),
                )?,
                index_span(
                    min_n / UGRID_CELL_HEIGHT_M,
                    max_n / UGRID_CELL_HEIGHT_M,
                    max_northing_index(),
                )?,
            )),
        }
    }
}

/// Values this close to an integer are treated as lying on the cell edge.
const EDGE_SNAP: f64 = 1e-7;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < EDGE_SNAP {
        r
    } else {
        x
    }
}

fn index_span(lo: f64, hi: f64, max_index: u32) -> Option<(u32, u32)> {
    let (lo, hi) = (snap(lo), snap(hi));
    if !(hi > lo) {
        return None;
    }
    let first = lo.floor() as i64;
    let last = hi.ceil() as i64 - 1;
    let first = first.max(0);
    let last = last.min(max_index as i64);
    (first <= last).then_some((first as u32, last as u32))
}

/// Every cell intersecting `bbox`, in ascending Morton order.
///
/// Walks the implicit quadtree of the Morton space, so output order falls out
/// of the traversal rather than a sort.
pub fn range_cells(bbox: GridBox) -> Result<Vec<GridId>, GridError> {
    let zone = match bbox {
        GridBox::Utm { zone, .. } => {
            if !(1..=60).contains(&zone) {
                return Err(GridError::ZoneOutOfRange(zone as i64));
            }
            Some(zone)
        }
        GridBox::Geo { .. } => None,
    };
    let Some(((u0, u1), (v0, v1))) = bbox.index_rect() else {
        return Ok(Vec::new());
    };
    let mut codes = Vec::with_capacity(((u1 - u0 + 1) as usize) * ((v1 - v0 + 1) as usize));
    collect_z_range(0, 0, INDEX_BITS, (u0, u1, v0, v1), &mut codes);
    Ok(codes
        .into_iter()
        .map(|code| match zone {
            Some(zone) => GridId::U(UGridId::from_parts(zone, code).expect("code in range")),
            None => GridId::Z(ZGridId::from_value(code).expect("code in range")),
        })
        .collect())
}

fn collect_z_range(bu: u32, bv: u32, k: u32, rect: (u32, u32, u32, u32), out: &mut Vec<u32>) {
    let (u0, u1, v0, v1) = rect;
    let size = 1u32 << k;
    let (bu1, bv1) = (bu + size - 1, bv + size - 1);
    if bu1 < u0 || bu > u1 || bv1 < v0 || bv > v1 {
        return;
    }
    if bu >= u0 && bu1 <= u1 && bv >= v0 && bv1 <= v1 {
        // Whole block inside: its codes are one contiguous run.
        let base = morton::interleave_unchecked(bu, bv);
        out.extend(base..base + (1u32 << (2 * k)));
        return;
    }
    let half = size >> 1;
    for (du, dv) in [(0, 0), (half, 0), (0, half), (half, half)] {
        collect_z_range(bu + du, bv + dv, k - 1, rect, out);
    }
}

#[cfg(test)]
mod tests {
    use super::super::morton::oracle;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn zgrid_corner_cases() {
        assert_eq!(geo_to_zgrid(pt(-90.0, -180.0)).value(), 0);
        let top = geo_to_zgrid(pt(89.999, 179.999));
        assert_eq!((top.lon_index(), top.lat_index()), (17279, 17279));
        assert_eq!(top.value(), oracle::interleave(17279, 17279));
        // lat +90 clamps into the top row; lon +180 folds onto -180.
        assert_eq!(geo_to_zgrid(pt(90.0, 0.0)).lat_index(), 17279);
        assert_eq!(geo_to_zgrid(pt(0.0, 180.0)).lon_index(), 0);
    }

    #[test]
    fn zgrid_origin_cell() {
        let z = geo_to_zgrid(pt(0.0, 0.0));
        assert_eq!((z.lon_index(), z.lat_index()), (8640, 8640));
        // Frozen from the bit-loop oracle.
        assert_eq!(z.value(), 201_584_640);
        assert_eq!(z.value(), oracle::interleave(8640, 8640));
    }

    #[test]
    fn zgrid_extent_size() {
        let e = zgrid_to_extent(ZGridId::from_value(0).unwrap());
        match e {
            CellExtent::Geo {
                west,
                south,
                east,
                north,
            } => {
                assert_eq!((south, west), (-90.0, -180.0));
                assert!((east - west - 1.0 / 48.0).abs() < 1e-12);
                assert!((north - south - 1.0 / 96.0).abs() < 1e-12);
            }
            _ => panic!("geo extent expected"),
        }
    }

    #[test]
    fn zgrid_cardinality() {
        assert_eq!(ZGRID_COLUMNS as u64 * ZGRID_ROWS as u64, 298_598_400);
        assert_eq!((360.0 * CELLS_PER_DEGREE_LON) as u32, ZGRID_COLUMNS);
        assert_eq!((180.0 * CELLS_PER_DEGREE_LAT) as u32, ZGRID_ROWS);
    }

    #[test]
    fn zgrid_center_round_trip() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..10_000 {
            let z =
                ZGridId::from_indices(rng.gen_range(0..17280), rng.gen_range(0..17280)).unwrap();
            let c = zgrid_to_extent(z).center().unwrap();
            assert_eq!(geo_to_zgrid(c), z);
        }
    }

    #[test]
    fn ugrid_examples() {
        let u = utm_to_ugrid(UtmCoord::new(10, 0.0, 0.0).unwrap());
        assert_eq!(
            (u.easting_index(), u.northing_index(), u.interleaved()),
            (0, 0, 0)
        );
        let u = utm_to_ugrid(UtmCoord::new(10, 1400.0, 1200.0).unwrap());
        assert_eq!((u.easting_index(), u.northing_index()), (1, 1));
        assert_eq!(u.interleaved(), oracle::interleave(1, 1));
        assert_eq!(u.interleaved(), 3);
        assert_eq!(u.zone(), 10);
    }

    #[test]
    fn ugrid_block_neighbours_share_high_bits() {
        // Brute force over a 4x4 neighbourhood: cells of the same aligned 2x2
        // block differ only in the low two bits.
        for e0 in (100..104).step_by(2) {
            for n0 in (3000..3004).step_by(2) {
                let base = UGridId::from_indices(11, e0, n0).unwrap().interleaved();
                for de in 0..2 {
                    for dn in 0..2 {
                        let c = UGridId::from_indices(11, e0 + de, n0 + dn)
                            .unwrap()
                            .interleaved();
                        assert_eq!(c >> 2, base >> 2);
                        assert_eq!(c & 3, de | (dn << 1));
                    }
                }
            }
        }
    }

    #[test]
    fn neighbour_counts() {
        let interior = GridId::Z(ZGridId::from_indices(500, 500).unwrap());
        assert_eq!(neighbors(interior).len(), 8);
        let pole = GridId::Z(ZGridId::from_indices(500, 17279).unwrap());
        assert_eq!(neighbors(pole).len(), 5);
        let south_pole = GridId::Z(ZGridId::from_indices(0, 0).unwrap());
        let ns = neighbors(south_pole);
        assert_eq!(ns.len(), 5);
        assert!(ns.contains(&GridId::Z(ZGridId::from_indices(17279, 0).unwrap())));

        let u_edge = GridId::U(UGridId::from_indices(10, 0, 3000).unwrap());
        assert_eq!(neighbors(u_edge).len(), 5);
        let u_mid = GridId::U(UGridId::from_indices(10, 200, 3000).unwrap());
        assert_eq!(neighbors(u_mid).len(), 8);
    }

    fn neighbour_oracle_z(u: i64, v: i64) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for lat in v - 1..=v + 1 {
            for lon in u - 1..=u + 1 {
                if (lon, lat) == (u, v) || lat < 0 || lat >= 17280 {
                    continue;
                }
                out.push((((lon + 17280) % 17280) as u32, lat as u32));
            }
        }
        out.sort();
        out
    }

    #[test]
    fn neighbours_match_index_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let (u, v) = (rng.gen_range(0..17280u32), rng.gen_range(0..17280u32));
            let mut got: Vec<_> = neighbors(GridId::Z(ZGridId::from_indices(u, v).unwrap()))
                .into_iter()
                .map(|g| g.indices())
                .collect();
            got.sort();
            assert_eq!(got, neighbour_oracle_z(u as i64, v as i64));
            for (nu, nv) in got {
                let du = (nu as i64 - u as i64)
                    .rem_euclid(17280)
                    .min((u as i64 - nu as i64).rem_euclid(17280));
                assert!(du <= 1 && (nv as i64 - v as i64).abs() <= 1);
            }
        }
    }

    #[test]
    fn range_of_one_cell_is_that_cell() {
        let z = ZGridId::from_indices(9000, 12000).unwrap();
        let cells = range_cells(GridBox::from_extent(zgrid_to_extent(z))).unwrap();
        assert_eq!(cells, vec![GridId::Z(z)]);

        let u = UGridId::from_indices(12, 250, 3500).unwrap();
        let cells = range_cells(GridBox::from_extent(ugrid_to_extent(u))).unwrap();
        assert_eq!(cells, vec![GridId::U(u)]);
    }

    #[test]
    fn range_two_by_two() {
        let bbox = GridBox::Utm {
            zone: 10,
            min_e: 1400.0,
            min_n: 1200.0,
            max_e: 1400.0 + 2.0 * 1800.0,
            max_n: 3600.0,
        };
        let cells = range_cells(bbox).unwrap();
        assert_eq!(cells.len(), 4);
        let keys: Vec<_> = cells.iter().map(|c| c.sort_key()).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_box_is_empty() {
        let bbox = GridBox::Geo {
            south: 10.0,
            west: 5.0,
            north: 10.0,
            east: 6.0,
        };
        assert!(range_cells(bbox).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn range_matches_rectangle_scan(u0 in 0u32..17200, v0 in 0u32..17200, w in 1u32..40, h in 1u32..40) {
            let bbox = GridBox::Geo {
                west: u0 as f64 / 48.0 - 180.0 + 0.001,
                east: (u0 + w) as f64 / 48.0 - 180.0 - 0.001,
                south: v0 as f64 / 96.0 - 90.0 + 0.0005,
                north: (v0 + h) as f64 / 96.0 - 90.0 - 0.0005,
            };
            let got = range_cells(bbox).unwrap();
            let mut expected = Vec::new();
            for u in u0..u0 + w {
                for v in v0..v0 + h {
                    expected.push(oracle::interleave(u, v));
                }
            }
            expected.sort();
            let got: Vec<u32> = got.iter().map(|g| g.sort_key() as u32).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn zgrid_constant_inside_cell(u in 0u32..17280, v in 0u32..17280, fx in 0.01f64..0.99, fy in 0.01f64..0.99) {
            let z = ZGridId::from_indices(u, v).unwrap();
            let p = GeoPoint::new((v as f64 + fy) / 96.0 - 90.0, (u as f64 + fx) / 48.0 - 180.0).unwrap();
            prop_assert_eq!(geo_to_zgrid(p), z);
        }

        #[test]
        fn grid_id_text_round_trip(zone in 1u8..=60, e in 0u32..600, n in 0u32..7800, z in 0u32..17280, w in 0u32..17280) {
            let u = GridId::U(UGridId::from_indices(zone, e, n).unwrap());
            prop_assert_eq!(u.to_string().parse::<GridId>().unwrap(), u);
            let g = GridId::Z(ZGridId::from_indices(z, w).unwrap());
            prop_assert_eq!(g.to_string().parse::<GridId>().unwrap(), g);
            prop_assert_eq!(GridId::from_sort_key(u.theme(), u.sort_key()).unwrap(), u);
        }
    }
}
