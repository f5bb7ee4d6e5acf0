//! Cell keys of both themes: encode a point, print the Morton bits, walk the
//! neighbourhood and enumerate a query box.
//!
//! ```text
//! cargo run --example grid_ids
//! ```

use terratile::spatial_index::{
    geo_to_ugrid, geo_to_zgrid, morton, neighbors, range_cells, GeoPoint, GridBox, GridId,
    ZGRID_COLUMNS, ZGRID_ROWS,
};
use terratile::Theme;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let golden_gate = GeoPoint::new(37.8199, -122.4783)?;

    let z = geo_to_zgrid(golden_gate);
    let u = geo_to_ugrid(golden_gate)?;
    println!("SPIN-2 cell {z}  lon/lat index {} {}", z.lon_index(), z.lat_index());
    println!("  bits {:030b}", z.value());
    println!("USGS cell   {u}  east/north index {} {}", u.easting_index(), u.northing_index());
    println!("  bits {:030b}", u.interleaved());

    // Longitude (easting) takes the even bits.
    let (lon, lat) = morton::deinterleave(z.value())?;
    assert_eq!((lon, lat), (z.lon_index(), z.lat_index()));

    // Text form round-trips through the theme-aware parser.
    let text = GridId::U(u).to_string();
    assert_eq!(GridId::parse(Theme::Usgs, &text)?, GridId::U(u));

    println!("neighbours of {z}:");
    for n in neighbors(GridId::Z(z)) {
        println!("  {n}");
    }

    let bay = GridBox::Geo {
        south: 37.70,
        west: -122.52,
        north: 37.83,
        east: -122.35,
    };
    let cells = range_cells(bay)?;
    println!("{} SPIN-2 cells cover the box; first {}, last {}", cells.len(), cells[0], cells[cells.len() - 1]);

    println!(
        "geographic grid: {ZGRID_COLUMNS} x {ZGRID_ROWS} = {} cells",
        ZGRID_COLUMNS as u64 * ZGRID_ROWS as u64
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
