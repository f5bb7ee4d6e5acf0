//! Geographic to UTM and back on the GRS80 ellipsoid, plus the great-circle
//! distance used for nearest-place lookups.
//!
//! ```text
//! cargo run --example utm_projection
//! ```

use terratile::spatial_index::utm::{central_meridian, geo_to_utm_in_zone, haversine_m};
use terratile::spatial_index::{geo_to_utm, utm_to_geo, GeoPoint};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let places = [
        ("Seattle", 47.6062, -122.3321),
        ("Denver", 39.7392, -104.9903),
        ("Chicago", 41.8781, -87.6298),
        ("Boston", 42.3601, -71.0589),
    ];
    println!("{:<8} {:>4} {:>12} {:>13} {:>10}", "place", "zone", "easting", "northing", "error m");
    for (name, lat, lon) in places {
        let p = GeoPoint::new(lat, lon)?;
        let utm = geo_to_utm(p)?;
        let back = utm_to_geo(utm)?;
        let err = haversine_m(p, back);
        println!(
            "{name:<8} {:>4} {:>12.2} {:>13.2} {err:>10.2e}",
            utm.zone(),
            utm.easting(),
            utm.northing()
        );
        assert!(err < 0.5);
    }

    // A point near a zone edge projects into the neighbouring zone too,
    // with the easting pushed away from 500 km.
    let edge = GeoPoint::new(40.0, -108.1)?;
    for zone in [12, 13] {
        let c = geo_to_utm_in_zone(edge, zone)?;
        println!(
            "zone {zone} (meridian {:>5}): E {:.1} N {:.1}",
            central_meridian(zone),
            c.easting(),
            c.northing()
        );
    }

    let sf = GeoPoint::new(37.7749, -122.4194)?;
    let la = GeoPoint::new(34.0522, -118.2437)?;
    println!("San Francisco to Los Angeles: {:.1} km", haversine_m(sf, la) / 1000.0);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
