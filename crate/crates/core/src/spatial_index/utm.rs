//! Transverse Mercator on the GRS80 ellipsoid, UTM parameterisation.
//!
//! Uses the Krüger n-series (third order), which stays well under a
//! millimetre inside a 6 degree zone.

use super::{GeoPoint, GridError, UtmCoord};

/// GRS80 semi-major axis in metres.
pub const GRS80_A: f64 = 6_378_137.0;
/// GRS80 inverse flattening.
pub const GRS80_INV_F: f64 = 298.257_222_101;

const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
/// Highest latitude the projection accepts.
pub const MAX_LATITUDE: f64 = 84.0;

/// Largest easting accepted for a zone plane.
pub const MAX_EASTING: f64 = 1_000_000.0;
/// Largest northing accepted (slightly north of 84 degrees).
pub const MAX_NORTHING: f64 = 9_400_000.0;

struct Series {
    /// Rectifying radius.
    a_rect: f64,
    e: f64,
    alpha: [f64; 3],
    beta: [f64; 3],
    delta: [f64; 3],
}

fn series() -> Series {
    let f = 1.0 / GRS80_INV_F;
    let n = f / (2.0 - f);
    let n2 = n * n;
    let n3 = n2 * n;
    Series {
        a_rect: GRS80_A / (1.0 + n) * (1.0 + n2 / 4.0 + n2 * n2 / 64.0),
        e: 2.0 * n.sqrt() / (1.0 + n),
        alpha: [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0,
            61.0 * n3 / 240.0,
        ],
        beta: [
            n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0,
            n2 / 48.0 + n3 / 15.0,
            17.0 * n3 / 480.0,
        ],
        delta: [
            2.0 * n - 2.0 * n2 / 3.0 - 2.0 * n3,
            7.0 * n2 / 3.0 - 8.0 * n3 / 5.0,
            56.0 * n3 / 15.0,
        ],
    }
}

/// UTM zone (1..=60) containing a longitude. No Norway/Svalbard exceptions.
pub fn zone_for_lon(lon: f64) -> u8 {
    let z = ((lon + 180.0) / 6.0).floor() as i32 + 1;
    z.clamp(1, 60) as u8
}

/// Longitude of a zone's central meridian in degrees.
pub fn central_meridian(zone: u8) -> f64 {
    zone as f64 * 6.0 - 183.0
}

/// Projects into the point's own zone.
pub fn geo_to_utm(p: GeoPoint) -> Result<UtmCoord, GridError> {
    geo_to_utm_in_zone(p, zone_for_lon(p.lon()))
}

/// Projects into an explicit zone (used when a neighbouring zone's plane is wanted).
pub fn geo_to_utm_in_zone(p: GeoPoint, zone: u8) -> Result<UtmCoord, GridError> {
    if !(1..=60).contains(&zone) {
        return Err(GridError::ZoneOutOfRange(zone as i64));
    }
    if p.lat().abs() > MAX_LATITUDE {
        return Err(GridError::OutsideProjection {
            lat: p.lat(),
            lon: p.lon(),
        });
    }
    if p.lat() < 0.0 {
        return Err(GridError::SouthernHemisphere(p.lat()));
    }
    let s = series();
    let phi = p.lat().to_radians();
    let mut dlon = p.lon() - central_meridian(zone);
    if dlon < -180.0 {
        dlon += 360.0;
    } else if dlon >= 180.0 {
        dlon -= 360.0;
    }
    let lam = dlon.to_radians();

    let sin_phi = phi.sin();
    let t = (sin_phi.atanh() - s.e * (s.e * sin_phi).atanh()).sinh();
    let xi_p = t.atan2(lam.cos());
    let eta_p = (lam.sin() / (1.0 + t * t).sqrt()).atanh();

    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }
    let easting = FALSE_EASTING + K0 * s.a_rect * eta;
    let northing = K0 * s.a_rect * xi;
    UtmCoord::new(zone, easting, northing.max(0.0))
}

/// Inverse projection.
pub fn utm_to_geo(c: UtmCoord) -> Result<GeoPoint, GridError> {
    let s = series();
    let xi = c.northing() / (K0 * s.a_rect);
    let eta = (c.easting() - FALSE_EASTING) / (K0 * s.a_rect);

    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }
    let chi = (xi_p.sin() / eta_p.cosh()).asin();
    let mut phi = chi;
    for (j, d) in s.delta.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        phi += d * (k * chi).sin();
    }
    let dlon = eta_p.sinh().atan2(xi_p.cos()).to_degrees();
    let lat = phi.to_degrees();

    // Points more than a degree outside the zone wedge are not in this zone's band.
    if dlon.abs() > 4.0 || lat > MAX_LATITUDE + 0.5 {
        return Err(GridError::OutsideZone {
            zone: c.zone(),
            easting: c.easting(),
            northing: c.northing(),
        });
    }
    let mut lon = central_meridian(c.zone()) + dlon;
    if lon >= 180.0 {
        lon -= 360.0;
    } else if lon < -180.0 {
        lon += 360.0;
    }
    GeoPoint::new(lat.min(90.0), lon)
}

/// Metres spanned by one degree of longitude at a latitude.
pub fn meters_per_degree_lon(lat: f64) -> f64 {
    let f = 1.0 / GRS80_INV_F;
    let e2 = f * (2.0 - f);
    let phi = lat.to_radians();
    std::f64::consts::PI / 180.0 * GRS80_A * phi.cos() / (1.0 - e2 * phi.sin().powi(2)).sqrt()
}

/// Great-circle distance in metres on a sphere of mean Earth radius.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    const R: f64 = 6_371_008.8;
    let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
    let dp = p2 - p1;
    let dl = (b.lon() - a.lon()).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * R * h.sqrt().min(1.0).asin()
}
