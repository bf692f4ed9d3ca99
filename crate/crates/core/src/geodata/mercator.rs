//! Exact spherical Web Mercator forward/inverse and tile-scheme ground
//! sample distance.

use crate::error::{Error, Result};

pub const EARTH_RADIUS: f64 = 6_378_137.0;
/// atan(sinh(pi)) in degrees; the projection's latitude cutoff.
pub const MERCATOR_MAX_LAT: f64 = 85.051_128_779_806_59;
/// Meters per pixel at the equator for zoom 0 with 256 px tiles.
pub const GSD_EQUATOR_Z0: f64 = 156_543.033_92;

/// Ground sample distance in meters per pixel at a latitude and zoom.
pub fn ground_sample_distance(lat_deg: f64, zoom: u32) -> f64 {
    GSD_EQUATOR_Z0 * lat_deg.to_radians().cos() / (1u64 << zoom) as f64
}

pub fn lonlat_to_mercator(lon_deg: f64, lat_deg: f64) -> (f64, f64) {
    let x = EARTH_RADIUS * lon_deg.to_radians();
    let phi = lat_deg.to_radians();
    let y = EARTH_RADIUS * (std::f64::consts::FRAC_PI_4 + phi / 2.0).tan().ln();
    (x, y)
}

pub fn mercator_to_lonlat(x: f64, y: f64) -> (f64, f64) {
    let lon = (x / EARTH_RADIUS).to_degrees();
    let lat = (2.0 * (y / EARTH_RADIUS).exp().atan() - std::f64::consts::FRAC_PI_2).to_degrees();
    (lon, lat)
}

pub fn check_latitude(lat_deg: f64) -> Result<()> {
    if lat_deg.abs() > MERCATOR_MAX_LAT {
        return Err(Error::LatitudeOutOfRange(lat_deg));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_roundtrip() {
        for (lon, lat) in [(0.0, 0.0), (-122.33, 47.61), (139.7, 35.7), (12.5, -80.0)] {
            let (x, y) = lonlat_to_mercator(lon, lat);
            let (lon2, lat2) = mercator_to_lonlat(x, y);
            assert!((lon - lon2).abs() < 1e-10);
            assert!((lat - lat2).abs() < 1e-10);
        }
    }

    #[test]
    fn gsd_halves_per_zoom_and_shrinks_with_latitude() {
        let z0 = ground_sample_distance(0.0, 0);
        assert_eq!(z0, GSD_EQUATOR_Z0);
        assert_eq!(ground_sample_distance(0.0, 5), z0 / 32.0);
        assert!(ground_sample_distance(60.0, 3) < ground_sample_distance(10.0, 3));
    }

    #[test]
    fn equator_gsd_at_zoom_20_matches_reference_scale() {
        // ~0.149 m/px at zoom 20 on the equator; a 256 px image covers
        // about 38.2 m.
        let gsd = ground_sample_distance(0.0, 20);
        assert!((gsd * 256.0 - 38.22).abs() < 0.01);
    }
}
