//! Spherical-earth helpers.

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Metres per nautical mile.
pub const NM_M: f64 = 1_852.0;

/// Great-circle distance in metres between two `(lat, lon)` points in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = (lat2 - lat1) / 2.0;
    let dlon = (lon2 - lon1) / 2.0;
    let h = dlat.sin().powi(2) + lat1.cos() * lat2.cos() * dlon.sin().powi(2);
    // clamp guards asin against h drifting past 1 for antipodes
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Signed smallest rotation from `from` to `to`, in degrees within `(-180, 180]`.
pub fn course_delta_deg(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Advance a position by `distance_m` along `bearing_deg` using a local
/// tangent-plane step. Only meant for short steps.
pub fn step_position(lat: f64, lon: f64, bearing_deg: f64, distance_m: f64) -> (f64, f64) {
    let b = bearing_deg.to_radians();
    let dnorth = distance_m * b.cos();
    let deast = distance_m * b.sin();
    let dlat = (dnorth / EARTH_RADIUS_M).to_degrees();
    let coslat = lat.to_radians().cos().max(1e-6);
    let dlon = (deast / (EARTH_RADIUS_M * coslat)).to_degrees();
    let lat2 = (lat + dlat).clamp(-90.0, 90.0);
    let mut lon2 = lon + dlon;
    if lon2 > 180.0 {
        lon2 -= 360.0;
    } else if lon2 < -180.0 {
        lon2 += 360.0;
    }
    (lat2, lon2)
}
