use serde::{Deserialize, Serialize};

use super::IndexError;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, IndexError> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), IndexError> {
        if (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon) {
            Ok(())
        } else {
            Err(IndexError::InvalidCoordinate { lat: self.lat, lon: self.lon })
        }
    }
}

/// Great-circle distance on a sphere of radius 6371 km.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> Result<f64, IndexError> {
    a.validate()?;
    b.validate()?;
    Ok(haversine_unchecked(a, b))
}

fn haversine_unchecked(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Geographic restriction on search results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GeoFilter {
    Radius { lat: f64, lon: f64, radius_km: f64 },
    /// Degrees. `west > east` describes a box crossing the antimeridian.
    BoundingBox { west: f64, south: f64, east: f64, north: f64 },
}

impl GeoFilter {
    pub fn validate(&self) -> Result<(), IndexError> {
        match *self {
            GeoFilter::Radius { lat, lon, radius_km } => {
                GeoPoint { lat, lon }.validate()?;
                if !(radius_km > 0.0 && radius_km.is_finite()) {
                    return Err(IndexError::InvalidQuery(format!("radius {radius_km} km must be positive")));
                }
            }
            GeoFilter::BoundingBox { west, south, east, north } => {
                GeoPoint { lat: south, lon: west }.validate()?;
                GeoPoint { lat: north, lon: east }.validate()?;
                if south > north {
                    return Err(IndexError::InvalidQuery(format!(
                        "bounding box south {south} exceeds north {north}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        match *self {
            GeoFilter::Radius { lat: clat, lon: clon, radius_km } => {
                haversine_unchecked(GeoPoint { lat: clat, lon: clon }, GeoPoint { lat, lon }) <= radius_km
            }
            GeoFilter::BoundingBox { west, south, east, north } => {
                let lat_ok = (south..=north).contains(&lat);
                let lon_ok = if west <= east {
                    (west..=east).contains(&lon)
                } else {
                    lon >= west || lon <= east
                };
                lat_ok && lon_ok
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn reference_distances() {
        assert_eq!(haversine_km(p(38.6, -90.2), p(38.6, -90.2)).unwrap(), 0.0);
        let quarter = haversine_km(p(0.0, 0.0), p(0.0, 90.0)).unwrap();
        assert_abs_diff_eq!(quarter, EARTH_RADIUS_KM * PI / 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(quarter, 10007.54, epsilon = 0.01);
        let poles = haversine_km(p(90.0, 0.0), p(-90.0, 0.0)).unwrap();
        assert_abs_diff_eq!(poles, EARTH_RADIUS_KM * PI, epsilon = 1e-9);
        assert_abs_diff_eq!(poles, 20015.09, epsilon = 0.01);
    }

    #[test]
    fn out_of_range_coordinates() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(haversine_km(GeoPoint { lat: 0.0, lon: 181.0 }, p(0.0, 0.0)).is_err());
    }

    #[test]
    fn radius_filter() {
        let f = GeoFilter::Radius { lat: 0.0, lon: 0.0, radius_km: 120.0 };
        f.validate().unwrap();
        assert!(f.contains(0.0, 1.0)); // ~111 km
        assert!(!f.contains(0.0, 1.1)); // ~122 km
        assert!(GeoFilter::Radius { lat: 0.0, lon: 0.0, radius_km: 0.0 }.validate().is_err());
    }

    #[test]
    fn bounding_boxes() {
        let f = GeoFilter::BoundingBox { west: -91.0, south: 38.0, east: -90.0, north: 39.0 };
        assert!(f.contains(38.6, -90.2));
        assert!(!f.contains(38.6, -89.9));
        let wrap = GeoFilter::BoundingBox { west: 170.0, south: -10.0, east: -170.0, north: 10.0 };
        assert!(wrap.contains(0.0, 179.0));
        assert!(wrap.contains(0.0, -175.0));
        assert!(!wrap.contains(0.0, 0.0));
        assert!(GeoFilter::BoundingBox { west: 0.0, south: 5.0, east: 1.0, north: 4.0 }.validate().is_err());
    }

    #[test]
    fn filter_json_shape() {
        let f: GeoFilter =
            serde_json::from_str(r#"{"type":"bounding_box","west":-1,"south":-1,"east":1,"north":1}"#).unwrap();
        assert!(f.contains(0.0, 0.0));
        let r: GeoFilter = serde_json::from_str(r#"{"type":"radius","lat":0,"lon":0,"radius_km":5}"#).unwrap();
        assert!(matches!(r, GeoFilter::Radius { .. }));
    }
}
