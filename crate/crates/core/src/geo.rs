//! Street-view sampling geometry.
//!
//! Candidate image locations are laid out on a square grid, each road point
//! is matched to its nearest candidate, and every matched location gets two
//! camera headings facing the building fronts on either side of the street.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in metres (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Default grid spacing for candidate locations.
pub const DEFAULT_SPACING_M: f64 = 20.0;

/// Default snapping radius: three quarters of the grid spacing.
pub const DEFAULT_MAX_SNAP_M: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(Error::invalid(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
            return Err(Error::invalid(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(GeoPoint { lat, lon })
    }

    /// Position on the unit sphere. Chord length between two such vectors is
    /// monotone in great-circle distance, so Euclidean nearest neighbours in
    /// this space are haversine nearest neighbours.
    fn unit_vector(&self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadPoint {
    pub id: String,
    pub point: GeoPoint,
    /// Degrees clockwise from north, in `[0, 360)`.
    pub bearing: f64,
}

/// Great-circle distance in metres.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial bearing of the great circle from `a` to `b`, in `[0, 360)`.
pub fn initial_bearing(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlon = (b.lon - a.lon).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    normalize_degrees(y.atan2(x).to_degrees())
}

fn normalize_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

fn meters_per_degree_lat() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

/// Axis-aligned grid covering `[sw, ne]` inclusively.
///
/// Latitude steps are `spacing_m` converted at the meridian scale; longitude
/// steps use the scale at the bounding box's mid-latitude. Points are emitted
/// row by row from the south-west corner.
pub fn generate_grid(sw: GeoPoint, ne: GeoPoint, spacing_m: f64) -> Result<Vec<GeoPoint>> {
    if !(spacing_m.is_finite() && spacing_m > 0.0) {
        return Err(Error::invalid(format!("grid spacing must be positive, got {spacing_m}")));
    }
    if sw.lat > ne.lat || sw.lon > ne.lon {
        return Err(Error::invalid(
            "bounding box corners must be ordered (south-west, north-east)",
        ));
    }
    let dlat = spacing_m / meters_per_degree_lat();
    let mid_lat = 0.5 * (sw.lat + ne.lat);
    let cos_mid = mid_lat.to_radians().cos().max(1e-12);
    let dlon = dlat / cos_mid;

    let steps = |extent: f64, step: f64| -> usize {
        // the tolerance absorbs round-off when the extent is an exact multiple
        (extent / step + 1e-9).floor() as usize
    };
    let rows = steps(ne.lat - sw.lat, dlat);
    let cols = steps(ne.lon - sw.lon, dlon);

    let mut out = Vec::with_capacity((rows + 1) * (cols + 1));
    for i in 0..=rows {
        let lat = sw.lat + i as f64 * dlat;
        for j in 0..=cols {
            out.push(GeoPoint {
                lat,
                lon: sw.lon + j as f64 * dlon,
            });
        }
    }
    Ok(out)
}

/// A road point matched to a candidate location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    /// Index into the candidate slice.
    pub candidate: usize,
    pub point: GeoPoint,
    pub distance_m: f64,
}

/// Assigns each road point its nearest candidate within `max_dist_m`.
///
/// Candidates are indexed in an R-tree on the unit sphere. Equidistant
/// candidates resolve to the lowest candidate index. Road points without a
/// candidate in range are absent from the result.
pub fn snap_to_roads(
    candidates: &[GeoPoint],
    roads: &[RoadPoint],
    max_dist_m: f64,
) -> Result<BTreeMap<String, Snap>> {
    if roads.is_empty() {
        return Err(Error::invalid("no road points to snap to"));
    }
    if !(max_dist_m >= 0.0) {
        return Err(Error::invalid(format!("max_dist_m must be non-negative, got {max_dist_m}")));
    }
    let tree = RTree::bulk_load(
        candidates
            .iter()
            .enumerate()
            .map(|(i, p)| GeomWithData::new(p.unit_vector(), i))
            .collect(),
    );
    let half_angle = (max_dist_m / (2.0 * EARTH_RADIUS_M)).min(std::f64::consts::FRAC_PI_2);
    let chord = 2.0 * half_angle.sin() * (1.0 + 1e-9) + 1e-12;
    let chord_sq = chord * chord;

    let mut out = BTreeMap::new();
    for road in roads {
        let best = tree
            .locate_within_distance(road.point.unit_vector(), chord_sq)
            .map(|g| (haversine_m(road.point, candidates[g.data]), g.data))
            .filter(|&(d, _)| d <= max_dist_m)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((distance_m, candidate)) = best {
            out.insert(
                road.id.clone(),
                Snap {
                    candidate,
                    point: candidates[candidate],
                    distance_m,
                },
            );
        }
    }
    Ok(out)
}

/// The two camera headings perpendicular to a street with the given bearing.
pub fn perpendicular_headings(bearing: f64) -> Result<(f64, f64)> {
    if !(bearing.is_finite() && (0.0..360.0).contains(&bearing)) {
        return Err(Error::invalid(format!("bearing {bearing} outside [0, 360)")));
    }
    Ok((
        normalize_degrees(bearing + 90.0),
        normalize_degrees(bearing + 270.0),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dedup {
    pub images: BTreeSet<String>,
    /// Fraction of road points that received an image.
    pub coverage: f64,
}

/// Collapses road-point → image assignments into the unique image set.
/// `None` marks a road point without an image.
pub fn dedupe_images(assignments: &BTreeMap<String, Option<String>>) -> Dedup {
    let images: BTreeSet<String> = assignments.values().flatten().cloned().collect();
    let assigned = assignments.values().filter(|v| v.is_some()).count();
    let coverage = if assignments.is_empty() {
        0.0
    } else {
        assigned as f64 / assignments.len() as f64
    };
    Dedup { images, coverage }
}

/// Fills missing bearings from neighbouring points in sequence order.
/// Interior points use the segment between their two neighbours; endpoints
/// use their single neighbour. An isolated point gets bearing 0.
pub fn fill_bearings(points: &[(String, GeoPoint, Option<f64>)]) -> Vec<RoadPoint> {
    let n = points.len();
    points
        .iter()
        .enumerate()
        .map(|(i, (id, point, bearing))| {
            let bearing = match bearing {
                Some(b) => normalize_degrees(*b),
                None if n < 2 => 0.0,
                None => {
                    let from = i.saturating_sub(1);
                    let to = (i + 1).min(n - 1);
                    initial_bearing(points[from].1, points[to].1)
                }
            };
            RoadPoint {
                id: id.clone(),
                point: *point,
                bearing,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedLocation {
    pub road: RoadPoint,
    pub image_point: GeoPoint,
    pub headings: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub locations: Vec<PlannedLocation>,
    pub spacing_m: f64,
}

impl SamplePlan {
    /// Builds the plan for every road point that received a candidate.
    pub fn from_snaps(roads: &[RoadPoint], snaps: &BTreeMap<String, Snap>, spacing_m: f64) -> Result<Self> {
        let mut locations = Vec::with_capacity(snaps.len());
        for road in roads {
            if let Some(snap) = snaps.get(&road.id) {
                locations.push(PlannedLocation {
                    road: road.clone(),
                    image_point: snap.point,
                    headings: perpendicular_headings(road.bearing)?,
                });
            }
        }
        Ok(SamplePlan { locations, spacing_m })
    }

    /// Writes `road_id,lat,lon,heading_a,heading_b`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["road_id", "lat", "lon", "heading_a", "heading_b"])?;
        for loc in &self.locations {
            w.write_record([
                loc.road.id.clone(),
                loc.road.point.lat.to_string(),
                loc.road.point.lon.to_string(),
                loc.headings.0.to_string(),
                loc.headings.1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct RoadRow {
    id: String,
    lat: f64,
    lon: f64,
    #[serde(default)]
    bearing: Option<f64>,
}

/// Reads road points from CSV with header `id,lat,lon[,bearing]`.
pub fn read_roads<R: Read>(reader: R, source: &Path) -> Result<Vec<RoadPoint>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut raw = Vec::new();
    for (i, row) in rdr.deserialize::<RoadRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::parse(source, line, e.to_string()))?;
        let point = GeoPoint::new(row.lat, row.lon).map_err(|e| Error::parse(source, line, e.to_string()))?;
        if let Some(b) = row.bearing {
            if !(0.0..360.0).contains(&b) {
                return Err(Error::parse(source, line, format!("bearing {b} outside [0, 360)")));
            }
        }
        raw.push((row.id, point, row.bearing));
    }
    Ok(fill_bearings(&raw))
}
