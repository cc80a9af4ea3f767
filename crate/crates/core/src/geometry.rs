//! Spherical-earth geometry over WGS84 longitude/latitude.
//!
//! Distances use the haversine formula on a sphere of radius
//! [`EARTH_RADIUS_M`]. Path edges are great-circle arcs: points between two
//! vertices are interpolated along the arc, so a position `d` meters along
//! a path really is `d` meters from its start, and point-to-edge distances
//! are measured to the arc itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Positions closer than this to a vertex are treated as the vertex.
const VERTEX_EPS_M: f64 = 1e-6;

pub(crate) const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::InvalidCoordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    fn to_unit(self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }

    fn from_unit(v: [f64; 3]) -> Self {
        let lat = v[2].atan2((v[0] * v[0] + v[1] * v[1]).sqrt());
        let lon = v[1].atan2(v[0]);
        GeoPoint {
            lat: lat.to_degrees(),
            lon: lon.to_degrees(),
        }
    }
}

/// Haversine distance in meters.
pub fn great_circle_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Point at fraction `t` of the great-circle arc from `a` to `b`.
pub fn interpolate(a: GeoPoint, b: GeoPoint, t: f64) -> GeoPoint {
    if t <= 0.0 {
        return a;
    }
    if t >= 1.0 {
        return b;
    }
    let omega = great_circle_distance(a, b) / EARTH_RADIUS_M;
    if omega < 1e-12 {
        return GeoPoint {
            lat: a.lat + t * (b.lat - a.lat),
            lon: a.lon + t * (b.lon - a.lon),
        };
    }
    let (ua, ub) = (a.to_unit(), b.to_unit());
    let sin_omega = omega.sin();
    let ka = ((1.0 - t) * omega).sin() / sin_omega;
    let kb = (t * omega).sin() / sin_omega;
    GeoPoint::from_unit([
        ka * ua[0] + kb * ub[0],
        ka * ua[1] + kb * ub[1],
        ka * ua[2] + kb * ub[2],
    ])
}

fn dot(u: [f64; 3], v: [f64; 3]) -> f64 {
    u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
}

fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

/// Closest point to `q` on the arc a-b, restricted to arc fractions in
/// `[lo, hi]`. Returns the fraction and the distance in meters.
fn closest_on_arc(a: GeoPoint, b: GeoPoint, q: GeoPoint, lo: f64, hi: f64) -> (f64, f64) {
    let omega = great_circle_distance(a, b) / EARTH_RADIUS_M;
    if omega < 1e-12 {
        return (lo, great_circle_distance(q, a));
    }
    let (ua, ub, uq) = (a.to_unit(), b.to_unit(), q.to_unit());
    let n = cross(ua, ub);
    let n_len = dot(n, n).sqrt();
    let n = [n[0] / n_len, n[1] / n_len, n[2] / n_len];
    let h = dot(uq, n);
    let qp = [uq[0] - h * n[0], uq[1] - h * n[1], uq[2] - h * n[2]];
    let along = dot(cross(ua, qp), n).atan2(dot(ua, qp));
    let t = (along / omega).clamp(0.0, 1.0).clamp(lo, hi);
    (t, great_circle_distance(q, interpolate(a, b, t)))
}

/// An ordered polyline with cumulative great-circle distances.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    points: Vec<GeoPoint>,
    cumulative_m: Vec<f64>,
}

impl Path {
    pub fn new(points: Vec<GeoPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::PathTooShort(points.len()));
        }
        if let Some(bad) = points.iter().find(|p| !p.is_valid()) {
            return Err(Error::InvalidCoordinate {
                lat: bad.lat,
                lon: bad.lon,
            });
        }
        Ok(Self::from_valid(points))
    }

    pub(crate) fn from_valid(points: Vec<GeoPoint>) -> Self {
        debug_assert!(points.len() >= 2);
        let mut cumulative_m = Vec::with_capacity(points.len());
        let mut total = 0.0;
        cumulative_m.push(0.0);
        for w in points.windows(2) {
            total += great_circle_distance(w[0], w[1]);
            cumulative_m.push(total);
        }
        Path {
            points,
            cumulative_m,
        }
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn cumulative_m(&self) -> &[f64] {
        &self.cumulative_m
    }

    pub fn length_m(&self) -> f64 {
        *self.cumulative_m.last().unwrap()
    }

    pub fn first(&self) -> GeoPoint {
        self.points[0]
    }

    pub fn last(&self) -> GeoPoint {
        *self.points.last().unwrap()
    }

    fn edge_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of the edge containing `distance_m`; the last edge for the end.
    fn edge_at(&self, distance_m: f64) -> usize {
        let idx = self.cumulative_m.partition_point(|&c| c <= distance_m);
        idx.saturating_sub(1).min(self.edge_count() - 1)
    }

    /// Point `distance_m` along the path, clamped to its ends. Vertices are
    /// returned bit-exactly when `distance_m` equals their cumulative distance.
    pub fn point_at(&self, distance_m: f64) -> GeoPoint {
        if distance_m <= 0.0 {
            return self.first();
        }
        if distance_m >= self.length_m() {
            return self.last();
        }
        let i = self.edge_at(distance_m);
        let edge_len = self.cumulative_m[i + 1] - self.cumulative_m[i];
        if edge_len <= 0.0 {
            return self.points[i];
        }
        let t = (distance_m - self.cumulative_m[i]) / edge_len;
        interpolate(self.points[i], self.points[i + 1], t)
    }
}

pub fn path_length(p: &Path) -> f64 {
    p.length_m()
}

/// Where a point lands on a path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathPosition {
    pub segment_index: usize,
    pub fraction: f64,
    pub distance_along_m: f64,
    /// Distance from the query point to the snapped position.
    pub offset_m: f64,
}

/// Projects `q` onto the closest position of `p` that lies at least
/// `min_distance_along_m` along it. Ties go to the earlier position.
pub fn project_point_onto_path(p: &Path, q: GeoPoint, min_distance_along_m: f64) -> PathPosition {
    project_point_within(p, q, min_distance_along_m, p.length_m())
}

/// Like [`project_point_onto_path`] but also bounded above by `max_m`.
pub(crate) fn project_point_within(p: &Path, q: GeoPoint, min_m: f64, max_m: f64) -> PathPosition {
    let total = p.length_m();
    let min_m = min_m.clamp(0.0, total);
    let max_m = max_m.clamp(min_m, total);
    let cum = &p.cumulative_m;

    let mut best: Option<PathPosition> = None;
    for i in 0..p.edge_count() {
        let (c0, c1) = (cum[i], cum[i + 1]);
        if c1 < min_m || c0 > max_m {
            continue;
        }
        let edge_len = c1 - c0;
        let (lo, hi) = if edge_len > 0.0 {
            (
                ((min_m - c0) / edge_len).clamp(0.0, 1.0),
                ((max_m - c0) / edge_len).clamp(0.0, 1.0),
            )
        } else {
            (0.0, 0.0)
        };
        let (mut t, offset) = closest_on_arc(p.points[i], p.points[i + 1], q, lo, hi);
        // Land exactly on a vertex when within VERTEX_EPS_M of it.
        let along = if t * edge_len < VERTEX_EPS_M && lo == 0.0 {
            t = 0.0;
            c0
        } else if (1.0 - t) * edge_len < VERTEX_EPS_M && hi == 1.0 {
            t = 1.0;
            c1
        } else {
            c0 + t * edge_len
        };
        if best.is_none_or(|b| offset < b.offset_m) {
            best = Some(PathPosition {
                segment_index: i,
                fraction: t,
                distance_along_m: along.clamp(min_m, max_m),
                offset_m: offset,
            });
        }
    }

    best.unwrap_or_else(|| {
        let last = p.edge_count() - 1;
        PathPosition {
            segment_index: last,
            fraction: 1.0,
            distance_along_m: total,
            offset_m: great_circle_distance(q, p.last()),
        }
    })
}

/// The part of `p` between `from_m` and `to_m` meters along it.
pub fn substring_path(p: &Path, from_m: f64, to_m: f64) -> Result<Path> {
    let total = p.length_m();
    let tol = 1e-9 * total.max(1.0);
    let valid = from_m.is_finite()
        && to_m.is_finite()
        && from_m >= -tol
        && to_m <= total + tol
        && from_m <= to_m;
    if !valid {
        return Err(Error::InvalidRange {
            from_m,
            to_m,
            length_m: total,
        });
    }
    let from_m = from_m.clamp(0.0, total);
    let to_m = to_m.clamp(from_m, total);

    let mut points = vec![p.point_at(from_m)];
    points.extend(
        p.points
            .iter()
            .zip(&p.cumulative_m)
            .filter(|(_, &c)| c > from_m + VERTEX_EPS_M && c < to_m - VERTEX_EPS_M)
            .map(|(pt, _)| *pt),
    );
    points.push(p.point_at(to_m));
    Ok(Path::from_valid(points))
}

/// Shortest distance from `q` to any edge of `p`, in meters.
pub fn point_to_path_distance(p: &Path, q: GeoPoint) -> f64 {
    p.points
        .windows(2)
        .map(|w| closest_on_arc(w[0], w[1], q, 0.0, 1.0).1)
        .fold(f64::INFINITY, f64::min)
}

/// Converts a north/east displacement in meters into a new point.
pub fn offset_by_meters(p: GeoPoint, north_m: f64, east_m: f64) -> GeoPoint {
    GeoPoint {
        lat: p.lat + north_m / METERS_PER_DEGREE,
        lon: p.lon + east_m / (METERS_PER_DEGREE * p.lat.to_radians().cos()),
    }
}
