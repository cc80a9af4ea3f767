//! Splits trip shapes into inter-stop segments and tallies traversals.
//!
//! Each active bus trip's stops are snapped, in order, onto its shape. The
//! shape between consecutive snapped stops becomes a segment path, so any
//! part of the shape before the first stop or after the last one (deadhead)
//! never lands in a segment. Identical paths between the same stop pair are
//! merged across trips and shapes, and traversals are summed per
//! (segment, route, direction).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use serde::Serialize;

use crate::calendar::active_services;
use crate::error::{Error, Result};
use crate::feed::{FeedBundle, ShapePoint, StopTime, Trip};
use crate::geometry::{
    project_point_onto_path, project_point_within, substring_path, GeoPoint, Path, PathPosition,
};

/// Snap residual above which a stop is reported.
pub const SNAP_WARNING_M: f64 = 100.0;
/// Half-width of the search window around a shape_dist_traveled seed.
pub const SEED_WINDOW_M: f64 = 200.0;
/// Same-stop segments shorter than this are treated as duplicated stop_times.
pub const DEGENERATE_LENGTH_M: f64 = 1.0;
/// Paths whose lengths differ by this much or more are distinct segments.
pub const IDENTITY_LENGTH_TOLERANCE_M: f64 = 1.0;
const COORD_SCALE: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub segment_id: String,
    pub stop_id1: String,
    pub stop_id2: String,
    pub path: Path,
    pub spacing_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRow {
    pub segment_id: String,
    pub stop_id1: String,
    pub stop_id2: String,
    pub route_id: String,
    pub direction_id: u8,
    pub traversals: u64,
    pub distance_m: f64,
    pub path: Path,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SegmentDiagnostics {
    /// Trips that had no usable shape and got straight stop-to-stop paths.
    pub straight_line_trips: Vec<String>,
    /// Active trips with fewer than two stop_times.
    pub skipped_trips: Vec<String>,
    /// Same-stop zero-length pairs dropped (counted per trip).
    pub degenerate_pairs: usize,
    /// Stops snapped further than [`SNAP_WARNING_M`] from their shape.
    pub snap_warnings: Vec<SnapWarning>,
}

/// One (segment, route, direction) table for a measurement day.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentTable {
    pub feed_id: String,
    pub measurement_date: NaiveDate,
    pub rows: Vec<SegmentRow>,
    pub diagnostics: SegmentDiagnostics,
}

/// Rows sharing a segment_id, rolled up.
#[derive(Clone, Debug)]
pub struct SegmentGroup<'a> {
    pub segment_id: &'a str,
    pub stop_id1: &'a str,
    pub stop_id2: &'a str,
    pub distance_m: f64,
    pub path: &'a Path,
    pub route_ids: BTreeSet<&'a str>,
    pub traversals: u64,
}

impl SegmentTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total_traversals(&self) -> u64 {
        self.rows.iter().map(|r| r.traversals).sum()
    }

    /// Unique segments, ordered by segment_id.
    pub fn segment_groups(&self) -> Vec<SegmentGroup<'_>> {
        let mut groups: BTreeMap<&str, SegmentGroup<'_>> = BTreeMap::new();
        for row in &self.rows {
            let g = groups.entry(&row.segment_id).or_insert_with(|| SegmentGroup {
                segment_id: &row.segment_id,
                stop_id1: &row.stop_id1,
                stop_id2: &row.stop_id2,
                distance_m: row.distance_m,
                path: &row.path,
                route_ids: BTreeSet::new(),
                traversals: 0,
            });
            g.route_ids.insert(&row.route_id);
            g.traversals += row.traversals;
        }
        groups.into_values().collect()
    }

    pub fn route_ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.route_id.as_str()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SnapWarning {
    pub stop_index: usize,
    pub offset_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapResult {
    pub positions: Vec<PathPosition>,
    pub warnings: Vec<SnapWarning>,
}

/// Snaps stops onto a shape in order; each search starts where the previous
/// stop landed, so positions never move backwards.
pub fn snap_trip_stops(shape: &Path, stops: &[GeoPoint]) -> SnapResult {
    snap_trip_stops_seeded(shape, stops, None)
}

/// [`snap_trip_stops`] with optional per-stop distance estimates in meters.
/// A seeded stop is searched within [`SEED_WINDOW_M`] of its estimate and
/// falls back to the unseeded search when that lands too far away.
pub fn snap_trip_stops_seeded(shape: &Path, stops: &[GeoPoint], seeds: Option<&[f64]>) -> SnapResult {
    let mut positions = Vec::with_capacity(stops.len());
    let mut warnings = Vec::new();
    let mut prev = 0.0;
    for (i, &q) in stops.iter().enumerate() {
        let free = project_point_onto_path(shape, q, prev);
        let pos = match seeds.map(|s| s[i]) {
            Some(seed) => {
                let lo = prev.max(seed - SEED_WINDOW_M);
                let hi = prev.max(seed + SEED_WINDOW_M);
                let seeded = project_point_within(shape, q, lo, hi);
                if seeded.offset_m <= SNAP_WARNING_M || seeded.offset_m <= free.offset_m {
                    seeded
                } else {
                    free
                }
            }
            None => free,
        };
        if pos.offset_m > SNAP_WARNING_M {
            warnings.push(SnapWarning {
                stop_index: i,
                offset_m: pos.offset_m,
            });
        }
        prev = pos.distance_along_m;
        positions.push(pos);
    }
    SnapResult {
        positions,
        warnings,
    }
}

/// Converts stop shape_dist_traveled values to meters along `shape`, when
/// both stops and shape points carry monotone values.
fn seed_distances(stop_times: &[StopTime], points: &[ShapePoint], shape: &Path) -> Option<Vec<f64>> {
    let shape_dist: Vec<f64> = points.iter().map(|p| p.shape_dist_traveled).collect::<Option<_>>()?;
    let stop_dist: Vec<f64> = stop_times
        .iter()
        .map(|s| s.shape_dist_traveled)
        .collect::<Option<_>>()?;
    let monotone = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
    if !monotone(&shape_dist) || !monotone(&stop_dist) {
        return None;
    }
    let cum = shape.cumulative_m();
    Some(
        stop_dist
            .iter()
            .map(|&d| {
                let i = shape_dist.partition_point(|&s| s < d);
                if i == 0 {
                    return 0.0;
                }
                if i >= shape_dist.len() {
                    return shape.length_m();
                }
                let (s0, s1) = (shape_dist[i - 1], shape_dist[i]);
                let t = if s1 > s0 { (d - s0) / (s1 - s0) } else { 0.0 };
                cum[i - 1] + t * (cum[i] - cum[i - 1])
            })
            .collect(),
    )
}

fn rounded_coords(path: &Path) -> Vec<(i64, i64)> {
    path.points()
        .iter()
        .map(|p| ((p.lat * COORD_SCALE).round() as i64, (p.lon * COORD_SCALE).round() as i64))
        .collect()
}

/// Assigns segment ids to paths between stop pairs. Two paths are the same
/// segment when their coordinates agree at 6 decimals and their lengths
/// differ by less than [`IDENTITY_LENGTH_TOLERANCE_M`].
#[derive(Debug, Default)]
pub struct SegmentRegistry {
    segments: Vec<Segment>,
    fingerprints: Vec<Vec<(i64, i64)>>,
    by_pair: HashMap<(String, String), Vec<usize>>,
}

impl SegmentRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the matching segment, registering a new one if needed.
    pub fn assign(&mut self, stop_id1: &str, stop_id2: &str, path: Path) -> usize {
        let key = (stop_id1.to_string(), stop_id2.to_string());
        let fingerprint = rounded_coords(&path);
        let length = path.length_m();
        let candidates = self.by_pair.entry(key).or_default();
        for &idx in candidates.iter() {
            if self.fingerprints[idx] == fingerprint
                && (self.segments[idx].spacing_m - length).abs() < IDENTITY_LENGTH_TOLERANCE_M
            {
                return idx;
            }
        }
        let base = format!("{stop_id1}-{stop_id2}");
        let segment_id = match candidates.len() {
            0 => base,
            n => format!("{base}-{}", n + 1),
        };
        let idx = self.segments.len();
        candidates.push(idx);
        self.fingerprints.push(fingerprint);
        self.segments.push(Segment {
            segment_id,
            stop_id1: stop_id1.to_string(),
            stop_id2: stop_id2.to_string(),
            spacing_m: length,
            path,
        });
        idx
    }

    pub fn get(&self, idx: usize) -> &Segment {
        &self.segments[idx]
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }
}

/// Segment ids for candidate paths sharing one stop pair, in input order.
pub fn aggregate_segment_identity(stop_id1: &str, stop_id2: &str, candidates: &[Path]) -> Vec<String> {
    let mut registry = SegmentRegistry::new();
    candidates
        .iter()
        .map(|p| {
            let idx = registry.assign(stop_id1, stop_id2, p.clone());
            registry.get(idx).segment_id.clone()
        })
        .collect()
}

/// How one trip was cut into stop-to-stop paths.
#[derive(Clone, Debug, PartialEq)]
pub struct TripSegmentation {
    pub trip_id: String,
    pub stop_ids: Vec<String>,
    /// Snapped stop positions; `None` when the trip had no usable shape.
    pub positions: Option<Vec<PathPosition>>,
    pub warnings: Vec<SnapWarning>,
    /// One path per consecutive stop pair.
    pub paths: Vec<Path>,
}

fn shape_path(feed: &FeedBundle, shape_id: &str) -> Option<Path> {
    let pts = feed.shape_points(shape_id);
    if pts.len() < 2 {
        return None;
    }
    Some(Path::from_valid(pts.iter().map(ShapePoint::point).collect()))
}

fn segment_trip_with(feed: &FeedBundle, trip: &Trip, shape: Option<&Path>) -> Option<TripSegmentation> {
    let stop_times = feed.stop_times_for(&trip.trip_id);
    if stop_times.len() < 2 {
        return None;
    }
    let stop_ids: Vec<String> = stop_times.iter().map(|s| s.stop_id.clone()).collect();
    let points: Vec<GeoPoint> = stop_times
        .iter()
        .map(|s| feed.stop(&s.stop_id).expect("stop_times reference known stops").point())
        .collect();

    let Some(shape) = shape else {
        let paths = points
            .windows(2)
            .map(|w| Path::from_valid(vec![w[0], w[1]]))
            .collect();
        return Some(TripSegmentation {
            trip_id: trip.trip_id.clone(),
            stop_ids,
            positions: None,
            warnings: Vec::new(),
            paths,
        });
    };

    let shape_id = trip.shape_id.as_deref().unwrap_or_default();
    let seeds = seed_distances(stop_times, feed.shape_points(shape_id), shape);
    let snapped = snap_trip_stops_seeded(shape, &points, seeds.as_deref());
    let paths = snapped
        .positions
        .windows(2)
        .map(|w| {
            substring_path(shape, w[0].distance_along_m, w[1].distance_along_m)
                .expect("snapped positions are ordered and on the shape")
        })
        .collect();
    Some(TripSegmentation {
        trip_id: trip.trip_id.clone(),
        stop_ids,
        positions: Some(snapped.positions),
        warnings: snapped.warnings,
        paths,
    })
}

/// Segmentation of a single trip, or `None` for unknown or too-short trips.
pub fn segment_trip(feed: &FeedBundle, trip_id: &str) -> Option<TripSegmentation> {
    let trip = feed.trip(trip_id)?;
    let shape = trip.shape_id.as_deref().and_then(|s| shape_path(feed, s));
    segment_trip_with(feed, trip, shape.as_ref())
}

/// Builds the segment table for the bus service running on `date`.
pub fn extract_segments(feed: &FeedBundle, date: NaiveDate) -> Result<SegmentTable> {
    let active = active_services(feed, date);
    let mut trips: Vec<&Trip> = feed
        .trips()
        .iter()
        .filter(|t| active.contains(&t.service_id))
        .filter(|t| feed.route(&t.route_id).is_some_and(|r| r.is_bus()))
        .collect();
    if trips.is_empty() {
        return Err(Error::NoServiceInfo);
    }
    trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));

    let mut diagnostics = SegmentDiagnostics::default();
    let mut registry = SegmentRegistry::new();
    let mut shapes: HashMap<&str, Option<Path>> = HashMap::new();
    // Trips sharing a shape and stop pattern snap identically.
    type PatternKey<'a> = (Option<&'a str>, Vec<&'a str>, Vec<Option<u64>>);
    // Segment index per stop pair (None when degenerate), degenerate count.
    type Pattern = Option<(Vec<Option<usize>>, usize)>;
    let mut patterns: HashMap<PatternKey<'_>, Pattern> = HashMap::new();
    let mut traversals: HashMap<(usize, &str, u8), u64> = HashMap::new();

    for trip in trips {
        let shape_id = trip.shape_id.as_deref();
        let shape = match shape_id {
            Some(id) => shapes.entry(id).or_insert_with(|| shape_path(feed, id)).as_ref(),
            None => None,
        };
        let stop_times = feed.stop_times_for(&trip.trip_id);
        let key: PatternKey<'_> = (
            shape.and(shape_id),
            stop_times.iter().map(|s| s.stop_id.as_str()).collect(),
            stop_times
                .iter()
                .map(|s| s.shape_dist_traveled.map(f64::to_bits))
                .collect(),
        );
        let pattern = patterns.entry(key).or_insert_with(|| {
            let seg = segment_trip_with(feed, trip, shape)?;
            let mut degenerate = 0;
            let ids = seg
                .paths
                .into_iter()
                .enumerate()
                .map(|(i, path)| {
                    let (s1, s2) = (&seg.stop_ids[i], &seg.stop_ids[i + 1]);
                    if s1 == s2 && path.length_m() < DEGENERATE_LENGTH_M {
                        degenerate += 1;
                        None
                    } else {
                        Some(registry.assign(s1, s2, path))
                    }
                })
                .collect();
            diagnostics.snap_warnings.extend(seg.warnings);
            Some((ids, degenerate))
        });
        let Some((ids, degenerate)) = pattern else {
            diagnostics.skipped_trips.push(trip.trip_id.clone());
            continue;
        };
        if shape.is_none() {
            diagnostics.straight_line_trips.push(trip.trip_id.clone());
        }
        diagnostics.degenerate_pairs += *degenerate;
        let departures = feed.trip_departures(&trip.trip_id);
        for idx in ids.iter().flatten() {
            *traversals
                .entry((*idx, trip.route_id.as_str(), trip.direction_id))
                .or_default() += departures;
        }
    }

    let mut rows: Vec<SegmentRow> = traversals
        .into_iter()
        .map(|((idx, route_id, direction_id), count)| {
            let seg = registry.get(idx);
            SegmentRow {
                segment_id: seg.segment_id.clone(),
                stop_id1: seg.stop_id1.clone(),
                stop_id2: seg.stop_id2.clone(),
                route_id: route_id.to_string(),
                direction_id,
                traversals: count,
                distance_m: seg.spacing_m,
                path: seg.path.clone(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.segment_id, &a.route_id, a.direction_id).cmp(&(&b.segment_id, &b.route_id, b.direction_id))
    });

    Ok(SegmentTable {
        feed_id: feed.id().to_string(),
        measurement_date: date,
        rows,
        diagnostics,
    })
}
