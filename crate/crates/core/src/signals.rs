//! Traffic signals per segment as an alternative spacing metric.
//!
//! A signal belongs to a segment when it lies within `buffer_m` of the
//! segment's path. Counts are then fitted with a geometric distribution on
//! `{0, 1, 2, ...}`, whose maximum-likelihood parameter is `1 / (1 + mean)`.

use std::collections::{HashMap, HashSet};
use std::io::Read;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{great_circle_distance, point_to_path_distance, GeoPoint, Path, EARTH_RADIUS_M};
use crate::segmenter::SegmentTable;
use crate::stats::{scheme_weight, weighted_mean, LoadMap, WeightedSpacings, WeightingScheme};

pub const DEFAULT_BUFFER_M: f64 = 5.5;

/// Grid cell edge, in degrees (roughly 220 m of latitude).
const CELL_DEG: f64 = 0.002;

#[derive(Clone, Debug, PartialEq)]
pub struct SignalSet {
    pub source: String,
    points: Vec<GeoPoint>,
}

impl SignalSet {
    /// Validates coordinates and drops exact duplicates, keeping first-seen order.
    pub fn new(source: impl Into<String>, points: impl IntoIterator<Item = GeoPoint>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for p in points {
            if !p.is_valid() {
                return Err(Error::InvalidCoordinate { lat: p.lat, lon: p.lon });
            }
            if seen.insert((p.lat.to_bits(), p.lon.to_bits())) {
                kept.push(p);
            }
        }
        Ok(SignalSet {
            source: source.into(),
            points: kept,
        })
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    /// Reads delimited text with `lat` and `lon` columns (`latitude` and
    /// `longitude` are accepted too); other columns are ignored.
    pub fn from_reader(source: impl Into<String>, reader: impl Read) -> Result<Self> {
        let source = source.into();
        let csv_err = |message: String| Error::Csv {
            file: source.clone(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
        let find = |names: &[&str]| {
            headers.iter().position(|h| {
                let h = h.trim_start_matches('\u{feff}');
                names.iter().any(|n| h.eq_ignore_ascii_case(n))
            })
        };
        let lat_col = find(&["lat", "latitude"]).ok_or_else(|| csv_err("no lat column".into()))?;
        let lon_col = find(&["lon", "longitude", "lng"]).ok_or_else(|| csv_err("no lon column".into()))?;
        let mut points = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(e.to_string()))?;
            let parse = |col: usize| -> Result<f64> {
                rec.get(col)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| csv_err(format!("row {}: bad coordinate", line + 2)))
            };
            points.push(GeoPoint {
                lat: parse(lat_col)?,
                lon: parse(lon_col)?,
            });
        }
        SignalSet::new(source, points)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(path.display().to_string(), file)
    }
}

/// Uniform lat/lon grid over signal points.
struct SignalGrid {
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl SignalGrid {
    fn build(points: &[GeoPoint]) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p.lat, p.lon)).or_default().push(i);
        }
        SignalGrid { cells }
    }

    fn cell(lat: f64, lon: f64) -> (i64, i64) {
        ((lat / CELL_DEG).floor() as i64, (lon / CELL_DEG).floor() as i64)
    }

    /// Indices of points that may lie within `buffer_m` of `path`. The box
    /// around each edge is widened by the buffer at the smallest longitude
    /// scale it spans, plus the poleward bulge of the arc, so no point within
    /// the buffer is missed.
    fn candidates(&self, path: &Path, buffer_m: f64, out: &mut Vec<usize>) {
        out.clear();
        let deg_per_m = 180.0 / (std::f64::consts::PI * EARTH_RADIUS_M);
        let pad_lat = buffer_m * deg_per_m * 1.01;
        for w in path.points().windows(2) {
            let end_lat = w[0].lat.abs().max(w[1].lat.abs()).min(89.9);
            let arc = great_circle_distance(w[0], w[1]) / EARTH_RADIUS_M;
            let bulge = (arc * arc * end_lat.to_radians().tan() / 4.0).to_degrees();
            let pad_lat = pad_lat + bulge;
            let lat_lo = w[0].lat.min(w[1].lat) - pad_lat;
            let lat_hi = w[0].lat.max(w[1].lat) + pad_lat;
            let max_abs_lat = lat_lo.abs().max(lat_hi.abs()).min(89.9);
            let pad_lon = pad_lat / max_abs_lat.to_radians().cos();
            let lon_lo = w[0].lon.min(w[1].lon) - pad_lon;
            let lon_hi = w[0].lon.max(w[1].lon) + pad_lon;
            let (r0, c0) = Self::cell(lat_lo, lon_lo);
            let (r1, c1) = Self::cell(lat_hi, lon_hi);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if let Some(ids) = self.cells.get(&(r, c)) {
                        out.extend_from_slice(ids);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalCount {
    pub segment_id: String,
    pub stop_id1: String,
    pub stop_id2: String,
    pub signal_count: u64,
}

/// Signal counts per unique segment, linked to the table they came from.
#[derive(Clone, Debug)]
pub struct SignalCountTable<'a> {
    pub table: &'a SegmentTable,
    pub buffer_m: f64,
    /// Ordered by segment_id, like [`SegmentTable::segment_groups`].
    pub counts: Vec<SignalCount>,
}

impl SignalCountTable<'_> {
    /// Count weights under a scheme, as spacing-like pairs.
    pub fn weighted_counts(&self, scheme: WeightingScheme, loads: Option<&LoadMap>) -> Result<WeightedSpacings> {
        let groups = self.table.segment_groups();
        let mut pairs = Vec::with_capacity(groups.len());
        let mut missing = 0;
        for (group, count) in groups.iter().zip(&self.counts) {
            debug_assert_eq!(group.segment_id, count.segment_id);
            let w = scheme_weight(group, scheme, loads)?.unwrap_or_else(|| {
                missing += 1;
                0.0
            });
            pairs.push((count.signal_count as f64, w));
        }
        let mut ws = WeightedSpacings::from_pairs(scheme, pairs);
        for (p, c) in ws.pairs.iter_mut().zip(&self.counts) {
            p.segment_id = c.segment_id.clone();
        }
        ws.missing_loads = missing;
        Ok(ws)
    }
}

fn check_buffer(buffer_m: f64) -> Result<()> {
    if buffer_m > 0.0 && buffer_m.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "buffer must be positive, got {buffer_m}"
        )))
    }
}

/// Counts signals within `buffer_m` of each segment path using a grid index.
pub fn signals_per_segment<'a>(
    table: &'a SegmentTable,
    signals: &SignalSet,
    buffer_m: f64,
) -> Result<SignalCountTable<'a>> {
    check_buffer(buffer_m)?;
    let grid = SignalGrid::build(signals.points());
    let mut candidates = Vec::new();
    let counts = table
        .segment_groups()
        .into_iter()
        .map(|g| {
            grid.candidates(g.path, buffer_m, &mut candidates);
            let n = candidates
                .iter()
                .filter(|&&i| point_to_path_distance(g.path, signals.points()[i]) <= buffer_m)
                .count();
            SignalCount {
                segment_id: g.segment_id.to_string(),
                stop_id1: g.stop_id1.to_string(),
                stop_id2: g.stop_id2.to_string(),
                signal_count: n as u64,
            }
        })
        .collect();
    Ok(SignalCountTable {
        table,
        buffer_m,
        counts,
    })
}

/// All-pairs reference for [`signals_per_segment`].
pub fn signals_per_segment_brute_force<'a>(
    table: &'a SegmentTable,
    signals: &SignalSet,
    buffer_m: f64,
) -> Result<SignalCountTable<'a>> {
    check_buffer(buffer_m)?;
    let counts = table
        .segment_groups()
        .into_iter()
        .map(|g| SignalCount {
            segment_id: g.segment_id.to_string(),
            stop_id1: g.stop_id1.to_string(),
            stop_id2: g.stop_id2.to_string(),
            signal_count: signals
                .points()
                .iter()
                .filter(|&&q| point_to_path_distance(g.path, q) <= buffer_m)
                .count() as u64,
        })
        .collect();
    Ok(SignalCountTable {
        table,
        buffer_m,
        counts,
    })
}

/// Geometric distribution on `{0, 1, ...}` with pmf `p (1 - p)^k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeometricFit {
    pub p_hat: f64,
    pub weighted_mean_count: f64,
    pub max_count: u64,
}

impl GeometricFit {
    pub fn from_mean(weighted_mean_count: f64, max_count: u64) -> Self {
        GeometricFit {
            p_hat: 1.0 / (1.0 + weighted_mean_count),
            weighted_mean_count,
            max_count,
        }
    }

    /// Fits weighted `(count, weight)` observations.
    pub fn from_weighted_counts(ws: &WeightedSpacings) -> Result<Self> {
        let mean = weighted_mean(ws)?;
        let max = ws.pairs.iter().map(|p| p.spacing_m).fold(0.0, f64::max);
        Ok(Self::from_mean(mean, max as u64))
    }

    pub fn pmf(&self, k: u64) -> f64 {
        geometric_pmf(self.p_hat, k)
    }

    /// Predicted probabilities for `k = 0..=max_count`.
    pub fn predicted(&self) -> Vec<(u64, f64)> {
        (0..=self.max_count).map(|k| (k, self.pmf(k))).collect()
    }
}

pub fn geometric_pmf(p: f64, k: u64) -> f64 {
    if k == 0 {
        p
    } else {
        p * (1.0 - p).powi(k as i32)
    }
}

/// Weighted log-likelihood `Σ w (ln p + k ln(1 - p))`.
pub fn geometric_log_likelihood(ws: &WeightedSpacings, p: f64) -> f64 {
    ws.pairs
        .iter()
        .filter(|o| o.weight > 0.0)
        .map(|o| {
            let tail = if o.spacing_m == 0.0 {
                0.0
            } else {
                o.spacing_m * (1.0 - p).ln()
            };
            o.weight * (p.ln() + tail)
        })
        .sum()
}

/// Maximum-likelihood geometric fit of the scheme-weighted counts.
pub fn fit_geometric_mle(
    counts: &SignalCountTable<'_>,
    scheme: WeightingScheme,
    loads: Option<&LoadMap>,
) -> Result<GeometricFit> {
    if counts.counts.is_empty() {
        return Err(Error::EmptyTable);
    }
    GeometricFit::from_weighted_counts(&counts.weighted_counts(scheme, loads)?)
}
