//! Weighted spacing statistics.
//!
//! Every statistic is computed from `(spacing, weight)` pairs at segment
//! granularity. The mean is `Σ wᵢ sᵢ / Σ wᵢ` and the distribution function
//! is `F(s) = Σ wᵢ 1[sᵢ ≤ s] / Σ wᵢ`; the weighting scheme decides `wᵢ`.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::BUSIEST_DAY_BASIS;
use crate::error::{Error, Result};
use crate::segmenter::{SegmentGroup, SegmentTable};

pub const DEFAULT_THRESHOLD_M: f64 = 3_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingScheme {
    Segment,
    Route,
    Traversal,
    Load,
}

impl WeightingScheme {
    pub const ALL: [WeightingScheme; 4] = [
        WeightingScheme::Segment,
        WeightingScheme::Route,
        WeightingScheme::Traversal,
        WeightingScheme::Load,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WeightingScheme::Segment => "segment",
            WeightingScheme::Route => "route",
            WeightingScheme::Traversal => "traversal",
            WeightingScheme::Load => "load",
        }
    }
}

impl fmt::Display for WeightingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightingScheme::ALL
            .into_iter()
            .find(|w| w.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown weighting scheme '{s}'")))
    }
}

/// Average passengers aboard per stop pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadMap {
    loads: HashMap<(String, String), f64>,
}

#[derive(Deserialize)]
struct LoadRecord {
    stop_id1: String,
    stop_id2: String,
    avg_load: f64,
}

impl LoadMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, stop_id1: &str, stop_id2: &str, avg_load: f64) -> Result<()> {
        if !(avg_load >= 0.0 && avg_load.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "load for {stop_id1}-{stop_id2} must be non-negative, got {avg_load}"
            )));
        }
        self.loads
            .insert((stop_id1.to_string(), stop_id2.to_string()), avg_load);
        Ok(())
    }

    pub fn get(&self, stop_id1: &str, stop_id2: &str) -> Option<f64> {
        self.loads
            .get(&(stop_id1.to_string(), stop_id2.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.loads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loads.is_empty()
    }

    /// Reads `stop_id1,stop_id2,avg_load` delimited text.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut map = LoadMap::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for rec in rdr.deserialize::<LoadRecord>() {
            let rec = rec.map_err(|e| Error::Csv {
                file: "load map".into(),
                message: e.to_string(),
            })?;
            map.insert(&rec.stop_id1, &rec.stop_id2, rec.avg_load)?;
        }
        Ok(map)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightedSpacing {
    pub segment_id: String,
    pub spacing_m: f64,
    pub weight: f64,
}

/// Spacings at or under the threshold with their scheme weights.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightedSpacings {
    pub scheme: WeightingScheme,
    pub threshold_m: f64,
    pub pairs: Vec<WeightedSpacing>,
    /// Share of pre-threshold weight removed by the threshold.
    pub excluded_share: f64,
    /// Segments given zero weight because the load map had no entry.
    pub missing_loads: usize,
}

impl WeightedSpacings {
    /// Wraps raw pairs without a threshold; used for custom metrics.
    pub fn from_pairs(scheme: WeightingScheme, pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        WeightedSpacings {
            scheme,
            threshold_m: f64::INFINITY,
            pairs: pairs
                .into_iter()
                .enumerate()
                .map(|(i, (spacing_m, weight))| WeightedSpacing {
                    segment_id: i.to_string(),
                    spacing_m,
                    weight,
                })
                .collect(),
            excluded_share: 0.0,
            missing_loads: 0,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.pairs.iter().map(|p| p.weight).sum()
    }
}

/// Weight of a segment group under a scheme; `None` when the load map has no
/// entry for it.
pub(crate) fn scheme_weight(
    group: &SegmentGroup<'_>,
    scheme: WeightingScheme,
    loads: Option<&LoadMap>,
) -> Result<Option<f64>> {
    Ok(match scheme {
        WeightingScheme::Segment => Some(1.0),
        WeightingScheme::Route => Some(group.route_ids.len() as f64),
        WeightingScheme::Traversal => Some(group.traversals as f64),
        WeightingScheme::Load => loads
            .ok_or(Error::LoadMapMissing)?
            .get(group.stop_id1, group.stop_id2),
    })
}

/// Per-segment weights for any per-segment metric.
pub fn build_weights_with_metric(
    table: &SegmentTable,
    scheme: WeightingScheme,
    threshold_m: f64,
    loads: Option<&LoadMap>,
    metric: impl Fn(&SegmentGroup<'_>) -> f64,
) -> Result<WeightedSpacings> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    if threshold_m.is_nan() || threshold_m <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "threshold must be positive, got {threshold_m}"
        )));
    }
    let mut pairs = Vec::new();
    let mut missing_loads = 0;
    let mut total = 0.0;
    let mut excluded = 0.0;
    let mut any_kept = false;
    for group in table.segment_groups() {
        let weight = match scheme_weight(&group, scheme, loads)? {
            Some(w) => w,
            None => {
                missing_loads += 1;
                0.0
            }
        };
        let spacing_m = metric(&group);
        total += weight;
        if spacing_m > threshold_m {
            excluded += weight;
            continue;
        }
        any_kept = true;
        pairs.push(WeightedSpacing {
            segment_id: group.segment_id.to_string(),
            spacing_m,
            weight,
        });
    }
    if !any_kept {
        return Err(Error::AllExcluded { threshold_m });
    }
    Ok(WeightedSpacings {
        scheme,
        threshold_m,
        pairs,
        excluded_share: if total > 0.0 { excluded / total } else { 0.0 },
        missing_loads,
    })
}

/// Spacing weights for a table; the spacing is the segment's path length.
pub fn build_weights(
    table: &SegmentTable,
    scheme: WeightingScheme,
    threshold_m: f64,
    loads: Option<&LoadMap>,
) -> Result<WeightedSpacings> {
    build_weights_with_metric(table, scheme, threshold_m, loads, |g| g.distance_m)
}

pub fn weighted_mean(ws: &WeightedSpacings) -> Result<f64> {
    let total = ws.total_weight();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let weighted: f64 = ws.pairs.iter().map(|p| p.weight * p.spacing_m).sum();
    Ok(weighted / total)
}

/// Right-continuous weighted step function.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ecdf {
    /// `(s, F(s))` at each distinct spacing, ascending.
    pub steps: Vec<(f64, f64)>,
}

impl Ecdf {
    pub fn eval(&self, s: f64) -> f64 {
        let idx = self.steps.partition_point(|&(x, _)| x <= s);
        if idx == 0 {
            0.0
        } else {
            self.steps[idx - 1].1
        }
    }
}

pub fn weighted_ecdf(ws: &WeightedSpacings) -> Result<Ecdf> {
    let total = ws.total_weight();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let mut sorted: Vec<(f64, f64)> = ws.pairs.iter().map(|p| (p.spacing_m, p.weight)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut steps: Vec<(f64, f64)> = Vec::new();
    let mut cumulative = 0.0;
    for (s, w) in sorted {
        cumulative += w;
        let f = (cumulative / total).min(1.0);
        match steps.last_mut() {
            Some(last) if last.0 == s => last.1 = f,
            _ => steps.push((s, f)),
        }
    }
    if let Some(last) = steps.last_mut() {
        last.1 = 1.0;
    }
    Ok(Ecdf { steps })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub weight_share: f64,
}

/// Weight shares in bins of `bin_width_m` from zero up to the threshold (or
/// the largest spacing when there is none). Bins are half-open except the
/// last, which also takes values on its upper edge.
pub fn histogram(ws: &WeightedSpacings, bin_width_m: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width_m > 0.0 && bin_width_m.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "bin width must be positive, got {bin_width_m}"
        )));
    }
    let total = ws.total_weight();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let max_spacing = ws.pairs.iter().map(|p| p.spacing_m).fold(0.0, f64::max);
    let upper = if ws.threshold_m.is_finite() {
        ws.threshold_m.max(max_spacing)
    } else {
        max_spacing
    };
    let n_bins = ((upper / bin_width_m).ceil() as usize).max(1);
    let mut weights = vec![0.0; n_bins];
    for p in &ws.pairs {
        let idx = ((p.spacing_m.max(0.0) / bin_width_m).floor() as usize).min(n_bins - 1);
        weights[idx] += p.weight;
    }
    Ok(weights
        .into_iter()
        .enumerate()
        .map(|(i, w)| HistogramBin {
            bin_start: i as f64 * bin_width_m,
            bin_end: (i + 1) as f64 * bin_width_m,
            weight_share: w / total,
        })
        .collect())
}

/// Weighted mean, weighted standard deviation and Kish effective sample size.
fn weighted_moments(ws: &WeightedSpacings) -> Result<(f64, f64, f64)> {
    let total = ws.total_weight();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let mean = weighted_mean(ws)?;
    let var = ws
        .pairs
        .iter()
        .map(|p| p.weight * (p.spacing_m - mean).powi(2))
        .sum::<f64>()
        / total;
    let sum_sq: f64 = ws.pairs.iter().map(|p| p.weight * p.weight).sum();
    Ok((mean, var.sqrt(), total * total / sum_sq))
}

/// Silverman's rule of thumb, `(4 / 3n)^(1/5) σ`, with the weighted standard
/// deviation and the effective sample size.
pub fn silverman_bandwidth(ws: &WeightedSpacings) -> Result<f64> {
    let (_, sd, n_eff) = weighted_moments(ws)?;
    let distinct = ws
        .pairs
        .iter()
        .filter(|p| p.weight > 0.0)
        .map(|p| p.spacing_m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    if distinct.1 <= distinct.0 || sd.is_nan() || sd <= 0.0 {
        return Err(Error::DegenerateData);
    }
    Ok((4.0 / (3.0 * n_eff)).powf(0.2) * sd)
}

/// Weighted Gaussian kernel density at each grid point.
pub fn kde(ws: &WeightedSpacings, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let h = silverman_bandwidth(ws)?;
    let total = ws.total_weight();
    let norm = 1.0 / (total * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            let density: f64 = ws
                .pairs
                .iter()
                .map(|p| {
                    let z = (x - p.spacing_m) / h;
                    p.weight * (-0.5 * z * z).exp()
                })
                .sum();
            (x, density * norm)
        })
        .collect())
}

/// Evenly spaced grid from four bandwidths below the smallest spacing to
/// four above the largest.
pub fn kde_grid(ws: &WeightedSpacings, points: usize) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(ws)?;
    let points = points.max(2);
    let lo = ws.pairs.iter().map(|p| p.spacing_m).fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = ws.pairs.iter().map(|p| p.spacing_m).fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| lo + i as f64 * step).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpacingSummary {
    pub feed_id: String,
    pub busiest_day: NaiveDate,
    pub busiest_day_basis: &'static str,
    pub threshold_m: f64,
    pub segment_weighted_mean_m: f64,
    pub route_weighted_mean_m: f64,
    pub traversal_weighted_mean_m: f64,
    pub load_weighted_mean_m: Option<f64>,
    pub n_routes: usize,
    /// Unique segments.
    pub n_segments: usize,
    /// (segment, route, direction) rows.
    pub n_rows: usize,
    pub n_traversals: u64,
    pub total_service_km: f64,
    pub excluded_share: Vec<(WeightingScheme, f64)>,
}

/// Feed-level roll-up. Service km ignores the threshold.
pub fn summarize(table: &SegmentTable, threshold_m: f64, loads: Option<&LoadMap>) -> Result<SpacingSummary> {
    let mut means = HashMap::new();
    let mut excluded_share = Vec::new();
    for scheme in WeightingScheme::ALL {
        if scheme == WeightingScheme::Load && loads.is_none() {
            continue;
        }
        let ws = build_weights(table, scheme, threshold_m, loads)?;
        means.insert(scheme, weighted_mean(&ws)?);
        excluded_share.push((scheme, ws.excluded_share));
    }
    let total_service_km = table
        .rows
        .iter()
        .map(|r| r.traversals as f64 * r.distance_m)
        .sum::<f64>()
        / 1000.0;
    Ok(SpacingSummary {
        feed_id: table.feed_id.clone(),
        busiest_day: table.measurement_date,
        busiest_day_basis: BUSIEST_DAY_BASIS,
        threshold_m,
        segment_weighted_mean_m: means[&WeightingScheme::Segment],
        route_weighted_mean_m: means[&WeightingScheme::Route],
        traversal_weighted_mean_m: means[&WeightingScheme::Traversal],
        load_weighted_mean_m: means.get(&WeightingScheme::Load).copied(),
        n_routes: table.route_ids().len(),
        n_segments: table.segment_groups().len(),
        n_rows: table.rows.len(),
        n_traversals: table.total_traversals(),
        total_service_km,
        excluded_share,
    })
}
