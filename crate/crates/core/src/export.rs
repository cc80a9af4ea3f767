//! Output formats: delimited text, GeoJSON, and plot data.
//!
//! Formatting is fixed so repeated runs are byte-identical: coordinates
//! carry 6 decimals, meters 2, and shares/densities use fixed precision.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path as FsPath;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::Path;
use crate::segmenter::SegmentTable;
use crate::signals::{GeometricFit, SignalCountTable};
use crate::stats::{Ecdf, HistogramBin, SpacingSummary};

pub const SEGMENT_COLUMNS: [&str; 8] = [
    "segment_id",
    "stop_id1",
    "stop_id2",
    "route_id",
    "direction_id",
    "traversals",
    "distance",
    "geometry",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Delimited,
    GeoJson,
}

impl ExportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ExportFormat::Delimited => "csv",
            ExportFormat::GeoJson => "geojson",
        }
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv {
        file: "<output>".into(),
        message: e.to_string(),
    }
}

fn round_to(x: f64, decimals: usize) -> f64 {
    format!("{x:.decimals$}").parse().expect("formatted float parses")
}

/// `LINESTRING (lon lat, ...)` with 6-decimal coordinates.
pub fn wkt_linestring(path: &Path) -> String {
    let mut s = String::from("LINESTRING (");
    for (i, p) in path.points().iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        write!(s, "{:.6} {:.6}", p.lon, p.lat).unwrap();
    }
    s.push(')');
    s
}

pub fn write_segments_csv(table: &SegmentTable, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SEGMENT_COLUMNS).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record([
            r.segment_id.as_str(),
            &r.stop_id1,
            &r.stop_id2,
            &r.route_id,
            &r.direction_id.to_string(),
            &r.traversals.to_string(),
            &format!("{:.2}", r.distance_m),
            &wkt_linestring(&r.path),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(out_err)
}

pub fn segments_geojson(table: &SegmentTable) -> Value {
    let features: Vec<Value> = table
        .rows
        .iter()
        .map(|r| {
            let coords: Vec<Value> = r
                .path
                .points()
                .iter()
                .map(|p| json!([round_to(p.lon, 6), round_to(p.lat, 6)]))
                .collect();
            let mut props = Map::new();
            props.insert("segment_id".into(), json!(r.segment_id));
            props.insert("stop_id1".into(), json!(r.stop_id1));
            props.insert("stop_id2".into(), json!(r.stop_id2));
            props.insert("route_id".into(), json!(r.route_id));
            props.insert("direction_id".into(), json!(r.direction_id));
            props.insert("traversals".into(), json!(r.traversals));
            props.insert("distance".into(), json!(round_to(r.distance_m, 2)));
            json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": props,
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_segments_geojson(table: &SegmentTable, mut writer: impl Write) -> Result<()> {
    serde_json::to_writer(&mut writer, &segments_geojson(table))?;
    writer.write_all(b"\n").map_err(out_err)
}

/// Writes the table to `path`. Empty tables are refused before any file is
/// created.
pub fn export_segments(table: &SegmentTable, path: &FsPath, format: ExportFormat) -> Result<()> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut buf = Vec::new();
    match format {
        ExportFormat::Delimited => write_segments_csv(table, &mut buf)?,
        ExportFormat::GeoJson => write_segments_geojson(table, &mut buf)?,
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_ecdf_csv(ecdf: &Ecdf, mut w: impl Write) -> Result<()> {
    writeln!(w, "spacing_m,cumulative_share").map_err(out_err)?;
    for (s, f) in &ecdf.steps {
        writeln!(w, "{s:.2},{f:.9}").map_err(out_err)?;
    }
    Ok(())
}

pub fn write_histogram_csv(bins: &[HistogramBin], mut w: impl Write) -> Result<()> {
    writeln!(w, "bin_start,bin_end,weight_share").map_err(out_err)?;
    for b in bins {
        writeln!(w, "{:.2},{:.2},{:.9}", b.bin_start, b.bin_end, b.weight_share).map_err(out_err)?;
    }
    Ok(())
}

pub fn write_kde_csv(density: &[(f64, f64)], mut w: impl Write) -> Result<()> {
    writeln!(w, "spacing_m,density").map_err(out_err)?;
    for (s, d) in density {
        writeln!(w, "{s:.2},{d:.9e}").map_err(out_err)?;
    }
    Ok(())
}

pub fn summary_text(s: &SpacingSummary) -> String {
    let mut out = String::new();
    let threshold = if s.threshold_m.is_finite() {
        format!("{:.2}", s.threshold_m)
    } else {
        "none".to_string()
    };
    writeln!(out, "feed: {}", s.feed_id).unwrap();
    writeln!(out, "busiest_day: {} ({})", s.busiest_day, s.busiest_day_basis).unwrap();
    writeln!(out, "threshold_m: {threshold}").unwrap();
    writeln!(out, "segment_weighted_mean_m: {:.2}", s.segment_weighted_mean_m).unwrap();
    writeln!(out, "route_weighted_mean_m: {:.2}", s.route_weighted_mean_m).unwrap();
    writeln!(out, "traversal_weighted_mean_m: {:.2}", s.traversal_weighted_mean_m).unwrap();
    if let Some(load) = s.load_weighted_mean_m {
        writeln!(out, "load_weighted_mean_m: {load:.2}").unwrap();
    }
    writeln!(out, "n_routes: {}", s.n_routes).unwrap();
    writeln!(out, "n_segments: {}", s.n_segments).unwrap();
    writeln!(out, "n_rows: {}", s.n_rows).unwrap();
    writeln!(out, "n_traversals: {}", s.n_traversals).unwrap();
    writeln!(out, "total_service_km: {:.2}", s.total_service_km).unwrap();
    for (scheme, share) in &s.excluded_share {
        writeln!(out, "excluded_share_{scheme}: {share:.6}").unwrap();
    }
    out
}

pub fn write_signal_counts_csv(counts: &SignalCountTable<'_>, w: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["segment_id", "stop_id1", "stop_id2", "signal_count"])
        .map_err(csv_err)?;
    for c in &counts.counts {
        w.write_record([
            c.segment_id.as_str(),
            &c.stop_id1,
            &c.stop_id2,
            &c.signal_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(out_err)
}

pub fn write_geometric_fit_csv(fit: &GeometricFit, mut w: impl Write) -> Result<()> {
    writeln!(w, "parameter,value").map_err(out_err)?;
    writeln!(w, "p_hat,{:.9}", fit.p_hat).map_err(out_err)?;
    writeln!(w, "weighted_mean_count,{:.9}", fit.weighted_mean_count).map_err(out_err)?;
    writeln!(w, "max_count,{}", fit.max_count).map_err(out_err)?;
    for (k, p) in fit.predicted() {
        writeln!(w, "pmf_{k},{p:.9}").map_err(out_err)?;
    }
    Ok(())
}
