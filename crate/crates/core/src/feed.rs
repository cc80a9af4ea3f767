//! GTFS feed loading.
//!
//! A feed is read from a zip archive or a directory of `.txt` tables into a
//! [`FeedBundle`]. Rows that fail to parse or that break referential
//! integrity are dropped and tallied in [`Diagnostics`]; parsing only fails
//! outright when a required file is missing, when more than half of a
//! required file is unreadable, or when no calendar information exists.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::ops::Range;
use std::path::Path as FsPath;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::GeoPoint;

pub const REQUIRED_FILES: [&str; 4] = ["stops", "routes", "trips", "stop_times"];
const OPTIONAL_FILES: [&str; 4] = ["shapes", "calendar", "calendar_dates", "frequencies"];
const MAX_EXAMPLES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stop {
    pub stop_id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Stop {
    pub fn point(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Route {
    pub route_id: String,
    pub route_type: i32,
}

impl Route {
    /// Basic bus (3) or any extended bus code (700-799).
    pub fn is_bus(&self) -> bool {
        self.route_type == 3 || (700..=799).contains(&self.route_type)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trip {
    pub trip_id: String,
    pub route_id: String,
    pub service_id: String,
    pub shape_id: Option<String>,
    pub direction_id: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StopTime {
    pub trip_id: String,
    pub stop_id: String,
    pub stop_sequence: u32,
    pub shape_dist_traveled: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapePoint {
    pub shape_id: String,
    pub lat: f64,
    pub lon: f64,
    pub shape_pt_sequence: u32,
    pub shape_dist_traveled: Option<f64>,
}

impl ShapePoint {
    pub fn point(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ServiceWindow {
    pub service_id: String,
    /// Monday first.
    pub weekdays: [bool; 7],
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ExceptionType {
    Added,
    Removed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ServiceException {
    pub service_id: String,
    pub date: NaiveDate,
    pub exception_type: ExceptionType,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencySpan {
    pub trip_id: String,
    /// Seconds after midnight of the service day; may exceed 24 h.
    pub start_time: u32,
    pub end_time: u32,
    pub headway_secs: u32,
    pub exact_times: bool,
}

impl FrequencySpan {
    /// Completed headway intervals in the span, at least one.
    pub fn departures(&self) -> u64 {
        let span = self.end_time.saturating_sub(self.start_time) as u64;
        (span / self.headway_secs as u64).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Unparseable,
    DuplicateKey,
    UnknownReference,
    InvalidValue,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagnosticKind::Unparseable => "unparseable row",
            DiagnosticKind::DuplicateKey => "duplicate key",
            DiagnosticKind::UnknownReference => "unknown reference",
            DiagnosticKind::InvalidValue => "invalid value",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub file: String,
    pub kind: DiagnosticKind,
    pub dropped: usize,
    pub examples: Vec<String>,
}

/// Rows dropped while loading a feed, grouped by file and cause.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    entries: BTreeMap<(String, DiagnosticKind), Diagnostic>,
}

impl Diagnostics {
    pub(crate) fn record(&mut self, file: &str, kind: DiagnosticKind, example: impl Into<String>) {
        let entry = self
            .entries
            .entry((file.to_string(), kind))
            .or_insert_with(|| Diagnostic {
                file: file.to_string(),
                kind,
                dropped: 0,
                examples: Vec::new(),
            });
        entry.dropped += 1;
        if entry.examples.len() < MAX_EXAMPLES {
            entry.examples.push(example.into());
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &Diagnostic> {
        self.entries.values()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dropped_rows(&self) -> usize {
        self.entries.values().map(|d| d.dropped).sum()
    }

    pub fn dropped_in(&self, file: &str) -> usize {
        self.entries
            .values()
            .filter(|d| d.file == file)
            .map(|d| d.dropped)
            .sum()
    }

    fn merge(&mut self, other: Diagnostics) {
        for (key, d) in other.entries {
            match self.entries.get_mut(&key) {
                Some(e) => {
                    e.dropped += d.dropped;
                    let room = MAX_EXAMPLES.saturating_sub(e.examples.len());
                    e.examples.extend(d.examples.into_iter().take(room));
                }
                None => {
                    self.entries.insert(key, d);
                }
            }
        }
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.entries.values() {
            write!(f, "{}.txt: {} {} dropped", d.file, d.dropped, d.kind)?;
            if !d.examples.is_empty() {
                write!(f, " (e.g. {})", d.examples.join("; "))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Parsed, referentially consistent GTFS tables. Immutable once built.
#[derive(Clone, Debug)]
pub struct FeedBundle {
    id: String,
    stops: Vec<Stop>,
    routes: Vec<Route>,
    trips: Vec<Trip>,
    stop_times: Vec<StopTime>,
    shapes: Vec<ShapePoint>,
    calendar: Option<Vec<ServiceWindow>>,
    calendar_dates: Option<Vec<ServiceException>>,
    frequencies: Option<Vec<FrequencySpan>>,
    diagnostics: Diagnostics,

    stop_index: HashMap<String, usize>,
    route_index: HashMap<String, usize>,
    trip_index: HashMap<String, usize>,
    stop_time_ranges: HashMap<String, Range<usize>>,
    shape_ranges: HashMap<String, Range<usize>>,
    frequency_index: HashMap<String, Vec<usize>>,
}

impl FeedBundle {
    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn stops(&self) -> &[Stop] {
        &self.stops
    }
    pub fn routes(&self) -> &[Route] {
        &self.routes
    }
    pub fn trips(&self) -> &[Trip] {
        &self.trips
    }
    /// Ordered by (trip_id, stop_sequence).
    pub fn stop_times(&self) -> &[StopTime] {
        &self.stop_times
    }
    /// Ordered by (shape_id, shape_pt_sequence).
    pub fn shapes(&self) -> &[ShapePoint] {
        &self.shapes
    }
    pub fn calendar(&self) -> Option<&[ServiceWindow]> {
        self.calendar.as_deref()
    }
    pub fn calendar_dates(&self) -> Option<&[ServiceException]> {
        self.calendar_dates.as_deref()
    }
    pub fn frequencies(&self) -> Option<&[FrequencySpan]> {
        self.frequencies.as_deref()
    }
    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn stop(&self, stop_id: &str) -> Option<&Stop> {
        self.stop_index.get(stop_id).map(|&i| &self.stops[i])
    }
    pub fn route(&self, route_id: &str) -> Option<&Route> {
        self.route_index.get(route_id).map(|&i| &self.routes[i])
    }
    pub fn trip(&self, trip_id: &str) -> Option<&Trip> {
        self.trip_index.get(trip_id).map(|&i| &self.trips[i])
    }
    pub fn stop_times_for(&self, trip_id: &str) -> &[StopTime] {
        self.stop_time_ranges
            .get(trip_id)
            .map_or(&[], |r| &self.stop_times[r.clone()])
    }
    pub fn shape_points(&self, shape_id: &str) -> &[ShapePoint] {
        self.shape_ranges
            .get(shape_id)
            .map_or(&[], |r| &self.shapes[r.clone()])
    }
    pub fn frequencies_for(&self, trip_id: &str) -> impl Iterator<Item = &FrequencySpan> {
        let idx = self.frequency_index.get(trip_id);
        let freqs = self.frequencies.as_deref().unwrap_or(&[]);
        idx.into_iter().flatten().map(move |&i| &freqs[i])
    }

    /// Departures represented by one trip row: 1, or the sum over its
    /// frequency spans.
    pub fn trip_departures(&self, trip_id: &str) -> u64 {
        match self.frequency_index.get(trip_id) {
            Some(_) => self.frequencies_for(trip_id).map(|f| f.departures()).sum(),
            None => 1,
        }
    }
}

/// Reads a feed from a `.zip` archive or a directory.
pub fn parse_feed(source: impl AsRef<FsPath>) -> Result<FeedBundle> {
    let source = source.as_ref();
    let id = source
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "feed".to_string());
    let meta = std::fs::metadata(source).map_err(|e| Error::io(source, e))?;
    let files = if meta.is_dir() {
        read_dir_files(source)?
    } else {
        read_zip_files(source)?
    };
    parse_feed_files(id, files)
}

fn read_dir_files(dir: &FsPath) -> Result<HashMap<String, Vec<u8>>> {
    let mut files = HashMap::new();
    for name in REQUIRED_FILES.iter().chain(OPTIONAL_FILES.iter()) {
        let path = dir.join(format!("{name}.txt"));
        if path.is_file() {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            files.insert(name.to_string(), bytes);
        }
    }
    Ok(files)
}

fn read_zip_files(path: &FsPath) -> Result<HashMap<String, Vec<u8>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut archive =
        zip::ZipArchive::new(file).map_err(|e| Error::Archive(format!("{}: {e}", path.display())))?;
    // Some publishers nest the tables in a folder; take the shallowest copy.
    let mut chosen: HashMap<String, (usize, usize)> = HashMap::new();
    for i in 0..archive.len() {
        let entry = archive
            .by_index(i)
            .map_err(|e| Error::Archive(e.to_string()))?;
        if entry.is_dir() {
            continue;
        }
        let name = entry
            .name()
            .map_err(|e| Error::Archive(e.to_string()))?
            .to_string();
        let depth = name.matches('/').count();
        let base = name.rsplit('/').next().unwrap_or(&name);
        let Some(stem) = base.strip_suffix(".txt") else {
            continue;
        };
        if !REQUIRED_FILES.contains(&stem) && !OPTIONAL_FILES.contains(&stem) {
            continue;
        }
        match chosen.get(stem) {
            Some(&(d, _)) if d <= depth => {}
            _ => {
                chosen.insert(stem.to_string(), (depth, i));
            }
        }
    }
    let mut files = HashMap::new();
    for (stem, (_, i)) in chosen {
        let mut entry = archive
            .by_index(i)
            .map_err(|e| Error::Archive(e.to_string()))?;
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Archive(format!("{stem}.txt: {e}")))?;
        files.insert(stem, bytes);
    }
    Ok(files)
}

/// Builds a feed from in-memory tables keyed by file stem (`"stops"`, ...).
pub fn parse_feed_files(id: impl Into<String>, files: HashMap<String, Vec<u8>>) -> Result<FeedBundle> {
    for name in REQUIRED_FILES {
        if !files.contains_key(name) {
            return Err(Error::MissingRequiredFile(name.to_string()));
        }
    }
    if !files.contains_key("calendar") && !files.contains_key("calendar_dates") {
        return Err(Error::NoServiceInfo);
    }

    let get = |name: &str| files.get(name).map(Vec::as_slice);

    // The two large tables are read on their own threads.
    let (stop_times, shapes, rest) = std::thread::scope(|s| {
        let st = s.spawn(|| read_table("stop_times", get("stop_times").unwrap(), true, parse_stop_time));
        let sh = s.spawn(|| get("shapes").map(|b| read_table("shapes", b, false, parse_shape_point)).transpose());
        let stops = read_table("stops", get("stops").unwrap(), true, parse_stop);
        let routes = read_table("routes", get("routes").unwrap(), true, parse_route);
        let trips = read_table("trips", get("trips").unwrap(), true, parse_trip);
        let calendar = get("calendar")
            .map(|b| read_table("calendar", b, false, parse_service_window))
            .transpose();
        let calendar_dates = get("calendar_dates")
            .map(|b| read_table("calendar_dates", b, false, parse_service_exception))
            .transpose();
        let frequencies = get("frequencies")
            .map(|b| read_table("frequencies", b, false, parse_frequency))
            .transpose();
        (
            st.join().expect("stop_times reader panicked"),
            sh.join().expect("shapes reader panicked"),
            (stops, routes, trips, calendar, calendar_dates, frequencies),
        )
    });
    let (stops, routes, trips, calendar, calendar_dates, frequencies) = rest;

    let mut diagnostics = Diagnostics::default();
    let stops = take(stops, &mut diagnostics)?;
    let routes = take(routes, &mut diagnostics)?;
    let trips = take(trips, &mut diagnostics)?;
    let stop_times = take(stop_times, &mut diagnostics)?;
    let shapes = take_optional(shapes, &mut diagnostics)?.unwrap_or_default();
    let calendar = take_optional(calendar, &mut diagnostics)?;
    let calendar_dates = take_optional(calendar_dates, &mut diagnostics)?;
    let frequencies = take_optional(frequencies, &mut diagnostics)?;

    assemble(
        id.into(),
        RawTables {
            stops,
            routes,
            trips,
            stop_times,
            shapes,
            calendar,
            calendar_dates,
            frequencies,
        },
        diagnostics,
    )
}

fn take<T>(r: Result<(Vec<T>, Diagnostics)>, diagnostics: &mut Diagnostics) -> Result<Vec<T>> {
    let (rows, d) = r?;
    diagnostics.merge(d);
    Ok(rows)
}

fn take_optional<T>(
    r: Result<Option<(Vec<T>, Diagnostics)>>,
    diagnostics: &mut Diagnostics,
) -> Result<Option<Vec<T>>> {
    r?.map(|table| take(Ok(table), diagnostics)).transpose()
}

struct RawTables {
    stops: Vec<Stop>,
    routes: Vec<Route>,
    trips: Vec<Trip>,
    stop_times: Vec<StopTime>,
    shapes: Vec<ShapePoint>,
    calendar: Option<Vec<ServiceWindow>>,
    calendar_dates: Option<Vec<ServiceException>>,
    frequencies: Option<Vec<FrequencySpan>>,
}

fn dedup_by_key<T>(
    rows: Vec<T>,
    file: &str,
    key: impl Fn(&T) -> &str,
    diagnostics: &mut Diagnostics,
) -> (Vec<T>, HashMap<String, usize>) {
    let mut index = HashMap::with_capacity(rows.len());
    let mut kept = Vec::with_capacity(rows.len());
    for row in rows {
        let k = key(&row);
        if index.contains_key(k) {
            diagnostics.record(file, DiagnosticKind::DuplicateKey, k);
            continue;
        }
        index.insert(k.to_string(), kept.len());
        kept.push(row);
    }
    (kept, index)
}

fn group_ranges<T>(rows: &[T], key: impl Fn(&T) -> &str) -> HashMap<String, Range<usize>> {
    let mut ranges = HashMap::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || key(&rows[i]) != key(&rows[start]) {
            ranges.insert(key(&rows[start]).to_string(), start..i);
            start = i;
        }
    }
    ranges
}

fn assemble(id: String, raw: RawTables, mut diagnostics: Diagnostics) -> Result<FeedBundle> {
    let (stops, stop_index) = dedup_by_key(raw.stops, "stops", |s| &s.stop_id, &mut diagnostics);
    let (routes, route_index) = dedup_by_key(raw.routes, "routes", |r| &r.route_id, &mut diagnostics);

    let trips: Vec<Trip> = raw
        .trips
        .into_iter()
        .filter(|t| {
            let ok = route_index.contains_key(&t.route_id);
            if !ok {
                diagnostics.record(
                    "trips",
                    DiagnosticKind::UnknownReference,
                    format!("trip {} -> route {}", t.trip_id, t.route_id),
                );
            }
            ok
        })
        .collect();
    let (trips, trip_index) = dedup_by_key(trips, "trips", |t| &t.trip_id, &mut diagnostics);

    let mut stop_times: Vec<StopTime> = raw
        .stop_times
        .into_iter()
        .filter(|st| {
            if !trip_index.contains_key(&st.trip_id) {
                diagnostics.record(
                    "stop_times",
                    DiagnosticKind::UnknownReference,
                    format!("trip {}", st.trip_id),
                );
                return false;
            }
            if !stop_index.contains_key(&st.stop_id) {
                diagnostics.record(
                    "stop_times",
                    DiagnosticKind::UnknownReference,
                    format!("stop {}", st.stop_id),
                );
                return false;
            }
            true
        })
        .collect();
    stop_times.sort_by(|a, b| {
        a.trip_id
            .cmp(&b.trip_id)
            .then(a.stop_sequence.cmp(&b.stop_sequence))
    });
    let mut prev: Option<(String, u32)> = None;
    stop_times.retain(|st| {
        let dup = prev
            .as_ref()
            .is_some_and(|(t, s)| *t == st.trip_id && *s == st.stop_sequence);
        if dup {
            diagnostics.record(
                "stop_times",
                DiagnosticKind::DuplicateKey,
                format!("trip {} sequence {}", st.trip_id, st.stop_sequence),
            );
        } else {
            prev = Some((st.trip_id.clone(), st.stop_sequence));
        }
        !dup
    });

    let mut shapes = raw.shapes;
    shapes.sort_by(|a, b| {
        a.shape_id
            .cmp(&b.shape_id)
            .then(a.shape_pt_sequence.cmp(&b.shape_pt_sequence))
    });
    let mut prev: Option<(String, u32)> = None;
    shapes.retain(|sp| {
        let dup = prev
            .as_ref()
            .is_some_and(|(s, q)| *s == sp.shape_id && *q == sp.shape_pt_sequence);
        if dup {
            diagnostics.record(
                "shapes",
                DiagnosticKind::DuplicateKey,
                format!("shape {} sequence {}", sp.shape_id, sp.shape_pt_sequence),
            );
        } else {
            prev = Some((sp.shape_id.clone(), sp.shape_pt_sequence));
        }
        !dup
    });

    let frequencies = raw.frequencies.map(|rows| {
        rows.into_iter()
            .filter(|f| {
                let ok = trip_index.contains_key(&f.trip_id);
                if !ok {
                    diagnostics.record(
                        "frequencies",
                        DiagnosticKind::UnknownReference,
                        format!("trip {}", f.trip_id),
                    );
                }
                ok
            })
            .collect::<Vec<_>>()
    });
    let mut frequency_index: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, f) in frequencies.iter().flatten().enumerate() {
        frequency_index.entry(f.trip_id.clone()).or_default().push(i);
    }

    let stop_time_ranges = group_ranges(&stop_times, |st| &st.trip_id);
    let shape_ranges = group_ranges(&shapes, |sp| &sp.shape_id);

    Ok(FeedBundle {
        id,
        stops,
        routes,
        trips,
        stop_times,
        shapes,
        calendar: raw.calendar,
        calendar_dates: raw.calendar_dates,
        frequencies,
        diagnostics,
        stop_index,
        route_index,
        trip_index,
        stop_time_ranges,
        shape_ranges,
        frequency_index,
    })
}

/// Column lookup for one record.
struct Row<'a> {
    columns: &'a HashMap<String, usize>,
    record: &'a csv::StringRecord,
}

impl<'a> Row<'a> {
    fn opt(&self, name: &str) -> Option<&'a str> {
        self.columns
            .get(name)
            .and_then(|&i| self.record.get(i))
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }

    fn req(&self, name: &str) -> std::result::Result<&'a str, String> {
        self.opt(name).ok_or_else(|| format!("missing {name}"))
    }

    fn req_parse<T: std::str::FromStr>(&self, name: &str) -> std::result::Result<T, String> {
        let raw = self.req(name)?;
        raw.parse().map_err(|_| format!("bad {name} '{raw}'"))
    }

    fn opt_parse<T: std::str::FromStr>(&self, name: &str) -> std::result::Result<Option<T>, String> {
        self.opt(name)
            .map(|raw| raw.parse().map_err(|_| format!("bad {name} '{raw}'")))
            .transpose()
    }
}

type RowResult<T> = std::result::Result<T, (DiagnosticKind, String)>;

fn unparseable(msg: String) -> (DiagnosticKind, String) {
    (DiagnosticKind::Unparseable, msg)
}

fn read_table<T>(
    file: &str,
    bytes: &[u8],
    required: bool,
    parse: impl Fn(&Row) -> RowResult<T>,
) -> Result<(Vec<T>, Diagnostics)> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(bytes);
    let csv_err = |e: csv::Error| Error::Csv {
        file: file.to_string(),
        message: e.to_string(),
    };
    let columns: HashMap<String, usize> = reader
        .byte_headers()
        .map_err(csv_err)?
        .iter()
        .enumerate()
        .map(|(i, h)| (String::from_utf8_lossy(h).trim().to_string(), i))
        .collect();

    let mut rows = Vec::new();
    let mut diagnostics = Diagnostics::default();
    let mut total = 0usize;
    let mut failed = 0usize;
    let mut raw = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut raw) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                total += 1;
                failed += 1;
                diagnostics.record(file, DiagnosticKind::Unparseable, e.to_string());
                continue;
            }
        }
        if raw.iter().all(|f| f.iter().all(u8::is_ascii_whitespace)) {
            continue;
        }
        total += 1;
        let record = match csv::StringRecord::from_byte_record(raw.clone()) {
            Ok(r) => r,
            Err(e) => {
                let lossy: Vec<String> = e
                    .into_byte_record()
                    .iter()
                    .map(|f| String::from_utf8_lossy(f).into_owned())
                    .collect();
                csv::StringRecord::from(lossy)
            }
        };
        match parse(&Row {
            columns: &columns,
            record: &record,
        }) {
            Ok(row) => rows.push(row),
            Err((kind, msg)) => {
                if kind == DiagnosticKind::Unparseable {
                    failed += 1;
                }
                diagnostics.record(file, kind, msg);
            }
        }
    }
    if required && total > 0 && failed * 2 > total {
        return Err(Error::MalformedRow {
            file: file.to_string(),
            failed,
            total,
        });
    }
    Ok((rows, diagnostics))
}

fn parse_stop(row: &Row) -> RowResult<Stop> {
    let stop_id = row.req("stop_id").map_err(unparseable)?.to_string();
    let lat: f64 = row.req_parse("stop_lat").map_err(unparseable)?;
    let lon: f64 = row.req_parse("stop_lon").map_err(unparseable)?;
    if !(GeoPoint { lat, lon }).is_valid() {
        return Err((
            DiagnosticKind::InvalidValue,
            format!("stop {stop_id} at ({lat}, {lon}) out of range"),
        ));
    }
    Ok(Stop { stop_id, lat, lon })
}

fn parse_route(row: &Row) -> RowResult<Route> {
    Ok(Route {
        route_id: row.req("route_id").map_err(unparseable)?.to_string(),
        route_type: row.req_parse("route_type").map_err(unparseable)?,
    })
}

fn parse_trip(row: &Row) -> RowResult<Trip> {
    let direction_id = match row.opt_parse::<u8>("direction_id").map_err(unparseable)? {
        None => 0,
        Some(d @ (0 | 1)) => d,
        Some(d) => return Err(unparseable(format!("bad direction_id '{d}'"))),
    };
    Ok(Trip {
        trip_id: row.req("trip_id").map_err(unparseable)?.to_string(),
        route_id: row.req("route_id").map_err(unparseable)?.to_string(),
        service_id: row.req("service_id").map_err(unparseable)?.to_string(),
        shape_id: row.opt("shape_id").map(str::to_string),
        direction_id,
    })
}

fn non_negative(v: Option<f64>, name: &str) -> RowResult<Option<f64>> {
    match v {
        Some(x) if !(x >= 0.0 && x.is_finite()) => Err((
            DiagnosticKind::InvalidValue,
            format!("negative {name} {x}"),
        )),
        _ => Ok(v),
    }
}

fn parse_stop_time(row: &Row) -> RowResult<StopTime> {
    Ok(StopTime {
        trip_id: row.req("trip_id").map_err(unparseable)?.to_string(),
        stop_id: row.req("stop_id").map_err(unparseable)?.to_string(),
        stop_sequence: row.req_parse("stop_sequence").map_err(unparseable)?,
        shape_dist_traveled: non_negative(
            row.opt_parse("shape_dist_traveled").map_err(unparseable)?,
            "shape_dist_traveled",
        )?,
    })
}

fn parse_shape_point(row: &Row) -> RowResult<ShapePoint> {
    let shape_id = row.req("shape_id").map_err(unparseable)?.to_string();
    let lat: f64 = row.req_parse("shape_pt_lat").map_err(unparseable)?;
    let lon: f64 = row.req_parse("shape_pt_lon").map_err(unparseable)?;
    if !(GeoPoint { lat, lon }).is_valid() {
        return Err((
            DiagnosticKind::InvalidValue,
            format!("shape {shape_id} point ({lat}, {lon}) out of range"),
        ));
    }
    Ok(ShapePoint {
        shape_id,
        lat,
        lon,
        shape_pt_sequence: row.req_parse("shape_pt_sequence").map_err(unparseable)?,
        shape_dist_traveled: non_negative(
            row.opt_parse("shape_dist_traveled").map_err(unparseable)?,
            "shape_dist_traveled",
        )?,
    })
}

pub fn parse_gtfs_date(raw: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y%m%d").ok()
}

/// `H:MM:SS` to seconds; hours may exceed 23.
pub fn parse_gtfs_time(raw: &str) -> Option<u32> {
    let mut parts = raw.trim().split(':');
    let h: u32 = parts.next()?.parse().ok()?;
    let m: u32 = parts.next()?.parse().ok()?;
    let s: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || m > 59 || s > 59 {
        return None;
    }
    Some(h * 3600 + m * 60 + s)
}

fn req_date(row: &Row, name: &str) -> RowResult<NaiveDate> {
    let raw = row.req(name).map_err(unparseable)?;
    parse_gtfs_date(raw).ok_or_else(|| unparseable(format!("bad {name} '{raw}'")))
}

fn req_time(row: &Row, name: &str) -> RowResult<u32> {
    let raw = row.req(name).map_err(unparseable)?;
    parse_gtfs_time(raw).ok_or_else(|| unparseable(format!("bad {name} '{raw}'")))
}

fn parse_service_window(row: &Row) -> RowResult<ServiceWindow> {
    const DAYS: [&str; 7] = [
        "monday",
        "tuesday",
        "wednesday",
        "thursday",
        "friday",
        "saturday",
        "sunday",
    ];
    let service_id = row.req("service_id").map_err(unparseable)?.to_string();
    let mut weekdays = [false; 7];
    for (flag, day) in weekdays.iter_mut().zip(DAYS) {
        *flag = match row.req(day).map_err(unparseable)? {
            "1" => true,
            "0" => false,
            other => return Err(unparseable(format!("bad {day} '{other}'"))),
        };
    }
    let start_date = req_date(row, "start_date")?;
    let end_date = req_date(row, "end_date")?;
    if start_date > end_date {
        return Err((
            DiagnosticKind::InvalidValue,
            format!("service {service_id} starts after it ends"),
        ));
    }
    Ok(ServiceWindow {
        service_id,
        weekdays,
        start_date,
        end_date,
    })
}

fn parse_service_exception(row: &Row) -> RowResult<ServiceException> {
    let exception_type = match row.req("exception_type").map_err(unparseable)? {
        "1" => ExceptionType::Added,
        "2" => ExceptionType::Removed,
        other => return Err(unparseable(format!("bad exception_type '{other}'"))),
    };
    Ok(ServiceException {
        service_id: row.req("service_id").map_err(unparseable)?.to_string(),
        date: req_date(row, "date")?,
        exception_type,
    })
}

fn parse_frequency(row: &Row) -> RowResult<FrequencySpan> {
    let trip_id = row.req("trip_id").map_err(unparseable)?.to_string();
    let headway_secs: u32 = row.req_parse("headway_secs").map_err(unparseable)?;
    if headway_secs == 0 {
        return Err((
            DiagnosticKind::InvalidValue,
            format!("trip {trip_id} has zero headway"),
        ));
    }
    Ok(FrequencySpan {
        start_time: req_time(row, "start_time")?,
        end_time: req_time(row, "end_time")?,
        headway_secs,
        exact_times: row.opt("exact_times") == Some("1"),
        trip_id,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum ValidationIssue {
    TripLacksShape {
        trip_id: String,
        shape_id: Option<String>,
    },
    ShapeTooShort {
        shape_id: String,
        points: usize,
    },
    StopOutOfRange {
        stop_id: String,
    },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::TripLacksShape { trip_id, .. } => write!(f, "trip lacks shape: {trip_id}"),
            ValidationIssue::ShapeTooShort { shape_id, points } => {
                write!(f, "shape has fewer than 2 points: {shape_id} ({points})")
            }
            ValidationIssue::StopOutOfRange { stop_id } => {
                write!(f, "stop coordinates out of range: {stop_id}")
            }
        }
    }
}

/// Consistency report for a parsed feed. Does not modify it.
pub fn validate_feed(feed: &FeedBundle) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    for trip in feed.trips() {
        let has_shape = trip
            .shape_id
            .as_deref()
            .is_some_and(|s| !feed.shape_points(s).is_empty());
        if !has_shape {
            issues.push(ValidationIssue::TripLacksShape {
                trip_id: trip.trip_id.clone(),
                shape_id: trip.shape_id.clone(),
            });
        }
    }
    let mut seen = HashSet::new();
    for sp in feed.shapes() {
        if seen.insert(sp.shape_id.as_str()) {
            let points = feed.shape_points(&sp.shape_id).len();
            if points < 2 {
                issues.push(ValidationIssue::ShapeTooShort {
                    shape_id: sp.shape_id.clone(),
                    points,
                });
            }
        }
    }
    for stop in feed.stops() {
        if !stop.point().is_valid() {
            issues.push(ValidationIssue::StopOutOfRange {
                stop_id: stop.stop_id.clone(),
            });
        }
    }
    issues
}
