//! GTFS fixture builder shared by the integration tests, plus naive
//! reference implementations that work from the builder's own description
//! of the feed rather than from anything the library parsed.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path as FsPath;

use bus_spacing::feed::parse_feed_files;
use bus_spacing::geometry::{offset_by_meters, GeoPoint};
use bus_spacing::FeedBundle;
use chrono::{Datelike, Days, NaiveDate};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

/// Local metric frame: x meters east, y meters north of an origin.
#[derive(Clone, Copy, Debug)]
pub struct Plane {
    pub origin: GeoPoint,
}

impl Plane {
    pub fn new(lat: f64, lon: f64) -> Self {
        Plane {
            origin: GeoPoint { lat, lon },
        }
    }

    pub fn at(&self, x: f64, y: f64) -> GeoPoint {
        offset_by_meters(self.origin, y, x)
    }
}

#[derive(Clone, Debug)]
pub struct TripSpec {
    pub trip_id: String,
    pub route_id: String,
    pub service_id: String,
    pub direction_id: u8,
    pub shape_id: Option<String>,
    pub stop_ids: Vec<String>,
    pub shape_dist: Option<Vec<f64>>,
}

impl TripSpec {
    pub fn new(trip_id: &str, route_id: &str, service_id: &str, stop_ids: &[&str]) -> Self {
        TripSpec {
            trip_id: trip_id.into(),
            route_id: route_id.into(),
            service_id: service_id.into(),
            direction_id: 0,
            shape_id: None,
            stop_ids: stop_ids.iter().map(|s| s.to_string()).collect(),
            shape_dist: None,
        }
    }

    pub fn shape(mut self, shape_id: &str) -> Self {
        self.shape_id = Some(shape_id.into());
        self
    }

    pub fn direction(mut self, d: u8) -> Self {
        self.direction_id = d;
        self
    }
}

#[derive(Clone, Debug)]
pub struct CalendarSpec {
    pub service_id: String,
    /// Monday first.
    pub weekdays: [bool; 7],
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Clone, Debug)]
pub struct ExceptionSpec {
    pub service_id: String,
    pub date: NaiveDate,
    pub added: bool,
}

#[derive(Clone, Debug)]
pub struct FrequencySpec {
    pub trip_id: String,
    pub start_s: u32,
    pub end_s: u32,
    pub headway_s: u32,
}

#[derive(Clone, Debug, Default)]
pub struct GtfsBuilder {
    pub stops: Vec<(String, GeoPoint)>,
    pub routes: Vec<(String, u16)>,
    pub shapes: Vec<(String, Vec<GeoPoint>)>,
    pub trips: Vec<TripSpec>,
    pub calendar: Vec<CalendarSpec>,
    pub exceptions: Vec<ExceptionSpec>,
    pub frequencies: Vec<FrequencySpec>,
    pub shape_dists: BTreeMap<String, Vec<f64>>,
}

/// Rounds to the 9 decimals the fixture files carry, so the oracles see
/// exactly the coordinates the parser reads.
pub fn quantize(p: GeoPoint) -> GeoPoint {
    let q = |x: f64| format!("{x:.9}").parse::<f64>().unwrap();
    GeoPoint {
        lat: q(p.lat),
        lon: q(p.lon),
    }
}

fn hms(secs: u32) -> String {
    format!("{:02}:{:02}:{:02}", secs / 3600, secs / 60 % 60, secs % 60)
}

impl GtfsBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&mut self, id: &str, p: GeoPoint) -> &mut Self {
        self.stops.push((id.into(), quantize(p)));
        self
    }

    pub fn route(&mut self, id: &str, route_type: u16) -> &mut Self {
        self.routes.push((id.into(), route_type));
        self
    }

    pub fn shape(&mut self, id: &str, pts: Vec<GeoPoint>) -> &mut Self {
        self.shapes.push((id.into(), pts.into_iter().map(quantize).collect()));
        self
    }

    pub fn trip(&mut self, t: TripSpec) -> &mut Self {
        self.trips.push(t);
        self
    }

    pub fn every_day(&mut self, service_id: &str, start: &str, end: &str) -> &mut Self {
        self.calendar(service_id, [true; 7], start, end)
    }

    pub fn calendar(&mut self, service_id: &str, weekdays: [bool; 7], start: &str, end: &str) -> &mut Self {
        self.calendar.push(CalendarSpec {
            service_id: service_id.into(),
            weekdays,
            start: date(start),
            end: date(end),
        });
        self
    }

    pub fn exception(&mut self, service_id: &str, on: NaiveDate, added: bool) -> &mut Self {
        self.exceptions.push(ExceptionSpec {
            service_id: service_id.into(),
            date: on,
            added,
        });
        self
    }

    pub fn frequency(&mut self, trip_id: &str, start_s: u32, end_s: u32, headway_s: u32) -> &mut Self {
        self.frequencies.push(FrequencySpec {
            trip_id: trip_id.into(),
            start_s,
            end_s,
            headway_s,
        });
        self
    }

    pub fn stop_point(&self, id: &str) -> GeoPoint {
        self.stops.iter().find(|(s, _)| s == id).unwrap().1
    }

    pub fn shape_points(&self, id: &str) -> &[GeoPoint] {
        &self.shapes.iter().find(|(s, _)| s == id).unwrap().1
    }

    /// File contents keyed by table name, as `.txt` files would hold them.
    pub fn files(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let mut s = String::from("agency_id,agency_name,agency_url,agency_timezone\n");
        s.push_str("A,Fixture Transit,https://example.org,America/Chicago\n");
        out.insert("agency".to_string(), s);

        let mut s = String::from("stop_id,stop_name,stop_lat,stop_lon\n");
        for (id, p) in &self.stops {
            writeln!(s, "{id},Stop {id},{:.9},{:.9}", p.lat, p.lon).unwrap();
        }
        out.insert("stops".into(), s);

        let mut s = String::from("route_id,agency_id,route_short_name,route_type\n");
        for (id, t) in &self.routes {
            writeln!(s, "{id},A,{id},{t}").unwrap();
        }
        out.insert("routes".into(), s);

        let mut s = String::from("route_id,service_id,trip_id,direction_id,shape_id\n");
        for t in &self.trips {
            let shape = t.shape_id.as_deref().unwrap_or("");
            writeln!(s, "{},{},{},{},{shape}", t.route_id, t.service_id, t.trip_id, t.direction_id).unwrap();
        }
        out.insert("trips".into(), s);

        let mut s = String::from("trip_id,arrival_time,departure_time,stop_id,stop_sequence,shape_dist_traveled\n");
        for t in &self.trips {
            for (i, stop) in t.stop_ids.iter().enumerate() {
                let time = hms(8 * 3600 + 60 * i as u32);
                let dist = t.shape_dist.as_ref().map(|d| format!("{:.6}", d[i])).unwrap_or_default();
                writeln!(s, "{},{time},{time},{stop},{},{dist}", t.trip_id, i + 1).unwrap();
            }
        }
        out.insert("stop_times".into(), s);

        if !self.shapes.is_empty() {
            let mut s = String::from("shape_id,shape_pt_lat,shape_pt_lon,shape_pt_sequence,shape_dist_traveled\n");
            for (id, pts) in &self.shapes {
                let dists = self.shape_dists.get(id);
                for (i, p) in pts.iter().enumerate() {
                    let dist = dists.map(|d| format!("{:.6}", d[i])).unwrap_or_default();
                    writeln!(s, "{id},{:.9},{:.9},{},{dist}", p.lat, p.lon, i + 1).unwrap();
                }
            }
            out.insert("shapes".into(), s);
        }
        if !self.calendar.is_empty() {
            let mut s = String::from(
                "service_id,monday,tuesday,wednesday,thursday,friday,saturday,sunday,start_date,end_date\n",
            );
            for c in &self.calendar {
                s.push_str(&c.service_id);
                for d in c.weekdays {
                    s.push_str(if d { ",1" } else { ",0" });
                }
                writeln!(s, ",{},{}", c.start.format("%Y%m%d"), c.end.format("%Y%m%d")).unwrap();
            }
            out.insert("calendar".into(), s);
        }
        if !self.exceptions.is_empty() {
            let mut s = String::from("service_id,date,exception_type\n");
            for e in &self.exceptions {
                let kind = if e.added { 1 } else { 2 };
                writeln!(s, "{},{},{kind}", e.service_id, e.date.format("%Y%m%d")).unwrap();
            }
            out.insert("calendar_dates".into(), s);
        }
        if !self.frequencies.is_empty() {
            let mut s = String::from("trip_id,start_time,end_time,headway_secs\n");
            for f in &self.frequencies {
                writeln!(s, "{},{},{},{}", f.trip_id, hms(f.start_s), hms(f.end_s), f.headway_s).unwrap();
            }
            out.insert("frequencies".into(), s);
        }
        out
    }

    pub fn parse(&self, id: &str) -> FeedBundle {
        let files: HashMap<String, Vec<u8>> = self.files().into_iter().map(|(k, v)| (k, v.into_bytes())).collect();
        parse_feed_files(id, files).expect("fixture parses")
    }

    pub fn write_dir(&self, dir: &FsPath) {
        std::fs::create_dir_all(dir).unwrap();
        for (name, body) in self.files() {
            std::fs::write(dir.join(format!("{name}.txt")), body).unwrap();
        }
    }

    pub fn write_zip(&self, path: &FsPath) {
        let file = std::fs::File::create(path).unwrap();
        let mut zip = zip::ZipWriter::new(file);
        let opts = zip::write::SimpleFileOptions::default();
        for (name, body) in self.files() {
            zip.start_file(format!("{name}.txt"), opts).unwrap();
            zip.write_all(body.as_bytes()).unwrap();
        }
        zip.finish().unwrap();
    }
}

// ---------------------------------------------------------------------------
// Fixtures

pub const FIGURE1_DATE: &str = "2024-03-04";

/// Two-route network near Chicago. Orange runs a loop 1-2-3-4-1 with 120
/// departures a day; Green runs 5-3-4-1 with 60 and shares the 3-4 and 4-1
/// paths with Orange. Spacings: 1-2 200 m, 2-3 250 m, 3-4 800 m, 4-1 900 m,
/// 5-3 1000 m.
pub fn figure1() -> GtfsBuilder {
    let pl = Plane::new(41.88, -87.63);
    let mut b = GtfsBuilder::new();
    b.stop("1", pl.at(0.0, 0.0))
        .stop("2", pl.at(200.0, 0.0))
        .stop("3", pl.at(200.0, 250.0))
        .stop("4", pl.at(-600.0, 250.0))
        .stop("5", pl.at(200.0, 1250.0))
        .route("orange", 3)
        .route("green", 3)
        .shape(
            "orange-loop",
            vec![
                pl.at(0.0, 0.0),
                pl.at(200.0, 0.0),
                pl.at(200.0, 250.0),
                pl.at(-600.0, 250.0),
                pl.at(-600.0, -25.0),
                pl.at(0.0, -25.0),
                pl.at(0.0, 0.0),
            ],
        )
        .shape(
            "green-in",
            vec![
                pl.at(200.0, 1250.0),
                pl.at(200.0, 250.0),
                pl.at(-600.0, 250.0),
                pl.at(-600.0, -25.0),
                pl.at(0.0, -25.0),
                pl.at(0.0, 0.0),
            ],
        )
        .trip(TripSpec::new("orange-1", "orange", "daily", &["1", "2", "3", "4", "1"]).shape("orange-loop"))
        .trip(TripSpec::new("green-1", "green", "daily", &["5", "3", "4", "1"]).shape("green-in"))
        .calendar("daily", [true, true, true, true, true, false, false], "2024-03-04", "2024-03-31")
        .frequency("orange-1", 6 * 3600, 18 * 3600, 360)
        .frequency("green-1", 6 * 3600, 18 * 3600, 720);
    b
}

pub const FIGURE1_LOADS: &str = "stop_id1,stop_id2,avg_load\n1,2,30\n2,3,30\n3,4,10\n4,1,10\n5,3,5\n";

/// Explicit-trip network: two routes in both directions, one trip without a
/// shape, a rail route that must be ignored and a weekend service.
pub fn two_way_network() -> GtfsBuilder {
    let pl = Plane::new(45.52, -122.68);
    let mut b = GtfsBuilder::new();
    let xs = [0.0, 350.0, 700.0, 1200.0, 1500.0];
    for (i, x) in xs.iter().enumerate() {
        b.stop(&format!("a{i}"), pl.at(*x, 0.0));
    }
    b.stop("b0", pl.at(700.0, 600.0)).stop("b1", pl.at(700.0, 300.0));
    let line: Vec<GeoPoint> = xs.iter().map(|x| pl.at(*x, 0.0)).collect();
    let mut back = line.clone();
    back.reverse();
    b.route("A", 3).route("B", 704).route("R", 2);
    b.shape("a-east", line).shape("a-west", back).shape(
        "b-south",
        vec![pl.at(700.0, 600.0), pl.at(700.0, 300.0), pl.at(700.0, 0.0), pl.at(1200.0, 0.0)],
    );
    for k in 0..6 {
        b.trip(TripSpec::new(&format!("A-e{k}"), "A", "wk", &["a0", "a1", "a2", "a3", "a4"]).shape("a-east"));
        b.trip(
            TripSpec::new(&format!("A-w{k}"), "A", "wk", &["a4", "a3", "a2", "a1", "a0"])
                .shape("a-west")
                .direction(1),
        );
    }
    for k in 0..4 {
        b.trip(TripSpec::new(&format!("B-s{k}"), "B", "wk", &["b0", "b1", "a2", "a3"]).shape("b-south"));
    }
    b.trip(TripSpec::new("B-nos", "B", "wk", &["a3", "a2", "b1"]).direction(1));
    b.trip(TripSpec::new("B-sat", "B", "we", &["b0", "b1", "a2"]).shape("b-south"));
    b.trip(TripSpec::new("R-1", "R", "wk", &["a0", "a4"]));
    b.calendar("wk", [true, true, true, true, true, false, false], "2024-05-01", "2024-05-31")
        .calendar("we", [false, false, false, false, false, true, true], "2024-05-01", "2024-05-31")
        .exception("wk", date("2024-05-27"), false)
        .exception("we", date("2024-05-27"), true);
    b
}

/// Random grid network whose stops sit on shape vertices. Routes follow
/// self-avoiding walks; some trips run on frequencies and some have no
/// shape.
pub fn random_network(seed: u64) -> GtfsBuilder {
    let mut rng = StdRng::seed_from_u64(seed);
    let pl = Plane::new(rng.random_range(-40.0..60.0), rng.random_range(-120.0..120.0));
    let n = 10i32;
    let node = |i: i32, j: i32| format!("n{i}_{j}");
    let mut pos = HashMap::new();
    let mut b = GtfsBuilder::new();
    for i in 0..n {
        for j in 0..n {
            let p = pl.at(
                i as f64 * 180.0 + rng.random_range(-40.0..40.0),
                j as f64 * 180.0 + rng.random_range(-40.0..40.0),
            );
            pos.insert((i, j), p);
            b.stop(&node(i, j), p);
        }
    }
    b.every_day("all", "2024-01-01", "2024-01-14")
        .calendar("wkday", [true, true, true, true, true, false, false], "2024-01-01", "2024-01-14");

    let n_routes = rng.random_range(3..7);
    for r in 0..n_routes {
        let route_id = format!("r{r}");
        b.route(&route_id, if r % 2 == 0 { 3 } else { 700 + r as u16 });
        // Self-avoiding walk.
        let mut walk = vec![(rng.random_range(0..n), rng.random_range(0..n))];
        let len = rng.random_range(4..16);
        while walk.len() < len {
            let &(i, j) = walk.last().unwrap();
            let next: Vec<(i32, i32)> = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .map(|(di, dj)| (i + di, j + dj))
                .filter(|&(a, c)| (0..n).contains(&a) && (0..n).contains(&c) && !walk.contains(&(a, c)))
                .collect();
            if next.is_empty() {
                break;
            }
            walk.push(next[rng.random_range(0..next.len())]);
        }
        if walk.len() < 2 {
            continue;
        }
        let last = walk.len() - 1;
        let stops: Vec<String> = walk
            .iter()
            .enumerate()
            .filter(|(k, _)| *k == 0 || *k == last || rng.random_bool(0.6))
            .map(|(_, &(i, j))| node(i, j))
            .collect();
        let pts: Vec<GeoPoint> = walk.iter().map(|k| pos[k]).collect();
        let mut rev_pts = pts.clone();
        rev_pts.reverse();
        let mut rev_stops = stops.clone();
        rev_stops.reverse();
        b.shape(&format!("{route_id}-0"), pts).shape(&format!("{route_id}-1"), rev_pts);

        for dir in 0..2u8 {
            let stop_refs: Vec<&str> = if dir == 0 { &stops } else { &rev_stops }.iter().map(String::as_str).collect();
            for k in 0..rng.random_range(1..4) {
                let service = if rng.random_bool(0.5) { "all" } else { "wkday" };
                let trip_id = format!("{route_id}-{dir}-{k}");
                let mut t = TripSpec::new(&trip_id, &route_id, service, &stop_refs).direction(dir);
                if rng.random_bool(0.85) {
                    t = t.shape(&format!("{route_id}-{dir}"));
                }
                b.trip(t);
                if rng.random_bool(0.4) {
                    let start = rng.random_range(5..10) * 3600;
                    let end = start + rng.random_range(1..6) * 3600;
                    b.frequency(&trip_id, start, end, [300, 600, 900, 1200][rng.random_range(0..4)]);
                }
            }
        }
    }
    b
}

// ---------------------------------------------------------------------------
// Naive oracles

/// Haversine distance, written out independently of the library.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let r = 6_371_000.0_f64;
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().asin()
}

pub fn polyline_length(pts: &[GeoPoint]) -> f64 {
    pts.windows(2).map(|w| haversine(w[0], w[1])).sum()
}

pub fn is_bus_type(t: u16) -> bool {
    t == 3 || (700..=799).contains(&t)
}

pub fn naive_active(b: &GtfsBuilder, service_id: &str, on: NaiveDate) -> bool {
    if let Some(e) = b.exceptions.iter().find(|e| e.service_id == service_id && e.date == on) {
        return e.added;
    }
    b.calendar.iter().any(|c| {
        c.service_id == service_id
            && c.start <= on
            && on <= c.end
            && c.weekdays[on.weekday().num_days_from_monday() as usize]
    })
}

pub fn naive_departures(b: &GtfsBuilder, trip_id: &str) -> u64 {
    let spans: Vec<&FrequencySpec> = b.frequencies.iter().filter(|f| f.trip_id == trip_id).collect();
    if spans.is_empty() {
        return 1;
    }
    spans
        .iter()
        .map(|f| (f.end_s.saturating_sub(f.start_s) / f.headway_s).max(1) as u64)
        .sum()
}

fn bus_trips(b: &GtfsBuilder) -> impl Iterator<Item = &TripSpec> {
    b.trips.iter().filter(|t| {
        b.routes
            .iter()
            .any(|(id, ty)| *id == t.route_id && is_bus_type(*ty))
    })
}

pub fn naive_day_count(b: &GtfsBuilder, on: NaiveDate) -> u64 {
    bus_trips(b)
        .filter(|t| naive_active(b, &t.service_id, on))
        .map(|t| naive_departures(b, &t.trip_id))
        .sum()
}

/// Walks every date between the earliest and latest date the feed mentions.
pub fn naive_busiest_day(b: &GtfsBuilder) -> Option<(NaiveDate, u64)> {
    let dates: Vec<NaiveDate> = b
        .calendar
        .iter()
        .flat_map(|c| [c.start, c.end])
        .chain(b.exceptions.iter().map(|e| e.date))
        .collect();
    let (lo, hi) = (*dates.iter().min()?, *dates.iter().max()?);
    let mut best: Option<(NaiveDate, u64)> = None;
    let mut d = lo;
    while d <= hi {
        let n = naive_day_count(b, d);
        if n > 0 && best.is_none_or(|(_, m)| n > m) {
            best = Some((d, n));
        }
        d = d + Days::new(1);
    }
    best
}

pub type Coords = Vec<(i64, i64)>;

pub fn rounded(pts: &[GeoPoint]) -> Coords {
    pts.iter()
        .map(|p| ((p.lat * 1e6).round() as i64, (p.lon * 1e6).round() as i64))
        .collect()
}

/// Segment key: stop pair plus the geometry at 6 decimals.
pub type SegKey = (String, String, Coords);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NaiveSegment {
    pub length_m: f64,
    pub traversals: u64,
}

/// Stop-to-stop paths for one trip, assuming stops sit on shape vertices.
pub fn naive_trip_paths(b: &GtfsBuilder, t: &TripSpec) -> Vec<Vec<GeoPoint>> {
    let stops: Vec<GeoPoint> = t.stop_ids.iter().map(|s| b.stop_point(s)).collect();
    let Some(shape_id) = &t.shape_id else {
        return stops.windows(2).map(|w| w.to_vec()).collect();
    };
    let shape = b.shape_points(shape_id);
    let mut idx = Vec::new();
    let mut from = 0;
    for s in &stops {
        let k = from + shape[from..].iter().position(|p| p == s).expect("stop on a shape vertex");
        idx.push(k);
        from = k;
    }
    idx.windows(2).map(|w| shape[w[0]..=w[1]].to_vec()).collect()
}

/// Segments and traversals for the bus service on `on`.
pub fn naive_segments(b: &GtfsBuilder, on: NaiveDate) -> BTreeMap<SegKey, NaiveSegment> {
    let mut out: BTreeMap<SegKey, NaiveSegment> = BTreeMap::new();
    for t in bus_trips(b).filter(|t| naive_active(b, &t.service_id, on)) {
        let deps = naive_departures(b, &t.trip_id);
        for (k, path) in naive_trip_paths(b, t).into_iter().enumerate() {
            let key = (t.stop_ids[k].clone(), t.stop_ids[k + 1].clone(), rounded(&path));
            let e = out.entry(key).or_default();
            e.length_m = polyline_length(&path);
            e.traversals += deps;
        }
    }
    out
}

/// Random weighted spacing sets for distribution tests.
pub fn random_pairs(rng: &mut StdRng) -> Vec<(f64, f64)> {
    let n = rng.random_range(1..60);
    (0..n)
        .map(|_| {
            let s = if rng.random_bool(0.2) {
                (rng.random_range(1..20) * 50) as f64
            } else {
                rng.random_range(1.0..3_000.0)
            };
            let w = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.01..500.0) };
            (s, w)
        })
        .enumerate()
        .map(|(i, (s, w))| if i == 0 { (s, f64::max(w, 1.0)) } else { (s, w) })
        .collect()
}
