//! Service-day resolution and busiest-day selection.

use std::collections::{BTreeSet, HashMap};

use chrono::{Datelike, Days, NaiveDate};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feed::{ExceptionType, FeedBundle};

/// Longest span of dates scanned for the busiest day.
pub const MAX_HORIZON_DAYS: u64 = 370;

/// What "busiest" counts; carried into summaries.
pub const BUSIEST_DAY_BASIS: &str = "bus trip departures (frequency-expanded)";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DayServiceCount {
    pub date: NaiveDate,
    pub active_service_ids: BTreeSet<String>,
    pub trip_count: u64,
}

/// Service ids running on `date`.
pub fn active_services(feed: &FeedBundle, date: NaiveDate) -> BTreeSet<String> {
    let weekday = date.weekday().num_days_from_monday() as usize;
    let mut active: BTreeSet<String> = feed
        .calendar()
        .unwrap_or(&[])
        .iter()
        .filter(|w| w.weekdays[weekday] && w.start_date <= date && date <= w.end_date)
        .map(|w| w.service_id.clone())
        .collect();
    for ex in feed.calendar_dates().unwrap_or(&[]) {
        if ex.date != date {
            continue;
        }
        match ex.exception_type {
            ExceptionType::Removed => {
                active.remove(&ex.service_id);
            }
            ExceptionType::Added => {}
        }
    }
    // Additions win over a removal listed for the same service and date.
    for ex in feed.calendar_dates().unwrap_or(&[]) {
        if ex.date == date && ex.exception_type == ExceptionType::Added {
            active.insert(ex.service_id.clone());
        }
    }
    active
}

/// Every date the feed's calendars can touch, sorted, capped at
/// [`MAX_HORIZON_DAYS`] from the earliest.
pub fn service_horizon(feed: &FeedBundle) -> Vec<NaiveDate> {
    let mut dates = BTreeSet::new();
    let windows = feed.calendar().unwrap_or(&[]);
    let exceptions = feed.calendar_dates().unwrap_or(&[]);

    let first = windows
        .iter()
        .map(|w| w.start_date)
        .chain(exceptions.iter().map(|e| e.date))
        .min();
    let Some(first) = first else {
        return Vec::new();
    };
    let cap = first + Days::new(MAX_HORIZON_DAYS);

    if let (Some(start), Some(end)) = (
        windows.iter().map(|w| w.start_date).min(),
        windows.iter().map(|w| w.end_date).max(),
    ) {
        let end = end.min(cap.pred_opt().unwrap_or(cap));
        let mut d = start;
        while d <= end {
            dates.insert(d);
            d = d.succ_opt().expect("date overflow");
        }
    }
    dates.extend(exceptions.iter().map(|e| e.date).filter(|&d| d < cap));
    dates.into_iter().collect()
}

/// Departures per service id, counting only trips on bus routes.
pub(crate) fn bus_departures_by_service(feed: &FeedBundle) -> HashMap<&str, u64> {
    let mut by_service: HashMap<&str, u64> = HashMap::new();
    for trip in feed.trips() {
        let is_bus = feed.route(&trip.route_id).is_some_and(|r| r.is_bus());
        if is_bus {
            *by_service.entry(trip.service_id.as_str()).or_default() += feed.trip_departures(&trip.trip_id);
        }
    }
    by_service
}

pub fn day_service_counts(feed: &FeedBundle) -> Vec<DayServiceCount> {
    let by_service = bus_departures_by_service(feed);
    service_horizon(feed)
        .into_iter()
        .map(|date| {
            let active = active_services(feed, date);
            let trip_count = active
                .iter()
                .map(|s| by_service.get(s.as_str()).copied().unwrap_or(0))
                .sum();
            DayServiceCount {
                date,
                active_service_ids: active,
                trip_count,
            }
        })
        .collect()
}

/// The date with the most bus departures; earliest date wins ties.
pub fn busiest_day(feed: &FeedBundle) -> Result<(NaiveDate, u64)> {
    let mut best: Option<(NaiveDate, u64)> = None;
    for day in day_service_counts(feed) {
        if day.trip_count > best.map_or(0, |b| b.1) {
            best = Some((day.date, day.trip_count));
        }
    }
    best.ok_or(Error::NoServiceInfo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feed::parse_feed_files;
    use std::collections::HashMap as Map;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn feed(calendar: Option<&str>, dates: Option<&str>, trips: &str, freqs: Option<&str>) -> FeedBundle {
        let mut files: Map<String, Vec<u8>> = Map::new();
        files.insert("stops".into(), b"stop_id,stop_lat,stop_lon\nA,41,-87\nB,41.01,-87\n".to_vec());
        files.insert("routes".into(), b"route_id,route_type\nR,3\nTRAM,0\n".to_vec());
        let mut trip_rows = String::from("route_id,service_id,trip_id\n");
        let mut st = String::from("trip_id,stop_id,stop_sequence\n");
        for line in trips.lines() {
            let parts: Vec<&str> = line.split(',').collect();
            trip_rows.push_str(&format!("{},{},{}\n", parts[0], parts[1], parts[2]));
            st.push_str(&format!("{0},A,1\n{0},B,2\n", parts[2]));
        }
        files.insert("trips".into(), trip_rows.into_bytes());
        files.insert("stop_times".into(), st.into_bytes());
        let header = "service_id,monday,tuesday,wednesday,thursday,friday,saturday,sunday,start_date,end_date\n";
        if let Some(c) = calendar {
            files.insert("calendar".into(), format!("{header}{c}").into_bytes());
        }
        if let Some(d) = dates {
            files.insert(
                "calendar_dates".into(),
                format!("service_id,date,exception_type\n{d}").into_bytes(),
            );
        }
        if let Some(f) = freqs {
            files.insert(
                "frequencies".into(),
                format!("trip_id,start_time,end_time,headway_secs\n{f}").into_bytes(),
            );
        }
        parse_feed_files("cal", files).unwrap()
    }

    #[test]
    fn weekday_flag_and_removal() {
        let f = feed(
            Some("WK,1,1,1,1,1,0,0,20260105,20260130\n"),
            Some("WK,20260114,2\n"),
            "R,WK,T1",
            None,
        );
        assert!(active_services(&f, date("2026-01-07")).contains("WK"));
        assert!(!active_services(&f, date("2026-01-14")).contains("WK"));
        assert!(!active_services(&f, date("2026-01-10")).contains("WK"));
    }

    #[test]
    fn exception_only_service() {
        let f = feed(
            None,
            Some("X,20260301,1\nX,20260315,1\nX,20260402,1\n"),
            "R,X,T1",
            None,
        );
        let active: Vec<NaiveDate> = service_horizon(&f)
            .into_iter()
            .filter(|&d| active_services(&f, d).contains("X"))
            .collect();
        assert_eq!(
            active,
            vec![date("2026-03-01"), date("2026-03-15"), date("2026-04-02")]
        );
    }

    #[test]
    fn weekday_beats_weekend_and_ties_go_early() {
        let mut trips = String::new();
        for i in 0..10 {
            trips.push_str(&format!("R,WK,W{i}\n"));
        }
        trips.push_str("R,WE,S0\nR,WE,S1\n");
        let f = feed(
            Some("WK,1,1,1,1,1,0,0,20260103,20260131\nWE,0,0,0,0,0,1,1,20260103,20260131\n"),
            None,
            &trips,
            None,
        );
        // 2026-01-03 is a Saturday; first weekday is Monday the 5th.
        assert_eq!(busiest_day(&f).unwrap(), (date("2026-01-05"), 10));
    }

    #[test]
    fn frequency_expansion_counts() {
        let f = feed(
            Some("WK,1,1,1,1,1,0,0,20260105,20260109\n"),
            None,
            "R,WK,T1\nR,WK,T2",
            Some("T1,06:00:00,10:00:00,600\n"),
        );
        assert_eq!(busiest_day(&f).unwrap().1, 25);
    }

    #[test]
    fn non_bus_trips_ignored() {
        let f = feed(
            Some("WK,1,1,1,1,1,0,0,20260105,20260109\n"),
            None,
            "TRAM,WK,T1",
            None,
        );
        assert!(matches!(busiest_day(&f), Err(Error::NoServiceInfo)));
    }

    #[test]
    fn horizon_is_capped() {
        let f = feed(Some("WK,1,1,1,1,1,1,1,20200101,20291231\n"), None, "R,WK,T1", None);
        let h = service_horizon(&f);
        assert_eq!(h.len() as u64, MAX_HORIZON_DAYS);
        assert_eq!(h[0], date("2020-01-01"));
    }
}
