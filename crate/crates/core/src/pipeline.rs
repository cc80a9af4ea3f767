//! End-to-end helpers shared by the CLI and library users.

use std::path::Path;

use chrono::NaiveDate;

use crate::calendar::busiest_day;
use crate::error::Result;
use crate::feed::{parse_feed, FeedBundle};
use crate::segmenter::{extract_segments, SegmentTable};

#[derive(Clone, Debug)]
pub struct FeedRun {
    pub feed: FeedBundle,
    pub measurement_date: NaiveDate,
    /// Bus departures on the measurement date.
    pub departures: Option<u64>,
    pub table: SegmentTable,
}

/// Parses a feed and builds its segment table for `date`, or for the
/// busiest day when no date is given.
pub fn segment_feed(source: impl AsRef<Path>, date: Option<NaiveDate>) -> Result<FeedRun> {
    let feed = parse_feed(source)?;
    let (measurement_date, departures) = match date {
        Some(d) => (d, None),
        None => {
            let (d, n) = busiest_day(&feed)?;
            (d, Some(n))
        }
    };
    let table = extract_segments(&feed, measurement_date)?;
    Ok(FeedRun {
        feed,
        measurement_date,
        departures,
        table,
    })
}

/// A feed is usable when it parses and at least one bus trip yields segments.
pub fn is_usable_feed(source: impl AsRef<Path>) -> bool {
    segment_feed(source, None).is_ok_and(|run| !run.table.is_empty())
}
