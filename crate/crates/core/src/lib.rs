//! Bus stop spacing statistics from GTFS feeds.
//!
//! The pipeline reads a feed ([`feed`]), picks its busiest service day
//! ([`calendar`]), cuts every bus trip into stop-to-stop segments along its
//! shape ([`segmenter`]), and summarises spacings under segment, route,
//! traversal, or load weighting ([`stats`]). [`signals`] swaps distance for
//! the number of traffic signals along a segment. [`export`] and [`cli`]
//! handle output; [`ingest`] optionally fetches feeds from a catalog.

pub mod calendar;
pub mod cli;
pub mod error;
pub mod export;
pub mod feed;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod segmenter;
pub mod signals;
pub mod stats;

pub use error::{Error, Result};
pub use feed::{parse_feed, FeedBundle};
pub use geometry::{GeoPoint, Path};
pub use pipeline::{segment_feed, FeedRun};
pub use segmenter::{extract_segments, SegmentRow, SegmentTable};
pub use stats::{LoadMap, SpacingSummary, WeightingScheme};
