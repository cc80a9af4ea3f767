//! Command-line front end. All computation goes through the library API.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::export::{
    export_segments, summary_text, write_ecdf_csv, write_geometric_fit_csv, write_histogram_csv, write_kde_csv,
    write_signal_counts_csv, ExportFormat,
};
use crate::ingest::{
    default_catalog_source, download_all, fetch_catalog, CatalogFilter, DownloadOptions, DEFAULT_PARALLELISM,
};
use crate::pipeline::{segment_feed, FeedRun};
use crate::signals::{fit_geometric_mle, signals_per_segment, SignalSet, DEFAULT_BUFFER_M};
use crate::stats::{
    build_weights, histogram, kde, kde_grid, summarize, weighted_ecdf, LoadMap, WeightedSpacings, WeightingScheme,
    DEFAULT_THRESHOLD_M,
};

#[derive(Debug, Parser)]
#[command(name = "bus-spacing", version, about = "Bus stop spacing statistics from GTFS feeds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the segment table as CSV and/or GeoJSON.
    Segments {
        #[command(flatten)]
        feeds: FeedArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Both)]
        format: FormatArg,
    },
    /// Print weighted mean spacings and feed totals.
    Summary {
        #[command(flatten)]
        feeds: FeedArgs,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long)]
        loads: Option<PathBuf>,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Weighted cumulative distribution of spacings.
    Ecdf {
        #[command(flatten)]
        feeds: FeedArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weighted histogram of spacings.
    Hist {
        #[command(flatten)]
        feeds: FeedArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long, default_value_t = 50.0, value_parser = positive)]
        bin_width: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weighted Gaussian kernel density of spacings.
    Kde {
        #[command(flatten)]
        feeds: FeedArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(2..))]
        grid_points: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count traffic signals near each segment and fit a geometric distribution.
    Signals {
        #[command(flatten)]
        feeds: FeedArgs,
        #[arg(long)]
        signals: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BUFFER_M, value_parser = positive)]
        buffer: f64,
        #[arg(long, default_value = "traversal", value_parser = parse_scheme)]
        scheme: WeightingScheme,
        #[arg(long)]
        loads: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Download feeds listed in a catalog.
    Download {
        /// Catalog URL or local snapshot; defaults to $BUS_SPACING_CATALOG or
        /// the public catalog.
        #[arg(long)]
        catalog: Option<String>,
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        urbanized_area: Option<String>,
        #[arg(long)]
        state: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PARALLELISM, value_parser = clap::value_parser!(usize))]
        parallel: usize,
        /// Only list matching entries.
        #[arg(long)]
        list: bool,
    },
}

#[derive(Debug, Args)]
struct FeedArgs {
    /// GTFS zip or directory; repeatable.
    #[arg(long = "gtfs", required = true, num_args = 1..)]
    gtfs: Vec<PathBuf>,
    /// Measurement date (YYYY-MM-DD); defaults to the busiest day.
    #[arg(long)]
    date: Option<NaiveDate>,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Ignore segments longer than this many meters.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_M, value_parser = positive)]
    threshold: f64,
    /// Keep every segment regardless of length.
    #[arg(long, conflicts_with = "threshold")]
    no_threshold: bool,
}

impl ThresholdArgs {
    fn meters(&self) -> f64 {
        if self.no_threshold {
            f64::INFINITY
        } else {
            self.threshold
        }
    }
}

#[derive(Debug, Args)]
struct WeightArgs {
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[arg(long, default_value = "traversal", value_parser = parse_scheme)]
    scheme: WeightingScheme,
    /// stop_id1,stop_id2,avg_load file for load weighting.
    #[arg(long)]
    loads: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Geojson,
    Both,
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn parse_scheme(s: &str) -> std::result::Result<WeightingScheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Runs the CLI with process stdio. Returns the exit code: 0 on success,
/// 1 for domain errors, 2 for usage errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_cli_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn load_map(path: Option<&Path>) -> Result<Option<LoadMap>> {
    path.map(LoadMap::from_path).transpose()
}

/// Runs the pipeline for every input concurrently, keeping input order.
fn run_feeds(feeds: &FeedArgs) -> Result<Vec<FeedRun>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = feeds
            .gtfs
            .iter()
            .map(|p| s.spawn(move || segment_feed(p, feeds.date)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("feed worker panicked"))
            .collect()
    })
}

fn weights_for(run: &FeedRun, args: &WeightArgs, loads: Option<&LoadMap>) -> Result<WeightedSpacings> {
    build_weights(&run.table, args.scheme, args.threshold.meters(), loads)
}

/// Writes `body` to `dir/name` when a directory is given, else to `out`.
fn emit(
    out: &mut dyn Write,
    dir: Option<&Path>,
    name: String,
    multiple: bool,
    body: Vec<u8>,
) -> Result<()> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        }
        None => {
            if multiple {
                writeln!(out, "# {name}").map_err(|e| Error::io("<stdout>", e))?;
            }
            out.write_all(&body).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Segments { feeds, out: dir, format } => {
            let runs = run_feeds(&feeds)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let formats: &[ExportFormat] = match format {
                FormatArg::Csv => &[ExportFormat::Delimited],
                FormatArg::Geojson => &[ExportFormat::GeoJson],
                FormatArg::Both => &[ExportFormat::Delimited, ExportFormat::GeoJson],
            };
            for run in &runs {
                for f in formats {
                    let path = dir.join(format!("{}_segments.{}", run.table.feed_id, f.extension()));
                    export_segments(&run.table, &path, *f)?;
                }
                log::info!(
                    "{}: {} rows for {}",
                    run.table.feed_id,
                    run.table.rows.len(),
                    run.measurement_date
                );
            }
            Ok(())
        }
        Command::Summary {
            feeds,
            threshold,
            loads,
            json,
        } => {
            let loads = load_map(loads.as_deref())?;
            let runs = run_feeds(&feeds)?;
            let summaries = runs
                .iter()
                .map(|r| summarize(&r.table, threshold.meters(), loads.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            let write_err = |e| Error::io("<stdout>", e);
            if json {
                serde_json::to_writer_pretty(&mut *out, &summaries)?;
                writeln!(out).map_err(write_err)?;
            } else {
                for (i, s) in summaries.iter().enumerate() {
                    if i > 0 {
                        writeln!(out).map_err(write_err)?;
                    }
                    out.write_all(summary_text(s).as_bytes()).map_err(write_err)?;
                }
            }
            Ok(())
        }
        Command::Ecdf { feeds, weights, out: dir } => {
            let loads = load_map(weights.loads.as_deref())?;
            let runs = run_feeds(&feeds)?;
            for run in &runs {
                let ecdf = weighted_ecdf(&weights_for(run, &weights, loads.as_ref())?)?;
                let mut body = Vec::new();
                write_ecdf_csv(&ecdf, &mut body)?;
                let name = format!("{}_ecdf_{}.csv", run.table.feed_id, weights.scheme);
                emit(out, dir.as_deref(), name, runs.len() > 1, body)?;
            }
            Ok(())
        }
        Command::Hist {
            feeds,
            weights,
            bin_width,
            out: dir,
        } => {
            let loads = load_map(weights.loads.as_deref())?;
            let runs = run_feeds(&feeds)?;
            for run in &runs {
                let bins = histogram(&weights_for(run, &weights, loads.as_ref())?, bin_width)?;
                let mut body = Vec::new();
                write_histogram_csv(&bins, &mut body)?;
                let name = format!("{}_hist_{}.csv", run.table.feed_id, weights.scheme);
                emit(out, dir.as_deref(), name, runs.len() > 1, body)?;
            }
            Ok(())
        }
        Command::Kde {
            feeds,
            weights,
            grid_points,
            out: dir,
        } => {
            let loads = load_map(weights.loads.as_deref())?;
            let runs = run_feeds(&feeds)?;
            for run in &runs {
                let ws = weights_for(run, &weights, loads.as_ref())?;
                let grid = kde_grid(&ws, grid_points as usize)?;
                let density = kde(&ws, &grid)?;
                let mut body = Vec::new();
                write_kde_csv(&density, &mut body)?;
                let name = format!("{}_kde_{}.csv", run.table.feed_id, weights.scheme);
                emit(out, dir.as_deref(), name, runs.len() > 1, body)?;
            }
            Ok(())
        }
        Command::Signals {
            feeds,
            signals,
            buffer,
            scheme,
            loads,
            out: dir,
        } => {
            let loads = load_map(loads.as_deref())?;
            let signal_set = SignalSet::from_path(&signals)?;
            let runs = run_feeds(&feeds)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for run in &runs {
                let counts = signals_per_segment(&run.table, &signal_set, buffer)?;
                let fit = fit_geometric_mle(&counts, scheme, loads.as_ref())?;
                let id = &run.table.feed_id;
                let mut body = Vec::new();
                write_signal_counts_csv(&counts, &mut body)?;
                emit(out, Some(&dir), format!("{id}_signal_counts.csv"), false, body)?;
                let mut body = Vec::new();
                write_geometric_fit_csv(&fit, &mut body)?;
                emit(out, Some(&dir), format!("{id}_signal_fit_{scheme}.csv"), false, body)?;
            }
            Ok(())
        }
        Command::Download {
            catalog,
            provider,
            urbanized_area,
            state,
            out: dir,
            parallel,
            list,
        } => {
            let source = catalog.unwrap_or_else(default_catalog_source);
            let entries = fetch_catalog(&source)?;
            let filter = CatalogFilter {
                provider,
                urbanized_area,
                state,
            };
            let selected = filter.apply(&entries);
            let write_err = |e| Error::io("<stdout>", e);
            let (ready, flagged): (Vec<_>, Vec<_>) = selected.into_iter().partition(|e| e.is_downloadable());
            for e in &flagged {
                writeln!(out, "skip\t{}\t{}\tno download URL", e.id, e.provider).map_err(write_err)?;
            }
            if list {
                for e in &ready {
                    writeln!(out, "{}\t{}\t{}\t{}", e.id, e.provider, e.state, e.url).map_err(write_err)?;
                }
                return Ok(());
            }
            let mut failures = 0;
            for (id, result) in download_all(&ready, &dir, &DownloadOptions::default(), parallel) {
                match result {
                    Ok(rec) => writeln!(out, "ok\t{id}\t{}\t{}", rec.sha256, rec.path.display()),
                    Err(e) => {
                        failures += 1;
                        writeln!(out, "failed\t{id}\t{e}")
                    }
                }
                .map_err(write_err)?;
            }
            if failures > 0 && failures == ready.len() {
                return Err(Error::NetworkUnavailable(format!("all {failures} downloads failed")));
            }
            Ok(())
        }
    }
}
