//! Feed catalog lookup and download.
//!
//! Reads a Mobility Database style catalog (CSV, from a URL or a local
//! snapshot), filters it by provider, urbanized area, or state, and
//! downloads feeds into a directory with a checksum manifest. Nothing else
//! in the crate depends on this module.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_CATALOG_URL: &str = "https://files.mobilitydatabase.org/feeds_v2.csv";
/// Overrides the catalog source (URL or local snapshot path).
pub const CATALOG_ENV: &str = "BUS_SPACING_CATALOG";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const DEFAULT_PARALLELISM: usize = 4;

static MANIFEST_LOCK: Mutex<()> = Mutex::new(());

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CatalogEntry {
    pub id: String,
    pub provider: String,
    pub country: String,
    pub state: String,
    pub urbanized_area: String,
    pub url: String,
}

impl CatalogEntry {
    pub fn is_downloadable(&self) -> bool {
        !self.url.trim().is_empty()
    }
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| {
        let h = h.trim().trim_start_matches('\u{feff}');
        names.iter().any(|n| h.eq_ignore_ascii_case(n))
    })
}

/// Parses catalog CSV. Non-GTFS-schedule rows (e.g. realtime) are skipped
/// when a `data_type` column is present.
pub fn parse_catalog(reader: impl Read) -> Result<Vec<CatalogEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedCatalog(e.to_string()))?
        .clone();
    let need = |names: &[&str]| {
        column(&headers, names).ok_or_else(|| Error::MalformedCatalog(format!("no {} column", names[0])))
    };
    let id = need(&["mdb_source_id", "id"])?;
    let provider = need(&["provider"])?;
    let url = need(&["urls.direct_download", "direct_download", "url"])?;
    let latest = column(&headers, &["urls.latest"]);
    let country = column(&headers, &["location.country_code", "country_code", "country"]);
    let state = column(&headers, &["location.subdivision_name", "subdivision_name", "state"]);
    let area = column(&headers, &["location.municipality", "municipality", "urbanized_area"]);
    let data_type = column(&headers, &["data_type"]);

    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::MalformedCatalog(e.to_string()))?;
        let get = |c: Option<usize>| c.and_then(|c| rec.get(c)).unwrap_or("").to_string();
        if let Some(kind) = data_type.and_then(|c| rec.get(c)) {
            if !kind.eq_ignore_ascii_case("gtfs") {
                continue;
            }
        }
        let mut download = get(Some(url));
        if download.is_empty() {
            download = get(latest);
        }
        entries.push(CatalogEntry {
            id: get(Some(id)),
            provider: get(Some(provider)),
            country: get(country),
            state: get(state),
            urbanized_area: get(area),
            url: download,
        });
    }
    Ok(entries)
}

fn http_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

/// Loads the catalog from an `http(s)` URL or a local file.
pub fn fetch_catalog(source: &str) -> Result<Vec<CatalogEntry>> {
    if source.starts_with("http://") || source.starts_with("https://") {
        let bytes = http_get(&http_agent(Duration::from_secs(60)), source, &DownloadOptions::default())?;
        parse_catalog(bytes.as_slice())
    } else {
        let file = std::fs::File::open(source).map_err(|e| Error::io(source, e))?;
        parse_catalog(file)
    }
}

/// Catalog source: the override variable if set, else the public catalog.
pub fn default_catalog_source() -> String {
    std::env::var(CATALOG_ENV).unwrap_or_else(|_| DEFAULT_CATALOG_URL.to_string())
}

const US_STATES: [(&str, &str); 51] = [
    ("AL", "Alabama"), ("AK", "Alaska"), ("AZ", "Arizona"), ("AR", "Arkansas"),
    ("CA", "California"), ("CO", "Colorado"), ("CT", "Connecticut"), ("DE", "Delaware"),
    ("DC", "District of Columbia"), ("FL", "Florida"), ("GA", "Georgia"), ("HI", "Hawaii"),
    ("ID", "Idaho"), ("IL", "Illinois"), ("IN", "Indiana"), ("IA", "Iowa"),
    ("KS", "Kansas"), ("KY", "Kentucky"), ("LA", "Louisiana"), ("ME", "Maine"),
    ("MD", "Maryland"), ("MA", "Massachusetts"), ("MI", "Michigan"), ("MN", "Minnesota"),
    ("MS", "Mississippi"), ("MO", "Missouri"), ("MT", "Montana"), ("NE", "Nebraska"),
    ("NV", "Nevada"), ("NH", "New Hampshire"), ("NJ", "New Jersey"), ("NM", "New Mexico"),
    ("NY", "New York"), ("NC", "North Carolina"), ("ND", "North Dakota"), ("OH", "Ohio"),
    ("OK", "Oklahoma"), ("OR", "Oregon"), ("PA", "Pennsylvania"), ("RI", "Rhode Island"),
    ("SC", "South Carolina"), ("SD", "South Dakota"), ("TN", "Tennessee"), ("TX", "Texas"),
    ("UT", "Utah"), ("VT", "Vermont"), ("VA", "Virginia"), ("WA", "Washington"),
    ("WV", "West Virginia"), ("WI", "Wisconsin"), ("WY", "Wyoming"),
];

fn state_matches(wanted: &str, actual: &str) -> bool {
    let (wanted, actual) = (wanted.trim(), actual.trim());
    if wanted.eq_ignore_ascii_case(actual) {
        return true;
    }
    // Accept a postal code for a spelled-out name and vice versa.
    US_STATES.iter().any(|(code, name)| {
        (code.eq_ignore_ascii_case(wanted) && name.eq_ignore_ascii_case(actual))
            || (name.eq_ignore_ascii_case(wanted) && code.eq_ignore_ascii_case(actual))
    })
}

/// Case-insensitive exact-match selectors; unset fields match everything.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CatalogFilter {
    pub provider: Option<String>,
    pub urbanized_area: Option<String>,
    pub state: Option<String>,
}

impl CatalogFilter {
    pub fn matches(&self, entry: &CatalogEntry) -> bool {
        let eq = |want: &Option<String>, have: &str| {
            want.as_deref()
                .is_none_or(|w| w.trim().eq_ignore_ascii_case(have.trim()))
        };
        eq(&self.provider, &entry.provider)
            && eq(&self.urbanized_area, &entry.urbanized_area)
            && self.state.as_deref().is_none_or(|s| state_matches(s, &entry.state))
    }

    pub fn apply(&self, entries: &[CatalogEntry]) -> Vec<CatalogEntry> {
        entries.iter().filter(|e| self.matches(e)).cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownloadOptions {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for DownloadOptions {
    fn default() -> Self {
        DownloadOptions {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(300),
        }
    }
}

fn http_get(agent: &ureq::Agent, url: &str, opts: &DownloadOptions) -> Result<Vec<u8>> {
    let mut backoff = opts.initial_backoff;
    let mut last = Error::NetworkUnavailable(format!("no attempt made for {url}"));
    for attempt in 1..=opts.attempts.max(1) {
        if attempt > 1 {
            std::thread::sleep(backoff);
            backoff *= 2;
        }
        match agent.get(url).call() {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if resp.status().is_success() {
                    return resp
                        .body_mut()
                        .with_config()
                        .limit(u64::MAX)
                        .read_to_vec()
                        .map_err(|e| Error::NetworkUnavailable(e.to_string()));
                }
                last = Error::HttpError(status);
                if status < 500 {
                    return Err(last);
                }
            }
            Err(e) => {
                log::warn!("GET {url} failed (attempt {attempt}): {e}");
                last = Error::NetworkUnavailable(e.to_string());
            }
        }
    }
    Err(last)
}

fn is_zip(bytes: &[u8]) -> bool {
    bytes.starts_with(b"PK\x03\x04") || bytes.starts_with(b"PK\x05\x06")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DownloadRecord {
    pub entry_id: String,
    pub url: String,
    pub path: PathBuf,
    pub sha256: String,
    pub downloaded_at: String,
}

fn file_name_for(entry: &CatalogEntry) -> String {
    let safe: String = entry
        .id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("mdb-{safe}.zip")
}

/// Downloads one feed into `dest_dir`, replacing any previous copy
/// atomically, and records it in the manifest.
pub fn download_feed(entry: &CatalogEntry, dest_dir: &Path, opts: &DownloadOptions) -> Result<DownloadRecord> {
    if !entry.is_downloadable() {
        return Err(Error::InvalidParameter(format!(
            "catalog entry {} has no download URL",
            entry.id
        )));
    }
    let bytes = http_get(&http_agent(opts.timeout), &entry.url, opts)?;
    if !is_zip(&bytes) {
        return Err(Error::NotAZip);
    }
    std::fs::create_dir_all(dest_dir).map_err(|e| Error::io(dest_dir, e))?;
    let name = file_name_for(entry);
    let path = dest_dir.join(&name);
    let part = dest_dir.join(format!(".{name}.part"));
    std::fs::write(&part, &bytes).map_err(|e| Error::io(&part, e))?;
    std::fs::rename(&part, &path).map_err(|e| Error::io(&path, e))?;

    let record = DownloadRecord {
        entry_id: entry.id.clone(),
        url: entry.url.clone(),
        path,
        sha256: hex::encode(Sha256::digest(&bytes)),
        downloaded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    update_manifest(dest_dir, &record)?;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Deserialize, Serialize)]
pub struct ManifestRow {
    pub entry_id: String,
    pub url: String,
    pub sha256: String,
    pub downloaded_at: String,
}

pub fn read_manifest(dest_dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dest_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::Csv {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<ManifestRow>, _>>()
        .map_err(|e| Error::Csv {
            file: path.display().to_string(),
            message: e.to_string(),
        })
}

fn update_manifest(dest_dir: &Path, record: &DownloadRecord) -> Result<()> {
    let _guard = MANIFEST_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let mut rows: BTreeMap<String, ManifestRow> = read_manifest(dest_dir)?
        .into_iter()
        .map(|r| (r.entry_id.clone(), r))
        .collect();
    rows.insert(
        record.entry_id.clone(),
        ManifestRow {
            entry_id: record.entry_id.clone(),
            url: record.url.clone(),
            sha256: record.sha256.clone(),
            downloaded_at: record.downloaded_at.clone(),
        },
    );
    let path = dest_dir.join(MANIFEST_FILE);
    let part = dest_dir.join(format!(".{MANIFEST_FILE}.part"));
    let csv_err = |e: csv::Error| Error::Csv {
        file: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&part).map_err(csv_err)?;
    for row in rows.values() {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&part, e))?;
    drop(w);
    std::fs::rename(&part, &path).map_err(|e| Error::io(&path, e))
}

/// Downloads several feeds with at most `parallelism` in flight. Results
/// come back in input order.
pub fn download_all(
    entries: &[CatalogEntry],
    dest_dir: &Path,
    opts: &DownloadOptions,
    parallelism: usize,
) -> Vec<(String, Result<DownloadRecord>)> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<DownloadRecord>>>> =
        Mutex::new((0..entries.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, entries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(entry) = entries.get(i) else { break };
                let r = download_feed(entry, dest_dir, opts);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    entries
        .iter()
        .zip(results.into_inner().unwrap())
        .map(|(e, r)| (e.id.clone(), r.expect("every entry attempted")))
        .collect()
}
