//! Review ingestion: raw Yelp-style records in, validated [`ReviewEdge`]s out.
//!
//! Two input encodings are accepted. JSON lines carry the Yelp fields
//! `user_id`, `business_id`, `stars` and `date`; any other fields (review
//! text, votes) are ignored. The CSV interchange format is
//! `user_id,business_id,stars,unix_ts` with a header row, and is also what
//! this module writes back out.
//!
//! String ids are interned into dense integer handles through an [`IdMap`],
//! which is persisted as `kind,string_id,int_id` rows so later stages resolve
//! the same handles.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = i64;

/// Header of the CSV interchange format.
pub const INTERCHANGE_HEADER: [&str; 4] = ["user_id", "business_id", "stars", "unix_ts"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BusinessId(pub u32);

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl BusinessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One user -> business review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReviewEdge {
    pub user: UserId,
    pub business: BusinessId,
    pub stars: u8,
    pub timestamp: Timestamp,
}

impl ReviewEdge {
    pub fn new(user: u32, business: u32, stars: u8, timestamp: Timestamp) -> Self {
        ReviewEdge {
            user: UserId(user),
            business: BusinessId(business),
            stars,
            timestamp,
        }
    }

    /// Ordering key used everywhere edges need a canonical order.
    pub fn sort_key(&self) -> (Timestamp, UserId, BusinessId) {
        (self.timestamp, self.user, self.business)
    }
}

/// A validated record that still carries its string ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReviewRecord {
    pub user_id: String,
    pub business_id: String,
    pub stars: u8,
    pub timestamp: Timestamp,
}

impl RawReviewRecord {
    pub fn intern(&self, ids: &mut IdMap) -> ReviewEdge {
        ReviewEdge {
            user: ids.intern_user(&self.user_id),
            business: ids.intern_business(&self.business_id),
            stars: self.stars,
            timestamp: self.timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    JsonLines,
    Csv,
}

impl RecordFormat {
    /// `.csv` files use the interchange format, everything else is JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => RecordFormat::Csv,
            _ => RecordFormat::JsonLines,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = u32::try_from(self.names.len()).expect("more than u32::MAX distinct ids");
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    fn insert_at(&mut self, name: &str, id: u32) -> std::result::Result<(), String> {
        if id as usize != self.names.len() {
            return Err(format!("id {id} for `{name}` is not dense (expected {})", self.names.len()));
        }
        if self.index.contains_key(name) {
            return Err(format!("`{name}` mapped twice"));
        }
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        Ok(())
    }
}

/// Bidirectional string <-> dense handle maps for users and businesses.
///
/// Handles are assigned in first-seen order, so interning the same sequence
/// of ids always reproduces the same map.
#[derive(Debug, Default, Clone)]
pub struct IdMap {
    users: Interner,
    businesses: Interner,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_user(&mut self, name: &str) -> UserId {
        UserId(self.users.intern(name))
    }

    pub fn intern_business(&mut self, name: &str) -> BusinessId {
        BusinessId(self.businesses.intern(name))
    }

    pub fn user(&self, name: &str) -> Option<UserId> {
        self.users.index.get(name).copied().map(UserId)
    }

    pub fn business(&self, name: &str) -> Option<BusinessId> {
        self.businesses.index.get(name).copied().map(BusinessId)
    }

    pub fn user_name(&self, id: UserId) -> Option<&str> {
        self.users.names.get(id.index()).map(String::as_str)
    }

    pub fn business_name(&self, id: BusinessId) -> Option<&str> {
        self.businesses.names.get(id.index()).map(String::as_str)
    }

    pub fn n_users(&self) -> usize {
        self.users.names.len()
    }

    pub fn n_businesses(&self) -> usize {
        self.businesses.names.len()
    }

    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["kind", "string_id", "int_id"])?;
        for (kind, interner) in [("user", &self.users), ("business", &self.businesses)] {
            for (id, name) in interner.names.iter().enumerate() {
                out.write_record([kind, name.as_str(), &id.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        if input.headers()? != vec!["kind", "string_id", "int_id"] {
            return Err(Error::Parse {
                line: 1,
                message: "id-map header must be `kind,string_id,int_id`".into(),
            });
        }
        let mut map = IdMap::new();
        for (i, row) in input.records().enumerate() {
            let row = row?;
            let line = i + 2;
            if row.len() != 3 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 3 fields, found {}", row.len()),
                });
            }
            let id: u32 = row[2].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad int_id `{}`", &row[2]),
            })?;
            let result = match &row[0] {
                "user" => map.users.insert_at(&row[1], id),
                "business" => map.businesses.insert_at(&row[1], id),
                other => Err(format!("unknown kind `{other}`")),
            };
            result.map_err(|message| Error::Validation { line, message })?;
        }
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Parses `YYYY-MM-DD` or `YYYY-MM-DD HH:MM:SS` as UTC seconds since the epoch.
pub fn parse_date(text: &str) -> Option<Timestamp> {
    let text = text.trim();
    if let Ok(dt) = NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S") {
        return Some(dt.and_utc().timestamp());
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

fn validate_stars(stars: i64, line: usize) -> Result<u8> {
    if (1..=5).contains(&stars) {
        Ok(stars as u8)
    } else {
        Err(Error::Validation {
            line,
            message: format!("stars {stars} outside [1,5]"),
        })
    }
}

fn validate_timestamp(ts: Timestamp, line: usize) -> Result<Timestamp> {
    if ts >= 0 {
        Ok(ts)
    } else {
        Err(Error::Validation {
            line,
            message: format!("negative timestamp {ts}"),
        })
    }
}

fn non_empty(value: String, field: &str, line: usize) -> Result<String> {
    if value.is_empty() {
        Err(Error::Validation {
            line,
            message: format!("empty `{field}`"),
        })
    } else {
        Ok(value)
    }
}

#[derive(Deserialize)]
struct JsonReview {
    user_id: Option<serde_json::Value>,
    business_id: Option<serde_json::Value>,
    stars: Option<serde_json::Value>,
    date: Option<serde_json::Value>,
}

fn json_string(value: Option<serde_json::Value>, field: &str, line: usize) -> Result<String> {
    match value {
        None | Some(serde_json::Value::Null) => Err(Error::Schema {
            line,
            field: field.into(),
        }),
        Some(serde_json::Value::String(s)) => non_empty(s, field, line),
        Some(other) => Err(Error::Validation {
            line,
            message: format!("`{field}` must be a string, found {other}"),
        }),
    }
}

fn json_stars(value: Option<serde_json::Value>, line: usize) -> Result<u8> {
    let value = match value {
        None | Some(serde_json::Value::Null) => {
            return Err(Error::Schema {
                line,
                field: "stars".into(),
            })
        }
        Some(v) => v,
    };
    let stars = match &value {
        serde_json::Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        _ => None,
    };
    match stars {
        Some(s) => validate_stars(s, line),
        None => Err(Error::Validation {
            line,
            message: format!("stars `{value}` is not an integer"),
        }),
    }
}

fn parse_json_record(line: &str, line_no: usize) -> Result<RawReviewRecord> {
    let raw: JsonReview = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let user_id = json_string(raw.user_id, "user_id", line_no)?;
    let business_id = json_string(raw.business_id, "business_id", line_no)?;
    let stars = json_stars(raw.stars, line_no)?;
    let date = json_string(raw.date, "date", line_no)?;
    let timestamp = parse_date(&date).ok_or_else(|| Error::Validation {
        line: line_no,
        message: format!("unparseable date `{date}`"),
    })?;
    Ok(RawReviewRecord {
        user_id,
        business_id,
        stars,
        timestamp: validate_timestamp(timestamp, line_no)?,
    })
}

fn parse_csv_fields(record: &csv::StringRecord, line_no: usize) -> Result<RawReviewRecord> {
    if record.len() > INTERCHANGE_HEADER.len() {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected 4 fields, found {}", record.len()),
        });
    }
    let field = |i: usize| {
        record.get(i).ok_or_else(|| Error::Schema {
            line: line_no,
            field: INTERCHANGE_HEADER[i].into(),
        })
    };
    let user_id = non_empty(field(0)?.to_owned(), "user_id", line_no)?;
    let business_id = non_empty(field(1)?.to_owned(), "business_id", line_no)?;
    let stars_text = field(2)?;
    let stars: i64 = stars_text.trim().parse().map_err(|_| Error::Validation {
        line: line_no,
        message: format!("stars `{stars_text}` is not an integer"),
    })?;
    let ts_text = field(3)?;
    let timestamp: Timestamp = ts_text.trim().parse().map_err(|_| Error::Validation {
        line: line_no,
        message: format!("unix_ts `{ts_text}` is not an integer"),
    })?;
    Ok(RawReviewRecord {
        user_id,
        business_id,
        stars: validate_stars(stars, line_no)?,
        timestamp: validate_timestamp(timestamp, line_no)?,
    })
}

/// Parses and validates one input line without interning its ids.
pub fn parse_record(line: &str, line_no: usize, format: RecordFormat) -> Result<RawReviewRecord> {
    match format {
        RecordFormat::JsonLines => parse_json_record(line, line_no),
        RecordFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(line.as_bytes());
            let mut record = csv::StringRecord::new();
            let found = reader.read_record(&mut record).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if !found {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty line".into(),
                });
            }
            parse_csv_fields(&record, line_no)
        }
    }
}

/// Parses one line and interns its ids into `ids`.
pub fn parse_review_line(
    line: &str,
    line_no: usize,
    format: RecordFormat,
    ids: &mut IdMap,
) -> Result<ReviewEdge> {
    parse_record(line, line_no, format).map(|r| r.intern(ids))
}

/// Reads every record of one file. Blank JSON lines are skipped.
pub fn read_records<R: Read>(reader: R, format: RecordFormat) -> Result<Vec<RawReviewRecord>> {
    match format {
        RecordFormat::JsonLines => {
            let mut out = Vec::new();
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                out.push(parse_json_record(&line, i + 1)?);
            }
            Ok(out)
        }
        RecordFormat::Csv => {
            let mut input = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
            let header = input.headers()?.clone();
            if header.iter().map(str::trim).ne(INTERCHANGE_HEADER) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("header must be `{}`", INTERCHANGE_HEADER.join(",")),
                });
            }
            let mut out = Vec::new();
            let mut record = csv::StringRecord::new();
            let mut line = 1;
            loop {
                line += 1;
                let more = input.read_record(&mut record).map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
                if !more {
                    break;
                }
                out.push(parse_csv_fields(&record, line)?);
            }
            Ok(out)
        }
    }
}

/// Parses several files concurrently. Results keep the order of `paths`, so
/// interning afterwards is deterministic.
pub fn load_records(paths: &[PathBuf]) -> Result<Vec<Vec<RawReviewRecord>>> {
    paths
        .par_iter()
        .map(|path| {
            let file = File::open(path).map_err(|e| Error::format(path, e.to_string()))?;
            read_records(file, RecordFormat::from_path(path)).map_err(|e| match e {
                Error::Io(io) => Error::format(path, io.to_string()),
                other => Error::format(path, other.to_string()),
            })
        })
        .collect()
}

/// Edges with `timestamp >= cutoff`, in their original order.
/// Pass `Timestamp::MIN` for no cutoff.
pub fn filter_by_date<I>(edges: I, cutoff: Timestamp) -> impl Iterator<Item = ReviewEdge>
where
    I: IntoIterator<Item = ReviewEdge>,
{
    edges.into_iter().filter(move |e| e.timestamp >= cutoff)
}

/// Collapses repeated (user, business) reviews to the most recent one.
///
/// Equal timestamps resolve to the later edge in input order. Survivors keep
/// the relative order of their positions in the input.
pub fn dedupe_edges(edges: Vec<ReviewEdge>) -> Vec<ReviewEdge> {
    let mut winner: HashMap<(UserId, BusinessId), usize> = HashMap::with_capacity(edges.len());
    for (i, e) in edges.iter().enumerate() {
        winner
            .entry((e.user, e.business))
            .and_modify(|w| {
                if e.timestamp >= edges[*w].timestamp {
                    *w = i;
                }
            })
            .or_insert(i);
    }
    let mut keep: Vec<usize> = winner.into_values().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| edges[i]).collect()
}

/// Canonical (timestamp, user, business) order.
pub fn sort_edges(edges: &mut [ReviewEdge]) {
    edges.sort_unstable_by_key(ReviewEdge::sort_key);
}

/// Writes edges in the CSV interchange format using string ids from `ids`.
pub fn write_interchange<W: Write>(writer: W, edges: &[ReviewEdge], ids: &IdMap) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(INTERCHANGE_HEADER)?;
    for e in edges {
        let user = ids
            .user_name(e.user)
            .ok_or_else(|| Error::lookup("user", e.user.0))?;
        let business = ids
            .business_name(e.business)
            .ok_or_else(|| Error::lookup("business", e.business.0))?;
        out.write_record([user, business, &e.stars.to_string(), &e.timestamp.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the CSV interchange format, interning ids into `ids`.
pub fn read_interchange<R: Read>(reader: R, ids: &mut IdMap) -> Result<Vec<ReviewEdge>> {
    Ok(read_records(reader, RecordFormat::Csv)?
        .iter()
        .map(|r| r.intern(ids))
        .collect())
}
