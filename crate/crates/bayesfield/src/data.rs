//! Table ingestion, time-grid encoding, and train/test splits.
//!
//! Input data is a long-format delimited table: one row per (location,
//! timestamp) with fixed spatial coordinates per location and an optional
//! value (empty or `NA` marks a missing observation). Encoding maps
//! timestamps onto an integer-stepped time axis anchored at the earliest
//! timestamp, with gaps preserved; evaluation splits hold out the most
//! recent fraction of observations per location.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Frequency, SpaceTimeIndex};

/// Fraction of each location's observations held out by default.
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.1;

/// Column names and delimiter of a raw table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSchema {
    pub location: String,
    pub coords: Vec<String>,
    pub timestamp: String,
    pub value: String,
    pub delimiter: char,
}

impl Default for TableSchema {
    fn default() -> Self {
        TableSchema {
            location: "location".into(),
            coords: vec!["s1".into(), "s2".into()],
            timestamp: "timestamp".into(),
            value: "value".into(),
            delimiter: ',',
        }
    }
}

/// One parsed table row; `value: None` marks a missing observation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRow {
    pub location: String,
    pub coords: Vec<f64>,
    pub timestamp: NaiveDateTime,
    pub value: Option<f64>,
}

/// A validated long-format table: unique (location, timestamp) keys and
/// constant coordinates per location.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawTable {
    pub rows: Vec<RawRow>,
}

impl RawTable {
    /// Spatial dimension, taken from the first row.
    pub fn dims(&self) -> usize {
        self.rows.first().map_or(0, |r| r.coords.len())
    }
}

/// Parses an ISO-8601 date or datetime (`T` or space separator).
pub fn parse_timestamp(text: &str) -> Result<NaiveDateTime> {
    if let Ok(dt) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S") {
        return Ok(dt);
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S") {
        return Ok(dt);
    }
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight is valid"));
    }
    Err(Error::invalid(
        "timestamp",
        format!("{text:?} is not an ISO-8601 date or datetime"),
    ))
}

/// Formats a timestamp as an ISO-8601 date, or datetime when it carries a
/// time of day.
pub fn format_timestamp(ts: NaiveDateTime) -> String {
    if ts.time() == chrono::NaiveTime::MIN {
        ts.format("%Y-%m-%d").to_string()
    } else {
        ts.format("%Y-%m-%dT%H:%M:%S").to_string()
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Loads and validates a delimited table.
///
/// The header row is required and must contain every column the schema
/// names. Empty and `NA` value cells are retained as missing rows.
pub fn load_table(path: &Path, schema: &TableSchema) -> Result<RawTable> {
    load_table_impl(path, schema, true)
}

/// Loads a query table: like [`load_table`], except the value column may
/// be absent from the header, in which case every row is read as missing.
/// Prediction queries name indices, not observations.
pub fn load_query_table(path: &Path, schema: &TableSchema) -> Result<RawTable> {
    load_table_impl(path, schema, false)
}

fn load_table_impl(path: &Path, schema: &TableSchema, require_value: bool) -> Result<RawTable> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::invalid("table schema", "delimiter must be ASCII"));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, 1, format!("missing column {name:?}")))
    };
    let col_location = column(&schema.location)?;
    let col_timestamp = column(&schema.timestamp)?;
    let col_value = if require_value {
        Some(column(&schema.value)?)
    } else {
        headers.iter().position(|h| h == schema.value)
    };
    let col_coords = schema
        .coords
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<usize>>>()?;

    let mut rows = Vec::new();
    let mut seen: HashMap<(String, NaiveDateTime), usize> = HashMap::new();
    let mut coords_of: HashMap<String, (Vec<f64>, usize)> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |idx: usize| -> Result<&str> {
            record
                .get(idx)
                .ok_or_else(|| parse_err(path, line, "row is shorter than the header"))
        };

        let location = field(col_location)?.to_string();
        if location.is_empty() {
            return Err(parse_err(path, line, "empty location id"));
        }
        let timestamp = parse_timestamp(field(col_timestamp)?)
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        let coords = col_coords
            .iter()
            .map(|&idx| {
                let text = field(idx)?;
                text.parse::<f64>().map_err(|_| {
                    parse_err(path, line, format!("invalid coordinate {text:?}"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let value = match col_value {
            None => None,
            Some(idx) => {
                let raw_value = field(idx)?;
                if raw_value.is_empty() || raw_value == "NA" {
                    None
                } else {
                    Some(raw_value.parse::<f64>().map_err(|_| {
                        parse_err(path, line, format!("invalid value {raw_value:?}"))
                    })?)
                }
            }
        };

        if let Some(&first) = seen.get(&(location.clone(), timestamp)) {
            return Err(Error::DuplicateObservation {
                location,
                timestamp: format_timestamp(timestamp),
                first_row: first,
                second_row: line,
            });
        }
        seen.insert((location.clone(), timestamp), line);
        match coords_of.get(&location) {
            Some((expected, first)) if *expected != coords => {
                return Err(parse_err(
                    path,
                    line,
                    format!(
                        "coordinates for location {location:?} differ from line {first}"
                    ),
                ));
            }
            Some(_) => {}
            None => {
                coords_of.insert(location.clone(), (coords.clone(), line));
            }
        }
        rows.push(RawRow {
            location,
            coords,
            timestamp,
            value,
        });
    }
    Ok(RawTable { rows })
}

/// Writes a table in the schema's column layout; missing values export as
/// empty cells.
pub fn save_table(table: &RawTable, path: &Path, schema: &TableSchema) -> Result<()> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::invalid("table schema", "delimiter must be ASCII"));
    }
    if table.dims() != schema.coords.len() && !table.rows.is_empty() {
        return Err(Error::dim(
            "schema coordinate columns",
            table.dims(),
            schema.coords.len(),
        ));
    }
    let mut writer = csv::WriterBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_writer(Vec::new());
    let mut header = vec![schema.location.clone()];
    header.extend(schema.coords.iter().cloned());
    header.push(schema.timestamp.clone());
    header.push(schema.value.clone());
    writer
        .write_record(&header)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for row in &table.rows {
        let mut fields = vec![row.location.clone()];
        fields.extend(row.coords.iter().map(|c| c.to_string()));
        fields.push(format_timestamp(row.timestamp));
        fields.push(row.value.map_or(String::new(), |v| v.to_string()));
        writer
            .write_record(&fields)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    crate::config::atomic_write(path, &bytes)
}

/// A registered location: its id and fixed spatial coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub coords: Vec<f64>,
}

/// One observed record on the encoded time grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    /// Index into the dataset's location registry.
    pub location: usize,
    /// Whole number of frequency steps since the origin.
    pub time: f64,
    pub y: f64,
}

/// Observed records on a regular time grid, plus the location registry and
/// the grid's anchor (origin timestamp and step frequency).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub frequency: Frequency,
    pub origin: NaiveDateTime,
    pub locations: Vec<Location>,
    pub records: Vec<DataRecord>,
}

fn months_per_step(frequency: Frequency) -> Option<i64> {
    match frequency {
        Frequency::Monthly => Some(1),
        Frequency::Quarterly => Some(3),
        Frequency::Yearly => Some(12),
        _ => None,
    }
}

/// Integer grid step of `ts` relative to `origin` at the given frequency.
/// Steps before the origin are negative; off-grid timestamps are errors.
pub fn step_of(origin: NaiveDateTime, ts: NaiveDateTime, frequency: Frequency) -> Result<i64> {
    let off_grid = || {
        Error::invalid(
            "timestamp",
            format!(
                "{} is off-grid for {frequency:?} steps from {}",
                format_timestamp(ts),
                format_timestamp(origin)
            ),
        )
    };
    if let Some(step_seconds) = frequency.fixed_seconds() {
        let delta = (ts - origin).num_seconds();
        if (ts - origin) != Duration::seconds(delta) || delta % step_seconds != 0 {
            return Err(off_grid());
        }
        Ok(delta / step_seconds)
    } else {
        let months = months_per_step(frequency).expect("calendar frequency");
        // Calendar steps land on the same day-of-month and time-of-day.
        if ts.day() != origin.day() || ts.time() != origin.time() {
            return Err(off_grid());
        }
        let delta = i64::from(ts.year() - origin.year()) * 12
            + i64::from(ts.month()) - i64::from(origin.month());
        if delta % months != 0 {
            return Err(off_grid());
        }
        Ok(delta / months)
    }
}

fn timestamp_of(origin: NaiveDateTime, step: i64, frequency: Frequency) -> Result<NaiveDateTime> {
    if let Some(step_seconds) = frequency.fixed_seconds() {
        Ok(origin + Duration::seconds(step * step_seconds))
    } else {
        let months = origin.month0() as i64 + step * months_per_step(frequency).unwrap();
        let year = origin.year() + i32::try_from(months.div_euclid(12)).unwrap();
        let month = months.rem_euclid(12) as u32 + 1;
        NaiveDate::from_ymd_opt(year, month, origin.day())
            .map(|d| d.and_time(origin.time()))
            .ok_or_else(|| {
                Error::invalid(
                    "time step",
                    format!("step {step} has no {frequency:?} calendar date"),
                )
            })
    }
}

/// Encodes a table onto the integer time grid of the given frequency.
///
/// The origin is the earliest timestamp in the table; every other
/// timestamp must sit a whole number of steps after it. Missing rows are
/// dropped from the records but their locations stay registered.
pub fn encode(table: &RawTable, frequency: Frequency) -> Result<Dataset> {
    let origin = table
        .rows
        .iter()
        .map(|r| r.timestamp)
        .min()
        .ok_or_else(|| Error::EmptyInput("table has no rows".into()))?;
    let dims = table.dims();

    let mut locations: Vec<Location> = Vec::new();
    let mut location_index: HashMap<&str, usize> = HashMap::new();
    let mut seen: HashMap<(usize, i64), usize> = HashMap::new();
    let mut records = Vec::new();
    for (row_number, row) in table.rows.iter().enumerate() {
        if row.coords.len() != dims {
            return Err(Error::dim("row coordinates", dims, row.coords.len()));
        }
        let loc = match location_index.get(row.location.as_str()) {
            Some(&i) => {
                if locations[i].coords != row.coords {
                    return Err(Error::invalid(
                        "table",
                        format!("coordinates for location {:?} are not constant", row.location),
                    ));
                }
                i
            }
            None => {
                locations.push(Location {
                    id: row.location.clone(),
                    coords: row.coords.clone(),
                });
                location_index.insert(&row.location, locations.len() - 1);
                locations.len() - 1
            }
        };
        let step = step_of(origin, row.timestamp, frequency)?;
        if let Some(&first) = seen.get(&(loc, step)) {
            return Err(Error::DuplicateObservation {
                location: row.location.clone(),
                timestamp: format_timestamp(row.timestamp),
                first_row: first + 1,
                second_row: row_number + 1,
            });
        }
        seen.insert((loc, step), row_number);
        if let Some(y) = row.value {
            records.push(DataRecord {
                location: loc,
                time: step as f64,
                y,
            });
        }
    }
    Ok(Dataset {
        frequency,
        origin,
        locations,
        records,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Space-time index of one record.
    pub fn index_at(&self, i: usize) -> SpaceTimeIndex {
        let rec = &self.records[i];
        SpaceTimeIndex {
            coords: self.locations[rec.location].coords.clone(),
            time: rec.time,
        }
    }

    /// Space-time indices of all records, in record order.
    pub fn indices(&self) -> Vec<SpaceTimeIndex> {
        (0..self.records.len()).map(|i| self.index_at(i)).collect()
    }

    /// Observed values, in record order.
    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    /// Timestamp of an integer grid step.
    pub fn timestamp_at_step(&self, time: f64) -> Result<NaiveDateTime> {
        if !time.is_finite() || time.fract() != 0.0 {
            return Err(Error::invalid(
                "time step",
                format!("{time} is not a whole grid step"),
            ));
        }
        timestamp_of(self.origin, time as i64, self.frequency)
    }

    /// Re-exports the records as a raw table (source order, no missing rows).
    pub fn to_table(&self) -> Result<RawTable> {
        let rows = self
            .records
            .iter()
            .map(|rec| {
                let loc = &self.locations[rec.location];
                Ok(RawRow {
                    location: loc.id.clone(),
                    coords: loc.coords.clone(),
                    timestamp: self.timestamp_at_step(rec.time)?,
                    value: Some(rec.y),
                })
            })
            .collect::<Result<Vec<RawRow>>>()?;
        Ok(RawTable { rows })
    }
}

/// Assignment of every location to one evaluation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_splits: usize,
    pub holdout_fraction: f64,
    /// Split index per location, parallel to the dataset's registry.
    pub assignment: Vec<usize>,
}

/// Split datasets plus the plan that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutcome {
    pub plan: SplitPlan,
    /// One (train, test) pair per split.
    pub pairs: Vec<(Dataset, Dataset)>,
    pub warnings: Vec<String>,
}

/// Builds per-location holdout splits.
///
/// Locations are shuffled by `seed` and dealt round-robin into `n_splits`
/// partitions. Split `k` holds out the latest `⌈holdout_fraction · n⌉`
/// observations of each partition-`k` location; locations with fewer than
/// two observations are kept entirely in train with a warning.
pub fn make_splits(
    dataset: &Dataset,
    n_splits: usize,
    holdout_fraction: f64,
    seed: u64,
) -> Result<SplitOutcome> {
    if dataset.locations.is_empty() {
        return Err(Error::EmptyInput("dataset has no locations".into()));
    }
    if n_splits == 0 || n_splits > dataset.locations.len() {
        return Err(Error::invalid(
            "n_splits",
            format!(
                "must lie in 1..={} (one split per location at most)",
                dataset.locations.len()
            ),
        ));
    }
    if !(0.0..=1.0).contains(&holdout_fraction) {
        return Err(Error::invalid(
            "holdout_fraction",
            "must lie in [0, 1]",
        ));
    }

    let n_locations = dataset.locations.len();
    let mut order: Vec<usize> = (0..n_locations).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n_locations).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut assignment = vec![0usize; n_locations];
    for (rank, &loc) in order.iter().enumerate() {
        assignment[loc] = rank % n_splits;
    }

    // Record indices per location, ordered by time within each location.
    let mut by_location: Vec<Vec<usize>> = vec![Vec::new(); n_locations];
    for (i, rec) in dataset.records.iter().enumerate() {
        by_location[rec.location].push(i);
    }
    for recs in &mut by_location {
        recs.sort_by(|&a, &b| {
            dataset.records[a]
                .time
                .partial_cmp(&dataset.records[b].time)
                .expect("grid times are finite")
        });
    }

    let mut warnings = Vec::new();
    let mut pairs = Vec::with_capacity(n_splits);
    for split in 0..n_splits {
        let mut in_test = vec![false; dataset.records.len()];
        for (loc, recs) in by_location.iter().enumerate() {
            if assignment[loc] != split {
                continue;
            }
            if recs.len() < 2 {
                warnings.push(format!(
                    "split {split}: location {:?} has fewer than 2 observations; kept in train",
                    dataset.locations[loc].id
                ));
                continue;
            }
            let holdout = (holdout_fraction * recs.len() as f64).ceil() as usize;
            for &r in &recs[recs.len() - holdout..] {
                in_test[r] = true;
            }
        }
        let subset = |keep_test: bool| Dataset {
            frequency: dataset.frequency,
            origin: dataset.origin,
            locations: dataset.locations.clone(),
            records: dataset
                .records
                .iter()
                .enumerate()
                .filter(|(i, _)| in_test[*i] == keep_test)
                .map(|(_, r)| *r)
                .collect(),
        };
        pairs.push((subset(false), subset(true)));
    }
    Ok(SplitOutcome {
        plan: SplitPlan {
            n_splits,
            holdout_fraction,
            assignment,
        },
        pairs,
        warnings,
    })
}
