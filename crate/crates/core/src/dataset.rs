//! Basin/day keyed panel of deaths, pollution and weather.
//!
//! The canonical on-disk layout is one delimiter-separated file per study with
//! the header
//!
//! ```text
//! basin,date,ac6574,ac75p,hl6574,hl75p,pm25,o3avg,o3max8,tmax,tmin,rhmax
//! ```
//!
//! ISO dates, empty cell = missing measurement. Death counts are required;
//! every other measurement may be missing, but every calendar day in the
//! study range must be present for every basin.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight study air basins, in their fixed study order `i = 1..8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BasinId {
    SouthCoast,
    SanFranciscoBay,
    SanJoaquinValley,
    SanDiego,
    SacramentoValley,
    SouthCentralCoast,
    MojaveDesert,
    NorthCentralCoast,
}

impl BasinId {
    pub const ALL: [BasinId; 8] = [
        BasinId::SouthCoast,
        BasinId::SanFranciscoBay,
        BasinId::SanJoaquinValley,
        BasinId::SanDiego,
        BasinId::SacramentoValley,
        BasinId::SouthCentralCoast,
        BasinId::MojaveDesert,
        BasinId::NorthCentralCoast,
    ];

    pub fn code(self) -> &'static str {
        match self {
            BasinId::SouthCoast => "SC",
            BasinId::SanFranciscoBay => "SFB",
            BasinId::SanJoaquinValley => "SJV",
            BasinId::SanDiego => "SD",
            BasinId::SacramentoValley => "SV",
            BasinId::SouthCentralCoast => "SCC",
            BasinId::MojaveDesert => "MD",
            BasinId::NorthCentralCoast => "NCC",
        }
    }

    /// 1-based study index.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&b| b == self).unwrap() + 1
    }
}

impl fmt::Display for BasinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for BasinId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|b| b.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown basin `{s}`")))
    }
}

/// A per-day measurement column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Field {
    Ac6574,
    Ac75p,
    Hl6574,
    Hl75p,
    Pm25,
    O3Avg,
    O3Max8,
    Tmax,
    Tmin,
    RhMax,
}

impl Field {
    pub const ALL: [Field; 10] = [
        Field::Ac6574,
        Field::Ac75p,
        Field::Hl6574,
        Field::Hl75p,
        Field::Pm25,
        Field::O3Avg,
        Field::O3Max8,
        Field::Tmax,
        Field::Tmin,
        Field::RhMax,
    ];

    pub const DEATHS: [Field; 4] = [Field::Ac6574, Field::Ac75p, Field::Hl6574, Field::Hl75p];

    pub const MEASUREMENTS: [Field; 6] = [
        Field::Pm25,
        Field::O3Avg,
        Field::O3Max8,
        Field::Tmax,
        Field::Tmin,
        Field::RhMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Ac6574 => "ac6574",
            Field::Ac75p => "ac75p",
            Field::Hl6574 => "hl6574",
            Field::Hl75p => "hl75p",
            Field::Pm25 => "pm25",
            Field::O3Avg => "o3avg",
            Field::O3Max8 => "o3max8",
            Field::Tmax => "tmax",
            Field::Tmin => "tmin",
            Field::RhMax => "rhmax",
        }
    }

    /// Unit metadata; values are never converted.
    pub fn unit(self) -> &'static str {
        match self {
            Field::Ac6574 | Field::Ac75p | Field::Hl6574 | Field::Hl75p => "deaths/day",
            Field::Pm25 => "ug/m3",
            Field::O3Avg | Field::O3Max8 => "ppb",
            Field::Tmax | Field::Tmin => "degF",
            Field::RhMax => "percent",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownField(s.to_string()))
    }
}

/// Death outcome used as a model response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Ac6574,
    Ac75p,
    Hl6574,
    Hl75p,
    /// All-cause, 65 and over (union of the two stored age bands).
    Ac65p,
    /// Heart/lung, 65 and over.
    Hl65p,
}

impl Outcome {
    /// The four stored categories, in study order.
    pub const STUDY: [Outcome; 4] = [Outcome::Ac6574, Outcome::Ac75p, Outcome::Hl6574, Outcome::Hl75p];

    pub fn key(self) -> &'static str {
        match self {
            Outcome::Ac6574 => "ac6574",
            Outcome::Ac75p => "ac75p",
            Outcome::Hl6574 => "hl6574",
            Outcome::Hl75p => "hl75p",
            Outcome::Ac65p => "ac65p",
            Outcome::Hl65p => "hl65p",
        }
    }

    fn components(self) -> &'static [usize] {
        match self {
            Outcome::Ac6574 => &[0],
            Outcome::Ac75p => &[1],
            Outcome::Hl6574 => &[2],
            Outcome::Hl75p => &[3],
            Outcome::Ac65p => &[0, 1],
            Outcome::Hl65p => &[2, 3],
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Outcome::Ac6574,
            Outcome::Ac75p,
            Outcome::Hl6574,
            Outcome::Hl75p,
            Outcome::Ac65p,
            Outcome::Hl65p,
        ]
        .into_iter()
        .find(|o| o.key().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown outcome `{s}`")))
    }
}

/// Which ozone column feeds the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OzoneMetric {
    Avg,
    #[default]
    Max8,
}

impl FromStr for OzoneMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "avg" | "o3avg" => Ok(OzoneMetric::Avg),
            "max8" | "o3max8" => Ok(OzoneMetric::Max8),
            other => Err(Error::InvalidArgument(format!("unknown ozone metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    Ozone,
    Pm25,
}

impl Pollutant {
    pub fn field(self, metric: OzoneMetric) -> Field {
        match (self, metric) {
            (Pollutant::Ozone, OzoneMetric::Max8) => Field::O3Max8,
            (Pollutant::Ozone, OzoneMetric::Avg) => Field::O3Avg,
            (Pollutant::Pm25, _) => Field::Pm25,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Pollutant::Ozone => "ozone",
            Pollutant::Pm25 => "pm25",
        }
    }

    /// Reference exposure for relative-risk curves.
    pub fn reference(self) -> f64 {
        match self {
            Pollutant::Ozone => 50.0,
            Pollutant::Pm25 => 20.0,
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Pollutant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ozone" | "o3" => Ok(Pollutant::Ozone),
            "pm25" | "pm2.5" => Ok(Pollutant::Pm25),
            other => Err(Error::InvalidArgument(format!("unknown pollutant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    /// (AllCause 65–74, AllCause 75+, HeartLung 65–74, HeartLung 75+)
    pub deaths: [u32; 4],
    pub pm25: Option<f64>,
    pub o3avg: Option<f64>,
    pub o3max8: Option<f64>,
    pub tmax: Option<f64>,
    pub tmin: Option<f64>,
    pub rhmax: Option<f64>,
}

impl DailyRecord {
    pub fn get(&self, field: Field) -> Option<f64> {
        match field {
            Field::Ac6574 => Some(self.deaths[0] as f64),
            Field::Ac75p => Some(self.deaths[1] as f64),
            Field::Hl6574 => Some(self.deaths[2] as f64),
            Field::Hl75p => Some(self.deaths[3] as f64),
            Field::Pm25 => self.pm25,
            Field::O3Avg => self.o3avg,
            Field::O3Max8 => self.o3max8,
            Field::Tmax => self.tmax,
            Field::Tmin => self.tmin,
            Field::RhMax => self.rhmax,
        }
    }

    fn set(&mut self, field: Field, value: Option<f64>) {
        match field {
            Field::Pm25 => self.pm25 = value,
            Field::O3Avg => self.o3avg = value,
            Field::O3Max8 => self.o3max8 = value,
            Field::Tmax => self.tmax = value,
            Field::Tmin => self.tmin = value,
            Field::RhMax => self.rhmax = value,
            _ => unreachable!("death counts are set directly"),
        }
    }

    pub fn outcome(&self, outcome: Outcome) -> u32 {
        outcome.components().iter().map(|&i| self.deaths[i]).sum()
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if let (Some(hi), Some(lo)) = (self.tmax, self.tmin) {
            if hi < lo {
                return Err(format!("tmax {hi} below tmin {lo}"));
            }
        }
        if let Some(rh) = self.rhmax {
            if !(0.0..=100.0).contains(&rh) {
                return Err(format!("relative humidity {rh} outside [0, 100]"));
            }
        }
        for (name, v) in [("pm25", self.pm25), ("o3avg", self.o3avg), ("o3max8", self.o3max8)] {
            if matches!(v, Some(x) if x < 0.0) {
                return Err(format!("{name} is negative"));
            }
        }
        Ok(())
    }
}

/// Date-ordered, gap-free daily records for one basin.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinSeries {
    basin: BasinId,
    records: Vec<DailyRecord>,
}

impl BasinSeries {
    pub fn new(basin: BasinId, records: Vec<DailyRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InsufficientData(format!("basin {basin}: no records")));
        }
        for w in records.windows(2) {
            let (a, b) = (w[0].date, w[1].date);
            if b <= a {
                return Err(Error::InvalidArgument(format!(
                    "basin {basin}: dates not strictly increasing at {b}"
                )));
            }
            if b != a.succ_opt().unwrap() {
                return Err(Error::DateGap {
                    basin: basin.to_string(),
                    from: a.succ_opt().unwrap(),
                    to: b.pred_opt().unwrap(),
                });
            }
        }
        Ok(Self { basin, records })
    }

    pub fn basin(&self) -> BasinId {
        self.basin
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DailyRecord] {
        &self.records
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.records.iter().map(|r| r.date).collect()
    }

    pub fn first_date(&self) -> NaiveDate {
        self.records[0].date
    }

    pub fn values(&self, field: Field) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.get(field)).collect()
    }

    pub fn response(&self, outcome: Outcome) -> Vec<f64> {
        self.records.iter().map(|r| r.outcome(outcome) as f64).collect()
    }

    /// Calendar years present, ascending.
    pub fn years(&self) -> Vec<i32> {
        let mut ys: Vec<i32> = self.records.iter().map(|r| r.date.year()).collect();
        ys.dedup();
        ys
    }

    /// Year index `j` (0 for the first year in the series) per day.
    pub fn year_index(&self) -> Vec<usize> {
        let y0 = self.first_date().year();
        self.records.iter().map(|r| (r.date.year() - y0) as usize).collect()
    }

    /// Within-year day index `k` (1-based ordinal) per day.
    pub fn day_of_year(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.date.ordinal()).collect()
    }

    pub fn weekdays(&self) -> Vec<Weekday> {
        self.records.iter().map(|r| r.date.weekday()).collect()
    }

    pub fn lagged(&self, field: Field, lag: usize) -> Result<Vec<Option<f64>>> {
        lagged(&self.values(field), lag)
    }

    /// Days where every required field is present at every listed lag.
    pub fn complete_rows(&self, required: &[(Field, Vec<usize>)]) -> Vec<usize> {
        let cols: Vec<Vec<Option<f64>>> = required.iter().map(|(f, _)| self.values(*f)).collect();
        let reqs: Vec<(&[Option<f64>], &[usize])> = cols
            .iter()
            .zip(required)
            .map(|(c, (_, lags))| (c.as_slice(), lags.as_slice()))
            .collect();
        complete_rows(self.len(), &reqs)
    }

    /// Restrict to `[from, to]`.
    pub fn slice_dates(&self, from: NaiveDate, to: NaiveDate) -> Result<Self> {
        let recs: Vec<DailyRecord> = self
            .records
            .iter()
            .filter(|r| r.date >= from && r.date <= to)
            .cloned()
            .collect();
        Self::new(self.basin, recs)
    }
}

/// `out[t] = values[t - lag]`; the first `lag` entries are missing.
pub fn lagged(values: &[Option<f64>], lag: usize) -> Result<Vec<Option<f64>>> {
    if lag > values.len() {
        return Err(Error::InvalidArgument(format!(
            "lag {lag} exceeds series length {}",
            values.len()
        )));
    }
    let mut out = vec![None; lag];
    out.extend_from_slice(&values[..values.len() - lag]);
    Ok(out)
}

/// Mean of `values` over the given lags; missing if any lagged value is.
pub fn lag_mean(values: &[Option<f64>], lags: &[usize]) -> Vec<Option<f64>> {
    assert!(!lags.is_empty(), "lag_mean needs at least one lag");
    let k = lags.len() as f64;
    (0..values.len())
        .map(|t| {
            let mut acc = 0.0;
            for &l in lags {
                acc += values.get(t.checked_sub(l)?).copied().flatten()?;
            }
            Some(acc / k)
        })
        .collect()
}

/// Row indices `t` such that for every `(column, lags)` pair, `column[t - l]`
/// exists and is present for every `l` in `lags`.
pub fn complete_rows(n: usize, required: &[(&[Option<f64>], &[usize])]) -> Vec<usize> {
    (0..n)
        .filter(|&t| {
            required.iter().all(|(col, lags)| {
                lags.iter()
                    .all(|&l| t >= l && col.get(t - l).is_some_and(|v| v.is_some()))
            })
        })
        .collect()
}

/// Maps logical columns to header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub basin: String,
    pub date: String,
    pub fields: BTreeMap<Field, String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            basin: "basin".into(),
            date: "date".into(),
            fields: Field::ALL.iter().map(|&f| (f, f.name().to_string())).collect(),
        }
    }
}

impl Schema {
    pub fn canonical() -> Self {
        Self::default()
    }

    pub fn with_column(mut self, field: Field, column: impl Into<String>) -> Self {
        self.fields.insert(field, column.into());
        self
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub schema: Schema,
    pub delimiter: u8,
    /// Inclusive study window; rows outside are ignored and every day
    /// inside must be present.
    pub range: Option<(NaiveDate, NaiveDate)>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            schema: Schema::default(),
            delimiter: b',',
            range: None,
        }
    }
}

impl IngestOptions {
    pub fn study_range() -> (NaiveDate, NaiveDate) {
        (
            NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2012, 12, 31).unwrap(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub basin: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub days: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasinReport {
    pub basin: String,
    pub days: usize,
    pub first: NaiveDate,
    pub last: NaiveDate,
    pub missing: BTreeMap<String, usize>,
}

/// Result of a validation pass; serialised as the `validate` JSON report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub rows: usize,
    pub basins: Vec<BasinReport>,
    pub missing: BTreeMap<String, usize>,
    pub gaps: Vec<Gap>,
    pub errors: Vec<String>,
}

/// Ingested study panel, one series per basin in study order.
#[derive(Debug, Clone)]
pub struct Panel {
    pub series: Vec<BasinSeries>,
    pub report: ValidationReport,
}

impl Panel {
    pub fn get(&self, basin: BasinId) -> Option<&BasinSeries> {
        self.series.iter().find(|s| s.basin() == basin)
    }
}

struct Parsed {
    rows: usize,
    by_basin: BTreeMap<BasinId, Vec<(u64, DailyRecord)>>,
}

fn parse_cell(raw: &str, line: u64, column: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column `{column}`: cannot parse `{s}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column `{column}`: non-finite value"),
        });
    }
    Ok(Some(v))
}

fn parse_records<R: Read>(reader: R, opts: &IngestOptions) -> Result<Parsed> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let locate = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}` in header"),
            })
    };
    let basin_col = locate(&opts.schema.basin)?;
    let date_col = locate(&opts.schema.date)?;
    let mut field_cols = Vec::new();
    for &f in &Field::ALL {
        let name = opts
            .schema
            .fields
            .get(&f)
            .ok_or_else(|| Error::UnknownField(format!("schema has no column for {f}")))?;
        field_cols.push((f, locate(name)?, name.clone()));
    }

    let mut parsed = Parsed {
        rows: 0,
        by_basin: BTreeMap::new(),
    };
    for result in rdr.records() {
        let rec = result.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let basin: BasinId = rec[basin_col].parse().map_err(|e: Error| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let date = NaiveDate::parse_from_str(rec[date_col].trim(), "%Y-%m-%d").map_err(|e| {
            Error::Parse {
                line,
                message: format!("bad date `{}`: {e}", &rec[date_col]),
            }
        })?;
        if let Some((from, to)) = opts.range {
            if date < from || date > to {
                continue;
            }
        }
        let mut record = DailyRecord {
            date,
            deaths: [0; 4],
            pm25: None,
            o3avg: None,
            o3max8: None,
            tmax: None,
            tmin: None,
            rhmax: None,
        };
        for (f, col, name) in &field_cols {
            let raw = rec[*col].trim();
            if let Some(slot) = Field::DEATHS.iter().position(|d| d == f) {
                record.deaths[slot] = raw.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("column `{name}`: `{raw}` is not a non-negative integer count"),
                })?;
            } else {
                record.set(*f, parse_cell(raw, line, name)?);
            }
        }
        record.check().map_err(|message| Error::Parse { line, message })?;
        parsed.rows += 1;
        parsed.by_basin.entry(basin).or_default().push((line, record));
    }
    Ok(parsed)
}

fn find_gaps(basin: BasinId, dates: &[NaiveDate], range: Option<(NaiveDate, NaiveDate)>) -> Vec<Gap> {
    let mut gaps = Vec::new();
    let mut push = |from: NaiveDate, to: NaiveDate| {
        if from <= to {
            gaps.push(Gap {
                basin: basin.to_string(),
                from,
                to,
                days: (to - from).num_days() + 1,
            });
        }
    };
    if let Some((lo, _)) = range {
        if let Some(&first) = dates.first() {
            push(lo, first.pred_opt().unwrap());
        }
    }
    for w in dates.windows(2) {
        push(w[0].succ_opt().unwrap(), w[1].pred_opt().unwrap());
    }
    if let Some((_, hi)) = range {
        if let Some(&last) = dates.last() {
            push(last.succ_opt().unwrap(), hi);
        }
    }
    gaps
}

fn build_panel(parsed: Parsed, opts: &IngestOptions) -> (Vec<BasinSeries>, ValidationReport, Option<Error>) {
    let mut first_error: Option<Error> = None;
    let mut report = ValidationReport {
        ok: true,
        rows: parsed.rows,
        basins: Vec::new(),
        missing: Field::MEASUREMENTS.iter().map(|f| (f.name().to_string(), 0)).collect(),
        gaps: Vec::new(),
        errors: Vec::new(),
    };
    let mut series = Vec::new();
    for (basin, mut rows) in parsed.by_basin {
        rows.sort_by_key(|(line, r)| (r.date, *line));
        let mut dup = None;
        for w in rows.windows(2) {
            if w[0].1.date == w[1].1.date {
                dup = Some(Error::DuplicateRecord {
                    line: w[1].0,
                    basin: basin.to_string(),
                    date: w[1].1.date,
                });
                break;
            }
        }
        if let Some(e) = dup {
            report.errors.push(e.to_string());
            first_error.get_or_insert(e);
            continue;
        }
        let dates: Vec<NaiveDate> = rows.iter().map(|(_, r)| r.date).collect();
        let gaps = find_gaps(basin, &dates, opts.range);
        if let Some(g) = gaps.first() {
            first_error.get_or_insert(Error::DateGap {
                basin: g.basin.clone(),
                from: g.from,
                to: g.to,
            });
        }
        let mut missing = BTreeMap::new();
        for f in Field::MEASUREMENTS {
            let count = rows.iter().filter(|(_, r)| r.get(f).is_none()).count();
            missing.insert(f.name().to_string(), count);
            *report.missing.get_mut(f.name()).unwrap() += count;
        }
        report.basins.push(BasinReport {
            basin: basin.to_string(),
            days: rows.len(),
            first: dates[0],
            last: *dates.last().unwrap(),
            missing,
        });
        for g in &gaps {
            report.errors.push(format!("basin {}: missing days {} ..= {}", g.basin, g.from, g.to));
        }
        report.gaps.extend(gaps.iter().cloned());
        if gaps.is_empty() {
            let recs = rows.into_iter().map(|(_, r)| r).collect();
            match BasinSeries::new(basin, recs) {
                Ok(s) => series.push(s),
                Err(e) => {
                    report.errors.push(e.to_string());
                    first_error.get_or_insert(e);
                }
            }
        }
    }
    report.ok = first_error.is_none();
    (series, report, first_error)
}

/// Parse and validate a panel from any reader.
pub fn ingest_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<Panel> {
    let parsed = parse_records(reader, opts)?;
    let (series, report, err) = build_panel(parsed, opts);
    match err {
        Some(e) => Err(e),
        None => Ok(Panel { series, report }),
    }
}

pub fn ingest(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Panel> {
    let file = std::fs::File::open(path)?;
    ingest_reader(std::io::BufReader::new(file), opts)
}

/// Like [`ingest`], but data problems are collected into the report
/// instead of aborting. I/O failures are still errors.
pub fn validate(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<ValidationReport> {
    let file = std::fs::File::open(path)?;
    validate_reader(std::io::BufReader::new(file), opts)
}

pub fn validate_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<ValidationReport> {
    match parse_records(reader, opts) {
        Ok(parsed) => Ok(build_panel(parsed, opts).1),
        Err(Error::Io(e)) => Err(Error::Io(e)),
        Err(e) => Ok(ValidationReport {
            ok: false,
            rows: 0,
            basins: Vec::new(),
            missing: BTreeMap::new(),
            gaps: Vec::new(),
            errors: vec![e.to_string()],
        }),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write series in the canonical CSV layout.
pub fn write_csv<W: Write>(series: &[BasinSeries], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["basin".to_string(), "date".to_string()];
    header.extend(Field::ALL.iter().map(|f| f.name().to_string()));
    w.write_record(&header).map_err(csv_io)?;
    for s in series {
        for r in s.records() {
            let mut row = vec![s.basin().to_string(), r.date.format("%Y-%m-%d").to_string()];
            row.extend(r.deaths.iter().map(|d| d.to_string()));
            for f in Field::MEASUREMENTS {
                row.push(fmt_opt(r.get(f)));
            }
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
