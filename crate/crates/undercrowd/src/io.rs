//! CSV and JSON formats for signals, daily weather, the service calendar,
//! segment observations and intermediate artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use undercrowd_core::aggregate::SegmentObservation;
use undercrowd_core::ingest::{
    build_calendar, ApcInfoType, CalendarRecord, CapacityTable, DayType, Direction, RawSignal, RouteSpec, Season,
    VehicleType, Weather, WeatherRecord,
};
use undercrowd_core::validate::Timetable;
use undercrowd_core::Diagnostic;

use crate::error::{AppError, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Signal columns in file order. `diverted_route` and `inf1..3` may be
/// absent from a file; the rest are mandatory.
pub const SIGNAL_FIELDS: [&str; 17] = [
    "date",
    "route",
    "table_no",
    "ride_no",
    "direction",
    "vehicle",
    "vehicle_type",
    "path",
    "timestamp",
    "noise",
    "status",
    "diverted_route",
    "stop",
    "apc_info_type",
    "inf1",
    "inf2",
    "inf3",
];
const OPTIONAL_SIGNAL_FIELDS: [&str; 4] = ["diverted_route", "inf1", "inf2", "inf3"];

/// Maps canonical signal fields to the header names used in a file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub delimiter: char,
    /// Canonical field name to file header; unmapped fields use their own
    /// name.
    pub columns: BTreeMap<String, String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            delimiter: ',',
            columns: BTreeMap::new(),
        }
    }
}

impl CsvSchema {
    fn header_for<'a>(&'a self, field: &'a str) -> &'a str {
        self.columns.get(field).map(String::as_str).unwrap_or(field)
    }

    fn delimiter(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| AppError::Config(format!("delimiter {:?} is not a single ASCII byte", self.delimiter)))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ParsedSignals {
    pub signals: Vec<RawSignal>,
    pub diagnostics: Vec<Diagnostic>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("bad date {s:?}: {e}"))
}

fn parse_timestamp(s: &str) -> std::result::Result<NaiveDateTime, String> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

fn parse_num<T: std::str::FromStr>(field: &str, s: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| format!("{field}: {s:?}: {e}"))
}

fn parse_opt<T: std::str::FromStr>(field: &str, s: Option<&str>) -> std::result::Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    match s.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => parse_num(field, v).map(Some),
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" | "" => Ok(false),
        other => Err(format!("noise: {other:?} is not a boolean")),
    }
}

/// Reads a delimiter-separated signal file. Malformed rows become
/// diagnostics carrying their line number, or an error when `strict`.
pub fn read_signals(path: &Path, schema: &CsvSchema, strict: bool) -> Result<ParsedSignals> {
    let bytes = read_file(path)?;
    parse_signals(&bytes, schema, strict).map_err(|e| match e {
        AppError::Schema { message, .. } => AppError::schema(path, message),
        other => other,
    })
}

pub fn parse_signals(bytes: &[u8], schema: &CsvSchema, strict: bool) -> Result<ParsedSignals> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter()?)
        .flexible(true)
        .from_reader(bytes);
    let headers = rdr
        .headers()
        .map_err(|e| AppError::schema("<signals>", e.to_string()))?
        .clone();
    let mut idx: BTreeMap<&str, Option<usize>> = BTreeMap::new();
    for f in SIGNAL_FIELDS {
        let h = schema.header_for(f);
        let pos = headers.iter().position(|x| x.trim() == h);
        if pos.is_none() && !OPTIONAL_SIGNAL_FIELDS.contains(&f) {
            return Err(AppError::schema("<signals>", format!("missing mandatory column {h:?}")));
        }
        idx.insert(f, pos);
    }
    let mut out = ParsedSignals::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AppError::schema("<signals>", e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let get = |f: &str| idx[f].and_then(|i| rec.get(i));
        let row = (|| -> std::result::Result<RawSignal, String> {
            let need = |f: &str| get(f).ok_or_else(|| format!("{f}: missing value"));
            let code = |f: &str| parse_num::<i64>(f, need(f)?);
            let sig = RawSignal {
                date: parse_date(need("date")?)?,
                route: need("route")?.trim().to_string(),
                table_no: parse_num("table_no", need("table_no")?)?,
                ride_no: parse_num("ride_no", need("ride_no")?)?,
                direction: Direction::from_code(code("direction")?).map_err(|e| e.to_string())?,
                vehicle: need("vehicle")?.trim().to_string(),
                vehicle_type: VehicleType::from_code(code("vehicle_type")?).map_err(|e| e.to_string())?,
                path: need("path")?.trim().to_string(),
                timestamp: parse_timestamp(need("timestamp")?)?,
                noise: parse_bool(need("noise")?)?,
                status: parse_num("status", need("status")?)?,
                diverted_route: get("diverted_route")
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string),
                stop: need("stop")?.trim().to_string(),
                apc_info_type: ApcInfoType::from_code(code("apc_info_type")?).map_err(|e| e.to_string())?,
                inf1: parse_opt("inf1", get("inf1"))?,
                inf2: parse_opt("inf2", get("inf2"))?,
                inf3: parse_opt("inf3", get("inf3"))?,
            };
            sig.validate().map_err(|e| e.to_string())?;
            Ok(sig)
        })();
        match row {
            Ok(s) => out.signals.push(s),
            Err(msg) if strict => {
                return Err(AppError::schema("<signals>", format!("line {line}: {msg}")));
            }
            Err(msg) => out
                .diagnostics
                .push(Diagnostic::new("malformed_row", format!("line {line}: {msg}"))),
        }
    }
    Ok(out)
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn signals_csv(signals: &[RawSignal]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| AppError::schema("<signals>", e.to_string());
    w.write_record(SIGNAL_FIELDS).map_err(err)?;
    for s in signals {
        w.write_record([
            s.date.to_string(),
            s.route.clone(),
            s.table_no.to_string(),
            s.ride_no.to_string(),
            s.direction.code().to_string(),
            s.vehicle.clone(),
            s.vehicle_type.code().to_string(),
            s.path.clone(),
            s.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            u8::from(s.noise).to_string(),
            s.status.to_string(),
            opt(&s.diverted_route),
            s.stop.clone(),
            s.apc_info_type.code().to_string(),
            opt(&s.inf1),
            opt(&s.inf2),
            opt(&s.inf3),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| AppError::schema("<signals>", e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct WeatherRow {
    date: NaiveDate,
    temperature: f64,
    wind_speed: f64,
    cloud_coverage: f64,
    humidity: f64,
    rain: f64,
}

pub fn read_weather(path: &Path) -> Result<Vec<WeatherRecord>> {
    let bytes = read_file(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for row in rdr.deserialize::<WeatherRow>() {
        let r = row.map_err(|e| AppError::schema(path, e.to_string()))?;
        out.push(WeatherRecord {
            date: r.date,
            weather: Weather {
                temperature: r.temperature,
                wind_speed: r.wind_speed,
                cloud_coverage: r.cloud_coverage,
                humidity: r.humidity,
                rain: r.rain,
            },
        });
    }
    Ok(out)
}

pub fn weather_csv(records: &[WeatherRecord]) -> Result<Vec<u8>> {
    let rows = records.iter().map(|r| WeatherRow {
        date: r.date,
        temperature: r.weather.temperature,
        wind_speed: r.weather.wind_speed,
        cloud_coverage: r.weather.cloud_coverage,
        humidity: r.weather.humidity,
        rain: r.weather.rain,
    });
    to_csv(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct CalendarRow {
    date: NaiveDate,
    day_type: DayType,
    season: Season,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    week_number: Option<u32>,
}

/// Reads `date,day_type,season`; week numbers are always recomputed from
/// `anchor` (or the first date).
pub fn read_calendar(path: &Path, anchor: Option<NaiveDate>) -> Result<Vec<CalendarRecord>> {
    let bytes = read_file(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let mut entries = Vec::new();
    for row in rdr.deserialize::<CalendarRow>() {
        let r = row.map_err(|e| AppError::schema(path, e.to_string()))?;
        entries.push((r.date, r.day_type, r.season));
    }
    Ok(build_calendar(&entries, anchor)?)
}

pub fn calendar_csv(records: &[CalendarRecord]) -> Result<Vec<u8>> {
    to_csv(records.iter().map(|c| CalendarRow {
        date: c.date,
        day_type: c.day_type,
        season: c.season,
        week_number: Some(c.week_number),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    ride_id: u32,
    date: NaiveDate,
    time_slot: u8,
    segment: u16,
    y: u8,
    load_factor: f64,
    occupancy: u64,
    capacity: u64,
    week_number: u32,
    day_type: DayType,
    season: Season,
    temperature: f64,
    wind_speed: f64,
    cloud_coverage: f64,
    humidity: f64,
    rain: f64,
}

pub fn observations_csv(obs: &[SegmentObservation]) -> Result<Vec<u8>> {
    to_csv(obs.iter().map(|o| ObservationRow {
        ride_id: o.ride_id,
        date: o.date,
        time_slot: o.time_slot,
        segment: o.segment,
        y: o.y,
        load_factor: o.load_factor,
        occupancy: o.occupancy,
        capacity: o.capacity,
        week_number: o.week_number,
        day_type: o.day_type,
        season: o.season,
        temperature: o.weather.temperature,
        wind_speed: o.weather.wind_speed,
        cloud_coverage: o.weather.cloud_coverage,
        humidity: o.weather.humidity,
        rain: o.weather.rain,
    }))
}

pub fn read_observations(path: &Path) -> Result<Vec<SegmentObservation>> {
    let bytes = read_file(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for row in rdr.deserialize::<ObservationRow>() {
        let r = row.map_err(|e| AppError::schema(path, e.to_string()))?;
        out.push(SegmentObservation {
            ride_id: r.ride_id,
            date: r.date,
            time_slot: r.time_slot,
            segment: r.segment,
            y: r.y,
            load_factor: r.load_factor,
            occupancy: r.occupancy,
            capacity: r.capacity,
            week_number: r.week_number,
            day_type: r.day_type,
            season: r.season,
            weather: Weather {
                temperature: r.temperature,
                wind_speed: r.wind_speed,
                cloud_coverage: r.cloud_coverage,
                humidity: r.humidity,
                rain: r.rain,
            },
        });
    }
    Ok(out)
}

/// Serializes rows with a header taken from the row type.
pub fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| AppError::schema("<csv>", e.to_string()))?;
    }
    w.into_inner().map_err(|e| AppError::schema("<csv>", e.to_string()))
}

/// Like [`to_csv`], but writes `header` even when there are no rows.
pub fn to_csv_with_header<T: Serialize>(header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| AppError::schema("<csv>", e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| AppError::schema("<csv>", e.to_string()))?;
    }
    w.into_inner().map_err(|e| AppError::schema("<csv>", e.to_string()))
}

/// Route, schedule and vehicle capacities of the network being analysed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub route: RouteSpec,
    pub timetable: Timetable,
    pub capacities: CapacityTable,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| AppError::schema(path, e.to_string()))
}

/// Reads a JSON or TOML file, by extension.
pub fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if path.extension().is_some_and(|e| e == "toml") {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        toml::from_str(&text).map_err(|e| AppError::schema(path, e.to_string()))
    } else {
        read_json(path)
    }
}
