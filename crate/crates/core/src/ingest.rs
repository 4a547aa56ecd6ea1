//! Raw APC/AVL signal records, auxiliary daily sources, and reconstruction
//! of one-row-per-stop rides from uneven signal streams.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Diagnostic, Error, Result};

pub type Count = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Outbound,
    Inbound,
    NotInTransit,
}

impl Direction {
    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            0 => Ok(Self::Outbound),
            1 => Ok(Self::Inbound),
            2 => Ok(Self::NotInTransit),
            _ => Err(Error::UnknownCode {
                field: "direction",
                code,
            }),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Outbound => 0,
            Self::Inbound => 1,
            Self::NotInTransit => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleType {
    Tram,
    Bus,
    Missing,
}

impl VehicleType {
    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            0 => Ok(Self::Tram),
            1 => Ok(Self::Bus),
            2 => Ok(Self::Missing),
            _ => Err(Error::UnknownCode {
                field: "vehicle_type",
                code,
            }),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Tram => 0,
            Self::Bus => 1,
            Self::Missing => 2,
        }
    }
}

/// What the three passenger fields of a signal carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApcInfoType {
    /// No passenger information.
    None,
    /// `inf2`/`inf3` are boardings/alightings at this stop.
    PerStop,
    /// `inf1` is on-board, `inf2`/`inf3` are cumulative since ride start.
    Cumulative,
}

impl ApcInfoType {
    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            0 => Ok(Self::None),
            2 => Ok(Self::PerStop),
            7 => Ok(Self::Cumulative),
            _ => Err(Error::UnknownCode {
                field: "apc_info_type",
                code,
            }),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::None => 0,
            Self::PerStop => 2,
            Self::Cumulative => 7,
        }
    }
}

/// Date, route, table, ride number and direction: the identity of a ride.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RideKey {
    pub date: NaiveDate,
    pub route: String,
    pub table_no: u32,
    pub ride_no: u32,
    pub direction: Direction,
}

impl fmt::Display for RideKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}/{}",
            self.date,
            self.route,
            self.table_no,
            self.ride_no,
            self.direction.code()
        )
    }
}

/// One message of the on-board system.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSignal {
    pub date: NaiveDate,
    pub route: String,
    pub table_no: u32,
    pub ride_no: u32,
    pub direction: Direction,
    pub vehicle: String,
    pub vehicle_type: VehicleType,
    pub path: String,
    pub timestamp: NaiveDateTime,
    pub noise: bool,
    pub status: u16,
    pub diverted_route: Option<String>,
    pub stop: String,
    pub apc_info_type: ApcInfoType,
    pub inf1: Option<Count>,
    pub inf2: Option<Count>,
    pub inf3: Option<Count>,
}

impl RawSignal {
    pub fn key(&self) -> RideKey {
        RideKey {
            date: self.date,
            route: self.route.clone(),
            table_no: self.table_no,
            ride_no: self.ride_no,
            direction: self.direction,
        }
    }

    /// Checks that the passenger fields match the info type and that the
    /// timestamp falls on the record's date.
    pub fn validate(&self) -> Result<()> {
        let present = (self.inf1.is_some(), self.inf2.is_some(), self.inf3.is_some());
        match self.apc_info_type {
            ApcInfoType::None => {
                if present != (false, false, false) {
                    return Err(Error::InvalidRecord(String::from(
                        "counts present without info type",
                    )));
                }
            }
            ApcInfoType::PerStop => {
                if present.0 {
                    return Err(Error::InvalidRecord(String::from(
                        "on-board count present for per-stop info type",
                    )));
                }
                if !(present.1 && present.2) {
                    return Err(Error::InvalidRecord(String::from(
                        "per-stop info type requires boarding and alighting counts",
                    )));
                }
            }
            ApcInfoType::Cumulative => {
                if present != (true, true, true) {
                    return Err(Error::InvalidRecord(String::from(
                        "cumulative info type requires on-board, boarding and alighting counts",
                    )));
                }
            }
        }
        if self.timestamp.date() != self.date {
            return Err(Error::InvalidRecord(format!(
                "timestamp {} outside record date {}",
                self.timestamp, self.date
            )));
        }
        Ok(())
    }

    pub fn carries_counts(&self) -> bool {
        self.apc_info_type != ApcInfoType::None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRecord {
    /// 1-based position of the stop on the route.
    pub stop_index: u16,
    pub stop_id: String,
    pub boarded: Count,
    pub alighted: Count,
    pub onboard_after: Count,
    pub timestamp: NaiveDateTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyCode {
    Depot,
    Breakdown,
    Interrupted,
    Detour,
}

impl AnomalyCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Depot => "depot",
            Self::Breakdown => "breakdown",
            Self::Interrupted => "interrupted",
            Self::Detour => "detour",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityFlags {
    pub noise_fraction: f64,
    pub missing_fraction: f64,
    pub outlier_stop_indices: BTreeSet<u16>,
    pub anomaly_codes: BTreeSet<AnomalyCode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ride {
    pub key: RideKey,
    pub vehicle: String,
    pub vehicle_type: VehicleType,
    /// Seats plus standing places.
    pub capacity: Count,
    /// Number of stops on the route the ride was reconstructed against.
    pub n_route_stops: u16,
    /// Observed stops, ordered by `stop_index`.
    pub stops: Vec<StopRecord>,
    pub quality: QualityFlags,
    /// Stop ids in signal order with consecutive repeats removed, including
    /// stops that are not on the route.
    pub stop_sequence: Vec<String>,
    /// Distinct path ids in order of first appearance.
    pub paths: Vec<String>,
    pub statuses: BTreeSet<u16>,
    pub diverted: bool,
}

impl Ride {
    /// Departure instant: the timestamp of the first observed stop.
    pub fn departure(&self) -> Option<NaiveDateTime> {
        self.stops.first().map(|s| s.timestamp)
    }

    pub fn departure_hour(&self) -> Option<u8> {
        self.departure().map(|t| t.hour() as u8)
    }

    pub fn n_segments(&self) -> usize {
        usize::from(self.n_route_stops).saturating_sub(1)
    }

    /// On-board passengers on each segment `j` (between stops `j` and `j+1`).
    ///
    /// A segment that starts at an unobserved stop carries the on-board count
    /// of the last observed stop before it (zero before the first one).
    pub fn segment_occupancy(&self) -> Vec<Count> {
        let n = self.n_segments();
        let mut out = Vec::with_capacity(n);
        let mut onboard = 0;
        let mut it = self.stops.iter().peekable();
        for j in 1..=n {
            while let Some(s) = it.peek() {
                if usize::from(s.stop_index) <= j {
                    onboard = s.onboard_after;
                    it.next();
                } else {
                    break;
                }
            }
            out.push(onboard);
        }
        out
    }
}

/// The scheduled stop list of one route direction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub route: String,
    pub direction: Direction,
    pub stops: Vec<String>,
}

impl RouteSpec {
    pub fn n_segments(&self) -> usize {
        self.stops.len().saturating_sub(1)
    }

    fn index_of(&self, stop: &str) -> Option<u16> {
        self.stops
            .iter()
            .position(|s| s == stop)
            .map(|i| (i + 1) as u16)
    }
}

/// Capacity (seats plus standing places) per vehicle type.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityTable {
    pub by_type: BTreeMap<VehicleType, Count>,
}

impl CapacityTable {
    pub fn new(entries: &[(VehicleType, Count)]) -> Self {
        Self {
            by_type: entries.iter().copied().collect(),
        }
    }

    pub fn capacity(&self, vt: VehicleType) -> Option<Count> {
        self.by_type.get(&vt).copied().filter(|&c| c > 0)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Reconstruction {
    pub rides: Vec<Ride>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Rebuilds per-stop ride records from raw signals.
///
/// Signals are grouped by [`RideKey`]; only those matching the route and
/// direction of `route` are used. At each stop the last non-noise signal
/// carrying counts wins. Cumulative counters are differenced against the
/// previous observed stop; a decrease marks the stop as an outlier candidate
/// rather than being repaired.
pub fn reconstruct_rides(
    signals: &[RawSignal],
    route: &RouteSpec,
    capacities: &CapacityTable,
) -> Reconstruction {
    let mut out = Reconstruction::default();
    let mut groups: BTreeMap<RideKey, Vec<&RawSignal>> = BTreeMap::new();
    let mut foreign = 0usize;
    for s in signals {
        if s.route != route.route || s.direction != route.direction {
            foreign += 1;
            continue;
        }
        groups.entry(s.key()).or_default().push(s);
    }
    if foreign > 0 {
        out.diagnostics.push(Diagnostic::new(
            "foreign_signals",
            format!("{foreign} signals belong to another route or direction"),
        ));
    }

    for (key, mut sigs) in groups {
        sigs.sort_by_key(|s| s.timestamp);
        match reconstruct_one(key, &sigs, route, capacities, &mut out.diagnostics) {
            Some(ride) => out.rides.push(ride),
            None => continue,
        }
    }
    out
}

fn reconstruct_one(
    key: RideKey,
    sigs: &[&RawSignal],
    route: &RouteSpec,
    capacities: &CapacityTable,
    diags: &mut Vec<Diagnostic>,
) -> Option<Ride> {
    let first = sigs[0];
    let Some(capacity) = capacities.capacity(first.vehicle_type) else {
        diags.push(Diagnostic::new(
            "no_capacity",
            format!("ride {key}: no capacity for vehicle type {:?}", first.vehicle_type),
        ));
        return None;
    };

    let n_noise = sigs.iter().filter(|s| s.noise).count();
    let mut statuses = BTreeSet::new();
    let mut paths: Vec<String> = Vec::new();
    let mut stop_sequence: Vec<String> = Vec::new();
    let mut diverted = false;
    // Per stop index: (chosen signal, chosen signal is noisy).
    let mut chosen: BTreeMap<u16, &RawSignal> = BTreeMap::new();

    for &s in sigs {
        statuses.insert(s.status);
        if !paths.iter().any(|p| *p == s.path) {
            paths.push(s.path.clone());
        }
        if stop_sequence.last().map(|l| *l != s.stop).unwrap_or(true) {
            stop_sequence.push(s.stop.clone());
        }
        diverted |= s.diverted_route.is_some();
        if !s.carries_counts() {
            continue;
        }
        if let Some(idx) = route.index_of(&s.stop) {
            match chosen.get(&idx) {
                // A noisy signal never displaces a clean one.
                Some(prev) if s.noise && !prev.noise => {}
                _ => {
                    chosen.insert(idx, s);
                }
            }
        }
    }

    let mut quality = QualityFlags {
        noise_fraction: n_noise as f64 / sigs.len() as f64,
        missing_fraction: (route.stops.len() - chosen.len()) as f64 / route.stops.len() as f64,
        ..QualityFlags::default()
    };

    let mut stops = Vec::with_capacity(chosen.len());
    let mut onboard: i64 = 0;
    let (mut cum_b, mut cum_a) = (0i64, 0i64);
    for (&idx, s) in &chosen {
        let (boarded, alighted) = match s.apc_info_type {
            ApcInfoType::PerStop => (s.inf2.unwrap_or(0), s.inf3.unwrap_or(0)),
            ApcInfoType::Cumulative => {
                let b = i64::from(s.inf2.unwrap_or(0));
                let a = i64::from(s.inf3.unwrap_or(0));
                let (db, da) = (b - cum_b, a - cum_a);
                cum_b = b;
                cum_a = a;
                if db < 0 || da < 0 {
                    quality.outlier_stop_indices.insert(idx);
                    diags.push(Diagnostic::new(
                        "non_monotone_counter",
                        format!("ride {key}: cumulative counter decreased at stop {idx}"),
                    ));
                }
                (db.max(0) as Count, da.max(0) as Count)
            }
            ApcInfoType::None => unreachable!("count-less signals are never chosen"),
        };
        onboard += i64::from(boarded) - i64::from(alighted);
        if onboard < 0 {
            diags.push(Diagnostic::new(
                "negative_onboard",
                format!("ride {key}: on-board count {onboard} at stop {idx} clipped to 0"),
            ));
            onboard = 0;
        }
        stops.push(StopRecord {
            stop_index: idx,
            stop_id: s.stop.clone(),
            boarded,
            alighted,
            onboard_after: onboard as Count,
            timestamp: s.timestamp,
        });
    }

    Some(Ride {
        key,
        vehicle: first.vehicle.clone(),
        vehicle_type: first.vehicle_type,
        capacity,
        n_route_stops: route.stops.len() as u16,
        stops,
        quality,
        stop_sequence,
        paths,
        statuses,
        diverted,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Working,
    Strike,
    Saturday,
    Holiday,
}

impl DayType {
    pub const ALL: [DayType; 4] = [Self::Working, Self::Strike, Self::Saturday, Self::Holiday];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Working => "working",
            Self::Strike => "strike",
            Self::Saturday => "saturday",
            Self::Holiday => "holiday",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "working" => Ok(Self::Working),
            "strike" => Ok(Self::Strike),
            "saturday" => Ok(Self::Saturday),
            "holiday" => Ok(Self::Holiday),
            _ => Err(Error::InvalidRecord(format!("unknown day type {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    Summer,
    Winter,
}

impl Season {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Summer => "summer",
            Self::Winter => "winter",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "summer" => Ok(Self::Summer),
            "winter" => Ok(Self::Winter),
            _ => Err(Error::InvalidRecord(format!("unknown season {s:?}"))),
        }
    }
}

/// Daily weather values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Weather {
    /// Mean temperature, °C.
    pub temperature: f64,
    /// Mean wind speed, km/h.
    pub wind_speed: f64,
    /// Cloud coverage, %.
    pub cloud_coverage: f64,
    /// Relative humidity, %.
    pub humidity: f64,
    /// Precipitation, mm.
    pub rain: f64,
}

impl Weather {
    pub fn validate(&self) -> Result<()> {
        let pct = |v: f64| (0.0..=100.0).contains(&v);
        let finite = [
            self.temperature,
            self.wind_speed,
            self.cloud_coverage,
            self.humidity,
            self.rain,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidRecord(String::from("non-finite weather value")));
        }
        if !pct(self.cloud_coverage) || !pct(self.humidity) {
            return Err(Error::InvalidRecord(String::from(
                "cloud coverage and humidity must be within [0, 100]",
            )));
        }
        if self.rain < 0.0 || self.wind_speed < 0.0 {
            return Err(Error::InvalidRecord(String::from(
                "rain and wind speed must be non-negative",
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub date: NaiveDate,
    pub weather: Weather,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarRecord {
    pub date: NaiveDate,
    pub day_type: DayType,
    pub season: Season,
    /// Week index since the first study date; the week of the anchor is 1.
    pub week_number: u32,
}

/// Week index of `date` counted from `anchor` (the anchor's week is 1).
pub fn week_number(anchor: NaiveDate, date: NaiveDate) -> u32 {
    let days = (date - anchor).num_days();
    (days.div_euclid(7) + 1).max(1) as u32
}

/// Builds calendar records from `(date, day_type, season)` entries, sorted by
/// date. Weeks are anchored at `anchor`, or at the earliest date when `None`.
pub fn build_calendar(
    entries: &[(NaiveDate, DayType, Season)],
    anchor: Option<NaiveDate>,
) -> Result<Vec<CalendarRecord>> {
    let mut by_date = BTreeMap::new();
    for &(date, day_type, season) in entries {
        if by_date.insert(date, (day_type, season)).is_some() {
            return Err(Error::DuplicateDate(date));
        }
    }
    let Some(&first) = by_date.keys().next() else {
        return Ok(Vec::new());
    };
    let anchor = anchor.unwrap_or(first);
    if first < anchor {
        return Err(Error::InvalidInput(format!(
            "calendar date {first} precedes week anchor {anchor}"
        )));
    }
    Ok(by_date
        .into_iter()
        .map(|(date, (day_type, season))| CalendarRecord {
            date,
            day_type,
            season,
            week_number: week_number(anchor, date),
        })
        .collect())
}

/// Restricts daily weather to `[start, end]` and checks there is exactly one
/// valid record per date.
pub fn check_weather(
    records: &[WeatherRecord],
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<WeatherRecord>> {
    let mut by_date = BTreeMap::new();
    for r in records.iter().filter(|r| r.date >= start && r.date <= end) {
        r.weather.validate()?;
        if by_date.insert(r.date, *r).is_some() {
            return Err(Error::DuplicateDate(r.date));
        }
    }
    let missing: Vec<NaiveDate> = start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !by_date.contains_key(d))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingDates(missing));
    }
    Ok(by_date.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn route(n: usize) -> RouteSpec {
        RouteSpec {
            route: "90".to_string(),
            direction: Direction::Outbound,
            stops: (1..=n).map(|i| format!("S{i}")).collect(),
        }
    }

    fn signal(stop: usize, minute: u32, kind: ApcInfoType, counts: [Option<u32>; 3]) -> RawSignal {
        RawSignal {
            date: d(2022, 6, 6),
            route: "90".to_string(),
            table_no: 4,
            ride_no: 7,
            direction: Direction::Outbound,
            vehicle: "V1".to_string(),
            vehicle_type: VehicleType::Bus,
            path: "P1".to_string(),
            timestamp: d(2022, 6, 6).and_hms_opt(7, minute, 0).unwrap(),
            noise: false,
            status: 0,
            diverted_route: None,
            stop: format!("S{stop}"),
            apc_info_type: kind,
            inf1: counts[0],
            inf2: counts[1],
            inf3: counts[2],
        }
    }

    fn caps() -> CapacityTable {
        CapacityTable::new(&[(VehicleType::Bus, 80)])
    }

    #[test]
    fn per_stop_counts_map_directly() {
        let s = signal(1, 0, ApcInfoType::PerStop, [None, Some(3), Some(1)]);
        s.validate().unwrap();
        let r = reconstruct_rides(&[s], &route(1), &caps());
        let stop = &r.rides[0].stops[0];
        assert_eq!((stop.boarded, stop.alighted), (3, 1));
    }

    #[test]
    fn counts_without_info_type_are_rejected() {
        let s = signal(1, 0, ApcInfoType::None, [None, Some(3), None]);
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("counts present without info type"));
    }

    #[test]
    fn timestamp_must_fall_on_record_date() {
        let mut s = signal(1, 0, ApcInfoType::None, [None, None, None]);
        s.timestamp = d(2022, 6, 7).and_hms_opt(0, 1, 0).unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn cumulative_counters_are_differenced() {
        let cum = [0, 4, 4, 9];
        let sigs: Vec<_> = cum
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                signal(i + 1, i as u32, ApcInfoType::Cumulative, [Some(b), Some(b), Some(0)])
            })
            .collect();
        let r = reconstruct_rides(&sigs, &route(4), &caps());
        let boarded: Vec<_> = r.rides[0].stops.iter().map(|s| s.boarded).collect();
        assert_eq!(boarded, vec![0, 4, 0, 5]);
        assert_eq!(r.rides[0].stops.last().unwrap().onboard_after, 9);
    }

    #[test]
    fn decreasing_counter_flags_outlier_candidate() {
        let sigs = vec![
            signal(1, 0, ApcInfoType::Cumulative, [Some(5), Some(5), Some(0)]),
            signal(2, 1, ApcInfoType::Cumulative, [Some(3), Some(3), Some(0)]),
        ];
        let r = reconstruct_rides(&sigs, &route(2), &caps());
        assert!(r.rides[0].quality.outlier_stop_indices.contains(&2));
        assert_eq!(r.rides[0].stops[1].boarded, 0);
        assert!(r.diagnostics.iter().any(|d| d.code == "non_monotone_counter"));
    }

    #[test]
    fn missing_fraction_is_exact_ratio() {
        let sigs: Vec<_> = (1..=19)
            .filter(|&i| i != 5 && i != 11)
            .map(|i| signal(i, i as u32, ApcInfoType::PerStop, [None, Some(1), Some(0)]))
            .collect();
        let r = reconstruct_rides(&sigs, &route(19), &caps());
        assert_eq!(r.rides[0].quality.missing_fraction, 2.0 / 19.0);
        assert!(r.rides[0].stops.len() <= 19);
    }

    #[test]
    fn noise_fraction_is_exact_ratio() {
        let mut sigs: Vec<_> = (1..=20)
            .map(|i| signal((i + 1) / 2, i as u32, ApcInfoType::PerStop, [None, Some(1), Some(0)]))
            .collect();
        sigs[3].noise = true;
        let r = reconstruct_rides(&sigs, &route(10), &caps());
        assert_eq!(r.rides[0].quality.noise_fraction, 0.05);
    }

    #[test]
    fn last_clean_signal_wins_at_a_stop() {
        let mut noisy = signal(1, 2, ApcInfoType::PerStop, [None, Some(40), Some(0)]);
        noisy.noise = true;
        let sigs = vec![
            signal(1, 0, ApcInfoType::PerStop, [None, Some(1), Some(0)]),
            signal(1, 1, ApcInfoType::PerStop, [None, Some(2), Some(0)]),
            noisy,
        ];
        let r = reconstruct_rides(&sigs, &route(1), &caps());
        assert_eq!(r.rides[0].stops[0].boarded, 2);
    }

    #[test]
    fn negative_onboard_is_clipped() {
        let sigs = vec![
            signal(1, 0, ApcInfoType::PerStop, [None, Some(1), Some(0)]),
            signal(2, 1, ApcInfoType::PerStop, [None, Some(0), Some(3)]),
        ];
        let r = reconstruct_rides(&sigs, &route(2), &caps());
        assert_eq!(r.rides[0].stops[1].onboard_after, 0);
        assert!(r.diagnostics.iter().any(|d| d.code == "negative_onboard"));
    }

    #[test]
    fn segment_occupancy_carries_over_missing_stops() {
        let sigs = vec![
            signal(1, 0, ApcInfoType::PerStop, [None, Some(4), Some(0)]),
            signal(3, 2, ApcInfoType::PerStop, [None, Some(2), Some(1)]),
            signal(4, 3, ApcInfoType::PerStop, [None, Some(0), Some(5)]),
        ];
        let r = reconstruct_rides(&sigs, &route(4), &caps());
        assert_eq!(r.rides[0].segment_occupancy(), vec![4, 4, 5]);
    }

    #[test]
    fn week_numbers_anchor_at_first_date() {
        let a = d(2022, 6, 6);
        assert_eq!(week_number(a, a), 1);
        assert_eq!(week_number(a, d(2022, 6, 12)), 1);
        assert_eq!(week_number(a, d(2022, 6, 13)), 2);
        assert_eq!(week_number(a, d(2022, 12, 4)), 26);
    }

    #[test]
    fn calendar_rejects_duplicates() {
        let e = [
            (d(2022, 6, 6), DayType::Working, Season::Summer),
            (d(2022, 6, 6), DayType::Holiday, Season::Summer),
        ];
        assert!(matches!(build_calendar(&e, None), Err(Error::DuplicateDate(_))));
    }

    #[test]
    fn weather_gaps_are_named() {
        let start = d(2022, 6, 6);
        let end = d(2022, 12, 4);
        let all: Vec<_> = start
            .iter_days()
            .take_while(|x| *x <= end)
            .map(|date| WeatherRecord {
                date,
                weather: Weather::default(),
            })
            .collect();
        assert_eq!(check_weather(&all, start, end).unwrap().len(), 182);
        let gap: Vec<_> = all.iter().copied().filter(|r| r.date != d(2022, 7, 1)).collect();
        match check_weather(&gap, start, end) {
            Err(Error::MissingDates(v)) => assert_eq!(v, vec![d(2022, 7, 1)]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
