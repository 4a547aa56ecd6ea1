//! Fixed-effects design: polynomial time slot and week, day-type dummies,
//! weather columns and the slot/week by day-type interactions.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aggregate::SegmentObservation;
use crate::error::{Diagnostic, Error, Result};
use crate::ingest::{DayType, Season, Weather};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherVar {
    Temperature,
    WindSpeed,
    CloudCoverage,
    Humidity,
    Rain,
}

impl WeatherVar {
    pub const ALL: [WeatherVar; 5] = [
        Self::Temperature,
        Self::WindSpeed,
        Self::CloudCoverage,
        Self::Humidity,
        Self::Rain,
    ];

    pub fn get(self, w: &Weather) -> f64 {
        match self {
            Self::Temperature => w.temperature,
            Self::WindSpeed => w.wind_speed,
            Self::CloudCoverage => w.cloud_coverage,
            Self::Humidity => w.humidity,
            Self::Rain => w.rain,
        }
    }

    pub fn set(self, w: &mut Weather, v: f64) {
        match self {
            Self::Temperature => w.temperature = v,
            Self::WindSpeed => w.wind_speed = v,
            Self::CloudCoverage => w.cloud_coverage = v,
            Self::Humidity => w.humidity = v,
            Self::Rain => w.rain = v,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Temperature => "Temperature",
            Self::WindSpeed => "WindSpeed",
            Self::CloudCoverage => "CloudCoverage",
            Self::Humidity => "RelativeHumidity",
            Self::Rain => "Precipitation",
        }
    }
}

fn day_label(d: DayType) -> &'static str {
    match d {
        DayType::Working => "Day type [Workingdays]",
        DayType::Strike => "Day type [Strikedays]",
        DayType::Saturday => "Day type [Saturdays]",
        DayType::Holiday => "Day type [Holidays]",
    }
}

/// Dummy order in the design.
const DUMMY_ORDER: [DayType; 4] = [
    DayType::Saturday,
    DayType::Holiday,
    DayType::Strike,
    DayType::Working,
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub slot_degree: u8,
    pub week_degree: u8,
    pub baseline: DayType,
    pub slot_interactions: bool,
    pub week_interactions: bool,
    pub weather: Vec<WeatherVar>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            slot_degree: 5,
            week_degree: 3,
            baseline: DayType::Working,
            slot_interactions: true,
            week_interactions: true,
            weather: alloc::vec![WeatherVar::Rain, WeatherVar::WindSpeed],
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.slot_degree > 10 || self.week_degree > 6 {
            return Err(Error::InvalidConfig(format!(
                "degrees ({}, {}) outside 0..=10 and 0..=6",
                self.slot_degree, self.week_degree
            )));
        }
        let distinct: BTreeSet<_> = self.weather.iter().collect();
        if distinct.len() != self.weather.len() {
            return Err(Error::InvalidConfig(String::from("repeated weather column")));
        }
        Ok(())
    }

    fn dummies(&self) -> impl Iterator<Item = DayType> + '_ {
        DUMMY_ORDER.into_iter().filter(move |d| *d != self.baseline)
    }

    /// Every column the spec can produce, before all-zero columns are
    /// dropped.
    pub fn terms(&self) -> Vec<Term> {
        candidate_terms(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Term {
    Day { level: DayType },
    Slot { degree: u8 },
    Week { degree: u8 },
    Weather { var: WeatherVar },
    SlotDay { degree: u8, level: DayType },
    WeekDay { degree: u8, level: DayType },
    /// Forest-only season indicator (1 for winter).
    Winter,
}

impl Term {
    pub fn label(&self) -> String {
        match *self {
            Term::Day { level } => String::from(day_label(level)),
            Term::Slot { degree } => format!("Time slot [^{degree}]"),
            Term::Week { degree } => format!("Week [^{degree}]"),
            Term::Weather { var } => String::from(var.label()),
            Term::SlotDay { degree, level } => {
                format!("Time slot [^{degree}] * {}", day_label(level))
            }
            Term::WeekDay { degree, level } => format!("{} * Week [^{degree}]", day_label(level)),
            Term::Winter => String::from("Season [Winter]"),
        }
    }

    fn value(&self, s: f64, w: f64, day: DayType, season: Season, weather: &Weather) -> f64 {
        let ind = |l: DayType| if day == l { 1.0 } else { 0.0 };
        match *self {
            Term::Day { level } => ind(level),
            Term::Slot { degree } => libm::pow(s, f64::from(degree)),
            Term::Week { degree } => libm::pow(w, f64::from(degree)),
            Term::Weather { var } => var.get(weather),
            Term::SlotDay { degree, level } => libm::pow(s, f64::from(degree)) * ind(level),
            Term::WeekDay { degree, level } => libm::pow(w, f64::from(degree)) * ind(level),
            Term::Winter => {
                if season == Season::Winter {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Row-major numeric design with per-row group ids and responses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub x: Vec<f64>,
    pub columns: Vec<Term>,
    /// Segment id of each row.
    pub groups: Vec<u16>,
    pub response: Vec<f64>,
    pub ride_ids: Vec<u32>,
    pub diagnostics: Vec<Diagnostic>,
}

impl DesignMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn labels(&self) -> Vec<String> {
        self.columns.iter().map(Term::label).collect()
    }
}

/// One labelled row per design column.
pub fn describe_columns(design: &DesignMatrix) -> Vec<(usize, String)> {
    design.labels().into_iter().enumerate().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        Range { min, max }
    }

    /// Affine map onto [0, 1]; a zero-width range maps to 0.
    pub fn scale(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Stored training transform, reused for test rows and scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub spec: ModelSpec,
    pub slot_range: Range,
    pub week_range: Range,
    pub columns: Vec<Term>,
    /// Labels of columns that were identically zero in training.
    pub dropped: Vec<String>,
    /// Training means of every weather variable, in [`WeatherVar::ALL`] order.
    pub weather_means: Vec<f64>,
    pub weather_ranges: Vec<Range>,
}

fn candidate_terms(spec: &ModelSpec) -> Vec<Term> {
    let mut t = Vec::new();
    for level in spec.dummies() {
        t.push(Term::Day { level });
    }
    for degree in 1..=spec.slot_degree {
        t.push(Term::Slot { degree });
    }
    for degree in 1..=spec.week_degree {
        t.push(Term::Week { degree });
    }
    for &var in &spec.weather {
        t.push(Term::Weather { var });
    }
    if spec.slot_interactions {
        for level in spec.dummies() {
            for degree in 1..=spec.slot_degree {
                t.push(Term::SlotDay { degree, level });
            }
        }
    }
    if spec.week_interactions {
        for level in spec.dummies() {
            for degree in 1..=spec.week_degree {
                t.push(Term::WeekDay { degree, level });
            }
        }
    }
    t
}

impl FeatureTransform {
    /// Learns ranges and drops all-zero columns on the training rows.
    pub fn fit(obs: &[SegmentObservation], spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        if obs.is_empty() {
            return Err(Error::InvalidInput(String::from("no observations")));
        }
        let slot_range = Range::of(obs.iter().map(|o| f64::from(o.time_slot)));
        let week_range = Range::of(obs.iter().map(|o| f64::from(o.week_number)));
        let n = obs.len() as f64;
        let weather_means = WeatherVar::ALL
            .iter()
            .map(|v| obs.iter().map(|o| v.get(&o.weather)).sum::<f64>() / n)
            .collect();
        let weather_ranges = WeatherVar::ALL
            .iter()
            .map(|v| Range::of(obs.iter().map(|o| v.get(&o.weather))))
            .collect();
        let mut t = FeatureTransform {
            spec: spec.clone(),
            slot_range,
            week_range,
            columns: Vec::new(),
            dropped: Vec::new(),
            weather_means,
            weather_ranges,
        };
        for term in candidate_terms(spec) {
            let nonzero = obs.iter().any(|o| t.term_value(&term, o) != 0.0);
            if nonzero {
                t.columns.push(term);
            } else {
                t.dropped.push(term.label());
            }
        }
        for o in obs {
            if WeatherVar::ALL.iter().any(|v| !v.get(&o.weather).is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite weather on ride {}", o.ride_id)));
            }
        }
        Ok(t)
    }

    /// Value of `term` on row `o` under this transform's scaling.
    pub fn term_value(&self, term: &Term, o: &SegmentObservation) -> f64 {
        let s = self.slot_range.scale(f64::from(o.time_slot));
        let w = self.week_range.scale(f64::from(o.week_number));
        term.value(s, w, o.day_type, o.season, &o.weather)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.columns.iter().map(Term::label).collect()
    }

    fn check_level(&self, day: DayType) -> Result<()> {
        if day == self.spec.baseline || self.columns.contains(&Term::Day { level: day }) {
            Ok(())
        } else {
            Err(Error::UnseenLevel(String::from(day.as_str())))
        }
    }

    /// Encodes one row.
    pub fn encode_row(&self, o: &SegmentObservation) -> Result<Vec<f64>> {
        self.check_level(o.day_type)?;
        Ok(self.columns.iter().map(|t| self.term_value(t, o)).collect())
    }

    /// Applies the stored transform. Values outside the training ranges
    /// are extrapolated and reported as diagnostics.
    pub fn transform(&self, obs: &[SegmentObservation]) -> Result<DesignMatrix> {
        self.encode_with(obs, &self.columns)
    }

    /// Forest inputs: the design columns plus the weather variables the
    /// design leaves out and a winter indicator.
    pub fn forest_columns(&self) -> Vec<Term> {
        let mut cols = self.columns.clone();
        for var in WeatherVar::ALL {
            if !self.spec.weather.contains(&var) {
                cols.push(Term::Weather { var });
            }
        }
        cols.push(Term::Winter);
        cols
    }

    pub fn forest_design(&self, obs: &[SegmentObservation]) -> Result<DesignMatrix> {
        self.encode_with(obs, &self.forest_columns())
    }

    fn encode_with(&self, obs: &[SegmentObservation], columns: &[Term]) -> Result<DesignMatrix> {
        let mut d = DesignMatrix {
            n_rows: obs.len(),
            n_cols: columns.len(),
            x: Vec::with_capacity(obs.len() * columns.len()),
            columns: columns.to_vec(),
            groups: Vec::with_capacity(obs.len()),
            response: Vec::with_capacity(obs.len()),
            ride_ids: Vec::with_capacity(obs.len()),
            diagnostics: Vec::new(),
        };
        let (mut slot_out, mut week_out) = (0usize, 0usize);
        let mut weather_out = [0usize; 5];
        for o in obs {
            self.check_level(o.day_type)?;
            slot_out += usize::from(!self.slot_range.contains(f64::from(o.time_slot)));
            week_out += usize::from(!self.week_range.contains(f64::from(o.week_number)));
            for (k, var) in WeatherVar::ALL.iter().enumerate() {
                weather_out[k] += usize::from(!self.weather_ranges[k].contains(var.get(&o.weather)));
            }
            for t in columns {
                d.x.push(self.term_value(t, o));
            }
            d.groups.push(o.segment);
            d.response.push(f64::from(o.y));
            d.ride_ids.push(o.ride_id);
        }
        if slot_out > 0 {
            d.diagnostics.push(Diagnostic::new(
                "extrapolation",
                format!("{slot_out} rows with time slot outside the training range"),
            ));
        }
        if week_out > 0 {
            d.diagnostics.push(Diagnostic::new(
                "extrapolation",
                format!("{week_out} rows with week outside the training range"),
            ));
        }
        for (k, var) in WeatherVar::ALL.iter().enumerate() {
            let used = columns.contains(&Term::Weather { var: *var });
            if used && weather_out[k] > 0 {
                d.diagnostics.push(Diagnostic::new(
                    "extrapolation",
                    format!("{} rows with {} outside the training range", weather_out[k], var.label()),
                ));
            }
        }
        Ok(d)
    }

    /// Reference weather: training means.
    pub fn reference_weather(&self) -> Weather {
        let mut w = Weather::default();
        for (var, m) in WeatherVar::ALL.iter().zip(&self.weather_means) {
            var.set(&mut w, *m);
        }
        w
    }
}

/// Fits the transform on `obs` and encodes them.
pub fn build_design(obs: &[SegmentObservation], spec: &ModelSpec) -> Result<(FeatureTransform, DesignMatrix)> {
    let t = FeatureTransform::fit(obs, spec)?;
    let d = t.transform(obs)?;
    Ok((t, d))
}
