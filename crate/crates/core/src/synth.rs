//! Synthetic ground truth: calendars, weather, segment labels with known
//! parameters, and the raw signal streams that reproduce them, with
//! optional fault injection.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregate::{join_covariates, AggregateRide, SegmentObservation, SlotIndex, ThresholdConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureTransform, ModelSpec, Term, WeatherVar};
use crate::ingest::{
    build_calendar, AnomalyCode, ApcInfoType, CalendarRecord, CapacityTable, Count, DayType, Direction,
    RawSignal, RideKey, RouteSpec, Season, VehicleType, Weather, WeatherRecord,
};
use crate::math::logistic;
use crate::validate::{Timetable, VehicleVerdict};

pub const ROUTE: &str = "R1";
pub const PATH: &str = "P1";
const DETOUR_PATH: &str = "P1-detour";
const STOP_GAP_SECONDS: i64 = 90;

/// How the logit of each segment row is formed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Effects {
    /// `beta[0]` is the intercept; `beta[1..]` follows `spec.terms()`.
    Linear { spec: ModelSpec, beta: Vec<f64> },
    /// `intercept ± amplitude`, plus when exactly one of "slot ≥ slot_cut"
    /// and "temperature ≥ temperature_cut" holds, minus otherwise.
    ThresholdXor {
        intercept: f64,
        amplitude: f64,
        slot_cut: u8,
        temperature_cut: f64,
    },
}

impl Effects {
    /// Ten terms: intercept, three day-type dummies, cubic slot, linear
    /// week, rain and wind.
    pub fn default_linear() -> Self {
        Effects::Linear {
            spec: ModelSpec {
                slot_degree: 3,
                week_degree: 1,
                baseline: DayType::Working,
                slot_interactions: false,
                week_interactions: false,
                weather: alloc::vec![WeatherVar::Rain, WeatherVar::WindSpeed],
            },
            beta: alloc::vec![-0.5, 0.7, 1.0, 0.4, -3.0, 1.5, 1.5, 0.3, 0.08, 0.03],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultRates {
    /// Per ride: one extra noisy signal.
    pub noise: f64,
    /// Per ride: signals of a tenth of the stops, plus one, are dropped.
    pub missing: f64,
    /// Per vehicle-day: every count is zero.
    pub all_zero_vehicle: f64,
    /// Per vehicle-day: nobody is ever counted alighting.
    pub one_sided_vehicle: f64,
    /// Per ride: 500 extra boardings at one stop, alighting at the last.
    pub spike: f64,
    /// Per ride: a depot, breakdown or interruption status, or a detour.
    pub anomaly: f64,
}

impl FaultRates {
    fn validate(&self) -> Result<()> {
        let r = [
            self.noise,
            self.missing,
            self.all_zero_vehicle,
            self.one_sided_vehicle,
            self.spike,
            self.anomaly,
        ];
        if r.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(String::from("fault rates must lie in [0, 1]")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScenario {
    pub start_date: NaiveDate,
    pub n_dates: u32,
    /// Hour of the first slot.
    pub first_slot: u8,
    pub n_slots: u8,
    pub n_segments: u16,
    /// Real rides per slot, drawn uniformly from this inclusive range.
    pub rides_per_slot: (u8, u8),
    pub capacities: CapacityTable,
    /// Share of vehicles that are trams; the rest are buses.
    pub tram_share: f64,
    /// Share of vehicles reporting cumulative counters.
    pub cumulative_share: f64,
    pub c_low: f64,
    pub effects: Effects,
    pub sigma_z2: f64,
    /// Explicit segment intercepts, one per segment, instead of draws.
    pub segment_intercepts: Option<Vec<f64>>,
    /// Weekday probabilities of a strike and of a public holiday.
    pub strike_rate: f64,
    pub holiday_rate: f64,
    pub faults: FaultRates,
    pub seed: u64,
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            start_date: NaiveDate::from_ymd_opt(2022, 6, 1).expect("valid date"),
            n_dates: 60,
            first_slot: 6,
            n_slots: 16,
            n_segments: 18,
            rides_per_slot: (1, 3),
            capacities: CapacityTable::new(&[(VehicleType::Tram, 200), (VehicleType::Bus, 100)]),
            tram_share: 0.5,
            cumulative_share: 0.5,
            c_low: 0.01,
            effects: Effects::default_linear(),
            sigma_z2: 1.0,
            segment_intercepts: None,
            strike_rate: 0.06,
            holiday_rate: 0.02,
            faults: FaultRates::default(),
            seed: 0,
        }
    }
}

impl SynthScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        if self.n_segments == 0 {
            return bad("n_segments must be at least 1");
        }
        if self.n_segments > 40 {
            return bad("n_segments above 40 would run rides past midnight");
        }
        if self.n_dates == 0 || self.n_slots == 0 {
            return bad("n_dates and n_slots must be positive");
        }
        if u32::from(self.first_slot) + u32::from(self.n_slots) > 23 {
            return bad("slots must end by 22:00");
        }
        let (lo, hi) = self.rides_per_slot;
        if lo == 0 || hi < lo {
            return bad("rides_per_slot must be a non-empty range of positive counts");
        }
        for p in [self.tram_share, self.cumulative_share, self.strike_rate, self.holiday_rate] {
            if !(0.0..=1.0).contains(&p) {
                return bad("shares and day-type rates must lie in [0, 1]");
            }
        }
        if self.strike_rate + self.holiday_rate > 1.0 {
            return bad("strike_rate + holiday_rate exceeds 1");
        }
        for vt in [VehicleType::Tram, VehicleType::Bus] {
            if self.capacities.capacity(vt).is_none() {
                return bad("capacities must cover tram and bus");
            }
        }
        ThresholdConfig {
            c_low: self.c_low,
            c_high: None,
        }
        .validate()?;
        if !(self.sigma_z2 >= 0.0 && self.sigma_z2.is_finite()) {
            return bad("sigma_z2 must be finite and non-negative");
        }
        if let Some(z) = &self.segment_intercepts {
            if z.len() != usize::from(self.n_segments) {
                return bad("segment_intercepts needs one value per segment");
            }
        }
        if let Effects::Linear { spec, beta } = &self.effects {
            spec.validate()?;
            if beta.len() != spec.terms().len() + 1 {
                return Err(Error::InvalidConfig(format!(
                    "beta has {} entries, the spec needs {}",
                    beta.len(),
                    spec.terms().len() + 1
                )));
            }
        }
        self.faults.validate()
    }

    pub fn route(&self) -> RouteSpec {
        RouteSpec {
            route: String::from(ROUTE),
            direction: Direction::Outbound,
            stops: (1..=self.n_segments + 1).map(|i| format!("S{i:02}")).collect(),
        }
    }

    pub fn timetable(&self) -> Timetable {
        Timetable {
            path: String::from(PATH),
            stops: self.route().stops,
        }
    }

    pub fn threshold(&self) -> ThresholdConfig {
        ThresholdConfig {
            c_low: self.c_low,
            c_high: None,
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

/// Everything a recovery test needs to compare a fit against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// Intercept first, then one entry per label.
    pub beta: Vec<f64>,
    pub labels: Vec<String>,
    pub sigma_z2: f64,
    /// Segment intercepts, segment 1 first.
    pub z: Vec<f64>,
    /// Logit of every observation row.
    pub eta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub calendar: Vec<CalendarRecord>,
    pub weather: Vec<WeatherRecord>,
    pub aggregates: Vec<AggregateRide>,
    pub observations: Vec<SegmentObservation>,
    pub truth: SynthTruth,
    /// Per-ride segment occupancies, grouped by aggregate.
    layout: Vec<SlotLayout>,
    /// Type and counter kind of each vehicle; vehicle `v` runs the
    /// `v`-th ride of every slot that has one.
    vehicles: Vec<(VehicleType, bool)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SlotLayout {
    slot: SlotIndex,
    rides: Vec<LaidRide>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LaidRide {
    vehicle: usize,
    occupancy: Vec<Count>,
}

fn season_of(d: NaiveDate) -> Season {
    if matches!(d.month(), 11 | 12 | 1 | 2 | 3) {
        Season::Winter
    } else {
        Season::Summer
    }
}

fn calendar(s: &SynthScenario, rng: &mut ChaCha8Rng) -> Result<Vec<CalendarRecord>> {
    let entries: Vec<(NaiveDate, DayType, Season)> = (0..s.n_dates)
        .map(|i| {
            let d = s.start_date + Duration::days(i64::from(i));
            let u: f64 = rng.random();
            let day = match d.weekday() {
                Weekday::Sat => DayType::Saturday,
                Weekday::Sun => DayType::Holiday,
                _ if u < s.strike_rate => DayType::Strike,
                _ if u < s.strike_rate + s.holiday_rate => DayType::Holiday,
                _ => DayType::Working,
            };
            (d, day, season_of(d))
        })
        .collect();
    build_calendar(&entries, None)
}

fn round1(v: f64) -> f64 {
    libm::round(v * 10.0) / 10.0
}

/// Seasonal sinusoids plus AR(1) noise, rounded to one decimal.
fn weather(s: &SynthScenario, rng: &mut ChaCha8Rng) -> Vec<WeatherRecord> {
    let mut ar = [0.0f64; 4];
    let phi = 0.7;
    let innov = libm::sqrt(1.0 - phi * phi);
    (0..s.n_dates)
        .map(|i| {
            let d = s.start_date + Duration::days(i64::from(i));
            let phase = 2.0 * core::f64::consts::PI * (f64::from(d.ordinal()) - 110.0) / 365.25;
            let (sn, cs) = (libm::sin(phase), libm::cos(phase));
            for a in &mut ar {
                let e: f64 = rng.sample(StandardNormal);
                *a = phi * *a + innov * e;
            }
            let cloud = (55.0 - 15.0 * sn + 20.0 * ar[2]).clamp(0.0, 100.0);
            let wet: f64 = rng.random();
            let p_rain = (0.15 + 0.5 * cloud / 100.0).min(0.9);
            let rain = if wet < p_rain {
                let u: f64 = rng.random();
                -4.0 * libm::log(1.0 - u)
            } else {
                0.0
            };
            WeatherRecord {
                date: d,
                weather: Weather {
                    temperature: round1(12.0 + 10.0 * sn + 3.0 * ar[0]),
                    wind_speed: round1((12.0 + 3.0 * cs + 4.0 * ar[1]).max(0.0)),
                    cloud_coverage: round1(cloud),
                    humidity: round1((70.0 - 10.0 * sn + 8.0 * ar[3] + 0.1 * cloud).clamp(0.0, 100.0)),
                    rain: round1(rain),
                },
            }
        })
        .collect()
}

fn fleet(s: &SynthScenario, rng: &mut ChaCha8Rng) -> Vec<(VehicleType, bool)> {
    (0..usize::from(s.rides_per_slot.1))
        .map(|_| {
            let vt = if rng.random::<f64>() < s.tram_share {
                VehicleType::Tram
            } else {
                VehicleType::Bus
            };
            (vt, rng.random::<f64>() < s.cumulative_share)
        })
        .collect()
}

/// Largest occupancy labelled undercrowded at capacity `c`.
fn undercrowded_ceiling(c: u64, cfg: &ThresholdConfig) -> u64 {
    let lf = |o: u64| o as f64 / c as f64;
    let mut k = libm::floor(cfg.c_low * c as f64) as u64;
    while k > 0 && lf(k) > cfg.c_low {
        k -= 1;
    }
    while lf(k + 1) <= cfg.c_low {
        k += 1;
    }
    k
}

/// Draws the labelled observations and the per-ride layout behind them.
pub fn simulate(s: &SynthScenario) -> Result<SynthData> {
    s.validate()?;
    let mut rng_env = s.rng(0);
    let mut rng_z = s.rng(1);
    let mut rng_y = s.rng(2);
    let mut rng_layout = s.rng(3);

    let calendar = calendar(s, &mut rng_env)?;
    let weather = weather(s, &mut rng_env);
    let n_seg = usize::from(s.n_segments);

    let z: Vec<f64> = match &s.segment_intercepts {
        Some(z) => z.clone(),
        None => {
            let sd = libm::sqrt(s.sigma_z2);
            (0..n_seg)
                .map(|_| sd * rng_z.sample::<f64, _>(StandardNormal))
                .collect()
        }
    };

    let vehicles = fleet(s, &mut rng_layout);
    let cap = |v: usize| u64::from(s.capacities.capacity(vehicles[v].0).expect("validated"));

    // Skeleton aggregates and rows; occupancies are filled in once labels
    // are drawn.
    let mut slots = Vec::new();
    for c in &calendar {
        for h in 0..s.n_slots {
            let n = rng_layout.random_range(s.rides_per_slot.0..=s.rides_per_slot.1);
            slots.push((
                SlotIndex {
                    date: c.date,
                    slot: s.first_slot + h,
                },
                usize::from(n),
            ));
        }
    }
    let mut aggregates: Vec<AggregateRide> = slots
        .iter()
        .enumerate()
        .map(|(i, (slot, n))| AggregateRide {
            id: i as u32 + 1,
            slot: *slot,
            capacity: (0..*n).map(cap).sum(),
            occupancy: alloc::vec![0; n_seg],
            n_source_rides: *n,
        })
        .collect();
    let cfg = s.threshold();
    let skeleton = join_covariates(&aggregates, &weather, &calendar, &cfg)?;

    let (beta, labels, fixed): (Vec<f64>, Vec<String>, Vec<f64>) = match &s.effects {
        Effects::Linear { spec, beta } => {
            let t = FeatureTransform::fit(&skeleton, spec)?;
            let terms: Vec<Term> = spec.terms();
            let fixed = skeleton
                .iter()
                .map(|o| {
                    beta[0]
                        + terms
                            .iter()
                            .zip(&beta[1..])
                            .map(|(term, b)| b * t.term_value(term, o))
                            .sum::<f64>()
                })
                .collect();
            (beta.clone(), terms.iter().map(Term::label).collect(), fixed)
        }
        Effects::ThresholdXor {
            intercept,
            amplitude,
            slot_cut,
            temperature_cut,
        } => {
            let fixed = skeleton
                .iter()
                .map(|o| {
                    let a = o.time_slot >= *slot_cut;
                    let b = o.weather.temperature >= *temperature_cut;
                    intercept + if a != b { *amplitude } else { -*amplitude }
                })
                .collect();
            (alloc::vec![*intercept], Vec::new(), fixed)
        }
    };
    let eta: Vec<f64> = skeleton
        .iter()
        .zip(&fixed)
        .map(|(o, f)| f + z[usize::from(o.segment) - 1])
        .collect();

    let mut layout = Vec::with_capacity(aggregates.len());
    for (a, rows) in aggregates.iter_mut().zip(eta.chunks(n_seg)) {
        let k = undercrowded_ceiling(a.capacity, &cfg);
        let n = a.n_source_rides;
        let mut rides: Vec<LaidRide> = (0..n)
            .map(|v| LaidRide {
                vehicle: v,
                occupancy: alloc::vec![0; n_seg],
            })
            .collect();
        for (j, e) in rows.iter().enumerate() {
            let y = rng_y.random::<f64>() < logistic(*e);
            let o = if y {
                rng_layout.random_range(k.saturating_sub(30)..=k)
            } else {
                rng_layout.random_range(k + 1..=(k + 30).min(a.capacity))
            };
            a.occupancy[j] = o;
            for _ in 0..o {
                rides[rng_layout.random_range(0..n)].occupancy[j] += 1;
            }
        }
        layout.push(SlotLayout { slot: a.slot, rides });
    }
    let observations = join_covariates(&aggregates, &weather, &calendar, &cfg)?;

    Ok(SynthData {
        calendar,
        weather,
        aggregates,
        observations,
        truth: SynthTruth {
            beta,
            labels,
            sigma_z2: s.sigma_z2,
            z,
            eta,
        },
        layout,
        vehicles,
    })
}

/// Labelled segment observations and the truth behind them.
pub fn generate_observations(s: &SynthScenario) -> Result<(Vec<SegmentObservation>, SynthTruth)> {
    let d = simulate(s)?;
    Ok((d.observations, d.truth))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RideFaultKind {
    Noise,
    Missing,
    Spike,
    Anomaly(AnomalyCode),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RideFault {
    pub key: RideKey,
    pub kind: RideFaultKind,
    /// Stops touched by the fault.
    pub stops: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleDayFault {
    pub date: NaiveDate,
    pub vehicle: String,
    pub verdict: VehicleVerdict,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultLabels {
    pub rides: Vec<RideFault>,
    pub vehicle_days: Vec<VehicleDayFault>,
}

impl FaultLabels {
    pub fn rides_with(&self, pred: impl Fn(RideFaultKind) -> bool) -> BTreeSet<RideKey> {
        self.rides
            .iter()
            .filter(|f| pred(f.kind))
            .map(|f| f.key.clone())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalStream {
    pub signals: Vec<RawSignal>,
    pub route: RouteSpec,
    pub timetable: Timetable,
    pub capacities: CapacityTable,
    pub faults: FaultLabels,
}

fn vehicle_id(v: usize) -> String {
    format!("V{:03}", v + 1)
}

/// Per-stop (boarded, alighted) for per-segment on-board counts; everybody
/// leaves at the last stop. Small balanced flows are added at inner stops.
fn stop_counts(occupancy: &[Count], rng: &mut ChaCha8Rng) -> Vec<(Count, Count)> {
    let n_stops = occupancy.len() + 1;
    let mut out = Vec::with_capacity(n_stops);
    let mut prev = 0;
    for i in 0..n_stops {
        let target = occupancy.get(i).copied().unwrap_or(0);
        let (b, a) = if target >= prev { (target - prev, 0) } else { (0, prev - target) };
        let inner = i > 0 && i + 1 < n_stops;
        let room = 50u32.saturating_sub(b.max(a)).min(3);
        let e = if inner && room > 0 { rng.random_range(0..=room) } else { 0 };
        out.push((b + e, a + e));
        prev = target;
    }
    out
}

/// Renders the scenario as raw signals, injecting the configured faults.
pub fn emit_signals(s: &SynthScenario) -> Result<SignalStream> {
    let data = simulate(s)?;
    emit_signals_for(s, &data)
}

/// Like [`emit_signals`], reusing an existing simulation of `s`.
pub fn emit_signals_for(s: &SynthScenario, data: &SynthData) -> Result<SignalStream> {
    let route = s.route();
    let n_stops = route.stops.len();
    let f = &s.faults;
    let mut rng_counts = s.rng(4);
    let mut rng_fault = s.rng(5);
    let vehicles = &data.vehicles;
    let max_rides = vehicles.len();

    let mut labels = FaultLabels::default();
    // Vehicle-day faults, decided once per date and vehicle.
    let mut vday: Vec<Vec<Option<VehicleVerdict>>> = Vec::with_capacity(data.calendar.len());
    for _ in &data.calendar {
        let mut row = Vec::with_capacity(max_rides);
        for _ in 0..max_rides {
            let u: f64 = rng_fault.random();
            let verdict = if u < f.all_zero_vehicle {
                Some(VehicleVerdict::AllZero)
            } else if u < f.all_zero_vehicle + f.one_sided_vehicle {
                Some(VehicleVerdict::OneSided)
            } else {
                None
            };
            row.push(verdict);
        }
        vday.push(row);
    }
    let first_date = data.calendar.first().map(|c| c.date).unwrap_or(s.start_date);
    let mut vday_used: BTreeSet<(usize, usize)> = BTreeSet::new();

    let mut signals = Vec::new();
    for slot in &data.layout {
        let day_idx = (slot.slot.date - first_date).num_days() as usize;
        for ride in &slot.rides {
            let v = ride.vehicle;
            let key = RideKey {
                date: slot.slot.date,
                route: String::from(ROUTE),
                table_no: v as u32 + 1,
                ride_no: u32::from(slot.slot.slot),
                direction: Direction::Outbound,
            };
            let mut counts = stop_counts(&ride.occupancy, &mut rng_counts);
            let minute = rng_counts.random_range(0..20);
            let depart = slot
                .slot
                .date
                .and_hms_opt(u32::from(slot.slot.slot), minute, 0)
                .expect("valid time");

            let vd = vday[day_idx][v];
            match vd {
                Some(VehicleVerdict::AllZero) => counts.iter_mut().for_each(|c| *c = (0, 0)),
                Some(VehicleVerdict::OneSided) => {
                    counts.iter_mut().for_each(|c| c.1 = 0);
                    if counts.iter().all(|c| c.0 == 0) {
                        counts[0].0 = 1;
                    }
                }
                _ => {}
            }
            if vd.is_some() {
                vday_used.insert((day_idx, v));
            }

            let noise = rng_fault.random::<f64>() < f.noise;
            let missing = rng_fault.random::<f64>() < f.missing;
            let spike = vd.is_none() && rng_fault.random::<f64>() < f.spike;
            let anomaly = rng_fault.random::<f64>() < f.anomaly;

            if spike {
                let j = rng_fault.random_range(1..n_stops - 1);
                counts[j].0 += 500;
                counts[n_stops - 1].1 += 500;
                labels.rides.push(RideFault {
                    key: key.clone(),
                    kind: RideFaultKind::Spike,
                    stops: alloc::vec![j as u16 + 1, n_stops as u16],
                });
            }

            let (vt, cumulative) = vehicles[v];
            let mut ride_signals = Vec::with_capacity(n_stops * 2);
            let (mut cb, mut ca, mut onboard) = (0u32, 0u32, 0u32);
            for (i, &(b, a)) in counts.iter().enumerate() {
                cb += b;
                ca += a;
                onboard = (onboard + b).saturating_sub(a);
                let t = depart + Duration::seconds(STOP_GAP_SECONDS * i as i64);
                let (info, inf1, inf2, inf3) = if cumulative {
                    (ApcInfoType::Cumulative, Some(onboard), Some(cb), Some(ca))
                } else {
                    (ApcInfoType::PerStop, None, Some(b), Some(a))
                };
                let base = RawSignal {
                    date: key.date,
                    route: key.route.clone(),
                    table_no: key.table_no,
                    ride_no: key.ride_no,
                    direction: key.direction,
                    vehicle: vehicle_id(v),
                    vehicle_type: vt,
                    path: String::from(PATH),
                    timestamp: t,
                    noise: false,
                    status: 0,
                    diverted_route: None,
                    stop: route.stops[i].clone(),
                    apc_info_type: info,
                    inf1,
                    inf2,
                    inf3,
                };
                // A position ping without counts follows some stops.
                let ping = rng_counts.random::<f64>() < 0.3;
                ride_signals.push(base.clone());
                if ping {
                    ride_signals.push(RawSignal {
                        timestamp: t + Duration::seconds(20),
                        status: 1,
                        apc_info_type: ApcInfoType::None,
                        inf1: None,
                        inf2: None,
                        inf3: None,
                        ..base
                    });
                }
            }

            if missing {
                let m = n_stops / 10 + 1;
                let dropped: BTreeSet<usize> = sample(&mut rng_fault, n_stops - 1, m.min(n_stops - 1))
                    .into_iter()
                    .map(|i| i + 1)
                    .collect();
                let dropped_ids: BTreeSet<&str> = dropped.iter().map(|i| route.stops[*i].as_str()).collect();
                ride_signals.retain(|sig| !dropped_ids.contains(sig.stop.as_str()));
                labels.rides.push(RideFault {
                    key: key.clone(),
                    kind: RideFaultKind::Missing,
                    stops: dropped.iter().map(|i| *i as u16 + 1).collect(),
                });
            }
            if noise {
                let counted: Vec<usize> = (0..ride_signals.len())
                    .filter(|i| ride_signals[*i].carries_counts())
                    .collect();
                if let Some(&i) = counted.get(rng_fault.random_range(0..counted.len().max(1))) {
                    let mut sig = ride_signals[i].clone();
                    sig.noise = true;
                    sig.timestamp += Duration::seconds(5);
                    let jitter = rng_fault.random_range(1..=5);
                    sig.inf2 = sig.inf2.map(|c| c + jitter);
                    let idx = route.stops.iter().position(|x| *x == sig.stop).unwrap_or(0);
                    ride_signals.insert(i + 1, sig);
                    labels.rides.push(RideFault {
                        key: key.clone(),
                        kind: RideFaultKind::Noise,
                        stops: alloc::vec![idx as u16 + 1],
                    });
                }
            }
            if anomaly {
                let code = [
                    AnomalyCode::Depot,
                    AnomalyCode::Breakdown,
                    AnomalyCode::Interrupted,
                    AnomalyCode::Detour,
                ][rng_fault.random_range(0..4)];
                let at = rng_fault.random_range(0..ride_signals.len());
                let sig = &mut ride_signals[at];
                match code {
                    AnomalyCode::Depot => sig.status = 10,
                    AnomalyCode::Breakdown => sig.status = 20,
                    AnomalyCode::Interrupted => sig.status = 30,
                    AnomalyCode::Detour => sig.path = String::from(DETOUR_PATH),
                }
                let idx = route.stops.iter().position(|x| *x == sig.stop).unwrap_or(0);
                labels.rides.push(RideFault {
                    key: key.clone(),
                    kind: RideFaultKind::Anomaly(code),
                    stops: alloc::vec![idx as u16 + 1],
                });
            }
            signals.extend(ride_signals);
        }
    }
    for (d, v) in vday_used {
        labels.vehicle_days.push(VehicleDayFault {
            date: data.calendar[d].date,
            vehicle: vehicle_id(v),
            verdict: vday[d][v].expect("recorded above"),
        });
    }
    Ok(SignalStream {
        signals,
        route,
        timetable: s.timetable(),
        capacities: s.capacities.clone(),
        faults: labels,
    })
}
