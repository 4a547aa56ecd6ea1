//! Hourly aggregate rides, load factors and undercrowding labels.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CalendarRecord, DayType, Ride, Season, Weather, WeatherRecord};

/// One hourly slot of one date; `slot` is the starting hour (7 = 07:00-07:59).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotIndex {
    pub date: NaiveDate,
    pub slot: u8,
}

/// A virtual ride pooling every real ride of one slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateRide {
    pub id: u32,
    pub slot: SlotIndex,
    pub capacity: u64,
    /// Summed on-board passengers, one entry per segment.
    pub occupancy: Vec<u64>,
    pub n_source_rides: usize,
}

impl AggregateRide {
    pub fn n_segments(&self) -> usize {
        self.occupancy.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub c_low: f64,
    /// Overcrowding threshold, unused by the undercrowding pipeline.
    pub c_high: Option<f64>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            c_low: 0.01,
            c_high: None,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_low > 0.0 && self.c_low <= 1.0) {
            return Err(Error::InvalidConfig(format!("c_low {} not in (0, 1]", self.c_low)));
        }
        if let Some(h) = self.c_high {
            if !(h > self.c_low && h <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "c_high {h} must lie in (c_low, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// One model row: segment `segment` of aggregate ride `ride_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentObservation {
    pub ride_id: u32,
    pub date: NaiveDate,
    pub time_slot: u8,
    /// 1-based segment number.
    pub segment: u16,
    pub y: u8,
    pub load_factor: f64,
    pub occupancy: u64,
    pub capacity: u64,
    pub week_number: u32,
    pub day_type: DayType,
    pub season: Season,
    pub weather: Weather,
}

/// Pools rides by (date, departure hour). Ids follow (date, slot) order,
/// starting at 1.
pub fn aggregate_rides(rides: &[Ride], n_segments: usize) -> Result<Vec<AggregateRide>> {
    let mut slots: BTreeMap<SlotIndex, AggregateRide> = BTreeMap::new();
    for ride in rides {
        if ride.n_segments() != n_segments {
            return Err(Error::SegmentMismatch {
                ride: format!("{}", ride.key),
                expected: n_segments,
                found: ride.n_segments(),
            });
        }
        let Some(slot) = ride.departure_hour() else {
            return Err(Error::InvalidInput(format!("ride {} has no observed stop", ride.key)));
        };
        let idx = SlotIndex {
            date: ride.key.date,
            slot,
        };
        let agg = slots.entry(idx).or_insert_with(|| AggregateRide {
            id: 0,
            slot: idx,
            capacity: 0,
            occupancy: alloc::vec![0; n_segments],
            n_source_rides: 0,
        });
        agg.capacity += u64::from(ride.capacity);
        for (o, s) in agg.occupancy.iter_mut().zip(ride.segment_occupancy()) {
            *o += u64::from(s);
        }
        agg.n_source_rides += 1;
    }
    Ok(slots
        .into_values()
        .enumerate()
        .map(|(i, mut a)| {
            a.id = i as u32 + 1;
            a
        })
        .collect())
}

/// Load factor of segment `j` (1-based).
pub fn load_factor(agg: &AggregateRide, j: usize) -> f64 {
    agg.occupancy[j - 1] as f64 / agg.capacity as f64
}

/// 1 when the load factor is at or below `c_low`.
pub fn label_undercrowding(lf: f64, cfg: &ThresholdConfig) -> u8 {
    u8::from(lf <= cfg.c_low)
}

/// 1 when an overcrowding threshold is set and the load factor reaches it.
pub fn label_overcrowding(lf: f64, cfg: &ThresholdConfig) -> Option<u8> {
    cfg.c_high.map(|h| u8::from(lf >= h))
}

/// Expands aggregates into one labelled row per segment with the date's
/// calendar and weather attached.
pub fn join_covariates(
    aggregates: &[AggregateRide],
    weather: &[WeatherRecord],
    calendar: &[CalendarRecord],
    cfg: &ThresholdConfig,
) -> Result<Vec<SegmentObservation>> {
    let wx: BTreeMap<NaiveDate, Weather> = weather.iter().map(|w| (w.date, w.weather)).collect();
    let cal: BTreeMap<NaiveDate, &CalendarRecord> = calendar.iter().map(|c| (c.date, c)).collect();
    let mut out = Vec::with_capacity(aggregates.iter().map(|a| a.n_segments()).sum());
    for agg in aggregates {
        let date = agg.slot.date;
        let c = cal.get(&date).ok_or(Error::UncoveredDate(date, "calendar"))?;
        let w = *wx.get(&date).ok_or(Error::UncoveredDate(date, "weather"))?;
        for j in 1..=agg.n_segments() {
            let lf = load_factor(agg, j);
            out.push(SegmentObservation {
                ride_id: agg.id,
                date,
                time_slot: agg.slot.slot,
                segment: j as u16,
                y: label_undercrowding(lf, cfg),
                load_factor: lf,
                occupancy: agg.occupancy[j - 1],
                capacity: agg.capacity,
                week_number: c.week_number,
                day_type: c.day_type,
                season: c.season,
                weather: w,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Direction, QualityFlags, RideKey, StopRecord, VehicleType};
    use alloc::string::ToString;
    use alloc::vec;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 6, day).unwrap()
    }

    /// A ride on a 4-stop route whose segment occupancies are `occ`.
    fn ride(date: NaiveDate, hour: u32, no: u32, capacity: u32, occ: [u32; 3]) -> Ride {
        let t = date.and_hms_opt(hour, 10, 0).unwrap();
        let mut prev = 0;
        let mut stops = Vec::new();
        for (i, &o) in occ.iter().chain(&[0]).enumerate() {
            let (b, a) = if o >= prev { (o - prev, 0) } else { (0, prev - o) };
            stops.push(StopRecord {
                stop_index: i as u16 + 1,
                stop_id: format!("S{}", i + 1),
                boarded: b,
                alighted: a,
                onboard_after: o,
                timestamp: t,
            });
            prev = o;
        }
        Ride {
            key: RideKey {
                date,
                route: "90".to_string(),
                table_no: 1,
                ride_no: no,
                direction: Direction::Outbound,
            },
            vehicle: "V".to_string(),
            vehicle_type: VehicleType::Bus,
            capacity,
            n_route_stops: 4,
            stops,
            quality: QualityFlags::default(),
            stop_sequence: vec![],
            paths: vec![],
            statuses: Default::default(),
            diverted: false,
        }
    }

    #[test]
    fn pools_capacity_and_occupancy() {
        let rides = [
            ride(d(6), 7, 1, 80, [1, 12, 3]),
            ride(d(6), 7, 2, 80, [0, 7, 0]),
            ride(d(6), 9, 3, 80, [5, 5, 5]),
        ];
        let aggs = aggregate_rides(&rides, 3).unwrap();
        assert_eq!(aggs.len(), 2);
        assert_eq!(aggs[0].capacity, 160);
        assert_eq!(aggs[0].occupancy, vec![1, 19, 3]);
        assert_eq!(aggs[0].n_source_rides, 2);
        assert_eq!(aggs[1].slot.slot, 9);
        assert_eq!((aggs[0].id, aggs[1].id), (1, 2));
    }

    #[test]
    fn segment_mismatch_is_an_error() {
        let r = ride(d(6), 7, 1, 80, [1, 2, 3]);
        assert!(matches!(aggregate_rides(&[r], 18), Err(Error::SegmentMismatch { .. })));
    }

    #[test]
    fn load_factor_and_labels() {
        let agg = AggregateRide {
            id: 1,
            slot: SlotIndex { date: d(6), slot: 7 },
            capacity: 160,
            occupancy: vec![0, 16, 1],
            n_source_rides: 2,
        };
        assert_eq!(load_factor(&agg, 1), 0.0);
        assert_eq!(load_factor(&agg, 2), 0.1);
        assert_eq!(load_factor(&agg, 3), 0.00625);
        let cfg = ThresholdConfig::default();
        assert_eq!(label_undercrowding(0.00625, &cfg), 1);
        assert_eq!(label_undercrowding(0.01, &cfg), 1);
        assert_eq!(label_undercrowding(0.0100001, &cfg), 0);
        assert_eq!(label_undercrowding(0.0, &cfg), 1);
        assert_eq!(label_overcrowding(0.9, &cfg), None);
    }

    #[test]
    fn join_emits_one_row_per_segment_and_names_gaps() {
        let aggs = aggregate_rides(&[ride(d(6), 7, 1, 80, [1, 2, 3])], 3).unwrap();
        let cal = [CalendarRecord {
            date: d(6),
            day_type: DayType::Working,
            season: Season::Summer,
            week_number: 1,
        }];
        let wx = [WeatherRecord {
            date: d(6),
            weather: Weather::default(),
        }];
        let cfg = ThresholdConfig::default();
        let rows = join_covariates(&aggs, &wx, &cal, &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.time_slot == 7 && r.ride_id == 1));
        assert_eq!(rows.iter().map(|r| r.segment).collect::<Vec<_>>(), vec![1, 2, 3]);
        match join_covariates(&aggs, &[], &cal, &cfg) {
            Err(Error::UncoveredDate(date, "weather")) => assert_eq!(date, d(6)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn threshold_config_checks() {
        assert!(ThresholdConfig { c_low: 0.0, c_high: None }.validate().is_err());
        assert!(ThresholdConfig { c_low: 0.2, c_high: Some(0.1) }.validate().is_err());
        assert!(ThresholdConfig { c_low: 0.01, c_high: Some(0.8) }.validate().is_ok());
    }
}
