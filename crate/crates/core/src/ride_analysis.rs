//! Ride-level undercrowding: a ride is fully undercrowded at level `p`
//! when every one of its segments has predicted probability at least `p`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::aggregate::SegmentObservation;
use crate::error::{Diagnostic, Error, Result};
use crate::features::{FeatureTransform, WeatherVar};
use crate::glmm::GlmmModel;
use crate::gmerf::GmerfModel;
use crate::ingest::{DayType, Season, Weather};
use crate::math::logistic;

/// A fitted segment-level classifier.
pub trait SegmentModel {
    fn transform(&self) -> &FeatureTransform;
    fn predict_latent(&self, obs: &[SegmentObservation]) -> Result<Vec<f64>>;

    fn predict(&self, obs: &[SegmentObservation]) -> Result<Vec<f64>> {
        Ok(self.predict_latent(obs)?.into_iter().map(logistic).collect())
    }
}

impl SegmentModel for GlmmModel {
    fn transform(&self) -> &FeatureTransform {
        &self.transform
    }

    fn predict_latent(&self, obs: &[SegmentObservation]) -> Result<Vec<f64>> {
        GlmmModel::predict_latent(self, obs)
    }
}

impl SegmentModel for GmerfModel {
    fn transform(&self) -> &FeatureTransform {
        &self.transform
    }

    fn predict_latent(&self, obs: &[SegmentObservation]) -> Result<Vec<f64>> {
        GmerfModel::predict_latent(self, obs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RideProbabilityProfile {
    pub ride_id: u32,
    pub date: NaiveDate,
    pub time_slot: u8,
    pub day_type: DayType,
    pub week_number: u32,
    /// Indexed by segment - 1.
    pub probabilities: Vec<f64>,
    pub min_probability: f64,
}

impl RideProbabilityProfile {
    pub fn fully_undercrowded(&self, p: f64) -> bool {
        self.min_probability >= p
    }
}

/// Groups per-row probabilities by ride. Rides missing any of segments
/// `1..=n_segments` are left out with a diagnostic.
pub fn profiles_from_predictions(
    obs: &[SegmentObservation],
    probs: &[f64],
    n_segments: usize,
) -> (Vec<RideProbabilityProfile>, Vec<Diagnostic>) {
    let mut by_ride: BTreeMap<u32, (usize, Vec<Option<f64>>)> = BTreeMap::new();
    for (i, (o, p)) in obs.iter().zip(probs).enumerate() {
        let e = by_ride
            .entry(o.ride_id)
            .or_insert_with(|| (i, alloc::vec![None; n_segments]));
        let j = usize::from(o.segment);
        if (1..=n_segments).contains(&j) {
            e.1[j - 1] = Some(*p);
        }
    }
    let mut profiles = Vec::with_capacity(by_ride.len());
    let mut diags = Vec::new();
    for (ride, (first, probs)) in by_ride {
        let present: Option<Vec<f64>> = probs.into_iter().collect();
        match present {
            Some(p) => {
                let o = &obs[first];
                let min = p.iter().copied().fold(f64::INFINITY, f64::min);
                profiles.push(RideProbabilityProfile {
                    ride_id: ride,
                    date: o.date,
                    time_slot: o.time_slot,
                    day_type: o.day_type,
                    week_number: o.week_number,
                    probabilities: p,
                    min_probability: min,
                });
            }
            None => diags.push(Diagnostic::new(
                "incomplete_ride",
                format!("ride {ride} lacks some of its {n_segments} segments"),
            )),
        }
    }
    (profiles, diags)
}

pub fn profile_rides(
    model: &dyn SegmentModel,
    obs: &[SegmentObservation],
    n_segments: usize,
) -> Result<(Vec<RideProbabilityProfile>, Vec<Diagnostic>)> {
    let probs = model.predict(obs)?;
    Ok(profiles_from_predictions(obs, &probs, n_segments))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCurve {
    pub grid: Vec<f64>,
    pub counts: Vec<usize>,
}

/// 0 to 1 in steps of 0.005.
pub fn default_grid() -> Vec<f64> {
    (0..=200).map(|i| f64::from(i) / 200.0).collect()
}

/// Number of fully undercrowded rides at each level of `grid`.
pub fn level_curve(profiles: &[RideProbabilityProfile], grid: &[f64]) -> Result<LevelCurve> {
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput(String::from("grid must be ascending within [0, 1]")));
    }
    let mut mins: Vec<f64> = profiles.iter().map(|p| p.min_probability).collect();
    mins.sort_by(f64::total_cmp);
    // Count of mins >= p, by binary search on the sorted minima.
    let counts = grid
        .iter()
        .map(|&p| mins.len() - mins.partition_point(|m| *m < p))
        .collect();
    Ok(LevelCurve {
        grid: grid.to_vec(),
        counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub p: f64,
    pub n_p: usize,
    pub by_time_slot: BTreeMap<u8, usize>,
    pub by_day_type: BTreeMap<DayType, usize>,
    pub by_week: BTreeMap<u32, usize>,
    /// Keyed "YYYY-MM".
    pub by_month: BTreeMap<String, usize>,
}

/// Where the fully undercrowded rides at level `p` fall in time.
pub fn distribution_report(profiles: &[RideProbabilityProfile], p: f64) -> DistributionReport {
    let mut r = DistributionReport {
        p,
        n_p: 0,
        by_time_slot: BTreeMap::new(),
        by_day_type: BTreeMap::new(),
        by_week: BTreeMap::new(),
        by_month: BTreeMap::new(),
    };
    for pr in profiles.iter().filter(|pr| pr.fully_undercrowded(p)) {
        r.n_p += 1;
        *r.by_time_slot.entry(pr.time_slot).or_insert(0) += 1;
        *r.by_day_type.entry(pr.day_type).or_insert(0) += 1;
        *r.by_week.entry(pr.week_number).or_insert(0) += 1;
        let month = format!("{:04}-{:02}", pr.date.year(), pr.date.month());
        *r.by_month.entry(month).or_insert(0) += 1;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub day_type: DayType,
    pub time_slot: u8,
    pub week: u32,
    pub weather: Weather,
    #[serde(default = "default_season")]
    pub season: Season,
}

fn default_season() -> Season {
    Season::Summer
}

/// Per-segment probabilities for a hypothetical slot, one entry per id in
/// `segments`. Values outside the training ranges are reported.
pub fn scenario_predict(
    model: &dyn SegmentModel,
    scenario: &Scenario,
    segments: &[u16],
) -> Result<(Vec<f64>, Vec<Diagnostic>)> {
    let t = model.transform();
    let mut diags = Vec::new();
    if !t.slot_range.contains(f64::from(scenario.time_slot)) {
        diags.push(Diagnostic::new(
            "extrapolation",
            format!("time slot {} outside the training range", scenario.time_slot),
        ));
    }
    if !t.week_range.contains(f64::from(scenario.week)) {
        diags.push(Diagnostic::new(
            "extrapolation",
            format!("week {} outside the training range", scenario.week),
        ));
    }
    for (k, var) in WeatherVar::ALL.iter().enumerate() {
        if !t.weather_ranges[k].contains(var.get(&scenario.weather)) {
            diags.push(Diagnostic::new(
                "extrapolation",
                format!("{} outside the training range", var.label()),
            ));
        }
    }
    let rows: Vec<SegmentObservation> = segments
        .iter()
        .map(|&s| SegmentObservation {
            ride_id: 0,
            date: NaiveDate::default(),
            time_slot: scenario.time_slot,
            segment: s,
            y: 0,
            load_factor: 0.0,
            occupancy: 0,
            capacity: 0,
            week_number: scenario.week,
            day_type: scenario.day_type,
            season: scenario.season,
            weather: scenario.weather,
        })
        .collect();
    Ok((model.predict(&rows)?, diags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn profile(id: u32, slot: u8, day: DayType, probs: Vec<f64>) -> RideProbabilityProfile {
        let min = probs.iter().copied().fold(f64::INFINITY, f64::min);
        RideProbabilityProfile {
            ride_id: id,
            date: NaiveDate::from_ymd_opt(2022, 6 + (id % 3), 1).unwrap(),
            time_slot: slot,
            day_type: day,
            week_number: id % 5 + 1,
            probabilities: probs,
            min_probability: min,
        }
    }

    #[test]
    fn level_membership_uses_the_minimum() {
        let p = profile(1, 7, DayType::Working, vec![0.2, 0.3, 0.15]);
        assert!(p.fully_undercrowded(0.1));
        assert!(!p.fully_undercrowded(0.2));
        let z = profile(2, 7, DayType::Working, vec![0.0, 0.0]);
        assert!(z.fully_undercrowded(0.0) && !z.fully_undercrowded(0.005));
    }

    #[test]
    fn curve_is_monotone_and_matches_recount() {
        let profiles: Vec<_> = (0..50)
            .map(|i| profile(i, 6 + (i % 16) as u8, DayType::ALL[(i % 4) as usize], vec![f64::from(i) / 50.0, 0.9]))
            .collect();
        let c = level_curve(&profiles, &default_grid()).unwrap();
        assert_eq!(c.counts[0], 50);
        assert!(c.counts.windows(2).all(|w| w[1] <= w[0]));
        for (k, p) in c.grid.iter().enumerate().step_by(37) {
            let direct = profiles.iter().filter(|pr| pr.min_probability >= *p).count();
            assert_eq!(c.counts[k], direct);
        }
        assert!(level_curve(&profiles, &[0.5, 0.2]).is_err());
    }

    #[test]
    fn report_marginals_agree() {
        let profiles: Vec<_> = (0..40)
            .map(|i| profile(i, 6 + (i % 16) as u8, DayType::ALL[(i % 4) as usize], vec![f64::from(i % 7) / 7.0]))
            .collect();
        let r = distribution_report(&profiles, 0.3);
        assert_eq!(r.by_time_slot.values().sum::<usize>(), r.n_p);
        assert_eq!(r.by_day_type.values().sum::<usize>(), r.n_p);
        assert_eq!(r.by_week.values().sum::<usize>(), r.n_p);
        assert_eq!(r.by_month.values().sum::<usize>(), r.n_p);
        let empty = distribution_report(&profiles, 1.0);
        assert_eq!(empty.n_p, 0);
        assert!(empty.by_time_slot.is_empty());
    }

    #[test]
    fn incomplete_rides_are_dropped() {
        let o = crate::features::tests::obs(7, 1, DayType::Working, 0.0);
        let mut a = o.clone();
        a.segment = 2;
        let mut b = o.clone();
        b.ride_id = 999;
        let (profiles, diags) = profiles_from_predictions(&[o, a, b], &[0.1, 0.4, 0.5], 2);
        assert_eq!(profiles.len(), 1);
        assert_eq!(profiles[0].min_probability, 0.1);
        assert_eq!(diags.len(), 1);
    }
}
