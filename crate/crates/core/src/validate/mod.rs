//! Ride quality checks: stop-level bagplot outliers, vehicle-day count
//! patterns, status and path anomalies, and the ride filter.

mod bagplot;
mod depth;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use bagplot::{
    bagplot_classify, bagplot_points, convex_hull, inside_convex, polygon_area, BagplotMethod,
    BagplotResult, DepthPoint,
};
pub use depth::{halfspace_depth, halfspace_depth_weighted, Point};

use crate::error::{Diagnostic, Error, Result};
use crate::ingest::{AnomalyCode, Count, Ride, RideKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub anomalous_count_threshold: Count,
    pub missing_fraction_limit: f64,
    pub fence_inflation: f64,
    pub bag_mass: f64,
    /// Samples smaller than this are never classified.
    pub min_sample: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            anomalous_count_threshold: 50,
            missing_fraction_limit: 0.10,
            fence_inflation: 3.0,
            bag_mass: 0.5,
            min_sample: 10,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        if self.anomalous_count_threshold == 0 {
            return bad("anomalous_count_threshold must be positive");
        }
        if !(self.missing_fraction_limit > 0.0 && self.missing_fraction_limit <= 1.0) {
            return bad("missing_fraction_limit must be in (0, 1]");
        }
        if !(self.fence_inflation > 0.0 && self.fence_inflation.is_finite()) {
            return bad("fence_inflation must be positive");
        }
        if !(self.bag_mass > 0.0 && self.bag_mass < 1.0) {
            return bad("bag_mass must be in (0, 1)");
        }
        if self.min_sample == 0 {
            return bad("min_sample must be positive");
        }
        Ok(())
    }
}

/// Per-stop bagplots over all rides: every stop index pools the
/// (boarded, alighted) pairs observed there and flagged pairs are added to
/// the owning ride's `outlier_stop_indices`.
pub fn flag_stop_outliers(rides: &mut [Ride], cfg: &ValidationConfig) -> Vec<Diagnostic> {
    let mut by_stop: BTreeMap<u16, Vec<(usize, DepthPoint)>> = BTreeMap::new();
    for (r, ride) in rides.iter().enumerate() {
        for s in &ride.stops {
            by_stop.entry(s.stop_index).or_default().push((
                r,
                DepthPoint {
                    boarded: s.boarded,
                    alighted: s.alighted,
                    source: (ride.key.clone(), s.stop_index),
                },
            ));
        }
    }
    let mut diags = Vec::new();
    for (stop, entries) in by_stop {
        let sample: Vec<DepthPoint> = entries.iter().map(|e| e.1.clone()).collect();
        let res = bagplot_classify(&sample, cfg);
        for d in res.diagnostics {
            diags.push(Diagnostic::new(&d.code, format!("stop {stop}: {}", d.message)));
        }
        for ((r, _), flagged) in entries.iter().zip(&res.outlier_flags) {
            if *flagged {
                rides[*r].quality.outlier_stop_indices.insert(stop);
            }
        }
    }
    diags
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleVerdict {
    Ok,
    AllZero,
    OneSided,
}

/// Checks the count pattern of one vehicle over one day.
pub fn detect_vehicle_outliers<'a>(rides: impl IntoIterator<Item = &'a Ride>) -> VehicleVerdict {
    let (mut any_b, mut any_a) = (false, false);
    for r in rides {
        for s in &r.stops {
            any_b |= s.boarded > 0;
            any_a |= s.alighted > 0;
        }
    }
    match (any_b, any_a) {
        (false, false) => VehicleVerdict::AllZero,
        (true, true) => VehicleVerdict::Ok,
        _ => VehicleVerdict::OneSided,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleDayReport {
    pub date: NaiveDate,
    pub vehicle: String,
    pub n_rides: usize,
    pub verdict: VehicleVerdict,
}

/// One verdict per (date, vehicle), ordered by date then vehicle.
pub fn vehicle_report(rides: &[Ride]) -> Vec<VehicleDayReport> {
    let mut groups: BTreeMap<(NaiveDate, &str), Vec<&Ride>> = BTreeMap::new();
    for r in rides {
        groups.entry((r.key.date, r.vehicle.as_str())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((date, vehicle), rs)| VehicleDayReport {
            date,
            vehicle: String::from(vehicle),
            n_rides: rs.len(),
            verdict: detect_vehicle_outliers(rs),
        })
        .collect()
}

/// Meaning of the service status codes found in the signal stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatusMap {
    pub in_service: BTreeSet<u16>,
    pub depot: BTreeSet<u16>,
    pub breakdown: BTreeSet<u16>,
    pub interrupted: BTreeSet<u16>,
}

impl Default for StatusMap {
    fn default() -> Self {
        Self {
            in_service: [0, 1].into_iter().collect(),
            depot: [10, 11].into_iter().collect(),
            breakdown: [20].into_iter().collect(),
            interrupted: [30].into_iter().collect(),
        }
    }
}

impl StatusMap {
    fn classify(&self, code: u16) -> Option<Option<AnomalyCode>> {
        if self.in_service.contains(&code) {
            Some(None)
        } else if self.depot.contains(&code) {
            Some(Some(AnomalyCode::Depot))
        } else if self.breakdown.contains(&code) {
            Some(Some(AnomalyCode::Breakdown))
        } else if self.interrupted.contains(&code) {
            Some(Some(AnomalyCode::Interrupted))
        } else {
            None
        }
    }
}

/// Scheduled path and stop sequence of a route direction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timetable {
    pub path: String,
    pub stops: Vec<String>,
}

/// Status-derived anomalies plus a detour check against the timetable.
///
/// A detour is a path other than the scheduled one, a diverted-route
/// marker, or a stop sequence that visits a stop off the schedule or out of
/// order. Skipped scheduled stops count as missing data, not detours.
pub fn detect_anomalies(
    ride: &Ride,
    timetable: &Timetable,
    statuses: &StatusMap,
) -> (BTreeSet<AnomalyCode>, Vec<Diagnostic>) {
    let mut codes = BTreeSet::new();
    let mut diags = Vec::new();
    for &s in &ride.statuses {
        match statuses.classify(s) {
            Some(Some(c)) => {
                codes.insert(c);
            }
            Some(None) => {}
            None => diags.push(Diagnostic::new(
                "unknown_status",
                format!("ride {}: unknown status code {s}", ride.key),
            )),
        }
    }
    let off_path = ride.paths.iter().any(|p| *p != timetable.path);
    if off_path || ride.diverted || !is_subsequence(&ride.stop_sequence, &timetable.stops) {
        codes.insert(AnomalyCode::Detour);
    }
    (codes, diags)
}

fn is_subsequence(observed: &[String], scheduled: &[String]) -> bool {
    let mut it = scheduled.iter();
    observed.iter().all(|o| it.any(|s| s == o))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    Missing,
    Noise,
    Outlier,
    Anomaly,
    /// Caller-supplied rule.
    Operator,
}

impl RejectionReason {
    pub const ALL: [RejectionReason; 5] = [
        Self::Missing,
        Self::Noise,
        Self::Outlier,
        Self::Anomaly,
        Self::Operator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Missing => "missing",
            Self::Noise => "noise",
            Self::Outlier => "outlier",
            Self::Anomaly => "anomaly",
            Self::Operator => "operator",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub key: RideKey,
    pub reasons: Vec<RejectionReason>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub n_input: usize,
    pub n_kept: usize,
    pub rejected: Vec<Rejection>,
    /// Rides rejected for each reason; a ride can count under several.
    pub by_reason: BTreeMap<RejectionReason, usize>,
}

impl RejectionReport {
    /// Share of input rides rejected for `reason`, in percent.
    pub fn percent(&self, reason: RejectionReason) -> f64 {
        if self.n_input == 0 {
            return 0.0;
        }
        100.0 * *self.by_reason.get(&reason).unwrap_or(&0) as f64 / self.n_input as f64
    }
}

pub fn filter_rides(rides: Vec<Ride>, cfg: &ValidationConfig) -> (Vec<Ride>, RejectionReport) {
    filter_rides_with(rides, cfg, |_| false)
}

/// Like [`filter_rides`], with an extra operator rule: rides for which
/// `reject` returns true are removed with reason `operator`.
pub fn filter_rides_with(
    rides: Vec<Ride>,
    cfg: &ValidationConfig,
    reject: impl Fn(&Ride) -> bool,
) -> (Vec<Ride>, RejectionReport) {
    let mut report = RejectionReport {
        n_input: rides.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for ride in rides {
        let q = &ride.quality;
        let mut reasons = Vec::new();
        if q.missing_fraction > cfg.missing_fraction_limit {
            reasons.push(RejectionReason::Missing);
        }
        if q.noise_fraction > 0.0 {
            reasons.push(RejectionReason::Noise);
        }
        if !q.outlier_stop_indices.is_empty() {
            reasons.push(RejectionReason::Outlier);
        }
        if !q.anomaly_codes.is_empty() {
            reasons.push(RejectionReason::Anomaly);
        }
        if reject(&ride) {
            reasons.push(RejectionReason::Operator);
        }
        if reasons.is_empty() {
            kept.push(ride);
        } else {
            for r in &reasons {
                *report.by_reason.entry(*r).or_insert(0) += 1;
            }
            report.rejected.push(Rejection {
                key: ride.key,
                reasons,
            });
        }
    }
    report.n_kept = kept.len();
    (kept, report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub clean: Vec<Ride>,
    pub report: RejectionReport,
    pub vehicles: Vec<VehicleDayReport>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Full pass: stop outliers, anomalies, vehicle-day report and filtering.
pub fn run_validation(
    mut rides: Vec<Ride>,
    timetable: &Timetable,
    statuses: &StatusMap,
    cfg: &ValidationConfig,
) -> Result<ValidationOutcome> {
    cfg.validate()?;
    let mut diagnostics = flag_stop_outliers(&mut rides, cfg);
    for ride in &mut rides {
        let (codes, d) = detect_anomalies(ride, timetable, statuses);
        ride.quality.anomaly_codes.extend(codes);
        diagnostics.extend(d);
    }
    let vehicles = vehicle_report(&rides);
    let (clean, report) = filter_rides(rides, cfg);
    Ok(ValidationOutcome {
        clean,
        report,
        vehicles,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Direction, QualityFlags, StopRecord, VehicleType};
    use alloc::string::ToString;
    use alloc::vec;

    fn ride(counts: &[(Count, Count)]) -> Ride {
        let date = NaiveDate::from_ymd_opt(2022, 6, 6).unwrap();
        let t = date.and_hms_opt(8, 0, 0).unwrap();
        let mut onboard = 0;
        let stops = counts
            .iter()
            .enumerate()
            .map(|(i, &(b, a))| {
                onboard = onboard + b - a;
                StopRecord {
                    stop_index: (i + 1) as u16,
                    stop_id: format!("S{}", i + 1),
                    boarded: b,
                    alighted: a,
                    onboard_after: onboard,
                    timestamp: t,
                }
            })
            .collect();
        Ride {
            key: RideKey {
                date,
                route: "90".to_string(),
                table_no: 1,
                ride_no: 1,
                direction: Direction::Outbound,
            },
            vehicle: "V1".to_string(),
            vehicle_type: VehicleType::Bus,
            capacity: 100,
            n_route_stops: counts.len() as u16,
            stops,
            quality: QualityFlags::default(),
            stop_sequence: (1..=counts.len()).map(|i| format!("S{i}")).collect(),
            paths: vec!["P".to_string()],
            statuses: [0].into_iter().collect(),
            diverted: false,
        }
    }

    fn timetable(n: usize) -> Timetable {
        Timetable {
            path: "P".to_string(),
            stops: (1..=n).map(|i| format!("S{i}")).collect(),
        }
    }

    #[test]
    fn vehicle_verdicts() {
        assert_eq!(detect_vehicle_outliers([&ride(&[(0, 0), (0, 0)])]), VehicleVerdict::AllZero);
        assert_eq!(detect_vehicle_outliers([&ride(&[(3, 0), (2, 0)])]), VehicleVerdict::OneSided);
        assert_eq!(detect_vehicle_outliers([&ride(&[(3, 0), (2, 4)])]), VehicleVerdict::Ok);
    }

    #[test]
    fn anomalies_from_status_and_path() {
        let tt = timetable(3);
        let sm = StatusMap::default();
        let clean = ride(&[(1, 0), (1, 1), (0, 1)]);
        assert!(detect_anomalies(&clean, &tt, &sm).0.is_empty());

        let mut broken = clean.clone();
        broken.statuses.insert(20);
        let codes: Vec<_> = detect_anomalies(&broken, &tt, &sm).0.into_iter().collect();
        assert_eq!(codes, vec![AnomalyCode::Breakdown]);

        let mut detour = clean.clone();
        detour.paths = vec!["Q".to_string()];
        let codes: Vec<_> = detect_anomalies(&detour, &tt, &sm).0.into_iter().collect();
        assert_eq!(codes, vec![AnomalyCode::Detour]);

        let mut reordered = clean.clone();
        reordered.stop_sequence.swap(0, 1);
        assert!(detect_anomalies(&reordered, &tt, &sm).0.contains(&AnomalyCode::Detour));

        let mut unknown = clean;
        unknown.statuses.insert(999);
        let (codes, diags) = detect_anomalies(&unknown, &tt, &sm);
        assert!(codes.is_empty());
        assert_eq!(diags.len(), 1);
    }

    #[test]
    fn filter_boundaries_and_partition() {
        let cfg = ValidationConfig::default();
        let mut a = ride(&[(1, 0), (0, 1)]);
        a.quality.missing_fraction = 2.0 / 19.0;
        let mut b = ride(&[(1, 0), (0, 1)]);
        b.quality.missing_fraction = 0.10;
        let mut c = ride(&[(1, 0), (0, 1)]);
        c.quality.noise_fraction = 0.05;
        let (kept, report) = filter_rides(vec![a, b, c], &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.len() + report.rejected.len(), 3);
        assert_eq!(report.rejected[0].reasons, vec![RejectionReason::Missing]);
        assert_eq!(report.rejected[1].reasons, vec![RejectionReason::Noise]);
        let (again, r2) = filter_rides(kept, &cfg);
        assert_eq!(again.len(), 1);
        assert!(r2.rejected.is_empty());
    }

    #[test]
    fn operator_rule_rejects() {
        let cfg = ValidationConfig::default();
        let (kept, report) = filter_rides_with(vec![ride(&[(1, 1)])], &cfg, |_| true);
        assert!(kept.is_empty());
        assert_eq!(report.by_reason[&RejectionReason::Operator], 1);
    }

    #[test]
    fn spike_stop_is_flagged_on_its_ride() {
        let mut rides: Vec<Ride> = (0..30)
            .map(|i| {
                let (b1, b2, a2) = (4 + i % 3, 3 + i % 5, 2 + (i / 5) % 4);
                ride(&[(b1, 0), (b2, a2), (0, b1 + b2 - a2)])
            })
            .collect();
        rides[7].stops[1].boarded = 500;
        flag_stop_outliers(&mut rides, &ValidationConfig::default());
        for (i, r) in rides.iter().enumerate() {
            let expect: BTreeSet<u16> = if i == 7 { [2].into_iter().collect() } else { BTreeSet::new() };
            assert_eq!(r.quality.outlier_stop_indices, expect, "ride {i}");
        }
    }

    #[test]
    fn config_rejects_bad_bag_mass() {
        let cfg = ValidationConfig {
            bag_mass: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
