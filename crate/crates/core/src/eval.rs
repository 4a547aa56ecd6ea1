//! Ride-level splits, cross-validated degree selection, ROC/AUC and
//! confusion tables.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::SegmentObservation;
use crate::error::{Error, Result};
use crate::features::ModelSpec;
use crate::glmm::{GlmmModel, GlmmOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
    pub fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    /// Splits rows by the side their ride landed on.
    pub fn partition(&self, obs: &[SegmentObservation]) -> (Vec<SegmentObservation>, Vec<SegmentObservation>) {
        let train: BTreeSet<u32> = self.train.iter().copied().collect();
        obs.iter().cloned().partition(|o| train.contains(&o.ride_id))
    }
}

fn shuffled_rides(ride_ids: impl IntoIterator<Item = u32>, seed: u64) -> Vec<u32> {
    let set: BTreeSet<u32> = ride_ids.into_iter().collect();
    let mut ids: Vec<u32> = set.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

/// Random ride-level split: the first ⌊fraction·n⌋ rides of a seeded
/// shuffle train, the rest test.
pub fn split_by_rides(ride_ids: impl IntoIterator<Item = u32>, fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split fraction {fraction} not in (0, 1)")));
    }
    let ids = shuffled_rides(ride_ids, seed);
    let k = libm::floor(fraction * ids.len() as f64) as usize;
    let mut train = ids[..k].to_vec();
    let mut test = ids[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train,
        test,
        fraction,
        seed,
    })
}

/// Fold of every ride: seeded shuffle, then round-robin.
pub fn assign_folds(ride_ids: impl IntoIterator<Item = u32>, k: usize, seed: u64) -> BTreeMap<u32, usize> {
    shuffled_rides(ride_ids, seed)
        .into_iter()
        .enumerate()
        .map(|(i, r)| (r, i % k))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegreeSearch {
    pub max_slot_degree: u8,
    pub max_week_degree: u8,
    /// Week degree held fixed while the slot degree is scanned.
    pub initial_week_degree: u8,
    pub folds: usize,
    pub seed: u64,
    pub max_failed_folds: usize,
}

impl Default for DegreeSearch {
    fn default() -> Self {
        Self {
            max_slot_degree: 10,
            max_week_degree: 6,
            initial_week_degree: 3,
            folds: 10,
            seed: 0,
            max_failed_folds: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub slot_degree: u8,
    pub week_degree: u8,
    /// Pooled held-out Brier score over the folds that succeeded; `None`
    /// when the degree was disqualified.
    pub mse: Option<f64>,
    pub failed_folds: usize,
    pub fold_mse: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeSelection {
    pub slot_degree: u8,
    pub week_degree: u8,
    pub slot_curve: Vec<CvPoint>,
    pub week_curve: Vec<CvPoint>,
    /// (ride id, fold) pairs used by every candidate.
    pub folds: Vec<(u32, usize)>,
}

/// Sum of squared errors and row count on one held-out fold.
fn fold_error(
    train: &[SegmentObservation],
    test: &[SegmentObservation],
    spec: &ModelSpec,
    opts: &GlmmOptions,
) -> Result<(f64, usize)> {
    let ybar = train.iter().map(|o| f64::from(o.y)).sum::<f64>() / train.len() as f64;
    let probs = if ybar == 0.0 || ybar == 1.0 {
        alloc::vec![ybar; test.len()]
    } else {
        GlmmModel::fit(train, spec, opts)?.predict(test)?
    };
    let sse = test
        .iter()
        .zip(&probs)
        .map(|(o, p)| (f64::from(o.y) - p) * (f64::from(o.y) - p))
        .sum();
    Ok((sse, test.len()))
}

fn scan(
    obs: &[SegmentObservation],
    folds: &BTreeMap<u32, usize>,
    k: usize,
    specs: Vec<ModelSpec>,
    search: &DegreeSearch,
    opts: &GlmmOptions,
) -> Vec<CvPoint> {
    let mut split: Vec<(Vec<SegmentObservation>, Vec<SegmentObservation>)> = Vec::with_capacity(k);
    for f in 0..k {
        split.push(obs.iter().cloned().partition(|o| folds[&o.ride_id] != f));
    }
    let jobs: Vec<(usize, usize)> = (0..specs.len()).flat_map(|s| (0..k).map(move |f| (s, f))).collect();
    let results = crate::par_map(jobs, |(s, f)| {
        fold_error(&split[f].0, &split[f].1, &specs[s], opts).ok()
    });
    specs
        .iter()
        .enumerate()
        .map(|(s, spec)| {
            let r = &results[s * k..(s + 1) * k];
            let failed = r.iter().filter(|x| x.is_none()).count();
            let (sse, n) = r.iter().flatten().fold((0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1));
            CvPoint {
                slot_degree: spec.slot_degree,
                week_degree: spec.week_degree,
                mse: (failed <= search.max_failed_folds && n > 0).then(|| sse / n as f64),
                failed_folds: failed,
                fold_mse: r.iter().map(|x| x.map(|(s, n)| s / n as f64)).collect(),
            }
        })
        .collect()
}

/// Smallest-MSE point; ties go to the earlier (smaller) degree.
fn argmin(curve: &[CvPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in curve.iter().enumerate() {
        if let Some(m) = p.mse {
            if best.is_none_or(|b| m < curve[b].mse.unwrap_or(f64::INFINITY)) {
                best = Some(i);
            }
        }
    }
    best
}

/// Two-step search by k-fold cross-validation over rides: scan the slot
/// degree with the week degree fixed, then scan the week degree at the
/// chosen slot degree.
pub fn select_degrees(
    obs: &[SegmentObservation],
    base: &ModelSpec,
    search: &DegreeSearch,
    opts: &GlmmOptions,
) -> Result<DegreeSelection> {
    let rides: BTreeSet<u32> = obs.iter().map(|o| o.ride_id).collect();
    if search.folds < 2 || rides.len() < search.folds {
        return Err(Error::InvalidInput(format!(
            "{} rides cannot fill {} folds",
            rides.len(),
            search.folds
        )));
    }
    let folds = assign_folds(rides.iter().copied(), search.folds, search.seed);
    let k = search.folds;

    let slot_specs = (0..=search.max_slot_degree)
        .map(|d| ModelSpec {
            slot_degree: d,
            week_degree: search.initial_week_degree,
            ..base.clone()
        })
        .collect();
    let slot_curve = scan(obs, &folds, k, slot_specs, search, opts);
    let ds = argmin(&slot_curve)
        .map(|i| slot_curve[i].slot_degree)
        .ok_or_else(|| Error::InvalidInput(format!("every slot degree failed in more than {} folds", search.max_failed_folds)))?;

    let week_specs = (0..=search.max_week_degree)
        .map(|d| ModelSpec {
            slot_degree: ds,
            week_degree: d,
            ..base.clone()
        })
        .collect();
    let week_curve = scan(obs, &folds, k, week_specs, search, opts);
    let dw = argmin(&week_curve)
        .map(|i| week_curve[i].week_degree)
        .ok_or_else(|| Error::InvalidInput(format!("every week degree failed in more than {} folds", search.max_failed_folds)))?;

    Ok(DegreeSelection {
        slot_degree: ds,
        week_degree: dw,
        slot_curve,
        week_curve,
        folds: folds.into_iter().collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above this are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn check_labels(labels: &[u8]) -> Result<(usize, usize)> {
    if labels.iter().any(|y| *y > 1) {
        return Err(Error::InvalidInput(alloc::string::String::from("labels must be 0 or 1")));
    }
    let pos = labels.iter().filter(|y| **y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// ROC curve with one vertex per distinct score, and its trapezoid area.
/// Tied scores form one diagonal step, so the area equals the
/// Mann-Whitney statistic with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(Vec<RocPoint>, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(alloc::string::String::from("scores and labels differ in length")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput(alloc::string::String::from("NaN score")));
    }
    let (pos, neg) = check_labels(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = alloc::vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area, in units of 1/(pos·neg).
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok((points, auc))
}

/// Misclassification counts, rows = truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub threshold: f64,
    pub true_positive: usize,
    pub false_negative: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub accuracy: f64,
}

impl Confusion {
    pub fn n(&self) -> usize {
        self.true_positive + self.false_negative + self.false_positive + self.true_negative
    }

    /// `[[TP, FN], [FP, TN]]` as percentages of all rows.
    pub fn percentages(&self) -> [[f64; 2]; 2] {
        let n = self.n().max(1) as f64;
        let pct = |c: usize| 100.0 * c as f64 / n;
        [
            [pct(self.true_positive), pct(self.false_negative)],
            [pct(self.false_positive), pct(self.true_negative)],
        ]
    }
}

/// Predicts 1 when the probability is at least `f`.
pub fn confusion(probs: &[f64], labels: &[u8], f: f64) -> Confusion {
    let mut c = Confusion {
        threshold: f,
        true_positive: 0,
        false_negative: 0,
        false_positive: 0,
        true_negative: 0,
        accuracy: 0.0,
    };
    for (p, y) in probs.iter().zip(labels) {
        match (*y == 1, *p >= f) {
            (true, true) => c.true_positive += 1,
            (true, false) => c.false_negative += 1,
            (false, true) => c.false_positive += 1,
            (false, false) => c.true_negative += 1,
        }
    }
    let n = c.n();
    if n > 0 {
        c.accuracy = (c.true_positive + c.true_negative) as f64 / n as f64;
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub confusion: Confusion,
}

pub fn roc_report(probs: &[f64], labels: &[u8], f: f64) -> Result<RocReport> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidConfig(format!("classification threshold {f} not in (0, 1)")));
    }
    let (points, auc) = roc_auc(probs, labels)?;
    Ok(RocReport {
        points,
        auc,
        confusion: confusion(probs, labels, f),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;

    /// O(n²) pair count with ties worth one half.
    pub(crate) fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn split_sizes_and_partition() {
        let p = split_by_rides(1..=10, 0.7, 5).unwrap();
        assert_eq!((p.train.len(), p.test.len()), (7, 3));
        assert!(p.train.iter().all(|r| !p.test.contains(r)));
        assert_eq!(p, split_by_rides(1..=10, 0.7, 5).unwrap());
        assert!(split_by_rides(1..=10, 1.0, 5).is_err());
    }

    #[test]
    fn folds_are_balanced() {
        let f = assign_folds(0..95, 10, 1);
        let mut sizes = [0; 10];
        for v in f.values() {
            sizes[*v] += 1;
        }
        assert!(sizes.iter().all(|s| *s == 9 || *s == 10));
    }

    #[test]
    fn auc_matches_pair_count_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.random_range(2..200);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..12)) / 11.0).collect();
            let (_, auc) = roc_auc(&scores, &labels).unwrap();
            assert!((auc - pair_count_auc(&scores, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_scores_and_single_class() {
        let (pts, auc) = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);
        assert!(pts.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn confusion_layout() {
        let c = confusion(&[0.6; 4], &[1; 4], 0.5);
        assert_eq!(c.accuracy, 1.0);
        let c = confusion(&[1.0, 0.0, 1.0, 0.0], &[1, 0, 1, 0], 0.5);
        assert_eq!((c.false_negative, c.false_positive), (0, 0));
        let c = confusion(&[0.7, 0.2, 0.4, 0.9, 0.5], &[1, 0, 1, 0, 0], 0.5);
        let pct = c.percentages();
        let total: f64 = pct.iter().flatten().sum();
        assert!((total - 100.0).abs() < 1e-9);
        assert_eq!(c.true_positive + c.false_negative, 2);
    }
}
