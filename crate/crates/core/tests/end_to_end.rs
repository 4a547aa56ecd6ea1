//! Synthetic data through both models and the evaluation metrics.

use undercrowd_core::aggregate::SegmentObservation;
use undercrowd_core::eval::{roc_report, split_by_rides};
use undercrowd_core::features::ModelSpec;
use undercrowd_core::glmm::{GlmmModel, GlmmOptions};
use undercrowd_core::gmerf::{GmerfModel, GmerfParams};
use undercrowd_core::synth::{generate_observations, SynthScenario};

fn data(seed: u64) -> Vec<SegmentObservation> {
    let s = SynthScenario {
        n_dates: 30,
        seed,
        ..SynthScenario::default()
    };
    generate_observations(&s).unwrap().0
}

fn spec() -> ModelSpec {
    ModelSpec {
        slot_degree: 2,
        week_degree: 1,
        slot_interactions: false,
        week_interactions: false,
        ..ModelSpec::default()
    }
}

struct Outcome {
    glmm: Vec<f64>,
    gmerf: Vec<f64>,
    auc: (f64, f64),
}

fn run(seed: u64) -> Outcome {
    let obs = data(seed);
    let plan = split_by_rides(obs.iter().map(|o| o.ride_id), 0.7, seed).unwrap();
    let (train, test) = plan.partition(&obs);
    assert!(!train.is_empty() && !test.is_empty());
    let labels: Vec<u8> = test.iter().map(|o| o.y).collect();

    let glmm = GlmmModel::fit(&train, &spec(), &GlmmOptions::default()).unwrap();
    assert!(glmm.fit.converged);
    let mut params = GmerfParams::default();
    params.forest.n_trees = 15;
    params.forest.seed = seed;
    let gmerf = GmerfModel::fit(&train, &glmm, &params).unwrap();

    let p_glmm = glmm.predict(&test).unwrap();
    let p_gmerf = gmerf.predict(&test).unwrap();
    let r_glmm = roc_report(&p_glmm, &labels, 0.5).unwrap();
    let r_gmerf = roc_report(&p_gmerf, &labels, 0.5).unwrap();
    for r in [&r_glmm, &r_gmerf] {
        let c = &r.confusion;
        assert_eq!(c.true_positive + c.false_negative + c.false_positive + c.true_negative, test.len());
        assert!(r.auc > 0.5 && r.auc <= 1.0, "AUC {}", r.auc);
    }
    Outcome {
        glmm: p_glmm,
        gmerf: p_gmerf,
        auc: (r_glmm.auc, r_gmerf.auc),
    }
}

#[test]
fn fits_and_metrics_are_reproducible() {
    let a = run(21);
    let b = run(21);
    assert_eq!(a.glmm, b.glmm);
    assert_eq!(a.gmerf, b.gmerf);
    assert_eq!(a.auc, b.auc);
    assert!(a.glmm.iter().chain(&a.gmerf).all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn split_keeps_rides_whole() {
    let obs = data(3);
    let plan = split_by_rides(obs.iter().map(|o| o.ride_id), 0.6, 3).unwrap();
    let (train, test) = plan.partition(&obs);
    assert_eq!(train.len() + test.len(), obs.len());
    let in_train: std::collections::BTreeSet<u32> = train.iter().map(|o| o.ride_id).collect();
    assert!(test.iter().all(|o| !in_train.contains(&o.ride_id)));
}
