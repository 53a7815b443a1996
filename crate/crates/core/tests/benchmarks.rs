use calprop::data::kfold_indices;
use calprop::estimators::discrete::DiscreteWorld;
use calprop::estimators::iptw_ate;
use calprop::gwas::{run_gwas_benchmark, BenchConfig, EffectConfig, GwasMethod};
use calprop::models::BaseModelKind;
use calprop::recalibration::RecalibrationMethod;
use calprop::rng;
use calprop::simulators::SpatialGwasConfig;
use ndarray::Array1;

#[test]
fn oracle_and_pca_beat_naive_under_structure() {
    let config = BenchConfig {
        simulation: SpatialGwasConfig::new(4000, 100, 0.1, 0.01, 0),
        seeds: (1..=5).collect(),
        effects: EffectConfig::new(vec![GwasMethod::Naive, GwasMethod::Pca, GwasMethod::OracleIptw], BaseModelKind::Logistic),
    };
    let r = run_gwas_benchmark(&config).unwrap();
    let mean = |m| r.method(m).unwrap().error.mean;
    assert!(mean(GwasMethod::OracleIptw) <= mean(GwasMethod::Naive));
    assert!(mean(GwasMethod::Pca) < mean(GwasMethod::Naive));
    assert!(r.methods.iter().all(|m| m.error.per_seed.iter().all(|&e| e >= 0.0)));
    assert!(r.delta_ece.is_none());
}

#[test]
fn recalibrating_true_propensities_changes_little() {
    let mut r = rng::stream(21, 0);
    let world = DiscreteWorld::random(&mut r, 6, 4);
    let (data, index) = world.sample(50_000, &mut r).unwrap();
    let truth: Array1<f64> = index.iter().map(|&k| world.propensity()[k]).collect();
    let mut recalibrated = Array1::zeros(data.n());
    for s in kfold_indices(data.n(), 5, 3).unwrap() {
        let scores: Array1<f64> = s.train.iter().map(|&i| truth[i]).collect();
        let labels: Array1<f64> = s.train.iter().map(|&i| data.treatments()[i]).collect();
        let fit = RecalibrationMethod::Isotonic.fit(scores.view(), labels.view(), 1e-3).unwrap();
        for &i in &s.calibration {
            recalibrated[i] = fit.apply(truth[i]);
        }
    }
    let plain = iptw_ate(&data, truth.view()).unwrap().ate;
    let calibrated = iptw_ate(&data, recalibrated.view()).unwrap().ate;
    // Both sit within Monte Carlo noise of the exact effect.
    assert!((plain - calibrated).abs() < 0.03, "plain {plain}, recalibrated {calibrated}");
    assert!((calibrated - world.exact_ate()).abs() < 0.05);
}
