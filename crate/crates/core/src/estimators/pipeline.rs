//! Train, recalibrate, then weight: the end-to-end calibrated estimator.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{estimate, EffectEstimate, EstimatorKind, IptwForm};
use crate::data::{holdout_indices, kfold_indices, ObservationalDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::models::BaseModelConfig;
use crate::recalibration::{RecalibrationMethod, DEFAULT_CLAMP_EPS};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub base: BaseModelConfig,
    /// `None` weights with the base scores directly.
    pub recalibration: Option<RecalibrationMethod>,
    pub estimator: EstimatorKind,
    pub split: SplitSpec,
    pub clamp_eps: f64,
    pub iptw_form: IptwForm,
}

impl PipelineConfig {
    pub fn new(base: BaseModelConfig, recalibration: Option<RecalibrationMethod>, estimator: EstimatorKind, split: SplitSpec) -> Self {
        Self { base, recalibration, estimator, split, clamp_eps: DEFAULT_CLAMP_EPS, iptw_form: IptwForm::default() }
    }
}

/// Per-row propensities before and after recalibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Propensities {
    pub plain: Array1<f64>,
    pub calibrated: Option<Array1<f64>>,
}

impl Propensities {
    /// The scores an estimator should weight with.
    pub fn used(&self) -> ArrayView1<'_, f64> {
        self.calibrated.as_ref().unwrap_or(&self.plain).view()
    }
}

/// Base config for one fold; stochastic models get a stream derived from
/// their own seed, the split seed and the fold.
fn fold_config(base: &BaseModelConfig, split_seed: u64, fold: u64) -> BaseModelConfig {
    match base {
        BaseModelConfig::Mlp(c) => base.reseeded(rng::derive_seed(c.seed, rng::derive_seed(split_seed, fold))),
        _ => *base,
    }
}

/// Scores every row with base models that never saw it.
///
/// K-fold: fold `j`'s rows are scored by a base model trained on the other
/// folds; the recalibrator applied to fold `j` is fit on the out-of-fold
/// `(score, treatment)` pairs of all rows outside `j`. Holdout: one base
/// model on the training part, one recalibrator on the calibration part,
/// both applied to every row.
pub fn cross_fit_propensities(
    data: &ObservationalDataset,
    base: &BaseModelConfig,
    recalibration: Option<RecalibrationMethod>,
    split: &SplitSpec,
    clamp_eps: f64,
) -> Result<Propensities> {
    split.validate()?;
    let n = data.n();
    match *split {
        SplitSpec::Holdout { calibration_fraction, seed } => {
            let s = holdout_indices(n, calibration_fraction, seed)?;
            let model = fold_config(base, seed, 0).fit(&data.select_rows(&s.train))?;
            let plain = model.predict_proba(data.covariates())?;
            let calibrated = match recalibration {
                None => None,
                Some(method) => {
                    let scores: Array1<f64> = s.calibration.iter().map(|&i| plain[i]).collect();
                    let labels: Array1<f64> = s.calibration.iter().map(|&i| data.treatments()[i]).collect();
                    let r = method.fit(scores.view(), labels.view(), clamp_eps)?;
                    Some(r.apply_all(plain.view()))
                }
            };
            Ok(Propensities { plain, calibrated })
        }
        SplitSpec::KFold { folds, seed } => {
            let splits = kfold_indices(n, folds, seed)?;
            let mut plain = Array1::<f64>::zeros(n);
            for (j, s) in splits.iter().enumerate() {
                let model = fold_config(base, seed, j as u64).fit(&data.select_rows(&s.train))?;
                let scores = model.predict_proba(data.select_rows(&s.calibration).covariates())?;
                for (&i, &p) in s.calibration.iter().zip(&scores) {
                    plain[i] = p;
                }
            }
            let calibrated = match recalibration {
                None => None,
                Some(method) => {
                    let mut out = Array1::<f64>::zeros(n);
                    for s in &splits {
                        let scores: Array1<f64> = s.train.iter().map(|&i| plain[i]).collect();
                        let labels: Array1<f64> = s.train.iter().map(|&i| data.treatments()[i]).collect();
                        let r = method.fit(scores.view(), labels.view(), clamp_eps)?;
                        for &i in &s.calibration {
                            out[i] = r.apply(plain[i]);
                        }
                    }
                    Some(out)
                }
            };
            Ok(Propensities { plain, calibrated })
        }
    }
}

/// Both arms must be non-empty.
pub fn check_positivity(data: &ObservationalDataset) -> Result<()> {
    let treated = data.treated_count();
    if treated == 0 || treated == data.n() {
        return Err(Error::Estimation(format!(
            "positivity fails: {treated} of {} rows are treated, so one arm is empty",
            data.n()
        )));
    }
    Ok(())
}

/// Propensity fitting, optional recalibration and one estimator pass.
pub fn calibrated_pipeline(data: &ObservationalDataset, config: &PipelineConfig) -> Result<EffectEstimate> {
    check_positivity(data)?;
    if config.estimator == EstimatorKind::Naive {
        return super::naive_ate(data);
    }
    let p = cross_fit_propensities(data, &config.base, config.recalibration, &config.split, config.clamp_eps)?;
    estimate(data, config.estimator, p.used(), config.iptw_form)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BaseModelKind, LogisticConfig};
    use ndarray::Array2;
    use rand::Rng;

    fn confounded(n: usize, seed: u64) -> ObservationalDataset {
        let mut r = rng::stream(seed, 0);
        let x = Array2::from_shape_fn((n, 1), |_| r.random_range(-1.0..1.0));
        let e = x.column(0).mapv(|v| crate::models::sigmoid(2.0 * v));
        let t = e.mapv(|e| f64::from(u8::from(r.random::<f64>() < e)));
        let y = Array1::from_shape_fn(n, |i| x[[i, 0]] * 2.0 + t[i] + r.random_range(-0.1..0.1));
        ObservationalDataset::new(x, t, y).unwrap()
    }

    #[test]
    fn every_row_gets_a_score() {
        let data = confounded(503, 1);
        let split = SplitSpec::kfold(5, 3).unwrap();
        let p = cross_fit_propensities(&data, &BaseModelKind::Logistic.default_config(), Some(RecalibrationMethod::Isotonic), &split, 1e-3)
            .unwrap();
        assert!(p.plain.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(p.calibrated.unwrap().iter().all(|&v| (1e-3..=1.0 - 1e-3).contains(&v)));
    }

    #[test]
    fn out_of_fold_scores_ignore_own_row() {
        // Row 17's treatment feeds only base models that never score it.
        let data = confounded(200, 2);
        let split = SplitSpec::kfold(4, 9).unwrap();
        let base = BaseModelConfig::Logistic(LogisticConfig::default());
        let p = cross_fit_propensities(&data, &base, None, &split, 1e-3).unwrap();
        let mut t = data.treatments().to_owned();
        t[17] = 1.0 - t[17];
        let flipped = ObservationalDataset::new(data.covariates().to_owned(), t, data.outcomes().to_owned()).unwrap();
        let q = cross_fit_propensities(&flipped, &base, None, &split, 1e-3).unwrap();
        assert_eq!(p.plain[17], q.plain[17]);
    }

    #[test]
    fn iptw_pipeline_recovers_effect() {
        let data = confounded(20_000, 4);
        let config = PipelineConfig {
            clamp_eps: 0.01,
            ..PipelineConfig::new(
                BaseModelKind::Logistic.default_config(),
                Some(RecalibrationMethod::Isotonic),
                EstimatorKind::Iptw,
                SplitSpec::kfold(5, 1).unwrap(),
            )
        };
        let naive = super::super::naive_ate(&data).unwrap().ate;
        let est = calibrated_pipeline(&data, &config).unwrap().ate;
        assert!((est - 1.0).abs() < (naive - 1.0).abs() / 3.0, "iptw {est}, naive {naive}");
        let aipw = calibrated_pipeline(&data, &PipelineConfig { estimator: EstimatorKind::Aipw, ..config }).unwrap().ate;
        assert!((aipw - 1.0).abs() < 0.05, "aipw {aipw}");
        let sig = PipelineConfig { recalibration: Some(RecalibrationMethod::Sigmoid), ..config };
        assert!((calibrated_pipeline(&data, &sig).unwrap().ate - 1.0).abs() < 0.05);
    }

    #[test]
    fn holdout_matches_recalibration_step() {
        let data = confounded(400, 5);
        let split = SplitSpec::holdout(0.3, 8).unwrap();
        let base = BaseModelConfig::Logistic(LogisticConfig::default());
        let p = cross_fit_propensities(&data, &base, Some(RecalibrationMethod::Sigmoid), &split, 1e-3).unwrap();
        let (train, calib) = crate::data::split_train_calibration(&data, &split).unwrap();
        let model = crate::recalibration::recalibration_step(base.fit(&train).unwrap(), &calib, RecalibrationMethod::Sigmoid, 1e-3).unwrap();
        assert_eq!(p.calibrated.unwrap(), model.predict_proba(data.covariates()).unwrap());
    }

    #[test]
    fn all_treated_is_a_positivity_error() {
        let n = 10;
        let data = ObservationalDataset::new(Array2::zeros((n, 1)), Array1::ones(n), Array1::zeros(n)).unwrap();
        let config = PipelineConfig::new(
            BaseModelKind::Logistic.default_config(),
            Some(RecalibrationMethod::Isotonic),
            EstimatorKind::Iptw,
            SplitSpec::kfold(2, 0).unwrap(),
        );
        assert!(matches!(calibrated_pipeline(&data, &config), Err(Error::Estimation(_))));
    }
}
