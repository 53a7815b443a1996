//! Average-treatment-effect estimators.

pub mod discrete;
mod pipeline;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::linalg;

pub use pipeline::{calibrated_pipeline, check_positivity, cross_fit_propensities, PipelineConfig, Propensities};

/// Ridge added to the normal equations of the outcome regression.
pub const OUTCOME_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Naive,
    Iptw,
    Aipw,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Iptw => "iptw",
            EstimatorKind::Aipw => "aipw",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(EstimatorKind::Naive),
            "iptw" | "ipw" => Ok(EstimatorKind::Iptw),
            "aipw" => Ok(EstimatorKind::Aipw),
            other => Err(Error::Parameter(format!("unknown estimator {other:?} (expected naive, iptw or aipw)"))),
        }
    }
}

/// Weighting of the IPTW sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IptwForm {
    /// `(1/n) Σ [t·y/e − (1−t)·y/(1−e)]`.
    #[default]
    HorvitzThompson,
    /// Each arm divided by its own weight total instead of `n`.
    Hajek,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensitySummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl PropensitySummary {
    pub fn of(p: ArrayView1<f64>) -> Self {
        let min = p.iter().copied().fold(f64::INFINITY, f64::min);
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = p.mean().unwrap_or(f64::NAN);
        // Rounding can push the mean a hair outside [min, max].
        Self { min, max, mean: mean.clamp(min, max) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub ate: f64,
    pub estimator: EstimatorKind,
    /// Absent for the naive estimator.
    pub propensity: Option<PropensitySummary>,
    pub n: usize,
    /// `E[Y(1)] / E[Y(0)]` from the same weighting; `None` when the control
    /// mean is zero.
    pub ratio: Option<f64>,
}

fn ratio(treated: f64, control: f64) -> Option<f64> {
    (control != 0.0).then(|| treated / control).filter(|r| r.is_finite())
}

fn finite(ate: f64, what: &str) -> Result<f64> {
    if ate.is_finite() {
        Ok(ate)
    } else {
        Err(Error::Numeric(format!("{what} estimate is not finite")))
    }
}

/// Difference of group means.
pub fn naive_ate(data: &ObservationalDataset) -> Result<EffectEstimate> {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&t, &y) in data.treatments().iter().zip(data.outcomes()) {
        if t == 1.0 {
            s1 += y;
            n1 += 1;
        } else {
            s0 += y;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::Estimation(format!("naive estimate needs both groups non-empty ({n1} treated, {n0} control)")));
    }
    let (m1, m0) = (s1 / n1 as f64, s0 / n0 as f64);
    Ok(EffectEstimate {
        ate: finite(m1 - m0, "naive")?,
        estimator: EstimatorKind::Naive,
        propensity: None,
        n: data.n(),
        ratio: ratio(m1, m0),
    })
}

fn check_propensities(data: &ObservationalDataset, p: ArrayView1<f64>) -> Result<()> {
    if p.len() != data.n() {
        return Err(Error::Shape { expected: data.n(), actual: p.len() });
    }
    if data.n() == 0 {
        return Err(Error::Estimation("cannot estimate an effect from zero rows".into()));
    }
    if let Some(i) = p.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Domain(format!(
            "propensity at row {i} is {} (must lie strictly inside (0, 1); clamp or recalibrate first)",
            p[i]
        )));
    }
    Ok(())
}

/// Horvitz–Thompson IPTW estimate.
pub fn iptw_ate(data: &ObservationalDataset, propensities: ArrayView1<f64>) -> Result<EffectEstimate> {
    iptw_ate_with(data, propensities, IptwForm::HorvitzThompson)
}

pub fn iptw_ate_with(data: &ObservationalDataset, propensities: ArrayView1<f64>, form: IptwForm) -> Result<EffectEstimate> {
    check_propensities(data, propensities)?;
    let (mut a1, mut w1, mut a0, mut w0) = (0.0, 0.0, 0.0, 0.0);
    for ((&t, &y), &e) in data.treatments().iter().zip(data.outcomes()).zip(propensities) {
        if t == 1.0 {
            a1 += y / e;
            w1 += 1.0 / e;
        } else {
            a0 += y / (1.0 - e);
            w0 += 1.0 / (1.0 - e);
        }
    }
    let n = data.n() as f64;
    let (m1, m0) = match form {
        IptwForm::HorvitzThompson => (a1 / n, a0 / n),
        IptwForm::Hajek => {
            if w1 == 0.0 || w0 == 0.0 {
                return Err(Error::Estimation("weight-normalized IPTW needs both groups non-empty".into()));
            }
            (a1 / w1, a0 / w0)
        }
    };
    Ok(EffectEstimate {
        ate: finite(m1 - m0, "IPTW")?,
        estimator: EstimatorKind::Iptw,
        propensity: Some(PropensitySummary::of(propensities)),
        n: data.n(),
        ratio: ratio(m1, m0),
    })
}

/// Linear regression of `y` on `[X, t, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub coefficients: Array1<f64>,
    pub treatment: f64,
    pub intercept: f64,
}

impl OutcomeModel {
    /// Zero predictor, reducing AIPW to IPTW.
    pub fn zero(d: usize) -> Self {
        Self { coefficients: Array1::zeros(d), treatment: 0.0, intercept: 0.0 }
    }

    /// Predictions with every row's treatment set to `t`.
    pub fn predict(&self, x: ArrayView2<f64>, t: f64) -> Result<Array1<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::Shape { expected: self.coefficients.len(), actual: x.ncols() });
        }
        Ok(x.dot(&self.coefficients) + (self.treatment * t + self.intercept))
    }
}

pub fn fit_outcome_model(data: &ObservationalDataset) -> Result<OutcomeModel> {
    let (n, d) = (data.n(), data.d());
    if n < d + 2 {
        return Err(Error::Sizing { n, reason: format!("outcome regression on {d} covariates needs at least {} rows", d + 2) });
    }
    let mut design = Array2::<f64>::ones((n, d + 2));
    design.slice_mut(ndarray::s![.., ..d]).assign(&data.covariates());
    design.column_mut(d).assign(&data.treatments());
    let beta = linalg::least_squares(design.view(), data.outcomes(), OUTCOME_JITTER)?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric("outcome regression produced non-finite coefficients".into()));
    }
    Ok(OutcomeModel { coefficients: beta.slice(ndarray::s![..d]).to_owned(), treatment: beta[d], intercept: beta[d + 1] })
}

/// Augmented IPTW.
pub fn aipw_ate(data: &ObservationalDataset, propensities: ArrayView1<f64>, outcome: &OutcomeModel) -> Result<EffectEstimate> {
    check_propensities(data, propensities)?;
    let f1 = outcome.predict(data.covariates(), 1.0)?;
    let f0 = outcome.predict(data.covariates(), 0.0)?;
    let (mut m1, mut m0) = (0.0, 0.0);
    for i in 0..data.n() {
        let (t, y, e) = (data.treatments()[i], data.outcomes()[i], propensities[i]);
        m1 += f1[i] + t * (y - f1[i]) / e;
        m0 += f0[i] + (1.0 - t) * (y - f0[i]) / (1.0 - e);
    }
    let n = data.n() as f64;
    let (m1, m0) = (m1 / n, m0 / n);
    Ok(EffectEstimate {
        ate: finite(m1 - m0, "AIPW")?,
        estimator: EstimatorKind::Aipw,
        propensity: Some(PropensitySummary::of(propensities)),
        n: data.n(),
        ratio: ratio(m1, m0),
    })
}

/// Runs `kind` with the given propensities (ignored by the naive estimator).
pub fn estimate(data: &ObservationalDataset, kind: EstimatorKind, propensities: ArrayView1<f64>, form: IptwForm) -> Result<EffectEstimate> {
    match kind {
        EstimatorKind::Naive => naive_ate(data),
        EstimatorKind::Iptw => iptw_ate_with(data, propensities, form),
        EstimatorKind::Aipw => aipw_ate(data, propensities, &fit_outcome_model(data)?),
    }
}
