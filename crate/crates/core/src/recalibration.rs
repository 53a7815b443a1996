//! Post-hoc recalibrators `R: [0,1] → [0,1]` and their composition with a
//! base propensity model.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::models::logistic::{self, LogisticConfig};
use crate::models::PropensityModel;

/// Default output clamp for recalibrated propensities.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-3;

/// Base scores are clamped this far from 0 and 1 before taking logits.
const LOGIT_INPUT_EPS: f64 = 1e-12;

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Parameter(format!("clamp epsilon must lie in (0, 0.5), got {eps}")));
    }
    Ok(())
}

fn check_pairs(scores: ArrayView1<f64>, labels: ArrayView1<f64>, min_len: usize) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape { expected: scores.len(), actual: labels.len() });
    }
    if scores.len() < min_len {
        return Err(Error::Input(format!("need at least {min_len} calibration pairs, got {}", scores.len())));
    }
    if let Some(i) = labels.iter().position(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Input(format!("label at position {i} is {} (must be 0 or 1)", labels[i])));
    }
    if let Some(i) = scores.iter().position(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::Input(format!("score at position {i} is {} (must lie in [0, 1])", scores[i])));
    }
    Ok(())
}

/// Weighted pool-adjacent-violators: the non-decreasing sequence closest
/// to `values` in weighted squared error.
pub fn pav(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // (mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (v, w, 1usize);
        while let Some(&(m, bw, c)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let total = bw + cur.1;
            cur = ((m * bw + cur.0 * cur.1) / total, total, c + cur.2);
        }
        blocks.push(cur);
    }
    blocks.into_iter().flat_map(|(m, _, c)| std::iter::repeat_n(m, c)).collect()
}

/// Monotone step fit with linear interpolation between breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicRecalibrator {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub clamp_eps: f64,
}

impl IsotonicRecalibrator {
    /// Unclamped fitted function at `p`.
    pub fn raw(&self, p: f64) -> f64 {
        let bp = &self.breakpoints;
        let last = bp.len() - 1;
        if p <= bp[0] {
            return self.values[0];
        }
        if p >= bp[last] {
            return self.values[last];
        }
        // First breakpoint strictly greater than p.
        let hi = bp.partition_point(|&b| b <= p);
        let lo = hi - 1;
        let w = (p - bp[lo]) / (bp[hi] - bp[lo]);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }

    pub fn apply(&self, p: f64) -> f64 {
        self.raw(p).clamp(self.clamp_eps, 1.0 - self.clamp_eps)
    }
}

/// Least-squares isotonic fit of `labels` on `scores`.
///
/// Rows are stably sorted by `(score, index)`; rows sharing a score are
/// pooled into one weighted point before PAV, so every breakpoint is a
/// distinct score.
pub fn fit_isotonic(scores: ArrayView1<f64>, labels: ArrayView1<f64>, clamp_eps: f64) -> Result<IsotonicRecalibrator> {
    check_eps(clamp_eps)?;
    check_pairs(scores, labels, 1)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let mut breakpoints: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &i in &order {
        if breakpoints.last() == Some(&scores[i]) {
            *sums.last_mut().unwrap() += labels[i];
            *weights.last_mut().unwrap() += 1.0;
        } else {
            breakpoints.push(scores[i]);
            sums.push(labels[i]);
            weights.push(1.0);
        }
    }
    let means: Vec<f64> = sums.iter().zip(&weights).map(|(s, w)| s / w).collect();
    let values = pav(&means, &weights);
    Ok(IsotonicRecalibrator { breakpoints, values, clamp_eps })
}

/// Platt map `p ↦ sigmoid(a · logit(p) + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidRecalibrator {
    pub a: f64,
    pub b: f64,
    pub clamp_eps: f64,
}

impl SigmoidRecalibrator {
    pub fn raw(&self, p: f64) -> f64 {
        let p = p.clamp(LOGIT_INPUT_EPS, 1.0 - LOGIT_INPUT_EPS);
        crate::models::sigmoid(self.a * crate::models::logit(p) + self.b)
    }

    pub fn apply(&self, p: f64) -> f64 {
        self.raw(p).clamp(self.clamp_eps, 1.0 - self.clamp_eps)
    }
}

/// Fits Platt scaling by minimizing log-loss with the logistic solver.
pub fn fit_sigmoid(scores: ArrayView1<f64>, labels: ArrayView1<f64>, clamp_eps: f64) -> Result<SigmoidRecalibrator> {
    check_eps(clamp_eps)?;
    check_pairs(scores, labels, 2)?;
    let treated = labels.iter().filter(|&&t| t == 1.0).count();
    if treated == 0 || treated == labels.len() {
        return Err(Error::Fit("sigmoid recalibration needs both classes; use isotonic for single-class data".into()));
    }
    let design = scores
        .mapv(|p| crate::models::logit(p.clamp(LOGIT_INPUT_EPS, 1.0 - LOGIT_INPUT_EPS)))
        .insert_axis(ndarray::Axis(1));
    let config = LogisticConfig { l2: 0.0, max_iter: 500, ..LogisticConfig::default() };
    let (w, b, _) = logistic::minimize(design.view(), labels, &config)?;
    Ok(SigmoidRecalibrator { a: w[0], b, clamp_eps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecalibrationMethod {
    Isotonic,
    Sigmoid,
}

impl RecalibrationMethod {
    pub fn name(self) -> &'static str {
        match self {
            RecalibrationMethod::Isotonic => "isotonic",
            RecalibrationMethod::Sigmoid => "sigmoid",
        }
    }

    pub fn fit(self, scores: ArrayView1<f64>, labels: ArrayView1<f64>, clamp_eps: f64) -> Result<Recalibrator> {
        Ok(match self {
            RecalibrationMethod::Isotonic => Recalibrator::Isotonic(fit_isotonic(scores, labels, clamp_eps)?),
            RecalibrationMethod::Sigmoid => Recalibrator::Sigmoid(fit_sigmoid(scores, labels, clamp_eps)?),
        })
    }
}

impl fmt::Display for RecalibrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RecalibrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotonic" => Ok(RecalibrationMethod::Isotonic),
            "sigmoid" | "platt" => Ok(RecalibrationMethod::Sigmoid),
            other => Err(Error::Parameter(format!("unknown recalibrator {other:?} (expected isotonic or sigmoid)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recalibrator {
    Isotonic(IsotonicRecalibrator),
    Sigmoid(SigmoidRecalibrator),
}

impl Recalibrator {
    pub fn apply(&self, p: f64) -> f64 {
        match self {
            Recalibrator::Isotonic(r) => r.apply(p),
            Recalibrator::Sigmoid(r) => r.apply(p),
        }
    }

    pub fn apply_all(&self, p: ArrayView1<f64>) -> Array1<f64> {
        p.mapv(|p| self.apply(p))
    }

    pub fn clamp_eps(&self) -> f64 {
        match self {
            Recalibrator::Isotonic(r) => r.clamp_eps,
            Recalibrator::Sigmoid(r) => r.clamp_eps,
        }
    }
}

/// `R ∘ Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedModel {
    pub base: PropensityModel,
    pub recalibrator: Recalibrator,
}

impl CalibratedModel {
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let base = self.base.predict_proba(x)?;
        Ok(self.recalibrator.apply_all(base.view()))
    }
}

/// Scores the calibration rows with `base` and fits `method` on
/// `(score, treatment)` pairs.
pub fn recalibration_step(
    base: PropensityModel,
    calib: &ObservationalDataset,
    method: RecalibrationMethod,
    clamp_eps: f64,
) -> Result<CalibratedModel> {
    let scores = base.predict_proba(calib.covariates())?;
    let recalibrator = method.fit(scores.view(), calib.treatments(), clamp_eps)?;
    Ok(CalibratedModel { base, recalibrator })
}
