//! Base propensity-score models `Q(T=1 | X)`.

mod standardize;

pub mod logistic;
pub mod mlp;
pub mod naive_bayes;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};

pub use logistic::{fit_logistic, LogisticConfig, LogisticModel, LogisticSolver};
pub use mlp::{fit_mlp, MlpConfig, MlpModel};
pub use naive_bayes::{fit_naive_bayes, GaussianNaiveBayesModel, NaiveBayesConfig};
pub use standardize::Standardizer;

/// Smallest distance from 0 and 1 that logistic and MLP outputs keep, so
/// predictions stay strictly inside the unit interval even when the logit
/// saturates in floating point.
pub const PROB_EPS: f64 = 1e-15;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Laplace-smoothed treated frequency `(n₁ + 1) / (n + 2)`.
pub(crate) fn smoothed_frequency(treated: usize, n: usize) -> f64 {
    (treated as f64 + 1.0) / (n as f64 + 2.0)
}

pub(crate) fn check_width(expected: usize, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::Shape { expected, actual: x.ncols() });
    }
    Ok(())
}

/// Any fitted base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityModel {
    Logistic(LogisticModel),
    NaiveBayes(GaussianNaiveBayesModel),
    Mlp(MlpModel),
}

impl PropensityModel {
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            PropensityModel::Logistic(m) => m.predict_proba(x),
            PropensityModel::NaiveBayes(m) => m.predict_proba(x),
            PropensityModel::Mlp(m) => m.predict_proba(x),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            PropensityModel::Logistic(m) => m.weights.len(),
            PropensityModel::NaiveBayes(m) => m.n_features(),
            PropensityModel::Mlp(m) => m.n_features(),
        }
    }
}

impl From<LogisticModel> for PropensityModel {
    fn from(m: LogisticModel) -> Self {
        PropensityModel::Logistic(m)
    }
}

impl From<GaussianNaiveBayesModel> for PropensityModel {
    fn from(m: GaussianNaiveBayesModel) -> Self {
        PropensityModel::NaiveBayes(m)
    }
}

impl From<MlpModel> for PropensityModel {
    fn from(m: MlpModel) -> Self {
        PropensityModel::Mlp(m)
    }
}

/// Which base model to train, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseModelConfig {
    Logistic(LogisticConfig),
    NaiveBayes(NaiveBayesConfig),
    Mlp(MlpConfig),
}

impl BaseModelConfig {
    pub fn fit(&self, data: &ObservationalDataset) -> Result<PropensityModel> {
        Ok(match self {
            BaseModelConfig::Logistic(c) => fit_logistic(data, c)?.into(),
            BaseModelConfig::NaiveBayes(c) => fit_naive_bayes(data, c)?.into(),
            BaseModelConfig::Mlp(c) => fit_mlp(data, c)?.into(),
        })
    }

    pub fn kind(&self) -> BaseModelKind {
        match self {
            BaseModelConfig::Logistic(_) => BaseModelKind::Logistic,
            BaseModelConfig::NaiveBayes(_) => BaseModelKind::NaiveBayes,
            BaseModelConfig::Mlp(_) => BaseModelKind::Mlp,
        }
    }

    /// Same model with its stochastic parts re-seeded.
    pub fn reseeded(&self, seed: u64) -> Self {
        match *self {
            BaseModelConfig::Mlp(c) => BaseModelConfig::Mlp(MlpConfig { seed, ..c }),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModelKind {
    Logistic,
    NaiveBayes,
    Mlp,
}

impl BaseModelKind {
    pub fn default_config(self) -> BaseModelConfig {
        match self {
            BaseModelKind::Logistic => BaseModelConfig::Logistic(LogisticConfig::default()),
            BaseModelKind::NaiveBayes => BaseModelConfig::NaiveBayes(NaiveBayesConfig::default()),
            BaseModelKind::Mlp => BaseModelConfig::Mlp(MlpConfig::default()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseModelKind::Logistic => "logistic",
            BaseModelKind::NaiveBayes => "nb",
            BaseModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for BaseModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "lr" => Ok(BaseModelKind::Logistic),
            "nb" | "naive_bayes" | "naive-bayes" => Ok(BaseModelKind::NaiveBayes),
            "mlp" => Ok(BaseModelKind::Mlp),
            other => Err(Error::Parameter(format!("unknown base model {other:?} (expected logistic, nb or mlp)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_limits() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!((logit(sigmoid(1.3)) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("nb".parse::<BaseModelKind>().unwrap(), BaseModelKind::NaiveBayes);
        assert!("svm".parse::<BaseModelKind>().is_err());
    }
}
