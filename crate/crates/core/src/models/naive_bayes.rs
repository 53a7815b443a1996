//! Gaussian naive Bayes on raw features.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{check_width, smoothed_frequency};
use crate::data::ObservationalDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesConfig {
    /// Variance floor as a fraction of the largest feature variance.
    pub var_smoothing: f64,
    /// Posteriors are clamped to `[prob_floor, 1 − prob_floor]`.
    pub prob_floor: f64,
}

impl Default for NaiveBayesConfig {
    fn default() -> Self {
        Self { var_smoothing: 1e-9, prob_floor: 1e-9 }
    }
}

/// Class-conditional independent Gaussians. Index 0 is control, 1 treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNaiveBayesModel {
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub variance_floor: f64,
    pub prob_floor: f64,
}

impl GaussianNaiveBayesModel {
    pub fn n_features(&self) -> usize {
        self.means[0].len()
    }

    fn log_joint(&self, class: usize, x: impl Iterator<Item = f64>) -> f64 {
        let ll: f64 = x
            .zip(self.means[class].iter().zip(&self.variances[class]))
            .map(|(v, (m, var))| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (v - m).powi(2) / (2.0 * var))
            .sum();
        self.priors[class].ln() + ll
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_width(self.n_features(), x)?;
        let lo = self.prob_floor;
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let l0 = self.log_joint(0, row.iter().copied());
                let l1 = self.log_joint(1, row.iter().copied());
                // p1 = 1 / (1 + exp(l0 − l1))
                super::sigmoid(l1 - l0).clamp(lo, 1.0 - lo)
            })
            .collect())
    }
}

fn column_stats(x: ArrayView2<f64>, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = x.ncols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in rows {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += x[[i, j]];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &i in rows {
        for (j, v) in var.iter_mut().enumerate() {
            *v += (x[[i, j]] - mean[j]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

pub fn fit_naive_bayes(data: &ObservationalDataset, config: &NaiveBayesConfig) -> Result<GaussianNaiveBayesModel> {
    if !(config.var_smoothing > 0.0) || !(config.prob_floor > 0.0 && config.prob_floor < 0.5) {
        return Err(Error::Parameter("var_smoothing must be > 0 and prob_floor in (0, 0.5)".into()));
    }
    let n = data.n();
    if n < 2 {
        return Err(Error::Input(format!("naive Bayes needs at least 2 rows, got {n}")));
    }
    let x = data.covariates();
    let all: Vec<usize> = (0..n).collect();
    let (_, overall_var) = column_stats(x, &all);
    let max_var = overall_var.iter().copied().fold(0.0, f64::max);
    let variance_floor = config.var_smoothing * if max_var > 0.0 { max_var } else { 1.0 };
    let floor = |v: Vec<f64>| v.into_iter().map(|v| v.max(variance_floor)).collect::<Vec<_>>();

    let treated: Vec<usize> = (0..n).filter(|&i| data.treatments()[i] == 1.0).collect();
    let control: Vec<usize> = (0..n).filter(|&i| data.treatments()[i] == 0.0).collect();

    if treated.is_empty() || control.is_empty() {
        // Identical likelihoods for both classes leave the smoothed prior.
        let p1 = smoothed_frequency(treated.len(), n);
        let (mean, var) = column_stats(x, &all);
        let var = floor(var);
        return Ok(GaussianNaiveBayesModel {
            priors: [1.0 - p1, p1],
            means: [mean.clone(), mean],
            variances: [var.clone(), var],
            variance_floor,
            prob_floor: config.prob_floor,
        });
    }

    let (m0, v0) = column_stats(x, &control);
    let (m1, v1) = column_stats(x, &treated);
    let p1 = treated.len() as f64 / n as f64;
    Ok(GaussianNaiveBayesModel {
        priors: [1.0 - p1, p1],
        means: [m0, m1],
        variances: [floor(v0), floor(v1)],
        variance_floor,
        prob_floor: config.prob_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn symmetric() -> GaussianNaiveBayesModel {
        // Class means -2 / +2, MLE variance exactly 1.
        let x = array![[-3.0], [-1.0], [1.0], [3.0]];
        let d = ObservationalDataset::new(x, array![0.0, 0.0, 1.0, 1.0], array![0.0, 0.0, 0.0, 0.0]).unwrap();
        fit_naive_bayes(&d, &NaiveBayesConfig::default()).unwrap()
    }

    #[test]
    fn symmetric_classes() {
        let m = symmetric();
        assert_eq!(m.means, [vec![-2.0], vec![2.0]]);
        assert_eq!(m.variances, [vec![1.0], vec![1.0]]);
        let p = m.predict_proba(array![[0.0], [2.0], [-2.0]].view()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9);
        assert!((p[1] + p[2] - 1.0).abs() < 1e-9);
        // Analytic posterior at x=2: 1 / (1 + exp(-8)).
        assert!((p[1] - 1.0 / (1.0 + (-8.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn constant_feature_is_floored() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [2.0, 2.0], [2.0, 3.0]];
        let d = ObservationalDataset::new(x, array![0.0, 0.0, 1.0, 1.0], array![0.0, 0.0, 0.0, 0.0]).unwrap();
        let m = fit_naive_bayes(&d, &NaiveBayesConfig::default()).unwrap();
        assert!(m.variance_floor > 0.0);
        assert!(m.variances.iter().flatten().all(|&v| v >= m.variance_floor));
        let p = m.predict_proba(array![[1.5, 1.0]].view()).unwrap();
        assert!(p[0].is_finite() && p[0] >= m.prob_floor && p[0] <= 1.0 - m.prob_floor);
    }

    #[test]
    fn single_class_prior() {
        let x = array![[1.0], [2.0], [3.0]];
        let d = ObservationalDataset::new(x, array![0.0, 0.0, 0.0], array![0.0, 0.0, 0.0]).unwrap();
        let m = fit_naive_bayes(&d, &NaiveBayesConfig::default()).unwrap();
        let p = m.predict_proba(array![[10.0]].view()).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-12);
    }

    /// Posterior from the density product in linear space.
    fn brute_force_posterior(m: &GaussianNaiveBayesModel, x: &[f64]) -> f64 {
        let density = |c: usize| -> f64 {
            let mut prod = m.priors[c];
            for (j, &v) in x.iter().enumerate() {
                let var = m.variances[c][j];
                prod *= (-(v - m.means[c][j]).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            }
            prod
        };
        let (a, b) = (density(0), density(1));
        b / (a + b)
    }

    #[test]
    fn posterior_matches_brute_force() {
        let mut r = rng::stream(3, 0);
        let n = 200;
        let t: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let x = Array2::from_shape_fn((n, 3), |(i, j)| r.random::<f64>() + 0.3 * t[i] * (j as f64 + 1.0));
        let d = ObservationalDataset::new(x.clone(), Array1::from(t), Array1::zeros(n)).unwrap();
        let m = fit_naive_bayes(&d, &NaiveBayesConfig::default()).unwrap();
        let p = m.predict_proba(x.view()).unwrap();
        for i in 0..n {
            let want = brute_force_posterior(&m, x.row(i).as_slice().unwrap());
            assert!((p[i] - want).abs() < 1e-9);
        }
    }
}
