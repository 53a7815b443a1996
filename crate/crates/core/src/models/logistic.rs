//! L2-regularized logistic regression.
//!
//! The objective is the mean negative log-likelihood plus `l2/2 · ‖w‖²`
//! (bias unpenalized), minimized on standardized features. Every accepted
//! step passes a step-halving line search, so the recorded objective never
//! increases.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{check_width, logit, sigmoid, smoothed_frequency, softplus, Standardizer, PROB_EPS};
use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogisticSolver {
    /// Damped Newton steps.
    Newton,
    /// Full-batch gradient descent.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm drops below this.
    pub tol: f64,
    pub solver: LogisticSolver,
    /// First trial step for gradient descent.
    pub learning_rate: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { l2: 1e-4, max_iter: 10_000, tol: 1e-8, solver: LogisticSolver::Newton, learning_rate: 1.0 }
    }
}

impl LogisticConfig {
    fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::Parameter(format!("l2 strength must be finite and >= 0, got {}", self.l2)));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("max_iter, tol and learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted model. `weights` and `bias` act on raw (unstandardized) features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub config: LogisticConfig,
    /// Set when training data held a single class.
    pub prior_only: bool,
}

/// Optimizer trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticTrace {
    /// Objective at the start and after every accepted step.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    /// Constant model predicting `p`.
    pub fn constant(d: usize, p: f64, config: LogisticConfig) -> Self {
        Self { weights: vec![0.0; d], bias: logit(p), standardizer: Standardizer::identity(d), config, prior_only: true }
    }

    pub fn decision_function(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_width(self.weights.len(), x)?;
        let w = ArrayView1::from(&self.weights[..]);
        Ok(x.dot(&w) + self.bias)
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.decision_function(x)?.mapv(|z| sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS)))
    }
}

/// Regularized objective at `(w, b)`.
pub fn objective(x: ArrayView2<f64>, t: ArrayView1<f64>, w: ArrayView1<f64>, b: f64, l2: f64) -> f64 {
    let z = x.dot(&w) + b;
    nll(z.view(), t) + 0.5 * l2 * w.dot(&w)
}

/// Gradient of [`objective`] with respect to `(w, b)`.
pub fn gradient(x: ArrayView2<f64>, t: ArrayView1<f64>, w: ArrayView1<f64>, b: f64, l2: f64) -> (Array1<f64>, f64) {
    let n = x.nrows() as f64;
    let resid = (x.dot(&w) + b).mapv(sigmoid) - t;
    let gw = x.t().dot(&resid) / n + &(&w * l2);
    (gw, resid.sum() / n)
}

fn nll(z: ArrayView1<f64>, t: ArrayView1<f64>) -> f64 {
    let n = z.len() as f64;
    z.iter().zip(t.iter()).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / n
}

pub fn fit_logistic(data: &ObservationalDataset, config: &LogisticConfig) -> Result<LogisticModel> {
    fit_logistic_traced(data, config).map(|(m, _)| m)
}

pub fn fit_logistic_traced(
    data: &ObservationalDataset,
    config: &LogisticConfig,
) -> Result<(LogisticModel, LogisticTrace)> {
    config.validate()?;
    let n = data.n();
    if n < 2 {
        return Err(Error::Input(format!("logistic regression needs at least 2 rows, got {n}")));
    }
    let treated = data.treated_count();
    if treated == 0 || treated == n {
        let p = smoothed_frequency(treated, n);
        let model = LogisticModel::constant(data.d(), p, *config);
        let trace = LogisticTrace { losses: Vec::new(), iterations: 0, converged: true };
        return Ok((model, trace));
    }

    let standardizer = Standardizer::fit(data.covariates());
    let xs = standardizer.transform(data.covariates());
    let (w, b, trace) = minimize(xs.view(), data.treatments(), config)?;

    let weights: Vec<f64> = w.iter().zip(&standardizer.scale).map(|(w, s)| w / s).collect();
    let bias = b - weights.iter().zip(&standardizer.mean).map(|(w, m)| w * m).sum::<f64>();
    let model = LogisticModel { weights, bias, standardizer, config: *config, prior_only: false };
    Ok((model, trace))
}

/// Minimizes the regularized objective over `(w, b)` on an already
/// prepared design.
pub(crate) fn minimize(
    x: ArrayView2<f64>,
    t: ArrayView1<f64>,
    config: &LogisticConfig,
) -> Result<(Array1<f64>, f64, LogisticTrace)> {
    let (n, d) = x.dim();
    let nf = n as f64;
    let tbar = t.sum() / nf;
    let mut w = Array1::<f64>::zeros(d);
    let mut b = logit(tbar.clamp(1e-6, 1.0 - 1e-6));
    let mut loss = objective(x, t, w.view(), b, config.l2);
    let mut losses = vec![loss];
    let mut step = config.learning_rate;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let z = x.dot(&w) + b;
        let p = z.mapv(sigmoid);
        let resid = &p - &t;
        let gw = x.t().dot(&resid) / nf + &(&w * config.l2);
        let gb = resid.sum() / nf;
        let gnorm = (gw.dot(&gw) + gb * gb).sqrt();
        if !gnorm.is_finite() {
            return Err(Error::Optimization { iteration: iterations, message: "gradient is not finite".into() });
        }
        if gnorm < config.tol {
            converged = true;
            break;
        }

        let (dw, db, mut s) = match config.solver {
            LogisticSolver::Newton => match newton_direction(x, p.view(), gw.view(), gb, config.l2) {
                Some((dw, db)) => (dw, db, 1.0),
                None => (gw.clone(), gb, step),
            },
            LogisticSolver::GradientDescent => (gw.clone(), gb, step),
        };

        let mut accepted = None;
        for _ in 0..60 {
            let wc = &w - &(&dw * s);
            let bc = b - db * s;
            let lc = objective(x, t, wc.view(), bc, config.l2);
            if lc.is_nan() {
                return Err(Error::Optimization { iteration: iterations, message: "objective became NaN".into() });
            }
            if lc <= loss {
                accepted = Some((wc, bc, lc));
                break;
            }
            s *= 0.5;
        }
        match accepted {
            Some((wc, bc, lc)) => {
                let improvement = loss - lc;
                w = wc;
                b = bc;
                loss = lc;
                losses.push(loss);
                if config.solver == LogisticSolver::GradientDescent {
                    step = (s * 2.0).min(1e6);
                }
                if improvement == 0.0 {
                    converged = true;
                    break;
                }
            }
            // No descent possible at machine precision.
            None => {
                converged = true;
                break;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Optimization { iteration: iterations, message: "objective is not finite".into() });
    }
    Ok((w, b, LogisticTrace { losses, iterations, converged }))
}

fn newton_direction(
    x: ArrayView2<f64>,
    p: ArrayView1<f64>,
    gw: ArrayView1<f64>,
    gb: f64,
    l2: f64,
) -> Option<(Array1<f64>, f64)> {
    let (n, d) = x.dim();
    let nf = n as f64;
    let sw = p.mapv(|p| (p * (1.0 - p)).sqrt());
    let mut design = Array2::<f64>::zeros((n, d + 1));
    design.slice_mut(ndarray::s![.., ..d]).assign(&(&x * &sw.view().insert_axis(Axis(1))));
    design.column_mut(d).assign(&sw);
    let mut h = design.t().dot(&design) / nf;
    for j in 0..d {
        h[[j, j]] += l2;
    }
    for j in 0..=d {
        h[[j, j]] += 1e-10;
    }
    let mut g = Array1::<f64>::zeros(d + 1);
    g.slice_mut(ndarray::s![..d]).assign(&gw);
    g[d] = gb;
    let step = linalg::solve_spd(&h, g.view())?;
    if step.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((step.slice(ndarray::s![..d]).to_owned(), step[d]))
}
