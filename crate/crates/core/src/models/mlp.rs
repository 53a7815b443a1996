//! Single-hidden-layer perceptron: `tanh` hidden units, sigmoid output,
//! trained with mini-batch momentum gradient descent on log-loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_width, logit, sigmoid, smoothed_frequency, softplus, Standardizer, PROB_EPS};
use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: 16, learning_rate: 0.05, momentum: 0.9, epochs: 50, batch_size: 64, l2: 1e-4, seed: 0 }
    }
}

impl MlpConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Parameter("MLP needs at least one hidden unit".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Parameter("batch size and epoch count must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.l2 >= 0.0) {
            return Err(Error::Parameter("learning rate must be > 0, momentum in [0, 1), l2 >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// `hidden × d`, acting on standardized inputs.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
    pub standardizer: Standardizer,
    pub config: MlpConfig,
}

impl MlpModel {
    pub fn n_features(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Flat parameters: `w1` row-major, `b1`, `w2`, `b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(self.w1.iter());
        p.extend(self.b1.iter());
        p.extend(self.w2.iter());
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let (h, d) = self.w1.dim();
        self.w1.iter_mut().zip(&p[..h * d]).for_each(|(w, v)| *w = *v);
        self.b1.iter_mut().zip(&p[h * d..h * d + h]).for_each(|(w, v)| *w = *v);
        self.w2.iter_mut().zip(&p[h * d + h..h * d + 2 * h]).for_each(|(w, v)| *w = *v);
        self.b2 = p[h * d + 2 * h];
    }

    fn logits(&self, xs: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let hidden = (xs.dot(&self.w1.t()) + &self.b1).mapv(f64::tanh);
        let z = hidden.dot(&self.w2) + self.b2;
        (hidden, z)
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_width(self.n_features(), x)?;
        let xs = self.standardizer.transform(x);
        let (_, z) = self.logits(xs.view());
        Ok(z.mapv(|z| sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS)))
    }

    /// Mean log-loss plus `l2/2 · (‖w1‖² + ‖w2‖²)` on standardized inputs,
    /// with its gradient in [`params`](Self::params) order.
    pub fn loss_and_gradient(&self, xs: ArrayView2<f64>, t: ArrayView1<f64>, l2: f64) -> (f64, Vec<f64>) {
        let n = xs.nrows() as f64;
        let (hidden, z) = self.logits(xs);
        let loss = z.iter().zip(t.iter()).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / n
            + 0.5 * l2 * (self.w1.iter().map(|v| v * v).sum::<f64>() + self.w2.dot(&self.w2));
        let dz = (z.mapv(sigmoid) - t) / n;
        let gw2 = hidden.t().dot(&dz) + &(&self.w2 * l2);
        let gb2 = dz.sum();
        let mut dh = dz.view().insert_axis(Axis(1)).dot(&self.w2.view().insert_axis(Axis(0)));
        dh.zip_mut_with(&hidden, |g, &h| *g *= 1.0 - h * h);
        let gw1 = dh.t().dot(&xs) + &(&self.w1 * l2);
        let gb1 = dh.sum_axis(Axis(0));
        let mut g = Vec::with_capacity(self.n_params());
        g.extend(gw1.iter());
        g.extend(gb1.iter());
        g.extend(gw2.iter());
        g.push(gb2);
        (loss, g)
    }

    fn constant(d: usize, p: f64, config: MlpConfig) -> Self {
        Self {
            w1: Array2::zeros((config.hidden, d)),
            b1: Array1::zeros(config.hidden),
            w2: Array1::zeros(config.hidden),
            b2: logit(p),
            standardizer: Standardizer::identity(d),
            config,
        }
    }
}

pub fn fit_mlp(data: &ObservationalDataset, config: &MlpConfig) -> Result<MlpModel> {
    config.validate()?;
    let n = data.n();
    let d = data.d();
    if n < 2 {
        return Err(Error::Input(format!("MLP needs at least 2 rows, got {n}")));
    }
    let treated = data.treated_count();
    if treated == 0 || treated == n {
        return Ok(MlpModel::constant(d, smoothed_frequency(treated, n), *config));
    }

    let standardizer = Standardizer::fit(data.covariates());
    let xs = standardizer.transform(data.covariates());
    let t = data.treatments();
    let mut init = rng::stream(config.seed, 0x11_417);
    let a1 = (6.0 / (d + config.hidden) as f64).sqrt();
    let a2 = (6.0 / (config.hidden + 1) as f64).sqrt();
    let mut model = MlpModel {
        w1: Array2::from_shape_fn((config.hidden, d), |_| init.random_range(-a1..a1)),
        b1: Array1::zeros(config.hidden),
        w2: Array1::from_shape_fn(config.hidden, |_| init.random_range(-a2..a2)),
        b2: logit(treated as f64 / n as f64),
        standardizer,
        config: *config,
    };

    let mut params = model.params();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(config.seed, 1 + epoch as u64));
        for batch in order.chunks(config.batch_size) {
            let xb = xs.select(Axis(0), batch);
            let tb = t.select(Axis(0), batch);
            let (loss, grad) = model.loss_and_gradient(xb.view(), tb.view(), config.l2);
            if !loss.is_finite() {
                return Err(Error::Optimization { iteration: epoch, message: "MLP loss is not finite".into() });
            }
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
            model.set_params(&params);
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Optimization { iteration: config.epochs, message: "MLP parameters are not finite".into() });
    }
    Ok(model)
}

/// Shares of correctly classified rows at threshold 0.5.
pub fn accuracy(p: ArrayView1<f64>, t: ArrayView1<f64>) -> f64 {
    let hits = p.iter().zip(t.iter()).filter(|(p, t)| (**p >= 0.5) == (**t == 1.0)).count();
    hits as f64 / p.len() as f64
}
