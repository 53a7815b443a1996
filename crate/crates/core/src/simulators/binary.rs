//! Binary proxy of a hidden binary confounder.
//!
//! `Z ~ Bern(0.5)` is hidden; `X | Z` and `T | Z` are Bernoulli and
//! `Y = T ⊕ Z`. Only `X` is observed.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::estimators::discrete::DiscreteWorld;
use crate::rng;

pub const P_Z: f64 = 0.5;
/// `P(X=1 | Z=z)` for `z = 0, 1`.
pub const P_X_GIVEN_Z: [f64; 2] = [0.1, 0.3];
/// `P(T=1 | Z=z)` for `z = 0, 1`.
pub const P_T_GIVEN_Z: [f64; 2] = [0.2, 0.4];

/// How `Y` combines `T` and `Z`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combine {
    #[default]
    Xor,
    And,
}

impl Combine {
    pub fn apply(self, t: bool, z: bool) -> bool {
        match self {
            Combine::Xor => t ^ z,
            Combine::And => t && z,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BinarySimulation {
    pub data: ObservationalDataset,
    pub true_ate: f64,
    /// Hidden confounder, for diagnostics only.
    pub hidden: Array1<f64>,
}

pub fn simulate_binary_confounder(n: usize, seed: u64) -> Result<BinarySimulation> {
    if n == 0 {
        return Err(Error::Parameter("binary-confounder simulation needs n >= 1".into()));
    }
    let mut r = rng::stream(seed, 2);
    let mut x = Array2::zeros((n, 1));
    let mut t = Array1::zeros(n);
    let mut y = Array1::zeros(n);
    let mut z = Array1::zeros(n);
    for i in 0..n {
        let zi = r.random::<f64>() < P_Z;
        let k = usize::from(zi);
        let xi = r.random::<f64>() < P_X_GIVEN_Z[k];
        let ti = r.random::<f64>() < P_T_GIVEN_Z[k];
        x[[i, 0]] = f64::from(u8::from(xi));
        t[i] = f64::from(u8::from(ti));
        y[i] = f64::from(u8::from(Combine::Xor.apply(ti, zi)));
        z[i] = f64::from(u8::from(zi));
    }
    let data = ObservationalDataset::with_names(x, t, y, vec!["x".into()])?;
    Ok(BinarySimulation { data, true_ate: 0.0, hidden: z })
}

/// Support index of `(x, z)`.
pub fn support_index(x: usize, z: usize) -> usize {
    2 * x + z
}

/// Exact law on the four `(x, z)` cells.
pub fn population_world(combine: Combine) -> DiscreteWorld {
    let mut p_x = vec![0.0; 4];
    let mut prop = vec![0.0; 4];
    let mut m1 = vec![0.0; 4];
    let mut m0 = vec![0.0; 4];
    for x in 0..2 {
        for z in 0..2 {
            let pz = if z == 1 { P_Z } else { 1.0 - P_Z };
            let px = if x == 1 { P_X_GIVEN_Z[z] } else { 1.0 - P_X_GIVEN_Z[z] };
            let k = support_index(x, z);
            p_x[k] = pz * px;
            prop[k] = P_T_GIVEN_Z[z];
            m1[k] = f64::from(u8::from(combine.apply(true, z == 1)));
            m0[k] = f64::from(u8::from(combine.apply(false, z == 1)));
        }
    }
    DiscreteWorld::new(p_x, prop, m1, m0).expect("cell probabilities are valid")
}

/// `P(T=1 | X=x)` with `Z` marginalized, the best observable propensity.
pub fn observed_propensity() -> [f64; 2] {
    let w = population_world(Combine::Xor);
    let mut out = [0.0; 2];
    for (x, o) in out.iter_mut().enumerate() {
        let cells = [support_index(x, 0), support_index(x, 1)];
        let mass: f64 = cells.iter().map(|&k| w.p_x()[k]).sum();
        *o = cells.iter().map(|&k| w.p_x()[k] * w.propensity()[k]).sum::<f64>() / mass;
    }
    out
}

/// Observable propensities expanded to the four cells.
pub fn observed_propensity_per_cell() -> Vec<f64> {
    let p = observed_propensity();
    (0..4).map(|k| p[k / 2]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within(observed: f64, p: f64, n: usize, sigmas: f64) -> bool {
        (observed - p).abs() < sigmas * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn xor_has_zero_effect_and_and_does_not() {
        assert!(population_world(Combine::Xor).exact_ate().abs() < 1e-15);
        assert!((population_world(Combine::And).exact_ate() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn naive_limit_is_biased() {
        // P(Y=1|T=1) − P(Y=1|T=0) = 1/3 − 3/7 by Bayes on Z.
        let naive = population_world(Combine::Xor).exact_naive().unwrap();
        assert!((naive + 2.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn observable_propensity_iptw_limit() {
        let w = population_world(Combine::Xor);
        let q = observed_propensity_per_cell();
        let limit = w.exact_iptw_limit(&q).unwrap();
        assert!(limit < -0.05 && limit > -0.1, "{limit}");
        let p = observed_propensity();
        assert!((p[0] - 0.23 / 0.8).abs() < 1e-15);
        assert!((p[1] - 0.07 / 0.2).abs() < 1e-15);
    }

    #[test]
    fn marginals_and_conditionals() {
        let n = 100_000;
        let sim = simulate_binary_confounder(n, 5).unwrap();
        assert_eq!(sim.true_ate, 0.0);
        let x = sim.data.covariates().column(0).to_owned();
        let t = sim.data.treatments().to_owned();
        let z = &sim.hidden;
        assert!(within(x.mean().unwrap(), 0.2, n, 3.0));
        assert!(within(t.mean().unwrap(), 0.3, n, 3.0));
        assert!(within(z.mean().unwrap(), 0.5, n, 4.0));
        for zv in 0..2 {
            let rows: Vec<usize> = (0..n).filter(|&i| z[i] == zv as f64).collect();
            let k = rows.len();
            let px = rows.iter().map(|&i| x[i]).sum::<f64>() / k as f64;
            let pt = rows.iter().map(|&i| t[i]).sum::<f64>() / k as f64;
            assert!(within(px, P_X_GIVEN_Z[zv], k, 4.0));
            assert!(within(pt, P_T_GIVEN_Z[zv], k, 4.0));
        }
        let y_ok = (0..n).all(|i| sim.data.outcomes()[i] == f64::from(u8::from((t[i] == 1.0) ^ (z[i] == 1.0))));
        assert!(y_ok);
    }

    #[test]
    fn naive_sample_matches_population() {
        let sim = simulate_binary_confounder(100_000, 7).unwrap();
        let ate = crate::estimators::naive_ate(&sim.data).unwrap().ate;
        // SE ≈ 0.0033 at this size.
        assert!((ate + 2.0 / 21.0).abs() < 0.015, "{ate}");
        assert!(ate.abs() > 0.05);
    }
}
