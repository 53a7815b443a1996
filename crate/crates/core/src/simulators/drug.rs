//! Drug-effectiveness studies: three covariates, deterministic treatment
//! rules, Poisson recovery times.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Bernoulli, Beta, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Gamma shape for `x₂`.
pub const AGE_SHAPE: f64 = 8.0;
/// Gamma scale for `x₂` (mean 32).
pub const AGE_SCALE: f64 = 4.0;
pub const SEVERITY_A: f64 = 3.0;
pub const SEVERITY_B: f64 = 1.5;
/// Floor applied to non-positive Poisson means.
pub const MIN_POISSON_MEAN: f64 = 1e-9;
/// Covariate draws behind the Monte Carlo effect.
pub const TRUE_ATE_DRAWS: usize = 1_000_000;

const TRUE_ATE_SEED: u64 = 0xD_0CA1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DrugVariant {
    A,
    B,
    C,
    D,
}

impl DrugVariant {
    pub const ALL: [DrugVariant; 4] = [DrugVariant::A, DrugVariant::B, DrugVariant::C, DrugVariant::D];

    /// Treatment rule on (sex, age, severity).
    pub fn assign(self, x1: f64, x2: f64, x3: f64) -> bool {
        match self {
            DrugVariant::A => {
                if x1 == 1.0 {
                    x2 > 45.0
                } else {
                    x3 > 0.3
                }
            }
            DrugVariant::B => {
                if x1 == 1.0 {
                    x3 > 0.3
                } else {
                    x2 > 40.0
                }
            }
            DrugVariant::C => x2 > 50.0 && x3 > 0.7,
            DrugVariant::D => (x2 > 50.0) ^ (x3 > 0.7),
        }
    }
}

impl fmt::Display for DrugVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for DrugVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(DrugVariant::A),
            "B" => Ok(DrugVariant::B),
            "C" => Ok(DrugVariant::C),
            "D" => Ok(DrugVariant::D),
            other => Err(Error::Parameter(format!("unknown drug simulation {other:?} (expected A, B, C or D)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrugSimConfig {
    pub variant: DrugVariant,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DrugSimulation {
    pub data: ObservationalDataset,
    pub true_ate: f64,
    /// Rows whose Poisson mean had to be floored.
    pub clamp_warnings: usize,
}

/// `2 + 0.5x₁ + 0.03x₂ + 2x₃ − t`.
pub fn poisson_mean(x1: f64, x2: f64, x3: f64, t: f64) -> f64 {
    2.0 + 0.5 * x1 + 0.03 * x2 + 2.0 * x3 - t
}

fn floored_mean(x1: f64, x2: f64, x3: f64, t: f64, warnings: &mut usize) -> f64 {
    let m = poisson_mean(x1, x2, x3, t);
    if m > 0.0 {
        m
    } else {
        *warnings += 1;
        MIN_POISSON_MEAN
    }
}

struct Covariates {
    sex: Bernoulli,
    age: Gamma<f64>,
    severity: Beta<f64>,
}

impl Covariates {
    fn new() -> Self {
        Self {
            sex: Bernoulli::new(0.5).expect("valid probability"),
            age: Gamma::new(AGE_SHAPE, AGE_SCALE).expect("valid gamma"),
            severity: Beta::new(SEVERITY_A, SEVERITY_B).expect("valid beta"),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, r: &mut R) -> (f64, f64, f64) {
        (f64::from(u8::from(self.sex.sample(r))), self.age.sample(r), self.severity.sample(r))
    }
}

/// Monte Carlo `E[λ(x, 1)] − E[λ(x, 0)]` over `draws` covariate triples,
/// with the number of floored means.
pub fn monte_carlo_true_ate(draws: usize, seed: u64) -> (f64, usize) {
    let cov = Covariates::new();
    let mut r = rng::stream(seed, 0);
    let mut warnings = 0;
    let (mut s1, mut s0) = (0.0, 0.0);
    for _ in 0..draws {
        let (x1, x2, x3) = cov.draw(&mut r);
        s1 += floored_mean(x1, x2, x3, 1.0, &mut warnings);
        s0 += floored_mean(x1, x2, x3, 0.0, &mut warnings);
    }
    ((s1 - s0) / draws as f64, warnings)
}

/// The interventional effect shared by all variants, computed once.
pub fn true_ate() -> f64 {
    static CACHE: OnceLock<f64> = OnceLock::new();
    *CACHE.get_or_init(|| monte_carlo_true_ate(TRUE_ATE_DRAWS, TRUE_ATE_SEED).0)
}

pub fn simulate_drug(config: &DrugSimConfig) -> Result<DrugSimulation> {
    if config.n == 0 {
        return Err(Error::Parameter("drug simulation needs n >= 1".into()));
    }
    let n = config.n;
    let cov = Covariates::new();
    // Separate streams keep covariates identical across variants.
    let mut r = rng::stream(config.seed, 1);
    let mut outcome_rng = rng::stream(config.seed, 2);
    let mut x = Array2::<f64>::zeros((n, 3));
    let mut t = Array1::<f64>::zeros(n);
    let mut y = Array1::<f64>::zeros(n);
    let mut warnings = 0;
    for i in 0..n {
        let (x1, x2, x3) = cov.draw(&mut r);
        let treated = config.variant.assign(x1, x2, x3);
        let ti = f64::from(u8::from(treated));
        let mean = floored_mean(x1, x2, x3, ti, &mut warnings);
        x[[i, 0]] = x1;
        x[[i, 1]] = x2;
        x[[i, 2]] = x3;
        t[i] = ti;
        y[i] = Poisson::new(mean).map_err(|e| Error::Numeric(format!("Poisson mean {mean}: {e}")))?.sample(&mut outcome_rng);
    }
    if warnings > 0 {
        log::warn!("{warnings} Poisson means were floored at {MIN_POISSON_MEAN}");
    }
    let names = ["x1", "x2", "x3"].map(String::from).to_vec();
    Ok(DrugSimulation { data: ObservationalDataset::with_names(x, t, y, names)?, true_ate: true_ate(), clamp_warnings: warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Beta as BetaDist, ContinuousCDF, Gamma as GammaDist};

    #[test]
    fn true_effect_is_minus_one() {
        let (ate, warnings) = monte_carlo_true_ate(10_000, 1);
        assert!((ate + 1.0).abs() < 1e-9);
        assert_eq!(warnings, 0);
        assert!((true_ate() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_data() {
        let c = DrugSimConfig { variant: DrugVariant::B, n: 500, seed: 3 };
        let a = simulate_drug(&c).unwrap();
        let b = simulate_drug(&c).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, simulate_drug(&DrugSimConfig { seed: 4, ..c }).unwrap().data);
    }

    #[test]
    fn variants_share_covariates_but_not_treatments() {
        let sims: Vec<_> =
            DrugVariant::ALL.iter().map(|&v| simulate_drug(&DrugSimConfig { variant: v, n: 1000, seed: 9 }).unwrap()).collect();
        for a in 0..4 {
            for b in a + 1..4 {
                assert_eq!(sims[a].data.covariates(), sims[b].data.covariates());
                assert_ne!(sims[a].data.treatments(), sims[b].data.treatments(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn variant_c_treated_share_matches_quadrature() {
        let n = 100_000;
        let sim = simulate_drug(&DrugSimConfig { variant: DrugVariant::C, n, seed: 11 }).unwrap();
        let share = sim.data.treated_count() as f64 / n as f64;
        // statrs Gamma takes a rate.
        let age = GammaDist::new(AGE_SHAPE, 1.0 / AGE_SCALE).unwrap();
        let sev = BetaDist::new(SEVERITY_A, SEVERITY_B).unwrap();
        let p = age.sf(50.0) * sev.sf(0.7);
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((share - p).abs() < 4.0 * sd, "share {share}, expected {p}");
    }

    #[test]
    fn covariate_moments() {
        let sim = simulate_drug(&DrugSimConfig { variant: DrugVariant::A, n: 50_000, seed: 2 }).unwrap();
        let m = sim.data.covariates().mean_axis(ndarray::Axis(0)).unwrap();
        assert!((m[0] - 0.5).abs() < 0.01);
        assert!((m[1] - 32.0).abs() < 0.2);
        assert!((m[2] - 3.0 / 4.5).abs() < 0.01);
        assert!(sim.data.outcomes().iter().all(|&y| y >= 0.0 && y.fract() == 0.0));
    }

    #[test]
    fn rules() {
        assert!(DrugVariant::A.assign(1.0, 46.0, 0.0));
        assert!(!DrugVariant::A.assign(0.0, 46.0, 0.2));
        assert!(DrugVariant::B.assign(0.0, 41.0, 0.0));
        assert!(DrugVariant::C.assign(0.0, 51.0, 0.8) && !DrugVariant::D.assign(0.0, 51.0, 0.8));
        assert!(DrugVariant::D.assign(0.0, 10.0, 0.8));
        assert_eq!("c".parse::<DrugVariant>().unwrap(), DrugVariant::C);
    }
}
