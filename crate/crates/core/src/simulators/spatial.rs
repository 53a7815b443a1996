//! Spatially structured genotypes with a structure-driven phenotype.

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Variance shares of the genetic, confounding and noise terms.
pub const DEFAULT_SHARES: [f64; 3] = [0.4, 0.4, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGwasConfig {
    pub n: usize,
    pub m: usize,
    /// Beta(α, α) concentration of the structure coordinates.
    pub alpha: f64,
    pub causal_fraction: f64,
    pub seed: u64,
    /// `(ν_gene, ν_conf, ν_noise)`.
    pub shares: [f64; 3],
}

impl SpatialGwasConfig {
    pub fn new(n: usize, m: usize, alpha: f64, causal_fraction: f64, seed: u64) -> Self {
        Self { n, m, alpha, causal_fraction, seed, shares: DEFAULT_SHARES }
    }

    pub fn causal_count(&self) -> usize {
        ((self.causal_fraction * self.m as f64).round() as usize).clamp(1, self.m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.m < 2 {
            return Err(Error::Parameter(format!("spatial GWAS needs n >= 2 and m >= 2, got n={} m={}", self.n, self.m)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.causal_fraction > 0.0 && self.causal_fraction <= 1.0) {
            return Err(Error::Parameter(format!("causal fraction must lie in (0, 1], got {}", self.causal_fraction)));
        }
        if self.shares.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter("variance shares must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwasDataset {
    /// `n × m`, entries 0 or 1.
    pub genotypes: Array2<f64>,
    pub phenotypes: Array1<f64>,
    pub true_beta: Array1<f64>,
    /// Structure coordinates `Z` (`n × 2`); diagnostics only.
    pub confounders: Array2<f64>,
    /// Allele frequencies `F`; the oracle propensity of SNP `j` for
    /// individual `i` is `F[i, j]`.
    pub allele_freq: Array2<f64>,
    pub causal: Vec<usize>,
}

impl GwasDataset {
    pub fn n(&self) -> usize {
        self.genotypes.nrows()
    }

    pub fn m(&self) -> usize {
        self.genotypes.ncols()
    }
}

/// Population standard deviation.
pub fn population_sd(v: &Array1<f64>) -> f64 {
    v.std(0.0)
}

pub fn simulate_spatial_gwas(config: &SpatialGwasConfig) -> Result<GwasDataset> {
    config.validate()?;
    let (n, m) = (config.n, config.m);
    let mut r = rng::stream(config.seed, 3);

    let mut gamma = Array2::<f64>::from_elem((m, 3), 0.05);
    for j in 0..m {
        for k in 0..2 {
            gamma[[j, k]] = 0.9 * r.random_range(0.0..0.5);
        }
    }
    let coord = Beta::new(config.alpha, config.alpha).map_err(|e| Error::Parameter(format!("Beta({0}, {0}): {e}", config.alpha)))?;
    let mut structure = Array2::<f64>::ones((n, 3));
    for i in 0..n {
        for k in 0..2 {
            structure[[i, k]] = coord.sample(&mut r);
        }
    }
    let freq = structure.dot(&gamma.t());
    if let Some(v) = freq.iter().find(|&&f| !(f > 0.0 && f < 1.0)) {
        return Err(Error::Numeric(format!("allele frequency {v} outside (0, 1); structure construction is broken")));
    }
    let genotypes = freq.mapv(|f| f64::from(u8::from(r.random::<f64>() < f)));

    let causal_count = config.causal_count();
    let mut causal = sample(&mut r, m, causal_count).into_vec();
    causal.sort_unstable();
    let mut beta = Array1::<f64>::zeros(m);
    for &j in &causal {
        beta[j] = r.sample(StandardNormal);
    }
    let confounders = structure.slice(s![.., ..2]).to_owned();
    let conf_coef = Array1::from_shape_fn(2, |_| r.sample::<f64, _>(StandardNormal));
    let noise = Array1::from_shape_fn(n, |_| r.sample::<f64, _>(StandardNormal));

    let genetic = genotypes.dot(&beta);
    let lambda = confounders.dot(&conf_coef);
    let [nu_gene, nu_conf, nu_noise] = config.shares;
    let sd_g = population_sd(&genetic);
    let (sd_l, sd_e) = (population_sd(&lambda), population_sd(&noise));
    if !(sd_g > 0.0 && sd_l > 0.0 && sd_e > 0.0) {
        return Err(Error::Numeric("a phenotype component has zero variance; cannot rescale".into()));
    }
    let scale = sd_g / nu_gene.sqrt();
    let lambda = lambda * (scale * nu_conf.sqrt() / sd_l);
    let noise = noise * (scale * nu_noise.sqrt() / sd_e);
    let phenotypes = &genetic + &lambda + &noise;

    Ok(GwasDataset { genotypes, phenotypes, true_beta: beta, confounders, allele_freq: freq, causal })
}

/// Mean Pearson correlation over distinct SNP pairs; monomorphic SNPs are
/// skipped.
pub fn mean_snp_correlation(genotypes: &Array2<f64>) -> f64 {
    let centered = genotypes - &genotypes.mean_axis(Axis(0)).expect("non-empty");
    let norms: Vec<f64> = centered.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let gram = centered.t().dot(&centered);
    let m = genotypes.ncols();
    let (mut total, mut pairs) = (0.0, 0usize);
    for a in 0..m {
        for b in a + 1..m {
            if norms[a] > 0.0 && norms[b] > 0.0 {
                total += gram[[a, b]] / (norms[a] * norms[b]);
                pairs += 1;
            }
        }
    }
    total / pairs.max(1) as f64
}
