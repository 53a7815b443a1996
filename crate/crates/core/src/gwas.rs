//! Per-SNP marginal effect estimation and the method-comparison benchmark.
//!
//! Each SNP in turn is the treatment and every other SNP is a covariate.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ObservationalDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::estimators::{self, cross_fit_propensities, IptwForm, OutcomeModel};
use crate::linalg;
use crate::metrics;
use crate::models::{BaseModelConfig, BaseModelKind};
use crate::recalibration::RecalibrationMethod;
use crate::rng;
use crate::simulators::{simulate_spatial_gwas, GwasDataset, SpatialGwasConfig};

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_SWEEPS: usize = 10_000;
pub const DEFAULT_PCA_COMPONENTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GwasMethod {
    Naive,
    Pca,
    IptwPlain,
    IptwCalib,
    AipwPlain,
    AipwCalib,
    /// IPTW with the simulator's allele frequencies as propensities.
    OracleIptw,
}

impl GwasMethod {
    pub const ALL: [GwasMethod; 7] = [
        GwasMethod::Naive,
        GwasMethod::Pca,
        GwasMethod::IptwCalib,
        GwasMethod::IptwPlain,
        GwasMethod::AipwCalib,
        GwasMethod::AipwPlain,
        GwasMethod::OracleIptw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GwasMethod::Naive => "naive",
            GwasMethod::Pca => "pca",
            GwasMethod::IptwPlain => "iptw_plain",
            GwasMethod::IptwCalib => "iptw_calib",
            GwasMethod::AipwPlain => "aipw_plain",
            GwasMethod::AipwCalib => "aipw_calib",
            GwasMethod::OracleIptw => "oracle_iptw",
        }
    }

    fn needs_propensities(self) -> bool {
        matches!(self, GwasMethod::IptwPlain | GwasMethod::IptwCalib | GwasMethod::AipwPlain | GwasMethod::AipwCalib)
    }

    fn needs_outcome_model(self) -> bool {
        matches!(self, GwasMethod::AipwPlain | GwasMethod::AipwCalib)
    }
}

impl fmt::Display for GwasMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GwasMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GwasMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown GWAS method {s:?}")))
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<GwasMethod>> {
    let methods: Vec<GwasMethod> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::Parameter("method list is empty".into()));
    }
    Ok(methods)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectConfig {
    pub methods: Vec<GwasMethod>,
    pub base: BaseModelConfig,
    pub recalibration: RecalibrationMethod,
    pub folds: usize,
    /// Seeds fold assignment and stochastic base models.
    pub seed: u64,
    pub clamp_eps: f64,
    pub ece_bins: usize,
    pub pca_components: usize,
}

impl EffectConfig {
    pub fn new(methods: Vec<GwasMethod>, base: BaseModelKind) -> Self {
        Self {
            methods,
            base: base.default_config(),
            recalibration: RecalibrationMethod::Isotonic,
            folds: 10,
            seed: 0,
            clamp_eps: 0.01,
            ece_bins: metrics::DEFAULT_ECE_BINS,
            pca_components: DEFAULT_PCA_COMPONENTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEffects {
    pub methods: Vec<GwasMethod>,
    /// `effects[k][j]`: method `k`, SNP `j`.
    pub effects: Vec<Array1<f64>>,
    /// Per-SNP ECE of the plain and calibrated propensities; `NaN` when the
    /// SNP was skipped or no propensity method ran.
    pub ece_plain: Vec<f64>,
    pub ece_calibrated: Vec<f64>,
    /// SNPs where method `k` failed and the naive estimate was substituted.
    pub fallbacks: Vec<Vec<usize>>,
    /// Monomorphic SNPs, reported as zero effect for every method.
    pub skipped: Vec<usize>,
    /// Summed per-SNP time per method, propensity fitting included.
    pub method_time: Vec<Duration>,
}

impl MarginalEffects {
    pub fn effect(&self, method: GwasMethod) -> Option<&Array1<f64>> {
        self.methods.iter().position(|&m| m == method).map(|k| &self.effects[k])
    }

    /// Mean of `ECE_plain − ECE_calibrated` over SNPs with both values.
    pub fn delta_ece(&self) -> Option<f64> {
        let d: Vec<f64> = self.ece_plain.iter().zip(&self.ece_calibrated).map(|(a, b)| a - b).filter(|v| v.is_finite()).collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    }
}

/// Columns of the top principal components of the column-centered matrix
/// (`n × k` scores), by power iteration with deflation on `XᵀX`.
pub fn principal_components(x: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let (n, m) = x.dim();
    if k >= n.min(m) {
        return Err(Error::Parameter(format!("need fewer than min(n, m) = {} components, got {k}", n.min(m))));
    }
    let centered = x - &x.mean_axis(Axis(0)).expect("non-empty");
    let mut gram = centered.t().dot(&centered);
    let mut scores = Array2::<f64>::zeros((n, k));
    for c in 0..k {
        // Fixed, non-symmetric start keeps the run deterministic.
        let mut v = Array1::from_shape_fn(m, |i| 1.0 + (i as f64 + 1.0).sqrt().fract());
        v /= v.dot(&v).sqrt();
        let mut converged = false;
        for _ in 0..PCA_MAX_SWEEPS {
            let mut w = gram.dot(&v);
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                converged = true;
                break;
            }
            w /= norm;
            if w.dot(&v) < 0.0 {
                w.mapv_inplace(|a| -a);
            }
            let change = w.iter().zip(&v).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            v = w;
            if change < PCA_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numeric(format!("power iteration for component {} did not converge in {PCA_MAX_SWEEPS} sweeps", c + 1)));
        }
        let lambda = v.dot(&gram.dot(&v));
        let outer = v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
        gram.scaled_add(-lambda, &outer);
        scores.column_mut(c).assign(&centered.dot(&v));
    }
    Ok(scores)
}

/// Per-SNP treatment coefficient of `y ~ [g_j, PCs, 1]`.
pub fn pca_adjusted_effects(gwas: &GwasDataset, components: usize) -> Result<Array1<f64>> {
    let pcs = principal_components(&gwas.genotypes, components)?;
    let (n, m) = (gwas.n(), gwas.m());
    let mut design = Array2::<f64>::ones((n, components + 2));
    design.slice_mut(ndarray::s![.., 1..components + 1]).assign(&pcs);
    let mut out = Array1::zeros(m);
    for j in 0..m {
        design.column_mut(0).assign(&gwas.genotypes.column(j));
        if is_monomorphic(gwas.genotypes.column(j)) {
            continue;
        }
        out[j] = linalg::least_squares(design.view(), gwas.phenotypes.view(), estimators::OUTCOME_JITTER)?[0];
    }
    Ok(out)
}

fn is_monomorphic(g: ArrayView1<f64>) -> bool {
    g.iter().all(|&v| v == g[0])
}

/// Dataset with SNP `j` as treatment and all other SNPs as covariates.
pub fn snp_dataset(gwas: &GwasDataset, j: usize) -> Result<ObservationalDataset> {
    let others: Vec<usize> = (0..gwas.m()).filter(|&k| k != j).collect();
    ObservationalDataset::new(gwas.genotypes.select(Axis(1), &others), gwas.genotypes.column(j).to_owned(), gwas.phenotypes.clone())
}

struct SnpOutcome {
    effects: Vec<f64>,
    failed: Vec<bool>,
    ece: (f64, f64),
    time: Vec<Duration>,
}

fn estimate_snp(gwas: &GwasDataset, j: usize, config: &EffectConfig, pca: Option<&Array1<f64>>) -> Result<SnpOutcome> {
    let k = config.methods.len();
    if is_monomorphic(gwas.genotypes.column(j)) {
        return Ok(SnpOutcome { effects: vec![0.0; k], failed: vec![false; k], ece: (f64::NAN, f64::NAN), time: vec![Duration::ZERO; k] });
    }
    let data = snp_dataset(gwas, j)?;
    let naive = estimators::naive_ate(&data)?.ate;

    let start = Instant::now();
    let split = SplitSpec::kfold(config.folds, config.seed)?;
    let wants_props = config.methods.iter().any(|m| m.needs_propensities());
    let props = if wants_props {
        // Stochastic bases get a per-SNP stream; deterministic ones are untouched.
        let base = match config.base {
            BaseModelConfig::Mlp(c) => config.base.reseeded(rng::derive_seed(c.seed, j as u64)),
            other => other,
        };
        Some(cross_fit_propensities(&data, &base, Some(config.recalibration), &split, config.clamp_eps))
    } else {
        None
    };
    let prop_time = start.elapsed();
    let outcome = if config.methods.iter().any(|m| m.needs_outcome_model()) { Some(estimators::fit_outcome_model(&data)) } else { None };

    let mut ece = (f64::NAN, f64::NAN);
    if let Some(Ok(p)) = &props {
        let cal = p.calibrated.as_ref().expect("recalibration requested");
        ece = (
            metrics::ece(p.plain.view(), data.treatments(), config.ece_bins)?.ece,
            metrics::ece(cal.view(), data.treatments(), config.ece_bins)?.ece,
        );
    }

    let mut effects = Vec::with_capacity(k);
    let mut failed = Vec::with_capacity(k);
    let mut time = Vec::with_capacity(k);
    for &method in &config.methods {
        let t0 = Instant::now();
        let result: Result<f64> = match method {
            GwasMethod::Naive => Ok(naive),
            GwasMethod::Pca => Ok(pca.expect("PCA effects precomputed")[j]),
            GwasMethod::OracleIptw => {
                let f = gwas.allele_freq.column(j);
                estimators::iptw_ate(&data, f).map(|e| e.ate)
            }
            GwasMethod::IptwPlain | GwasMethod::IptwCalib | GwasMethod::AipwPlain | GwasMethod::AipwCalib => {
                match props.as_ref().expect("propensities requested") {
                    Err(e) => Err(Error::Estimation(e.to_string())),
                    Ok(p) => {
                        let e = if matches!(method, GwasMethod::IptwPlain | GwasMethod::AipwPlain) {
                            p.plain.view()
                        } else {
                            p.calibrated.as_ref().expect("recalibration requested").view()
                        };
                        if method.needs_outcome_model() {
                            match outcome.as_ref().expect("outcome model requested") {
                                Ok(f) => aipw(&data, e, f),
                                Err(err) => Err(Error::Estimation(err.to_string())),
                            }
                        } else {
                            estimators::iptw_ate_with(&data, e, IptwForm::HorvitzThompson).map(|e| e.ate)
                        }
                    }
                }
            }
        };
        let mut elapsed = t0.elapsed();
        if method.needs_propensities() {
            elapsed += prop_time;
        }
        match result {
            Ok(v) => {
                effects.push(v);
                failed.push(false);
            }
            Err(e) => {
                log::warn!("SNP {j}, method {method}: {e}; using the naive estimate");
                effects.push(naive);
                failed.push(true);
            }
        }
        time.push(elapsed);
    }
    Ok(SnpOutcome { effects, failed, ece, time })
}

fn aipw(data: &ObservationalDataset, e: ArrayView1<f64>, f: &OutcomeModel) -> Result<f64> {
    estimators::aipw_ate(data, e, f).map(|e| e.ate)
}

/// Runs every configured method on every SNP.
///
/// SNPs are processed in parallel on the current rayon pool; results are
/// assembled by index, so output does not depend on scheduling.
pub fn marginal_effects(gwas: &GwasDataset, config: &EffectConfig) -> Result<MarginalEffects> {
    if config.methods.is_empty() {
        return Err(Error::Parameter("no GWAS methods requested".into()));
    }
    let m = gwas.m();
    let pca = if config.methods.contains(&GwasMethod::Pca) { Some(pca_adjusted_effects(gwas, config.pca_components)?) } else { None };
    let outcomes: Vec<SnpOutcome> = (0..m).into_par_iter().map(|j| estimate_snp(gwas, j, config, pca.as_ref())).collect::<Result<_>>()?;

    let k = config.methods.len();
    let mut effects = vec![Array1::zeros(m); k];
    let mut fallbacks = vec![Vec::new(); k];
    let mut method_time = vec![Duration::ZERO; k];
    let mut ece_plain = Vec::with_capacity(m);
    let mut ece_calibrated = Vec::with_capacity(m);
    let skipped: Vec<usize> = (0..m).filter(|&j| is_monomorphic(gwas.genotypes.column(j))).collect();
    for (j, o) in outcomes.into_iter().enumerate() {
        for c in 0..k {
            effects[c][j] = o.effects[c];
            if o.failed[c] {
                fallbacks[c].push(j);
            }
            method_time[c] += o.time[c];
        }
        ece_plain.push(o.ece.0);
        ece_calibrated.push(o.ece.1);
    }
    for &j in &skipped {
        log::warn!("SNP {j} is monomorphic; reporting zero effect");
    }
    Ok(MarginalEffects { methods: config.methods.clone(), effects, ece_plain, ece_calibrated, fallbacks, skipped, method_time })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// The per-seed `seed` field is overwritten.
    pub simulation: SpatialGwasConfig,
    pub seeds: Vec<u64>,
    pub effects: EffectConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

impl SeedSummary {
    pub fn of(values: Vec<f64>) -> Self {
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        Self { stderr: (var / k).sqrt(), mean, per_seed: values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: GwasMethod,
    pub error: SeedSummary,
    pub fallbacks: usize,
    /// SNPs per second of summed per-SNP time; nondeterministic.
    pub snps_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub methods: Vec<MethodResult>,
    pub delta_ece: Option<SeedSummary>,
    pub skipped_snps: usize,
    /// Seeds whose simulation or effect pass failed, with the reason; they
    /// are left out of every summary.
    pub failed_seeds: Vec<(u64, String)>,
}

impl BenchResult {
    pub fn method(&self, m: GwasMethod) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Simulates one dataset per seed, runs every method and aggregates
/// `ε_ATE = ‖β̂ − β‖₂`.
pub fn run_gwas_benchmark(config: &BenchConfig) -> Result<BenchResult> {
    if config.seeds.len() < 2 {
        return Err(Error::Parameter(format!("need at least 2 seeds for standard errors, got {}", config.seeds.len())));
    }
    let k = config.effects.methods.len();
    let mut errors = vec![Vec::new(); k];
    let mut fallbacks = vec![0; k];
    let mut time = vec![Duration::ZERO; k];
    let mut delta = Vec::new();
    let mut skipped = 0;
    let mut snps = 0usize;
    let mut failed_seeds = Vec::new();
    for &seed in &config.seeds {
        let effects = EffectConfig { seed: rng::derive_seed(seed, 0xF01D), ..config.effects.clone() };
        let run = simulate_spatial_gwas(&SpatialGwasConfig { seed, ..config.simulation }).and_then(|g| Ok((marginal_effects(&g, &effects)?, g)));
        let (r, gwas) = match run {
            Ok(v) => v,
            Err(e) => {
                log::warn!("GWAS seed {seed} failed: {e}");
                failed_seeds.push((seed, e.to_string()));
                continue;
            }
        };
        for c in 0..k {
            errors[c].push(metrics::ate_error_l2(r.effects[c].view(), gwas.true_beta.view())?);
            fallbacks[c] += r.fallbacks[c].len();
            time[c] += r.method_time[c];
        }
        if let Some(d) = r.delta_ece() {
            delta.push(d);
        }
        skipped += r.skipped.len();
        snps += gwas.m();
    }
    let ok = config.seeds.len() - failed_seeds.len();
    if ok < 2 {
        return Err(Error::Estimation(format!("only {ok} of {} seeds succeeded; need 2 for standard errors", config.seeds.len())));
    }
    let methods = (0..k)
        .map(|c| MethodResult {
            method: config.effects.methods[c],
            error: SeedSummary::of(std::mem::take(&mut errors[c])),
            fallbacks: fallbacks[c],
            snps_per_sec: snps as f64 / time[c].as_secs_f64().max(1e-12),
        })
        .collect();
    let delta_ece = (delta.len() == ok).then(|| SeedSummary::of(delta));
    Ok(BenchResult { methods, delta_ece, skipped_snps: skipped, failed_seeds })
}
