//! Plain-versus-recalibrated comparisons on the drug and binary-confounder
//! simulations, plus the reliability and histogram tables behind them.

use std::io::Write;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationalDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::estimators::{cross_fit_propensities, estimate, EstimatorKind, IptwForm, Propensities};
use crate::gwas::SeedSummary;
use crate::metrics::{self, CalibrationReport};
use crate::models::BaseModelConfig;
use crate::recalibration::RecalibrationMethod;
use crate::rng;
use crate::simulators::{simulate_binary_confounder, simulate_drug, DrugSimConfig, DrugVariant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub base: BaseModelConfig,
    pub recalibration: RecalibrationMethod,
    pub estimator: EstimatorKind,
    pub folds: usize,
    pub clamp_eps: f64,
    pub ece_bins: usize,
}

impl CompareConfig {
    /// Ten-fold cross-fitting, IPTW, ε = 0.01, ten ECE bins.
    pub fn new(base: BaseModelConfig, recalibration: RecalibrationMethod) -> Self {
        Self { base, recalibration, estimator: EstimatorKind::Iptw, folds: 10, clamp_eps: 0.01, ece_bins: metrics::DEFAULT_ECE_BINS }
    }
}

/// One arm of a comparison on one dataset. `ate` is `None` when the
/// estimator rejected the propensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub ate: Option<f64>,
    pub ate_error: Option<f64>,
    pub ece: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub plain: ArmResult,
    pub calibrated: ArmResult,
}

/// Cross-fits propensities once and scores both arms on them.
pub fn compare_plain_calibrated(data: &ObservationalDataset, true_ate: f64, config: &CompareConfig, split_seed: u64) -> Result<(Comparison, Propensities)> {
    let split = SplitSpec::kfold(config.folds, split_seed)?;
    let p = cross_fit_propensities(data, &config.base, Some(config.recalibration), &split, config.clamp_eps)?;
    let arm = |scores: ArrayView1<f64>| -> Result<ArmResult> {
        let ece = metrics::ece(scores, data.treatments(), config.ece_bins)?.ece;
        Ok(match estimate(data, config.estimator, scores, IptwForm::HorvitzThompson) {
            Ok(e) => ArmResult { ate: Some(e.ate), ate_error: Some(metrics::ate_error(e.ate, true_ate)), ece, failure: None },
            Err(e) => ArmResult { ate: None, ate_error: None, ece, failure: Some(e.to_string()) },
        })
    };
    let plain = arm(p.plain.view())?;
    let calibrated = arm(p.calibrated.as_ref().expect("recalibration requested").view())?;
    Ok((Comparison { plain, calibrated }, p))
}

/// Per-seed comparisons aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<std::result::Result<Comparison, String>>,
}

/// Summary of one arm across the seeds where it produced a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub ate_error: Option<SeedSummary>,
    pub ece: Option<SeedSummary>,
    pub failures: usize,
}

impl CellResult {
    fn arm(&self, pick: impl Fn(&Comparison) -> &ArmResult) -> ArmSummary {
        let ok: Vec<&ArmResult> = self.per_seed.iter().filter_map(|r| r.as_ref().ok()).map(&pick).collect();
        let errors: Vec<f64> = ok.iter().filter_map(|a| a.ate_error).collect();
        let eces: Vec<f64> = ok.iter().map(|a| a.ece).collect();
        let summarize = |v: Vec<f64>| (v.len() >= 2).then(|| SeedSummary::of(v));
        ArmSummary { failures: self.per_seed.len() - errors.len(), ate_error: summarize(errors), ece: summarize(eces) }
    }

    pub fn plain(&self) -> ArmSummary {
        self.arm(|c| &c.plain)
    }

    pub fn calibrated(&self) -> ArmSummary {
        self.arm(|c| &c.calibrated)
    }

    /// Seeds where both arms produced an estimate and the recalibrated one
    /// was strictly closer to the truth.
    pub fn calibrated_wins(&self) -> usize {
        self.per_seed
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .filter(|c| matches!((c.plain.ate_error, c.calibrated.ate_error), (Some(p), Some(q)) if q < p))
            .count()
    }

    /// Seeds where the recalibrated ECE is strictly below the plain one.
    pub fn ece_wins(&self) -> usize {
        self.per_seed.iter().filter_map(|r| r.as_ref().ok()).filter(|c| c.calibrated.ece < c.plain.ece).count()
    }
}

fn run_cell(seeds: &[u64], mut one: impl FnMut(u64) -> Result<Comparison>) -> CellResult {
    let per_seed = seeds
        .iter()
        .map(|&s| {
            one(s).map_err(|e| {
                log::warn!("seed {s} failed: {e}");
                e.to_string()
            })
        })
        .collect();
    CellResult { seeds: seeds.to_vec(), per_seed }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.len() < 2 {
        return Err(Error::Parameter(format!("need at least 2 seeds, got {}", seeds.len())));
    }
    Ok(())
}

/// Split seed for a data seed; kept apart from the simulator's streams.
fn split_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, 0x5EED)
}

pub fn drug_cell(variant: DrugVariant, n: usize, seeds: &[u64], config: &CompareConfig) -> Result<CellResult> {
    check_seeds(seeds)?;
    Ok(run_cell(seeds, |seed| {
        let sim = simulate_drug(&DrugSimConfig { variant, n, seed })?;
        Ok(compare_plain_calibrated(&sim.data, sim.true_ate, config, split_seed(seed))?.0)
    }))
}

pub fn binary_cell(n: usize, seeds: &[u64], config: &CompareConfig) -> Result<CellResult> {
    check_seeds(seeds)?;
    Ok(run_cell(seeds, |seed| {
        let sim = simulate_binary_confounder(n, seed)?;
        Ok(compare_plain_calibrated(&sim.data, sim.true_ate, config, split_seed(seed))?.0)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugBenchConfig {
    pub variants: Vec<DrugVariant>,
    pub bases: Vec<BaseModelConfig>,
    pub recalibrations: Vec<RecalibrationMethod>,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub estimator: EstimatorKind,
    pub folds: usize,
    pub clamp_eps: f64,
    pub ece_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugBenchRow {
    pub variant: DrugVariant,
    pub base: BaseModelConfig,
    pub recalibration: RecalibrationMethod,
    pub cell: CellResult,
}

/// Every (variant, base, recalibrator) cell over the seed list.
pub fn bench_drug(config: &DrugBenchConfig) -> Result<Vec<DrugBenchRow>> {
    check_seeds(&config.seeds)?;
    if config.variants.is_empty() || config.bases.is_empty() || config.recalibrations.is_empty() {
        return Err(Error::Parameter("variants, base models and recalibrators must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &variant in &config.variants {
        for &base in &config.bases {
            for &recalibration in &config.recalibrations {
                let cmp = CompareConfig { base, recalibration, estimator: config.estimator, folds: config.folds, clamp_eps: config.clamp_eps, ece_bins: config.ece_bins };
                rows.push(DrugBenchRow { variant, base, recalibration, cell: drug_cell(variant, config.n, &config.seeds, &cmp)? });
            }
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Header of the comparison table. Empty cells mark arms with fewer than
/// two successful seeds.
pub const COMPARISON_HEADER: [&str; 14] = [
    "variant",
    "base",
    "recalibration",
    "plain_ate_error_mean",
    "plain_ate_error_stderr",
    "plain_ece_mean",
    "plain_ece_stderr",
    "calibrated_ate_error_mean",
    "calibrated_ate_error_stderr",
    "calibrated_ece_mean",
    "calibrated_ece_stderr",
    "plain_failures",
    "calibrated_failures",
    "calibrated_wins",
];

pub fn comparison_record(label: &str, base: &str, recalibration: &str, cell: &CellResult) -> Vec<String> {
    let (p, c) = (cell.plain(), cell.calibrated());
    let mean = |s: &Option<SeedSummary>| fmt_opt(s.as_ref().map(|s| s.mean));
    let se = |s: &Option<SeedSummary>| fmt_opt(s.as_ref().map(|s| s.stderr));
    vec![
        label.to_string(),
        base.to_string(),
        recalibration.to_string(),
        mean(&p.ate_error),
        se(&p.ate_error),
        mean(&p.ece),
        se(&p.ece),
        mean(&c.ate_error),
        se(&c.ate_error),
        mean(&c.ece),
        se(&c.ece),
        p.failures.to_string(),
        c.failures.to_string(),
        cell.calibrated_wins().to_string(),
    ]
}

pub fn write_drug_bench_csv_to<W: Write>(rows: &[DrugBenchRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COMPARISON_HEADER)?;
    for r in rows {
        w.write_record(comparison_record(&r.variant.to_string(), r.base.kind().name(), r.recalibration.name(), &r.cell))?;
    }
    w.flush()?;
    Ok(())
}

/// Held-out log-loss of a base model and of its recalibrated composite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoRegret {
    pub plain: f64,
    pub calibrated: f64,
}

/// Trains on `n_train` rows, recalibrates on `n_calibration` fresh rows and
/// scores `n_test` further rows, all from one drug simulation.
pub fn drug_no_regret(
    variant: DrugVariant,
    sizes: [usize; 3],
    seed: u64,
    base: &BaseModelConfig,
    method: RecalibrationMethod,
    clamp_eps: f64,
) -> Result<NoRegret> {
    let [n_train, n_calib, n_test] = sizes;
    let sim = simulate_drug(&DrugSimConfig { variant, n: n_train + n_calib + n_test, seed })?;
    let rows = |a: usize, b: usize| sim.data.select_rows(&(a..b).collect::<Vec<_>>());
    let (train, calib, test) = (rows(0, n_train), rows(n_train, n_train + n_calib), rows(n_train + n_calib, sim.data.n()));
    let model = crate::recalibration::recalibration_step(base.fit(&train)?, &calib, method, clamp_eps)?;
    let plain = model.base.predict_proba(test.covariates())?;
    let calibrated = model.predict_proba(test.covariates())?;
    Ok(NoRegret { plain: metrics::log_loss(plain.view(), test.treatments())?, calibrated: metrics::log_loss(calibrated.view(), test.treatments())? })
}

/// Reliability reports and tail histograms for both arms.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityTables {
    pub plain: CalibrationReport,
    pub calibrated: CalibrationReport,
    pub edges: Vec<f64>,
    pub plain_histogram: Vec<usize>,
    pub calibrated_histogram: Vec<usize>,
}

pub fn reliability_tables(propensities: &Propensities, treatments: ArrayView1<f64>, bins: usize) -> Result<ReliabilityTables> {
    let calibrated: &Array1<f64> =
        propensities.calibrated.as_ref().ok_or_else(|| Error::Parameter("reliability tables need recalibrated propensities".into()))?;
    let edges = metrics::TAIL_EDGES.to_vec();
    Ok(ReliabilityTables {
        plain: metrics::ece(propensities.plain.view(), treatments, bins)?,
        calibrated: metrics::ece(calibrated.view(), treatments, bins)?,
        plain_histogram: metrics::histogram(propensities.plain.view(), &edges)?,
        calibrated_histogram: metrics::histogram(calibrated.view(), &edges)?,
        edges,
    })
}

/// `bin_lo,bin_hi,plain,calibrated` counts.
pub fn write_histogram_csv_to<W: Write>(tables: &ReliabilityTables, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", "plain", "calibrated"])?;
    for (k, pair) in tables.edges.windows(2).enumerate() {
        w.write_record([pair[0].to_string(), pair[1].to_string(), tables.plain_histogram[k].to_string(), tables.calibrated_histogram[k].to_string()])?;
    }
    w.flush()?;
    Ok(())
}
