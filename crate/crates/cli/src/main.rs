//! `calprop`: simulate observational data, fit and recalibrate propensity
//! models, estimate treatment effects and run the benchmark tables.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use calprop::bench::{self, DrugBenchConfig};
use calprop::data::{self, CsvSchema, ObservationalDataset, SplitSpec};
use calprop::estimators::{self, cross_fit_propensities, EstimatorKind, IptwForm, Propensities};
use calprop::gwas::{self, BenchConfig, EffectConfig, GwasMethod};
use calprop::metrics;
use calprop::models::{BaseModelConfig, BaseModelKind, PropensityModel};
use calprop::recalibration::{RecalibrationMethod, Recalibrator};
use calprop::simulators::{self, DrugSimConfig, DrugVariant, SpatialGwasConfig};
use calprop::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser, Serialize)]
#[command(name = "calprop", version, about = "Treatment-effect estimation with calibrated propensity scores")]
struct Cli {
    /// Directory for every output file; created if missing.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Seed for simulation, fold assignment and stochastic models.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Command {
    /// Write a simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Fit a base model, optionally recalibrated on a held-out part, and
    /// save it as JSON.
    Fit(FitArgs),
    /// Estimate the average treatment effect of a CSV dataset.
    Estimate(EstimateArgs),
    /// Plain versus recalibrated propensities on the drug simulations.
    BenchDrug(BenchDrugArgs),
    /// Per-SNP effect estimation on the spatial GWAS simulation.
    BenchGwas(BenchGwasArgs),
    /// Reliability bins and propensity histograms, plain and recalibrated.
    Reliability(ReliabilityArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SimKind {
    Drug,
    Binary,
    Gwas,
}

/// `none` or a recalibration method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Recal(Option<RecalibrationMethod>);

impl FromStr for Recal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s.eq_ignore_ascii_case("none") {
            Ok(Recal(None))
        } else {
            s.parse().map(|m| Recal(Some(m)))
        }
    }
}

impl fmt::Display for Recal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.map_or("none", RecalibrationMethod::name))
    }
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    kind: SimKind,
    /// Drug study variant (A, B, C or D); drug only.
    #[arg(long)]
    variant: Option<DrugVariant>,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    /// Number of SNPs; GWAS only.
    #[arg(long)]
    m: Option<usize>,
    /// Beta(α, α) structure concentration; GWAS only.
    #[arg(long)]
    alpha: Option<f64>,
    /// Share of causal SNPs; GWAS only.
    #[arg(long)]
    causal_frac: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct InputArgs {
    /// CSV with a header row; every column other than treatment and outcome
    /// is a covariate.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "t")]
    treatment_col: String,
    #[arg(long, default_value = "y")]
    outcome_col: String,
}

impl InputArgs {
    fn load(&self) -> calprop::Result<ObservationalDataset> {
        data::read_csv(&self.data, &CsvSchema { treatment_col: self.treatment_col.clone(), outcome_col: self.outcome_col.clone() })
    }
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "logistic")]
    base: BaseModelKind,
    #[arg(long, default_value = "isotonic")]
    recal: Recal,
    /// Share of rows held out to fit the recalibrator.
    #[arg(long, default_value_t = 0.3)]
    calibration_fraction: f64,
    #[arg(long, default_value_t = 0.01)]
    clamp_eps: f64,
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "iptw")]
    estimator: EstimatorKind,
    #[arg(long, default_value = "logistic")]
    base: BaseModelKind,
    #[arg(long, default_value = "isotonic")]
    recal: Recal,
    /// Cross-fitting folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.01)]
    clamp_eps: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_ECE_BINS)]
    ece_bins: usize,
    /// Weight-normalized IPTW instead of the unnormalized form.
    #[arg(long)]
    hajek: bool,
    /// Score rows with a saved model instead of cross-fitting.
    #[arg(long, conflicts_with_all = ["base", "recal", "folds", "clamp_eps"])]
    model: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct BenchDrugArgs {
    #[arg(long, value_delimiter = ',', default_value = "A,B,C,D")]
    variants: Vec<DrugVariant>,
    #[arg(long, value_delimiter = ',', default_value = "logistic")]
    bases: Vec<BaseModelKind>,
    #[arg(long, value_delimiter = ',', default_value = "isotonic")]
    recals: Vec<RecalibrationMethod>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value = "iptw")]
    estimator: EstimatorKind,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.01)]
    clamp_eps: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_ECE_BINS)]
    ece_bins: usize,
}

#[derive(Debug, Args, Serialize)]
struct BenchGwasArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 0.01)]
    causal_frac: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "naive,pca,iptw_plain,iptw_calib,aipw_plain,aipw_calib")]
    methods: Vec<GwasMethod>,
    #[arg(long, default_value = "logistic")]
    base: BaseModelKind,
    #[arg(long, default_value = "isotonic")]
    recal: RecalibrationMethod,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.01)]
    clamp_eps: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_ECE_BINS)]
    ece_bins: usize,
    #[arg(long, default_value_t = gwas::DEFAULT_PCA_COMPONENTS)]
    pca_components: usize,
    /// Worker threads for the per-SNP loop; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct ReliabilityArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "logistic")]
    base: BaseModelKind,
    #[arg(long, default_value = "isotonic")]
    recal: RecalibrationMethod,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.01)]
    clamp_eps: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_ECE_BINS)]
    ece_bins: usize,
    /// Score rows with a saved, recalibrated model instead of cross-fitting.
    #[arg(long, conflicts_with_all = ["base", "recal", "folds", "clamp_eps"])]
    model: Option<PathBuf>,
}

/// Saved model: base scores, optional recalibrator, covariate names.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    feature_names: Vec<String>,
    base: PropensityModel,
    recalibrator: Option<Recalibrator>,
}

impl ModelDocument {
    fn load(path: &Path) -> calprop::Result<Self> {
        let doc: ModelDocument = serde_json::from_reader(fs::File::open(path)?)?;
        if doc.feature_names.len() != doc.base.n_features() {
            return Err(Error::Input(format!("model lists {} feature names for {} inputs", doc.feature_names.len(), doc.base.n_features())));
        }
        Ok(doc)
    }

    fn score(&self, data: &ObservationalDataset) -> calprop::Result<Propensities> {
        if data.feature_names() != self.feature_names.as_slice() {
            return Err(Error::Input(format!("data covariates {:?} do not match model covariates {:?}", data.feature_names(), self.feature_names)));
        }
        let plain = self.base.predict_proba(data.covariates())?;
        let calibrated = self.recalibrator.as_ref().map(|r| r.apply_all(plain.view()));
        Ok(Propensities { plain, calibrated })
    }
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a Cli,
}

fn write_json(path: &Path, value: &impl Serialize) -> calprop::Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn write_csv_with(path: &Path, write: impl FnOnce(fs::File) -> calprop::Result<()>) -> calprop::Result<()> {
    write(fs::File::create(path)?)
}

fn require(cond: bool, message: &str) -> calprop::Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Parameter(message.into()))
    }
}

fn base_config(kind: BaseModelKind, seed: u64) -> BaseModelConfig {
    kind.default_config().reseeded(seed)
}

fn validate(cli: &Cli) -> calprop::Result<()> {
    match &cli.command {
        Command::Simulate(a) => {
            let gwas_only = a.m.is_some() || a.alpha.is_some() || a.causal_frac.is_some();
            match a.kind {
                SimKind::Drug => require(!gwas_only, "--m, --alpha and --causal-frac apply to --kind gwas only"),
                SimKind::Binary => require(!gwas_only && a.variant.is_none(), "--kind binary takes only --n"),
                SimKind::Gwas => require(a.variant.is_none(), "--variant applies to --kind drug only"),
            }
        }
        Command::Estimate(a) => {
            require(a.estimator != EstimatorKind::Naive || a.model.is_none(), "the naive estimator does not use a model")?;
            require(!a.hajek || a.estimator == EstimatorKind::Iptw, "--hajek applies to --estimator iptw only")
        }
        Command::BenchDrug(a) => require(a.seeds.len() >= 2, "bench-drug needs at least 2 seeds"),
        Command::BenchGwas(a) => {
            require(a.seeds.len() >= 2, "bench-gwas needs at least 2 seeds")?;
            require(!a.methods.is_empty(), "bench-gwas needs at least one method")?;
            require(a.threads != Some(0), "--threads must be positive")
        }
        Command::Fit(_) | Command::Reliability(_) => Ok(()),
    }
}

fn run(cli: &Cli) -> calprop::Result<()> {
    validate(cli)?;
    fs::create_dir_all(&cli.out_dir)?;
    let out = |name: &str| cli.out_dir.join(name);
    let seed = cli.seed;
    match &cli.command {
        Command::Simulate(a) => simulate(a, seed, &out)?,
        Command::Fit(a) => {
            let data = a.input.load()?;
            let split = SplitSpec::holdout(a.calibration_fraction, seed)?;
            let (train, calib) = data::split_train_calibration(&data, &split)?;
            let base = base_config(a.base, seed).fit(if a.recal.0.is_some() { &train } else { &data })?;
            let recalibrator = match a.recal.0 {
                None => None,
                Some(method) => {
                    let scores = base.predict_proba(calib.covariates())?;
                    Some(method.fit(scores.view(), calib.treatments(), a.clamp_eps)?)
                }
            };
            write_json(&out("model.json"), &ModelDocument { feature_names: data.feature_names().to_vec(), base, recalibrator })?;
        }
        Command::Estimate(a) => estimate(a, seed, &out)?,
        Command::BenchDrug(a) => {
            let config = DrugBenchConfig {
                variants: a.variants.clone(),
                bases: a.bases.iter().map(|&k| base_config(k, seed)).collect(),
                recalibrations: a.recals.clone(),
                seeds: a.seeds.clone(),
                n: a.n,
                estimator: a.estimator,
                folds: a.folds,
                clamp_eps: a.clamp_eps,
                ece_bins: a.ece_bins,
            };
            let rows = bench::bench_drug(&config)?;
            write_csv_with(&out("bench_drug.csv"), |f| bench::write_drug_bench_csv_to(&rows, f))?;
        }
        Command::BenchGwas(a) => bench_gwas(a, seed, &out)?,
        Command::Reliability(a) => {
            let data = a.input.load()?;
            estimators::check_positivity(&data)?;
            let p = match &a.model {
                Some(path) => ModelDocument::load(path)?.score(&data)?,
                None => cross_fit_propensities(&data, &base_config(a.base, seed), Some(a.recal), &SplitSpec::kfold(a.folds, seed)?, a.clamp_eps)?,
            };
            let tables = bench::reliability_tables(&p, data.treatments(), a.ece_bins)?;
            metrics::write_reliability_csv(&tables.plain, out("reliability_plain.csv"))?;
            metrics::write_reliability_csv(&tables.calibrated, out("reliability_calibrated.csv"))?;
            write_csv_with(&out("propensity_histogram.csv"), |f| bench::write_histogram_csv_to(&tables, f))?;
        }
    }
    write_json(&out("provenance.json"), &Provenance { tool: "calprop", version: env!("CARGO_PKG_VERSION"), seed, config: cli })
}

fn simulate(a: &SimulateArgs, seed: u64, out: &dyn Fn(&str) -> PathBuf) -> calprop::Result<()> {
    match a.kind {
        SimKind::Drug => {
            let variant = a.variant.ok_or_else(|| Error::Parameter("--kind drug needs --variant".into()))?;
            let sim = simulators::simulate_drug(&DrugSimConfig { variant, n: a.n, seed })?;
            data::write_csv(&sim.data, out("data.csv"))?;
            write_json(&out("truth.json"), &serde_json::json!({ "true_ate": sim.true_ate, "floored_means": sim.clamp_warnings }))
        }
        SimKind::Binary => {
            let sim = simulators::simulate_binary_confounder(a.n, seed)?;
            data::write_csv(&sim.data, out("data.csv"))?;
            write_json(&out("truth.json"), &serde_json::json!({ "true_ate": sim.true_ate }))
        }
        SimKind::Gwas => {
            let config = SpatialGwasConfig::new(a.n, a.m.unwrap_or(100), a.alpha.unwrap_or(0.1), a.causal_frac.unwrap_or(0.01), seed);
            let g = simulators::simulate_spatial_gwas(&config)?;
            let mut w = csv::Writer::from_path(out("genotypes.csv"))?;
            w.write_record((0..g.m()).map(|j| format!("snp{j}")))?;
            for row in g.genotypes.rows() {
                w.write_record(row.iter().map(|v| v.to_string()))?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_path(out("phenotypes.csv"))?;
            w.write_record(["y"])?;
            for y in &g.phenotypes {
                w.write_record([y.to_string()])?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_path(out("true_beta.csv"))?;
            w.write_record(["snp", "beta"])?;
            for (j, b) in g.true_beta.iter().enumerate() {
                w.write_record([format!("snp{j}"), b.to_string()])?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct EstimateRecord {
    ate: f64,
    estimator: EstimatorKind,
    n: usize,
    ece_before: Option<f64>,
    ece_after: Option<f64>,
    propensity_min: Option<f64>,
    propensity_max: Option<f64>,
    /// `E[Y | T=1] / E[Y | T=0]` under the same weights; diagnostic only.
    ratio: Option<f64>,
}

fn estimate(a: &EstimateArgs, seed: u64, out: &dyn Fn(&str) -> PathBuf) -> calprop::Result<()> {
    let data = a.input.load()?;
    estimators::check_positivity(&data)?;
    let record = if a.estimator == EstimatorKind::Naive {
        let e = estimators::naive_ate(&data)?;
        EstimateRecord { ate: e.ate, estimator: e.estimator, n: e.n, ece_before: None, ece_after: None, propensity_min: None, propensity_max: None, ratio: e.ratio }
    } else {
        let p = match &a.model {
            Some(path) => ModelDocument::load(path)?.score(&data)?,
            None => cross_fit_propensities(&data, &base_config(a.base, seed), a.recal.0, &SplitSpec::kfold(a.folds, seed)?, a.clamp_eps)?,
        };
        let form = if a.hajek { IptwForm::Hajek } else { IptwForm::HorvitzThompson };
        let e = estimators::estimate(&data, a.estimator, p.used(), form)?;
        let ece = |v: &Array1<f64>| metrics::ece(v.view(), data.treatments(), a.ece_bins).map(|r| r.ece);
        let summary = e.propensity.as_ref();
        EstimateRecord {
            ate: e.ate,
            estimator: e.estimator,
            n: e.n,
            ece_before: Some(ece(&p.plain)?),
            ece_after: p.calibrated.as_ref().map(ece).transpose()?,
            propensity_min: summary.map(|s| s.min),
            propensity_max: summary.map(|s| s.max),
            ratio: e.ratio,
        }
    };
    write_json(&out("estimate.json"), &record)
}

fn bench_gwas(a: &BenchGwasArgs, seed: u64, out: &dyn Fn(&str) -> PathBuf) -> calprop::Result<()> {
    let config = BenchConfig {
        simulation: SpatialGwasConfig::new(a.n, a.m, a.alpha, a.causal_frac, 0),
        seeds: a.seeds.clone(),
        effects: EffectConfig {
            methods: a.methods.clone(),
            base: base_config(a.base, seed),
            recalibration: a.recal,
            folds: a.folds,
            seed,
            clamp_eps: a.clamp_eps,
            ece_bins: a.ece_bins,
            pca_components: a.pca_components,
        },
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = a.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let result = pool.install(|| gwas::run_gwas_benchmark(&config))?;
    let wall = start.elapsed();

    let mut w = csv::Writer::from_path(out("bench_gwas.csv"))?;
    w.write_record(["method", "ate_error_mean", "ate_error_stderr", "per_seed", "fallbacks"])?;
    for m in &result.methods {
        let per_seed: Vec<String> = m.error.per_seed.iter().map(f64::to_string).collect();
        w.write_record([m.method.name().to_string(), m.error.mean.to_string(), m.error.stderr.to_string(), per_seed.join(";"), m.fallbacks.to_string()])?;
    }
    if let Some(d) = &result.delta_ece {
        let per_seed: Vec<String> = d.per_seed.iter().map(f64::to_string).collect();
        w.write_record(["delta_ece".to_string(), d.mean.to_string(), d.stderr.to_string(), per_seed.join(";"), String::new()])?;
    }
    w.flush()?;
    write_json(&out("bench_gwas.json"), &serde_json::json!({ "skipped_snps": result.skipped_snps, "failed_seeds": result.failed_seeds }))?;
    let throughput: serde_json::Map<String, serde_json::Value> = result.methods.iter().map(|m| (m.method.name().to_string(), m.snps_per_sec.into())).collect();
    write_json(&out("timing.json"), &serde_json::json!({ "wall_seconds": wall.as_secs_f64(), "snps_per_sec": throughput }))
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
