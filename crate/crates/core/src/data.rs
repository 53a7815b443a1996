//! Observational datasets, reproducible splits and CSV persistence.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Rows of `(covariates, treatment, outcome)`.
///
/// Treatments are stored as `0.0`/`1.0` so they can enter arithmetic
/// directly; the constructor rejects anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    covariates: Array2<f64>,
    treatments: Array1<f64>,
    outcomes: Array1<f64>,
    feature_names: Vec<String>,
}

impl ObservationalDataset {
    pub fn new(covariates: Array2<f64>, treatments: Array1<f64>, outcomes: Array1<f64>) -> Result<Self> {
        let names = (1..=covariates.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(covariates, treatments, outcomes, names)
    }

    pub fn with_names(
        covariates: Array2<f64>,
        treatments: Array1<f64>,
        outcomes: Array1<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if n == 0 {
            return Err(Error::Input("dataset has no rows".into()));
        }
        if treatments.len() != n {
            return Err(Error::Shape { expected: n, actual: treatments.len() });
        }
        if outcomes.len() != n {
            return Err(Error::Shape { expected: n, actual: outcomes.len() });
        }
        if feature_names.len() != covariates.ncols() {
            return Err(Error::Shape { expected: covariates.ncols(), actual: feature_names.len() });
        }
        if let Some(i) = treatments.iter().position(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::Input(format!("treatment at row {i} is {} (must be 0 or 1)", treatments[i])));
        }
        if let Some((idx, _)) = covariates.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite covariate at row {}, column {}", idx.0, idx.1)));
        }
        Ok(Self { covariates, treatments, outcomes, feature_names })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }

    pub fn treatments(&self) -> ArrayView1<'_, f64> {
        self.treatments.view()
    }

    pub fn outcomes(&self) -> ArrayView1<'_, f64> {
        self.outcomes.view()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn treated_count(&self) -> usize {
        self.treatments.iter().filter(|&&t| t == 1.0).count()
    }

    /// New dataset holding `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            covariates: self.covariates.select(Axis(0), rows),
            treatments: self.treatments.select(Axis(0), rows),
            outcomes: self.outcomes.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// How to carve a calibration set out of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Single split with `floor(fraction · n)` calibration rows.
    Holdout { calibration_fraction: f64, seed: u64 },
    /// `folds`-way cross-fitting.
    KFold { folds: usize, seed: u64 },
}

impl SplitSpec {
    pub fn holdout(calibration_fraction: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec::Holdout { calibration_fraction, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kfold(folds: usize, seed: u64) -> Result<Self> {
        let spec = SplitSpec::KFold { folds, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitSpec::Holdout { calibration_fraction, .. } => {
                if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
                    return Err(Error::Parameter(format!(
                        "calibration fraction must lie strictly between 0 and 1, got {calibration_fraction}"
                    )));
                }
            }
            SplitSpec::KFold { folds, .. } => {
                if folds < 2 {
                    return Err(Error::Parameter(format!("need at least 2 folds, got {folds}")));
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        match *self {
            SplitSpec::Holdout { seed, .. } | SplitSpec::KFold { seed, .. } => seed,
        }
    }
}

/// Disjoint index sets, each in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, 0x5_1117));
    idx
}

/// Calibration size `floor(fraction · n)`, clamped to `[1, n − 1]`.
pub fn calibration_size(n: usize, fraction: f64) -> Result<usize> {
    if n < 2 {
        return Err(Error::Sizing { n, reason: "need at least 2 rows for a train/calibration split".into() });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("calibration fraction must lie in (0, 1), got {fraction}")));
    }
    let raw = (fraction * n as f64).floor() as usize;
    Ok(raw.clamp(1, n - 1))
}

pub fn holdout_indices(n: usize, fraction: f64, seed: u64) -> Result<Split> {
    let c = calibration_size(n, fraction)?;
    let perm = shuffled(n, seed);
    let mut calibration = perm[..c].to_vec();
    let mut train = perm[c..].to_vec();
    calibration.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, calibration })
}

/// Splits `data` into `(train, calibration)` parts.
pub fn split_train_calibration(
    data: &ObservationalDataset,
    spec: &SplitSpec,
) -> Result<(ObservationalDataset, ObservationalDataset)> {
    match *spec {
        SplitSpec::Holdout { calibration_fraction, seed } => {
            let split = holdout_indices(data.n(), calibration_fraction, seed)?;
            Ok((data.select_rows(&split.train), data.select_rows(&split.calibration)))
        }
        SplitSpec::KFold { .. } => Err(Error::Parameter(
            "k-fold specs produce several splits; use kfold_indices".into(),
        )),
    }
}

/// `k` folds whose calibration sets partition `0..n`, sizes differing by at
/// most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 || k > n {
        return Err(Error::Parameter(format!("fold count must satisfy 2 <= k <= n, got k={k}, n={n}")));
    }
    let perm = shuffled(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut calibration = perm[start..start + size].to_vec();
        calibration.sort_unstable();
        start += size;
        folds.push(calibration);
    }
    let mut fold_of = vec![0usize; n];
    for (f, members) in folds.iter().enumerate() {
        for &i in members {
            fold_of[i] = f;
        }
    }
    Ok(folds
        .into_iter()
        .enumerate()
        .map(|(f, calibration)| Split { train: (0..n).filter(|&i| fold_of[i] != f).collect(), calibration })
        .collect())
}

/// Column roles for CSV input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub treatment_col: String,
    pub outcome_col: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { treatment_col: "t".into(), outcome_col: "y".into() }
    }
}

pub fn read_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ObservationalDataset> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file, schema)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<ObservationalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse { row: 0, message: "missing header row".into() });
    }
    if header.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(Error::Parse { row: 0, message: "missing header row (first line is numeric)".into() });
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { row: 0, message: format!("header has no column named {name:?}") })
    };
    let t_col = find(&schema.treatment_col)?;
    let y_col = find(&schema.outcome_col)?;
    if t_col == y_col {
        return Err(Error::Parameter("treatment and outcome columns must differ".into()));
    }
    let x_cols: Vec<usize> = (0..header.len()).filter(|&c| c != t_col && c != y_col).collect();
    let names = x_cols.iter().map(|&c| header[c].clone()).collect();

    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let num = |c: usize| -> Result<f64> {
            record[c].parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("column {:?}: {:?} is not a number", header[c], &record[c]),
            })
        };
        let t = num(t_col)?;
        if t != 0.0 && t != 1.0 {
            return Err(Error::Parse { row, message: format!("treatment must be 0 or 1, found {}", &record[t_col]) });
        }
        ts.push(t);
        ys.push(num(y_col)?);
        for &c in &x_cols {
            let v = num(c)?;
            if !v.is_finite() {
                return Err(Error::Parse { row, message: format!("column {:?} is not finite", header[c]) });
            }
            xs.push(v);
        }
    }
    let n = ts.len();
    if n == 0 {
        return Err(Error::Parse { row: 1, message: "no data rows".into() });
    }
    let covariates = Array2::from_shape_vec((n, x_cols.len()), xs).expect("row-major buffer matches shape");
    ObservationalDataset::with_names(covariates, Array1::from(ts), Array1::from(ys), names)
}

pub fn write_csv(data: &ObservationalDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(data, file)
}

/// Writes covariates, then `t`, then `y`. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_csv_to<W: std::io::Write>(data: &ObservationalDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.extend(["t", "y"]);
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.covariates.row(i).iter().map(|v| format!("{v}")).collect();
        rec.push(if data.treatments[i] == 1.0 { "1".into() } else { "0".into() });
        rec.push(format!("{}", data.outcomes[i]));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(n: usize) -> ObservationalDataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let t = Array1::from_shape_fn(n, |i| (i % 2) as f64);
        let y = Array1::from_shape_fn(n, |i| i as f64 * 0.5);
        ObservationalDataset::new(x, t, y).unwrap()
    }

    #[test]
    fn rejects_bad_treatment_and_nan() {
        let x = array![[1.0], [2.0]];
        assert!(ObservationalDataset::new(x.clone(), array![0.0, 2.0], array![1.0, 1.0]).is_err());
        assert!(ObservationalDataset::new(array![[f64::NAN], [1.0]], array![0.0, 1.0], array![1.0, 1.0]).is_err());
        assert!(ObservationalDataset::new(x, array![0.0], array![1.0, 1.0]).is_err());
    }

    #[test]
    fn holdout_half_split_is_disjoint() {
        let d = toy(10);
        let (train, calib) = split_train_calibration(&d, &SplitSpec::holdout(0.5, 7).unwrap()).unwrap();
        assert_eq!((train.n(), calib.n()), (5, 5));
        let s = holdout_indices(10, 0.5, 7).unwrap();
        assert!(s.train.iter().all(|i| !s.calibration.contains(i)));
        assert_eq!(s, holdout_indices(10, 0.5, 7).unwrap());
    }

    #[test]
    fn smallest_split() {
        let s = holdout_indices(2, 0.5, 1).unwrap();
        assert_eq!((s.train.len(), s.calibration.len()), (1, 1));
    }

    #[test]
    fn fraction_rounding_enumeration() {
        assert_eq!(calibration_size(10, 0.95).unwrap(), 9);
        let grid: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
        for n in 0..=10usize {
            for &f in &grid {
                match holdout_indices(n, f, 3) {
                    Ok(s) => {
                        assert!(n >= 2);
                        assert!(!s.train.is_empty() && !s.calibration.is_empty());
                        assert_eq!(s.train.len() + s.calibration.len(), n);
                    }
                    Err(e) => {
                        assert!(n < 2, "n={n} f={f}: {e}");
                        assert!(matches!(e, Error::Sizing { .. }));
                    }
                }
            }
        }
    }

    #[test]
    fn kfold_structure() {
        let loo = kfold_indices(10, 10, 1).unwrap();
        assert!(loo.iter().all(|s| s.calibration.len() == 1 && s.train.len() == 9));
        let mut sizes: Vec<usize> = kfold_indices(10, 3, 1).unwrap().iter().map(|s| s.calibration.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert_eq!(kfold_indices(7, 2, 42).unwrap(), kfold_indices(7, 2, 42).unwrap());
        assert!(kfold_indices(3, 4, 0).is_err());
        assert!(kfold_indices(3, 1, 0).is_err());
    }

    #[test]
    fn kfold_partition() {
        for (n, k) in [(10, 3), (17, 5), (100, 10)] {
            let folds = kfold_indices(n, k, 9).unwrap();
            let mut seen = vec![0; n];
            for s in &folds {
                for &i in &s.calibration {
                    seen[i] += 1;
                }
                assert_eq!(s.train.len() + s.calibration.len(), n);
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn csv_parses_three_rows() {
        let text = "x1,x2,t,y\n1,2,0,3.5\n4,5,1,6\n7,8,1,-1\n";
        let d = read_csv_from(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!((d.n(), d.d()), (3, 2));
        assert_eq!(d.treatments().to_vec(), vec![0.0, 1.0, 1.0]);
        assert_eq!(d.outcomes()[2], -1.0);
        assert_eq!(d.covariates()[[1, 1]], 5.0);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let bad_t = "x1,t,y\n1,0,1\n2,2,1\n";
        match read_csv_from(bad_t.as_bytes(), &CsvSchema::default()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        let ragged = "x1,t,y\n1,0,1\n2,1\n";
        assert!(matches!(read_csv_from(ragged.as_bytes(), &CsvSchema::default()), Err(Error::Parse { row: 2, .. })));
        let headerless = "1,0,1\n2,1,1\n";
        assert!(matches!(read_csv_from(headerless.as_bytes(), &CsvSchema::default()), Err(Error::Parse { row: 0, .. })));
    }

    #[test]
    fn csv_custom_columns() {
        let text = "treated,a,out\n1,0.5,2\n0,0.25,3\n";
        let schema = CsvSchema { treatment_col: "treated".into(), outcome_col: "out".into() };
        let d = read_csv_from(text.as_bytes(), &schema).unwrap();
        assert_eq!(d.feature_names(), &["a".to_string()]);
        assert_eq!(d.treated_count(), 1);
    }
}
