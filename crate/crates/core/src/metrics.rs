//! Calibration and accuracy metrics.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 10;

/// Bin edges with extra resolution in both tails, for propensity histograms.
pub const TAIL_EDGES: [f64; 19] = [
    0.0, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999, 0.9999, 1.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_pred: Option<f64>,
    pub mean_obs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
}

impl CalibrationReport {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Input(format!("length mismatch: {a} predictions vs {b} labels")));
    }
    Ok(())
}

fn check_labels(labels: ArrayView1<f64>) -> Result<()> {
    if let Some(i) = labels.iter().position(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Input(format!("label at position {i} is {} (must be 0 or 1)", labels[i])));
    }
    Ok(())
}

/// Compensated summation; keeps bin sums of repeated decimals exact.
#[derive(Debug, Clone, Copy, Default)]
struct NeumaierSum {
    sum: f64,
    carry: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Index of the equal-width bin holding `p`; bins are `[i/M, (i+1)/M)`
/// except the last, which is closed at 1.
pub fn bin_index(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor() as usize).min(bins - 1)
}

/// Expected calibration error over `bins` equal-width intervals.
pub fn ece(probabilities: ArrayView1<f64>, labels: ArrayView1<f64>, bins: usize) -> Result<CalibrationReport> {
    check_lengths(probabilities.len(), labels.len())?;
    check_labels(labels)?;
    if bins == 0 {
        return Err(Error::Parameter("ECE needs at least one bin".into()));
    }
    if let Some(i) = probabilities.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Input(format!("probability at position {i} is {} (must lie in [0, 1])", probabilities[i])));
    }
    let mut count = vec![0usize; bins];
    let mut pred = vec![NeumaierSum::default(); bins];
    let mut obs = vec![0.0; bins];
    for (&p, &t) in probabilities.iter().zip(labels.iter()) {
        let b = bin_index(p, bins);
        count[b] += 1;
        pred[b].add(p);
        obs[b] += t;
    }
    let pred: Vec<f64> = pred.iter().map(NeumaierSum::value).collect();
    let n = probabilities.len();
    // Σ_b |Σobs − Σpred| / n equals the count-weighted mean of per-bin gaps.
    let total_gap: f64 = (0..bins).map(|b| (obs[b] - pred[b]).abs()).sum();
    let ece = if n == 0 { 0.0 } else { total_gap / n as f64 };
    let m = bins as f64;
    let bins = (0..bins)
        .map(|b| {
            let c = count[b] as f64;
            ReliabilityBin {
                lo: b as f64 / m,
                hi: (b + 1) as f64 / m,
                count: count[b],
                mean_pred: (count[b] > 0).then(|| pred[b] / c),
                mean_obs: (count[b] > 0).then(|| obs[b] / c),
            }
        })
        .collect();
    Ok(CalibrationReport { ece, bins })
}

pub fn log_loss(probabilities: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    check_lengths(probabilities.len(), labels.len())?;
    check_labels(labels)?;
    let mut total = 0.0;
    for (i, (&p, &t)) in probabilities.iter().zip(labels.iter()).enumerate() {
        let q = if t == 1.0 { p } else { 1.0 - p };
        if !(q > 0.0 && p <= 1.0 && p >= 0.0) {
            return Err(Error::Domain(format!("row {i}: probability {p} gives infinite log-loss for label {t}")));
        }
        total -= q.ln();
    }
    Ok(total / probabilities.len() as f64)
}

pub fn brier(probabilities: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    check_lengths(probabilities.len(), labels.len())?;
    check_labels(labels)?;
    Ok(probabilities.iter().zip(labels.iter()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / probabilities.len() as f64)
}

/// Elementwise `(1 − p/q)²`.
pub fn chi_squared_loss(p_true: ArrayView1<f64>, q_model: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_lengths(p_true.len(), q_model.len())?;
    if let Some(i) = q_model.iter().position(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::Domain(format!("model probability at position {i} is {} (must lie in (0, 1))", q_model[i])));
    }
    Ok(ndarray::Zip::from(&p_true).and(&q_model).map_collect(|&p, &q| (1.0 - p / q).powi(2)))
}

pub fn ate_error(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs()
}

pub fn ate_error_l2(estimate: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape { expected: truth.len(), actual: estimate.len() });
    }
    Ok(estimate.iter().zip(truth.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// Counts of `values` in `[edges[i], edges[i+1])`, last interval closed.
pub fn histogram(values: ArrayView1<f64>, edges: &[f64]) -> Result<Vec<usize>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Parameter("histogram edges must be strictly ascending with at least two entries".into()));
    }
    let last = edges.len() - 2;
    let mut counts = vec![0; edges.len() - 1];
    for &v in values {
        if v < edges[0] || v > edges[last + 1] || v.is_nan() {
            continue;
        }
        let k = edges.partition_point(|&e| e <= v).saturating_sub(1).min(last);
        counts[k] += 1;
    }
    Ok(counts)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_reliability_csv_to<W: Write>(report: &CalibrationReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", "count", "mean_pred", "mean_obs"])?;
    for b in &report.bins {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string(), fmt_opt(b.mean_pred), fmt_opt(b.mean_obs)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reliability_csv(report: &CalibrationReport, path: impl AsRef<Path>) -> Result<()> {
    write_reliability_csv_to(report, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn golden_mixed_case() {
        let p = array![0.05, 0.15, 0.15, 0.85, 0.95, 0.95];
        let t = array![0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let r = ece(p.view(), t.view(), 10).unwrap();
        // Bin gaps times counts: 0.05, 0.7, 0.15, 0.9 over 6 rows.
        assert_eq!(r.ece, 0.3);
        assert_eq!(r.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 2, 0, 0, 0, 0, 0, 0, 1, 2]);
        assert_eq!(r.bins[2].mean_pred, None);
    }

    #[test]
    fn trivial_cases() {
        let t = array![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(ece(Array1::from_elem(10, 0.3).view(), t.view(), 10).unwrap().ece, 0.0);
        let r = ece(Array1::from_elem(4, 0.9).view(), Array1::zeros(4).view(), 10).unwrap();
        assert_eq!(r.ece, 0.9);
        assert!(ece(array![0.1].view(), array![0.0, 1.0].view(), 10).is_err());
    }

    #[test]
    fn edges_and_last_bin() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 1);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.999, 10), 9);
    }

    #[test]
    fn calibrated_stream_has_small_ece() {
        let mut r = rng::stream(5, 0);
        let n = 100_000;
        let p = Array1::from_shape_fn(n, |_| r.random::<f64>());
        let t = p.mapv(|p| f64::from(u8::from(r.random::<f64>() < p)));
        assert!(ece(p.view(), t.view(), 10).unwrap().ece < 0.01);
    }

    #[test]
    fn losses() {
        let half = Array1::from_elem(3, 0.5);
        let t = array![0.0, 1.0, 1.0];
        assert!((log_loss(half.view(), t.view()).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_loss(array![1.0 - 1e-12, 1e-12].view(), array![1.0, 0.0].view()).unwrap() < 1e-11);
        assert!(matches!(log_loss(array![1.0].view(), array![0.0].view()), Err(Error::Domain(_))));
        assert_eq!(brier(array![0.25, 1.0].view(), array![0.0, 0.0].view()).unwrap(), (0.0625 + 1.0) / 2.0);
    }

    #[test]
    fn losses_match_reimplementation() {
        let mut r = rng::stream(6, 0);
        for _ in 0..20 {
            let p: Vec<f64> = (0..50).map(|_| r.random_range(0.001..0.999)).collect();
            let t: Vec<f64> = (0..50).map(|_| f64::from(u8::from(r.random::<bool>()))).collect();
            let mut ll = 0.0;
            let mut br = 0.0;
            for k in 0..50 {
                ll += if t[k] == 1.0 { -p[k].ln() } else { -(1.0 - p[k]).ln() };
                br += (p[k] - t[k]) * (p[k] - t[k]);
            }
            let (pa, ta) = (Array1::from(p), Array1::from(t));
            assert!((log_loss(pa.view(), ta.view()).unwrap() - ll / 50.0).abs() < 1e-12);
            assert!((brier(pa.view(), ta.view()).unwrap() - br / 50.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chi_squared() {
        let l = chi_squared_loss(array![0.5, 0.3].view(), array![0.25, 0.3].view()).unwrap();
        assert_eq!(l, array![1.0, 0.0]);
        assert!(chi_squared_loss(array![0.5].view(), array![0.0].view()).is_err());
    }

    #[test]
    fn ate_errors() {
        assert_eq!(ate_error(-0.5, 1.0), 1.5);
        assert_eq!(ate_error_l2(array![3.0, 0.0].view(), array![0.0, 4.0].view()).unwrap(), 5.0);
        assert!(ate_error_l2(array![1.0].view(), array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn tail_histogram() {
        let v = array![0.0, 5e-5, 0.005, 0.5, 1.0, 0.99995];
        let c = histogram(v.view(), &TAIL_EDGES).unwrap();
        assert_eq!(c.len(), 18);
        assert_eq!((c[0], c[2], c[9], c[17]), (2, 1, 1, 2));
        assert_eq!(c.iter().sum::<usize>(), 6);
    }

    #[test]
    fn reliability_csv() {
        let r = ece(array![0.05, 0.95].view(), array![0.0, 1.0].view(), 2).unwrap();
        let mut buf = Vec::new();
        write_reliability_csv_to(&r, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "bin_lo,bin_hi,count,mean_pred,mean_obs\n0,0.5,1,0.05,0\n0.5,1,1,0.95,1\n");
    }

    fn prob_label_pairs() -> impl Strategy<Value = Vec<(f64, bool)>> {
        prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..60)
    }

    proptest! {
        #[test]
        fn ece_is_bounded_and_permutation_invariant(pairs in prob_label_pairs(), seed in any::<u64>(), m in 1usize..20) {
            let p: Array1<f64> = pairs.iter().map(|x| x.0).collect();
            let t: Array1<f64> = pairs.iter().map(|x| f64::from(u8::from(x.1))).collect();
            let a = ece(p.view(), t.view(), m).unwrap();
            prop_assert!((0.0..=1.0).contains(&a.ece));
            prop_assert_eq!(a.bins.iter().map(|b| b.count).sum::<usize>(), p.len());
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.shuffle(&mut rng::stream(seed, 0));
            let b = ece(p.select(ndarray::Axis(0), &order).view(), t.select(ndarray::Axis(0), &order).view(), m).unwrap();
            prop_assert!((a.ece - b.ece).abs() < 1e-12);
            // Weighted mean of per-bin gaps.
            let weighted: f64 = a.bins.iter().filter(|b| b.count > 0)
                .map(|b| b.count as f64 * (b.mean_obs.unwrap() - b.mean_pred.unwrap()).abs()).sum::<f64>() / p.len() as f64;
            prop_assert!((weighted - a.ece).abs() < 1e-12);
        }

        #[test]
        fn mean_predictor_beats_half(labels in prop::collection::vec(any::<bool>(), 1..80)) {
            let t: Array1<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
            let mean = t.mean().unwrap();
            prop_assume!(mean != 0.5);
            let bm = brier(Array1::from_elem(t.len(), mean).view(), t.view()).unwrap();
            let bh = brier(Array1::from_elem(t.len(), 0.5).view(), t.view()).unwrap();
            prop_assert!(bm <= bh);
        }
    }
}
