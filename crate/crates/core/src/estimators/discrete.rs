//! Finite worlds where every population quantity is an exact sum.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-9;

fn check_q(q: &[f64], support: usize) -> Result<()> {
    if q.len() != support {
        return Err(Error::Shape { expected: support, actual: q.len() });
    }
    if let Some(i) = q.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Domain(format!("model probability at support point {i} is {} (must lie in (0, 1))", q[i])));
    }
    Ok(())
}

/// Joint law of `(X, T)` on a finite support plus outcome means per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteWorld {
    p_x: Vec<f64>,
    propensity: Vec<f64>,
    mean_treated: Vec<f64>,
    mean_control: Vec<f64>,
}

impl DiscreteWorld {
    pub fn new(p_x: Vec<f64>, propensity: Vec<f64>, mean_treated: Vec<f64>, mean_control: Vec<f64>) -> Result<Self> {
        let k = p_x.len();
        if k == 0 {
            return Err(Error::Input("a discrete world needs at least one support point".into()));
        }
        for v in [&propensity, &mean_treated, &mean_control] {
            if v.len() != k {
                return Err(Error::Shape { expected: k, actual: v.len() });
            }
        }
        if p_x.iter().any(|&p| !(p >= 0.0)) || (p_x.iter().sum::<f64>() - 1.0).abs() > MASS_TOL {
            return Err(Error::Input("P(X) must be non-negative and sum to 1".into()));
        }
        if propensity.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input("P(T=1|X) must lie in [0, 1]".into()));
        }
        if mean_treated.iter().chain(&mean_control).any(|m| !m.is_finite()) {
            return Err(Error::Input("outcome means must be finite".into()));
        }
        Ok(Self { p_x, propensity, mean_treated, mean_control })
    }

    pub fn support_size(&self) -> usize {
        self.p_x.len()
    }

    pub fn p_x(&self) -> &[f64] {
        &self.p_x
    }

    pub fn propensity(&self) -> &[f64] {
        &self.propensity
    }

    pub fn mean_treated(&self) -> &[f64] {
        &self.mean_treated
    }

    pub fn mean_control(&self) -> &[f64] {
        &self.mean_control
    }

    /// `Σₓ P(x)·(E[Y|x,1] − E[Y|x,0])`.
    pub fn exact_ate(&self) -> f64 {
        (0..self.support_size()).map(|x| self.p_x[x] * (self.mean_treated[x] - self.mean_control[x])).sum()
    }

    /// Infinite-sample limit of Horvitz–Thompson IPTW weighted by `q`.
    pub fn exact_iptw_limit(&self, q: &[f64]) -> Result<f64> {
        check_q(q, self.support_size())?;
        Ok((0..self.support_size())
            .map(|x| {
                let p = self.propensity[x];
                self.p_x[x] * (p * self.mean_treated[x] / q[x] - (1.0 - p) * self.mean_control[x] / (1.0 - q[x]))
            })
            .sum())
    }

    /// Infinite-sample limit of AIPW with propensities `q` and outcome
    /// predictions `f1`, `f0` per support point.
    pub fn exact_aipw_limit(&self, q: &[f64], f1: &[f64], f0: &[f64]) -> Result<f64> {
        check_q(q, self.support_size())?;
        if f1.len() != self.support_size() || f0.len() != self.support_size() {
            return Err(Error::Shape { expected: self.support_size(), actual: f1.len().min(f0.len()) });
        }
        Ok((0..self.support_size())
            .map(|x| {
                let p = self.propensity[x];
                let treated = f1[x] + p * (self.mean_treated[x] - f1[x]) / q[x];
                let control = f0[x] + (1.0 - p) * (self.mean_control[x] - f0[x]) / (1.0 - q[x]);
                self.p_x[x] * (treated - control)
            })
            .sum())
    }

    /// Population difference of group means; `None` if an arm has no mass.
    pub fn exact_naive(&self) -> Option<f64> {
        let (mut a1, mut w1, mut a0, mut w0) = (0.0, 0.0, 0.0, 0.0);
        for x in 0..self.support_size() {
            let (px, p) = (self.p_x[x], self.propensity[x]);
            a1 += px * p * self.mean_treated[x];
            w1 += px * p;
            a0 += px * (1.0 - p) * self.mean_control[x];
            w0 += px * (1.0 - p);
        }
        (w1 > 0.0 && w0 > 0.0).then(|| a1 / w1 - a0 / w0)
    }

    /// Groups support points by equal `scores`: `(score, P(X ∈ B), P(T=1 | X ∈ B), members)`
    /// in ascending score order.
    pub fn buckets(&self, scores: &[f64]) -> Result<Vec<Bucket>> {
        if scores.len() != self.support_size() {
            return Err(Error::Shape { expected: self.support_size(), actual: scores.len() });
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut out: Vec<Bucket> = Vec::new();
        for x in order {
            match out.last_mut() {
                Some(b) if b.score == scores[x] => b.members.push(x),
                _ => out.push(Bucket { score: scores[x], mass: 0.0, treated_rate: 0.0, members: vec![x] }),
            }
        }
        for b in &mut out {
            b.mass = b.members.iter().map(|&x| self.p_x[x]).sum();
            let treated: f64 = b.members.iter().map(|&x| self.p_x[x] * self.propensity[x]).sum();
            b.treated_rate = if b.mass > 0.0 { treated / b.mass } else { b.score };
        }
        Ok(out)
    }

    /// Population recalibration `q(x) = P(T=1 | score = score(x))`.
    pub fn population_recalibration(&self, scores: &[f64]) -> Result<Vec<f64>> {
        let mut q = vec![0.0; self.support_size()];
        for b in self.buckets(scores)? {
            for &x in &b.members {
                q[x] = b.treated_rate;
            }
        }
        Ok(q)
    }

    /// Whether `q` is calibrated: within every bucket of equal `q`, the
    /// treated rate equals the bucket's value.
    pub fn is_calibrated(&self, q: &[f64], tol: f64) -> Result<bool> {
        Ok(self.buckets(q)?.iter().all(|b| b.mass == 0.0 || (b.treated_rate - b.score).abs() <= tol))
    }

    /// For a miscalibrated `q`, a world with the same `(X, T)` law and
    /// outcome `Y = T·1[X ∈ B_{q'}]` on the worst-calibrated bucket `B_{q'}`.
    pub fn necessity_witness(&self, q: &[f64], tol: f64) -> Result<Option<NecessityWitness>> {
        check_q(q, self.support_size())?;
        let worst = self
            .buckets(q)?
            .into_iter()
            .filter(|b| b.mass > 0.0)
            .max_by(|a, b| (a.treated_rate - a.score).abs().total_cmp(&(b.treated_rate - b.score).abs()));
        let Some(bucket) = worst.filter(|b| (b.treated_rate - b.score).abs() > tol) else {
            return Ok(None);
        };
        let mut mean_treated = vec![0.0; self.support_size()];
        for &x in &bucket.members {
            mean_treated[x] = 1.0;
        }
        let world = DiscreteWorld::new(self.p_x.clone(), self.propensity.clone(), mean_treated, vec![0.0; self.support_size()])?;
        Ok(Some(NecessityWitness {
            world,
            // IPTW limit over the bucket: P(T=1|B)·P(B)/q'; truth: P(B).
            predicted_limit: bucket.treated_rate * bucket.mass / bucket.score,
            predicted_ate: bucket.mass,
            bucket,
        }))
    }

    /// Draws `n` rows; the single covariate is the support index and the
    /// outcome is the arm mean (noise-free).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(ObservationalDataset, Vec<usize>)> {
        let cdf: Vec<f64> = self
            .p_x
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let mut index = Vec::with_capacity(n);
        let mut x = Array2::zeros((n, 1));
        let mut t = Array1::zeros(n);
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let treated = rng.random::<f64>() < self.propensity[k];
            index.push(k);
            x[[i, 0]] = k as f64;
            t[i] = f64::from(u8::from(treated));
            y[i] = if treated { self.mean_treated[k] } else { self.mean_control[k] };
        }
        Ok((ObservationalDataset::new(x, t, y)?, index))
    }

    /// Random world with `support` points, propensities drawn from
    /// `levels` distinct values in `[0.05, 0.95]` (so level sets can hold
    /// several points) and outcome means in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, support: usize, levels: usize) -> Self {
        assert!(support >= 1 && levels >= 1);
        let raw: Vec<f64> = (0..support).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let level_values: Vec<f64> = (0..levels).map(|_| rng.random_range(0.05..0.95)).collect();
        Self {
            p_x: raw.iter().map(|r| r / total).collect(),
            propensity: (0..support).map(|_| level_values[rng.random_range(0..levels)]).collect(),
            mean_treated: (0..support).map(|_| rng.random_range(-1.0..1.0)).collect(),
            mean_control: (0..support).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub score: f64,
    pub mass: f64,
    pub treated_rate: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NecessityWitness {
    pub world: DiscreteWorld,
    pub bucket: Bucket,
    pub predicted_limit: f64,
    pub predicted_ate: f64,
}

/// Scores that respect the level sets of `P(T=1|X)`: points with distinct
/// propensities get distinct scores; a level set may be split further.
pub fn separable_scores<R: Rng + ?Sized>(world: &DiscreteWorld, rng: &mut R) -> Vec<f64> {
    let mut levels: Vec<f64> = world.propensity().to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    // Disjoint score ranges per level keep levels apart.
    let width = 1.0 / levels.len() as f64;
    world
        .propensity()
        .iter()
        .map(|p| {
            let rank = levels.partition_point(|l| l < p) as f64;
            let sub = f64::from(rng.random_range(0..2u8));
            width * (rank + 0.25 + 0.5 * sub)
        })
        .collect()
}

/// Random model probabilities in `[0.02, 0.98]` taking at most `levels`
/// distinct values.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, support: usize, levels: usize) -> Vec<f64> {
    let values: Vec<f64> = (0..levels).map(|_| rng.random_range(0.02..0.98)).collect();
    (0..support).map(|_| values[rng.random_range(0..levels)]).collect()
}

/// A discrete world with a full outcome law `P(y | x, t)` on a finite
/// outcome alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteOutcomeWorld {
    p_x: Vec<f64>,
    propensity: Vec<f64>,
    values: Vec<f64>,
    /// `law[t][x][k] = P(Y = values[k] | X = x, T = t)`.
    law: [Vec<Vec<f64>>; 2],
}

impl DiscreteOutcomeWorld {
    pub fn new(p_x: Vec<f64>, propensity: Vec<f64>, values: Vec<f64>, law: [Vec<Vec<f64>>; 2]) -> Result<Self> {
        let k = p_x.len();
        for t in 0..2 {
            if law[t].len() != k {
                return Err(Error::Shape { expected: k, actual: law[t].len() });
            }
            for row in &law[t] {
                if row.len() != values.len() {
                    return Err(Error::Shape { expected: values.len(), actual: row.len() });
                }
                if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > MASS_TOL {
                    return Err(Error::Input("each P(y | x, t) must be a probability vector".into()));
                }
            }
        }
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("outcome alphabet must be non-empty and finite".into()));
        }
        // Validates P(X) and propensities.
        DiscreteWorld::new(p_x.clone(), propensity.clone(), vec![0.0; k], vec![0.0; k])?;
        Ok(Self { p_x, propensity, values, law })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Bound `K` on `|y|`.
    pub fn outcome_bound(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_world(&self) -> DiscreteWorld {
        let mean = |t: usize| -> Vec<f64> {
            self.law[t].iter().map(|row| row.iter().zip(&self.values).map(|(p, v)| p * v).sum()).collect()
        };
        DiscreteWorld { p_x: self.p_x.clone(), propensity: self.propensity.clone(), mean_treated: mean(1), mean_control: mean(0) }
    }

    fn arm_propensity(&self, x: usize, t: usize, q: &[f64]) -> (f64, f64) {
        if t == 1 {
            (self.propensity[x], q[x])
        } else {
            (1.0 - self.propensity[x], 1.0 - q[x])
        }
    }

    /// `π_{y,t}(Q) = Σₓ P(y|x,t)·P(t|x)/Q(t|x)·P(x)`.
    pub fn pi(&self, k: usize, t: usize, q: &[f64]) -> Result<f64> {
        check_q(q, self.p_x.len())?;
        Ok((0..self.p_x.len())
            .map(|x| {
                let (p, qq) = self.arm_propensity(x, t, q);
                self.law[t][x][k] * p / qq * self.p_x[x]
            })
            .sum())
    }

    /// `E_{x ~ R_{y,t}} (1 − P(t|x)/Q(t|x))²^{1/2}` with
    /// `R_{y,t}(x) ∝ P(y|x,t)·P(x)`; `None` when `R_{y,t}` has no mass.
    pub fn expected_root_chi(&self, k: usize, t: usize, q: &[f64]) -> Result<Option<f64>> {
        check_q(q, self.p_x.len())?;
        let mut z = 0.0;
        let mut acc = 0.0;
        for x in 0..self.p_x.len() {
            let w = self.law[t][x][k] * self.p_x[x];
            let (p, qq) = self.arm_propensity(x, t, q);
            z += w;
            acc += w * (1.0 - p / qq).abs();
        }
        Ok((z > 0.0).then(|| acc / z))
    }

    /// `2·|𝒴|·K·max_{y,t} E_{R_{y,t}} ℓ_χ^{1/2}`.
    pub fn chi_squared_bound(&self, q: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in 0..2 {
            for k in 0..self.values.len() {
                if let Some(v) = self.expected_root_chi(k, t, q)? {
                    worst = worst.max(v);
                }
            }
        }
        Ok(2.0 * self.values.len() as f64 * self.outcome_bound() * worst)
    }

    /// Random world with outcomes on `alphabet` points in `[-k_bound, k_bound]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, support: usize, alphabet: usize, k_bound: f64) -> Self {
        let base = DiscreteWorld::random(rng, support, support);
        let values: Vec<f64> = (0..alphabet).map(|_| rng.random_range(-k_bound..=k_bound)).collect();
        let mut draw_law = || -> Vec<Vec<f64>> {
            (0..support)
                .map(|_| {
                    // Some zero cells exercise empty R_{y,t}.
                    let raw: Vec<f64> =
                        (0..alphabet).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() }).collect();
                    let s: f64 = raw.iter().sum();
                    if s == 0.0 {
                        let mut one = vec![0.0; alphabet];
                        one[0] = 1.0;
                        one
                    } else {
                        raw.iter().map(|r| r / s).collect()
                    }
                })
                .collect()
        };
        let law = [draw_law(), draw_law()];
        Self { p_x: base.p_x, propensity: base.propensity, values, law }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::iptw_ate;
    use crate::rng;

    /// Binary `X` with `P(X=1) = 0.5` and propensities `p0`, `p1`.
    fn toy(p0: f64, p1: f64, m1: [f64; 2], m0: [f64; 2]) -> DiscreteWorld {
        DiscreteWorld::new(vec![0.5, 0.5], vec![p0, p1], m1.to_vec(), m0.to_vec()).unwrap()
    }

    #[test]
    fn true_propensities_give_the_truth() {
        let mut r = rng::stream(1, 0);
        for _ in 0..100 {
            let w = DiscreteWorld::random(&mut r, 10, 10);
            let q: Vec<f64> = w.propensity().to_vec();
            assert!((w.exact_iptw_limit(&q).unwrap() - w.exact_ate()).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_world_closed_forms() {
        let (p0, p1, q0, q1) = (0.3, 0.6, 0.45, 0.2);
        // Y = X ∧ T: E[Y|x,1] = x, E[Y|x,0] = 0.
        let and = toy(p0, p1, [0.0, 1.0], [0.0, 0.0]);
        assert_eq!(and.exact_ate(), 0.5);
        assert!((and.exact_iptw_limit(&[q0, q1]).unwrap() - 0.5 * p1 / q1).abs() < 1e-15);
        // Y = ¬X ∧ ¬T: E[Y|x,1] = 0, E[Y|x,0] = 1 − x.
        let nor = toy(p0, p1, [0.0, 0.0], [1.0, 0.0]);
        assert_eq!(nor.exact_ate(), -0.5);
        assert!((nor.exact_iptw_limit(&[q0, q1]).unwrap() + 0.5 * (1.0 - p0) / (1.0 - q0)).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let w = toy(0.3, 0.6, [0.0, 1.0], [0.0, 0.0]);
        assert!(matches!(w.exact_iptw_limit(&[0.0, 0.5]), Err(Error::Domain(_))));
        assert!(matches!(w.exact_iptw_limit(&[0.5, 1.0]), Err(Error::Domain(_))));
        assert!(DiscreteWorld::new(vec![0.5, 0.6], vec![0.5, 0.5], vec![0.0; 2], vec![0.0; 2]).is_err());
    }

    #[test]
    fn aipw_double_robustness() {
        let mut r = rng::stream(2, 0);
        for _ in 0..50 {
            let w = DiscreteWorld::random(&mut r, 8, 8);
            let q_wrong = random_model(&mut r, 8, 8);
            let f_wrong: Vec<f64> = (0..8).map(|_| r.random_range(-3.0..3.0)).collect();
            let truth = w.exact_ate();
            // Outcome leg correct, propensities arbitrary.
            let a = w.exact_aipw_limit(&q_wrong, w.mean_treated(), w.mean_control()).unwrap();
            // Propensity leg correct, outcome arbitrary.
            let b = w.exact_aipw_limit(w.propensity(), &f_wrong, &f_wrong).unwrap();
            let c = w.exact_aipw_limit(w.propensity(), w.mean_treated(), w.mean_control()).unwrap();
            for v in [a, b, c] {
                assert!((v - truth).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampled_iptw_is_consistent() {
        let mut r = rng::stream(3, 0);
        let w = DiscreteWorld::random(&mut r, 6, 6);
        let (data, idx) = w.sample(200_000, &mut r).unwrap();
        let e: Array1<f64> = idx.iter().map(|&k| w.propensity()[k]).collect();
        let est = iptw_ate(&data, e.view()).unwrap().ate;
        assert!((est - w.exact_ate()).abs() < 0.01, "{est} vs {}", w.exact_ate());
    }

    #[test]
    fn recalibrating_separable_scores_is_exact() {
        let mut r = rng::stream(4, 0);
        for _ in 0..100 {
            let w = DiscreteWorld::random(&mut r, 10, 4);
            let s = separable_scores(&w, &mut r);
            let q = w.population_recalibration(&s).unwrap();
            assert!(w.is_calibrated(&q, 1e-12).unwrap());
            assert!((w.exact_iptw_limit(&q).unwrap() - w.exact_ate()).abs() < 1e-12);
        }
    }

    #[test]
    fn non_separable_recalibration_can_fail() {
        // Pooling two propensity levels is calibrated but loses the truth.
        let w = toy(0.2, 0.8, [1.0, 0.0], [0.0, 0.0]);
        let q = w.population_recalibration(&[0.5, 0.5]).unwrap();
        assert!(w.is_calibrated(&q, 1e-12).unwrap());
        assert!((w.exact_iptw_limit(&q).unwrap() - w.exact_ate()).abs() > 0.1);
    }

    #[test]
    fn witness_matches_closed_form() {
        let mut r = rng::stream(5, 0);
        for _ in 0..100 {
            let w = DiscreteWorld::random(&mut r, 10, 10);
            let q = random_model(&mut r, 10, 4);
            let wit = w.necessity_witness(&q, 1e-9).unwrap().expect("random model is miscalibrated");
            let limit = wit.world.exact_iptw_limit(&q).unwrap();
            assert!((limit - wit.predicted_limit).abs() < 1e-12);
            assert!((wit.world.exact_ate() - wit.predicted_ate).abs() < 1e-12);
            assert!((limit - wit.world.exact_ate()).abs() > 1e-9);
        }
        let w = toy(0.3, 0.6, [0.0; 2], [0.0; 2]);
        assert!(w.necessity_witness(&[0.3, 0.6], 1e-9).unwrap().is_none());
    }

    #[test]
    fn chi_squared_bound_holds() {
        let mut r = rng::stream(6, 0);
        for _ in 0..100 {
            let ow = DiscreteOutcomeWorld::random(&mut r, 8, 3, 2.0);
            let q = random_model(&mut r, 8, 8);
            let w = ow.to_world();
            let err = (w.exact_iptw_limit(&q).unwrap() - w.exact_ate()).abs();
            assert!(err <= ow.chi_squared_bound(&q).unwrap() + 1e-12);
            for t in 0..2 {
                for k in 0..3 {
                    let gap = (ow.pi(k, t, w.propensity()).unwrap() - ow.pi(k, t, &q).unwrap()).abs();
                    if let Some(b) = ow.expected_root_chi(k, t, &q).unwrap() {
                        assert!(gap <= b + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pi_reconstructs_interventional_mean() {
        let mut r = rng::stream(7, 0);
        let ow = DiscreteOutcomeWorld::random(&mut r, 5, 4, 1.0);
        let w = ow.to_world();
        let y1: f64 = (0..4).map(|k| ow.values()[k] * ow.pi(k, 1, w.propensity()).unwrap()).sum();
        let y0: f64 = (0..4).map(|k| ow.values()[k] * ow.pi(k, 0, w.propensity()).unwrap()).sum();
        assert!((y1 - y0 - w.exact_ate()).abs() < 1e-12);
    }
}
