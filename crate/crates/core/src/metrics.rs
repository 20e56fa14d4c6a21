//! Aggregation of replicated trials.
//!
//! Everything is accumulated as integer sums, so merging partial aggregates
//! in any order gives bit-identical records.

use alloc::vec;
use alloc::vec::Vec;

use crate::sim::TrialResult;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanSe {
    pub mean: f64,
    pub std_error: f64,
}

impl MeanSe {
    /// From `n`, `Σv` and `Σv²`, using the sample (n - 1) variance.
    fn from_moments(n: u64, sum: f64, sum_sq: f64) -> Self {
        if n == 0 {
            return Self::default();
        }
        let nf = n as f64;
        let mean = sum / nf;
        let std_error = if n > 1 {
            let var = ((sum_sq - sum * sum / nf) / (nf - 1.0)).max(0.0);
            libm::sqrt(var / nf)
        } else {
            0.0
        };
        Self { mean, std_error }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsRecord {
    pub replicates: u64,
    pub type_one: MeanSe,
    pub type_two: MeanSe,
    /// `λ e1 + (1 - λ) e2` per replicate.
    pub total: MeanSe,
    /// Fraction of subgroups misclassified, `(e1 + e2) / X`.
    pub error_rate: MeanSe,
    /// Percentage of replicates classifying each subgroup correctly.
    pub confidence_pct: Vec<f64>,
    pub confidence_se: Vec<f64>,
    /// Mean patients per (subgroup, arm).
    pub recruitment: Vec<[f64; 2]>,
    pub cohorts_used: MeanSe,
    /// `confidence_by_cohort[k][x]`: percentage correct after cohort `k`,
    /// over the replicates that reached it.
    pub confidence_by_cohort: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAccumulator {
    lambda: f64,
    subgroups: usize,
    n: u64,
    e1: u64,
    e1_sq: u64,
    e2: u64,
    e2_sq: u64,
    e1e2: u64,
    correct: Vec<u64>,
    recruitment: Vec<[u64; 2]>,
    cohorts: u64,
    cohorts_sq: u64,
    reached: Vec<u64>,
    correct_by_cohort: Vec<Vec<u64>>,
}

impl MetricsAccumulator {
    pub fn new(subgroups: usize, lambda: f64) -> Self {
        Self {
            lambda,
            subgroups,
            n: 0,
            e1: 0,
            e1_sq: 0,
            e2: 0,
            e2_sq: 0,
            e1e2: 0,
            correct: vec![0; subgroups],
            recruitment: vec![[0, 0]; subgroups],
            cohorts: 0,
            cohorts_sq: 0,
            reached: Vec::new(),
            correct_by_cohort: Vec::new(),
        }
    }

    pub fn add(&mut self, r: &TrialResult) {
        let (e1, e2) = (r.errors.type_one as u64, r.errors.type_two as u64);
        self.n += 1;
        self.e1 += e1;
        self.e1_sq += e1 * e1;
        self.e2 += e2;
        self.e2_sq += e2 * e2;
        self.e1e2 += e1 * e2;
        for x in 0..self.subgroups {
            if r.correct(x) {
                self.correct[x] += 1;
            }
            self.recruitment[x][0] += r.recruitment[x][0];
            self.recruitment[x][1] += r.recruitment[x][1];
        }
        let c = r.cohorts_used as u64;
        self.cohorts += c;
        self.cohorts_sq += c * c;
        for k in 0..r.prob_history.len() {
            if self.reached.len() <= k {
                self.reached.push(0);
                self.correct_by_cohort.push(vec![0; self.subgroups]);
            }
            self.reached[k] += 1;
            for (x, ok) in r.correct_at(k, self.lambda).into_iter().enumerate() {
                if ok {
                    self.correct_by_cohort[k][x] += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.n += other.n;
        self.e1 += other.e1;
        self.e1_sq += other.e1_sq;
        self.e2 += other.e2;
        self.e2_sq += other.e2_sq;
        self.e1e2 += other.e1e2;
        for x in 0..self.subgroups {
            self.correct[x] += other.correct[x];
            self.recruitment[x][0] += other.recruitment[x][0];
            self.recruitment[x][1] += other.recruitment[x][1];
        }
        self.cohorts += other.cohorts;
        self.cohorts_sq += other.cohorts_sq;
        for k in 0..other.reached.len() {
            if self.reached.len() <= k {
                self.reached.push(0);
                self.correct_by_cohort.push(vec![0; self.subgroups]);
            }
            self.reached[k] += other.reached[k];
            for x in 0..self.subgroups {
                self.correct_by_cohort[k][x] += other.correct_by_cohort[k][x];
            }
        }
    }

    pub fn finish(&self) -> MetricsRecord {
        let n = self.n;
        let nf = n.max(1) as f64;
        let l = self.lambda;
        let (e1, e2) = (self.e1 as f64, self.e2 as f64);
        let (e1s, e2s, e12) = (self.e1_sq as f64, self.e2_sq as f64, self.e1e2 as f64);
        let total_sum = l * e1 + (1.0 - l) * e2;
        let total_sq = l * l * e1s + (1.0 - l) * (1.0 - l) * e2s + 2.0 * l * (1.0 - l) * e12;
        let xf = self.subgroups as f64;
        let miss_sum = (e1 + e2) / xf;
        let miss_sq = (e1s + e2s + 2.0 * e12) / (xf * xf);
        let confidence_pct: Vec<f64> = self.correct.iter().map(|&c| 100.0 * c as f64 / nf).collect();
        let confidence_se = confidence_pct
            .iter()
            .map(|&p| if n > 1 { libm::sqrt(p * (100.0 - p) / nf) } else { 0.0 })
            .collect();
        MetricsRecord {
            replicates: n,
            type_one: MeanSe::from_moments(n, e1, e1s),
            type_two: MeanSe::from_moments(n, e2, e2s),
            total: MeanSe::from_moments(n, total_sum, total_sq),
            error_rate: MeanSe::from_moments(n, miss_sum, miss_sq),
            confidence_pct,
            confidence_se,
            recruitment: self.recruitment.iter().map(|c| [c[0] as f64 / nf, c[1] as f64 / nf]).collect(),
            cohorts_used: MeanSe::from_moments(n, self.cohorts as f64, self.cohorts_sq as f64),
            confidence_by_cohort: self
                .correct_by_cohort
                .iter()
                .zip(&self.reached)
                .map(|(row, &m)| row.iter().map(|&c| 100.0 * c as f64 / m as f64).collect())
                .collect(),
        }
    }
}

impl MetricsRecord {
    pub fn from_results<'a, I: IntoIterator<Item = &'a TrialResult>>(subgroups: usize, lambda: f64, results: I) -> Self {
        let mut acc = MetricsAccumulator::new(subgroups, lambda);
        for r in results {
            acc.add(r);
        }
        acc.finish()
    }

    /// Mean patients recruited per subgroup (both arms).
    pub fn subgroup_recruitment(&self) -> Vec<f64> {
        self.recruitment.iter().map(|c| c[0] + c[1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::PolicyKind;
    use crate::rng::replicate_seed;
    use crate::sim::{run_trial, Environment, TrialConfig};

    fn results(n: u64) -> Vec<TrialResult> {
        let env = Environment::new(vec![0.5, 0.5], vec![0.45, 0.6]).unwrap();
        (0..n)
            .map(|i| run_trial(&env, &TrialConfig::fixed(2, 2, 20, PolicyKind::Uniform, replicate_seed(9, i))).unwrap())
            .collect()
    }

    #[test]
    fn single_replicate_matches_result() {
        let rs = results(1);
        let m = MetricsRecord::from_results(2, 0.5, &rs);
        assert_eq!(m.replicates, 1);
        assert_eq!(m.type_one.mean, rs[0].errors.type_one as f64);
        assert_eq!(m.total.mean, rs[0].errors.total);
        assert_eq!(m.total.std_error, 0.0);
        for x in 0..2 {
            assert_eq!(m.confidence_pct[x], if rs[0].correct(x) { 100.0 } else { 0.0 });
            assert_eq!(m.recruitment[x][0], rs[0].recruitment[x][0] as f64);
        }
    }

    #[test]
    fn merge_order_is_irrelevant() {
        let rs = results(30);
        let whole = MetricsRecord::from_results(2, 0.5, &rs);
        let mut a = MetricsAccumulator::new(2, 0.5);
        let mut b = MetricsAccumulator::new(2, 0.5);
        for r in &rs[..11] {
            a.add(r);
        }
        for r in rs[11..].iter().rev() {
            b.add(r);
        }
        b.merge(&a);
        assert_eq!(b.finish(), whole);
    }

    #[test]
    fn total_moments_match_direct_computation() {
        let rs = results(40);
        let m = MetricsRecord::from_results(2, 0.5, &rs);
        let vals: Vec<f64> = rs.iter().map(|r| r.errors.total).collect();
        let mean = vals.iter().sum::<f64>() / 40.0;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 39.0;
        assert!((m.total.mean - mean).abs() < 1e-12);
        assert!((m.total.std_error - (var / 40.0).sqrt()).abs() < 1e-12);
    }
}
