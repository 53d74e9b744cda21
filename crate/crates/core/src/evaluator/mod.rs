//! Leave-one-out and cold-start splits, full-catalog ranking and metrics.

mod split;

pub use split::{cold_start_split, leave_one_out, ColdStartSplit, EvalCase, EvalSplit};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{build_model_input, Catalog, InputLimits, Vocabulary};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::numeric::{Real, SeededRng};
use crate::objectives::cosine_scores;
use crate::trainer::{encode_all_items, parallel_map, ItemFeatureMatrix};

/// Cutoff used for NDCG and Recall.
pub const TOP_K: usize = 10;

/// `1 + #{i : score_i > score_target}`; the target wins ties.
pub fn rank_of_target<T: Real>(scores: &[T], target: usize) -> Result<usize> {
    let t = *scores.get(target).ok_or_else(|| {
        Error::contract(format!("target index {target} outside {} scores", scores.len()))
    })?;
    Ok(1 + scores.iter().filter(|&&s| s > t).count())
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn recall_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn mrr(rank: usize) -> f64 {
    1.0 / rank.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub n_users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "ndcg@10,recall@10,mrr,n_users";

    /// Averages over per-user ranks, summed in the given order.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len();
        let mean = |f: &dyn Fn(usize) -> f64| {
            if n == 0 {
                0.0
            } else {
                ranks.iter().map(|&r| f(r)).sum::<f64>() / n as f64
            }
        };
        let mut metrics = BTreeMap::new();
        metrics.insert("ndcg@10".to_string(), mean(&|r| ndcg_at_k(r, TOP_K)));
        metrics.insert("recall@10".to_string(), mean(&|r| recall_at_k(r, TOP_K)));
        metrics.insert("mrr".to_string(), mean(&mrr));
        Self {
            metrics,
            n_users: n,
            fingerprint: None,
        }
    }

    pub fn with_fingerprint(mut self, fingerprint: u64) -> Self {
        self.fingerprint = Some(format!("{fingerprint:016x}"));
        self
    }

    pub fn ndcg(&self) -> f64 {
        self.metrics["ndcg@10"]
    }

    pub fn recall(&self) -> f64 {
        self.metrics["recall@10"]
    }

    pub fn mrr(&self) -> f64 {
        self.metrics["mrr"]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.ndcg(), self.recall(), self.mrr(), self.n_users)
    }
}

/// Rank of each case's target among all items of `matrix`, in case order.
pub fn rank_cases<T: Real>(
    model: &Model<T>,
    matrix: &ItemFeatureMatrix<T>,
    cases: &[EvalCase],
    catalog: &Catalog,
    vocab: &Vocabulary,
    limits: &InputLimits,
    threads: usize,
) -> Result<Vec<usize>> {
    parallel_map(cases, threads, |case| {
        let target = matrix
            .index_of(&case.target)
            .ok_or_else(|| Error::UnknownItem(case.target.clone()))?;
        let x = build_model_input(&case.context, catalog, vocab, limits)?;
        let h = model.sequence_vector(&x)?;
        rank_of_target(&cosine_scores(&h, matrix.rows())?, target)
    })
}

/// Encode each context, rank its target over the whole matrix, average.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    matrix: &ItemFeatureMatrix<T>,
    cases: &[EvalCase],
    catalog: &Catalog,
    vocab: &Vocabulary,
    limits: &InputLimits,
    threads: usize,
) -> Result<EvalReport> {
    let ranks = rank_cases(model, matrix, cases, catalog, vocab, limits, threads)?;
    Ok(EvalReport::from_ranks(&ranks).with_fingerprint(matrix.built_from()))
}

/// Evaluate pretrained parameters on another domain without any update.
pub fn zero_shot_evaluate<T: Real>(
    model: &Model<T>,
    catalog: &Catalog,
    cases: &[EvalCase],
    vocab: &Vocabulary,
    limits: &InputLimits,
    threads: usize,
) -> Result<EvalReport> {
    let matrix = encode_all_items(model, catalog, vocab, limits, threads)?;
    evaluate(model, &matrix, cases, catalog, vocab, limits, threads)
}

/// Mean MRR of a ranker that scores items uniformly at random, by simulation.
pub fn random_ranker_mrr(n_items: usize, n_users: usize, rng: &mut SeededRng) -> f64 {
    if n_users == 0 || n_items == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for _ in 0..n_users {
        let scores: Vec<f64> = (0..n_items).map(|_| rng.uniform(0.0, 1.0)).collect();
        let rank = rank_of_target(&scores, rng.below(n_items)).expect("index in range");
        total += mrr(rank);
    }
    total / n_users as f64
}

/// `H(n) / n`, the exact mean reciprocal rank of a uniformly random ranking.
pub fn random_ranker_expected_mrr(n_items: usize) -> f64 {
    (1..=n_items).map(|k| 1.0 / k as f64).sum::<f64>() / n_items as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of_target(&[0.1, 0.9, 0.3], 1).unwrap(), 1);
        assert_eq!(rank_of_target(&[0.5, 0.4, 0.6, 0.1], 3).unwrap(), 4);
        assert_eq!(rank_of_target(&[0.5, 0.5, 0.5], 2).unwrap(), 1);
        assert!(rank_of_target(&[0.5], 1).is_err());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(ndcg_at_k(1, 10), 1.0);
        assert_eq!(ndcg_at_k(3, 10), 0.5);
        assert_eq!(ndcg_at_k(11, 10), 0.0);
        assert_eq!(recall_at_k(10, 10), 1.0);
        assert_eq!(recall_at_k(11, 10), 0.0);
        assert_eq!(EvalReport::from_ranks(&[1, 12]).recall(), 0.5);
        assert_eq!(mrr(4), 0.25);
        assert!((EvalReport::from_ranks(&[1, 2, 4]).mrr() - 1.75 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn report_formats() {
        let r = EvalReport::from_ranks(&[1, 1]).with_fingerprint(255);
        assert_eq!(r.csv_row(), "1,1,1,2");
        let json = r.to_json();
        assert!(json.contains("\"ndcg@10\":1.0"), "{json}");
        assert!(json.contains("00000000000000ff"));
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    }

    #[test]
    fn random_ranker_matches_harmonic_mean() {
        let n = 50;
        let expect = random_ranker_expected_mrr(n);
        // Variance of 1/rank for a uniform rank.
        let m2 = (1..=n).map(|k| 1.0 / (k * k) as f64).sum::<f64>() / n as f64;
        let sd = ((m2 - expect * expect) / 500.0).sqrt();
        let got = random_ranker_mrr(n, 500, &mut SeededRng::new(4));
        assert!((got - expect).abs() < 3.0 * sd, "{got} vs {expect} ± {sd}");
    }
}
