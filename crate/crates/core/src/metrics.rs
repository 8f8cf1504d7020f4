//! Ranking metrics and the metric-consistency analysis.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::checkpoint::format_f64;
use crate::error::{Error, Result};
use crate::rng;
use crate::sim::{relabel, Dataset, GroundTruthRule, ItemUniverse, Slate};

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "auc: scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // Mann-Whitney with mid-ranks; every quantity is a small half-integer,
    // so the result is exactly the tie-aware pair count ratio.
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupResult {
    pub value: f64,
    pub included: usize,
    pub skipped: usize,
}

fn group_mean<I>(per_list: I, what: &str) -> Result<GroupResult>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let mut sum = 0.0;
    let mut included = 0;
    let mut skipped = 0;
    for v in per_list {
        match v {
            Some(v) => {
                sum += v;
                included += 1;
            }
            None => skipped += 1,
        }
    }
    if included == 0 {
        return Err(Error::InsufficientData(format!("{what}: no list has both a purchase and a non-purchase")));
    }
    Ok(GroupResult {
        value: sum / included as f64,
        included,
        skipped,
    })
}

/// Mean per-list AUC over lists with both classes.
pub fn gauc(lists: &[(&[f64], &[u8])]) -> Result<GroupResult> {
    group_mean(lists.iter().map(|(s, l)| auc(s, l)), "gauc")
}

/// Binary-relevance NDCG of labels in ranked order, gain `2^rel - 1` and
/// discount `log2(i + 1)`. `None` for lists without a positive.
pub fn ndcg(ranked_labels: &[u8]) -> Option<f64> {
    let dcg = |labels: &mut dyn Iterator<Item = u8>| -> f64 {
        labels
            .enumerate()
            .map(|(i, rel)| (2f64.powi(i32::from(rel)) - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let positives = ranked_labels.iter().filter(|&&l| l > 0).count();
    if positives == 0 {
        return None;
    }
    let mut ideal: Vec<u8> = ranked_labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    Some(dcg(&mut ranked_labels.iter().copied()) / dcg(&mut ideal.into_iter()))
}

/// Labels reordered by descending score; equal scores keep their order.
pub fn rank_labels(scores: &[f64], labels: &[u8]) -> Vec<u8> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.into_iter().map(|i| labels[i]).collect()
}

/// Mean NDCG over lists with at least one positive, ranking by score.
pub fn mean_ndcg(lists: &[(&[f64], &[u8])]) -> Result<GroupResult> {
    group_mean(lists.iter().map(|(s, l)| ndcg(&rank_labels(s, l))), "ndcg")
}

fn logged_pairs<'a>(data: &'a Dataset, scores: &'a [Vec<f64>]) -> Result<Vec<(&'a [f64], &'a [u8])>> {
    if scores.len() != data.len() {
        return Err(Error::config(format!("{} score lists for {} logged lists", scores.len(), data.len())));
    }
    data.slates
        .iter()
        .zip(scores)
        .map(|(s, sc)| {
            let labels = s.purchases.as_deref().ok_or_else(|| Error::InvalidSlate("logged list lacks purchase labels".into()))?;
            if labels.len() != sc.len() {
                return Err(Error::InvalidSlate("one score per logged item is required".into()));
            }
            Ok((sc.as_slice(), labels))
        })
        .collect()
}

/// GAUC against the logged labels; `scores[i][j]` scores item `j` of logged list `i`.
pub fn offline_gauc(data: &Dataset, scores: &[Vec<f64>]) -> Result<GroupResult> {
    gauc(&logged_pairs(data, scores)?)
}

/// NDCG against the logged labels, items ranked by the given scores.
pub fn offline_ndcg(data: &Dataset, scores: &[Vec<f64>]) -> Result<GroupResult> {
    mean_ndcg(&logged_pairs(data, scores)?)
}

/// Relabel every reordered list once and compute GAUC of the ranker's scores
/// (aligned with the reordered items) against the fresh labels. List `i`
/// draws from the stream `(seed, i)`.
pub fn online_gauc(
    universe: &ItemUniverse,
    rule: &GroundTruthRule,
    reordered: &[Slate],
    scores: &[Vec<f64>],
    seed: u64,
) -> Result<GroupResult> {
    if reordered.len() != scores.len() {
        return Err(Error::config("online gauc needs one score list per reordered list"));
    }
    let fresh: Vec<Slate> = reordered
        .iter()
        .enumerate()
        .map(|(i, s)| relabel(rule, universe, s, &mut rng::rng_from(rng::derive_index(seed, i as u64))))
        .collect::<Result<_>>()?;
    let pairs: Vec<(&[f64], &[u8])> = fresh
        .iter()
        .zip(scores)
        .map(|(s, sc)| (sc.as_slice(), s.purchases.as_deref().unwrap_or(&[])))
        .collect();
    gauc(&pairs)
}

/// Fraction of discordant pairs between two orderings of one element set.
pub fn kendall_tau_distance<T: Ord + Clone>(a: &[T], b: &[T]) -> Result<f64> {
    let sa: BTreeSet<&T> = a.iter().collect();
    let sb: BTreeSet<&T> = b.iter().collect();
    if sa != sb || sa.len() != a.len() || sb.len() != b.len() {
        return Err(Error::config("kendall tau needs two orderings of one set of distinct elements"));
    }
    let m = a.len();
    if m < 2 {
        return Ok(0.0);
    }
    let pos_b: std::collections::BTreeMap<&T, usize> = b.iter().enumerate().map(|(i, x)| (x, i)).collect();
    let mapped: Vec<usize> = a.iter().map(|x| pos_b[x]).collect();
    let mut discordant = 0usize;
    for i in 0..m {
        for j in i + 1..m {
            if mapped[i] > mapped[j] {
                discordant += 1;
            }
        }
    }
    Ok(discordant as f64 / (m * (m - 1) / 2) as f64)
}

/// Names ordered by descending value; equal values fall back to name order.
pub fn rank_by(named: &[(String, f64)]) -> Vec<String> {
    let mut v = named.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|(n, _)| n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub offline_gauc: f64,
    pub online_gauc: f64,
    pub ndcg: f64,
    pub evaluator_score: f64,
    pub true_score: f64,
    pub lists_evaluated: usize,
    pub lists_skipped: usize,
}

pub const METRIC_NAMES: [&str; 5] = ["offline_gauc", "online_gauc", "ndcg", "evaluator_score", "true_score"];

impl MetricReport {
    pub fn metric(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "offline_gauc" => self.offline_gauc,
            "online_gauc" => self.online_gauc,
            "ndcg" => self.ndcg,
            "evaluator_score" => self.evaluator_score,
            "true_score" => self.true_score,
            other => return Err(Error::config(format!("unknown metric `{other}`"))),
        })
    }

    pub const CSV_HEADER: &'static str = "method,offline_gauc,online_gauc,ndcg,evaluator_score,true_score,lists_evaluated,lists_skipped";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            format_f64(self.offline_gauc),
            format_f64(self.online_gauc),
            format_f64(self.ndcg),
            format_f64(self.evaluator_score),
            format_f64(self.true_score),
            self.lists_evaluated,
            self.lists_skipped
        )
    }
}

pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut s = format!("{}\n", MetricReport::CSV_HEADER);
    for r in reports {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Per-method mean and standard deviation of every metric over repeat seeds.
/// `runs[s]` holds the reports of seed `s`, methods in the same order.
pub fn summary_csv(runs: &[Vec<MetricReport>]) -> Result<String> {
    let mut s = String::from("method");
    for m in METRIC_NAMES {
        let _ = write!(s, ",{m}_mean,{m}_std");
    }
    s.push_str(",seeds\n");
    let Some(first) = runs.first() else {
        return Ok(s);
    };
    for (k, rep) in first.iter().enumerate() {
        let _ = write!(s, "{}", rep.method);
        for m in METRIC_NAMES {
            let vals: Vec<f64> = runs.iter().map(|r| r[k].metric(m)).collect::<Result<_>>()?;
            let (mean, std) = mean_std(&vals);
            let _ = write!(s, ",{},{}", format_f64(mean), format_f64(std));
        }
        let _ = writeln!(s, ",{}", runs.len());
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyMatrix {
    pub metrics: Vec<String>,
    pub distances: Vec<Vec<f64>>,
}

impl ConsistencyMatrix {
    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        let find = |m: &str| {
            self.metrics
                .iter()
                .position(|x| x == m)
                .ok_or_else(|| Error::config(format!("metric `{m}` not in the matrix")))
        };
        Ok(self.distances[find(a)?][find(b)?])
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("metric,{}\n", self.metrics.join(","));
        for (m, row) in self.metrics.iter().zip(&self.distances) {
            let vals: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
            let _ = writeln!(s, "{m},{}", vals.join(","));
        }
        s
    }
}

/// Rank the methods by each metric and compare every pair of rankings.
pub fn consistency_matrix(reports: &[MetricReport], metrics: &[&str]) -> Result<ConsistencyMatrix> {
    if reports.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "consistency matrix needs at least 3 methods, got {}",
            reports.len()
        )));
    }
    let rankings: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            let named: Vec<(String, f64)> = reports.iter().map(|r| Ok((r.method.clone(), r.metric(m)?))).collect::<Result<_>>()?;
            Ok(rank_by(&named))
        })
        .collect::<Result<_>>()?;
    let k = metrics.len();
    let mut distances = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = kendall_tau_distance(&rankings[i], &rankings[j])?;
            distances[i][j] = d;
            distances[j][i] = d;
        }
    }
    Ok(ConsistencyMatrix {
        metrics: metrics.iter().map(|m| m.to_string()).collect(),
        distances,
    })
}
