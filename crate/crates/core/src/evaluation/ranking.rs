//! Significance-aware rank aggregation across methods.
//!
//! For every metric and ordered pair of methods, a one-sided Wilcoxon
//! signed-rank test over subjects decides whether the first method is
//! significantly better. The paired quantities are the methods' ranks within
//! each subject rather than the raw metric values, so the outcome depends
//! only on the per-subject ordering and is unchanged by any strictly
//! increasing transform of a metric. A method's score on a metric is the
//! number of methods it beats; scores become dense ranks (1 = best) and the
//! final rank is their mean over metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::report::{Metric, MetricsReport};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;
/// Below this many subjects the table carries a low-power warning.
pub const LOW_POWER_SUBJECTS: usize = 5;

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact one-sided p-value `P(W⁺ ≥ observed)` of the Wilcoxon signed-rank
/// test for "differences tend to be positive". Zero differences are dropped;
/// tied magnitudes get average ranks, handled exactly by working in doubled ranks.
pub fn wilcoxon_greater(differences: &[f64]) -> f64 {
    let nonzero: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return 1.0;
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let doubled: Vec<usize> = average_ranks(&magnitudes)
        .iter()
        .map(|r| (2.0 * r).round() as usize)
        .collect();
    let observed: usize = doubled
        .iter()
        .zip(&nonzero)
        .filter(|(_, &d)| d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total: usize = doubled.iter().sum();
    // Null distribution of the doubled statistic: each sign is a fair coin.
    let mut dist = vec![0.0; total + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let p = dist[s] * 0.5;
            dist[s] = p;
            dist[s + r] += p;
        }
        reach += r;
    }
    dist[observed..].iter().sum::<f64>().min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub method: String,
    /// Number of methods significantly beaten, per metric.
    pub scores: BTreeMap<Metric, usize>,
    /// Dense rank per metric (1 = best).
    pub ranks: BTreeMap<Metric, usize>,
    pub mean_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub metrics: Vec<Metric>,
    /// Sorted by mean rank, best first.
    pub entries: Vec<MethodRank>,
    pub alpha: f64,
    pub warnings: Vec<String>,
}

impl RankTable {
    pub fn get(&self, method: &str) -> Option<&MethodRank> {
        self.entries.iter().find(|e| e.method == method)
    }

    /// `method,<metric ranks…>,mean_rank`, best first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for m in &self.metrics {
            out.push(',');
            out.push_str(m.name());
        }
        out.push_str(",mean_rank\n");
        for e in &self.entries {
            out.push_str(&e.method);
            for m in &self.metrics {
                out.push_str(&format!(",{}", e.ranks.get(m).copied().unwrap_or_default()));
            }
            out.push_str(&format!(",{:.2}\n", e.mean_rank));
        }
        out
    }
}

/// Within-subject goodness ranks: `ranks[method][subject]`, `None` where undefined.
fn within_subject_ranks(
    report: &MetricsReport,
    metric: Metric,
    methods: &[String],
    subjects: &[String],
) -> Vec<Vec<Option<f64>>> {
    let mut ranks = vec![vec![None; subjects.len()]; methods.len()];
    for (s, subject) in subjects.iter().enumerate() {
        let present: Vec<(usize, f64)> = methods
            .iter()
            .enumerate()
            .filter_map(|(m, method)| {
                report
                    .value(method, subject, metric)
                    .map(|v| (m, if metric.higher_is_better() { v } else { -v }))
            })
            .collect();
        let values: Vec<f64> = present.iter().map(|&(_, v)| v).collect();
        for (&(m, _), r) in present.iter().zip(average_ranks(&values)) {
            ranks[m][s] = Some(r);
        }
    }
    ranks
}

pub fn rank_methods(report: &MetricsReport, alpha: f64) -> Result<RankTable> {
    let methods = report.methods();
    let subjects = report.subjects();
    if methods.len() < 2 || subjects.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ranking needs ≥ 2 methods and ≥ 2 subjects, have {} and {}",
            methods.len(),
            subjects.len()
        )));
    }
    let mut warnings = Vec::new();
    if subjects.len() < LOW_POWER_SUBJECTS {
        warnings.push(format!(
            "only {} subjects: significance tests have low power",
            subjects.len()
        ));
    }
    let metrics = Metric::RANKED.to_vec();
    let mut scores: Vec<BTreeMap<Metric, usize>> = vec![BTreeMap::new(); methods.len()];
    let mut ranks: Vec<BTreeMap<Metric, usize>> = vec![BTreeMap::new(); methods.len()];
    for &metric in &metrics {
        let within = within_subject_ranks(report, metric, &methods, &subjects);
        let score: Vec<usize> = (0..methods.len())
            .map(|a| {
                (0..methods.len())
                    .filter(|&b| b != a)
                    .filter(|&b| {
                        let diffs: Vec<f64> = within[a]
                            .iter()
                            .zip(&within[b])
                            .filter_map(|(x, y)| Some(x.as_ref()? - y.as_ref()?))
                            .collect();
                        wilcoxon_greater(&diffs) < alpha
                    })
                    .count()
            })
            .collect();
        let mut distinct = score.clone();
        distinct.sort_unstable_by(|a, b| b.cmp(a));
        distinct.dedup();
        for (m, &s) in score.iter().enumerate() {
            scores[m].insert(metric, s);
            let dense = distinct
                .iter()
                .position(|&d| d == s)
                .expect("score present")
                + 1;
            ranks[m].insert(metric, dense);
        }
    }
    let mut entries: Vec<MethodRank> = methods
        .into_iter()
        .zip(scores.into_iter().zip(ranks))
        .map(|(method, (scores, ranks))| {
            let mean_rank = ranks.values().map(|&r| r as f64).sum::<f64>() / ranks.len() as f64;
            MethodRank {
                method,
                scores,
                ranks,
                mean_rank,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        a.mean_rank
            .total_cmp(&b.mean_rank)
            .then_with(|| a.method.cmp(&b.method))
    });
    Ok(RankTable {
        metrics,
        entries,
        alpha,
        warnings,
    })
}
