//! Ranking metrics and benchmark reports.

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::VfRef;
use crate::error::{Error, Result};
use crate::ranker::RankedEntry;

pub const RECALL_KS: [usize; 4] = [1, 3, 5, 10];
pub const EFFORT_KS: [usize; 6] = [1, 3, 5, 10, 50, 100];

fn normalize_path(p: &str) -> String {
    p.replace('\\', "/").trim_start_matches("./").to_string()
}

/// Whether a ranked function is the labeled vulnerable function. A label
/// without a parameter list matches every overload; an empty file matches any file.
pub fn vf_matches(vf: &VfRef, qualified_name: &str, file: &str) -> bool {
    let name_ok = vf.qualified_name == qualified_name
        || (!vf.qualified_name.contains('(') && qualified_name.split('(').next() == Some(vf.qualified_name.as_str()));
    if !name_ok {
        return false;
    }
    if vf.file.is_empty() {
        return true;
    }
    let (a, b) = (normalize_path(&vf.file), normalize_path(file));
    a == b || b.ends_with(&format!("/{a}")) || a.ends_with(&format!("/{b}"))
}

/// 1-based rank of the first ranked entry matching each truth label.
pub fn truth_ranks(ordering: &[RankedEntry], truth: &[VfRef]) -> Vec<Option<usize>> {
    truth
        .iter()
        .map(|vf| {
            ordering
                .iter()
                .position(|e| vf_matches(vf, &e.qualified_name, &e.file))
                .map(|p| p + 1)
        })
        .collect()
}

/// Rank of the first relevant entry.
pub fn first_relevant(truth_ranks: &[Option<usize>]) -> Option<usize> {
    truth_ranks.iter().flatten().copied().min()
}

/// Fraction of labels found within the top `k`; `None` for an empty label set.
pub fn recall_at_k(truth_ranks: &[Option<usize>], k: usize) -> Option<f64> {
    if truth_ranks.is_empty() {
        return None;
    }
    let hits = truth_ranks.iter().filter(|r| matches!(r, Some(p) if *p <= k)).count();
    Some(hits as f64 / truth_ranks.len() as f64)
}

/// Mean recall over queries; queries without labels are left out.
pub fn mean_recall_at_k(queries: &[Vec<Option<usize>>], k: usize) -> Result<f64> {
    let values: Vec<f64> = queries
        .iter()
        .filter_map(|q| {
            let r = recall_at_k(q, k);
            if r.is_none() {
                warn!("query without ground truth excluded from Recall@{k}");
            }
            r
        })
        .collect();
    if values.is_empty() {
        return Err(Error::Empty("no queries with ground truth".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean reciprocal rank; a miss contributes 0.
pub fn mrr(firsts: &[Option<usize>]) -> Result<f64> {
    if firsts.is_empty() {
        return Err(Error::Empty("MRR over zero queries".into()));
    }
    let sum: f64 = firsts.iter().map(|f| f.map_or(0.0, |p| 1.0 / p as f64)).sum();
    Ok(sum / firsts.len() as f64)
}

/// Mean effort: the first relevant rank capped at `k`; a miss costs `k`.
pub fn me_at_k(firsts: &[Option<usize>], k: usize) -> Result<f64> {
    if firsts.is_empty() {
        return Err(Error::Empty(format!("ME@{k} over zero queries")));
    }
    let sum: f64 = firsts.iter().map(|f| f.map_or(k, |p| p.min(k)) as f64).sum();
    Ok(sum / firsts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub cve_id: String,
    pub mode: String,
    pub candidates: usize,
    pub first_relevant: Option<usize>,
    /// Best rank per ground-truth label, in label order.
    pub truth_ranks: Vec<Option<usize>>,
    /// Labels found within each recall cutoff.
    pub hits: Vec<HitSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitSet {
    pub k: usize,
    pub found: Vec<String>,
}

impl QueryResult {
    pub fn new(cve_id: &str, mode: &str, ordering: &[RankedEntry], truth: &[VfRef]) -> Self {
        let ranks = truth_ranks(ordering, truth);
        let hits = RECALL_KS
            .iter()
            .map(|&k| HitSet {
                k,
                found: truth
                    .iter()
                    .zip(&ranks)
                    .filter(|(_, r)| matches!(r, Some(p) if *p <= k))
                    .map(|(vf, _)| vf.qualified_name.clone())
                    .collect(),
            })
            .collect();
        QueryResult {
            cve_id: cve_id.to_string(),
            mode: mode.to_string(),
            candidates: ordering.len(),
            first_relevant: first_relevant(&ranks),
            truth_ranks: ranks,
            hits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAt {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub query_count: usize,
    /// Records left out for lack of ground truth.
    pub skipped: Vec<String>,
    pub mrr: f64,
    pub recall: Vec<MetricAt>,
    pub effort: Vec<MetricAt>,
    pub queries: Vec<QueryResult>,
}

impl EvalReport {
    pub fn build(mode: &str, queries: Vec<QueryResult>, skipped: Vec<String>) -> Result<Self> {
        let firsts: Vec<Option<usize>> = queries.iter().map(|q| q.first_relevant).collect();
        let ranks: Vec<Vec<Option<usize>>> = queries.iter().map(|q| q.truth_ranks.clone()).collect();
        let recall = RECALL_KS
            .iter()
            .map(|&k| Ok(MetricAt { k, value: mean_recall_at_k(&ranks, k)? }))
            .collect::<Result<_>>()?;
        let effort = EFFORT_KS
            .iter()
            .map(|&k| Ok(MetricAt { k, value: me_at_k(&firsts, k)? }))
            .collect::<Result<_>>()?;
        Ok(EvalReport {
            mode: mode.to_string(),
            query_count: queries.len(),
            skipped,
            mrr: mrr(&firsts)?,
            recall,
            effort,
            queries,
        })
    }

    /// Metric rows as (label, formatted value).
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![("MRR".to_string(), format!("{:.2}", self.mrr))];
        rows.extend(self.recall.iter().map(|m| (format!("Recall@{}", m.k), format!("{:.2}%", m.value * 100.0))));
        rows.extend(self.effort.iter().map(|m| (format!("ME@{}", m.k), format!("{:.2}", m.value))));
        rows
    }

    /// Aligned two-column table.
    pub fn render_table(&self) -> String {
        let rows = self.rows();
        let header = format!("{} (|Q| = {})", self.mode, self.query_count);
        let left = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("Metric".len());
        let right = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(header.len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<left$}  {:>right$}", "Metric", header);
        let _ = writeln!(out, "{}", "-".repeat(left + 2 + right));
        for (l, v) in rows {
            let _ = writeln!(out, "{l:<left$}  {v:>right$}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(rank: usize, qn: &str, file: &str) -> RankedEntry {
        RankedEntry { rank, id: qn.into(), qualified_name: qn.into(), file: file.into(), swiss_score: 0.0, wins: None }
    }

    fn vf(qn: &str, file: &str) -> VfRef {
        VfRef { qualified_name: qn.into(), file: file.into() }
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[Some(2), Some(5)], 3), Some(0.5));
        assert_eq!(recall_at_k(&[Some(1), Some(3)], 3), Some(1.0));
        assert_eq!(recall_at_k(&[Some(4), None], 3), Some(0.0));
        assert_eq!(recall_at_k(&[], 3), None);
    }

    #[test]
    fn mrr_examples() {
        let v = mrr(&[Some(1), Some(2), Some(4)]).unwrap();
        assert!((v - 1.75 / 3.0).abs() < 1e-12);
        assert_eq!(mrr(&[Some(1), Some(1)]).unwrap(), 1.0);
        assert_eq!(mrr(&[None]).unwrap(), 0.0);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn effort_examples() {
        assert_eq!(me_at_k(&[Some(3), Some(15)], 10).unwrap(), 6.5);
        assert_eq!(me_at_k(&[Some(1), Some(1)], 1).unwrap(), 1.0);
        assert_eq!(me_at_k(&[None], 5).unwrap(), 5.0);
        assert!(me_at_k(&[], 5).is_err());
    }

    #[test]
    fn matching_rules() {
        assert!(vf_matches(&vf("p.A#f", ""), "p.A#f(int)", "x/A.java"));
        assert!(vf_matches(&vf("p.A#f(int)", "src/p/A.java"), "p.A#f(int)", "src/p/A.java"));
        assert!(vf_matches(&vf("p.A#f(int)", "p/A.java"), "p.A#f(int)", "src/main/java/p/A.java"));
        assert!(!vf_matches(&vf("p.A#f(int)", ""), "p.A#f(long)", "A.java"));
        assert!(!vf_matches(&vf("p.A#f", "q/A.java"), "p.A#f()", "p/A.java"));
        assert!(!vf_matches(&vf("p.A#f", ""), "p.A#fx()", "p/A.java"));
    }

    #[test]
    fn report_perfect_case() {
        let ordering = vec![entry(1, "p.A#f()", "p/A.java"), entry(2, "p.A#g()", "p/A.java")];
        let q = QueryResult::new("X", "patch_present", &ordering, &[vf("p.A#f", "")]);
        let r = EvalReport::build("patch_present", vec![q], vec![]).unwrap();
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.recall[0].value, 1.0);
        assert_eq!(r.effort.last().unwrap().value, 1.0);
        let table = r.render_table();
        for (label, value) in r.rows() {
            assert!(table.lines().any(|l| l.starts_with(&label) && l.ends_with(&value)), "{label}");
        }
        assert!(table.contains("ME@100") && table.contains("Recall@10"));
    }

    #[test]
    fn multiple_labels() {
        let ordering: Vec<RankedEntry> = (1..=6).map(|i| entry(i, &format!("p.A#f{i}()"), "A.java")).collect();
        let q = QueryResult::new("X", "m", &ordering, &[vf("p.A#f2", ""), vf("p.A#f5", ""), vf("p.A#zz", "")]);
        assert_eq!(q.truth_ranks, vec![Some(2), Some(5), None]);
        assert_eq!(q.first_relevant, Some(2));
        assert_eq!(q.hits[1].found, vec!["p.A#f2"]);
        assert_eq!(q.hits[2].found.len(), 2);
    }
}
