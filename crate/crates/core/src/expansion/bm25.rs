//! Okapi BM25 over sanitized token streams.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::text::TokenStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Document frequencies and length statistics of a retrieval corpus.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avg_len: f64,
    pub doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a TokenStream>) -> Self {
        let mut n_docs = 0usize;
        let mut total = 0usize;
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            n_docs += 1;
            total += doc.len();
            let unique: HashSet<&str> = doc.iter().collect();
            for t in unique {
                *doc_freq.entry(t.to_string()).or_insert(0) += 1;
            }
        }
        let avg_len = if n_docs == 0 {
            0.0
        } else {
            total as f64 / n_docs as f64
        };
        CorpusStats {
            n_docs,
            avg_len,
            doc_freq,
        }
    }

    /// Non-negative IDF variant `ln(1 + (N - n + 0.5) / (n + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        let total = self.n_docs as f64;
        (1.0 + (total - n + 0.5) / (n + 0.5)).ln()
    }
}

/// BM25 score of `doc` for `query`; each distinct query term counts once.
pub fn bm25(query: &TokenStream, doc: &TokenStream, stats: &CorpusStats, params: Bm25Params) -> f64 {
    if doc.is_empty() || query.is_empty() {
        return 0.0;
    }
    let tf = doc.counts();
    let dl = doc.len() as f64;
    let avg = if stats.avg_len > 0.0 { stats.avg_len } else { dl };
    let norm = params.k1 * (1.0 - params.b + params.b * dl / avg);
    let mut seen = HashSet::new();
    let mut score = 0.0;
    for term in query.iter() {
        if !seen.insert(term) {
            continue;
        }
        let f = match tf.get(term) {
            Some(&f) => f as f64,
            None => continue,
        };
        score += stats.idf(term) * f * (params.k1 + 1.0) / (f + norm);
    }
    score
}
