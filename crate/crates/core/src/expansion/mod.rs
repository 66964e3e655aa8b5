//! Description expansion with CWE vocabulary.
//!
//! Sources come from the record's own CWE ids when they resolve, otherwise from
//! BM25 pseudo-relevance feedback over the whole CWE corpus. Candidate terms
//! from the sources are weighted by the cosine between their latent vector and
//! the projected description.

pub mod bm25;
pub mod lsa;
pub mod text;

use std::collections::{HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{find_cwe, CweEntry, VulnRecord};
use crate::error::{Error, Result};

pub use bm25::{bm25, Bm25Params, CorpusStats};
pub use lsa::{cosine, ProjectionModel};
pub use text::{sanitize, TokenStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    /// Multiplier applied to every cosine weight.
    pub alpha: f64,
    /// Number of CWE entries kept by pseudo-relevance feedback.
    pub prf_docs: usize,
    pub latent_k: usize,
    pub repetition: usize,
    /// Terms weighted below this are dropped.
    pub weight_floor: f64,
    pub bm25: Bm25Params,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            alpha: 1.0,
            prf_docs: 1,
            latent_k: 100,
            repetition: 5,
            weight_floor: 0.0,
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceStrategy {
    Mapped,
    Prf,
}

#[derive(Debug, Clone)]
pub struct ExpansionSources {
    pub entries: Vec<CweEntry>,
    pub strategy: SourceStrategy,
    /// CWE ids on the record that are not in the corpus.
    pub missing_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub term: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedQuery {
    pub description: String,
    pub original: TokenStream,
    pub repetition: usize,
    pub terms: Vec<WeightedTerm>,
    pub sources: Vec<String>,
}

impl ExpandedQuery {
    /// The original tokens repeated `repetition` times, followed by the expansion terms.
    pub fn flatten(&self) -> String {
        let original = self.original.join();
        let mut parts: Vec<&str> = Vec::new();
        if !original.is_empty() {
            parts.extend(std::iter::repeat_n(original.as_str(), self.repetition));
        }
        parts.extend(self.terms.iter().map(|t| t.term.as_str()));
        parts.join(" ")
    }

    /// Term weights: originals at `repetition` per occurrence, expansions at their weight.
    pub fn term_weights(&self) -> HashMap<String, f64> {
        let mut w: HashMap<String, f64> = HashMap::new();
        for t in self.original.iter() {
            *w.entry(t.to_string()).or_insert(0.0) += self.repetition as f64;
        }
        for t in &self.terms {
            *w.entry(t.term.clone()).or_insert(0.0) += t.weight;
        }
        w
    }
}

/// Picks the CWE entries used as expansion ingredients.
pub fn select_expansion_sources(
    record: &VulnRecord,
    corpus: &[CweEntry],
    config: &ExpansionConfig,
) -> Result<ExpansionSources> {
    if corpus.is_empty() {
        return Err(Error::Config("CWE corpus is empty".into()));
    }
    let mut entries = Vec::new();
    let mut missing_ids = Vec::new();
    let mut seen = HashSet::new();
    for id in &record.cwe_ids {
        match find_cwe(corpus, id) {
            Some(e) => {
                if seen.insert(e.cwe_id.clone()) {
                    entries.push(e.clone());
                }
            }
            None => {
                warn!("{}: {} not found in CWE corpus", record.cve_id, id);
                missing_ids.push(id.clone());
            }
        }
    }
    if !entries.is_empty() {
        return Ok(ExpansionSources {
            entries,
            strategy: SourceStrategy::Mapped,
            missing_ids,
        });
    }

    let query = sanitize(&record.description);
    let docs: Vec<TokenStream> = corpus.iter().map(|e| sanitize(&e.text())).collect();
    let stats = CorpusStats::build(&docs);
    let mut scored: Vec<(f64, usize)> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| (bm25(&query, d, &stats, config.bm25), i))
        .filter(|(s, _)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let entries = scored
        .into_iter()
        .take(config.prf_docs)
        .map(|(_, i)| corpus[i].clone())
        .collect();
    Ok(ExpansionSources {
        entries,
        strategy: SourceStrategy::Prf,
        missing_ids,
    })
}

/// Documents for the projection model: every CWE entry plus the query itself.
pub fn projection_documents(corpus: &[CweEntry], query: &TokenStream) -> Vec<TokenStream> {
    let mut docs: Vec<TokenStream> = corpus.iter().map(|e| sanitize(&e.text())).collect();
    docs.push(query.clone());
    docs
}

pub fn expand(
    record: &VulnRecord,
    sources: &[CweEntry],
    model: &ProjectionModel,
    config: &ExpansionConfig,
) -> ExpandedQuery {
    let original = sanitize(&record.description);
    let original_set: HashSet<&str> = original.iter().collect();
    let query_latent = model.project(&original);

    let mut seen: HashSet<String> = HashSet::new();
    let mut terms = Vec::new();
    for source in sources {
        for token in sanitize(&source.text()).tokens {
            if original_set.contains(token.as_str()) || !seen.insert(token.clone()) {
                continue;
            }
            let weight = match model.term_vector(&token) {
                Some(v) => config.alpha * cosine(&v, &query_latent),
                None => {
                    warn!("expansion term {token} outside projection vocabulary");
                    continue;
                }
            };
            if weight < config.weight_floor {
                continue;
            }
            terms.push(WeightedTerm {
                term: token,
                weight,
            });
        }
    }
    terms.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.term.cmp(&b.term)));

    ExpandedQuery {
        description: record.description.clone(),
        original,
        repetition: config.repetition,
        terms,
        sources: sources.iter().map(|s| s.cwe_id.clone()).collect(),
    }
}

/// Source selection, projection, and reweighting for one record.
pub fn expand_record(
    record: &VulnRecord,
    corpus: &[CweEntry],
    config: &ExpansionConfig,
) -> Result<ExpandedQuery> {
    let sources = select_expansion_sources(record, corpus, config)?;
    let query = sanitize(&record.description);
    let docs = projection_documents(corpus, &query);
    let model = ProjectionModel::build(&docs, config.latent_k)?;
    Ok(expand(record, &sources.entries, &model, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn record(desc: &str, cwes: &[&str]) -> VulnRecord {
        VulnRecord {
            cve_id: "CVE-TEST-1".into(),
            description: desc.into(),
            cwe_ids: cwes.iter().map(|s| s.to_string()).collect(),
            patch_refs: vec![],
            repo_path: PathBuf::from("."),
        }
    }

    fn entry(id: &str, name: &str, desc: &str) -> CweEntry {
        CweEntry {
            cwe_id: id.into(),
            name: name.into(),
            description: desc.into(),
        }
    }

    fn toy_corpus() -> Vec<CweEntry> {
        vec![
            entry(
                "CWE-502",
                "Deserialization of Untrusted Data",
                "The product deserializes untrusted data without sufficiently verifying that the resulting data will be valid.",
            ),
            entry(
                "CWE-89",
                "SQL Injection",
                "The product constructs an SQL command using externally-influenced input without neutralizing special elements.",
            ),
            entry(
                "CWE-79",
                "Cross-site Scripting",
                "The product does not neutralize user-controllable input before it is placed in output used as a web page.",
            ),
        ]
    }

    #[test]
    fn mapped_ids_take_priority() {
        let r = record("anything at all", &["CWE-502"]);
        let s = select_expansion_sources(&r, &toy_corpus(), &ExpansionConfig::default()).unwrap();
        assert_eq!(s.strategy, SourceStrategy::Mapped);
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.entries[0].cwe_id, "CWE-502");
    }

    #[test]
    fn prf_picks_the_only_overlapping_entry() {
        let r = record("crafted serialized object is deserialized from untrusted input stream", &[]);
        let corpus = vec![
            entry("CWE-1", "Alpha", "buffer overflow in native memory copy"),
            entry("CWE-2", "Beta", "untrusted object deserialization"),
            entry("CWE-3", "Gamma", "weak password hashing"),
        ];
        let s = select_expansion_sources(&r, &corpus, &ExpansionConfig::default()).unwrap();
        assert_eq!(s.strategy, SourceStrategy::Prf);
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.entries[0].cwe_id, "CWE-2");
    }

    #[test]
    fn unknown_id_falls_back_to_prf() {
        let r = record("untrusted data is deserialized", &["CWE-99999"]);
        let s = select_expansion_sources(&r, &toy_corpus(), &ExpansionConfig::default()).unwrap();
        assert_eq!(s.strategy, SourceStrategy::Prf);
        assert_eq!(s.missing_ids, vec!["CWE-99999"]);
        assert_eq!(s.entries[0].cwe_id, "CWE-502");
    }

    #[test]
    fn empty_corpus_is_config_error() {
        let r = record("x", &[]);
        assert!(matches!(
            select_expansion_sources(&r, &[], &ExpansionConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn no_sources_keeps_original_only() {
        let r = record("remote attackers execute arbitrary code", &[]);
        let docs = vec![sanitize(&r.description)];
        let model = ProjectionModel::build(&docs, 1).unwrap();
        let q = expand(&r, &[], &model, &ExpansionConfig::default());
        assert!(q.terms.is_empty());
        assert_eq!(q.repetition, 5);
        let flat = q.flatten();
        assert_eq!(flat.matches("remote").count(), 5);
    }

    #[test]
    fn original_terms_never_reused() {
        let r = record("untrusted data deserialization in broker", &["CWE-502"]);
        let q = expand_record(&r, &toy_corpus(), &ExpansionConfig::default()).unwrap();
        let originals: HashSet<&str> = q.original.iter().collect();
        let mut seen = HashSet::new();
        for t in &q.terms {
            assert!(!originals.contains(t.term.as_str()), "{} duplicated", t.term);
            assert!(seen.insert(t.term.clone()));
            assert!((0.0..=1.0).contains(&t.weight));
        }
        assert!(!q.terms.iter().any(|t| t.term == "untrusted" || t.term == "data"));
    }

    #[test]
    fn alpha_scales_weights() {
        let r = record("untrusted data deserialization in broker", &["CWE-502"]);
        let base = expand_record(&r, &toy_corpus(), &ExpansionConfig::default()).unwrap();
        let cfg = ExpansionConfig {
            alpha: 2.5,
            ..Default::default()
        };
        let scaled = expand_record(&r, &toy_corpus(), &cfg).unwrap();
        assert_eq!(base.terms.len(), scaled.terms.len());
        for (a, b) in base.terms.iter().zip(&scaled.terms) {
            assert_eq!(a.term, b.term);
            assert!((a.weight * 2.5 - b.weight).abs() < 1e-12);
            assert!(b.weight <= 2.5 + 1e-12);
        }
    }

    #[test]
    fn expansion_is_deterministic() {
        let r = record("untrusted data deserialization in broker", &[]);
        let a = expand_record(&r, &toy_corpus(), &ExpansionConfig::default()).unwrap();
        let b = expand_record(&r, &toy_corpus(), &ExpansionConfig::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
