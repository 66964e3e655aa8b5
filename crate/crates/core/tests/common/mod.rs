//! Fixtures and reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfloc::corpus::{load_cwe_corpus, load_ground_truth, load_vuln_records, CweEntry, GroundTruth, VfRef, VulnRecord};
use vfloc::diff::parse_diff;
use vfloc::eval::{EvalReport, QueryResult};
use vfloc::java::{index_repo, RepoIndex};
use vfloc::ranker::{Comparator, ComparatorError, ComparisonContext, ComparisonOutcome, Contender, RankedEntry};
use vfloc::tracker::{track, PatternTag, TrackerConfig};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub const TRACKER_CASES: [&str; 5] = ["replaced_method", "replaced_class", "additional_arguments", "config_change", "fallback_only"];

pub fn tracker_fixture(name: &str) -> PathBuf {
    fixtures().join("tracker").join(name)
}

pub type Tagged = BTreeMap<String, BTreeSet<PatternTag>>;

/// Candidate ids and tags listed in a case's `expected.json`.
pub fn tracker_expected(name: &str) -> Tagged {
    #[derive(serde::Deserialize)]
    struct Entry {
        id: String,
        tags: BTreeSet<PatternTag>,
    }
    #[derive(serde::Deserialize)]
    struct File {
        candidates: Vec<Entry>,
    }
    let text = std::fs::read_to_string(tracker_fixture(name).join("expected.json")).unwrap();
    let f: File = serde_json::from_str(&text).unwrap();
    f.candidates.into_iter().map(|e| (e.id, e.tags)).collect()
}

/// Candidate ids and tags the tracker produces for a case; test functions are rejected.
pub fn tracker_actual(name: &str, config: &TrackerConfig) -> Tagged {
    let dir = tracker_fixture(name);
    let index = index_repo(&dir.join("repo")).unwrap();
    let hunks = parse_diff(&std::fs::read_to_string(dir.join("patch.diff")).unwrap()).unwrap();
    let set = track(name, &hunks, &index, config).unwrap();
    for c in &set.candidates {
        assert!(!index.function(&c.id).unwrap().is_test, "{} is a test function", c.id);
    }
    set.candidates.into_iter().map(|c| (c.id, c.tags.into_iter().collect())).collect()
}

fn entry(id: &str, name: &str, description: &str) -> CweEntry {
    CweEntry { cwe_id: id.into(), name: name.into(), description: description.into() }
}

/// Three CWE entries; with the query they form the four projection documents
/// used by `tests/oracles/lsa_weights.py`.
pub fn four_doc_corpus() -> Vec<CweEntry> {
    vec![
        entry("CWE-611", "xml entity", "parser resolves external entity reference inside document"),
        entry("CWE-91", "xml injection", "input data inserted into xml document structure query"),
        entry("CWE-22", "path traversal", "external input file path escapes directory"),
    ]
}

pub const ORACLE_QUERY: &str = "xml parser reads external document file";

/// Output of `tests/oracles/lsa_weights.py` (k = 2, sources CWE-611 and CWE-91).
pub const LSA_WEIGHTS: [(&str, f64); 10] = [
    ("entity", 0.7359682174206454),
    ("resolve", 0.7359682174206456),
    ("reference", 0.7359682174206456),
    ("inside", 0.7359682174206456),
    ("injection", 0.9331664795508495),
    ("input", 0.6367315202622537),
    ("data", 0.9331664795508494),
    ("insert", 0.9331664795508495),
    ("structure", 0.9331664795508495),
    ("query", 0.9331664795508495),
];

pub fn record(description: &str, cwes: &[&str]) -> VulnRecord {
    VulnRecord {
        cve_id: "CVE-1".into(),
        description: description.into(),
        cwe_ids: cwes.iter().map(|s| s.to_string()).collect(),
        patch_refs: vec![],
        repo_path: PathBuf::from("."),
    }
}

/// Output of `tests/oracles/metrics_reference.py`.
pub const METRIC_REFERENCE: [(&str, f64); 11] = [
    ("mrr", 0.18888888888888888),
    ("recall@1", 0.0),
    ("recall@3", 0.16666666666666666),
    ("recall@5", 0.3333333333333333),
    ("recall@10", 0.3333333333333333),
    ("me@1", 1.0),
    ("me@3", 2.6666666666666665),
    ("me@5", 4.0),
    ("me@10", 7.333333333333333),
    ("me@50", 22.333333333333332),
    ("me@100", 39.0),
];

/// The three queries of the metric reference script as (ranking, relevant).
pub fn metric_queries() -> Vec<(Vec<String>, Vec<String>)> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        (s(&["a", "b", "c", "d", "e"]), s(&["b", "e"])),
        ((1..=20).map(|i| format!("x{i}")).collect(), s(&["x15"])),
        (s(&["p", "q"]), s(&["z"])),
    ]
}

/// Naive metrics straight from the definitions, for comparison with the library.
pub mod naive {
    pub fn first_rank(ranking: &[String], truth: &[String]) -> Option<usize> {
        let mut i = 0;
        while i < ranking.len() {
            if truth.contains(&ranking[i]) {
                return Some(i + 1);
            }
            i += 1;
        }
        None
    }

    pub fn recall(ranking: &[String], truth: &[String], k: usize) -> f64 {
        let mut found = 0;
        for t in truth {
            if ranking.iter().take(k).any(|r| r == t) {
                found += 1;
            }
        }
        found as f64 / truth.len() as f64
    }

    pub fn mrr(queries: &[(Vec<String>, Vec<String>)]) -> f64 {
        let mut sum = 0.0;
        for (r, t) in queries {
            if let Some(p) = first_rank(r, t) {
                sum += 1.0 / p as f64;
            }
        }
        sum / queries.len() as f64
    }

    pub fn mean_recall(queries: &[(Vec<String>, Vec<String>)], k: usize) -> f64 {
        let mut sum = 0.0;
        for (r, t) in queries {
            sum += recall(r, t, k);
        }
        sum / queries.len() as f64
    }

    pub fn me(queries: &[(Vec<String>, Vec<String>)], k: usize) -> f64 {
        let mut sum = 0.0;
        for (r, t) in queries {
            sum += match first_rank(r, t) {
                Some(p) if p < k => p as f64,
                _ => k as f64,
            };
        }
        sum / queries.len() as f64
    }
}

fn ordering(names: &[String]) -> Vec<RankedEntry> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| RankedEntry {
            rank: i + 1,
            id: n.clone(),
            qualified_name: n.clone(),
            file: String::new(),
            swiss_score: 0.0,
            wins: None,
        })
        .collect()
}

/// Builds a report over synthetic rankings where names double as ids.
pub fn report(queries: &[(Vec<String>, Vec<String>)]) -> EvalReport {
    let results = queries
        .iter()
        .enumerate()
        .map(|(i, (r, t))| {
            let truth: Vec<VfRef> = t.iter().map(|n| VfRef { qualified_name: n.clone(), file: String::new() }).collect();
            QueryResult::new(&format!("Q{i}"), "synthetic", &ordering(r), &truth)
        })
        .collect();
    EvalReport::build("synthetic", results, vec![]).unwrap()
}

/// Looks up `mrr`, `recall@K` or `me@K` in a report.
pub fn metric(r: &EvalReport, name: &str) -> f64 {
    if name == "mrr" {
        return r.mrr;
    }
    let (kind, k) = name.split_once('@').unwrap();
    let k: usize = k.parse().unwrap();
    let list = if kind == "recall" { &r.recall } else { &r.effort };
    list.iter().find(|m| m.k == k).unwrap().value
}

/// Random rankings over a small name space so hits, misses and multi-label truths all occur.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    let universe = rng.gen_range(1..=150);
    let len = rng.gen_range(0..=100.min(universe));
    let mut pool: Vec<usize> = (0..universe).collect();
    let mut ranking = Vec::with_capacity(len);
    for _ in 0..len {
        let i = rng.gen_range(0..pool.len());
        ranking.push(format!("n{}", pool.swap_remove(i)));
    }
    let truth_len = rng.gen_range(1..=3);
    let mut truth: Vec<String> = Vec::new();
    while truth.len() < truth_len {
        let t = format!("n{}", rng.gen_range(0..universe.max(truth_len)));
        if !truth.contains(&t) {
            truth.push(t);
        }
    }
    (ranking, truth)
}

/// A Java repository with `n` non-test methods spread over a few classes.
pub fn synthetic_index(n: usize) -> RepoIndex {
    let words = ["parse", "read", "write", "load", "encode", "decode", "render", "filter", "resolve", "close"];
    let per_class = 10;
    let mut files = Vec::new();
    for c in 0..n.div_ceil(per_class) {
        let mut src = format!("package gen;\n\npublic class C{c} {{\n");
        for m in 0..per_class.min(n - c * per_class) {
            let w = words[(c + m) % words.len()];
            src.push_str(&format!(
                "    public int {w}{m}(int x) {{\n        int y = x + {m};\n        return y * {c};\n    }}\n\n"
            ));
        }
        src.push_str("}\n");
        files.push((format!("src/main/java/gen/C{c}.java"), src));
    }
    RepoIndex::from_sources(Path::new("/synthetic"), files).unwrap()
}

pub fn contenders(n: usize, seed: u64) -> Vec<Contender> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    ids.into_iter()
        .map(|i| Contender {
            id: format!("gen.F{i:04}#m()"),
            qualified_name: format!("gen.F{i:04}#m()"),
            file: format!("gen/F{i:04}.java"),
            body: format!("int m() {{ return {i}; }}"),
        })
        .collect()
}

/// Transitive, tie-free comparator given by a hidden random strength per id.
pub struct TotalOrder {
    pub strength: HashMap<String, u64>,
}

impl TotalOrder {
    pub fn random(cs: &[Contender], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<u64> = (0..cs.len() as u64).collect();
        values.shuffle(&mut rng);
        TotalOrder { strength: cs.iter().map(|c| c.id.clone()).zip(values).collect() }
    }

    pub fn best(&self) -> &str {
        self.strength.iter().max_by_key(|(_, v)| **v).map(|(k, _)| k.as_str()).unwrap()
    }

    /// Ids strongest first.
    pub fn order(&self) -> Vec<String> {
        let mut v: Vec<(&String, &u64)> = self.strength.iter().collect();
        v.sort_by(|a, b| b.1.cmp(a.1));
        v.into_iter().map(|(k, _)| k.clone()).collect()
    }
}

impl Comparator for TotalOrder {
    fn compare(&self, _: &ComparisonContext, a: &Contender, b: &Contender) -> Result<ComparisonOutcome, ComparatorError> {
        Ok(if self.strength[&a.id] > self.strength[&b.id] {
            ComparisonOutcome::FirstWins
        } else {
            ComparisonOutcome::SecondWins
        })
    }
}

/// Copies a fixture tree into `dest`.
pub fn copy_tree(src: &Path, dest: &Path) {
    for entry in walkdir::WalkDir::new(src) {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(src).unwrap();
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).unwrap();
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

/// The bundled three-record benchmark: records, labels, records directory, CWE corpus.
pub struct Bench {
    pub records: Vec<VulnRecord>,
    pub truths: Vec<GroundTruth>,
    pub base_dir: PathBuf,
    pub cwe: Vec<CweEntry>,
}

pub fn bench() -> Bench {
    let dir = fixtures().join("bench");
    Bench {
        records: load_vuln_records(&dir.join("records.json")).unwrap(),
        truths: load_ground_truth(&dir.join("truth.json")).unwrap(),
        base_dir: dir,
        cwe: load_cwe_corpus(&fixtures().join("cwe.json")).unwrap(),
    }
}

impl Bench {
    pub fn record(&self, cve: &str) -> &VulnRecord {
        self.records.iter().find(|r| r.cve_id == cve).unwrap()
    }

    pub fn truth(&self, cve: &str) -> &GroundTruth {
        self.truths.iter().find(|t| t.cve_id == cve).unwrap()
    }
}
