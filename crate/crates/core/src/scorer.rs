//! Patch-absent candidate selection: score every non-test function against the
//! query and keep the best `cap`. Also exports training pairs for an external
//! relevance classifier.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Mode;
use crate::error::{Error, Result};
use crate::expansion::{sanitize, ExpandedQuery};
use crate::java::{FunctionRecord, RepoIndex};
use crate::tracker::{Candidate, CandidateSet, PatternTag};

pub const SCORER_ENDPOINT_ENV: &str = "VF_SCORER_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "endpoint")]
pub enum ScorerBackend {
    Lexical,
    Remote(String),
}

impl ScorerBackend {
    /// Validates the endpoint of a remote backend.
    pub fn validate(&self) -> Result<()> {
        if let ScorerBackend::Remote(url) = self {
            score_url(url)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    /// `lexical` or `remote`.
    pub backend: String,
    /// Remote endpoint; falls back to `VF_SCORER_ENDPOINT`.
    pub endpoint: Option<String>,
    pub cap: usize,
    pub batch_size: usize,
    pub retries: usize,
    pub timeout_secs: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            backend: "lexical".into(),
            endpoint: None,
            cap: 100,
            batch_size: 64,
            retries: 3,
            timeout_secs: 60,
        }
    }
}

impl ScorerConfig {
    pub fn resolve_backend(&self) -> Result<ScorerBackend> {
        match self.backend.as_str() {
            "lexical" => Ok(ScorerBackend::Lexical),
            "remote" => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .or_else(|| std::env::var(SCORER_ENDPOINT_ENV).ok())
                    .ok_or_else(|| {
                        Error::Config(format!("remote scorer needs an endpoint or {SCORER_ENDPOINT_ENV}"))
                    })?;
                let b = ScorerBackend::Remote(endpoint);
                b.validate()?;
                Ok(b)
            }
            other => Err(Error::Config(format!("unknown scorer backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFunction {
    pub id: String,
    pub score: f64,
}

/// Document text of a function: its body plus its qualified name.
fn document(f: &FunctionRecord) -> String {
    format!("{}\n{}", f.body, f.qualified_name)
}

/// TF-IDF statistics over the non-test functions of one repository.
#[derive(Debug, Clone)]
pub struct LexicalModel {
    n_docs: usize,
    doc_freq: HashMap<String, usize>,
}

impl LexicalModel {
    pub fn new(index: &RepoIndex) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        for f in index.non_test_functions() {
            n_docs += 1;
            let unique: BTreeSet<String> = sanitize(&document(f)).iter().map(str::to_string).collect();
            for t in unique {
                *doc_freq.entry(t).or_default() += 1;
            }
        }
        LexicalModel { n_docs, doc_freq }
    }

    /// Smoothed IDF `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0);
        ((1.0 + self.n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// `(1 + cos) / 2` between the weighted query and the function's TF-IDF vector.
    pub fn score(&self, query: &ExpandedQuery, function: &FunctionRecord) -> f64 {
        let weights = query.term_weights();
        let doc = sanitize(&document(function));
        let counts = doc.counts();
        let mut dot = 0.0;
        let mut qn = 0.0;
        for (term, w) in &weights {
            let q = w * self.idf(term);
            qn += q * q;
            if let Some(&tf) = counts.get(term.as_str()) {
                dot += q * tf as f64 * self.idf(term);
            }
        }
        let dn: f64 = counts
            .iter()
            .map(|(t, &tf)| {
                let d = tf as f64 * self.idf(t);
                d * d
            })
            .sum();
        if qn == 0.0 || dn == 0.0 {
            return 0.5;
        }
        let cos = (dot / (qn.sqrt() * dn.sqrt())).clamp(-1.0, 1.0);
        (1.0 + cos) / 2.0
    }
}

/// Lexical score of one function, with IDF taken from `model`.
pub fn lexical_score(query: &ExpandedQuery, function: &FunctionRecord, model: &LexicalModel) -> f64 {
    model.score(query, function)
}

#[derive(Serialize)]
struct RemoteMethod<'a> {
    id: &'a str,
    body: &'a str,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    description: &'a str,
    methods: Vec<RemoteMethod<'a>>,
}

#[derive(Deserialize)]
struct RemoteResponse {
    scores: Vec<RemoteScore>,
}

#[derive(Deserialize)]
struct RemoteScore {
    id: String,
    score: f64,
}

fn score_url(endpoint: &str) -> Result<reqwest::Url> {
    let mut url = reqwest::Url::parse(endpoint)
        .map_err(|e| Error::Config(format!("invalid scorer endpoint {endpoint:?}: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(Error::Config(format!("scorer endpoint must be http(s): {endpoint}")));
    }
    if !url.path().trim_end_matches('/').ends_with("/score") {
        let path = format!("{}/score", url.path().trim_end_matches('/'));
        url.set_path(&path);
    }
    Ok(url)
}

/// Scores `functions` with a remote relevance model.
pub fn remote_score(
    description: &str,
    functions: &[&FunctionRecord],
    endpoint: &str,
    config: &ScorerConfig,
) -> Result<Vec<ScoredFunction>> {
    let url = score_url(endpoint)?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(config.timeout_secs))
        .build()
        .map_err(|e| Error::Transport(e.to_string()))?;
    let mut out = Vec::with_capacity(functions.len());
    for batch in functions.chunks(config.batch_size.max(1)) {
        let request = RemoteRequest {
            description,
            methods: batch.iter().map(|f| RemoteMethod { id: &f.id, body: &f.body }).collect(),
        };
        let response = post_with_retries(&client, &url, &request, config.retries)?;
        let mut by_id: HashMap<String, f64> = HashMap::new();
        for s in response.scores {
            if !s.score.is_finite() {
                return Err(Error::Protocol(format!("non-finite score for {}", s.id)));
            }
            let clamped = s.score.clamp(0.0, 1.0);
            if clamped != s.score {
                warn!("scorer returned {} for {}; clamped to {clamped}", s.score, s.id);
            }
            by_id.insert(s.id, clamped);
        }
        for f in batch {
            let score = by_id
                .get(&f.id)
                .copied()
                .ok_or_else(|| Error::Protocol(format!("scorer response is missing id {}", f.id)))?;
            out.push(ScoredFunction { id: f.id.clone(), score });
        }
    }
    Ok(out)
}

fn post_with_retries(
    client: &reqwest::blocking::Client,
    url: &reqwest::Url,
    request: &RemoteRequest<'_>,
    retries: usize,
) -> Result<RemoteResponse> {
    let mut last = String::new();
    for attempt in 0..=retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(100 * (1 << attempt.min(5))));
            warn!("retrying scorer request (attempt {}): {last}", attempt + 1);
        }
        match client.post(url.clone()).json(request).send() {
            Ok(resp) if resp.status().is_server_error() => {
                last = format!("server error {}", resp.status());
            }
            Ok(resp) if !resp.status().is_success() => {
                return Err(Error::Protocol(format!("scorer answered {}", resp.status())));
            }
            Ok(resp) => {
                let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
                return serde_json::from_str(&text)
                    .map_err(|e| Error::Protocol(format!("malformed scorer response: {e}")));
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::Transport(format!("scorer unreachable after {} attempts: {last}", retries + 1)))
}

/// Scores every non-test function, keeps the top `config.cap`.
pub fn select_candidates(
    cve_id: &str,
    query: &ExpandedQuery,
    index: &RepoIndex,
    backend: &ScorerBackend,
    config: &ScorerConfig,
) -> Result<CandidateSet> {
    let functions: Vec<&FunctionRecord> = index.non_test_functions().collect();
    if functions.is_empty() {
        return Err(Error::Empty(format!("{cve_id}: repository has no non-test functions to score")));
    }
    let scored: Vec<ScoredFunction> = match backend {
        ScorerBackend::Lexical => {
            let model = LexicalModel::new(index);
            functions
                .iter()
                .map(|f| ScoredFunction { id: f.id.clone(), score: model.score(query, f) })
                .collect()
        }
        ScorerBackend::Remote(endpoint) => remote_score(&query.description, &functions, endpoint, config)?,
    };
    let mut ranked: Vec<(&FunctionRecord, f64)> = functions.into_iter().zip(scored.iter().map(|s| s.score)).collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| a.0.qualified_name.cmp(&b.0.qualified_name))
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    ranked.truncate(config.cap);
    let candidates = ranked
        .into_iter()
        .map(|(f, s)| {
            let mut c = Candidate::from_function(f, vec![PatternTag::ScorerTopK], format!("score {s:.6}"));
            c.score = Some(s);
            c
        })
        .collect();
    Ok(CandidateSet { cve_id: cve_id.to_string(), mode: Mode::PatchAbsent, candidates })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub cve_id: String,
    pub description: String,
    pub method: String,
    pub label: u8,
}

fn cve_rng(seed: u64, cve_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(cve_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Positives are the candidates; negatives a seeded uniform sample of the other
/// non-test functions, `ratio` per positive (all of them if too few).
pub fn training_pairs(
    cve_id: &str,
    description: &str,
    index: &RepoIndex,
    candidates: &CandidateSet,
    ratio: usize,
    seed: u64,
) -> Vec<TrainingPair> {
    let positive_ids: BTreeSet<&str> = candidates.ids().into_iter().collect();
    let pair = |f: &FunctionRecord, label| TrainingPair {
        cve_id: cve_id.to_string(),
        description: description.to_string(),
        method: f.body.clone(),
        label,
    };
    let positives: Vec<&FunctionRecord> = index
        .non_test_functions()
        .filter(|f| positive_ids.contains(f.id.as_str()))
        .collect();
    let pool: Vec<&FunctionRecord> = index
        .non_test_functions()
        .filter(|f| !positive_ids.contains(f.id.as_str()))
        .collect();
    let wanted = positives.len() * ratio;
    let mut chosen: Vec<usize> = if wanted >= pool.len() {
        if wanted > pool.len() {
            warn!(
                "{cve_id}: only {} negatives available for {} positives at ratio {ratio}",
                pool.len(),
                positives.len()
            );
        }
        (0..pool.len()).collect()
    } else {
        let mut rng = cve_rng(seed, cve_id);
        rand::seq::index::sample(&mut rng, pool.len(), wanted).into_vec()
    };
    chosen.sort_unstable();
    let mut out: Vec<TrainingPair> = positives.into_iter().map(|f| pair(f, 1)).collect();
    out.extend(chosen.into_iter().map(|i| pair(pool[i], 0)));
    out
}

/// Writes pairs as line-delimited JSON.
pub fn write_training_jsonl(path: &Path, pairs: &[TrainingPair]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for p in pairs {
        let line = serde_json::to_string(p).expect("pairs serialize");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::{TokenStream, WeightedTerm};
    use crate::http_stub::serve;
    use std::path::Path;

    fn index(files: &[(&str, &str)]) -> RepoIndex {
        RepoIndex::from_sources(
            Path::new("/repo"),
            files.iter().map(|(p, s)| (p.to_string(), s.to_string())).collect(),
        )
        .unwrap()
    }

    fn query(text: &str) -> ExpandedQuery {
        ExpandedQuery {
            description: text.to_string(),
            original: sanitize(text),
            repetition: 5,
            terms: Vec::new(),
            sources: Vec::new(),
        }
    }

    fn many(n: usize) -> RepoIndex {
        let body: String = (0..n).map(|i| format!("  void m{i}() {{ run{i}(); }}\n")).collect();
        index(&[("src/A.java", &format!("class A {{\n{body}}}\n"))])
    }

    #[test]
    fn disjoint_terms_score_half() {
        let idx = index(&[("A.java", "class A { void alpha() { beta(); } }")]);
        let m = LexicalModel::new(&idx);
        assert_eq!(m.score(&query("xml deserialization"), &idx.functions[0]), 0.5);
    }

    #[test]
    fn identical_text_scores_one() {
        let idx = index(&[("A.java", "class A { void alpha() { beta(); } void gamma() {} }")]);
        let f = &idx.functions[0];
        let text = format!("{}\n{}", f.body, f.qualified_name);
        let s = LexicalModel::new(&idx).score(&query(&text), f);
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn scale_invariant() {
        let idx = index(&[("A.java", "class A { void parseXml() { read(); } void writeFile() { parse(); } }")]);
        let m = LexicalModel::new(&idx);
        let mut q = query("parse xml file");
        q.terms.push(WeightedTerm { term: "read".into(), weight: 0.4 });
        let base: Vec<f64> = idx.functions.iter().map(|f| m.score(&q, f)).collect();
        let mut scaled = q.clone();
        scaled.repetition = 15;
        scaled.terms[0].weight = 1.2;
        let other: Vec<f64> = idx.functions.iter().map(|f| m.score(&scaled, f)).collect();
        for (a, b) in base.iter().zip(&other) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_query_neutral() {
        let idx = index(&[("A.java", "class A { void alpha() {} }")]);
        let mut q = query("");
        q.original = TokenStream::default();
        assert_eq!(LexicalModel::new(&idx).score(&q, &idx.functions[0]), 0.5);
    }

    #[test]
    fn cap_binds() {
        let cfg = ScorerConfig::default();
        let set = select_candidates("X", &query("run"), &many(150), &ScorerBackend::Lexical, &cfg).unwrap();
        assert_eq!(set.candidates.len(), 100);
        assert_eq!(set.mode, Mode::PatchAbsent);
        let set = select_candidates("X", &query("run"), &many(50), &ScorerBackend::Lexical, &cfg).unwrap();
        assert_eq!(set.candidates.len(), 50);
        assert!(set.candidates.iter().all(|c| c.tags == vec![PatternTag::ScorerTopK]));
    }

    #[test]
    fn ties_by_name() {
        let set = select_candidates("X", &query("zzz"), &many(3), &ScorerBackend::Lexical, &ScorerConfig::default())
            .unwrap();
        let names: Vec<_> = set.candidates.iter().map(|c| c.qualified_name.as_str()).collect();
        assert_eq!(names, vec!["A#m0()", "A#m1()", "A#m2()"]);
    }

    #[test]
    fn no_functions_is_empty_error() {
        let idx = index(&[("src/test/ATest.java", "class ATest { void t() {} }")]);
        let r = select_candidates("X", &query("a"), &idx, &ScorerBackend::Lexical, &ScorerConfig::default());
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    fn stub_reply(f: impl Fn(&str) -> Option<f64> + Send + 'static) -> crate::http_stub::Stub {
        serve(move |path, body| {
            assert_eq!(path, "/score");
            let v: serde_json::Value = serde_json::from_str(body).unwrap();
            let scores: Vec<serde_json::Value> = v["methods"]
                .as_array()
                .unwrap()
                .iter()
                .filter_map(|m| {
                    let id = m["id"].as_str().unwrap();
                    f(id).map(|s| serde_json::json!({"id": id, "score": s}))
                })
                .collect();
            (200, serde_json::json!({ "scores": scores }).to_string())
        })
    }

    #[test]
    fn remote_echo_half() {
        let stub = stub_reply(|_| Some(0.5));
        let idx = many(5);
        let fs: Vec<_> = idx.functions.iter().collect();
        let cfg = ScorerConfig { batch_size: 2, ..Default::default() };
        let s = remote_score("d", &fs, &stub.url, &cfg).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|x| x.score == 0.5));
    }

    #[test]
    fn remote_missing_ids_is_protocol_error() {
        let stub = stub_reply(|id| id.ends_with("m0()").then_some(0.9));
        let idx = many(2);
        let fs: Vec<_> = idx.functions.iter().collect();
        let r = remote_score("d", &fs, &format!("{}/score", stub.url), &ScorerConfig::default());
        assert!(matches!(r, Err(Error::Protocol(_))), "{r:?}");
    }

    #[test]
    fn remote_clamps() {
        let stub = stub_reply(|_| Some(1.7));
        let idx = many(1);
        let fs: Vec<_> = idx.functions.iter().collect();
        let s = remote_score("d", &fs, &stub.url, &ScorerConfig::default()).unwrap();
        assert_eq!(s[0].score, 1.0);
    }

    #[test]
    fn remote_malformed_and_unreachable() {
        let stub = serve(|_, _| (200, "{\"nope\": 1}".into()));
        let idx = many(1);
        let fs: Vec<_> = idx.functions.iter().collect();
        assert!(matches!(
            remote_score("d", &fs, &stub.url, &ScorerConfig::default()),
            Err(Error::Protocol(_))
        ));
        let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", dead.local_addr().unwrap());
        drop(dead);
        let cfg = ScorerConfig { retries: 1, timeout_secs: 2, ..Default::default() };
        assert!(matches!(remote_score("d", &fs, &url, &cfg), Err(Error::Transport(_))));
    }

    #[test]
    fn endpoint_validation() {
        assert_eq!(score_url("http://h:1").unwrap().as_str(), "http://h:1/score");
        assert_eq!(score_url("http://h:1/api/").unwrap().as_str(), "http://h:1/api/score");
        assert!(score_url("not a url").is_err());
        assert!(score_url("ftp://h/x").is_err());
        let cfg = ScorerConfig { backend: "remote".into(), endpoint: Some("::".into()), ..Default::default() };
        assert!(matches!(cfg.resolve_backend(), Err(Error::Config(_))));
    }

    fn positives(idx: &RepoIndex, n: usize) -> CandidateSet {
        CandidateSet {
            cve_id: "CVE-1".into(),
            mode: Mode::PatchPresent,
            candidates: idx.functions[..n]
                .iter()
                .map(|f| Candidate::from_function(f, vec![PatternTag::ModifiedFallback], String::new()))
                .collect(),
        }
    }

    #[test]
    fn training_ratio_and_exhaustion() {
        let idx = many(500);
        let pairs = training_pairs("CVE-1", "d", &idx, &positives(&idx, 2), 100, 7);
        assert_eq!(pairs.iter().filter(|p| p.label == 1).count(), 2);
        assert_eq!(pairs.iter().filter(|p| p.label == 0).count(), 200);
        let idx = many(50);
        let pairs = training_pairs("CVE-1", "d", &idx, &positives(&idx, 2), 100, 7);
        assert_eq!(pairs.iter().filter(|p| p.label == 0).count(), 48);
    }

    #[test]
    fn training_export_deterministic() {
        let idx = many(300);
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, seed| {
            let p = dir.path().join(name);
            write_training_jsonl(&p, &training_pairs("CVE-1", "d", &idx, &positives(&idx, 1), 100, seed)).unwrap();
            std::fs::read(p).unwrap()
        };
        assert_eq!(write("a.jsonl", 7), write("b.jsonl", 7));
        assert_ne!(write("c.jsonl", 7), write("d.jsonl", 8));
    }
}
