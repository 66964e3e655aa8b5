//! Vulnerability records, the CWE description corpus, and ground-truth labels.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

/// Operating mode, decided by whether a record carries patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PatchPresent,
    PatchAbsent,
}

/// A disclosed vulnerability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnRecord {
    pub cve_id: String,
    pub description: String,
    #[serde(default)]
    pub cwe_ids: Vec<String>,
    /// Unified-diff text, or a path to a `.diff`/`.patch` file.
    #[serde(default)]
    pub patch_refs: Vec<String>,
    pub repo_path: PathBuf,
}

/// Where the text of one patch comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatchSource {
    Inline(String),
    File(PathBuf),
}

impl PatchSource {
    pub fn classify(raw: &str) -> PatchSource {
        let looks_like_diff = raw.contains('\n')
            && (raw.contains("@@ ") || raw.starts_with("diff ") || raw.starts_with("--- "));
        if looks_like_diff {
            PatchSource::Inline(raw.to_string())
        } else {
            PatchSource::File(PathBuf::from(raw.trim()))
        }
    }
}

impl VulnRecord {
    pub fn mode(&self) -> Mode {
        if self.patch_refs.is_empty() {
            Mode::PatchAbsent
        } else {
            Mode::PatchPresent
        }
    }

    pub fn patch_sources(&self) -> Vec<PatchSource> {
        self.patch_refs.iter().map(|r| PatchSource::classify(r)).collect()
    }

    /// Reads every patch, resolving relative file references against `base_dir`.
    pub fn load_patch_texts(&self, base_dir: &Path) -> Result<Vec<String>> {
        self.patch_sources()
            .into_iter()
            .map(|src| match src {
                PatchSource::Inline(text) => Ok(text),
                PatchSource::File(path) => read_to_string(&resolve(base_dir, &path)),
            })
            .collect()
    }

    pub fn resolved_repo(&self, base_dir: &Path) -> PathBuf {
        resolve(base_dir, &self.repo_path)
    }

    fn validate(&self) -> Result<()> {
        if self.cve_id.trim().is_empty() {
            return Err(Error::Validation("record with empty cve_id".into()));
        }
        if self.description.trim().is_empty() {
            return Err(Error::Validation(format!(
                "{}: description is empty",
                self.cve_id
            )));
        }
        Ok(())
    }
}

fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CweEntry {
    pub cwe_id: String,
    pub name: String,
    pub description: String,
}

impl CweEntry {
    /// Text used both for retrieval and as the expansion ingredient.
    pub fn text(&self) -> String {
        format!("{} {}", self.name, self.description)
    }
}

/// Canonical `CWE-<n>` spelling; bare numbers are accepted.
pub fn normalize_cwe_id(raw: &str) -> String {
    let t = raw.trim();
    let digits = t
        .strip_prefix("CWE-")
        .or_else(|| t.strip_prefix("cwe-"))
        .unwrap_or(t);
    if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
        format!("CWE-{digits}")
    } else {
        t.to_string()
    }
}

pub fn find_cwe<'a>(corpus: &'a [CweEntry], id: &str) -> Option<&'a CweEntry> {
    let wanted = normalize_cwe_id(id);
    corpus.iter().find(|e| normalize_cwe_id(&e.cwe_id) == wanted)
}

/// A function reference in ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VfRef {
    pub qualified_name: String,
    #[serde(default)]
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cve_id: String,
    pub vf: Vec<VfRef>,
}

fn load_json_array<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))
}

pub fn load_vuln_records(path: &Path) -> Result<Vec<VulnRecord>> {
    let records: Vec<VulnRecord> = load_json_array(path)?;
    validate_records(&records)?;
    Ok(records)
}

pub fn parse_vuln_records(text: &str) -> Result<Vec<VulnRecord>> {
    let records: Vec<VulnRecord> =
        serde_json::from_str(text).map_err(|e| Error::json("<records>", &e))?;
    validate_records(&records)?;
    Ok(records)
}

fn validate_records(records: &[VulnRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert(r.cve_id.as_str()) {
            return Err(Error::Validation(format!("duplicate cve_id {}", r.cve_id)));
        }
    }
    Ok(())
}

pub fn load_cwe_corpus(path: &Path) -> Result<Vec<CweEntry>> {
    let entries: Vec<CweEntry> = load_json_array(path)?;
    dedup_cwe(entries)
}

/// Drops exact duplicates; two entries sharing an id with different content is an error.
pub fn dedup_cwe(entries: Vec<CweEntry>) -> Result<Vec<CweEntry>> {
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<CweEntry> = Vec::with_capacity(entries.len());
    for e in entries {
        if e.cwe_id.trim().is_empty() {
            return Err(Error::Validation("CWE entry with empty cwe_id".into()));
        }
        if e.description.trim().is_empty() {
            return Err(Error::Validation(format!(
                "{}: description is empty",
                e.cwe_id
            )));
        }
        let key = normalize_cwe_id(&e.cwe_id);
        match by_id.get(&key) {
            Some(&i) if out[i] == e => warn!("duplicate CWE entry {} ignored", e.cwe_id),
            Some(_) => {
                return Err(Error::Validation(format!(
                    "conflicting entries for {}",
                    e.cwe_id
                )))
            }
            None => {
                by_id.insert(key, out.len());
                out.push(e);
            }
        }
    }
    Ok(out)
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let truths: Vec<GroundTruth> = load_json_array(path)?;
    let mut seen = HashSet::new();
    for t in &truths {
        if t.vf.is_empty() {
            return Err(Error::Validation(format!("{}: empty vf list", t.cve_id)));
        }
        if !seen.insert(t.cve_id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate ground truth for {}",
                t.cve_id
            )));
        }
    }
    Ok(truths)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("cannot serialize: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ACTIVEMQ: &str = r#"[{
        "cve_id": "CVE-2015-5254",
        "description": "Apache ActiveMQ 5.x before 5.13.0 does not restrict the classes that can be serialized in the broker, which allows remote attackers to execute arbitrary code via a crafted serialized Java Message Service ObjectMessage object.",
        "cwe_ids": ["CWE-502"],
        "patch_refs": ["patches/activemq.diff"],
        "repo_path": "repos/activemq"
    }]"#;

    #[test]
    fn loads_single_record() {
        let recs = parse_vuln_records(ACTIVEMQ).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].cve_id, "CVE-2015-5254");
        assert_eq!(recs[0].cwe_ids, vec!["CWE-502"]);
        assert_eq!(recs[0].mode(), Mode::PatchPresent);
        assert_eq!(
            recs[0].patch_sources(),
            vec![PatchSource::File("patches/activemq.diff".into())]
        );
    }

    #[test]
    fn empty_array_is_empty() {
        assert!(parse_vuln_records("[]").unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = r#"[{"cve_id":"CVE-1","description":"a","repo_path":"r"},
                       {"cve_id":"CVE-1","description":"b","repo_path":"r"}]"#;
        match parse_vuln_records(text) {
            Err(Error::Validation(msg)) => assert!(msg.contains("CVE-1")),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn blank_description_rejected() {
        let text = r#"[{"cve_id":"CVE-1","description":"   ","repo_path":"r"}]"#;
        assert!(matches!(parse_vuln_records(text), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse_vuln_records("[{\"cve_id\": }]").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 1);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inline_patch_detected() {
        let diff = "--- a/x.java\n+++ b/x.java\n@@ -1 +1 @@\n-a\n+b\n";
        assert_eq!(PatchSource::classify(diff), PatchSource::Inline(diff.into()));
    }

    #[test]
    fn mode_follows_patch_refs() {
        let mut r = parse_vuln_records(ACTIVEMQ).unwrap().remove(0);
        r.patch_refs.clear();
        assert_eq!(r.mode(), Mode::PatchAbsent);
    }

    fn cwe(id: &str, desc: &str) -> CweEntry {
        CweEntry {
            cwe_id: id.into(),
            name: format!("name {id}"),
            description: desc.into(),
        }
    }

    #[test]
    fn cwe_corpus_counts_and_lookup() {
        let entries = vec![
            CweEntry {
                cwe_id: "CWE-502".into(),
                name: "Deserialization of Untrusted Data".into(),
                description: "The product deserializes untrusted data without sufficiently ensuring that the resulting data will be valid.".into(),
            },
            cwe("CWE-79", "xss"),
            cwe("CWE-89", "sqli"),
        ];
        let corpus = dedup_cwe(entries).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(
            find_cwe(&corpus, "CWE-502").unwrap().name,
            "Deserialization of Untrusted Data"
        );
        assert!(find_cwe(&corpus, "502").is_some());
        assert!(find_cwe(&corpus, "CWE-1").is_none());
    }

    #[test]
    fn cwe_empty_description_rejected() {
        assert!(matches!(
            dedup_cwe(vec![cwe("CWE-1", " ")]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn cwe_conflict_rejected_and_exact_duplicate_dropped() {
        assert_eq!(
            dedup_cwe(vec![cwe("CWE-1", "a"), cwe("CWE-1", "a")])
                .unwrap()
                .len(),
            1
        );
        assert!(dedup_cwe(vec![cwe("CWE-1", "a"), cwe("CWE-1", "b")]).is_err());
    }

    #[test]
    fn ground_truth_requires_vfs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.json");
        std::fs::write(&p, r#"[{"cve_id":"CVE-1","vf":[]}]"#).unwrap();
        assert!(load_ground_truth(&p).is_err());
        std::fs::write(
            &p,
            r#"[{"cve_id":"CVE-1","vf":[{"qualified_name":"a.B#c()","file":"B.java"}]}]"#,
        )
        .unwrap();
        assert_eq!(load_ground_truth(&p).unwrap()[0].vf.len(), 1);
    }

    fn arb_record() -> impl Strategy<Value = VulnRecord> {
        (
            "CVE-[0-9]{4}-[0-9]{3,6}",
            "[a-zA-Z][a-zA-Z .,\"\\\\]{0,40}",
            proptest::collection::vec("CWE-[0-9]{1,4}", 0..3),
            proptest::collection::vec("[a-z/]{1,12}\\.diff", 0..3),
            "[a-z/]{1,16}",
        )
            .prop_map(|(cve_id, description, cwe_ids, patch_refs, repo)| VulnRecord {
                cve_id,
                description,
                cwe_ids,
                patch_refs,
                repo_path: PathBuf::from(repo),
            })
    }

    proptest! {
        #[test]
        fn records_round_trip(recs in proptest::collection::vec(arb_record(), 0..4)) {
            let mut seen = HashSet::new();
            let recs: Vec<_> = recs.into_iter().filter(|r| seen.insert(r.cve_id.clone())).collect();
            let text = serde_json::to_string(&recs).unwrap();
            let back = parse_vuln_records(&text).unwrap();
            prop_assert_eq!(&back, &recs);
            let modes: Vec<_> = back.iter().map(|r| r.mode() == Mode::PatchAbsent).collect();
            let expected: Vec<_> = recs.iter().map(|r| r.patch_refs.is_empty()).collect();
            prop_assert_eq!(modes, expected);
        }
    }
}
