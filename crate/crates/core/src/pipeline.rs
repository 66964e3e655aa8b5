//! Stage composition: expansion, candidate selection, ranking and evaluation.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::config::{ComparatorBackend, ModeChoice, RunConfig};
use crate::corpus::{GroundTruth, Mode, VulnRecord};
use crate::diff::parse_diffs;
use crate::error::{Error, Result};
use crate::eval::{vf_matches, EvalReport, QueryResult};
use crate::expansion::{expand_record, ExpandedQuery};
use crate::java::{index_repo, RepoIndex};
use crate::ranker::{
    rank, Comparator, ComparisonCache, ComparisonContext, Contender, Judge, LlmComparator, LlmConfig,
    MockComparator, MockDefault, MockSpec, RankedResult,
};
use crate::scorer::{select_candidates, training_pairs, TrainingPair};
use crate::tracker::{track, Candidate, CandidateSet};

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct Staged {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for Staged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

impl std::error::Error for Staged {}

impl Staged {
    pub fn exit_code(&self) -> i32 {
        self.error.exit_code()
    }
}

pub type StageResult<T> = std::result::Result<T, Staged>;

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|error| Staged { stage, error })
    }
}

pub fn resolve_mode(record: &VulnRecord, choice: ModeChoice) -> Result<Mode> {
    match choice {
        ModeChoice::Auto => Ok(record.mode()),
        ModeChoice::PatchAbsent => Ok(Mode::PatchAbsent),
        ModeChoice::PatchPresent if record.patch_refs.is_empty() => Err(Error::Mode(format!(
            "{} has no patches; run it in patch-absent mode",
            record.cve_id
        ))),
        ModeChoice::PatchPresent => Ok(Mode::PatchPresent),
    }
}

/// Patch-present candidates for `record`; patch texts resolve against `base_dir`.
pub fn track_record(record: &VulnRecord, base_dir: &Path, index: &RepoIndex, config: &RunConfig) -> Result<CandidateSet> {
    resolve_mode(record, ModeChoice::PatchPresent)?;
    let texts = record.load_patch_texts(base_dir)?;
    let hunks = parse_diffs(&texts)?;
    track(&record.cve_id, &hunks, index, &config.tracker)
}

pub fn score_record(record: &VulnRecord, query: &ExpandedQuery, index: &RepoIndex, config: &RunConfig) -> Result<CandidateSet> {
    let backend = config.scorer.resolve_backend()?;
    select_candidates(&record.cve_id, query, index, &backend, &config.scorer)
}

/// Ranking inputs for a candidate set; every id must exist in `index`.
pub fn contenders(set: &CandidateSet, index: &RepoIndex) -> Result<Vec<Contender>> {
    set.candidates
        .iter()
        .map(|c| {
            let f = index
                .function(&c.id)
                .ok_or_else(|| Error::Validation(format!("{}: candidate {} not in repository index", set.cve_id, c.id)))?;
            Ok(Contender {
                id: f.id.clone(),
                qualified_name: f.qualified_name.clone(),
                file: f.file_path.clone(),
                body: f.body.clone(),
            })
        })
        .collect()
}

pub fn comparison_context(record: &VulnRecord, query: &ExpandedQuery) -> ComparisonContext {
    ComparisonContext {
        cve_id: record.cve_id.clone(),
        description: record.description.clone(),
        expansion_terms: query.terms.iter().map(|t| t.term.clone()).collect(),
    }
}

/// Comparator selected by the configuration. The oracle backend needs `truth`.
pub fn build_comparator(config: &RunConfig, truth: Option<&GroundTruth>) -> Result<Box<dyn Comparator>> {
    match config.comparator.backend {
        ComparatorBackend::Llm => Ok(Box::new(LlmComparator::new(LlmConfig::from_env(config.ranker.prompt_budget)?)?)),
        ComparatorBackend::Mock => {
            let path = config
                .comparator
                .mock_spec
                .as_ref()
                .ok_or_else(|| Error::Config("mock comparator needs a decision table file".into()))?;
            Ok(Box::new(MockComparator::from_file(path)?))
        }
        ComparatorBackend::Oracle => {
            let truth = truth.ok_or_else(|| Error::Config("oracle comparator needs ground truth".into()))?;
            Ok(Box::new(oracle_comparator(truth)))
        }
    }
}

/// Mock comparator that prefers labeled functions, otherwise ties.
pub fn oracle_comparator(truth: &GroundTruth) -> MockComparator {
    MockComparator::new(MockSpec {
        default: MockDefault::Tie,
        priority: truth.vf.iter().map(|v| v.qualified_name.clone()).collect(),
        decisions: Vec::new(),
    })
}

/// Comparison cache named in the configuration, or an in-memory one.
pub fn open_cache(config: &RunConfig) -> Result<ComparisonCache> {
    match &config.paths.cache {
        Some(p) => ComparisonCache::open(p),
        None => Ok(ComparisonCache::in_memory()),
    }
}

#[derive(Debug, Clone)]
pub struct Located {
    pub query: ExpandedQuery,
    pub candidates: CandidateSet,
    pub result: RankedResult,
    /// Backend calls made; cache hits are free.
    pub comparator_calls: usize,
}

/// Runs expansion, candidate selection and ranking for one record.
pub fn locate(
    record: &VulnRecord,
    base_dir: &Path,
    cwe: &[crate::corpus::CweEntry],
    index: &RepoIndex,
    config: &RunConfig,
    comparator: &dyn Comparator,
    cache: &ComparisonCache,
) -> StageResult<Located> {
    let mode = resolve_mode(record, config.mode).stage("mode")?;
    let query = expand_record(record, cwe, &config.expansion).stage("expand")?;
    let candidates = match mode {
        Mode::PatchPresent => track_record(record, base_dir, index, config).stage("track")?,
        Mode::PatchAbsent => score_record(record, &query, index, config).stage("score")?,
    };
    let ctx = comparison_context(record, &query);
    let judge = Judge::new(&ctx, comparator, cache);
    let pool = contenders(&candidates, index).stage("rank")?;
    let (result, comparator_calls) = rank(&record.cve_id, mode, &pool, &judge, &config.ranker).stage("rank")?;
    info!(
        "{}: {} candidates, {} comparisons, {} comparator calls",
        record.cve_id,
        pool.len(),
        result.comparisons,
        comparator_calls
    );
    Ok(Located { query, candidates, result, comparator_calls })
}

/// Indexes each distinct repository once.
pub fn index_repos<'a>(records: impl IntoIterator<Item = &'a VulnRecord>, base_dir: &Path) -> StageResult<HashMap<PathBuf, RepoIndex>> {
    let mut indexes = HashMap::new();
    for r in records {
        let path = r.resolved_repo(base_dir);
        if let std::collections::hash_map::Entry::Vacant(slot) = indexes.entry(path) {
            let idx = index_repo(slot.key()).stage("index")?;
            slot.insert(idx);
        }
    }
    Ok(indexes)
}

fn truth_map(truths: &[GroundTruth]) -> HashMap<&str, &GroundTruth> {
    truths.iter().map(|t| (t.cve_id.as_str(), t)).collect()
}

pub struct BenchmarkRun {
    pub report: EvalReport,
    pub results: Vec<RankedResult>,
    pub comparator_calls: usize,
}

/// Localizes every labeled record and scores the rankings against the labels.
/// `comparator_for` builds the comparator for one record.
pub fn run_benchmark<F>(
    records: &[VulnRecord],
    truths: &[GroundTruth],
    base_dir: &Path,
    cwe: &[crate::corpus::CweEntry],
    config: &RunConfig,
    comparator_for: F,
    cache: &ComparisonCache,
) -> StageResult<BenchmarkRun>
where
    F: Fn(&VulnRecord, &GroundTruth) -> Result<Box<dyn Comparator>> + Sync,
{
    let labels = truth_map(truths);
    let mut skipped = Vec::new();
    let mut labeled = Vec::new();
    for r in records {
        match labels.get(r.cve_id.as_str()) {
            Some(t) => labeled.push((r, *t)),
            None => {
                warn!("{}: no ground truth; skipped", r.cve_id);
                skipped.push(r.cve_id.clone());
            }
        }
    }
    let indexes = index_repos(labeled.iter().map(|(r, _)| *r), base_dir)?;
    let located: Vec<(Located, QueryResult)> = labeled
        .par_iter()
        .map(|(r, t)| {
            let comparator = comparator_for(r, t).stage("comparator")?;
            let index = &indexes[&r.resolved_repo(base_dir)];
            let loc = locate(r, base_dir, cwe, index, config, comparator.as_ref(), cache)?;
            let mode = serde_json::to_value(loc.result.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let q = QueryResult::new(&r.cve_id, &mode, &loc.result.ordering, &t.vf);
            Ok((loc, q))
        })
        .collect::<StageResult<_>>()?;
    let comparator_calls = located.iter().map(|(l, _)| l.comparator_calls).sum();
    let (results, queries): (Vec<RankedResult>, Vec<QueryResult>) =
        located.into_iter().map(|(l, q)| (l.result, q)).unzip();
    let report = EvalReport::build(config.mode.label(), queries, skipped).stage("eval")?;
    Ok(BenchmarkRun { report, results, comparator_calls })
}

/// Training pairs for every labeled record: labeled functions are positives.
pub fn export_training(
    records: &[VulnRecord],
    truths: &[GroundTruth],
    base_dir: &Path,
    ratio: usize,
    seed: u64,
) -> StageResult<Vec<TrainingPair>> {
    let labels = truth_map(truths);
    let labeled: Vec<(&VulnRecord, &GroundTruth)> = records
        .iter()
        .filter_map(|r| match labels.get(r.cve_id.as_str()) {
            Some(t) => Some((r, *t)),
            None => {
                warn!("{}: no ground truth; not exported", r.cve_id);
                None
            }
        })
        .collect();
    let indexes = index_repos(labeled.iter().map(|(r, _)| *r), base_dir)?;
    let mut pairs = Vec::new();
    for (r, t) in labeled {
        let index = &indexes[&r.resolved_repo(base_dir)];
        let positives = CandidateSet {
            cve_id: r.cve_id.clone(),
            mode: r.mode(),
            candidates: index
                .non_test_functions()
                .filter(|f| t.vf.iter().any(|v| vf_matches(v, &f.qualified_name, &f.file_path)))
                .map(|f| Candidate::from_function(f, Vec::new(), String::new()))
                .collect(),
        };
        if positives.candidates.is_empty() {
            warn!("{}: no labeled function found in the repository", r.cve_id);
            continue;
        }
        pairs.extend(training_pairs(&r.cve_id, &r.description, index, &positives, ratio, seed));
    }
    if pairs.is_empty() {
        return Err(Error::Empty("no training pairs produced".into())).stage("export");
    }
    Ok(pairs)
}
