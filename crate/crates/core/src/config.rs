//! Run configuration: defaults, overridden by a JSON file, overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::expansion::ExpansionConfig;
use crate::ranker::RankConfig;
use crate::scorer::ScorerConfig;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    /// Patch-present when the record has patches, patch-absent otherwise.
    #[default]
    Auto,
    PatchPresent,
    PatchAbsent,
}

impl ModeChoice {
    pub fn label(self) -> &'static str {
        match self {
            ModeChoice::Auto => "auto",
            ModeChoice::PatchPresent => "patch-present",
            ModeChoice::PatchAbsent => "patch-absent",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ComparatorBackend {
    /// Chat-completion endpoint configured through the environment.
    #[default]
    Llm,
    /// Decision table read from `mock_spec`.
    Mock,
    /// Prefers ground-truth functions; needs labels.
    Oracle,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparatorConfig {
    pub backend: ComparatorBackend,
    pub mock_spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub cwe_corpus: Option<PathBuf>,
    /// Comparison cache file; comparisons are kept in memory only when unset.
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ModeChoice,
    pub expansion: ExpansionConfig,
    pub tracker: TrackerConfig,
    pub scorer: ScorerConfig,
    pub ranker: RankConfig,
    pub comparator: ComparatorConfig,
    pub paths: PathsConfig,
}

fn rebase(dir: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = dir.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        rebase(dir, &mut cfg.paths.cwe_corpus);
        rebase(dir, &mut cfg.paths.cache);
        rebase(dir, &mut cfg.comparator.mock_spec);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be at least 1")));
        if self.expansion.repetition < 1 {
            return bad("expansion.repetition");
        }
        if self.expansion.latent_k < 1 {
            return bad("expansion.latent_k");
        }
        if self.expansion.alpha.is_nan() || self.expansion.alpha < 0.0 {
            return Err(Error::Config("expansion.alpha must be non-negative".into()));
        }
        if self.tracker.cap < 1 {
            return bad("tracker.cap");
        }
        if self.scorer.cap < 1 {
            return bad("scorer.cap");
        }
        if self.scorer.batch_size < 1 {
            return bad("scorer.batch_size");
        }
        if self.ranker.rounds < 1 {
            return bad("ranker.rounds");
        }
        if self.ranker.top_k < 1 {
            return bad("ranker.top_k");
        }
        if self.comparator.backend == ComparatorBackend::Mock && self.comparator.mock_spec.is_none() {
            return Err(Error::Config("mock comparator needs comparator.mock_spec".into()));
        }
        Ok(())
    }
}
