use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use vfloc::config::{ComparatorBackend, ModeChoice, RunConfig};
use vfloc::corpus::{load_cwe_corpus, load_ground_truth, load_vuln_records, CweEntry, GroundTruth, VulnRecord};
use vfloc::expansion::expand_record;
use vfloc::java::index_repo;
use vfloc::pipeline::{
    build_comparator, comparison_context, contenders, export_training, index_repos, locate, open_cache,
    resolve_mode, run_benchmark, score_record, track_record, StageExt, StageResult, Staged,
};
use vfloc::ranker::{rank, Judge};
use vfloc::scorer::write_training_jsonl;
use vfloc::tracker::CandidateSet;
use vfloc::Error;

/// Localize vulnerable functions for disclosed vulnerabilities in Java repositories.
///
/// Exit codes: 0 ok, 2 configuration or input error, 3 I/O error,
/// 4 protocol or transport error, 5 empty result.
#[derive(Parser)]
#[command(name = "vfloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand, select candidates and rank them; prints ranked results.
    Locate(Common),
    /// Print the expanded query of each record.
    Expand(Common),
    /// Index a repository and print a summary.
    Index {
        #[arg(long)]
        repo: PathBuf,
        /// Print every function record instead of the summary.
        #[arg(long)]
        full: bool,
    },
    /// Patch-present candidate selection.
    Track(Common),
    /// Patch-absent candidate selection with the relevance scorer.
    Score(Common),
    /// Rank a candidate set produced by `track` or `score`.
    Rank {
        #[command(flatten)]
        common: Common,
        /// CandidateSet JSON file.
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Localize every labeled record and report ranking metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Write relevance-scorer training pairs as JSON lines.
    ExportTraining {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Negatives per positive.
        #[arg(long, default_value_t = 100)]
        ratio: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args, Clone)]
struct Common {
    /// Vulnerability records (JSON array). Relative paths inside resolve against its directory.
    #[arg(long)]
    records: PathBuf,
    /// Only process this record.
    #[arg(long)]
    cve: Option<String>,
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground truth labels (JSON array).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeChoice>,
    /// CWE description corpus (JSON array).
    #[arg(long)]
    cwe: Option<PathBuf>,
    /// Comparison cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    comparator: Option<ComparatorBackend>,
    /// Decision table for the mock comparator.
    #[arg(long)]
    mock_spec: Option<PathBuf>,
    /// `lexical` or `remote`.
    #[arg(long)]
    scorer: Option<String>,
    /// Base URL of the remote scorer.
    #[arg(long)]
    scorer_endpoint: Option<String>,
    /// Swiss rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Candidates compared exhaustively after the Swiss phase.
    #[arg(long)]
    top_k: Option<usize>,
    /// Characters of each function body shown to the comparator.
    #[arg(long)]
    prompt_budget: Option<usize>,
    /// Seed for the tournament shuffle.
    #[arg(long)]
    seed: Option<u64>,
}

struct Session {
    config: RunConfig,
    records: Vec<VulnRecord>,
    base_dir: PathBuf,
    truths: Vec<GroundTruth>,
    single: bool,
}

impl Common {
    fn config(&self) -> StageResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).stage("config")?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(p) = &self.cwe {
            c.paths.cwe_corpus = Some(p.clone());
        }
        if let Some(p) = &self.cache {
            c.paths.cache = Some(p.clone());
        }
        if let Some(b) = self.comparator {
            c.comparator.backend = b;
        }
        if let Some(p) = &self.mock_spec {
            c.comparator.mock_spec = Some(p.clone());
        }
        if let Some(s) = &self.scorer {
            c.scorer.backend = s.clone();
        }
        if let Some(e) = &self.scorer_endpoint {
            c.scorer.endpoint = Some(e.clone());
        }
        if let Some(r) = self.rounds {
            c.ranker.rounds = r;
        }
        if let Some(k) = self.top_k {
            c.ranker.top_k = k;
        }
        if let Some(b) = self.prompt_budget {
            c.ranker.prompt_budget = b;
        }
        if let Some(s) = self.seed {
            c.ranker.seed = s;
        }
        c.validate().stage("config")?;
        Ok(c)
    }

    fn session(&self) -> StageResult<Session> {
        let config = self.config()?;
        let mut records = load_vuln_records(&self.records).stage("records")?;
        if let Some(id) = &self.cve {
            records.retain(|r| &r.cve_id == id);
            if records.is_empty() {
                return Err(Error::Validation(format!("{id} not found in {}", self.records.display()))).stage("records");
            }
        }
        let base_dir = self.records.parent().map(Path::to_path_buf).unwrap_or_default();
        let truths = match &self.truth {
            Some(p) => load_ground_truth(p).stage("truth")?,
            None => Vec::new(),
        };
        Ok(Session { config, records, base_dir, truths, single: self.cve.is_some() })
    }
}

impl Session {
    fn cwe(&self) -> StageResult<Vec<CweEntry>> {
        let path = self
            .config
            .paths
            .cwe_corpus
            .as_ref()
            .ok_or_else(|| Error::Config("no CWE corpus given (--cwe or paths.cwe_corpus)".into()))
            .stage("config")?;
        load_cwe_corpus(path).stage("cwe")
    }

    fn truth(&self, cve_id: &str) -> Option<&GroundTruth> {
        self.truths.iter().find(|t| t.cve_id == cve_id)
    }

    /// One object for `--cve`, an array otherwise.
    fn emit<T: Serialize>(&self, mut items: Vec<T>) -> StageResult<()> {
        if self.single && items.len() == 1 {
            print_json(&items.remove(0))
        } else {
            print_json(&items)
        }
    }
}

fn print_json<T: Serialize + ?Sized>(value: &T) -> StageResult<()> {
    let text = serde_json::to_string_pretty(value).expect("outputs serialize");
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e)).stage("output")
}

fn run(cli: Cli) -> StageResult<()> {
    match cli.command {
        Command::Index { repo, full } => {
            let index = index_repo(&repo).stage("index")?;
            if full {
                print_json(&index.functions)
            } else {
                print_json(&index.summary())
            }
        }
        Command::Expand(common) => {
            let s = common.session()?;
            let cwe = s.cwe()?;
            let queries = s
                .records
                .iter()
                .map(|r| expand_record(r, &cwe, &s.config.expansion))
                .collect::<vfloc::Result<Vec<_>>>()
                .stage("expand")?;
            s.emit(queries)
        }
        Command::Track(common) => {
            let s = common.session()?;
            let indexes = index_repos(&s.records, &s.base_dir)?;
            let sets = s
                .records
                .iter()
                .map(|r| track_record(r, &s.base_dir, &indexes[&r.resolved_repo(&s.base_dir)], &s.config))
                .collect::<vfloc::Result<Vec<_>>>()
                .stage("track")?;
            s.emit(sets)
        }
        Command::Score(common) => {
            let s = common.session()?;
            let cwe = s.cwe()?;
            let indexes = index_repos(&s.records, &s.base_dir)?;
            let mut sets = Vec::new();
            for r in &s.records {
                let q = expand_record(r, &cwe, &s.config.expansion).stage("expand")?;
                let index = &indexes[&r.resolved_repo(&s.base_dir)];
                sets.push(score_record(r, &q, index, &s.config).stage("score")?);
            }
            s.emit(sets)
        }
        Command::Rank { common, candidates } => {
            let s = common.session()?;
            let text = std::fs::read_to_string(&candidates).map_err(|e| Error::io(&candidates, e)).stage("candidates")?;
            let set: CandidateSet = serde_json::from_str(&text)
                .map_err(|e| Error::json(candidates.display().to_string(), &e))
                .stage("candidates")?;
            let record = s
                .records
                .iter()
                .find(|r| r.cve_id == set.cve_id)
                .ok_or_else(|| Error::Validation(format!("{} not found in records", set.cve_id)))
                .stage("records")?;
            let cwe = s.cwe()?;
            let query = expand_record(record, &cwe, &s.config.expansion).stage("expand")?;
            let index = index_repo(&record.resolved_repo(&s.base_dir)).stage("index")?;
            let comparator = build_comparator(&s.config, s.truth(&record.cve_id)).stage("comparator")?;
            let cache = open_cache(&s.config).stage("cache")?;
            let ctx = comparison_context(record, &query);
            let judge = Judge::new(&ctx, comparator.as_ref(), &cache);
            let pool = contenders(&set, &index).stage("rank")?;
            let (result, calls) = rank(&set.cve_id, set.mode, &pool, &judge, &s.config.ranker).stage("rank")?;
            info!("{}: {calls} comparator calls", set.cve_id);
            print_json(&result)
        }
        Command::Locate(common) => {
            let s = common.session()?;
            for r in &s.records {
                resolve_mode(r, s.config.mode).stage("mode")?;
            }
            let cwe = s.cwe()?;
            let indexes = index_repos(&s.records, &s.base_dir)?;
            let cache = open_cache(&s.config).stage("cache")?;
            let mut results = Vec::new();
            for r in &s.records {
                let comparator = build_comparator(&s.config, s.truth(&r.cve_id)).stage("comparator")?;
                let index = &indexes[&r.resolved_repo(&s.base_dir)];
                let loc = locate(r, &s.base_dir, &cwe, index, &s.config, comparator.as_ref(), &cache)?;
                eprintln!("{} ({} comparator calls)", r.cve_id, loc.comparator_calls);
                for e in loc.result.ordering.iter().take(10) {
                    eprintln!("  {:>3}  {}  {}", e.rank, e.qualified_name, e.file);
                }
                results.push(loc.result);
            }
            s.emit(results)
        }
        Command::Eval { common, format } => {
            let s = common.session()?;
            if s.truths.is_empty() {
                return Err(Error::Config("eval needs --truth".into())).stage("config");
            }
            let cwe = s.cwe()?;
            let cache = open_cache(&s.config).stage("cache")?;
            let config = &s.config;
            let run = run_benchmark(&s.records, &s.truths, &s.base_dir, &cwe, config, |_, t| build_comparator(config, Some(t)), &cache)?;
            info!("{} comparator calls", run.comparator_calls);
            let table = run.report.render_table();
            match format {
                Format::Json => {
                    eprint!("{table}");
                    print_json(&run.report)
                }
                Format::Table => {
                    print!("{table}");
                    Ok(())
                }
            }
        }
        Command::ExportTraining { common, out, ratio } => {
            let s = common.session()?;
            if s.truths.is_empty() {
                return Err(Error::Config("export-training needs --truth".into())).stage("config");
            }
            let pairs = export_training(&s.records, &s.truths, &s.base_dir, ratio, s.config.ranker.seed)?;
            write_training_jsonl(&out, &pairs).stage("export")?;
            let positives = pairs.iter().filter(|p| p.label == 1).count();
            print_json(&serde_json::json!({
                "out": out,
                "pairs": pairs.len(),
                "positives": positives,
                "negatives": pairs.len() - positives,
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Staged) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
