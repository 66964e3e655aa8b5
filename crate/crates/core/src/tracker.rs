//! Patch-present candidate selection: diff patterns plus modified-function fallback.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use log::{debug, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Mode;
use crate::diff::{extract_invocations, DiffHunk, InvocationKind, InvocationSite, LineRole};
use crate::error::{Error, Result};
use crate::java::{normalize_args_in, FieldRecord, FileRecord, FunctionKind, FunctionRecord, RepoIndex, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternTag {
    ReplacedMethod,
    ReplacedClass,
    AdditionalArguments,
    ConfigChange,
    ModifiedFallback,
    ScorerTopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub qualified_name: String,
    pub file: String,
    pub span: Span,
    pub tags: Vec<PatternTag>,
    pub note: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Candidate {
    pub fn from_function(f: &FunctionRecord, tags: Vec<PatternTag>, note: String) -> Self {
        Candidate {
            id: f.id.clone(),
            qualified_name: f.qualified_name.clone(),
            file: f.file_path.clone(),
            span: f.span,
            tags,
            note,
            score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub cve_id: String,
    pub mode: Mode,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Always include modified functions; when false, only if no pattern fired.
    pub additive_fallback: bool,
    pub cap: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { additive_fallback: true, cap: 100 }
    }
}

/// One pattern finding.
#[derive(Debug, Clone)]
pub struct Hit<'a> {
    pub function: &'a FunctionRecord,
    pub tag: PatternTag,
    pub note: String,
    /// Number of changed fields the function references (config hits only).
    pub weight: usize,
}

struct SiteAt<'a> {
    site: InvocationSite,
    func: Option<&'a FunctionRecord>,
    norm: Vec<String>,
}

struct HunkView<'a> {
    hunk: &'a DiffHunk,
    file: Option<&'a FileRecord>,
    deleted: Vec<SiteAt<'a>>,
    added: Vec<SiteAt<'a>>,
    /// For each hunk line: enclosing function (old line, or insertion point).
    enclosing: Vec<Option<&'a FunctionRecord>>,
    /// For each line: last old line before it and first old line at or after it.
    bounds: Vec<(Option<u32>, Option<u32>)>,
}

fn innermost<'a>(candidates: impl Iterator<Item = &'a FunctionRecord>) -> Option<&'a FunctionRecord> {
    candidates.min_by_key(|f| {
        let r = f.regions.iter().map(|r| r.end - r.start).min().unwrap_or(0);
        (r, f.span.start)
    })
}

fn view<'a>(hunk: &'a DiffHunk, index: &'a RepoIndex) -> HunkView<'a> {
    let file = hunk
        .old_path
        .as_deref()
        .and_then(|p| index.find_file(p))
        .or_else(|| index.find_file(&hunk.file_path));
    let n = hunk.lines.len();
    let mut bounds = vec![(None, None); n];
    let mut prev = hunk.old_range.start.checked_sub(1).filter(|&l| l > 0);
    for (i, line) in hunk.lines.iter().enumerate() {
        bounds[i].0 = prev;
        if let Some(o) = line.old_line {
            prev = Some(o);
        }
    }
    let mut next = Some(hunk.old_range.start + hunk.old_range.count);
    for i in (0..n).rev() {
        if let Some(o) = hunk.lines[i].old_line {
            next = Some(o);
        }
        bounds[i].1 = next;
    }

    let enclosing: Vec<Option<&FunctionRecord>> = hunk
        .lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let file = file?;
            match line.old_line {
                Some(o) => innermost(index.functions_at(&file.path, o).into_iter()),
                None => {
                    // Inserted between two old lines: inside f only if f covers both.
                    let (p, q) = bounds[i];
                    let covers = |f: &FunctionRecord| {
                        p.is_none_or(|p| f.covers_line(p)) && q.is_none_or(|q| f.covers_line(q))
                    };
                    let probe = p.or(q)?;
                    innermost(index.functions_at(&file.path, probe).into_iter().filter(|f| covers(f)))
                }
            }
        })
        .collect();

    let mut deleted = Vec::new();
    let mut added = Vec::new();
    for (i, line) in hunk.lines.iter().enumerate() {
        if line.role == LineRole::Context {
            continue;
        }
        let func = enclosing[i];
        let preceding = side_prefix(hunk, func, i, line.role);
        for site in extract_invocations(&line.text) {
            let call_at = line.text.find(&format!("{}(", site.callee_name)).unwrap_or(0);
            let scope = format!("{preceding}\n{}", &line.text[..call_at]);
            let norm = normalize_args_in(&site, &scope);
            let s = SiteAt { site, func, norm };
            match line.role {
                LineRole::Deleted => deleted.push(s),
                _ => added.push(s),
            }
        }
    }
    HunkView { hunk, file, deleted, added, enclosing, bounds }
}

/// Code preceding hunk line `i` on its own side of the change, within `func`.
fn side_prefix(hunk: &DiffHunk, func: Option<&FunctionRecord>, i: usize, role: LineRole) -> String {
    let mut out: Vec<&str> = Vec::new();
    let mut first = 0;
    if let Some(f) = func {
        out.extend(
            f.numbered_lines()
                .into_iter()
                .filter(|(n, _)| *n < hunk.old_range.start)
                .map(|(_, l)| l),
        );
        first = hunk.lines[..i]
            .iter()
            .position(|l| l.old_line.is_none_or(|o| o >= f.span.start))
            .unwrap_or(i);
    }
    out.extend(
        hunk.lines[first..i]
            .iter()
            .filter(|l| l.role == LineRole::Context || l.role == role)
            .map(|l| l.text.as_str()),
    );
    out.join("\n")
}

fn describe(site: &InvocationSite) -> String {
    let prefix = match (&site.kind, &site.receiver) {
        (InvocationKind::ConstructorCall, _) => "new ".to_string(),
        (_, Some(r)) => format!("{r}."),
        (_, None) => String::new(),
    };
    format!("{prefix}{}({})", site.callee_name, site.args.join(", "))
}

fn is_method_like(k: InvocationKind) -> bool {
    matches!(k, InvocationKind::MethodCall | InvocationKind::StaticCall)
}

fn is_class_like(k: InvocationKind) -> bool {
    matches!(k, InvocationKind::ConstructorCall | InvocationKind::StaticCall)
}

/// In-repo method definitions a call can bind to (name and arity; static
/// calls narrowed to the resolved target class when possible).
fn method_definitions<'a>(index: &'a RepoIndex, at: &SiteAt<'_>, arity: usize) -> Vec<&'a FunctionRecord> {
    let defs: Vec<&FunctionRecord> = index
        .functions_named(&at.site.callee_name)
        .filter(|f| f.kind == FunctionKind::Method && !f.is_test && f.accepts_arity(arity))
        .collect();
    if at.site.kind == InvocationKind::StaticCall {
        if let Some(class) = index.call_target_class(at.func, &at.site) {
            let narrowed: Vec<_> = defs
                .iter()
                .copied()
                .filter(|f| f.enclosing_class == class.qualified_name)
                .collect();
            if !narrowed.is_empty() {
                return narrowed;
            }
        }
    }
    defs
}

/// Functions calling the same method as `at` (usage-site fallback for external callees).
fn method_usages<'a>(index: &'a RepoIndex, at: &SiteAt<'_>) -> Vec<&'a FunctionRecord> {
    let site = &at.site;
    let arity = site.args.len();
    match site.kind {
        InvocationKind::StaticCall => {
            let class = site.target_class();
            index.functions_with_call(|s| {
                s.kind == InvocationKind::StaticCall
                    && s.callee_name == site.callee_name
                    && s.args.len() == arity
                    && s.target_class() == class
            })
        }
        _ => index.functions_invoking(&site.callee_name, arity),
    }
}

fn hits<'a>(fs: Vec<&'a FunctionRecord>, tag: PatternTag, note: &str) -> Vec<Hit<'a>> {
    fs.into_iter()
        .filter(|f| !f.is_test)
        .map(|function| Hit { function, tag, note: note.to_string(), weight: 0 })
        .collect()
}

fn replaced_method<'a>(v: &HunkView<'a>, index: &'a RepoIndex) -> Vec<Hit<'a>> {
    let mut out = Vec::new();
    for d in &v.deleted {
        for a in &v.added {
            if !(is_method_like(d.site.kind) && is_method_like(a.site.kind))
                || d.site.callee_name == a.site.callee_name
                || d.norm != a.norm
            {
                continue;
            }
            let note = format!("replaced method {} -> {}", describe(&d.site), describe(&a.site));
            let defs = method_definitions(index, d, d.site.args.len());
            let fs = if defs.is_empty() { method_usages(index, d) } else { defs };
            out.extend(hits(fs, PatternTag::ReplacedMethod, &note));
        }
    }
    out
}

/// Constructors and initializers of an in-repo class, or usage sites otherwise.
fn class_candidates<'a>(index: &'a RepoIndex, at: &SiteAt<'_>) -> Vec<&'a FunctionRecord> {
    let name = at.site.target_class().unwrap_or_default().to_string();
    if let Some(class) = index.call_target_class(at.func, &at.site) {
        let own: Vec<&FunctionRecord> = index
            .methods_of(&class.qualified_name)
            .filter(|f| f.is_constructor() || f.is_initializer())
            .collect();
        if !own.is_empty() {
            return own;
        }
        return index.functions_using_class(&class.simple_name);
    }
    index.functions_using_class(&name)
}

fn replaced_class<'a>(v: &HunkView<'a>, index: &'a RepoIndex) -> Vec<Hit<'a>> {
    let mut out = Vec::new();
    for d in &v.deleted {
        for a in &v.added {
            if !(is_class_like(d.site.kind) && is_class_like(a.site.kind))
                || d.site.target_class() == a.site.target_class()
                || d.norm != a.norm
            {
                continue;
            }
            let note = format!("replaced class {} -> {}", describe(&d.site), describe(&a.site));
            out.extend(hits(class_candidates(index, d), PatternTag::ReplacedClass, &note));
        }
    }
    out
}

fn additional_arguments<'a>(v: &HunkView<'a>, index: &'a RepoIndex) -> Vec<Hit<'a>> {
    let mut out = Vec::new();
    for d in &v.deleted {
        for a in &v.added {
            if d.site.callee_name != a.site.callee_name
                || is_method_like(d.site.kind) != is_method_like(a.site.kind)
                || d.norm == a.norm
            {
                continue;
            }
            let note = format!("changed arguments {} -> {}", describe(&d.site), describe(&a.site));
            let arity = d.site.args.len();
            let fs = if d.site.kind == InvocationKind::ConstructorCall {
                let defs: Vec<&FunctionRecord> = index
                    .call_target_class(d.func, &d.site)
                    .map(|c| {
                        index
                            .methods_of(&c.qualified_name)
                            .filter(|f| f.is_constructor() && f.accepts_arity(arity))
                            .collect()
                    })
                    .unwrap_or_default();
                if defs.is_empty() {
                    let callee = d.site.callee_name.clone();
                    index.functions_with_call(|s| {
                        s.kind == InvocationKind::ConstructorCall && s.callee_name == callee && s.args.len() == arity
                    })
                } else {
                    defs
                }
            } else {
                let defs = method_definitions(index, d, arity);
                if defs.is_empty() { method_usages(index, d) } else { defs }
            };
            out.extend(hits(fs, PatternTag::AdditionalArguments, &note));
        }
    }
    out
}

static FIELD_DECL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^\s*(?:@[\w.]+(?:\([^)]*\))?\s+)*(?:(?:public|protected|private|static|final|transient|volatile)\s+)*[A-Za-z_$][\w$.]*(?:\s*<[^;=]*>)?(?:\s*\[\s*\])*\s+[A-Za-z_$][\w$]*(?:\s*\[\s*\])*\s*(?:=.*)?;?\s*$",
    )
    .unwrap()
});
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z_$][\w$]*").unwrap());

fn without_strings(text: &str) -> String {
    let mut out = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in text.split("//").next().unwrap_or("").chars() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None if c == '"' || c == '\'' => quote = Some(c),
            None => out.push(c),
        }
    }
    out
}

fn config_change<'a>(v: &HunkView<'a>, index: &'a RepoIndex) -> Vec<Hit<'a>> {
    let Some(file) = v.file else {
        return Vec::new();
    };
    let in_field = |line: u32| -> Option<&'a FieldRecord> {
        index.fields.iter().find(|f| f.file_path == file.path && f.span.contains(line))
    };
    let static_init_covers = |line: u32| {
        index
            .functions_at(&file.path, line)
            .iter()
            .any(|f| f.kind == FunctionKind::StaticInit)
    };
    let in_member = |f: Option<&FunctionRecord>| {
        f.is_some_and(|f| matches!(f.kind, FunctionKind::Method | FunctionKind::Constructor))
    };

    // Classes owning a changed field declaration or static block.
    let mut owners: BTreeSet<String> = BTreeSet::new();
    for (i, line) in v.hunk.lines.iter().enumerate() {
        let locus = match line.role {
            LineRole::Context => continue,
            LineRole::Deleted => line.old_line,
            LineRole::Added => v.bounds[i].0.or(v.bounds[i].1),
        };
        let Some(locus) = locus else { continue };
        let is_config = match line.role {
            LineRole::Deleted => in_field(locus).is_some() || static_init_covers(locus),
            _ => {
                let (p, q) = v.bounds[i];
                let inside_static = v.enclosing[i].is_some_and(|f| f.kind == FunctionKind::StaticInit)
                    && p.is_some_and(static_init_covers)
                    && q.is_some_and(static_init_covers);
                let inside_field = p.and_then(in_field).is_some_and(|f| q.and_then(in_field) == Some(f));
                let new_field = !in_member(v.enclosing[i]) && FIELD_DECL.is_match(&line.text);
                inside_static || inside_field || new_field
            }
        };
        if is_config {
            if let Some(c) = index.class_at(&file.path, locus) {
                owners.insert(c.qualified_name.clone());
            }
        }
    }
    if owners.is_empty() {
        return Vec::new();
    }

    let mut names: BTreeSet<String> = BTreeSet::new();
    for line in v.hunk.lines.iter().filter(|l| l.role != LineRole::Context) {
        for m in IDENT.find_iter(&without_strings(&line.text)) {
            names.insert(m.as_str().to_string());
        }
    }
    let mut counts: BTreeMap<usize, (usize, Vec<String>)> = BTreeMap::new();
    let mut out = Vec::new();
    for owner in &owners {
        let changed: Vec<&FieldRecord> = index
            .fields_of(owner)
            .filter(|f| names.contains(&f.name))
            .collect();
        let mut any_static = false;
        let mut any_instance = false;
        for field in &changed {
            any_static |= field.is_static;
            any_instance |= !field.is_static;
            for f in index.find_field_references(field) {
                let pos = index.position(&f.id).expect("indexed function");
                let e = counts.entry(pos).or_default();
                e.0 += 1;
                e.1.push(field.name.clone());
            }
        }
        // The owner's initializer stands in for the declaration itself.
        let kinds = [
            (any_static || changed.is_empty(), FunctionKind::StaticInit),
            (any_instance, FunctionKind::InstanceInit),
        ];
        for (wanted, kind) in kinds {
            if let Some(init) = index.initializer(owner, kind).filter(|_| wanted) {
                out.push(Hit {
                    function: init,
                    tag: PatternTag::ConfigChange,
                    note: format!("configuration of {owner} changed"),
                    weight: usize::MAX,
                });
            }
        }
    }
    for (pos, (weight, fields)) in counts {
        let function = &index.functions[pos];
        if function.is_test {
            continue;
        }
        out.push(Hit {
            function,
            tag: PatternTag::ConfigChange,
            note: format!("references changed field {}", fields.join(", ")),
            weight,
        });
    }
    out
}

pub fn detect_replaced_method<'a>(hunk: &'a DiffHunk, index: &'a RepoIndex) -> Vec<Hit<'a>> {
    replaced_method(&view(hunk, index), index)
}

pub fn detect_replaced_class<'a>(hunk: &'a DiffHunk, index: &'a RepoIndex) -> Vec<Hit<'a>> {
    replaced_class(&view(hunk, index), index)
}

pub fn detect_additional_arguments<'a>(hunk: &'a DiffHunk, index: &'a RepoIndex) -> Vec<Hit<'a>> {
    additional_arguments(&view(hunk, index), index)
}

pub fn detect_config_change<'a>(hunk: &'a DiffHunk, index: &'a RepoIndex) -> Vec<Hit<'a>> {
    config_change(&view(hunk, index), index)
}

/// Non-test functions containing a deleted line or an insertion point.
pub fn modified_functions<'a>(hunk: &'a DiffHunk, index: &'a RepoIndex) -> Vec<&'a FunctionRecord> {
    let v = view(hunk, index);
    let mut out: Vec<&FunctionRecord> = Vec::new();
    for (i, line) in hunk.lines.iter().enumerate() {
        if line.role == LineRole::Context {
            continue;
        }
        if let Some(f) = v.enclosing[i] {
            if !f.is_test && !out.iter().any(|g| g.id == f.id) {
                out.push(f);
            }
        }
    }
    out
}

#[derive(Default)]
struct Acc {
    tags: BTreeSet<PatternTag>,
    notes: Vec<String>,
    weight: usize,
}

/// Runs every pattern over every hunk and merges the findings.
pub fn track(cve_id: &str, hunks: &[DiffHunk], index: &RepoIndex, config: &TrackerConfig) -> Result<CandidateSet> {
    if hunks.is_empty() {
        return Err(Error::Mode(format!(
            "{cve_id}: patch has no hunks to track; use patch-absent mode"
        )));
    }
    let mut merged: BTreeMap<usize, Acc> = BTreeMap::new();
    let mut fallback: BTreeMap<usize, Acc> = BTreeMap::new();
    for hunk in hunks {
        let v = view(hunk, index);
        if v.file.is_none() {
            debug!("{cve_id}: {} is not an indexed Java file", hunk.file_path);
            continue;
        }
        let found = [
            replaced_method(&v, index),
            replaced_class(&v, index),
            additional_arguments(&v, index),
            config_change(&v, index),
        ];
        for h in found.into_iter().flatten() {
            let pos = index.position(&h.function.id).expect("indexed function");
            let acc = merged.entry(pos).or_default();
            acc.tags.insert(h.tag);
            if !acc.notes.contains(&h.note) {
                acc.notes.push(h.note);
            }
            if h.tag == PatternTag::ConfigChange {
                acc.weight = acc.weight.max(h.weight);
            }
        }
        for f in modified_functions(hunk, index) {
            let pos = index.position(&f.id).expect("indexed function");
            let acc = fallback.entry(pos).or_default();
            acc.tags.insert(PatternTag::ModifiedFallback);
            let note = format!("modified by patch in {}", hunk.file_path);
            if !acc.notes.contains(&note) {
                acc.notes.push(note);
            }
        }
    }

    let include_fallback = config.additive_fallback || merged.is_empty();
    if include_fallback {
        for (pos, fb) in fallback {
            let acc = merged.entry(pos).or_default();
            acc.tags.extend(fb.tags);
            acc.notes.extend(fb.notes);
        }
    }

    trim_to_cap(&mut merged, config.cap, cve_id);

    let (mut patterned, mut fallback_only): (Vec<_>, Vec<_>) = merged
        .into_iter()
        .partition(|(_, a)| a.tags.iter().any(|t| *t != PatternTag::ModifiedFallback));
    // BTreeMap order is index order, i.e. file path then span.
    patterned.append(&mut fallback_only);
    let candidates = patterned
        .into_iter()
        .map(|(pos, acc)| {
            Candidate::from_function(&index.functions[pos], acc.tags.into_iter().collect(), acc.notes.join("; "))
        })
        .collect();
    Ok(CandidateSet { cve_id: cve_id.to_string(), mode: Mode::PatchPresent, candidates })
}

/// Drops configuration-only candidates with the fewest field references until
/// the set fits in `cap`. Other candidates are never dropped.
fn trim_to_cap(merged: &mut BTreeMap<usize, Acc>, cap: usize, cve_id: &str) {
    if merged.len() <= cap {
        return;
    }
    let mut trimmable: Vec<(usize, usize)> = merged
        .iter()
        .filter(|(_, a)| a.tags.len() == 1 && a.tags.contains(&PatternTag::ConfigChange) && a.weight != usize::MAX)
        .map(|(&pos, a)| (a.weight, pos))
        .collect();
    // Fewest references first; later positions go first among equals.
    trimmable.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let excess = merged.len() - cap;
    for (_, pos) in trimmable.into_iter().take(excess) {
        merged.remove(&pos);
    }
    if merged.len() > cap {
        warn!("{cve_id}: {} candidates exceed cap {cap} after trimming", merged.len());
    }
}
