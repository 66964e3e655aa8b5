//! Repository index: functions, fields and classes of every Java source file.

mod extract;
mod flow;
mod refs;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::diff::InvocationSite;
use crate::error::{Error, Result};

pub use flow::{canonical_arg, normalize_args, normalize_args_in};

/// Inclusive, 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: u32,
    pub end: u32,
}

impl Span {
    pub fn new(start: u32, end: u32) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn contains(&self, line: u32) -> bool {
        self.start <= line && line <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    Method,
    Constructor,
    /// Static blocks plus static field initializers of one class.
    StaticInit,
    /// Instance initializer blocks plus instance field initializers of one class.
    InstanceInit,
}

/// A field access as written in a function body, before resolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum FieldRef {
    Bare { name: String },
    Qualified { qualifier: String, name: String },
}

impl FieldRef {
    pub fn name(&self) -> &str {
        match self {
            FieldRef::Bare { name } | FieldRef::Qualified { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalVar {
    pub name: String,
    pub type_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    #[serde(flatten)]
    pub site: InvocationSite,
    pub line: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionRecord {
    /// Unique within an index; equals `qualified_name` unless that collides.
    pub id: String,
    /// `pkg.Outer.Inner#method(T1,T2)`, or `pkg.Owner.<static-init>` for initializers.
    pub qualified_name: String,
    pub simple_name: String,
    pub kind: FunctionKind,
    /// Erased parameter types; varargs end in `...`.
    pub param_types: Vec<String>,
    pub file_path: String,
    pub span: Span,
    /// Source regions; a single region except for initializer functions.
    pub regions: Vec<Span>,
    pub body: String,
    pub is_test: bool,
    pub invocations: Vec<CallSite>,
    pub referenced_fields: Vec<FieldRef>,
    pub locals: Vec<LocalVar>,
    pub enclosing_class: String,
}

impl FunctionRecord {
    pub fn is_constructor(&self) -> bool {
        self.kind == FunctionKind::Constructor
    }

    pub fn is_initializer(&self) -> bool {
        matches!(self.kind, FunctionKind::StaticInit | FunctionKind::InstanceInit)
    }

    pub fn is_varargs(&self) -> bool {
        self.param_types.last().is_some_and(|t| t.ends_with("..."))
    }

    /// Whether a call with `n` arguments can bind to this function.
    pub fn accepts_arity(&self, n: usize) -> bool {
        let p = self.param_types.len();
        if self.is_varargs() {
            n + 1 >= p
        } else {
            n == p
        }
    }

    pub fn covers_line(&self, line: u32) -> bool {
        self.regions.iter().any(|r| r.contains(line))
    }

    pub fn local_type(&self, name: &str) -> Option<&str> {
        self.locals
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.type_name.as_str())
    }

    /// Body lines paired with their 1-based line numbers.
    pub fn numbered_lines(&self) -> Vec<(u32, &str)> {
        let mut out = Vec::new();
        let mut lines = self.body.lines();
        for r in &self.regions {
            for n in r.start..=r.end {
                match lines.next() {
                    Some(l) => out.push((n, l)),
                    None => return out,
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRecord {
    /// Qualified name of the declaring class.
    pub owner_class: String,
    pub name: String,
    pub type_name: String,
    pub is_static: bool,
    /// Static and initialized inline or assigned in a static block.
    pub declared_in_static_initializer: bool,
    pub has_initializer: bool,
    pub file_path: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub qualified_name: String,
    pub simple_name: String,
    pub package: String,
    pub file_path: String,
    /// Superclass as written, generics erased.
    pub superclass: Option<String>,
    pub outer: Option<String>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Import {
    pub path: String,
    pub is_static: bool,
    pub wildcard: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub package: String,
    pub imports: Vec<Import>,
    pub is_test: bool,
}

#[derive(Debug, Clone)]
pub struct RepoIndex {
    pub root: PathBuf,
    /// Sorted by file path, then span.
    pub functions: Vec<FunctionRecord>,
    pub fields: Vec<FieldRecord>,
    pub classes: Vec<ClassRecord>,
    pub files: Vec<FileRecord>,
    /// Files that failed to parse.
    pub skipped: Vec<String>,
    pub by_simple_name: HashMap<String, Vec<usize>>,
    pub by_qualified_name: HashMap<String, Vec<usize>>,
    pub non_test_count: usize,
    by_id: HashMap<String, usize>,
    class_by_name: HashMap<String, usize>,
    file_by_path: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IndexSummary {
    pub files: usize,
    pub functions: usize,
    pub fields: usize,
    pub skipped: usize,
}

/// Test-code heuristic applied to repository-relative paths.
pub fn is_test_file(path: &str) -> bool {
    let norm = path.replace('\\', "/");
    let segments: Vec<&str> = norm.split('/').collect();
    let in_test_dir = segments
        .iter()
        .take(segments.len().saturating_sub(1))
        .any(|s| *s == "test" || *s == "tests");
    let name = segments.last().copied().unwrap_or("");
    in_test_dir
        || name.ends_with("Test.java")
        || name.ends_with("Tests.java")
        || name.ends_with("TestCase.java")
}

/// Walks `repo_path` and indexes every `*.java` file.
pub fn index_repo(repo_path: &Path) -> Result<RepoIndex> {
    if !repo_path.is_dir() {
        return Err(Error::io(
            repo_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "repository directory not found"),
        ));
    }
    let mut paths = Vec::new();
    for entry in WalkDir::new(repo_path).follow_links(false) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(repo_path).to_path_buf();
            Error::io(&path, std::io::Error::other(e.to_string()))
        })?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == "java") {
            paths.push(entry.into_path());
        }
    }
    paths.sort();
    let sources = paths
        .iter()
        .map(|p| {
            let rel = p
                .strip_prefix(repo_path)
                .unwrap_or(p)
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            Ok((rel, String::from_utf8_lossy(&bytes).into_owned()))
        })
        .collect::<Result<Vec<_>>>()?;
    RepoIndex::from_sources(repo_path, sources)
}

impl RepoIndex {
    /// Builds an index from `(relative path, source)` pairs.
    pub fn from_sources(root: &Path, sources: Vec<(String, String)>) -> Result<Self> {
        let extracted: Vec<(String, Option<extract::Extracted>)> = sources
            .par_iter()
            .map_init(extract::new_parser, |parser, (path, src)| {
                (path.clone(), extract::extract(parser, path, src))
            })
            .collect();

        let mut functions = Vec::new();
        let mut fields = Vec::new();
        let mut classes = Vec::new();
        let mut files = Vec::new();
        let mut skipped = Vec::new();
        for (path, ex) in extracted {
            match ex {
                Some(ex) => {
                    functions.extend(ex.functions);
                    fields.extend(ex.fields);
                    classes.extend(ex.classes);
                    files.push(ex.file);
                }
                None => {
                    warn!("skipping unparseable file {path}");
                    skipped.push(path);
                }
            }
        }
        if files.is_empty() {
            return Err(Error::Validation(format!(
                "no parseable Java files under {} ({} skipped)",
                root.display(),
                skipped.len()
            )));
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        classes.sort_by(|a, b| (&a.file_path, a.span, &a.qualified_name).cmp(&(&b.file_path, b.span, &b.qualified_name)));
        fields.sort_by(|a, b| (&a.file_path, a.span, &a.name).cmp(&(&b.file_path, b.span, &b.name)));
        functions.sort_by(|a, b| {
            (&a.file_path, a.span, &a.qualified_name).cmp(&(&b.file_path, b.span, &b.qualified_name))
        });

        let mut name_count: HashMap<&str, usize> = HashMap::new();
        for f in &functions {
            *name_count.entry(f.qualified_name.as_str()).or_default() += 1;
        }
        let ids: Vec<String> = functions
            .iter()
            .map(|f| {
                if name_count[f.qualified_name.as_str()] > 1 {
                    format!("{}@{}:{}", f.qualified_name, f.file_path, f.span.start)
                } else {
                    f.qualified_name.clone()
                }
            })
            .collect();
        for (f, id) in functions.iter_mut().zip(ids) {
            f.id = id;
        }

        let mut by_simple_name: HashMap<String, Vec<usize>> = HashMap::new();
        let mut by_qualified_name: HashMap<String, Vec<usize>> = HashMap::new();
        let mut by_id = HashMap::new();
        for (i, f) in functions.iter().enumerate() {
            by_simple_name.entry(f.simple_name.clone()).or_default().push(i);
            by_qualified_name.entry(f.qualified_name.clone()).or_default().push(i);
            by_id.insert(f.id.clone(), i);
        }
        let mut class_by_name = HashMap::new();
        for (i, c) in classes.iter().enumerate() {
            if class_by_name.insert(c.qualified_name.clone(), i).is_some() {
                debug!("duplicate class {}", c.qualified_name);
            }
        }
        let file_by_path = files.iter().enumerate().map(|(i, f)| (f.path.clone(), i)).collect();
        let non_test_count = functions.iter().filter(|f| !f.is_test).count();

        Ok(RepoIndex {
            root: root.to_path_buf(),
            functions,
            fields,
            classes,
            files,
            skipped,
            by_simple_name,
            by_qualified_name,
            non_test_count,
            by_id,
            class_by_name,
            file_by_path,
        })
    }

    pub fn summary(&self) -> IndexSummary {
        IndexSummary {
            files: self.files.len(),
            functions: self.functions.len(),
            fields: self.fields.len(),
            skipped: self.skipped.len(),
        }
    }

    pub fn function(&self, id: &str) -> Option<&FunctionRecord> {
        self.by_id.get(id).map(|&i| &self.functions[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn non_test_functions(&self) -> impl Iterator<Item = &FunctionRecord> {
        self.functions.iter().filter(|f| !f.is_test)
    }

    pub fn functions_named(&self, simple_name: &str) -> impl Iterator<Item = &FunctionRecord> {
        self.by_simple_name
            .get(simple_name)
            .into_iter()
            .flatten()
            .map(|&i| &self.functions[i])
    }

    pub fn class(&self, qualified_name: &str) -> Option<&ClassRecord> {
        self.class_by_name.get(qualified_name).map(|&i| &self.classes[i])
    }

    pub fn file(&self, path: &str) -> Option<&FileRecord> {
        self.file_by_path.get(path).map(|&i| &self.files[i])
    }

    /// Maps a path from a diff header onto an indexed file: exact match, else
    /// the unique indexed path ending with it (or it ending with the indexed path).
    pub fn find_file(&self, diff_path: &str) -> Option<&FileRecord> {
        if let Some(f) = self.file(diff_path) {
            return Some(f);
        }
        let matches: Vec<&FileRecord> = self
            .files
            .iter()
            .filter(|f| {
                suffix_on_boundary(&f.path, diff_path) || suffix_on_boundary(diff_path, &f.path)
            })
            .collect();
        match matches.as_slice() {
            [one] => Some(one),
            _ => None,
        }
    }

    pub fn fields_of(&self, owner: &str) -> impl Iterator<Item = &FieldRecord> {
        let owner = owner.to_string();
        self.fields.iter().filter(move |f| f.owner_class == owner)
    }

    /// Functions of `file` whose regions cover `line`.
    pub fn functions_at(&self, file: &str, line: u32) -> Vec<&FunctionRecord> {
        self.functions
            .iter()
            .filter(|f| f.file_path == file && f.covers_line(line))
            .collect()
    }

    /// Innermost class of `file` whose span covers `line`.
    pub fn class_at(&self, file: &str, line: u32) -> Option<&ClassRecord> {
        self.classes
            .iter()
            .filter(|c| c.file_path == file && c.span.contains(line))
            .min_by_key(|c| c.span.end - c.span.start)
    }

    /// The initializer function of the given kind for `owner`, if any.
    pub fn initializer(&self, owner: &str, kind: FunctionKind) -> Option<&FunctionRecord> {
        self.functions
            .iter()
            .find(|f| f.kind == kind && f.enclosing_class == owner)
    }

    pub fn methods_of(&self, owner: &str) -> impl Iterator<Item = &FunctionRecord> {
        let owner = owner.to_string();
        self.functions.iter().filter(move |f| f.enclosing_class == owner)
    }
}

fn suffix_on_boundary(long: &str, short: &str) -> bool {
    long.len() > short.len()
        && long.ends_with(short)
        && long.as_bytes()[long.len() - short.len() - 1] == b'/'
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn index(files: &[(&str, &str)]) -> RepoIndex {
        RepoIndex::from_sources(
            Path::new("/repo"),
            files.iter().map(|(p, s)| (p.to_string(), s.to_string())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn test_file_heuristic() {
        assert!(is_test_file("src/test/java/FooTest.java"));
        assert!(is_test_file("module/tests/Foo.java"));
        assert!(is_test_file("src/main/java/FooTests.java"));
        assert!(is_test_file("src/main/java/FooTestCase.java"));
        assert!(!is_test_file("src/main/java/Foo.java"));
        assert!(!is_test_file("src/main/java/TestUtils.java"));
        assert!(!is_test_file("src/main/java/testing/Foo.java"));
        assert!(!is_test_file("test"));
    }

    #[test]
    fn counts_methods_and_constructors() {
        let idx = index(&[(
            "src/p/A.java",
            "package p;\npublic class A {\n  A() {}\n  void f() {}\n  int g(int x) { return x; }\n}\n",
        )]);
        assert_eq!(idx.functions.len(), 3);
        assert_eq!(idx.non_test_count, 3);
        let ctor = idx.functions.iter().find(|f| f.is_constructor()).unwrap();
        assert_eq!(ctor.simple_name, "A");
        assert_eq!(ctor.qualified_name, "p.A#A()");
        assert!(idx.function("p.A#g(int)").is_some());
        for (i, f) in idx.functions.iter().enumerate() {
            assert!(idx.by_simple_name[&f.simple_name].contains(&i));
            assert!(idx.by_qualified_name[&f.qualified_name].contains(&i));
            assert!(f.span.start <= f.span.end && !f.body.is_empty());
        }
    }

    #[test]
    fn static_initializer_is_synthetic_function() {
        let idx = index(&[(
            "src/org/x/XStreamSupport.java",
            "package org.x;\n\
             public class XStreamSupport {\n\
             \x20 private static XStream stream = new XStream();\n\
             \x20 static {\n\
             \x20   stream.addPermission(NoTypePermission.NONE);\n\
             \x20 }\n\
             \x20 public static XStream createXStream() { return stream; }\n\
             }\n",
        )]);
        let init = idx
            .functions
            .iter()
            .find(|f| f.kind == FunctionKind::StaticInit)
            .unwrap();
        assert_eq!(init.qualified_name, "org.x.XStreamSupport.<static-init>");
        assert_eq!(init.regions, vec![Span::new(3, 3), Span::new(4, 6)]);
        assert_eq!(init.span, Span::new(3, 6));
        let names: Vec<_> = init.invocations.iter().map(|c| c.site.callee_name.as_str()).collect();
        assert_eq!(names, vec!["XStream", "addPermission"]);
        let field = &idx.fields[0];
        assert!(field.is_static && field.declared_in_static_initializer);
        assert_eq!(init.numbered_lines()[1], (4, "static {"));
    }

    #[test]
    fn empty_and_missing_repos_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(index_repo(dir.path()), Err(Error::Validation(_))));
        assert!(matches!(index_repo(&dir.path().join("nope")), Err(Error::Io { .. })));
    }

    #[test]
    fn unparseable_files_are_skipped() {
        let idx = index(&[
            ("A.java", "class A { void f() {} }"),
            ("B.java", "class B { void f( { }"),
        ]);
        assert_eq!(idx.skipped, vec!["B.java"]);
        assert_eq!(idx.summary().files, 1);
    }

    #[test]
    fn test_functions_flagged() {
        let idx = index(&[
            ("src/main/A.java", "class A { void f() {} }"),
            ("src/test/ATest.java", "class ATest { void t() {} }"),
        ]);
        assert_eq!(idx.non_test_count, 1);
        assert!(idx.functions.iter().any(|f| f.is_test));
    }

    #[test]
    fn duplicate_qualified_names_get_distinct_ids() {
        let idx = index(&[
            ("a/A.java", "class A { void f() {} }"),
            ("b/A.java", "class A { void f() {} }"),
        ]);
        assert_eq!(idx.functions[0].id, "A#f()@a/A.java:1");
        assert_eq!(idx.functions[1].id, "A#f()@b/A.java:1");
    }

    #[test]
    fn diff_paths_resolve_by_suffix() {
        let idx = index(&[
            ("core/src/p/A.java", "package p; class A {}"),
            ("core/src/q/A.java", "package q; class A {}"),
        ]);
        assert_eq!(idx.find_file("src/p/A.java").unwrap().path, "core/src/p/A.java");
        assert!(idx.find_file("A.java").is_none());
    }

    #[test]
    fn deterministic() {
        let files = [
            ("b/B.java", "class B { int x = 1; void g() { x++; } }"),
            ("a/A.java", "class A { static { } void f() { new B().g(); } }"),
        ];
        let a = index(&files);
        let b = index(&[files[1], files[0]]);
        let ids = |i: &RepoIndex| i.functions.iter().map(|f| f.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(a.fields, b.fields);
    }
}
