//! Intra-procedural alias normalization of call arguments.
//!
//! Statements preceding a call are replayed in program order. A simple copy
//! `a = b` binds `a` to the root of `b` as it stands at that point; any other
//! assignment (call result, expression, compound update) cuts the chain.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;

use crate::diff::InvocationSite;

static ASSIGN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:final\s+)?(?:(?P<ty>[A-Za-z_$][\w$.]*(?:\s*<.*>)?(?:\s*\[\s*\])*)\s+)?(?P<name>[A-Za-z_$][\w$]*)\s*=(?P<rhs>.*)$",
    )
    .unwrap()
});
static DECL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:final\s+)?(?P<ty>[A-Za-z_$][\w$.]*(?:\s*<.*>)?(?:\s*\[\s*\])*)\s+(?P<name>[A-Za-z_$][\w$]*)$")
        .unwrap()
});
static UPDATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:(?:\+\+|--)\s*(?P<pre>[A-Za-z_$][\w$]*)|(?P<name>[A-Za-z_$][\w$]*)\s*(?:\+\+|--|(?:[-+*/%&|^]|<<|>>>?)=))")
        .unwrap()
});
static CAST: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(\s*[\w$.<>\[\], ?]+\s*\)\s*").unwrap());
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_$][\w$]*$").unwrap());

const NOT_VARIABLES: &[&str] = &["null", "true", "false", "this", "super"];
const STATEMENT_KEYWORDS: &[&str] = &["return", "throw", "new", "else", "case", "yield", "assert", "do"];

#[derive(Debug, Clone)]
enum Binding {
    Copy(String),
    Opaque,
}

/// Removes whitespace outside string and char literals.
pub fn canonical_arg(arg: &str) -> String {
    let mut out = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in arg.chars() {
        match quote {
            Some(q) => {
                out.push(c);
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None if c == '"' || c == '\'' => {
                quote = Some(c);
                out.push(c);
            }
            None if c.is_whitespace() => {}
            None => out.push(c),
        }
    }
    out
}

/// Replaces string literal contents and strips comments so `;` inside them
/// does not split statements.
fn scrub(code: &str) -> String {
    let mut out = String::with_capacity(code.len());
    let chars: Vec<char> = code.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            i += 2;
        } else if c == '"' || c == '\'' {
            out.push(c);
            i += 1;
            while i < chars.len() && chars[i] != c && chars[i] != '\n' {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            out.push(c);
            i += 1;
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

fn bindings(preceding: &str) -> HashMap<String, Binding> {
    let code = scrub(preceding);
    let mut env: HashMap<String, Binding> = HashMap::new();
    let pieces: Vec<&str> = code.split([';', '{', '}']).collect();
    // The final piece is not terminated, so it is not a complete statement.
    for stmt in &pieces[..pieces.len().saturating_sub(1)] {
        let stmt = stmt.trim();
        if stmt.is_empty() {
            continue;
        }
        if let Some(c) = UPDATE.captures(stmt) {
            let name = c.name("pre").or(c.name("name")).unwrap().as_str();
            if !stmt[c.get(0).unwrap().end()..].starts_with('=') {
                env.insert(name.to_string(), Binding::Opaque);
                continue;
            }
        }
        if let Some(c) = ASSIGN.captures(stmt) {
            if c.name("ty").is_some_and(|t| STATEMENT_KEYWORDS.contains(&t.as_str())) {
                continue;
            }
            let rhs = c["rhs"].trim();
            if rhs.starts_with('=') {
                continue;
            }
            let name = c["name"].to_string();
            let binding = match copy_source(rhs) {
                Some(src) => Binding::Copy(resolve(&env, src)),
                None => Binding::Opaque,
            };
            env.insert(name, binding);
        } else if let Some(c) = DECL.captures(stmt) {
            if !STATEMENT_KEYWORDS.contains(&&c["ty"]) {
                env.insert(c["name"].to_string(), Binding::Opaque);
            }
        }
    }
    env
}

/// The variable a right-hand side copies, if it is a plain (possibly cast or
/// parenthesized) variable.
fn copy_source(rhs: &str) -> Option<&str> {
    let mut r = rhs.trim();
    loop {
        if let Some(m) = CAST.find(r) {
            let rest = &r[m.end()..];
            // `(a)` alone is a parenthesized variable, not a cast.
            if !rest.is_empty() {
                r = rest.trim();
                continue;
            }
        }
        if r.starts_with('(') && r.ends_with(')') {
            r = r[1..r.len() - 1].trim();
            continue;
        }
        break;
    }
    (IDENT.is_match(r) && !NOT_VARIABLES.contains(&r)).then_some(r)
}

fn resolve(env: &HashMap<String, Binding>, name: &str) -> String {
    match env.get(name) {
        Some(Binding::Copy(root)) => root.clone(),
        _ => name.to_string(),
    }
}

/// Normalizes `site.args` given the code that precedes the call.
pub fn normalize_args_in(site: &InvocationSite, preceding: &str) -> Vec<String> {
    let env = bindings(preceding);
    site.args
        .iter()
        .map(|a| {
            let a = canonical_arg(a);
            if IDENT.is_match(&a) {
                resolve(&env, &a)
            } else {
                a
            }
        })
        .collect()
}

/// Normalizes `site.args` against the enclosing function body. The call is
/// located by its origin line; statements after it are ignored. A site not
/// found in `scope` is normalized against the whole scope.
pub fn normalize_args(site: &InvocationSite, scope: &str) -> Vec<String> {
    let origin = site.origin_line.trim();
    let preceding = match (!origin.is_empty()).then(|| scope.find(origin)).flatten() {
        Some(pos) => {
            let call_at = origin.find(&format!("{}(", site.callee_name)).unwrap_or(0);
            format!("{}{}", &scope[..pos], &origin[..call_at])
        }
        None => format!("{scope}\n;"),
    };
    normalize_args_in(site, &preceding)
}
