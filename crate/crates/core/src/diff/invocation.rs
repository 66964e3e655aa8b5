//! Best-effort call extraction from single, possibly partial, Java lines.
//!
//! This is a token-level recognizer, not a parser: it finds `name(` patterns
//! and classifies them by what precedes the name.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvocationKind {
    MethodCall,
    ConstructorCall,
    StaticCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InvocationSite {
    pub callee_name: String,
    /// Receiver expression for method and static calls (`stream`, `XStreamSupport`).
    pub receiver: Option<String>,
    pub args: Vec<String>,
    pub kind: InvocationKind,
    pub origin_line: String,
}

impl InvocationSite {
    /// Class a static call or constructor targets (last dotted segment).
    pub fn target_class(&self) -> Option<&str> {
        match self.kind {
            InvocationKind::ConstructorCall => Some(self.callee_name.as_str()),
            InvocationKind::StaticCall => self
                .receiver
                .as_deref()
                .map(|r| r.rsplit('.').next().unwrap_or(r)),
            InvocationKind::MethodCall => None,
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident,
    Literal,
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    start: usize,
    end: usize,
}

fn tokenize(line: &str) -> Vec<Token> {
    let bytes = line.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            break;
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            match line[i + 2..].find("*/") {
                Some(off) => i = i + 2 + off + 2,
                None => break,
            }
        } else if c == b'"' || c == b'\'' {
            let start = i;
            i += 1;
            while i < bytes.len() && bytes[i] != c {
                if bytes[i] == b'\\' {
                    i += 1;
                }
                i += 1;
            }
            i = (i + 1).min(bytes.len());
            toks.push(Token { kind: Tok::Literal, start, end: i });
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.' || bytes[i] == b'_') {
                i += 1;
            }
            toks.push(Token { kind: Tok::Literal, start, end: i });
        } else if c.is_ascii_alphabetic() || c == b'_' || c == b'$' || c >= 0x80 {
            let start = i;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$' || bytes[i] >= 0x80)
            {
                i += 1;
            }
            toks.push(Token { kind: Tok::Ident, start, end: i });
        } else {
            toks.push(Token { kind: Tok::Punct(c as char), start: i, end: i + 1 });
            i += 1;
        }
    }
    toks
}

const NOT_CALLS: &[&str] = &[
    "if", "while", "for", "switch", "catch", "synchronized", "return", "throw", "new", "assert",
    "super", "this", "try", "else", "do", "case", "instanceof", "yield", "default",
];

/// Keywords that may directly precede an expression, so `kw name(` is a call.
const EXPR_KEYWORDS: &[&str] = &["return", "throw", "else", "case", "yield", "assert", "do"];

fn text<'a>(line: &'a str, t: &Token) -> &'a str {
    &line[t.start..t.end]
}

fn is_punct(t: Option<&Token>, c: char) -> bool {
    matches!(t, Some(Token { kind: Tok::Punct(p), .. }) if *p == c)
}

fn is_type_like(name: &str) -> bool {
    name.chars().next().is_some_and(char::is_uppercase) && name.chars().any(char::is_lowercase)
}

/// Index of the bracket matching the opener at `open`, scanning forward.
fn match_forward(toks: &[Token], open: usize, o: char, c: char) -> Option<usize> {
    let mut depth = 0i32;
    for (j, t) in toks.iter().enumerate().skip(open) {
        if let Tok::Punct(p) = t.kind {
            if p == o {
                depth += 1;
            } else if p == c {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
        }
    }
    None
}

fn match_backward(toks: &[Token], close: usize, o: char, c: char) -> Option<usize> {
    let mut depth = 0i32;
    for j in (0..=close).rev() {
        if let Tok::Punct(p) = toks[j].kind {
            if p == c {
                depth += 1;
            } else if p == o {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
        }
    }
    None
}

/// Skips a generic argument list starting at `lt`; returns the index after `>`.
fn skip_type_args(line: &str, toks: &[Token], lt: usize) -> Option<usize> {
    let mut depth = 0i32;
    for (j, t) in toks.iter().enumerate().skip(lt) {
        match t.kind {
            Tok::Punct('<') => depth += 1,
            Tok::Punct('>') => {
                depth -= 1;
                if depth == 0 {
                    return Some(j + 1);
                }
            }
            Tok::Punct('.') | Tok::Punct(',') | Tok::Punct('?') | Tok::Punct('[') | Tok::Punct(']') => {}
            Tok::Ident if !matches!(text(line, t), "new" | "return") => {}
            _ => return None,
        }
    }
    None
}

fn split_args(line: &str, toks: &[Token], open: usize) -> Vec<String> {
    let close = match_forward(toks, open, '(', ')');
    let end_tok = close.unwrap_or(toks.len());
    if end_tok == open + 1 {
        return Vec::new();
    }
    let mut args = Vec::new();
    let mut depth = 0i32;
    let mut seg_start = toks.get(open + 1).map(|t| t.start);
    for j in open + 1..end_tok {
        match toks[j].kind {
            Tok::Punct('(') | Tok::Punct('[') | Tok::Punct('{') => depth += 1,
            Tok::Punct(')') | Tok::Punct(']') | Tok::Punct('}') => depth -= 1,
            Tok::Punct(',') if depth == 0 => {
                if let Some(s) = seg_start {
                    args.push(line[s..toks[j].start].trim().to_string());
                }
                seg_start = toks.get(j + 1).map(|t| t.start);
            }
            _ => {}
        }
    }
    let seg_end = match close {
        Some(c) => toks[c].start,
        None => toks.last().map_or(line.len(), |t| t.end),
    };
    if seg_start.is_none() && !args.is_empty() {
        // Line ends right after a comma.
        args.push(String::new());
    }
    if let Some(s) = seg_start {
        if s <= seg_end {
            let a = line[s..seg_end].trim();
            if !a.is_empty() || !args.is_empty() {
                args.push(a.to_string());
            }
        }
    }
    args
}

/// Walks back from the token before a `.` to the start of the receiver chain.
fn chain_start(line: &str, toks: &[Token], mut j: usize) -> Option<usize> {
    loop {
        match toks[j].kind {
            Tok::Ident | Tok::Literal => {}
            Tok::Punct(')') => {
                let open = match_backward(toks, j, '(', ')')?;
                if open == 0 || toks[open - 1].kind != Tok::Ident || NOT_CALLS.contains(&text(line, &toks[open - 1]))
                {
                    // Parenthesized expression such as `((Foo) x).bar()`.
                    return Some(open);
                }
                j = open - 1;
            }
            Tok::Punct(']') => {
                let open = match_backward(toks, j, '[', ']')?;
                if open == 0 {
                    return None;
                }
                j = open - 1;
                continue;
            }
            _ => return None,
        }
        if j >= 2 && is_punct(toks.get(j - 1), '.') {
            j -= 2;
        } else {
            return Some(j);
        }
    }
}

/// Extracts every call on `line`, in textual order. Never fails.
pub fn extract_invocations(line: &str) -> Vec<InvocationSite> {
    let toks = tokenize(line);
    let origin = line.trim().to_string();
    let mut out = Vec::new();
    for i in 0..toks.len() {
        if toks[i].kind != Tok::Ident {
            continue;
        }
        let name = text(line, &toks[i]);
        let prev = if i > 0 { Some(&toks[i - 1]) } else { None };

        // Position of the `(` opening the argument list, allowing `Name<...>(` after `new`.
        let mut open = i + 1;
        if is_punct(toks.get(open), '<') {
            match skip_type_args(line, &toks, open) {
                Some(after) => open = after,
                None => continue,
            }
        }
        if !is_punct(toks.get(open), '(') {
            continue;
        }
        if NOT_CALLS.contains(&name) {
            continue;
        }

        let site = |kind, receiver: Option<String>, callee: &str| InvocationSite {
            callee_name: callee.to_string(),
            receiver,
            args: split_args(line, &toks, open),
            kind,
            origin_line: origin.clone(),
        };

        match prev {
            Some(p) if p.kind == Tok::Ident && text(line, p) == "new" => {
                out.push(site(InvocationKind::ConstructorCall, None, name));
            }
            Some(p) if is_punct(Some(p), '.') => {
                if i < 2 {
                    continue;
                }
                let Some(start) = chain_start(line, &toks, i - 2) else {
                    continue;
                };
                let preceded_by_new = start > 0
                    && toks[start - 1].kind == Tok::Ident
                    && text(line, &toks[start - 1]) == "new";
                let receiver = line[toks[start].start..toks[i - 1].start].trim().to_string();
                let last = &toks[i - 2];
                if preceded_by_new && !receiver.contains('(') {
                    out.push(site(InvocationKind::ConstructorCall, None, name));
                } else if last.kind == Tok::Ident && is_type_like(text(line, last)) {
                    out.push(site(InvocationKind::StaticCall, Some(receiver), name));
                } else {
                    out.push(site(InvocationKind::MethodCall, Some(receiver), name));
                }
            }
            Some(p) if is_punct(Some(p), '@') => {}
            Some(p) if p.kind == Tok::Ident && !EXPR_KEYWORDS.contains(&text(line, p)) => {
                // `Type name(` is a declaration.
            }
            Some(p) if is_punct(Some(p), '>') || is_punct(Some(p), ']') => {}
            Some(p) if is_punct(Some(p), ':') && i >= 2 && is_punct(toks.get(i - 2), ':') => {}
            _ => out.push(site(InvocationKind::MethodCall, None, name)),
        }
    }
    out
}
