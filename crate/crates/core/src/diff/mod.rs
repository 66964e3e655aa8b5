//! Unified-diff parsing.

pub mod invocation;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use invocation::{extract_invocations, InvocationKind, InvocationSite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineRole {
    Added,
    Deleted,
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub role: LineRole,
    pub text: String,
    /// Line number in the pre-image (deleted and context lines).
    pub old_line: Option<u32>,
    /// Line number in the post-image (added and context lines).
    pub new_line: Option<u32>,
}

/// `(start, count)` as written in the `@@` header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkRange {
    pub start: u32,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    /// Repository-relative path of the post-image (pre-image for deletions).
    pub file_path: String,
    /// `None` when the file is newly created by the patch.
    pub old_path: Option<String>,
    pub old_range: HunkRange,
    pub new_range: HunkRange,
    pub lines: Vec<DiffLine>,
}

impl DiffHunk {
    pub fn added(&self) -> impl Iterator<Item = &DiffLine> {
        self.lines.iter().filter(|l| l.role == LineRole::Added)
    }

    pub fn deleted(&self) -> impl Iterator<Item = &DiffLine> {
        self.lines.iter().filter(|l| l.role == LineRole::Deleted)
    }

    pub fn context(&self) -> impl Iterator<Item = &DiffLine> {
        self.lines.iter().filter(|l| l.role == LineRole::Context)
    }

    pub fn is_new_file(&self) -> bool {
        self.old_path.is_none()
    }

    /// Pre-image position of every added line: the old line it is inserted before
    /// (or the last old line of the hunk when appended at its end).
    pub fn added_anchors(&self) -> Vec<(usize, u32)> {
        let mut out = Vec::new();
        let mut pending = Vec::new();
        let mut last_old = self.old_range.start.saturating_sub(1);
        for (i, line) in self.lines.iter().enumerate() {
            match line.old_line {
                Some(old) => {
                    for p in pending.drain(..) {
                        out.push((p, old));
                    }
                    last_old = old;
                }
                None => pending.push(i),
            }
        }
        for p in pending {
            out.push((p, last_old.max(1)));
        }
        out.sort_unstable();
        out
    }

    /// Renders the hunk back to unified-diff body lines (header excluded).
    pub fn body_lines(&self) -> Vec<String> {
        self.lines
            .iter()
            .map(|l| {
                let marker = match l.role {
                    LineRole::Added => '+',
                    LineRole::Deleted => '-',
                    LineRole::Context => ' ',
                };
                format!("{marker}{}", l.text)
            })
            .collect()
    }
}

fn strip_prefix_path(raw: &str) -> Option<String> {
    let path = raw.split('\t').next().unwrap_or("").trim();
    let path = path.trim_matches('"');
    if path == "/dev/null" || path.is_empty() {
        return None;
    }
    let stripped = path
        .strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path);
    Some(stripped.to_string())
}

fn parse_range(tok: &str, line_no: usize) -> Result<HunkRange> {
    let bad = || Error::Diff {
        line: line_no,
        message: format!("bad hunk range {tok:?}"),
    };
    let (start, count) = match tok.split_once(',') {
        Some((s, c)) => (s, Some(c)),
        None => (tok, None),
    };
    let start: u32 = start.parse().map_err(|_| bad())?;
    let count: u32 = match count {
        Some(c) => c.parse().map_err(|_| bad())?,
        None => 1,
    };
    Ok(HunkRange { start, count })
}

fn parse_hunk_header(line: &str, line_no: usize) -> Result<(HunkRange, HunkRange)> {
    let malformed = || Error::Diff {
        line: line_no,
        message: format!("malformed hunk header {line:?}"),
    };
    let rest = line.strip_prefix("@@ ").ok_or_else(malformed)?;
    let end = rest.find(" @@").ok_or_else(malformed)?;
    let mut parts = rest[..end].split_whitespace();
    let old = parts
        .next()
        .and_then(|p| p.strip_prefix('-'))
        .ok_or_else(malformed)?;
    let new = parts
        .next()
        .and_then(|p| p.strip_prefix('+'))
        .ok_or_else(malformed)?;
    if parts.next().is_some() {
        return Err(malformed());
    }
    Ok((parse_range(old, line_no)?, parse_range(new, line_no)?))
}

/// Parses (possibly multi-file) unified-diff text into hunks.
pub fn parse_diff(text: &str) -> Result<Vec<DiffHunk>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut hunks = Vec::new();
    let mut old_path: Option<String> = None;
    let mut new_path: Option<String> = None;
    let mut saw_old_header = false;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if line.starts_with("diff ") {
            old_path = None;
            new_path = None;
            saw_old_header = false;
        } else if line.starts_with("Binary files ") || line.starts_with("GIT binary patch") {
            warn!("skipping binary diff section at line {}", i + 1);
        } else if let Some(rest) = line.strip_prefix("--- ") {
            old_path = strip_prefix_path(rest);
            saw_old_header = true;
        } else if let Some(rest) = line.strip_prefix("+++ ") {
            new_path = strip_prefix_path(rest);
        } else if line.starts_with("@@") {
            let line_no = i + 1;
            let (old_range, new_range) = parse_hunk_header(line, line_no)?;
            let file_path = match new_path.clone().or_else(|| old_path.clone()) {
                Some(p) => p,
                None if saw_old_header => {
                    return Err(Error::Diff {
                        line: line_no,
                        message: "hunk for a file with no path".into(),
                    })
                }
                None => {
                    return Err(Error::Diff {
                        line: line_no,
                        message: "hunk before any file header".into(),
                    })
                }
            };
            let mut body = Vec::new();
            let mut old_left = old_range.count;
            let mut new_left = new_range.count;
            let mut old_no = old_range.start;
            let mut new_no = new_range.start;
            i += 1;
            while (old_left > 0 || new_left > 0) && i < lines.len() {
                let l = lines[i];
                let (role, content) = if let Some(c) = l.strip_prefix('+') {
                    (LineRole::Added, c)
                } else if let Some(c) = l.strip_prefix('-') {
                    (LineRole::Deleted, c)
                } else if let Some(c) = l.strip_prefix(' ') {
                    (LineRole::Context, c)
                } else if l.is_empty() {
                    (LineRole::Context, "")
                } else if l.starts_with('\\') {
                    i += 1;
                    continue;
                } else {
                    break;
                };
                let dl = match role {
                    LineRole::Added => {
                        if new_left == 0 {
                            break;
                        }
                        new_left -= 1;
                        new_no += 1;
                        DiffLine { role, text: content.to_string(), old_line: None, new_line: Some(new_no - 1) }
                    }
                    LineRole::Deleted => {
                        if old_left == 0 {
                            break;
                        }
                        old_left -= 1;
                        old_no += 1;
                        DiffLine { role, text: content.to_string(), old_line: Some(old_no - 1), new_line: None }
                    }
                    LineRole::Context => {
                        if old_left == 0 || new_left == 0 {
                            break;
                        }
                        old_left -= 1;
                        new_left -= 1;
                        old_no += 1;
                        new_no += 1;
                        DiffLine {
                            role,
                            text: content.to_string(),
                            old_line: Some(old_no - 1),
                            new_line: Some(new_no - 1),
                        }
                    }
                };
                body.push(dl);
                i += 1;
            }
            if old_left > 0 || new_left > 0 {
                return Err(Error::Diff {
                    line: line_no,
                    message: format!(
                        "hunk body shorter than header ({old_left} old / {new_left} new lines missing)"
                    ),
                });
            }
            // Skip a trailing "\ No newline at end of file" marker.
            while i < lines.len() && lines[i].starts_with('\\') {
                i += 1;
            }
            hunks.push(DiffHunk {
                file_path,
                old_path: old_path.clone(),
                old_range,
                new_range,
                lines: body,
            });
            continue;
        }
        i += 1;
    }
    Ok(hunks)
}

/// Parses several patches and concatenates their hunks.
pub fn parse_diffs<S: AsRef<str>>(texts: &[S]) -> Result<Vec<DiffHunk>> {
    let mut all = Vec::new();
    for t in texts {
        all.extend(parse_diff(t.as_ref())?);
    }
    Ok(all)
}
