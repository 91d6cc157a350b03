//! Unified-diff parsing and buggy/patched fragment extraction.
//!
//! The buggy fragment is the removed lines plus context lines; the patched
//! fragment is the added lines plus the same context lines. Both are
//! flattened to a single line before tokenization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("empty diff")]
    Empty,
    #[error("no hunk header (`@@`) found")]
    NoHunk,
    #[error("line {line}: unknown diff body prefix in {text:?}")]
    UnknownPrefix { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineTag {
    Context,
    Removed,
    Added,
}

impl LineTag {
    fn marker(self) -> char {
        match self {
            LineTag::Context => ' ',
            LineTag::Removed => '-',
            LineTag::Added => '+',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub tag: LineTag,
    /// Line content with exactly one marker character removed.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub header: String,
    pub lines: Vec<DiffLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkSet {
    pub hunks: Vec<Hunk>,
}

impl HunkSet {
    pub fn lines(&self) -> impl Iterator<Item = &DiffLine> {
        self.hunks.iter().flat_map(|h| h.lines.iter())
    }

    pub fn count(&self, tag: LineTag) -> usize {
        self.lines().filter(|l| l.tag == tag).count()
    }

    /// Renders the hunks back to unified-diff body text (no file headers).
    pub fn to_diff_text(&self) -> String {
        let mut out = String::new();
        for h in &self.hunks {
            out.push_str(&h.header);
            out.push('\n');
            for l in &h.lines {
                out.push(l.tag.marker());
                out.push_str(&l.text);
                out.push('\n');
            }
        }
        out
    }
}

fn is_file_header(line: &str) -> bool {
    line.starts_with("--- ")
        || line.starts_with("+++ ")
        || line.starts_with("diff ")
        || line.starts_with("index ")
        || line.starts_with("new file mode")
        || line.starts_with("deleted file mode")
        || line.starts_with("similarity index")
}

/// Old/new line counts from a header like `@@ -12,3 +12,4 @@`.
fn header_counts(header: &str) -> Option<(usize, usize)> {
    let mut parts = header.split_whitespace();
    if parts.next()? != "@@" {
        return None;
    }
    let count = |range: &str| -> Option<usize> {
        match range.split_once(',') {
            Some((_, n)) => n.parse().ok(),
            None => range.parse::<usize>().ok().map(|_| 1),
        }
    };
    let old = count(parts.next()?.strip_prefix('-')?)?;
    let new = count(parts.next()?.strip_prefix('+')?)?;
    Some((old, new))
}

/// Parses hunks from a unified diff. Lines before the first `@@` header are
/// file metadata and skipped. Inside a hunk the header's line counts decide
/// where the body ends, so a removed line reading `-- x` is not mistaken for
/// a `--- ` file header.
pub fn parse_diff(diff_text: &str) -> Result<HunkSet, DiffError> {
    if diff_text.trim().is_empty() {
        return Err(DiffError::Empty);
    }
    let mut hunks: Vec<Hunk> = Vec::new();
    // Remaining (old, new) body lines of the current hunk, when the header parsed.
    let mut remaining: Option<(usize, usize)> = None;
    for (idx, raw) in diff_text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let in_body = remaining.is_some_and(|(o, n)| o > 0 || n > 0);
        if !in_body && line.starts_with('@') {
            remaining = header_counts(line);
            hunks.push(Hunk {
                header: line.to_string(),
                lines: Vec::new(),
            });
            continue;
        }
        let Some(hunk) = hunks.last_mut() else {
            continue;
        };
        if !in_body && is_file_header(line) {
            continue;
        }
        let mut chars = line.chars();
        let tag = match chars.next() {
            Some(' ') | None => LineTag::Context,
            Some('-') => LineTag::Removed,
            Some('+') => LineTag::Added,
            // `\ No newline at end of file`
            Some('\\') => continue,
            Some(_) => {
                return Err(DiffError::UnknownPrefix {
                    line: idx + 1,
                    text: line.to_string(),
                })
            }
        };
        if let Some((old, new)) = remaining.as_mut() {
            if tag != LineTag::Added {
                *old = old.saturating_sub(1);
            }
            if tag != LineTag::Removed {
                *new = new.saturating_sub(1);
            }
        }
        hunk.lines.push(DiffLine {
            tag,
            text: chars.as_str().to_string(),
        });
    }
    if hunks.is_empty() {
        return Err(DiffError::NoHunk);
    }
    Ok(HunkSet { hunks })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentPair {
    pub buggy_text: String,
    pub patched_text: String,
    pub buggy_tokens: Vec<String>,
    pub patched_tokens: Vec<String>,
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn flatten(lines: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let mut out = String::new();
    for line in lines {
        for word in line.as_ref().split_whitespace() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(word);
        }
    }
    out
}

pub fn extract_fragments(hunks: &HunkSet) -> FragmentPair {
    let side = |keep: LineTag| {
        flatten(
            hunks
                .lines()
                .filter(|l| l.tag == LineTag::Context || l.tag == keep)
                .map(|l| l.text.as_str()),
        )
    };
    let buggy_text = side(LineTag::Removed);
    let patched_text = side(LineTag::Added);
    FragmentPair {
        buggy_tokens: tokenize(&buggy_text),
        patched_tokens: tokenize(&patched_text),
        buggy_text,
        patched_text,
    }
}

pub fn fragments_from_diff(diff_text: &str) -> Result<FragmentPair, DiffError> {
    Ok(extract_fragments(&parse_diff(diff_text)?))
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

/// Lexical tokenizer: identifiers, keywords and numbers are kept whole,
/// quoted string/char literals are kept whole, every other non-whitespace
/// character becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            // 12, 1.5f, 0x1F, 1e-3
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+')
                    && matches!(chars[i - 1], 'e' | 'E')
                    && !chars[start..i].iter().any(|c| matches!(c, 'x' | 'X'));
                let dot = d == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit);
                if is_word_char(d) || dot || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            tokens.push(chars[start..i].iter().collect());
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else if c == '"' || c == '\'' {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i] != c {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i = (i + 1).min(chars.len());
            tokens.push(chars[start..i].iter().collect());
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    tokens
}
