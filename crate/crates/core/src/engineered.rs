//! Hand-designed patch features: repair-pattern flags and lexical
//! code-description counts for the buggy and patched fragments.
//!
//! Every feature is listed in [`registry`] together with the rule that
//! defines it. Vectors are laid out as `[patterns | buggy counts | patched
//! counts | deltas]`, in registry order.
//!
//! Terms used by the pattern rules:
//! - *removed* / *added*: hunk lines tagged `-` / `+`.
//! - *normalized text*: the line with all whitespace deleted.
//! - *position*: the line's number in the old file (removed lines) or the new
//!   file (added lines), taken from the hunk header.
//! - *retained line*: a context line, or a removed/added line whose normalized
//!   text also occurs on the other side (the code survived the patch).

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::PatchRecord;
use crate::diffparse::{self, DiffError, DiffLine, FragmentPair, HunkSet, LineTag};

pub const REGISTRY_VERSION: &str = "lexical-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Flag,
    Count,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub rule: String,
}

const PATTERNS: &[(&str, &str)] = &[
    ("singleLine", "exactly one changed line in total (removed + added == 1); a one-line replacement counts as two"),
    ("codeMove", "some non-empty normalized removed line equals a normalized added line at a different position"),
    ("wrapsIf", "an added line containing `if (` either ends with `{` and is followed by a retained line before the next added line starting with `}`, or has no `{`/`;` ending and is directly followed by a retained line"),
    ("unwrapIf", "symmetric to wrapsIf over removed lines: a removed `if (` block opener encloses a retained line and its removed closing `}`"),
    ("wrapsTryCatch", "an added line starting with `try` and ending with `{` is followed by a retained line and later by an added line containing `catch`"),
    ("unwrapTryCatch", "symmetric to wrapsTryCatch over removed lines"),
    ("conditionalBlockAdd", "added lines open more blocks than removed lines, where a block opener contains one of if/else/for/while and ends with `{`"),
    ("conditionalBlockRemove", "removed lines open more blocks than added lines (same opener rule)"),
    ("constantChange", "equal numbers of removed and added lines (>= 1); pairing them in order, each pair has equal token counts and every differing token is a literal (numeric, string, char or boolean) on both sides; at least one token differs"),
    ("expressionFix", "equal numbers of removed and added lines (>= 1); every pair has the form `<prefix> if|while|for ( <cond> ) <suffix>` with identical prefix and suffix tokens; at least one condition differs"),
    ("onlyAddition", "at least one added line and no removed lines"),
    ("onlyRemoval", "at least one removed line and no added lines"),
];

const KEYWORDS: &[&str] = &[
    "if", "else", "for", "while", "return", "throw", "try", "catch", "break", "continue", "new",
    "null",
];

/// (counter name, rule), in layout order.
fn counters() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = KEYWORDS
        .iter()
        .map(|k| {
            (
                format!("kw_{k}"),
                format!("occurrences of the keyword token `{k}`"),
            )
        })
        .collect();
    for (class, ops) in OPERATOR_CLASSES {
        out.push((
            format!("op_{class}"),
            format!("{class} operators ({})", ops.join(" ")),
        ));
    }
    out.push(("lit_numeric".into(), "tokens starting with a digit".into()));
    out.push((
        "lit_string".into(),
        "quoted string or char literal tokens".into(),
    ));
    out.push(("lit_boolean".into(), "`true` / `false` tokens".into()));
    out.push((
        "calls".into(),
        "identifier tokens (not control keywords) immediately followed by `(`".into(),
    ));
    out
}

const OPERATOR_CLASSES: &[(&str, &[&str])] = &[
    ("arithmetic", &["+", "-", "*", "/", "%", "++", "--"]),
    ("relational", &["==", "!=", "<", ">", "<=", ">="]),
    ("logical", &["&&", "||", "!"]),
    (
        "assignment",
        &[
            "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>=",
        ],
    ),
];

/// Longest-first list of every operator the scanner recognises, including
/// ones that belong to no counted class (so `->` is not read as `-` `>`).
const ALL_OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=",
    "/=", "%=", "&=", "|=", "^=", "->", "::", "<<", ">>", "+", "-", "*", "/", "%", "<", ">", "!",
    "=", "&", "|", "^", "~",
];

pub fn registry() -> Vec<FeatureSpec> {
    let mut specs: Vec<FeatureSpec> = PATTERNS
        .iter()
        .map(|(name, rule)| FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Flag,
            rule: rule.to_string(),
        })
        .collect();
    let counters = counters();
    for side in ["buggy", "patched"] {
        for (name, rule) in &counters {
            specs.push(FeatureSpec {
                name: format!("{side}_{name}"),
                kind: FeatureKind::Count,
                rule: format!("{rule}, in the {side} fragment"),
            });
        }
    }
    for (name, rule) in &counters {
        specs.push(FeatureSpec {
            name: format!("delta_{name}"),
            kind: FeatureKind::Delta,
            rule: format!("patched minus buggy: {rule}"),
        });
    }
    specs
}

pub fn feature_names() -> Vec<String> {
    registry().into_iter().map(|s| s.name).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineeredVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl EngineeredVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

fn normalized(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

fn is_literal(tok: &str) -> bool {
    tok.starts_with(|c: char| c.is_ascii_digit())
        || tok.starts_with('"')
        || tok.starts_with('\'')
        || tok == "true"
        || tok == "false"
}

/// Start lines `(old, new)` from a hunk header, if it parses.
fn header_starts(header: &str) -> Option<(usize, usize)> {
    let mut parts = header.split_whitespace().skip(1);
    let start = |r: &str| r.split(',').next()?.parse::<usize>().ok();
    let old = start(parts.next()?.strip_prefix('-')?)?;
    let new = start(parts.next()?.strip_prefix('+')?)?;
    Some((old, new))
}

struct ChangedLine {
    position: usize,
    norm: String,
    tokens: Vec<String>,
}

struct Changes {
    removed: Vec<ChangedLine>,
    added: Vec<ChangedLine>,
}

fn collect_changes(hunks: &HunkSet) -> Changes {
    let mut removed = Vec::new();
    let mut added = Vec::new();
    let (mut fallback_old, mut fallback_new) = (1usize, 1usize);
    for hunk in &hunks.hunks {
        let (mut old, mut new) =
            header_starts(&hunk.header).unwrap_or((fallback_old, fallback_new));
        for line in &hunk.lines {
            let changed = |position| ChangedLine {
                position,
                norm: normalized(&line.text),
                tokens: diffparse::tokenize(&line.text),
            };
            match line.tag {
                LineTag::Context => {
                    old += 1;
                    new += 1;
                }
                LineTag::Removed => {
                    removed.push(changed(old));
                    old += 1;
                }
                LineTag::Added => {
                    added.push(changed(new));
                    new += 1;
                }
            }
        }
        fallback_old = old;
        fallback_new = new;
    }
    Changes { removed, added }
}

fn has_if_paren(tokens: &[String]) -> bool {
    tokens.windows(2).any(|w| w[0] == "if" && w[1] == "(")
}

fn ends_with(tokens: &[String], t: &str) -> bool {
    tokens.last().is_some_and(|x| x == t)
}

fn is_block_opener(tokens: &[String]) -> bool {
    ends_with(tokens, "{")
        && tokens
            .iter()
            .any(|t| matches!(t.as_str(), "if" | "else" | "for" | "while"))
}

/// Detects a wrapper (`if` block, `try` block) introduced on `side` of the
/// diff around retained code. `other_side` supplies the lines whose text
/// counts as surviving when it reappears on `side`.
fn wraps(
    hunks: &HunkSet,
    side: LineTag,
    other_side: &[ChangedLine],
    is_opener: impl Fn(&[String]) -> bool,
    braced_only: bool,
    is_closer: impl Fn(&[String]) -> bool,
) -> bool {
    let survivors: HashSet<&str> = other_side
        .iter()
        .map(|c| c.norm.as_str())
        .filter(|n| !n.is_empty())
        .collect();
    let retained = |l: &DiffLine| match l.tag {
        LineTag::Context => true,
        t if t == side => survivors.contains(normalized(&l.text).as_str()),
        _ => false,
    };
    for hunk in &hunks.hunks {
        for (i, line) in hunk.lines.iter().enumerate() {
            if line.tag != side {
                continue;
            }
            let tokens = diffparse::tokenize(&line.text);
            if !is_opener(&tokens) {
                continue;
            }
            if ends_with(&tokens, "{") {
                let mut saw_retained = false;
                for next in &hunk.lines[i + 1..] {
                    if next.tag == side && is_closer(&diffparse::tokenize(&next.text)) {
                        if saw_retained {
                            return true;
                        }
                        break;
                    }
                    saw_retained |= retained(next);
                }
            } else if !braced_only
                && !ends_with(&tokens, ";")
                && hunk.lines.get(i + 1).is_some_and(retained)
            {
                return true;
            }
        }
    }
    false
}

fn starts_with_close(tokens: &[String]) -> bool {
    tokens.first().is_some_and(|t| t == "}")
}

fn contains_catch(tokens: &[String]) -> bool {
    tokens.iter().any(|t| t == "catch")
}

fn is_try_opener(tokens: &[String]) -> bool {
    tokens.first().is_some_and(|t| t == "try") && ends_with(tokens, "{")
}

fn constant_change(ch: &Changes) -> bool {
    if ch.removed.is_empty() || ch.removed.len() != ch.added.len() {
        return false;
    }
    let mut any_diff = false;
    for (r, a) in ch.removed.iter().zip(&ch.added) {
        if r.tokens.len() != a.tokens.len() {
            return false;
        }
        for (x, y) in r.tokens.iter().zip(&a.tokens) {
            if x != y {
                if !(is_literal(x) && is_literal(y)) {
                    return false;
                }
                any_diff = true;
            }
        }
    }
    any_diff
}

/// Splits `tokens` around the first `if|while|for (` condition:
/// (prefix incl. `(`, condition, suffix incl. `)`).
fn split_condition(tokens: &[String]) -> Option<(&[String], &[String], &[String])> {
    let open = tokens
        .windows(2)
        .position(|w| matches!(w[0].as_str(), "if" | "while" | "for") && w[1] == "(")?
        + 1;
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        match t.as_str() {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth == 0 {
                    return Some((&tokens[..=open], &tokens[open + 1..i], &tokens[i..]));
                }
            }
            _ => {}
        }
    }
    None
}

fn expression_fix(ch: &Changes) -> bool {
    if ch.removed.is_empty() || ch.removed.len() != ch.added.len() {
        return false;
    }
    let mut any_diff = false;
    for (r, a) in ch.removed.iter().zip(&ch.added) {
        let (Some((rp, rc, rs)), Some((ap, ac, as_))) =
            (split_condition(&r.tokens), split_condition(&a.tokens))
        else {
            return false;
        };
        if rp != ap || rs != as_ {
            return false;
        }
        any_diff |= rc != ac;
    }
    any_diff
}

fn code_move(ch: &Changes) -> bool {
    ch.removed.iter().any(|r| {
        !r.norm.is_empty()
            && ch
                .added
                .iter()
                .any(|a| a.norm == r.norm && a.position != r.position)
    })
}

/// Repair-pattern flags, in registry order.
pub fn extract_patterns(hunks: &HunkSet) -> Vec<(String, f64)> {
    let ch = collect_changes(hunks);
    let (n_removed, n_added) = (ch.removed.len(), ch.added.len());
    let openers =
        |lines: &[ChangedLine]| lines.iter().filter(|l| is_block_opener(&l.tokens)).count();
    let opened_delta = openers(&ch.added) as i64 - openers(&ch.removed) as i64;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let values = [
        n_removed + n_added == 1,
        code_move(&ch),
        wraps(
            hunks,
            LineTag::Added,
            &ch.removed,
            has_if_paren,
            false,
            starts_with_close,
        ),
        wraps(
            hunks,
            LineTag::Removed,
            &ch.added,
            has_if_paren,
            false,
            starts_with_close,
        ),
        wraps(
            hunks,
            LineTag::Added,
            &ch.removed,
            is_try_opener,
            true,
            contains_catch,
        ),
        wraps(
            hunks,
            LineTag::Removed,
            &ch.added,
            is_try_opener,
            true,
            contains_catch,
        ),
        opened_delta > 0,
        opened_delta < 0,
        constant_change(&ch),
        expression_fix(&ch),
        n_added > 0 && n_removed == 0,
        n_removed > 0 && n_added == 0,
    ];
    PATTERNS
        .iter()
        .zip(values)
        .map(|((name, _), v)| (name.to_string(), flag(v)))
        .collect()
}

/// Counts operators by class, scanning raw text and skipping literals.
fn operator_counts(text: &str) -> [usize; 4] {
    let chars: Vec<char> = text.chars().collect();
    let class_of: HashMap<&str, usize> = OPERATOR_CLASSES
        .iter()
        .enumerate()
        .flat_map(|(i, (_, ops))| ops.iter().map(move |op| (*op, i)))
        .collect();
    let mut counts = [0usize; 4];
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '"' || c == '\'' {
            i += 1;
            while i < chars.len() && chars[i] != c {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i += 1;
            continue;
        }
        let matched = ALL_OPERATORS.iter().find(|op| {
            let op: Vec<char> = op.chars().collect();
            chars[i..].starts_with(&op)
        });
        match matched {
            Some(op) => {
                if let Some(&class) = class_of.get(op) {
                    counts[class] += 1;
                }
                i += op.chars().count();
            }
            None => i += 1,
        }
    }
    counts
}

const NOT_CALLS: &[&str] = &[
    "if",
    "for",
    "while",
    "switch",
    "catch",
    "synchronized",
    "return",
    "throw",
    "new",
    "else",
    "try",
    "do",
    "assert",
    "super",
    "this",
];

fn counter_values(text: &str, tokens: &[String]) -> Vec<f64> {
    let mut out: Vec<f64> = KEYWORDS
        .iter()
        .map(|k| tokens.iter().filter(|t| t == k).count() as f64)
        .collect();
    out.extend(operator_counts(text).iter().map(|&c| c as f64));
    let count = |pred: &dyn Fn(&str) -> bool| tokens.iter().filter(|t| pred(t)).count() as f64;
    out.push(count(&|t| t.starts_with(|c: char| c.is_ascii_digit())));
    out.push(count(&|t| t.starts_with('"') || t.starts_with('\'')));
    out.push(count(&|t| t == "true" || t == "false"));
    let calls = tokens
        .windows(2)
        .filter(|w| {
            w[1] == "("
                && w[0].starts_with(|c: char| c.is_alphabetic() || c == '_' || c == '$')
                && !NOT_CALLS.contains(&w[0].as_str())
        })
        .count();
    out.push(calls as f64);
    out
}

/// Code-description counts: buggy counters, patched counters, then deltas.
pub fn extract_code_description(fragments: &FragmentPair) -> Vec<(String, f64)> {
    let names: Vec<String> = counters().into_iter().map(|(n, _)| n).collect();
    let buggy = counter_values(&fragments.buggy_text, &fragments.buggy_tokens);
    let patched = counter_values(&fragments.patched_text, &fragments.patched_tokens);
    let mut out = Vec::with_capacity(names.len() * 3);
    for (n, v) in names.iter().zip(&buggy) {
        out.push((format!("buggy_{n}"), *v));
    }
    for (n, v) in names.iter().zip(&patched) {
        out.push((format!("patched_{n}"), *v));
    }
    for (n, (b, p)) in names.iter().zip(buggy.iter().zip(&patched)) {
        out.push((format!("delta_{n}"), p - b));
    }
    out
}

pub fn extract_from_hunks(hunks: &HunkSet) -> EngineeredVector {
    let fragments = diffparse::extract_fragments(hunks);
    let (names, values) = extract_patterns(hunks)
        .into_iter()
        .chain(extract_code_description(&fragments))
        .unzip();
    EngineeredVector { names, values }
}

pub fn extract_all(record: &PatchRecord) -> Result<EngineeredVector, DiffError> {
    Ok(extract_from_hunks(&diffparse::parse_diff(
        &record.diff_text,
    )?))
}
