//! Labeled patch corpora: JSONL ingest with validation and deduplication,
//! persistence, and the bug-level fold partition used by every downstream
//! evaluation.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no valid records ({} rejected: {})", .rejected.len(), summarize(.rejected))]
    Empty { rejected: Vec<Rejection> },
    #[error("cannot split {distinct} distinct bugs into {k} groups")]
    TooFewBugs { distinct: usize, k: usize },
    #[error("k must be positive")]
    ZeroGroups,
}

fn summarize(rejected: &[Rejection]) -> String {
    rejected
        .iter()
        .take(5)
        .map(|r| format!("line {}: {}", r.line, r.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Incorrect,
    Unlabeled,
}

impl Label {
    /// 1 for correct, 0 for incorrect; `None` when unlabeled.
    pub fn as_target(self) -> Option<u8> {
        match self {
            Label::Correct => Some(1),
            Label::Incorrect => Some(0),
            Label::Unlabeled => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub bug_id: String,
    pub project: String,
    pub tool: String,
    pub label: Label,
    pub diff_text: String,
}

impl PatchRecord {
    pub fn is_developer(&self) -> bool {
        self.tool == "developer"
    }
}

/// Whether unlabeled rows are acceptable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestMode {
    Training,
    Prediction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub ingested: usize,
    pub duplicates: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<PatchRecord>,
    pub provenance: String,
}

/// Dedup key component: trailing whitespace stripped per line, CRLF folded
/// to LF, trailing blank lines dropped.
pub fn normalize_diff(diff: &str) -> String {
    let mut lines: Vec<&str> = diff
        .split('\n')
        .map(|l| l.trim_end_matches(['\r', ' ', '\t']))
        .collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

#[derive(Deserialize)]
struct RawRecord {
    patch_id: Option<String>,
    bug_id: Option<String>,
    project: Option<String>,
    tool: Option<String>,
    label: Option<Label>,
    diff_text: Option<String>,
}

fn validate(raw: RawRecord, mode: IngestMode) -> Result<PatchRecord, String> {
    let missing = |name: &str| format!("missing field `{name}`");
    let patch_id = raw.patch_id.ok_or_else(|| missing("patch_id"))?;
    let bug_id = raw.bug_id.ok_or_else(|| missing("bug_id"))?;
    let project = raw.project.ok_or_else(|| missing("project"))?;
    let tool = raw.tool.ok_or_else(|| missing("tool"))?;
    let label = raw.label.ok_or_else(|| missing("label"))?;
    let diff_text = raw.diff_text.ok_or_else(|| missing("diff_text"))?;
    if patch_id.is_empty() {
        return Err("empty patch_id".into());
    }
    if bug_id.is_empty() {
        return Err("empty bug_id".into());
    }
    if !diff_text.lines().any(|l| l.starts_with("@@")) {
        return Err("diff_text has no hunk header".into());
    }
    if diff_text.lines().filter(|l| l.starts_with("+++ ")).count() > 1 {
        return Err("multi-file diff; split it into one record per file".into());
    }
    if label == Label::Unlabeled && mode == IngestMode::Training {
        return Err("unlabeled record in a training corpus".into());
    }
    Ok(PatchRecord {
        patch_id,
        bug_id,
        project,
        tool,
        label,
        diff_text,
    })
}

impl Corpus {
    /// Builds a corpus from already-parsed records, applying the same
    /// duplicate and patch-id rules as [`ingest`].
    pub fn from_records(
        records: impl IntoIterator<Item = PatchRecord>,
        provenance: impl Into<String>,
    ) -> (Corpus, IngestReport) {
        let mut report = IngestReport::default();
        let mut seen_ids = HashSet::new();
        let mut seen_keys = HashSet::new();
        let mut kept = Vec::new();
        for (i, rec) in records.into_iter().enumerate() {
            if !seen_ids.insert(rec.patch_id.clone()) {
                report.rejected.push(Rejection {
                    line: i + 1,
                    reason: format!("duplicate patch_id `{}`", rec.patch_id),
                });
                continue;
            }
            if !seen_keys.insert((rec.bug_id.clone(), normalize_diff(&rec.diff_text))) {
                report.duplicates += 1;
                continue;
            }
            kept.push(rec);
        }
        report.ingested = kept.len();
        (
            Corpus {
                records: kept,
                provenance: provenance.into(),
            },
            report,
        )
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn distinct_bugs(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.bug_id.as_str()).collect()
    }

    pub fn get(&self, patch_id: &str) -> Option<&PatchRecord> {
        self.records.iter().find(|r| r.patch_id == patch_id)
    }

    /// Writes one JSON object per line, in record order.
    pub fn persist(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

/// Reads a JSONL corpus. Malformed lines are rejected individually and
/// reported with their 1-based line number; blank lines are skipped.
pub fn ingest(path: &Path, mode: IngestMode) -> Result<(Corpus, IngestReport), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut valid = Vec::new();
    let mut rejected = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|raw| validate(raw, mode));
        match parsed {
            Ok(rec) => valid.push((idx + 1, rec)),
            Err(reason) => rejected.push(Rejection {
                line: idx + 1,
                reason,
            }),
        }
    }
    let line_numbers: Vec<usize> = valid.iter().map(|(l, _)| *l).collect();
    let (corpus, mut report) = Corpus::from_records(
        valid.into_iter().map(|(_, r)| r),
        path.display().to_string(),
    );
    // from_records numbers by position among valid rows; map back to file lines.
    for r in &mut report.rejected {
        r.line = line_numbers[r.line - 1];
    }
    report.rejected.extend(rejected);
    report.rejected.sort_by_key(|r| r.line);
    if corpus.is_empty() {
        return Err(CorpusError::Empty {
            rejected: report.rejected,
        });
    }
    Ok((corpus, report))
}

/// A seeded partition of a corpus's bugs into `k` disjoint groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub groups: Vec<BTreeSet<String>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    /// Index of the group holding `bug_id`.
    pub fn fold_of(&self, bug_id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(bug_id))
    }

    /// Splits row indices into (train, test) for `fold`, given each row's bug.
    pub fn train_test<'a>(
        &self,
        fold: usize,
        bug_ids: impl IntoIterator<Item = &'a str>,
    ) -> (Vec<usize>, Vec<usize>) {
        let test_group = &self.groups[fold];
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, bug) in bug_ids.into_iter().enumerate() {
            if test_group.contains(bug) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Randomly distributes distinct bug ids over `k` groups. Every patch of a
/// bug lands in the same group; group sizes differ by at most one.
pub fn split_bugs<'a>(
    bug_ids: impl IntoIterator<Item = &'a str>,
    k: usize,
    seed: u64,
) -> Result<FoldPlan, CorpusError> {
    if k == 0 {
        return Err(CorpusError::ZeroGroups);
    }
    let distinct: BTreeSet<&str> = bug_ids.into_iter().collect();
    if distinct.len() < k {
        return Err(CorpusError::TooFewBugs {
            distinct: distinct.len(),
            k,
        });
    }
    let mut bugs: Vec<&str> = distinct.into_iter().collect();
    bugs.shuffle(&mut rng::seeded(seed));
    let mut groups = vec![BTreeSet::new(); k];
    for (i, bug) in bugs.into_iter().enumerate() {
        groups[i % k].insert(bug.to_string());
    }
    Ok(FoldPlan { groups, seed })
}

pub fn split_by_bug(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldPlan, CorpusError> {
    split_bugs(corpus.records.iter().map(|r| r.bug_id.as_str()), k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const DIFF: &str = "--- a/A.java\n+++ b/A.java\n@@ -1,2 +1,2 @@\n-a = 1;\n+a = 2;\n";

    fn line(id: &str, bug: &str, diff: &str) -> String {
        serde_json::json!({
            "patch_id": id, "bug_id": bug, "project": "Chart", "tool": "kPAR",
            "label": "correct", "diff_text": diff,
        })
        .to_string()
    }

    fn write(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn duplicate_diff_for_same_bug_is_dropped() {
        let with_trailing_ws = DIFF.replace("a = 2;", "a = 2;   ");
        let f = write(&[
            line("p1", "Chart-1", DIFF),
            line("p2", "Chart-1", &with_trailing_ws),
            line("p3", "Chart-2", DIFF),
        ]);
        let (corpus, report) = ingest(f.path(), IngestMode::Training).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(report.duplicates, 1);
        assert_eq!(report.ingested, 2);
        assert!(report.rejected.is_empty());
    }

    #[test]
    fn missing_diff_text_rejects_whole_corpus() {
        let bad = serde_json::json!({
            "patch_id": "p1", "bug_id": "Chart-1", "project": "Chart",
            "tool": "kPAR", "label": "correct",
        })
        .to_string();
        let f = write(&[bad]);
        match ingest(f.path(), IngestMode::Training) {
            Err(CorpusError::Empty { rejected }) => {
                assert_eq!(rejected.len(), 1);
                assert_eq!(rejected[0].line, 1);
                assert!(rejected[0].reason.contains("diff_text"));
            }
            other => panic!("expected Empty, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_are_reported_with_line_numbers() {
        let f = write(&[
            line("p1", "Chart-1", DIFF),
            "{not json".into(),
            line("p3", "Chart-3", "no hunk here"),
            line("p1", "Chart-4", DIFF),
        ]);
        let (corpus, report) = ingest(f.path(), IngestMode::Training).unwrap();
        assert_eq!(corpus.len(), 1);
        let lines: Vec<usize> = report.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![2, 3, 4]);
    }

    #[test]
    fn unlabeled_only_in_prediction_mode() {
        let l = line("p1", "Chart-1", DIFF).replace("\"correct\"", "\"unlabeled\"");
        let f = write(&[l]);
        assert!(ingest(f.path(), IngestMode::Training).is_err());
        let (c, _) = ingest(f.path(), IngestMode::Prediction).unwrap();
        assert_eq!(c.records[0].label, Label::Unlabeled);
    }

    #[test]
    fn multi_file_diff_rejected() {
        let two = format!("{DIFF}--- a/B.java\n+++ b/B.java\n@@ -1 +1 @@\n-x\n+y\n");
        let f = write(&[line("p1", "Chart-1", &two), line("p2", "Chart-2", DIFF)]);
        let (_, report) = ingest(f.path(), IngestMode::Training).unwrap();
        assert_eq!(report.rejected.len(), 1);
        assert!(report.rejected[0].reason.contains("multi-file"));
    }

    #[test]
    fn persist_then_ingest_is_identity() {
        let f = write(&[line("p1", "Chart-1", DIFF), line("p2", "Chart-2", DIFF)]);
        let (corpus, _) = ingest(f.path(), IngestMode::Training).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        corpus.persist(out.path()).unwrap();
        let (again, report) = ingest(out.path(), IngestMode::Training).unwrap();
        assert_eq!(again.records, corpus.records);
        assert_eq!(report.duplicates, 0);
    }

    #[test]
    fn ten_bugs_into_ten_groups_are_singletons() {
        let bugs: Vec<String> = (0..10).map(|i| format!("B-{i}")).collect();
        for seed in 0..5 {
            let plan = split_bugs(bugs.iter().map(String::as_str), 10, seed).unwrap();
            assert!(plan.groups.iter().all(|g| g.len() == 1));
        }
    }

    #[test]
    fn twenty_five_bugs_partition() {
        let bugs: Vec<String> = (0..25).map(|i| format!("B-{i}")).collect();
        let plan = split_bugs(bugs.iter().map(String::as_str), 10, 7).unwrap();
        assert!(plan.groups.iter().all(|g| (2..=3).contains(&g.len())));
        let union: BTreeSet<&String> = plan.groups.iter().flatten().collect();
        assert_eq!(union.len(), 25);
        assert_eq!(plan.groups.iter().map(BTreeSet::len).sum::<usize>(), 25);
    }

    #[test]
    fn too_few_bugs_is_an_error() {
        let bugs: Vec<String> = (0..5).map(|i| format!("B-{i}")).collect();
        assert!(matches!(
            split_bugs(bugs.iter().map(String::as_str), 10, 1),
            Err(CorpusError::TooFewBugs { distinct: 5, k: 10 })
        ));
    }

    #[test]
    fn patches_of_a_bug_travel_together() {
        let ids = ["A-1", "A-1", "A-2", "A-3", "A-3", "A-3", "A-4"];
        let plan = split_bugs(ids, 2, 3).unwrap();
        for fold in 0..2 {
            let (train, test) = plan.train_test(fold, ids);
            let train_bugs: BTreeSet<&str> = train.iter().map(|&i| ids[i]).collect();
            assert!(test.iter().all(|&i| !train_bugs.contains(ids[i])));
            assert_eq!(train.len() + test.len(), ids.len());
        }
    }

    proptest::proptest! {
        #[test]
        fn every_bug_in_exactly_one_group(n in 1usize..60, k in 1usize..12, seed in 0u64..1000) {
            let bugs: Vec<String> = (0..n).map(|i| format!("P-{i}")).collect();
            match split_bugs(bugs.iter().map(String::as_str), k, seed) {
                Ok(plan) => {
                    for b in &bugs {
                        proptest::prop_assert_eq!(plan.groups.iter().filter(|g| g.contains(b)).count(), 1);
                    }
                }
                Err(_) => proptest::prop_assert!(n < k),
            }
        }
    }
}
