//! Raw-source ingestion: hashing, deduplication, heuristic filtering,
//! license/non-ASCII cleaning, bug-fix commit detection and buggy/fixed
//! method pairing.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::par;
use crate::syntax::{self, Bucket, MethodUnit};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("source path must be non-empty")]
    EmptyPath,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad commit record on line {line}: {message}")]
    BadCommit { line: usize, message: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub repo_id: String,
    /// Relative, forward-slash separated.
    pub path: String,
    pub content: Vec<u8>,
    pub content_hash: [u8; 32],
}

pub fn content_hash(content: &[u8]) -> [u8; 32] {
    Sha256::digest(content).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl SourceFile {
    pub fn new(repo_id: impl Into<String>, path: &str, content: Vec<u8>) -> Result<Self> {
        let path = path.replace('\\', "/");
        let path = path.trim_start_matches("./").to_string();
        if path.is_empty() {
            return Err(CorpusError::EmptyPath);
        }
        Ok(SourceFile {
            repo_id: repo_id.into(),
            path,
            content_hash: content_hash(&content),
            content,
        })
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.content_hash)
    }

    pub fn text(&self) -> Option<&str> {
        std::str::from_utf8(&self.content).ok()
    }
}

/// Keeps the first file for each distinct content hash, in input order.
pub fn dedup_files(files: Vec<SourceFile>) -> Vec<SourceFile> {
    dedup_partition(files).0
}

/// Like [`dedup_files`] but also returns the dropped duplicates.
pub fn dedup_partition(files: Vec<SourceFile>) -> (Vec<SourceFile>, Vec<SourceFile>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for f in files {
        if seen.insert(f.content_hash) {
            kept.push(f);
        } else {
            dropped.push(f);
        }
    }
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterRules {
    pub generated_markers: Vec<String>,
    /// Markers are only looked for in this many leading lines.
    pub marker_scan_lines: usize,
    /// Reject when more than this share of non-whitespace characters sit in
    /// string or numeric literals.
    pub max_literal_fraction: f64,
    pub max_line_length: usize,
    pub max_file_bytes: usize,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            generated_markers: vec![
                "Generated by".to_string(),
                "DO NOT EDIT".to_string(),
                "generated-sources".to_string(),
            ],
            marker_scan_lines: 10,
            max_literal_fraction: 0.5,
            max_line_length: 5_000,
            max_file_bytes: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Binary,
    AutoGenerated,
    DataLike,
    TooLongLines,
    TooLarge,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Binary => "binary",
            RejectReason::AutoGenerated => "auto_generated",
            RejectReason::DataLike => "data_like",
            RejectReason::TooLongLines => "too_long_lines",
            RejectReason::TooLarge => "too_large",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// Checks run in a fixed order (binary, size, markers, line length, literal
/// share) and the first rule that fires names the rejection.
pub fn filter_file(file: &SourceFile, rules: &FilterRules) -> Verdict {
    let Some(text) = file.text().filter(|t| !t.contains('\0')) else {
        return Verdict::Reject(RejectReason::Binary);
    };
    if file.content.len() > rules.max_file_bytes {
        return Verdict::Reject(RejectReason::TooLarge);
    }
    let head_has_marker = text
        .lines()
        .take(rules.marker_scan_lines)
        .any(|line| rules.generated_markers.iter().any(|m| line.contains(m.as_str())));
    if head_has_marker {
        return Verdict::Reject(RejectReason::AutoGenerated);
    }
    if text.lines().any(|l| l.chars().count() > rules.max_line_length) {
        return Verdict::Reject(RejectReason::TooLongLines);
    }
    if literal_fraction(text) > rules.max_literal_fraction {
        return Verdict::Reject(RejectReason::DataLike);
    }
    Verdict::Accept
}

/// Share of non-whitespace characters that belong to string, character or
/// numeric literals. Comments are skipped entirely.
pub fn literal_fraction(text: &str) -> f64 {
    let chars: Vec<char> = text.chars().collect();
    let (mut total, mut literal) = (0usize, 0usize);
    let mut i = 0;
    let count_span = |from: usize, to: usize, total: &mut usize, literal: &mut usize| {
        let n = chars[from..to].iter().filter(|c| !c.is_whitespace()).count();
        *total += n;
        *literal += n;
    };
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        if c == '/' && next == Some('/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && next == Some('*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            i = (i + 2).min(chars.len());
        } else if c == '"' || c == '\'' {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i] != c && chars[i] != '\n' {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i = (i + 1).min(chars.len());
            count_span(start, i, &mut total, &mut literal);
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() {
                let d = chars[i];
                let exponent_sign = (d == '-' || d == '+')
                    && matches!(chars[i - 1], 'e' | 'E' | 'p' | 'P')
                    && !chars[start..i].iter().any(|x| matches!(x, 'x' | 'X'));
                if d.is_ascii_alphanumeric() || d == '.' || d == '_' || exponent_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            count_span(start, i, &mut total, &mut literal);
        } else if c.is_alphanumeric() || c == '_' || c == '$' {
            // Identifiers swallow embedded digits (`x1` is not a literal).
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
                total += 1;
            }
        } else {
            if !c.is_whitespace() {
                total += 1;
            }
            i += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        literal as f64 / total as f64
    }
}

const LICENSE_PATTERNS: [&str; 5] = ["license", "copyright", "apache", "mit", "gpl"];
const LICENSE_MAX_START_LINE: usize = 5;

fn is_license_comment(comment: &str) -> bool {
    let lower = comment.to_ascii_lowercase();
    LICENSE_PATTERNS.iter().any(|p| lower.contains(p))
}

/// Byte range of the first comment if it starts (after leading whitespace) at
/// or before line five. A run of consecutive `//` lines counts as one
/// comment; the range stops before the final newline.
fn leading_comment(text: &str) -> Option<(usize, usize)> {
    let start = text.len() - text.trim_start().len();
    let line = text[..start].matches('\n').count() + 1;
    if line > LICENSE_MAX_START_LINE {
        return None;
    }
    let rest = &text[start..];
    if rest.starts_with("/*") {
        let end = rest[2..].find("*/").map(|e| start + 2 + e + 2)?;
        return Some((start, end));
    }
    if rest.starts_with("//") {
        let mut end = start;
        loop {
            let line_end = text[end..].find('\n').map(|e| end + e).unwrap_or(text.len());
            end = line_end;
            let after = &text[end..];
            let next_line = after.strip_prefix('\n').unwrap_or(after);
            let indent = next_line.len() - next_line.trim_start_matches([' ', '\t']).len();
            if after.starts_with('\n') && next_line[indent..].starts_with("//") {
                end += 1 + indent;
                continue;
            }
            break;
        }
        return Some((start, end));
    }
    None
}

fn strip_license_once(text: &str) -> Option<String> {
    let (s, e) = leading_comment(text)?;
    if !is_license_comment(&text[s..e]) {
        return None;
    }
    let mut out = String::with_capacity(text.len());
    out.push_str(&text[..s]);
    out.push_str(&text[e..]);
    Some(out)
}

/// Drops leading license comments and every non-ASCII character.
///
/// Only comments starting within the first five lines and mentioning a
/// license keyword go; the newline after a removed comment stays. Applied to
/// a fixpoint, so `clean_file(clean_file(x)) == clean_file(x)`.
pub fn clean_file(content: &str) -> String {
    let mut text: String = content.chars().filter(char::is_ascii).collect();
    while let Some(next) = strip_license_once(&text) {
        text = next;
    }
    text
}

const BUGFIX_KEYWORDS: [&str; 6] = ["bug", "error", "issue", "fix", "patch", "correct"];

/// Whether some word of the message starts with a bug-fix keyword.
pub fn is_bugfix_commit(message: &str) -> bool {
    message
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .any(|word| BUGFIX_KEYWORDS.iter().any(|k| word.starts_with(k)))
}

/// Rough lexical token count: identifier/number runs plus each punctuation
/// character. Used only for the before/after accounting in the manifest.
pub fn count_tokens(text: &str) -> u64 {
    let mut n = 0u64;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' || c == '$' {
            if !in_word {
                n += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                n += 1;
            }
        }
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestReason {
    Duplicate,
    Binary,
    AutoGenerated,
    DataLike,
    TooLongLines,
    TooLarge,
}

impl From<RejectReason> for ManifestReason {
    fn from(r: RejectReason) -> Self {
        match r {
            RejectReason::Binary => ManifestReason::Binary,
            RejectReason::AutoGenerated => ManifestReason::AutoGenerated,
            RejectReason::DataLike => ManifestReason::DataLike,
            RejectReason::TooLongLines => ManifestReason::TooLongLines,
            RejectReason::TooLarge => ManifestReason::TooLarge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedFile {
    pub repo_id: String,
    pub path: String,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedFile {
    pub repo_id: String,
    pub path: String,
    pub reason: ManifestReason,
}

/// Outcome of one ingest run. Every input file lands in exactly one of
/// `files` or `rejected`.
///
/// Token counts are taken over all input files (`before`), over the files that
/// survive dedup and filtering but before cleaning (`after_filter`), and over
/// the cleaned survivors (`after`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub files: Vec<AcceptedFile>,
    pub rejected: Vec<RejectedFile>,
    pub token_count_before: u64,
    pub token_count_after_filter: u64,
    pub token_count_after: u64,
}

impl CorpusManifest {
    pub fn removed_token_fraction(&self) -> f64 {
        if self.token_count_before == 0 {
            0.0
        } else {
            1.0 - self.token_count_after as f64 / self.token_count_before as f64
        }
    }
}

/// A file that made it through ingest, with its cleaned text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanedFile {
    pub repo_id: String,
    pub path: String,
    pub text: String,
}

/// Dedup, filter and clean, in that order.
pub fn process_corpus(files: Vec<SourceFile>, rules: &FilterRules) -> (CorpusManifest, Vec<CleanedFile>) {
    let before: u64 = par::map(&files, |f| count_tokens(&String::from_utf8_lossy(&f.content)))
        .into_iter()
        .sum();
    let order: Vec<(String, String)> = files.iter().map(|f| (f.repo_id.clone(), f.path.clone())).collect();
    let (kept, dupes) = dedup_partition(files);

    let verdicts = par::map(&kept, |f| match filter_file(f, rules) {
        Verdict::Accept => {
            let raw = f.text().unwrap_or_default();
            Ok((count_tokens(raw), clean_file(raw)))
        }
        Verdict::Reject(r) => Err(r),
    });

    let mut rejected_by_path = BTreeMap::new();
    for d in &dupes {
        rejected_by_path.insert((d.repo_id.clone(), d.path.clone()), ManifestReason::Duplicate);
    }
    let mut accepted = Vec::new();
    let mut cleaned = Vec::new();
    let (mut after_filter, mut after) = (0u64, 0u64);
    for (f, v) in kept.into_iter().zip(verdicts) {
        match v {
            Ok((raw_tokens, text)) => {
                after_filter += raw_tokens;
                after += count_tokens(&text);
                accepted.push(AcceptedFile {
                    repo_id: f.repo_id.clone(),
                    path: f.path.clone(),
                    content_hash: f.hash_hex(),
                });
                cleaned.push(CleanedFile {
                    repo_id: f.repo_id,
                    path: f.path,
                    text,
                });
            }
            Err(r) => {
                rejected_by_path.insert((f.repo_id, f.path), r.into());
            }
        }
    }
    // Rejections are listed in input order.
    let rejected = order
        .into_iter()
        .filter_map(|key| {
            let reason = rejected_by_path.remove(&key)?;
            let (repo_id, path) = key;
            Some(RejectedFile { repo_id, path, reason })
        })
        .collect();
    let manifest = CorpusManifest {
        files: accepted,
        rejected,
        token_count_before: before,
        token_count_after_filter: after_filter,
        token_count_after: after,
    };
    (manifest, cleaned)
}

/// Reads every regular file below `root`, sorted by path. The first path
/// component is the repository id.
pub fn read_source_tree(root: &Path) -> Result<Vec<SourceFile>> {
    let mut files = Vec::new();
    let walker = walkdir::WalkDir::new(root).sort_by_file_name();
    for entry in walker {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: root.display().to_string(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths below its root");
        let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let repo_id = if rel.len() > 1 { rel[0].clone() } else { String::new() };
        let content = fs::read(entry.path()).map_err(|source| CorpusError::Io {
            path: entry.path().display().to_string(),
            source,
        })?;
        files.push(SourceFile::new(repo_id, &rel.join("/"), content)?);
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub path: String,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub message: String,
    #[serde(rename = "diffs")]
    pub file_diffs: Vec<FileDiff>,
}

pub fn read_commits_jsonl(text: &str) -> Result<Vec<CommitRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CommitRecord = serde_json::from_str(line).map_err(|e| CorpusError::BadCommit {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.message.trim().is_empty() {
            return Err(CorpusError::BadCommit {
                line: i + 1,
                message: "empty commit message".to_string(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// A buggy/fixed method pair mined from one commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodPair {
    pub id: String,
    pub qualified_name: String,
    pub buggy: MethodUnit,
    pub fixed: MethodUnit,
}

impl MethodPair {
    /// Size bucket of the larger side.
    pub fn bucket(&self) -> Bucket {
        Bucket::from_count(self.buggy.token_count.max(self.fixed.token_count))
    }
}

/// Pairs methods across the before/after sides of each `.java` diff by
/// qualified name. Unchanged methods and files that fail to parse are
/// dropped. Ids are `{commit_index}:{path}:{qualified_name}`.
pub fn pair_commit(commit_index: usize, commit: &CommitRecord) -> Vec<MethodPair> {
    let mut pairs = Vec::new();
    for diff in &commit.file_diffs {
        if !diff.path.ends_with(".java") {
            continue;
        }
        let (before, after) = match (syntax::extract_methods(&diff.before), syntax::extract_methods(&diff.after)) {
            (Ok(b), Ok(a)) => (b, a),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("commit {commit_index}: skipping {}: {e}", diff.path);
                continue;
            }
        };
        let fixed_by_name: BTreeMap<&str, &MethodUnit> =
            after.iter().map(|m| (m.qualified_name.as_str(), m)).collect();
        for buggy in &before {
            let Some(fixed) = fixed_by_name.get(buggy.qualified_name.as_str()) else {
                continue;
            };
            if buggy.texts() == fixed.texts() {
                continue;
            }
            pairs.push(MethodPair {
                id: format!("{commit_index}:{}:{}", diff.path, buggy.qualified_name),
                qualified_name: buggy.qualified_name.clone(),
                buggy: buggy.clone(),
                fixed: (*fixed).clone(),
            });
        }
    }
    pairs
}

/// Bug-fix commits only, paired in parallel, flattened in commit order.
pub fn mine_pairs(commits: &[CommitRecord]) -> Vec<MethodPair> {
    par::map_indexed(commits, |i, c| {
        if is_bugfix_commit(&c.message) {
            pair_commit(i, c)
        } else {
            Vec::new()
        }
    })
    .into_iter()
    .flatten()
    .collect()
}
