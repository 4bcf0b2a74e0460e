//! Top-1 exact-match scoring, deletion-aware fix taxonomy and result tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::syntax::{token_diff, Bucket, EditOp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("buggy and fixed sequences are identical")]
    IdenticalPair,
}

pub fn exact_match<A: AsRef<str>, B: AsRef<str>>(candidate: &[A], reference: &[B]) -> bool {
    candidate.len() == reference.len() && candidate.iter().zip(reference).all(|(a, b)| a.as_ref() == b.as_ref())
}

/// Whether `fixed` is obtained from `buggy` by deleting tokens only.
pub fn is_deletion_only<A: AsRef<str>, B: AsRef<str>>(buggy: &[A], fixed: &[B]) -> Result<bool, EvalError> {
    if exact_match(buggy, fixed) {
        return Err(EvalError::IdenticalPair);
    }
    let mut rest = buggy.iter();
    Ok(fixed.iter().all(|f| rest.any(|b| b.as_ref() == f.as_ref())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixCategory {
    DeletionOnly,
    VisibilitySwap,
    NativeInsert,
    OtherConstructive,
    NotAFix,
}

const VISIBILITY: [&str; 3] = ["public", "private", "protected"];

/// Category of a found fix. Deletion wins over every other category, then
/// visibility edits, then the lone `native` insertion.
pub fn classify_fix<A: AsRef<str>, B: AsRef<str>>(buggy: &[A], fixed: &[B]) -> Result<FixCategory, EvalError> {
    if is_deletion_only(buggy, fixed)? {
        return Ok(FixCategory::DeletionOnly);
    }
    let edits: Vec<EditOp> = token_diff(buggy, fixed).into_iter().filter(|op| !op.is_keep()).collect();
    if edits.iter().all(|op| VISIBILITY.contains(&op.text())) {
        return Ok(FixCategory::VisibilitySwap);
    }
    if let [EditOp::Insert(t)] = edits.as_slice() {
        if t == "native" {
            return Ok(FixCategory::NativeInsert);
        }
    }
    Ok(FixCategory::OtherConstructive)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixOutcome {
    pub example_id: String,
    pub exact_match: bool,
    pub category: FixCategory,
    pub bucket: Bucket,
}

/// One scored dataset example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: String,
    pub bucket: Bucket,
    pub buggy: Vec<String>,
    pub fixed: Vec<String>,
}

pub fn score_example(example: &EvalExample, prediction: Option<&[String]>) -> FixOutcome {
    let hit = prediction.is_some_and(|p| exact_match(p, &example.fixed));
    let category = if hit {
        // Identical pairs never reach the dataset; if one does, a verbatim
        // copy of the input is not a fix.
        classify_fix(&example.buggy, &example.fixed).unwrap_or(FixCategory::NotAFix)
    } else {
        FixCategory::NotAFix
    };
    FixOutcome {
        example_id: example.id.clone(),
        exact_match: hit && category != FixCategory::NotAFix,
        category,
        bucket: example.bucket,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub all_methods: u64,
    pub all_fixes: u64,
    pub deletion_fixes: u64,
    pub nondeletion_fixes: u64,
    pub visibility_swaps: u64,
    pub native_inserts: u64,
    pub other_constructive: u64,
}

impl BucketCounts {
    pub fn add(&mut self, outcome: &FixOutcome) {
        self.all_methods += 1;
        if outcome.category == FixCategory::NotAFix {
            return;
        }
        self.all_fixes += 1;
        match outcome.category {
            FixCategory::DeletionOnly => self.deletion_fixes += 1,
            FixCategory::VisibilitySwap => self.visibility_swaps += 1,
            FixCategory::NativeInsert => self.native_inserts += 1,
            FixCategory::OtherConstructive => self.other_constructive += 1,
            FixCategory::NotAFix => unreachable!(),
        }
        if outcome.category != FixCategory::DeletionOnly {
            self.nondeletion_fixes += 1;
        }
    }

    /// `all_fixes == deletion + visibility + native + other` and
    /// `nondeletion == all_fixes - deletion`.
    pub fn partition_holds(&self) -> bool {
        self.all_fixes
            == self.deletion_fixes + self.visibility_swaps + self.native_inserts + self.other_constructive
            && self.nondeletion_fixes + self.deletion_fixes == self.all_fixes
            && self.nondeletion_fixes >= self.visibility_swaps + self.native_inserts
    }

    /// Share of non-deletion fixes that are visibility swaps or `native`
    /// insertions, in percent.
    pub fn visibility_or_native_share(&self) -> f64 {
        if self.nondeletion_fixes == 0 {
            0.0
        } else {
            100.0 * (self.visibility_swaps + self.native_inserts) as f64 / self.nondeletion_fixes as f64
        }
    }
}

/// `count / total` in percent, rounded half-up to one decimal, computed in
/// integers so that `.x5` boundaries are exact.
pub fn percent_one_decimal(count: u64, total: u64) -> String {
    if total == 0 {
        return "0.0".to_string();
    }
    let tenths = (2 * 1000 * count as u128 + total as u128) / (2 * total as u128);
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// `"749 (11.4%)"`.
pub fn count_cell(count: u64, total: u64) -> String {
    format!("{count} ({}%)", percent_one_decimal(count, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: Bucket,
    pub counts: BucketCounts,
    pub nondeletion_fixes: String,
    pub all_fixes: String,
    pub visibility_or_native_share: String,
}

impl BucketRow {
    pub fn new(bucket: Bucket, counts: BucketCounts) -> Self {
        BucketRow {
            bucket,
            nondeletion_fixes: count_cell(counts.nondeletion_fixes, counts.all_methods),
            all_fixes: count_cell(counts.all_fixes, counts.all_methods),
            visibility_or_native_share: format!(
                "{}%",
                percent_one_decimal(counts.visibility_swaps + counts.native_inserts, counts.nondeletion_fixes)
            ),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<BucketRow>,
    pub outcomes: Vec<FixOutcome>,
}

impl EvalReport {
    pub fn from_counts(counts: BTreeMap<Bucket, BucketCounts>) -> Self {
        EvalReport {
            rows: counts.into_iter().map(|(b, c)| BucketRow::new(b, c)).collect(),
            outcomes: Vec::new(),
        }
    }

    pub fn row(&self, bucket: Bucket) -> Option<&BucketRow> {
        self.rows.iter().find(|r| r.bucket == bucket)
    }

    pub fn partition_holds(&self) -> bool {
        self.rows.iter().all(|r| r.counts.partition_holds())
    }

    /// Fixed-width table: non-deletion fixes, all fixes, all methods,
    /// deletion fixes.
    pub fn render_table(&self) -> String {
        let header = ["", "Non-deletion Fixes", "All Fixes", "All Methods", "Deletion Fixes"];
        let mut rows: Vec<[String; 5]> = vec![header.map(str::to_string)];
        for r in &self.rows {
            rows.push([
                r.bucket.to_string(),
                r.nondeletion_fixes.clone(),
                r.all_fixes.clone(),
                r.counts.all_methods.to_string(),
                r.counts.deletion_fixes.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..5).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let mut line = format!("{:<w$}", r[0], w = widths[0]);
            for c in 1..5 {
                let _ = write!(line, " | {:>w$}", r[c], w = widths[c]);
            }
            out.push_str(line.trim_end());
            out.push('\n');
            if i == 0 {
                let rule: usize = widths.iter().sum::<usize>() + 3 * 4;
                out.push_str(&"-".repeat(rule));
                out.push('\n');
            }
        }
        out
    }
}

/// Scores top-1 predictions against the dataset. Examples without a
/// prediction count as misses. Buckets appear in `small, medium, oversize`
/// order, only if the dataset has examples in them.
pub fn evaluate_run(predictions: &HashMap<String, Vec<String>>, dataset: &[EvalExample]) -> EvalReport {
    let outcomes = par::map(dataset, |ex| score_example(ex, predictions.get(&ex.id).map(Vec::as_slice)));
    let mut counts: BTreeMap<Bucket, BucketCounts> = BTreeMap::new();
    for o in &outcomes {
        counts.entry(o.bucket).or_default().add(o);
    }
    let mut report = EvalReport::from_counts(counts);
    report.outcomes = outcomes;
    report
}
