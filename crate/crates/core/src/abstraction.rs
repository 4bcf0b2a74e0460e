//! Idiom mining and placeholder abstraction of buggy/fixed pairs.
//!
//! Identifiers and literals that are not idioms are replaced by class-scoped
//! placeholders (`VARIABLE_1`, `METHOD_2`, ...). Numbering follows first
//! occurrence, scanning the buggy side before the fixed side, so a pair shares
//! one [`AbstractionMap`] and the buggy side's placeholders do not depend on
//! the fix.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::par;
use crate::syntax::{Bucket, ClassifiedToken, MethodUnit, SyntaxClass};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbstractionError {
    #[error("corpus has no identifiers or literals to mine")]
    EmptyCorpus,
    #[error("idiom budget must be at least 1")]
    ZeroBudget,
    #[error("`{text}` is mapped by both {first} and {second}")]
    ClassConflict {
        text: String,
        first: String,
        second: String,
    },
    #[error("token `{0}` looks like a placeholder but is kept concrete")]
    PlaceholderCollision(String),
    #[error("unknown placeholder {0}")]
    UnknownPlaceholder(String),
    #[error("malformed placeholder label `{0}`")]
    BadLabel(String),
}

pub type Result<T, E = AbstractionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdiomVocabulary {
    idioms: Vec<String>,
    lookup: HashSet<String>,
}

impl IdiomVocabulary {
    pub fn new(idioms: Vec<String>) -> Self {
        let mut lookup = HashSet::new();
        let idioms: Vec<String> = idioms.into_iter().filter(|t| lookup.insert(t.clone())).collect();
        IdiomVocabulary { idioms, lookup }
    }

    /// No idioms: every identifier and literal is abstracted.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn idioms(&self) -> &[String] {
        &self.idioms
    }

    pub fn len(&self) -> usize {
        self.idioms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idioms.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        self.lookup.contains(text)
    }

    /// `idioms.txt`: one token per line, rank order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.idioms {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Self {
        Self::new(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }
}

/// The `k` most frequent identifier/literal texts, ties broken by text.
pub fn mine_idioms(corpus: &[MethodUnit], k: usize) -> Result<IdiomVocabulary> {
    if k == 0 {
        return Err(AbstractionError::ZeroBudget);
    }
    let counts = par::fold_reduce(
        corpus,
        HashMap::<String, u64>::new,
        |mut acc, m| {
            for t in m.tokens.iter().filter(|t| t.class.is_abstractable()) {
                *acc.entry(t.text.clone()).or_default() += 1;
            }
            acc
        },
        |mut a, b| {
            for (t, n) in b {
                *a.entry(t).or_default() += n;
            }
            a
        },
    );
    if counts.is_empty() {
        return Err(AbstractionError::EmptyCorpus);
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(IdiomVocabulary::new(ranked.into_iter().map(|(t, _)| t).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placeholder {
    pub class: SyntaxClass,
    /// 1-based.
    pub index: u32,
}

const PLACEHOLDER_CLASSES: [SyntaxClass; 5] = [
    SyntaxClass::Type,
    SyntaxClass::Method,
    SyntaxClass::Variable,
    SyntaxClass::StringLit,
    SyntaxClass::NumLit,
];

impl Placeholder {
    /// Parses `CLASS_i` with `i` a positive integer without leading zeros.
    pub fn parse(label: &str) -> Option<Placeholder> {
        // STRING_LIT / NUM_LIT contain an underscore themselves, so split on
        // the last one.
        let (prefix, digits) = label.rsplit_once('_')?;
        let class = PLACEHOLDER_CLASSES.into_iter().find(|c| c.label() == prefix)?;
        if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(Placeholder {
            class,
            index: digits.parse().ok()?,
        })
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.class.label(), self.index)
    }
}

impl FromStr for Placeholder {
    type Err = AbstractionError;

    fn from_str(s: &str) -> Result<Self> {
        Placeholder::parse(s).ok_or_else(|| AbstractionError::BadLabel(s.to_string()))
    }
}

impl Serialize for Placeholder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Placeholder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Placeholder → concrete text for one pair.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
#[serde(transparent)]
pub struct AbstractionMap {
    entries: BTreeMap<Placeholder, String>,
}

impl AbstractionMap {
    /// Builds a map from externally supplied entries, checking that it is a
    /// bijection within each class and that indices have no gaps.
    pub fn from_entries(entries: BTreeMap<Placeholder, String>) -> Result<Self> {
        let mut seen: HashMap<(SyntaxClass, &str), Placeholder> = HashMap::new();
        for (p, text) in &entries {
            if let Some(prev) = seen.insert((p.class, text.as_str()), *p) {
                return Err(AbstractionError::ClassConflict {
                    text: text.clone(),
                    first: prev.to_string(),
                    second: p.to_string(),
                });
            }
        }
        for class in PLACEHOLDER_CLASSES {
            let indices: Vec<u32> = entries.keys().filter(|p| p.class == class).map(|p| p.index).collect();
            if indices.iter().enumerate().any(|(i, &ix)| ix != i as u32 + 1) {
                let missing = Placeholder {
                    class,
                    index: indices.len() as u32 + 1,
                };
                return Err(AbstractionError::BadLabel(missing.to_string()));
            }
        }
        Ok(AbstractionMap { entries })
    }

    pub fn get(&self, p: &Placeholder) -> Option<&str> {
        self.entries.get(p).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Placeholder, &str)> {
        self.entries.iter().map(|(p, t)| (p, t.as_str()))
    }

    /// Highest index per class.
    pub fn max_index(&self, class: SyntaxClass) -> u32 {
        self.entries.keys().filter(|p| p.class == class).map(|p| p.index).max().unwrap_or(0)
    }
}

impl<'de> Deserialize<'de> for AbstractionMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = BTreeMap::<Placeholder, String>::deserialize(d)?;
        AbstractionMap::from_entries(entries).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractedMethod {
    pub tokens: Vec<String>,
    pub source_bucket: Bucket,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractedPair {
    pub buggy: AbstractedMethod,
    pub fixed: AbstractedMethod,
    pub map: AbstractionMap,
}

struct Numbering<'a> {
    idioms: &'a IdiomVocabulary,
    assigned: HashMap<(SyntaxClass, &'a str), Placeholder>,
    next: [u32; SyntaxClass::COUNT],
    entries: BTreeMap<Placeholder, String>,
}

impl<'a> Numbering<'a> {
    fn side(&mut self, tokens: &'a [ClassifiedToken]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            if !t.class.is_abstractable() || self.idioms.contains(&t.text) {
                if Placeholder::parse(&t.text).is_some() {
                    return Err(AbstractionError::PlaceholderCollision(t.text.clone()));
                }
                out.push(t.text.clone());
                continue;
            }
            let p = match self.assigned.get(&(t.class, t.text.as_str())) {
                Some(p) => *p,
                None => {
                    let slot = &mut self.next[t.class.index()];
                    *slot += 1;
                    let p = Placeholder {
                        class: t.class,
                        index: *slot,
                    };
                    self.assigned.insert((t.class, t.text.as_str()), p);
                    self.entries.insert(p, t.text.clone());
                    p
                }
            };
            out.push(p.to_string());
        }
        Ok(out)
    }
}

/// Abstracts a pair against one shared placeholder map.
pub fn abstract_pair(
    buggy: &[ClassifiedToken],
    fixed: &[ClassifiedToken],
    idioms: &IdiomVocabulary,
) -> Result<AbstractedPair> {
    let mut numbering = Numbering {
        idioms,
        assigned: HashMap::new(),
        next: [0; SyntaxClass::COUNT],
        entries: BTreeMap::new(),
    };
    let b = numbering.side(buggy)?;
    let f = numbering.side(fixed)?;
    Ok(AbstractedPair {
        buggy: AbstractedMethod {
            tokens: b,
            source_bucket: Bucket::from_count(buggy.len()),
        },
        fixed: AbstractedMethod {
            tokens: f,
            source_bucket: Bucket::from_count(fixed.len()),
        },
        map: AbstractionMap {
            entries: numbering.entries,
        },
    })
}

/// Substitutes placeholders back to concrete text.
pub fn deabstract<S: AsRef<str>>(tokens: &[S], map: &AbstractionMap) -> Result<Vec<String>> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            match Placeholder::parse(t) {
                Some(p) => map
                    .get(&p)
                    .map(str::to_string)
                    .ok_or_else(|| AbstractionError::UnknownPlaceholder(t.to_string())),
                None => Ok(t.to_string()),
            }
        })
        .collect()
}

/// Distinct abstracted tokens over a set of pairs.
pub fn abstract_vocabulary<'a>(pairs: impl IntoIterator<Item = &'a AbstractedPair>) -> BTreeSet<String> {
    let mut vocab = BTreeSet::new();
    for p in pairs {
        vocab.extend(p.buggy.tokens.iter().cloned());
        vocab.extend(p.fixed.tokens.iter().cloned());
    }
    vocab
}
