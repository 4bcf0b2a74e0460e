//! Byte-level BPE: training, whitespace-token extension, encoding and the
//! `vocab.json` / `merges.txt` file formats.
//!
//! Text is pre-split into maximal runs of whitespace and non-whitespace bytes
//! and merges never cross a run boundary, so a token is either pure
//! whitespace or contains none.
//!
//! Ids `0..5` are the specials, `5..261` the 256 single bytes, and the rest
//! the merge outputs in rank order. Every byte therefore has a token and
//! `decode(encode(x)) == x` for arbitrary input.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid merge at rank {rank}: {message}")]
    BadMerge { rank: usize, message: String },
    #[error("malformed vocabulary file: {0}")]
    BadVocab(String),
}

pub type Result<T, E = TokenizerError> = std::result::Result<T, E>;

pub const MASK: &str = "<mask>";
pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const SPECIALS: [&str; 5] = [MASK, PAD, BOS, EOS, UNK];

pub const MASK_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const UNK_ID: u32 = 4;

const BYTE_BASE: u32 = SPECIALS.len() as u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MergeRule {
    pub left: Vec<u8>,
    pub right: Vec<u8>,
    pub merged: Vec<u8>,
    pub rank: u32,
}

impl MergeRule {
    pub fn new(left: &[u8], right: &[u8], rank: u32) -> Self {
        MergeRule {
            left: left.to_vec(),
            right: right.to_vec(),
            merged: [left, right].concat(),
            rank,
        }
    }
}

pub fn is_ws_byte(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Maximal runs of whitespace and of non-whitespace bytes.
pub fn pretokenize(text: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= text.len() {
            return None;
        }
        let ws = is_ws_byte(text[start]);
        let len = text[start..].iter().take_while(|&&b| is_ws_byte(b) == ws).count();
        let run = &text[start..start + len];
        start += len;
        Some(run)
    })
}

#[derive(Debug, Clone)]
pub struct SubwordVocabulary {
    /// Byte strings for every non-special id (`id - 5`).
    pieces: Vec<Vec<u8>>,
    merges: Vec<MergeRule>,
    ids: HashMap<Vec<u8>, u32>,
    pair_ranks: HashMap<(u32, u32), (u32, u32)>,
}

impl PartialEq for SubwordVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces && self.merges == other.merges
    }
}

impl SubwordVocabulary {
    /// Specials, the byte alphabet, then each merge output in rank order
    /// (outputs already present are not added twice).
    pub fn from_merges(merges: Vec<MergeRule>) -> Result<Self> {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ids: HashMap<Vec<u8>, u32> =
            pieces.iter().enumerate().map(|(i, p)| (p.clone(), BYTE_BASE + i as u32)).collect();
        let mut pair_ranks = HashMap::new();
        for (i, m) in merges.iter().enumerate() {
            let bad = |message: &str| TokenizerError::BadMerge {
                rank: i,
                message: message.to_string(),
            };
            if m.rank as usize != i {
                return Err(bad("ranks must be dense and ordered"));
            }
            if m.merged.len() != m.left.len() + m.right.len()
                || m.merged[..m.left.len()] != m.left[..]
                || m.merged[m.left.len()..] != m.right[..]
            {
                return Err(bad("merged token is not left ++ right"));
            }
            let (Some(&l), Some(&r)) = (ids.get(&m.left), ids.get(&m.right)) else {
                return Err(bad("operand is not in the vocabulary"));
            };
            let out = *ids.entry(m.merged.clone()).or_insert_with(|| {
                pieces.push(m.merged.clone());
                BYTE_BASE + pieces.len() as u32 - 1
            });
            pair_ranks.entry((l, r)).or_insert((m.rank, out));
        }
        Ok(SubwordVocabulary {
            pieces,
            merges,
            ids,
            pair_ranks,
        })
    }

    /// Bytes only, no merges.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("empty merge list is valid")
    }

    pub fn len(&self) -> usize {
        SPECIALS.len() + self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn id_of(&self, token: &[u8]) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Token bytes for `id`; specials render as their names.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        if id < BYTE_BASE {
            SPECIALS.get(id as usize).map(|s| s.as_bytes())
        } else {
            self.pieces.get((id - BYTE_BASE) as usize).map(Vec::as_slice)
        }
    }

    pub fn is_special(id: u32) -> bool {
        id < BYTE_BASE
    }

    fn encode_run(&self, run: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = run.iter().map(|&b| BYTE_BASE + b as u32).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.pair_ranks.get(&(w[0], w[1])).map(|&(rank, out)| (rank, w[0], w[1], out)))
                .min();
            let Some((_, l, r, merged)) = best else {
                break;
            };
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        out.extend(syms);
    }

    /// Applies merges lowest rank first within each pre-token run.
    pub fn encode(&self, text: &[u8]) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len());
        for run in pretokenize(text) {
            self.encode_run(run, &mut out);
        }
        out
    }

    pub fn encode_str(&self, text: &str) -> Vec<u32> {
        self.encode(text.as_bytes())
    }

    pub fn encode_batch<S: AsRef<[u8]> + Sync>(&self, texts: &[S]) -> Vec<Vec<u32>> {
        par::map(texts, |t| self.encode(t.as_ref()))
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id).unwrap_or(UNK.as_bytes()));
        }
        out
    }

    pub fn decode_string(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.decode(ids)).into_owned()
    }

    /// Digest of the first `n` tokens (ids and bytes). A vocabulary extended
    /// by appending keeps the digest of its prefix.
    pub fn fingerprint_prefix(&self, n: usize) -> String {
        let mut h = Sha256::new();
        for id in 0..n.min(self.len()) as u32 {
            let t = self.token_bytes(id).expect("id below len");
            h.update((t.len() as u32).to_le_bytes());
            h.update(t);
        }
        crate::corpus::hex(&h.finalize())
    }

    pub fn fingerprint(&self) -> String {
        self.fingerprint_prefix(self.len())
    }

    /// `vocab.json` (token → id, id order) and `merges.txt` (one
    /// `left right` per line, rank order), both in the GPT-2 byte-to-unicode
    /// alphabet.
    pub fn to_files(&self) -> (String, String) {
        let mut vocab = String::from("{\n");
        for id in 0..self.len() as u32 {
            let key = if Self::is_special(id) {
                SPECIALS[id as usize].to_string()
            } else {
                bytes_to_unicode_string(self.token_bytes(id).expect("id below len"))
            };
            let sep = if id + 1 == self.len() as u32 { "" } else { "," };
            vocab.push_str(&format!(
                "  {}: {id}{sep}\n",
                serde_json::to_string(&key).expect("strings serialize")
            ));
        }
        vocab.push_str("}\n");
        let mut merges = String::new();
        for m in &self.merges {
            merges.push_str(&bytes_to_unicode_string(&m.left));
            merges.push(' ');
            merges.push_str(&bytes_to_unicode_string(&m.right));
            merges.push('\n');
        }
        (vocab, merges)
    }

    /// Rebuilds from `merges.txt` and checks `vocab.json` against the result.
    pub fn from_files(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (rank, line) in merges_txt.lines().enumerate() {
            let (l, r) = line.split_once(' ').ok_or_else(|| TokenizerError::BadMerge {
                rank,
                message: format!("expected `left right`, got `{line}`"),
            })?;
            let decode = |s: &str| {
                unicode_string_to_bytes(s).ok_or_else(|| TokenizerError::BadMerge {
                    rank,
                    message: format!("`{s}` is outside the byte alphabet"),
                })
            };
            merges.push(MergeRule::new(&decode(l)?, &decode(r)?, rank as u32));
        }
        let vocab = Self::from_merges(merges)?;
        let listed: HashMap<String, u32> =
            serde_json::from_str(vocab_json).map_err(|e| TokenizerError::BadVocab(e.to_string()))?;
        if listed.len() != vocab.len() {
            return Err(TokenizerError::BadVocab(format!(
                "vocab.json lists {} tokens, merges imply {}",
                listed.len(),
                vocab.len()
            )));
        }
        for (key, &id) in &listed {
            let expected = if SubwordVocabulary::is_special(id) {
                SPECIALS[id as usize].to_string()
            } else {
                vocab
                    .token_bytes(id)
                    .map(bytes_to_unicode_string)
                    .ok_or_else(|| TokenizerError::BadVocab(format!("id {id} out of range")))?
            };
            if &expected != key {
                return Err(TokenizerError::BadVocab(format!("id {id}: `{key}` != `{expected}`")));
            }
        }
        Ok(vocab)
    }
}

/// GPT-2's reversible byte → printable-character table.
fn byte_alphabet() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
    let mut extra = 0;
    for b in 0..256u32 {
        table[b as usize] = if printable(b) {
            char::from_u32(b).expect("latin-1 range")
        } else {
            extra += 1;
            char::from_u32(255 + extra).expect("small code point")
        };
    }
    table
}

pub fn bytes_to_unicode_string(bytes: &[u8]) -> String {
    let table = byte_alphabet();
    bytes.iter().map(|&b| table[b as usize]).collect()
}

pub fn unicode_string_to_bytes(s: &str) -> Option<Vec<u8>> {
    let table = byte_alphabet();
    s.chars()
        .map(|c| table.iter().position(|&t| t == c).map(|b| b as u8))
        .collect()
}

type Pair = (u32, u32);

struct Trainer {
    symbols: Vec<Vec<u8>>,
    words: Vec<(Vec<u32>, u64)>,
    counts: HashMap<Pair, i64>,
    occurs_in: HashMap<Pair, BTreeSet<usize>>,
}

impl Trainer {
    fn new(word_counts: HashMap<Vec<u8>, u64>) -> Self {
        let mut words: Vec<(Vec<u8>, u64)> = word_counts.into_iter().collect();
        words.sort();
        let words: Vec<(Vec<u32>, u64)> = words
            .into_iter()
            .map(|(w, n)| (w.iter().map(|&b| b as u32).collect(), n))
            .collect();
        let mut t = Trainer {
            symbols: (0..=255u8).map(|b| vec![b]).collect(),
            words,
            counts: HashMap::new(),
            occurs_in: HashMap::new(),
        };
        let per_word = par::map(&t.words, |(w, _)| w.windows(2).map(|p| (p[0], p[1])).collect::<Vec<_>>());
        for (i, pairs) in per_word.into_iter().enumerate() {
            let n = t.words[i].1 as i64;
            for p in pairs {
                *t.counts.entry(p).or_default() += n;
                t.occurs_in.entry(p).or_default().insert(i);
            }
        }
        t
    }

    fn better(&self, a: (Pair, i64), b: (Pair, i64)) -> bool {
        a.1 > b.1
            || (a.1 == b.1
                && (&self.symbols[a.0 .0 as usize], &self.symbols[a.0 .1 as usize])
                    < (&self.symbols[b.0 .0 as usize], &self.symbols[b.0 .1 as usize]))
    }

    fn best_pair(&self) -> Option<Pair> {
        let candidates: Vec<(Pair, i64)> = self.counts.iter().filter(|(_, &c)| c > 0).map(|(&p, &c)| (p, c)).collect();
        let pick = |a: Option<(Pair, i64)>, b: Option<(Pair, i64)>| match (a, b) {
            (Some(x), Some(y)) => Some(if self.better(y, x) { y } else { x }),
            (x, None) => x,
            (None, y) => y,
        };
        par::fold_reduce(&candidates, || None, |acc, &c| pick(acc, Some(c)), pick).map(|(p, _)| p)
    }

    fn merge(&mut self, pair: Pair) -> u32 {
        let new_sym = self.symbols.len() as u32;
        let merged = [self.symbols[pair.0 as usize].as_slice(), self.symbols[pair.1 as usize].as_slice()].concat();
        self.symbols.push(merged);
        let affected: Vec<usize> = self.occurs_in.get(&pair).map(|s| s.iter().copied().collect()).unwrap_or_default();
        for wi in affected {
            let (word, n) = &mut self.words[wi];
            let n = *n as i64;
            for p in word.windows(2) {
                *self.counts.get_mut(&(p[0], p[1])).expect("counted at init") -= n;
            }
            let mut next = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    next.push(new_sym);
                    i += 2;
                } else {
                    next.push(word[i]);
                    i += 1;
                }
            }
            *word = next;
            for p in word.windows(2) {
                let p = (p[0], p[1]);
                *self.counts.entry(p).or_default() += n;
                self.occurs_in.entry(p).or_default().insert(wi);
            }
        }
        self.counts.remove(&pair);
        self.occurs_in.remove(&pair);
        new_sym
    }
}

/// Learns up to `num_merges` merges: repeatedly merge the most frequent
/// adjacent pair, ties to the smallest `(left, right)` byte strings. Stops
/// early when no adjacent pair is left.
pub fn train_bpe<S: AsRef<[u8]> + Sync>(corpus: &[S], num_merges: usize) -> Result<Vec<MergeRule>> {
    let word_counts = par::fold_reduce(
        corpus,
        HashMap::<Vec<u8>, u64>::new,
        |mut acc, doc| {
            for run in pretokenize(doc.as_ref()) {
                *acc.entry(run.to_vec()).or_default() += 1;
            }
            acc
        },
        |mut a, b| {
            for (w, n) in b {
                *a.entry(w).or_default() += n;
            }
            a
        },
    );
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut trainer = Trainer::new(word_counts);
    let mut rules = Vec::with_capacity(num_merges);
    for rank in 0..num_merges {
        let Some(pair) = trainer.best_pair() else {
            break;
        };
        let (l, r) = (trainer.symbols[pair.0 as usize].clone(), trainer.symbols[pair.1 as usize].clone());
        trainer.merge(pair);
        rules.push(MergeRule::new(&l, &r, rank as u32));
    }
    Ok(rules)
}

/// Appends every whitespace-only merge of `learned`, in rank order, to
/// `base`. Base ids are untouched; outputs already in `base` are skipped.
pub fn extend_with_whitespace(base: &SubwordVocabulary, learned: &[MergeRule]) -> SubwordVocabulary {
    let mut merges = base.merges.clone();
    let mut present: std::collections::HashSet<Vec<u8>> = base.ids.keys().cloned().collect();
    let mut sorted: Vec<&MergeRule> = learned.iter().collect();
    sorted.sort_by_key(|m| m.rank);
    for m in sorted {
        if m.merged.is_empty() || !m.merged.iter().all(|&b| is_ws_byte(b)) || present.contains(&m.merged) {
            continue;
        }
        if !present.contains(&m.left) || !present.contains(&m.right) {
            log::warn!("whitespace merge {:?} has operands outside the vocabulary", m.merged);
            continue;
        }
        present.insert(m.merged.clone());
        merges.push(MergeRule::new(&m.left, &m.right, merges.len() as u32));
    }
    SubwordVocabulary::from_merges(merges).expect("extension keeps merge invariants")
}

/// Tokens under `a` divided by tokens under `b`.
pub fn compression_gain<S: AsRef<[u8]> + Sync>(
    corpus: &[S],
    a: &SubwordVocabulary,
    b: &SubwordVocabulary,
) -> Result<f64> {
    let count = |v: &SubwordVocabulary| -> usize { par::map(corpus, |t| v.encode(t.as_ref()).len()).into_iter().sum() };
    let (na, nb) = (count(a), count(b));
    if corpus.is_empty() || nb == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }
    Ok(na as f64 / nb as f64)
}
