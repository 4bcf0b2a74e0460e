//! Span masking for denoising pretraining.
//!
//! Each selected span of exactly `span_len` consecutive tokens collapses to a
//! single sentinel in the input. The target repeats the sentinel in front of
//! every span's tokens, left to right:
//!
//! ```text
//! tokens  a b c d e f g
//! input   a <mask> e f g        (span b c d)
//! target  <mask> b c d
//! ```

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoisingError {
    #[error("sequence of length {len} is shorter than one span of {span_len}")]
    TooShort { len: usize, span_len: usize },
    #[error("{spans} spans of {span_len} do not fit in {len} tokens")]
    InfeasibleMask { spans: usize, span_len: usize, len: usize },
    #[error("mask fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("span length must be at least 1")]
    BadSpanLen,
    #[error("malformed target: {0}")]
    MalformedTarget(String),
}

pub type Result<T, E = NoisingError> = std::result::Result<T, E>;

pub const DEFAULT_FRACTION: f64 = 0.3;
pub const DEFAULT_SPAN_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedPair<T> {
    pub input: Vec<T>,
    pub target: Vec<T>,
    pub span_len: usize,
    pub mask_fraction: f64,
}

/// `round_half_up(fraction * len / span_len)`.
pub fn span_count(len: usize, fraction: f64, span_len: usize) -> usize {
    (fraction * len as f64 / span_len as f64 + 0.5).floor() as usize
}

/// Start offsets of `spans` non-overlapping spans, drawn uniformly from all
/// valid placements.
///
/// Placements of `s` spans of length `L` in `n` slots correspond one-to-one
/// with `s`-subsets of `n - s(L - 1)` items: the `j`-th smallest chosen item
/// `c_j` starts a span at `c_j + j(L - 1)`. Sampling the subset uniformly
/// therefore samples placements uniformly, with no rejection.
pub fn sample_span_starts(len: usize, spans: usize, span_len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let slots = len - spans * (span_len - 1);
    let mut chosen = index::sample(rng, slots, spans).into_vec();
    chosen.sort_unstable();
    chosen.iter().enumerate().map(|(j, &c)| c + j * (span_len - 1)).collect()
}

/// Masks `round(fraction * len / span_len)` spans of `tokens`.
pub fn span_mask<T: Clone>(
    tokens: &[T],
    fraction: f64,
    span_len: usize,
    seed: u64,
    mask: &T,
) -> Result<MaskedPair<T>> {
    if span_len == 0 {
        return Err(NoisingError::BadSpanLen);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(NoisingError::BadFraction(fraction));
    }
    let len = tokens.len();
    if len < span_len {
        return Err(NoisingError::TooShort { len, span_len });
    }
    let spans = span_count(len, fraction, span_len);
    if spans * span_len > len {
        return Err(NoisingError::InfeasibleMask { spans, span_len, len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = sample_span_starts(len, spans, span_len, &mut rng);

    let mut input = Vec::with_capacity(len - spans * (span_len - 1));
    let mut target = Vec::with_capacity(spans * (span_len + 1));
    let mut i = 0;
    for &s in &starts {
        input.extend_from_slice(&tokens[i..s]);
        input.push(mask.clone());
        target.push(mask.clone());
        target.extend_from_slice(&tokens[s..s + span_len]);
        i = s + span_len;
    }
    input.extend_from_slice(&tokens[i..]);
    Ok(MaskedPair {
        input,
        target,
        span_len,
        mask_fraction: fraction,
    })
}

/// Inverse of [`span_mask`]: each sentinel in the input takes the next
/// target group.
pub fn unmask<T: Clone + PartialEq>(pair: &MaskedPair<T>, mask: &T) -> Result<Vec<T>> {
    let group = pair.span_len + 1;
    if pair.span_len == 0 || pair.target.len() % group != 0 {
        return Err(NoisingError::MalformedTarget(format!(
            "target length {} is not a multiple of {group}",
            pair.target.len()
        )));
    }
    let groups: Vec<&[T]> = pair.target.chunks(group).collect();
    if groups.iter().any(|g| &g[0] != mask) {
        return Err(NoisingError::MalformedTarget("group does not start with the sentinel".into()));
    }
    let sentinels = pair.input.iter().filter(|t| *t == mask).count();
    if sentinels != groups.len() {
        return Err(NoisingError::MalformedTarget(format!(
            "{sentinels} sentinels in input, {} groups in target",
            groups.len()
        )));
    }
    let mut next = groups.into_iter();
    let mut out = Vec::with_capacity(pair.input.len() + pair.target.len());
    for t in &pair.input {
        if t == mask {
            out.extend_from_slice(&next.next().expect("counts checked")[1..]);
        } else {
            out.push(t.clone());
        }
    }
    Ok(out)
}

/// Encoder-input length relative to the unmasked sequence:
/// `1 - f + f / L`, evaluated as `1 - f (L - 1) / L`.
pub fn input_shrink_ratio(fraction: f64, span_len: usize) -> f64 {
    let l = span_len as f64;
    1.0 - fraction * (l - 1.0) / l
}

/// Per-example seed, independent of scheduling.
pub fn example_seed(global_seed: u64, index: usize) -> u64 {
    global_seed ^ index as u64
}

/// Masks every sequence with its own derived seed. Sequences that are too
/// short to mask come back as errors in their slot.
pub fn mask_batch<T: Clone + Send + Sync>(
    sequences: &[Vec<T>],
    fraction: f64,
    span_len: usize,
    global_seed: u64,
    mask: &T,
) -> Vec<Result<MaskedPair<T>>> {
    par::map_indexed(sequences, |i, s| span_mask(s, fraction, span_len, example_seed(global_seed, i), mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const M: &str = "<mask>";

    fn strs(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ten_tokens_one_span() {
        let toks: Vec<u32> = (1..=10).collect();
        let p = span_mask(&toks, 0.3, 3, 7, &0).unwrap();
        assert_eq!(p.input.len(), 8);
        assert_eq!(p.target.len(), 4);
    }

    #[test]
    fn zero_spans_is_identity() {
        let toks: Vec<u32> = (1..=4).collect();
        let p = span_mask(&toks, 0.1, 3, 0, &0).unwrap();
        assert_eq!(p.input, toks);
        assert!(p.target.is_empty());
    }

    #[test]
    fn full_cover_has_one_placement() {
        let toks = strs(&["a", "b", "c", "d", "e", "f"]);
        let mask = M.to_string();
        for seed in 0..20 {
            let p = span_mask(&toks, 0.99, 3, seed, &mask).unwrap();
            assert_eq!(p.input, strs(&[M, M]));
            assert_eq!(p.target, strs(&[M, "a", "b", "c", M, "d", "e", "f"]));
        }
    }

    #[test]
    fn errors() {
        assert_eq!(
            span_mask(&[1u32, 2], 0.3, 3, 0, &0),
            Err(NoisingError::TooShort { len: 2, span_len: 3 })
        );
        assert!(matches!(span_mask(&[1u32; 5], 0.9, 3, 0, &0), Err(NoisingError::InfeasibleMask { .. })));
        assert!(matches!(span_mask(&[1u32; 5], 0.0, 3, 0, &0), Err(NoisingError::BadFraction(_))));
        assert!(matches!(span_mask(&[1u32; 5], 1.0, 3, 0, &0), Err(NoisingError::BadFraction(_))));
    }

    #[test]
    fn unmask_examples() {
        let mask = M.to_string();
        let p = MaskedPair { input: strs(&[M, "d"]), target: strs(&[M, "a", "b", "c"]), span_len: 3, mask_fraction: 0.3 };
        assert_eq!(unmask(&p, &mask).unwrap(), strs(&["a", "b", "c", "d"]));
        let id = MaskedPair { input: strs(&["x"]), target: vec![], span_len: 3, mask_fraction: 0.3 };
        assert_eq!(unmask(&id, &mask).unwrap(), strs(&["x"]));
        let bad = MaskedPair { input: strs(&[M, M]), target: strs(&[M, "a", "b", "c"]), span_len: 3, mask_fraction: 0.3 };
        assert!(matches!(unmask(&bad, &mask), Err(NoisingError::MalformedTarget(_))));
        let ragged = MaskedPair { input: strs(&[M]), target: strs(&[M, "a"]), span_len: 3, mask_fraction: 0.3 };
        assert!(matches!(unmask(&ragged, &mask), Err(NoisingError::MalformedTarget(_))));
    }

    #[test]
    fn shrink_ratio() {
        assert_eq!(input_shrink_ratio(0.3, 3), 0.8);
        assert_eq!(input_shrink_ratio(0.15, 3), 0.9);
        for f in [0.01, 0.3, 0.77] {
            assert_eq!(input_shrink_ratio(f, 1), 1.0);
        }
    }

    #[test]
    fn span_count_rounds_half_up() {
        assert_eq!(span_count(10, 0.3, 3), 1);
        assert_eq!(span_count(5, 0.3, 3), 1); // 0.5 -> 1
        assert_eq!(span_count(4, 0.3, 3), 0);
    }

    #[test]
    fn batch_seeds_are_per_example() {
        let seqs: Vec<Vec<u32>> = (0..8).map(|i| (1..=30 + i).collect()).collect();
        let a = mask_batch(&seqs, 0.3, 3, 99, &0);
        let b = par::sequential(|| mask_batch(&seqs, 0.3, 3, 99, &0));
        assert_eq!(a, b);
        assert_eq!(a[3], span_mask(&seqs[3], 0.3, 3, 99 ^ 3, &0));
    }

    proptest! {
        #[test]
        fn mask_then_unmask_is_identity(len in 3usize..120, seed in any::<u64>(), frac in 0.01f64..0.6) {
            let toks: Vec<u32> = (1..=len as u32).collect();
            match span_mask(&toks, frac, 3, seed, &0) {
                Ok(p) => {
                    prop_assert_eq!(p.target.len() % 4, 0);
                    prop_assert_eq!(p.input.iter().filter(|&&t| t == 0).count(), p.target.len() / 4);
                    prop_assert_eq!(unmask(&p, &0).unwrap(), toks.clone());
                    prop_assert_eq!(span_mask(&toks, frac, 3, seed, &0).unwrap(), p);
                }
                Err(NoisingError::InfeasibleMask { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
