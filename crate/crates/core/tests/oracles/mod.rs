//! Slow, obviously-correct reference implementations shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

/// Whether `fixed` equals some subset of `buggy`'s positions, by trying all
/// `2^n` subsets.
pub fn deletion_by_enumeration<T: PartialEq>(buggy: &[T], fixed: &[T]) -> bool {
    let n = buggy.len();
    (0u32..1 << n).any(|keep| {
        keep.count_ones() as usize == fixed.len()
            && (0..n).filter(|i| keep >> i & 1 == 1).map(|i| &buggy[i]).eq(fixed.iter())
    })
}

/// Every sequence over `alphabet` of length `0..=max_len`.
pub fn all_sequences(alphabet: &[&'static str], max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in alphabet {
                let mut t: Vec<&'static str> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn is_ws(b: u8) -> bool {
    b" \t\n\r\x0b\x0c".contains(&b)
}

/// BPE by full recount after every merge. Returns (left, right) byte strings
/// in rank order.
pub fn bpe_by_recount(corpus: &[Vec<u8>], num_merges: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut words: Vec<Vec<Vec<u8>>> = Vec::new();
    for doc in corpus {
        let mut i = 0;
        while i < doc.len() {
            let ws = is_ws(doc[i]);
            let mut j = i;
            while j < doc.len() && is_ws(doc[j]) == ws {
                j += 1;
            }
            words.push(doc[i..j].iter().map(|&b| vec![b]).collect());
            i = j;
        }
    }
    let mut merges = Vec::new();
    for _ in 0..num_merges {
        let mut counts: BTreeMap<(Vec<u8>, Vec<u8>), u64> = BTreeMap::new();
        for w in &words {
            for p in w.windows(2) {
                *counts.entry((p[0].clone(), p[1].clone())).or_default() += 1;
            }
        }
        // BTreeMap iterates in (left, right) order, so the first maximum is
        // the lexicographically smallest.
        let Some(best) = counts.iter().fold(None::<(&(Vec<u8>, Vec<u8>), u64)>, |acc, (p, &c)| match acc {
            Some((_, bc)) if bc >= c => acc,
            _ => Some((p, c)),
        }) else {
            break;
        };
        let (l, r) = best.0.clone();
        for w in &mut words {
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                    out.push([l.clone(), r.clone()].concat());
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *w = out;
        }
        merges.push((l, r));
    }
    merges
}
