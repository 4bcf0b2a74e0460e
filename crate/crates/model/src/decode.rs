//! Incremental decoding with cached keys/values, greedy rollout and
//! length-normalized beam search.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use bugforge_core::tokenizer::{BOS_ID, EOS_ID, PAD_ID};
use bugforge_core::SyntaxClass;

use crate::ops::{add_into, gelu, log_sum_exp, Scalar};
use crate::params::{Attn, Lin, Model};
use crate::transformer::{ln_fwd, slice};
use crate::ModelError;

/// Encoder output projected to each decoder layer's cross-attention keys
/// and values.
pub struct EncodedSource<S> {
    cross_k: Vec<Vec<S>>,
    cross_v: Vec<Vec<S>>,
    key_mask: Vec<bool>,
}

/// Self-attention keys and values of the tokens fed so far.
#[derive(Clone)]
pub struct DecoderState<S> {
    self_k: Vec<Vec<S>>,
    self_v: Vec<Vec<S>>,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Generated ids without BOS/EOS.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// `log_prob / len^length_penalty`, `len` counting EOS when present.
    pub score: f64,
    /// False if `max_len` was reached before EOS.
    pub finished: bool,
}

fn row_lin<S: Scalar>(p: &[S], l: &Lin, x: &[S]) -> Vec<S> {
    let mut y = slice(p, l.b, l.dout).to_vec();
    let w = slice(p, l.w, l.din * l.dout);
    for (i, &xi) in x.iter().enumerate() {
        if xi == S::zero() {
            continue;
        }
        for (yj, &wij) in y.iter_mut().zip(&w[i * l.dout..(i + 1) * l.dout]) {
            *yj += xi * wij;
        }
    }
    y
}

/// One query over `m` cached keys/values (`m x d`).
fn attend_one<S: Scalar>(q: &[S], k: &[S], v: &[S], heads: usize, mask: Option<&[bool]>) -> Vec<S> {
    let d = q.len();
    let dh = d / heads;
    let m = k.len() / d;
    let scale = S::of(1.0 / (dh as f64).sqrt());
    let mut out = vec![S::zero(); d];
    let mut scores = vec![S::zero(); m];
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (j, s) in scores.iter_mut().enumerate() {
            *s = if mask.is_some_and(|mk| !mk[j]) {
                S::neg_infinity()
            } else {
                let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
                qh.iter().zip(kj).fold(S::zero(), |a, (&x, &y)| a + x * y) * scale
            };
        }
        let lse = log_sum_exp(&scores);
        let oh = &mut out[h * dh..(h + 1) * dh];
        for (j, &s) in scores.iter().enumerate() {
            let p = (s - lse).exp();
            if p == S::zero() {
                continue;
            }
            for (o, &vv) in oh.iter_mut().zip(&v[j * d + h * dh..j * d + (h + 1) * dh]) {
                *o += p * vv;
            }
        }
    }
    out
}

fn attn_step<S: Scalar>(p: &[S], a: &Attn, heads: usize, h: &[S], k: &[S], v: &[S], mask: Option<&[bool]>) -> Vec<S> {
    let q = row_lin(p, &a.q, h);
    row_lin(p, &a.o, &attend_one(&q, k, v, heads, mask))
}

fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<f64> {
    let lse = log_sum_exp(logits).f64();
    logits.iter().map(|&z| z.f64() - lse).collect()
}

/// Tokens the decoder may emit. BOS and PAD never appear in targets.
fn emittable(id: usize) -> bool {
    id != PAD_ID as usize && id != BOS_ID as usize
}

fn normalized(log_prob: f64, len: usize, length_penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(length_penalty)
}

impl<S: Scalar> Model<S> {
    pub fn encode_source(&self, src: &[u32], classes: &[SyntaxClass]) -> Result<EncodedSource<S>, ModelError> {
        if src.len() != classes.len() {
            return Err(ModelError::ShapeMismatch("source and class lengths differ".into()));
        }
        self.check_lengths(src.len(), 1)?;
        let (enc_out, key_mask, ..) = self.encode_cached(src, classes, None)?;
        let n = src.len();
        let p = &self.params;
        let (mut cross_k, mut cross_v) = (Vec::new(), Vec::new());
        for layer in &self.layout.dec {
            let proj = |l: &Lin| crate::ops::linear(&enc_out, n, slice(p, l.w, l.din * l.dout), slice(p, l.b, l.dout), l.din, l.dout);
            cross_k.push(proj(&layer.cross.k));
            cross_v.push(proj(&layer.cross.v));
        }
        Ok(EncodedSource { cross_k, cross_v, key_mask })
    }

    pub fn start_state(&self) -> DecoderState<S> {
        let layers = self.layout.dec.len();
        DecoderState {
            self_k: vec![Vec::new(); layers],
            self_v: vec![Vec::new(); layers],
            len: 0,
        }
    }

    /// Feeds `token` at the next position and returns next-token logits.
    pub fn decode_step(&self, src: &EncodedSource<S>, state: &mut DecoderState<S>, token: u32) -> Result<Vec<S>, ModelError> {
        let heads = self.config.num_heads;
        let p = &self.params;
        let mut y = self.embed(&[token], &[state.len], None)?;
        for (l, layer) in self.layout.dec.iter().enumerate() {
            let (h, _) = ln_fwd(p, &layer.ln1, &y);
            state.self_k[l].extend(row_lin(p, &layer.self_attn.k, &h));
            state.self_v[l].extend(row_lin(p, &layer.self_attn.v, &h));
            add_into(&mut y, &attn_step(p, &layer.self_attn, heads, &h, &state.self_k[l], &state.self_v[l], None));
            let (h, _) = ln_fwd(p, &layer.ln2, &y);
            add_into(
                &mut y,
                &attn_step(p, &layer.cross, heads, &h, &src.cross_k[l], &src.cross_v[l], Some(&src.key_mask)),
            );
            let (h, _) = ln_fwd(p, &layer.ln3, &y);
            let act: Vec<S> = row_lin(p, &layer.ff1, &h).into_iter().map(gelu).collect();
            add_into(&mut y, &row_lin(p, &layer.ff2, &act));
        }
        state.len += 1;
        let (h, _) = ln_fwd(p, &self.layout.dec_ln, &y);
        Ok(row_lin(p, &self.layout.out, &h))
    }

    /// Argmax rollout (lowest id on ties).
    pub fn greedy_decode(&self, src: &[u32], classes: &[SyntaxClass], max_len: usize) -> Result<Candidate, ModelError> {
        let enc = self.encode_source(src, classes)?;
        let mut state = self.start_state();
        let (mut tokens, mut log_prob, mut last) = (Vec::new(), 0.0, BOS_ID);
        for _ in 0..max_len {
            let lp = log_softmax(&self.decode_step(&enc, &mut state, last)?);
            let (best, &best_lp) = lp
                .iter()
                .enumerate()
                .filter(|(i, _)| emittable(*i))
                .fold(None, |acc: Option<(usize, &f64)>, (i, v)| match acc {
                    Some((_, b)) if *b >= *v => acc,
                    _ => Some((i, v)),
                })
                .expect("vocabulary has emittable tokens");
            log_prob += best_lp;
            if best as u32 == EOS_ID {
                return Ok(Candidate {
                    score: normalized(log_prob, tokens.len() + 1, 1.0),
                    tokens,
                    log_prob,
                    finished: true,
                });
            }
            tokens.push(best as u32);
            last = best as u32;
        }
        Ok(Candidate {
            score: normalized(log_prob, tokens.len(), 1.0),
            tokens,
            log_prob,
            finished: false,
        })
    }

    /// Beam search. Each step ranks every (beam, token) extension by total
    /// log-probability; EOS extensions ranked within the top `beam_width`
    /// finish, the best non-EOS extensions continue. Candidates are
    /// returned best first by length-normalized score.
    pub fn beam_decode(
        &self,
        src: &[u32],
        classes: &[SyntaxClass],
        beam_width: usize,
        max_len: usize,
        length_penalty: f64,
    ) -> Result<Vec<Candidate>, ModelError> {
        let beam_width = beam_width.max(1);
        let enc = self.encode_source(src, classes)?;
        struct Beam<S> {
            tokens: Vec<u32>,
            log_prob: f64,
            state: DecoderState<S>,
            last: u32,
        }
        let mut beams = vec![Beam {
            tokens: Vec::new(),
            log_prob: 0.0,
            state: self.start_state(),
            last: BOS_ID,
        }];
        let mut done: Vec<Candidate> = Vec::new();
        for _ in 0..max_len {
            if beams.is_empty() || done.len() >= beam_width {
                break;
            }
            let mut cands: Vec<(f64, usize, u32)> = Vec::new();
            for (bi, beam) in beams.iter_mut().enumerate() {
                let lp = log_softmax(&self.decode_step(&enc, &mut beam.state, beam.last)?);
                cands.extend(
                    lp.iter().enumerate().filter(|(t, _)| emittable(*t)).map(|(t, &l)| (beam.log_prob + l, bi, t as u32)),
                );
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(beam_width);
            for (rank, &(lp, bi, tok)) in cands.iter().enumerate() {
                if tok == EOS_ID {
                    if rank < beam_width {
                        let tokens = beams[bi].tokens.clone();
                        done.push(Candidate {
                            score: normalized(lp, tokens.len() + 1, length_penalty),
                            tokens,
                            log_prob: lp,
                            finished: true,
                        });
                    }
                    continue;
                }
                if next.len() < beam_width {
                    let mut tokens = beams[bi].tokens.clone();
                    tokens.push(tok);
                    next.push(Beam {
                        tokens,
                        log_prob: lp,
                        state: beams[bi].state.clone(),
                        last: tok,
                    });
                }
                if next.len() == beam_width && rank + 1 >= beam_width {
                    break;
                }
            }
            beams = next;
        }
        if done.len() < beam_width {
            for b in beams {
                done.push(Candidate {
                    score: normalized(b.log_prob, b.tokens.len(), length_penalty),
                    tokens: b.tokens,
                    log_prob: b.log_prob,
                    finished: false,
                });
            }
        }
        done.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(b.finished.cmp(&a.finished))
                .then(a.tokens.cmp(&b.tokens))
        });
        done.truncate(beam_width);
        Ok(done)
    }
}
