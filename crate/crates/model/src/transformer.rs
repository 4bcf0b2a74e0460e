//! Pre-norm encoder-decoder forward pass with cached activations and the
//! matching hand-written backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use bugforge_core::tokenizer::{BOS_ID, EOS_ID, PAD_ID};
use bugforge_core::SyntaxClass;

use crate::ops::{
    add_into, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, mm, softmax_rows, LnCache,
    Scalar, View, ViewMut,
};
use crate::params::{Attn, Lin, Ln, Model};
use crate::ModelError;

/// One training example before padding. Targets exclude BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<u32>,
    pub src_classes: Vec<SyntaxClass>,
    pub tgt: Vec<u32>,
    pub tgt_classes: Vec<SyntaxClass>,
}

impl Example {
    /// All-OTHER classes on both sides.
    pub fn unclassified(src: Vec<u32>, tgt: Vec<u32>) -> Self {
        Example {
            src_classes: vec![SyntaxClass::Other; src.len()],
            tgt_classes: vec![SyntaxClass::Other; tgt.len()],
            src,
            tgt,
        }
    }
}

/// Rectangular batch padded with `PAD_ID`. The decoder reads `dec_in`
/// (`BOS` followed by the target) and is trained to emit `labels` (the
/// target followed by `EOS`). Padded label positions are excluded from the
/// loss; padded source positions are masked out of attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingBatch {
    pub src: Vec<Vec<u32>>,
    pub src_classes: Vec<Vec<SyntaxClass>>,
    pub dec_in: Vec<Vec<u32>>,
    pub labels: Vec<Vec<u32>>,
    pub aux_labels: Vec<Vec<SyntaxClass>>,
}

impl TrainingBatch {
    pub fn new(examples: &[Example]) -> Self {
        let src_len = examples.iter().map(|e| e.src.len()).max().unwrap_or(0);
        let tgt_len = examples.iter().map(|e| e.tgt.len() + 1).max().unwrap_or(0);
        let pad = |mut v: Vec<u32>, n: usize| {
            v.resize(n, PAD_ID);
            v
        };
        let pad_c = |mut v: Vec<SyntaxClass>, n: usize| {
            v.resize(n, SyntaxClass::Other);
            v
        };
        let mut b = TrainingBatch {
            src: Vec::new(),
            src_classes: Vec::new(),
            dec_in: Vec::new(),
            labels: Vec::new(),
            aux_labels: Vec::new(),
        };
        for e in examples {
            b.src.push(pad(e.src.clone(), src_len));
            b.src_classes.push(pad_c(e.src_classes.clone(), src_len));
            let mut dec_in = vec![BOS_ID];
            dec_in.extend_from_slice(&e.tgt);
            b.dec_in.push(pad(dec_in, tgt_len));
            let mut labels = e.tgt.clone();
            labels.push(EOS_ID);
            b.labels.push(pad(labels, tgt_len));
            let mut aux = e.tgt_classes.clone();
            aux.push(SyntaxClass::Other);
            b.aux_labels.push(pad_c(aux, tgt_len));
        }
        b
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Non-pad label positions across the batch.
    pub fn target_tokens(&self) -> usize {
        self.labels.iter().flatten().filter(|&&t| t != PAD_ID).count()
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        let n = self.src.len();
        if [self.src_classes.len(), self.dec_in.len(), self.labels.len(), self.aux_labels.len()] != [n; 4] {
            return Err(ModelError::ShapeMismatch("batch fields have different row counts".into()));
        }
        for i in 0..n {
            if self.src[i].len() != self.src_classes[i].len() {
                return Err(ModelError::ShapeMismatch(format!("row {i}: source and class lengths differ")));
            }
            if self.dec_in[i].len() != self.labels[i].len() || self.labels[i].len() != self.aux_labels[i].len() {
                return Err(ModelError::ShapeMismatch(format!("row {i}: target field lengths differ")));
            }
        }
        Ok(())
    }
}

/// One batch row with trailing padding trimmed.
pub(crate) struct Row<'a> {
    pub src: &'a [u32],
    pub src_classes: &'a [SyntaxClass],
    pub dec_in: &'a [u32],
    pub labels: &'a [u32],
    pub aux_labels: &'a [SyntaxClass],
}

fn trimmed_len(ids: &[u32]) -> usize {
    ids.iter().rposition(|&t| t != PAD_ID).map_or(0, |p| p + 1)
}

impl TrainingBatch {
    pub(crate) fn row(&self, i: usize) -> Row<'_> {
        let s = trimmed_len(&self.src[i]);
        let t = trimmed_len(&self.labels[i]);
        Row {
            src: &self.src[i][..s],
            src_classes: &self.src_classes[i][..s],
            dec_in: &self.dec_in[i][..t],
            labels: &self.labels[i][..t],
            aux_labels: &self.aux_labels[i][..t],
        }
    }
}

/// Per-row forward outputs: `t x V` token logits and, with the auxiliary
/// head, `t x 6` class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs<S> {
    pub logits: Vec<S>,
    pub aux_logits: Option<Vec<S>>,
    pub len: usize,
}

pub(crate) struct AttnCache<S> {
    q_in: Vec<S>,
    kv_in: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    /// `heads x n x m`.
    p: Vec<S>,
    o: Vec<S>,
    n: usize,
    m: usize,
}

pub(crate) struct FfCache<S> {
    x: Vec<S>,
    pre: Vec<S>,
    act: Vec<S>,
}

pub(crate) struct EncCache<S> {
    ln1: LnCache<S>,
    attn: AttnCache<S>,
    drop1: Option<Vec<S>>,
    ln2: LnCache<S>,
    ff: FfCache<S>,
    drop2: Option<Vec<S>>,
}

pub(crate) struct DecCache<S> {
    ln1: LnCache<S>,
    self_attn: AttnCache<S>,
    drop1: Option<Vec<S>>,
    ln2: LnCache<S>,
    cross: AttnCache<S>,
    drop2: Option<Vec<S>>,
    ln3: LnCache<S>,
    ff: FfCache<S>,
    drop3: Option<Vec<S>>,
}

pub(crate) struct Cache<S> {
    src_len: usize,
    tgt_len: usize,
    enc_drop: Option<Vec<S>>,
    enc: Vec<EncCache<S>>,
    enc_ln: LnCache<S>,
    dec_drop: Option<Vec<S>>,
    dec: Vec<DecCache<S>>,
    dec_ln: LnCache<S>,
    dec_out: Vec<S>,
}

pub(crate) fn slice<S>(p: &[S], off: usize, len: usize) -> &[S] {
    &p[off..off + len]
}

fn lin_fwd<S: Scalar>(p: &[S], l: &Lin, x: &[S], n: usize) -> Vec<S> {
    linear(x, n, slice(p, l.w, l.din * l.dout), slice(p, l.b, l.dout), l.din, l.dout)
}

fn lin_bwd<S: Scalar>(p: &[S], g: &mut [S], l: &Lin, x: &[S], dy: &[S], n: usize) -> Vec<S> {
    let (dw, db) = g[l.w..l.b + l.dout].split_at_mut(l.din * l.dout);
    linear_backward(x, dy, n, slice(p, l.w, l.din * l.dout), l.din, l.dout, dw, db)
}

pub(crate) fn ln_fwd<S: Scalar>(p: &[S], l: &Ln, x: &[S]) -> (Vec<S>, LnCache<S>) {
    layer_norm(x, l.d, slice(p, l.g, l.d), slice(p, l.b, l.d))
}

fn ln_bwd<S: Scalar>(p: &[S], g: &mut [S], l: &Ln, c: &LnCache<S>, dy: &[S]) -> Vec<S> {
    let (dg, db) = g[l.g..l.b + l.d].split_at_mut(l.d);
    layer_norm_backward(dy, l.d, slice(p, l.g, l.d), c, dg, db)
}

fn dropout<S: Scalar>(x: &mut [S], rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<S>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = S::of(1.0 / (1.0 - rate));
    let mask: Vec<S> = (0..x.len()).map(|_| if rng.gen::<f64>() < rate { S::zero() } else { keep }).collect();
    for (v, &m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

fn dropout_bwd<S: Scalar>(dy: &[S], mask: &Option<Vec<S>>) -> Vec<S> {
    match mask {
        Some(m) => dy.iter().zip(m).map(|(&a, &b)| a * b).collect(),
        None => dy.to_vec(),
    }
}

/// Attention of `n` queries over `m` keys. `key_mask[j] == false` hides key
/// `j`; `causal` hides keys after the query position.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attn_fwd<S: Scalar>(
    p: &[S],
    a: &Attn,
    heads: usize,
    q_in: &[S],
    n: usize,
    kv_in: &[S],
    m: usize,
    causal: bool,
    key_mask: Option<&[bool]>,
) -> (Vec<S>, AttnCache<S>) {
    let d = a.q.din;
    let dh = d / heads;
    let q = lin_fwd(p, &a.q, q_in, n);
    let k = lin_fwd(p, &a.k, kv_in, m);
    let v = lin_fwd(p, &a.v, kv_in, m);
    let scale = S::of(1.0 / (dh as f64).sqrt());
    let mut probs = vec![S::zero(); heads * n * m];
    let mut o = vec![S::zero(); n * d];
    for h in 0..heads {
        let ph = &mut probs[h * n * m..(h + 1) * n * m];
        mm(
            View::cols(&q, n, d, h * dh, dh),
            View::cols(&k, m, d, h * dh, dh).t(),
            S::zero(),
            ViewMut::new(ph, n, m),
        );
        for i in 0..n {
            for j in 0..m {
                let hidden = (causal && j > i) || key_mask.is_some_and(|km| !km[j]);
                let s = &mut ph[i * m + j];
                *s = if hidden { S::neg_infinity() } else { *s * scale };
            }
        }
        softmax_rows(ph, m);
        mm(View::new(ph, n, m), View::cols(&v, m, d, h * dh, dh), S::zero(), ViewMut::cols(&mut o, n, d, h * dh, dh));
    }
    let out = lin_fwd(p, &a.o, &o, n);
    let cache = AttnCache {
        q_in: q_in.to_vec(),
        kv_in: kv_in.to_vec(),
        q,
        k,
        v,
        p: probs,
        o,
        n,
        m,
    };
    (out, cache)
}

/// Returns (d q_in, d kv_in).
pub(crate) fn attn_bwd<S: Scalar>(
    p: &[S],
    g: &mut [S],
    a: &Attn,
    heads: usize,
    c: &AttnCache<S>,
    dout: &[S],
) -> (Vec<S>, Vec<S>) {
    let (n, m) = (c.n, c.m);
    let d = a.q.din;
    let dh = d / heads;
    let scale = S::of(1.0 / (dh as f64).sqrt());
    let d_o = lin_bwd(p, g, &a.o, &c.o, dout, n);
    let mut dq = vec![S::zero(); n * d];
    let mut dk = vec![S::zero(); m * d];
    let mut dv = vec![S::zero(); m * d];
    let mut dp = vec![S::zero(); n * m];
    for h in 0..heads {
        let ph = &c.p[h * n * m..(h + 1) * n * m];
        mm(View::cols(&d_o, n, d, h * dh, dh), View::cols(&c.v, m, d, h * dh, dh).t(), S::zero(), ViewMut::new(&mut dp, n, m));
        mm(View::new(ph, n, m).t(), View::cols(&d_o, n, d, h * dh, dh), S::zero(), ViewMut::cols(&mut dv, m, d, h * dh, dh));
        for i in 0..n {
            let row_p = &ph[i * m..(i + 1) * m];
            let row_dp = &mut dp[i * m..(i + 1) * m];
            let dot = row_p.iter().zip(row_dp.iter()).fold(S::zero(), |acc, (&a, &b)| acc + a * b);
            for (dpj, &pj) in row_dp.iter_mut().zip(row_p) {
                *dpj = pj * (*dpj - dot) * scale;
            }
        }
        mm(View::new(&dp, n, m), View::cols(&c.k, m, d, h * dh, dh), S::zero(), ViewMut::cols(&mut dq, n, d, h * dh, dh));
        mm(View::new(&dp, n, m).t(), View::cols(&c.q, n, d, h * dh, dh), S::zero(), ViewMut::cols(&mut dk, m, d, h * dh, dh));
    }
    let dq_in = lin_bwd(p, g, &a.q, &c.q_in, &dq, n);
    let mut dkv_in = lin_bwd(p, g, &a.k, &c.kv_in, &dk, m);
    add_into(&mut dkv_in, &lin_bwd(p, g, &a.v, &c.kv_in, &dv, m));
    (dq_in, dkv_in)
}

fn ff_fwd<S: Scalar>(p: &[S], ff1: &Lin, ff2: &Lin, x: Vec<S>, n: usize) -> (Vec<S>, FfCache<S>) {
    let pre = lin_fwd(p, ff1, &x, n);
    let act: Vec<S> = pre.iter().map(|&v| gelu(v)).collect();
    let out = lin_fwd(p, ff2, &act, n);
    (out, FfCache { x, pre, act })
}

fn ff_bwd<S: Scalar>(p: &[S], g: &mut [S], ff1: &Lin, ff2: &Lin, c: &FfCache<S>, dy: &[S], n: usize) -> Vec<S> {
    let dact = lin_bwd(p, g, ff2, &c.act, dy, n);
    let dpre: Vec<S> = dact.iter().zip(&c.pre).map(|(&d, &x)| d * gelu_grad(x)).collect();
    lin_bwd(p, g, ff1, &c.x, &dpre, n)
}

impl<S: Scalar> Model<S> {
    /// `VocabEmb[id] + PosEmb[pos] (+ SyntaxEmb[class])` per position.
    pub fn embed(
        &self,
        ids: &[u32],
        positions: &[usize],
        classes: Option<&[SyntaxClass]>,
    ) -> Result<Vec<S>, ModelError> {
        let d = self.config.model_dim;
        if positions.len() != ids.len() || classes.is_some_and(|c| c.len() != ids.len()) {
            return Err(ModelError::ShapeMismatch("embed inputs differ in length".into()));
        }
        let mut x = vec![S::zero(); ids.len() * d];
        for (i, (&id, &pos)) in ids.iter().zip(positions).enumerate() {
            if pos >= self.config.max_positions {
                return Err(ModelError::PositionOverflow {
                    position: pos,
                    max: self.config.max_positions,
                });
            }
            if id as usize >= self.config.vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
            let row = &mut x[i * d..(i + 1) * d];
            add_into(row, slice(&self.params, self.layout.tok_emb + id as usize * d, d));
            add_into(row, slice(&self.params, self.layout.pos_emb + pos * d, d));
            if let (Some(off), Some(cls)) = (self.layout.syn_emb, classes) {
                add_into(row, slice(&self.params, off + cls[i].index() * d, d));
            }
        }
        Ok(x)
    }

    fn embed_bwd(&self, g: &mut [S], ids: &[u32], classes: Option<&[SyntaxClass]>, dx: &[S]) {
        let d = self.config.model_dim;
        for (i, &id) in ids.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            add_into(&mut g[self.layout.tok_emb + id as usize * d..][..d], row);
            add_into(&mut g[self.layout.pos_emb + i * d..][..d], row);
            if let (Some(off), Some(cls)) = (self.layout.syn_emb, classes) {
                add_into(&mut g[off + cls[i].index() * d..][..d], row);
            }
        }
    }

    pub(crate) fn check_lengths(&self, src: usize, tgt: usize) -> Result<(), ModelError> {
        let max = self.config.max_positions;
        if src == 0 {
            return Err(ModelError::ShapeMismatch("empty source".into()));
        }
        for len in [src, tgt] {
            if len > max {
                return Err(ModelError::PositionOverflow { position: len - 1, max });
            }
        }
        Ok(())
    }

    /// Encoder output (`n x d`) and the key mask over source positions.
    pub(crate) fn encode_cached(
        &self,
        src: &[u32],
        classes: &[SyntaxClass],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<S>, Vec<bool>, Option<Vec<S>>, Vec<EncCache<S>>, LnCache<S>), ModelError> {
        let c = &self.config;
        let p = &self.params;
        let n = src.len();
        let positions: Vec<usize> = (0..n).collect();
        let mut x = self.embed(src, &positions, Some(classes))?;
        let enc_drop = dropout(&mut x, c.dropout, rng.as_deref_mut());
        let key_mask: Vec<bool> = src.iter().map(|&t| t != PAD_ID).collect();
        let mut caches = Vec::with_capacity(self.layout.enc.len());
        for layer in &self.layout.enc {
            let (h, ln1) = ln_fwd(p, &layer.ln1, &x);
            let (mut a, attn) = attn_fwd(p, &layer.attn, c.num_heads, &h, n, &h, n, false, Some(&key_mask));
            let drop1 = dropout(&mut a, c.dropout, rng.as_deref_mut());
            add_into(&mut x, &a);
            let (h2, ln2) = ln_fwd(p, &layer.ln2, &x);
            let (mut f, ff) = ff_fwd(p, &layer.ff1, &layer.ff2, h2, n);
            let drop2 = dropout(&mut f, c.dropout, rng.as_deref_mut());
            add_into(&mut x, &f);
            caches.push(EncCache { ln1, attn, drop1, ln2, ff, drop2 });
        }
        let (out, enc_ln) = ln_fwd(p, &self.layout.enc_ln, &x);
        Ok((out, key_mask, enc_drop, caches, enc_ln))
    }

    pub(crate) fn forward_row(&self, row: &Row<'_>, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Outputs<S>, Cache<S>), ModelError> {
        let c = &self.config;
        let p = &self.params;
        let (n, t) = (row.src.len(), row.dec_in.len());
        self.check_lengths(n, t)?;
        let (enc_out, key_mask, enc_drop, enc, enc_ln) = self.encode_cached(row.src, row.src_classes, rng.as_deref_mut())?;

        let positions: Vec<usize> = (0..t).collect();
        let mut y = self.embed(row.dec_in, &positions, None)?;
        let dec_drop = dropout(&mut y, c.dropout, rng.as_deref_mut());
        let mut dec = Vec::with_capacity(self.layout.dec.len());
        for layer in &self.layout.dec {
            let (h, ln1) = ln_fwd(p, &layer.ln1, &y);
            let (mut a, self_attn) = attn_fwd(p, &layer.self_attn, c.num_heads, &h, t, &h, t, true, None);
            let drop1 = dropout(&mut a, c.dropout, rng.as_deref_mut());
            add_into(&mut y, &a);
            let (h, ln2) = ln_fwd(p, &layer.ln2, &y);
            let (mut a, cross) = attn_fwd(p, &layer.cross, c.num_heads, &h, t, &enc_out, n, false, Some(&key_mask));
            let drop2 = dropout(&mut a, c.dropout, rng.as_deref_mut());
            add_into(&mut y, &a);
            let (h, ln3) = ln_fwd(p, &layer.ln3, &y);
            let (mut f, ff) = ff_fwd(p, &layer.ff1, &layer.ff2, h, t);
            let drop3 = dropout(&mut f, c.dropout, rng.as_deref_mut());
            add_into(&mut y, &f);
            dec.push(DecCache { ln1, self_attn, drop1, ln2, cross, drop2, ln3, ff, drop3 });
        }
        let (dec_out, dec_ln) = ln_fwd(p, &self.layout.dec_ln, &y);
        let logits = lin_fwd(p, &self.layout.out, &dec_out, t);
        let aux_logits = self.layout.aux.as_ref().map(|a| lin_fwd(p, a, &dec_out, t));
        let cache = Cache {
            src_len: n,
            tgt_len: t,
            enc_drop,
            enc,
            enc_ln,
            dec_drop,
            dec,
            dec_ln,
            dec_out,
        };
        Ok((Outputs { logits, aux_logits, len: t }, cache))
    }

    pub(crate) fn backward_row(&self, row: &Row<'_>, cache: &Cache<S>, dlogits: &[S], daux: Option<&[S]>, g: &mut [S]) {
        let p = &self.params;
        let heads = self.config.num_heads;
        let (n, t) = (cache.src_len, cache.tgt_len);
        let mut d_dec_out = lin_bwd(p, g, &self.layout.out, &cache.dec_out, dlogits, t);
        if let (Some(a), Some(da)) = (self.layout.aux.as_ref(), daux) {
            add_into(&mut d_dec_out, &lin_bwd(p, g, a, &cache.dec_out, da, t));
        }
        let mut dy = ln_bwd(p, g, &self.layout.dec_ln, &cache.dec_ln, &d_dec_out);
        let mut d_enc_out = vec![S::zero(); n * self.config.model_dim];
        for (layer, lc) in self.layout.dec.iter().zip(&cache.dec).rev() {
            let df = dropout_bwd(&dy, &lc.drop3);
            let dh = ff_bwd(p, g, &layer.ff1, &layer.ff2, &lc.ff, &df, t);
            add_into(&mut dy, &ln_bwd(p, g, &layer.ln3, &lc.ln3, &dh));

            let da = dropout_bwd(&dy, &lc.drop2);
            let (dq, dkv) = attn_bwd(p, g, &layer.cross, heads, &lc.cross, &da);
            add_into(&mut d_enc_out, &dkv);
            add_into(&mut dy, &ln_bwd(p, g, &layer.ln2, &lc.ln2, &dq));

            let da = dropout_bwd(&dy, &lc.drop1);
            let (mut dq, dkv) = attn_bwd(p, g, &layer.self_attn, heads, &lc.self_attn, &da);
            add_into(&mut dq, &dkv);
            add_into(&mut dy, &ln_bwd(p, g, &layer.ln1, &lc.ln1, &dq));
        }
        self.embed_bwd(g, row.dec_in, None, &dropout_bwd(&dy, &cache.dec_drop));

        let mut dx = ln_bwd(p, g, &self.layout.enc_ln, &cache.enc_ln, &d_enc_out);
        for (layer, lc) in self.layout.enc.iter().zip(&cache.enc).rev() {
            let df = dropout_bwd(&dx, &lc.drop2);
            let dh = ff_bwd(p, g, &layer.ff1, &layer.ff2, &lc.ff, &df, n);
            add_into(&mut dx, &ln_bwd(p, g, &layer.ln2, &lc.ln2, &dh));

            let da = dropout_bwd(&dx, &lc.drop1);
            let (mut dq, dkv) = attn_bwd(p, g, &layer.attn, heads, &lc.attn, &da);
            add_into(&mut dq, &dkv);
            add_into(&mut dx, &ln_bwd(p, g, &layer.ln1, &lc.ln1, &dq));
        }
        self.embed_bwd(g, row.src, Some(row.src_classes), &dropout_bwd(&dx, &cache.enc_drop));
    }

    /// Teacher-forced logits for every row. Rows are trimmed of trailing
    /// padding, so `Outputs::len` is the row's label count.
    pub fn forward(&self, batch: &TrainingBatch) -> Result<Vec<Outputs<S>>, ModelError> {
        batch.check()?;
        (0..batch.len()).map(|i| self.forward_row(&batch.row(i), None).map(|(o, _)| o)).collect()
    }
}
