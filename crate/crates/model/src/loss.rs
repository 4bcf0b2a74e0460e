//! Token NLL plus the weighted auxiliary class cross-entropy, both averaged
//! over non-pad target positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bugforge_core::tokenizer::PAD_ID;
use bugforge_core::{par, SyntaxClass};

use crate::ops::{add_into, log_sum_exp, Scalar};
use crate::params::Model;
use crate::transformer::TrainingBatch;
use crate::ModelError;

/// Rows whose gradients are held in memory at once.
const ROW_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    /// `nll + lambda * aux_ce`.
    pub loss: f64,
    pub nll: f64,
    pub aux_ce: f64,
    pub tokens: usize,
}

/// Sum of `-log softmax(row)[label]` over non-pad rows, and the gradient
/// `(softmax - onehot) * scale`.
fn ce_sum<S: Scalar>(logits: &[S], cols: usize, labels: impl Iterator<Item = Option<usize>>, scale: S) -> (f64, Vec<S>) {
    let mut total = 0.0;
    let mut grad = vec![S::zero(); logits.len()];
    for (i, label) in labels.enumerate() {
        let Some(y) = label else { continue };
        let row = &logits[i * cols..(i + 1) * cols];
        let lse = log_sum_exp(row);
        total += (lse - row[y]).f64();
        let g = &mut grad[i * cols..(i + 1) * cols];
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - lse).exp() * scale;
        }
        g[y] -= scale;
    }
    (total, grad)
}

fn token_labels(targets: &[u32]) -> impl Iterator<Item = Option<usize>> + '_ {
    targets.iter().map(|&t| (t != PAD_ID).then_some(t as usize))
}

fn class_labels<'a>(targets: &'a [u32], classes: &'a [SyntaxClass]) -> impl Iterator<Item = Option<usize>> + 'a {
    targets.iter().zip(classes).map(|(&t, c)| (t != PAD_ID).then_some(c.index()))
}

/// Mean NLL of `targets` under `logits` (`len x vocab`) plus `lambda` times
/// the mean class cross-entropy. Pad targets are skipped.
pub fn loss<S: Scalar>(
    logits: &[S],
    vocab: usize,
    targets: &[u32],
    aux_logits: Option<&[S]>,
    aux_labels: &[SyntaxClass],
    lambda: f64,
) -> Result<LossParts, ModelError> {
    if logits.len() != targets.len() * vocab {
        return Err(ModelError::ShapeMismatch(format!(
            "{} logits for {} targets over {vocab} tokens",
            logits.len(),
            targets.len()
        )));
    }
    if targets.iter().any(|&t| t != PAD_ID && t as usize >= vocab) {
        return Err(ModelError::ShapeMismatch("target id outside the vocabulary".into()));
    }
    let tokens = targets.iter().filter(|&&t| t != PAD_ID).count();
    if tokens == 0 {
        return Ok(LossParts::default());
    }
    let (nll_sum, _) = ce_sum(logits, vocab, token_labels(targets), S::zero());
    let nll = nll_sum / tokens as f64;
    let aux_ce = match aux_logits {
        Some(a) if lambda > 0.0 => {
            if a.len() != targets.len() * SyntaxClass::COUNT || aux_labels.len() != targets.len() {
                return Err(ModelError::ShapeMismatch("auxiliary logits or labels have the wrong length".into()));
            }
            ce_sum(a, SyntaxClass::COUNT, class_labels(targets, aux_labels), S::zero()).0 / tokens as f64
        }
        _ => 0.0,
    };
    Ok(LossParts {
        loss: nll + lambda * aux_ce,
        nll,
        aux_ce,
        tokens,
    })
}

impl<S: Scalar> Model<S> {
    /// Batch loss and its gradient with respect to every parameter. Rows
    /// run through the core `par` helpers; per-row gradients are summed in
    /// row order, so results do not depend on scheduling.
    pub fn loss_and_grads(
        &self,
        batch: &TrainingBatch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(LossParts, Vec<S>), ModelError> {
        batch.check()?;
        let tokens = batch.target_tokens();
        let mut grads = vec![S::zero(); self.layout.total];
        if tokens == 0 {
            return Ok((LossParts::default(), grads));
        }
        let lambda = self.config.aux_loss_weight;
        let inv = S::of(1.0 / tokens as f64);
        let seeds: Option<Vec<u64>> = rng.map(|r| (0..batch.len()).map(|_| r.gen()).collect());
        let rows: Vec<usize> = (0..batch.len()).collect();
        let (mut nll, mut aux) = (0.0, 0.0);
        for chunk in rows.chunks(ROW_CHUNK) {
            let parts = par::map(chunk, |&i| -> Result<(f64, f64, Vec<S>), ModelError> {
                let row = batch.row(i);
                let mut row_rng = seeds.as_ref().map(|s| ChaCha8Rng::seed_from_u64(s[i]));
                let (out, cache) = self.forward_row(&row, row_rng.as_mut())?;
                let (n, dlogits) = ce_sum(&out.logits, self.config.vocab_size, token_labels(row.labels), inv);
                let (a, daux) = match &out.aux_logits {
                    Some(a) => {
                        let (c, d) =
                            ce_sum(a, SyntaxClass::COUNT, class_labels(row.labels, row.aux_labels), S::of(lambda) * inv);
                        (c, Some(d))
                    }
                    None => (0.0, None),
                };
                let mut g = vec![S::zero(); self.layout.total];
                self.backward_row(&row, &cache, &dlogits, daux.as_deref(), &mut g);
                Ok((n, a, g))
            });
            for part in parts {
                let (n, a, g) = part?;
                nll += n;
                aux += a;
                add_into(&mut grads, &g);
            }
        }
        let (nll, aux_ce) = (nll / tokens as f64, aux / tokens as f64);
        Ok((
            LossParts {
                loss: nll + lambda * aux_ce,
                nll,
                aux_ce,
                tokens,
            },
            grads,
        ))
    }

    /// Batch loss without gradients.
    pub fn batch_loss(&self, batch: &TrainingBatch) -> Result<LossParts, ModelError> {
        let outs = self.forward(batch)?;
        let lambda = self.config.aux_loss_weight;
        let (mut nll, mut aux, mut tokens) = (0.0, 0.0, 0usize);
        for (i, out) in outs.iter().enumerate() {
            let row = batch.row(i);
            let parts = loss(
                &out.logits,
                self.config.vocab_size,
                row.labels,
                out.aux_logits.as_deref(),
                row.aux_labels,
                lambda,
            )?;
            nll += parts.nll * parts.tokens as f64;
            aux += parts.aux_ce * parts.tokens as f64;
            tokens += parts.tokens;
        }
        if tokens == 0 {
            return Ok(LossParts::default());
        }
        let (nll, aux_ce) = (nll / tokens as f64, aux / tokens as f64);
        Ok(LossParts {
            loss: nll + lambda * aux_ce,
            nll,
            aux_ce,
            tokens,
        })
    }
}
