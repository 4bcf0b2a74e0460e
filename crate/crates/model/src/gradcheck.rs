//! Finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::params::Model;
use crate::transformer::TrainingBatch;
use crate::ModelError;

pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Analytic gradients in `f32`, compared with `f64` differences of the
    /// same (f32-representable) parameters.
    Standard,
    /// Everything in `f64`.
    High,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checks: Vec<CoordCheck>,
    pub groups_covered: usize,
    pub groups_total: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Coordinates to probe: at least `per_group` from every tensor (all of a
/// tensor if it is smaller) and at least `min_total` overall. Embedding rows
/// are drawn from the rows the batch actually touches.
pub fn sample_coordinates(model: &Model<f64>, batch: &TrainingBatch, min_total: usize, seed: u64) -> Vec<(usize, usize)> {
    let specs = &model.layout.specs;
    let per_group = min_total.div_ceil(specs.len()).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used_tok: Vec<usize> = batch.src.iter().chain(&batch.dec_in).flatten().map(|&t| t as usize).collect();
    used_tok.sort_unstable();
    used_tok.dedup();
    let max_len = batch.src.iter().chain(&batch.dec_in).map(Vec::len).max().unwrap_or(1);
    let mut out = Vec::new();
    for (gi, s) in specs.iter().enumerate() {
        if s.len() <= per_group {
            out.extend((0..s.len()).map(|i| (gi, i)));
            continue;
        }
        for _ in 0..per_group {
            let row = match s.name.as_str() {
                "tok_emb" => used_tok[rng.gen_range(0..used_tok.len())],
                "pos_emb" => rng.gen_range(0..max_len),
                _ => rng.gen_range(0..s.rows),
            };
            out.push((gi, row * s.cols + rng.gen_range(0..s.cols)));
        }
    }
    out
}

/// Compares analytic gradients with central differences of step
/// [`FD_STEP`] on at least `min_coords` coordinates spanning every tensor.
/// Dropout is disabled for the check.
pub fn gradient_check(
    config: &ModelConfig,
    batch: &TrainingBatch,
    seed: u64,
    min_coords: usize,
    precision: Precision,
    floor: f64,
) -> Result<GradCheckReport, ModelError> {
    let config = ModelConfig {
        dropout: 0.0,
        ..config.clone()
    };
    let init = Model::<f64>::new(config, seed)?;
    let (mut reference, analytic): (Model<f64>, Vec<f64>) = match precision {
        Precision::High => {
            let (_, g) = init.loss_and_grads(batch, None)?;
            (init, g)
        }
        Precision::Standard => {
            let m32 = init.cast::<f32>();
            let (_, g) = m32.loss_and_grads(batch, None)?;
            (m32.cast::<f64>(), g.into_iter().map(f64::from).collect())
        }
    };
    let coords = sample_coordinates(&reference, batch, min_coords, seed ^ 0x9e37);
    let mut checks = Vec::with_capacity(coords.len());
    for (gi, local) in coords {
        let spec = reference.layout.specs[gi].clone();
        let i = spec.offset + local;
        let orig = reference.params[i];
        reference.params[i] = orig + FD_STEP;
        let plus = reference.batch_loss(batch)?.loss;
        reference.params[i] = orig - FD_STEP;
        let minus = reference.batch_loss(batch)?.loss;
        reference.params[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        checks.push(CoordCheck {
            tensor: spec.name,
            index: local,
            analytic: analytic[i],
            numeric,
            rel_err: relative_error(analytic[i], numeric, floor),
        });
    }
    let mut groups: Vec<&str> = checks.iter().map(|c| c.tensor.as_str()).collect();
    groups.dedup();
    Ok(GradCheckReport {
        max_rel_err: checks.iter().map(|c| c.rel_err).fold(0.0, f64::max),
        groups_covered: groups.len(),
        groups_total: reference.layout.specs.len(),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::Example;
    use bugforge_core::SyntaxClass;

    fn batch() -> TrainingBatch {
        let mut a = Example::unclassified(vec![7, 8, 9, 10, 11], vec![12, 13, 8]);
        a.src_classes[1] = SyntaxClass::Method;
        a.tgt_classes[0] = SyntaxClass::Variable;
        let b = Example::unclassified(vec![14, 15, 7], vec![16, 17, 18, 19]);
        TrainingBatch::new(&[a, b])
    }

    #[test]
    fn tiny_model_agrees_with_differences() {
        for lambda in [0.0, 0.5] {
            let cfg = ModelConfig {
                aux_loss_weight: lambda,
                ..ModelConfig::tiny(24)
            };
            for (precision, tol) in [(Precision::High, 1e-4), (Precision::Standard, 1e-3)] {
                let r = gradient_check(&cfg, &batch(), 11, 200, precision, 1e-6).unwrap();
                assert!(r.checks.len() >= 200);
                assert_eq!(r.groups_covered, r.groups_total);
                assert!(r.max_rel_err < tol, "{lambda} {precision:?}: {:?}", r.worst());
            }
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert_eq!(relative_error(2.0, 1.0, 1e-6), 0.5);
        assert_eq!(relative_error(0.0, 1e-9, 1e-6), 1e-3);
    }
}
