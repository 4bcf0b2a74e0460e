//! Staged training: each stage runs AdamW over shuffled mini-batches of its
//! own examples, continuing from the previous stage's parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::compose_tag;
use crate::loss::LossParts;
use crate::optim::{learning_rate, AdamW, OptimConfig};
use crate::params::Model;
use crate::transformer::{Example, TrainingBatch};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Reconstruct masked spans.
    Denoise,
    /// Buggy method to fixed method.
    Repair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    /// Appended to the checkpoint tag, e.g. `stageA` or `finetuned`.
    pub tag: String,
    pub objective: Objective,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optim: OptimConfig,
}

pub struct Stage<'a> {
    pub spec: StageSpec,
    pub examples: &'a [Example],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// 1-based across all stages.
    pub step: usize,
    pub stage: String,
    pub loss: f64,
    pub nll: f64,
    pub aux_ce: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "step,stage,loss,nll,aux_ce,lr";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.stage, r.loss, r.nll, r.aux_ce, r.lr));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub step: usize,
    pub stage_index: usize,
    pub stage_step: usize,
    pub parts: LossParts,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub tag: String,
    pub metrics: Vec<MetricRow>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Cycles through a seeded permutation, reshuffling each epoch.
struct Batcher {
    order: Vec<usize>,
    at: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Batcher { order, at: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.at == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.at = 0;
            }
            out.push(self.order[self.at]);
            self.at += 1;
        }
        out
    }
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed ^ ((stage as u64 + 1) << 32)
}

/// Runs `stages` in order on `model`. `on_step` sees every step after the
/// update and may stop training. A stage with zero steps leaves the model
/// and the tag untouched.
pub fn train(
    model: &mut Model<f32>,
    start_tag: &str,
    stages: &[Stage<'_>],
    seed: u64,
    mut on_step: impl FnMut(&StepInfo, &Model<f32>) -> Control,
) -> Result<TrainOutcome, ModelError> {
    let mut outcome = TrainOutcome {
        tag: start_tag.to_string(),
        metrics: Vec::new(),
        steps: 0,
        stopped_early: false,
    };
    for (si, stage) in stages.iter().enumerate() {
        let spec = &stage.spec;
        if spec.steps == 0 {
            continue;
        }
        if stage.examples.is_empty() || spec.batch_size == 0 {
            return Err(ModelError::Config(format!("stage {} has no examples or a zero batch size", spec.tag)));
        }
        let mut batcher = Batcher::new(stage.examples.len(), stage_seed(seed, si));
        let mut drop_rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, si) ^ 0xd20f);
        let mut opt = AdamW::new(spec.optim.clone(), &model.layout);
        outcome.tag = compose_tag(&outcome.tag, &spec.tag);
        for s in 1..=spec.steps {
            let picked: Vec<Example> = batcher.next(spec.batch_size).into_iter().map(|i| stage.examples[i].clone()).collect();
            let batch = TrainingBatch::new(&picked);
            let (parts, mut grads) = model.loss_and_grads(&batch, Some(&mut drop_rng))?;
            outcome.steps += 1;
            if !parts.loss.is_finite() {
                return Err(ModelError::Diverged {
                    step: outcome.steps,
                    loss: parts.loss,
                });
            }
            let grad_norm = opt.clip(&mut grads);
            let lr = learning_rate(&spec.optim, s, spec.steps);
            opt.step(&mut model.params, &grads, lr);
            if !model.all_finite() {
                return Err(ModelError::Diverged {
                    step: outcome.steps,
                    loss: f64::NAN,
                });
            }
            outcome.metrics.push(MetricRow {
                step: outcome.steps,
                stage: spec.tag.clone(),
                loss: parts.loss,
                nll: parts.nll,
                aux_ce: parts.aux_ce,
                lr,
            });
            let info = StepInfo {
                step: outcome.steps,
                stage_index: si,
                stage_step: s,
                parts,
                lr,
                grad_norm,
            };
            if on_step(&info, model) == Control::Stop {
                outcome.stopped_early = true;
                return Ok(outcome);
            }
        }
        log::info!("stage {} finished after {} steps", spec.tag, spec.steps);
    }
    Ok(outcome)
}
