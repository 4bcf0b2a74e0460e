//! Binary checkpoints: `MAGIC`, a little-endian `u32` header length, a JSON
//! header, then every parameter as little-endian `f32` in layout order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use bugforge_core::SubwordVocabulary;

use crate::config::ModelConfig;
use crate::params::{Layout, Model, TensorSpec, EMBED_STD, INIT_STD};
use crate::ModelError;

pub const MAGIC: &[u8; 8] = b"BFCKPT01";
pub const SCRATCH_TAG: &str = "scratch";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_fingerprint: String,
    vocab_size: usize,
    stage_tag: String,
    tensors: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Fingerprint of the vocabulary the embedding rows index.
    pub vocab_fingerprint: String,
    /// `scratch`, or the stages applied so far joined by `+`.
    pub stage_tag: String,
    pub params: Vec<f32>,
}

/// Appends `stage` to `tag`. Consecutive `stageX` tags collapse to
/// `stageA+B`.
pub fn compose_tag(tag: &str, stage: &str) -> String {
    if tag.is_empty() || tag == SCRATCH_TAG {
        return stage.to_string();
    }
    let mut parts = tag.split('+');
    let chain = parts.next().is_some_and(|p| p.starts_with("stage"))
        && parts.all(|p| p.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()));
    if let Some(rest) = stage.strip_prefix("stage").filter(|r| chain && !r.is_empty()) {
        return format!("{tag}+{rest}");
    }
    format!("{tag}+{stage}")
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, vocab_fingerprint: &str, stage_tag: &str) -> Self {
        Checkpoint {
            config: model.config.clone(),
            vocab_fingerprint: vocab_fingerprint.to_string(),
            stage_tag: stage_tag.to_string(),
            params: model.params.clone(),
        }
    }

    pub fn model(&self) -> Result<Model<f32>, ModelError> {
        Model::from_params(self.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            vocab_size: self.config.vocab_size,
            stage_tag: self.stage_tag.clone(),
            tensors: Layout::new(&self.config).specs,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::BadCheckpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        if header.vocab_size != header.config.vocab_size {
            return Err(bad("vocab_size disagrees with config"));
        }
        let expected: Vec<(&str, usize, usize)> =
            layout.specs.iter().map(|s| (s.name.as_str(), s.rows, s.cols)).collect();
        let found: Vec<(&str, usize, usize)> =
            header.tensors.iter().map(|s| (s.name.as_str(), s.rows, s.cols)).collect();
        if expected != found {
            return Err(bad("tensor table does not match the config"));
        }
        let data = &bytes[12 + hlen..];
        if data.len() != 4 * layout.total {
            return Err(bad(&format!("{} parameter bytes, expected {}", data.len(), 4 * layout.total)));
        }
        let params = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(Checkpoint {
            config: header.config,
            vocab_fingerprint: header.vocab_fingerprint,
            stage_tag: header.stage_tag,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Model for `vocab`. The checkpoint's vocabulary must be a prefix of
    /// `vocab`; rows for appended tokens are freshly initialized and every
    /// existing parameter is kept as is.
    pub fn warm_start(&self, vocab: &SubwordVocabulary, seed: u64) -> Result<Model<f32>, ModelError> {
        let old_v = self.config.vocab_size;
        let new_v = vocab.len();
        if new_v < old_v || vocab.fingerprint_prefix(old_v) != self.vocab_fingerprint {
            return Err(ModelError::VocabMismatch(format!(
                "checkpoint vocabulary ({old_v} tokens) is not a prefix of the {new_v}-token vocabulary"
            )));
        }
        let old = self.model()?;
        if new_v == old_v {
            return Ok(old);
        }
        let config = ModelConfig {
            vocab_size: new_v,
            ..self.config.clone()
        };
        let mut model = Model::<f32>::new(config, seed)?;
        let d = self.config.model_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let emb = Normal::new(0.0, EMBED_STD).expect("valid std");
        let lin = Normal::new(0.0, INIT_STD).expect("valid std");
        for spec in &old.layout.specs {
            let src = &old.params[spec.range()];
            let dst_range = model.layout.spec(&spec.name).expect("same tensor names").range();
            let dst = &mut model.params[dst_range];
            match spec.name.as_str() {
                "tok_emb" => {
                    dst[..src.len()].copy_from_slice(src);
                    dst[src.len()..].iter_mut().for_each(|v| *v = emb.sample(&mut rng) as f32);
                }
                "out.w" => {
                    for r in 0..d {
                        let row = &mut dst[r * new_v..(r + 1) * new_v];
                        row[..old_v].copy_from_slice(&src[r * old_v..(r + 1) * old_v]);
                        row[old_v..].iter_mut().for_each(|v| *v = lin.sample(&mut rng) as f32);
                    }
                }
                "out.b" => {
                    dst[..old_v].copy_from_slice(src);
                    dst[old_v..].fill(0.0);
                }
                _ => dst.copy_from_slice(src),
            }
        }
        Ok(model)
    }
}
