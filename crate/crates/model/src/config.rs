use serde::{Deserialize, Serialize};

use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Encoder and decoder each have this many layers.
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub use_syntax_embeddings: bool,
    /// Weight of the auxiliary token-class loss. Zero removes the head.
    pub aux_loss_weight: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 4,
            model_dim: 256,
            num_heads: 8,
            ffn_dim: 1024,
            vocab_size: 1024,
            max_positions: 512,
            use_syntax_embeddings: true,
            aux_loss_weight: 0.25,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    /// 2+2 layers, d=16.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            model_dim: 16,
            num_heads: 4,
            ffn_dim: 32,
            vocab_size,
            max_positions: 32,
            ..ModelConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn has_aux_head(&self) -> bool {
        self.aux_loss_weight > 0.0
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &str, why: &str| Err(ModelError::Config(format!("{field}: {why}")));
        for (field, v) in [
            ("num_layers", self.num_layers),
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ] {
            if v == 0 {
                return bad(field, "must be positive");
            }
        }
        if self.model_dim % self.num_heads != 0 {
            return bad("num_heads", "must divide model_dim");
        }
        if !(self.aux_loss_weight >= 0.0 && self.aux_loss_weight.is_finite()) {
            return bad("aux_loss_weight", "must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must be in [0, 1)");
        }
        Ok(())
    }
}
