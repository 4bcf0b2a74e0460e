//! Flat parameter buffer and the named tensor layout over it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use bugforge_core::SyntaxClass;

use crate::config::ModelConfig;
use crate::ops::Scalar;
use crate::ModelError;

pub const INIT_STD: f64 = 0.02;
pub const EMBED_STD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Embedding,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub offset: usize,
    #[serde(skip, default = "default_init")]
    pub init: Init,
}

fn default_init() -> Init {
    Init::Zeros
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Matrices get weight decay; biases, norms and embeddings do not.
    pub fn decays(&self) -> bool {
        self.init == Init::Normal
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Lin {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Ln {
    pub g: usize,
    pub b: usize,
    pub d: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Attn {
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
}

#[derive(Debug, Clone, Copy)]
pub struct EncLayer {
    pub ln1: Ln,
    pub attn: Attn,
    pub ln2: Ln,
    pub ff1: Lin,
    pub ff2: Lin,
}

#[derive(Debug, Clone, Copy)]
pub struct DecLayer {
    pub ln1: Ln,
    pub self_attn: Attn,
    pub ln2: Ln,
    pub cross: Attn,
    pub ln3: Ln,
    pub ff1: Lin,
    pub ff2: Lin,
}

/// Offsets of every tensor, in canonical order.
#[derive(Debug, Clone)]
pub struct Layout {
    pub specs: Vec<TensorSpec>,
    pub total: usize,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub syn_emb: Option<usize>,
    pub enc: Vec<EncLayer>,
    pub enc_ln: Ln,
    pub dec: Vec<DecLayer>,
    pub dec_ln: Ln,
    pub out: Lin,
    pub aux: Option<Lin>,
}

struct Builder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let offset = self.total;
        self.total += rows * cols;
        self.specs.push(TensorSpec { name, rows, cols, offset, init });
        offset
    }

    fn lin(&mut self, name: &str, din: usize, dout: usize) -> Lin {
        Lin {
            w: self.push(format!("{name}.w"), din, dout, Init::Normal),
            b: self.push(format!("{name}.b"), 1, dout, Init::Zeros),
            din,
            dout,
        }
    }

    fn ln(&mut self, name: &str, d: usize) -> Ln {
        Ln {
            g: self.push(format!("{name}.g"), 1, d, Init::Ones),
            b: self.push(format!("{name}.b"), 1, d, Init::Zeros),
            d,
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.lin(&format!("{name}.q"), d, d),
            k: self.lin(&format!("{name}.k"), d, d),
            v: self.lin(&format!("{name}.v"), d, d),
            o: self.lin(&format!("{name}.o"), d, d),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let d = c.model_dim;
        let mut b = Builder {
            specs: Vec::new(),
            total: 0,
        };
        let tok_emb = b.push("tok_emb".into(), c.vocab_size, d, Init::Embedding);
        let pos_emb = b.push("pos_emb".into(), c.max_positions, d, Init::Embedding);
        let syn_emb = c
            .use_syntax_embeddings
            .then(|| b.push("syn_emb".into(), SyntaxClass::COUNT, d, Init::Embedding));
        let enc = (0..c.num_layers)
            .map(|l| EncLayer {
                ln1: b.ln(&format!("enc.{l}.ln1"), d),
                attn: b.attn(&format!("enc.{l}.attn"), d),
                ln2: b.ln(&format!("enc.{l}.ln2"), d),
                ff1: b.lin(&format!("enc.{l}.ff1"), d, c.ffn_dim),
                ff2: b.lin(&format!("enc.{l}.ff2"), c.ffn_dim, d),
            })
            .collect();
        let enc_ln = b.ln("enc.ln", d);
        let dec = (0..c.num_layers)
            .map(|l| DecLayer {
                ln1: b.ln(&format!("dec.{l}.ln1"), d),
                self_attn: b.attn(&format!("dec.{l}.self"), d),
                ln2: b.ln(&format!("dec.{l}.ln2"), d),
                cross: b.attn(&format!("dec.{l}.cross"), d),
                ln3: b.ln(&format!("dec.{l}.ln3"), d),
                ff1: b.lin(&format!("dec.{l}.ff1"), d, c.ffn_dim),
                ff2: b.lin(&format!("dec.{l}.ff2"), c.ffn_dim, d),
            })
            .collect();
        let dec_ln = b.ln("dec.ln", d);
        let out = b.lin("out", d, c.vocab_size);
        let aux = c.has_aux_head().then(|| b.lin("aux", d, SyntaxClass::COUNT));
        Layout {
            specs: b.specs,
            total: b.total,
            tok_emb,
            pos_emb,
            syn_emb,
            enc,
            enc_ln,
            dec,
            dec_ln,
            out,
            aux,
        }
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<S>,
}

impl<S: Scalar> Model<S> {
    /// Fresh parameters: N(0, 1) embeddings, N(0, 0.02) matrices, unit norm
    /// gains, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![S::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let embedding = Normal::new(0.0, EMBED_STD).expect("valid std");
        for spec in &layout.specs {
            let slot = &mut params[spec.range()];
            match spec.init {
                Init::Normal => slot.iter_mut().for_each(|v| *v = S::of(normal.sample(&mut rng))),
                Init::Embedding => slot.iter_mut().for_each(|v| *v = S::of(embedding.sample(&mut rng))),
                Init::Ones => slot.fill(S::one()),
                Init::Zeros => {}
            }
        }
        Ok(Model { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<S>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(ModelError::ShapeMismatch(format!(
                "{} parameters, layout needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Model { config, layout, params })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        self.layout.spec(name).map(|s| &self.params[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [S]> {
        let r = self.layout.spec(name)?.range();
        Some(&mut self.params[r])
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|&v| T::of(v.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}
