//! The pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bugforge_core::FilterRules;
use bugforge_model::train::Objective;
use bugforge_model::{ModelConfig, OptimConfig, StageSpec};

use crate::error::CliError;

pub const SEED_ENV: &str = "BUGFORGE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub corpus: FilterRules,
    #[serde(default)]
    pub abstraction: AbstractionSettings,
    #[serde(default)]
    pub tokenizer: TokenizerSettings,
    #[serde(default)]
    pub masking: MaskingSettings,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

fn default_seed() -> u64 {
    17
}

/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Source tree for pretraining; the first path component is the repository.
    pub corpus_in: PathBuf,
    /// Commit history JSONL for mining repair pairs.
    pub commits: PathBuf,
    pub work_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Concrete,
    Abstract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbstractionSettings {
    pub idiom_budget: usize,
    /// Which side of the pair datasets the model reads and writes.
    pub mode: Representation,
}

impl Default for AbstractionSettings {
    fn default() -> Self {
        AbstractionSettings {
            idiom_budget: 500,
            mode: Representation::Concrete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSettings {
    /// Merges learned on method text.
    pub num_merges: usize,
    /// Merges learned on raw source files; only whitespace ones are kept.
    pub raw_merges: usize,
    pub extend_whitespace: bool,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        TokenizerSettings {
            num_merges: 700,
            raw_merges: 300,
            extend_whitespace: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingSettings {
    pub fraction: f64,
    pub span_len: usize,
    /// Subword window cut from each method before masking.
    pub window: usize,
}

impl Default for MaskingSettings {
    fn default() -> Self {
        MaskingSettings {
            fraction: bugforge_core::noising::DEFAULT_FRACTION,
            span_len: bugforge_core::noising::DEFAULT_SPAN_LEN,
            window: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub stages: Vec<StageSpec>,
    /// Start from this checkpoint instead of scratch.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            stages: vec![
                StageSpec {
                    tag: "stageA".into(),
                    objective: Objective::Denoise,
                    steps: 1000,
                    batch_size: 16,
                    optim: OptimConfig::default(),
                },
                StageSpec {
                    tag: "finetuned".into(),
                    objective: Objective::Repair,
                    steps: 2000,
                    batch_size: 16,
                    optim: OptimConfig::default(),
                },
            ],
            init_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Share of pairs held out for predict/eval. Zero evaluates on every pair.
    pub test_fraction: f64,
    pub beam_width: usize,
    /// Subword limit per decoded candidate.
    pub max_len: usize,
    pub length_penalty: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            test_fraction: 0.1,
            beam_width: 5,
            max_len: 256,
            length_penalty: 1.0,
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Writes `value` at the dotted `key` path, creating tables as needed.
fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| config_err(key, "path crosses a non-table value"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(config_err(key, "empty key"))
}

/// Parses `raw` as a TOML value, falling back to a plain string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl PipelineConfig {
    /// Parses `text`, applies `key=value` overrides, then validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| config_err("<file>", e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| config_err(o, "override must look like key=value"))?;
            set_path(&mut value, k.trim(), override_value(v.trim()))?;
        }
        let cfg: PipelineConfig = value.try_into().map_err(|e: toml::de::Error| config_err("<file>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads from disk, resolving relative paths and applying the seed
    /// environment override.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err("<file>", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.corpus_in, &mut cfg.paths.commits, &mut cfg.paths.work_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.train.init_checkpoint.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
        if let Ok(raw) = std::env::var(SEED_ENV) {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| config_err(SEED_ENV, format!("not an unsigned integer: {raw:?}")))?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let r = &self.corpus;
        if !(0.0..=1.0).contains(&r.max_literal_fraction) {
            return Err(config_err("corpus.max_literal_fraction", "must be in [0, 1]"));
        }
        if r.max_line_length == 0 || r.max_file_bytes == 0 {
            return Err(config_err("corpus.max_line_length", "limits must be positive"));
        }
        if self.abstraction.idiom_budget == 0 {
            return Err(config_err("abstraction.idiom_budget", "must be positive"));
        }
        let m = &self.masking;
        if !(m.fraction > 0.0 && m.fraction < 1.0) {
            return Err(config_err("masking.fraction", "must be in (0, 1)"));
        }
        if m.span_len == 0 {
            return Err(config_err("masking.span_len", "must be positive"));
        }
        if m.window < m.span_len || m.window > self.model.max_positions {
            return Err(config_err("masking.window", "must be between span_len and model.max_positions"));
        }
        self.model.validate().map_err(|e| config_err("model", e.to_string()))?;
        for (i, s) in self.train.stages.iter().enumerate() {
            let field = |f: &str| format!("train.stages[{i}].{f}");
            if s.tag.is_empty() || s.tag.contains('+') {
                return Err(config_err(&field("tag"), "must be non-empty and contain no '+'"));
            }
            if s.steps > 0 && s.batch_size == 0 {
                return Err(config_err(&field("batch_size"), "must be positive"));
            }
            let o = &s.optim;
            if !(o.lr > 0.0 && o.lr.is_finite()) {
                return Err(config_err(&field("optim.lr"), "must be positive"));
            }
            if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
                return Err(config_err(&field("optim"), "betas must be in [0, 1)"));
            }
            if !(0.0..=1.0).contains(&o.warmup_fraction) || o.eps <= 0.0 || o.weight_decay < 0.0 || o.clip_norm < 0.0 {
                return Err(config_err(&field("optim"), "warmup_fraction, eps, weight_decay or clip_norm out of range"));
            }
        }
        let e = &self.eval;
        if !(0.0..1.0).contains(&e.test_fraction) {
            return Err(config_err("eval.test_fraction", "must be in [0, 1)"));
        }
        if e.beam_width == 0 || e.max_len == 0 {
            return Err(config_err("eval.beam_width", "beam_width and max_len must be positive"));
        }
        if !e.length_penalty.is_finite() || e.length_penalty < 0.0 {
            return Err(config_err("eval.length_penalty", "must be finite and non-negative"));
        }
        Ok(())
    }
}
