//! Pipeline stages. Each reads its inputs from the work directory, writes
//! its outputs there and records a stage manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use bugforge_core::abstraction::{deabstract, mine_idioms};
use bugforge_core::corpus::{mine_pairs, process_corpus, read_commits_jsonl, read_source_tree};
use bugforge_core::dataset::{read_jsonl, token_texts, write_jsonl, MethodRecord, PairRecord, PredictionRecord, PretrainRecord, TokenRecord};
use bugforge_core::eval::{evaluate_run, EvalExample};
use bugforge_core::noising::{example_seed, input_shrink_ratio, mask_batch};
use bugforge_core::syntax::{extract_methods_batch, render};
use bugforge_core::tokenizer::{compression_gain, extend_with_whitespace, train_bpe, MASK_ID};
use bugforge_core::{dataset, par, CorpusManifest, EvalReport, MethodUnit, SubwordVocabulary, SyntaxClass};
use bugforge_model::checkpoint::SCRATCH_TAG;
use bugforge_model::data::{decode_lexemes, denoise_example, encode_lexemes, fits, repair_example};
use bugforge_model::train::{metrics_csv, train, Control, Objective, Stage};
use bugforge_model::{Checkpoint, Example, Model, ModelConfig, ModelError};

use crate::config::{PipelineConfig, Representation};
use crate::error::CliError;
use crate::manifest::{sha256_hex, StageRun};

pub const STAGES: [&str; 9] = ["ingest", "extract", "abstract", "tok-train", "noise", "train", "predict", "eval", "report"];

/// Work-directory layout.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Layout {
            root: cfg.paths.work_dir.clone(),
        }
    }
    pub fn corpus_manifest(&self) -> PathBuf {
        self.root.join("corpus/manifest.json")
    }
    pub fn clean_dir(&self) -> PathBuf {
        self.root.join("corpus/clean")
    }
    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs.jsonl")
    }
    pub fn methods(&self) -> PathBuf {
        self.root.join("methods.jsonl")
    }
    pub fn idioms(&self) -> PathBuf {
        self.root.join("idioms.txt")
    }
    pub fn abstract_pairs(&self) -> PathBuf {
        self.root.join("pairs.abstract.jsonl")
    }
    pub fn vocab_json(&self) -> PathBuf {
        self.root.join("tokenizer/vocab.json")
    }
    pub fn merges_txt(&self) -> PathBuf {
        self.root.join("tokenizer/merges.txt")
    }
    pub fn tokenizer_stats(&self) -> PathBuf {
        self.root.join("tokenizer/stats.json")
    }
    pub fn pretrain(&self) -> PathBuf {
        self.root.join("pretrain.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

fn require(stage: &'static str, path: &Path, needs: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::StageInputMissing {
            stage,
            path: path.to_path_buf(),
            needs,
        }
        .into())
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Runs `body` unless the stage is up to date (or `force` is set), then
/// records the manifest.
fn run_stage(run: StageRun, force: bool, body: impl FnOnce() -> Result<()>) -> Result<StageStatus> {
    if !force && run.up_to_date()? {
        log::info!("{}: up to date", run.stage);
        return Ok(StageStatus::UpToDate);
    }
    body()?;
    run.record()?;
    log::info!("{}: done", run.stage);
    Ok(StageStatus::Ran)
}

/// Deterministic held-out split keyed on the pair id.
pub fn in_test_split(id: &str, seed: u64, fraction: f64) -> bool {
    if fraction <= 0.0 {
        return false;
    }
    let digest = sha256_hex(format!("{seed}:{id}").as_bytes());
    let x = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
    (x as f64 / u64::MAX as f64) < fraction
}

fn pairs_path(cfg: &PipelineConfig, layout: &Layout) -> (PathBuf, &'static str) {
    match cfg.abstraction.mode {
        Representation::Concrete => (layout.pairs(), "extract"),
        Representation::Abstract => (layout.abstract_pairs(), "abstract"),
    }
}

/// The two sides of a pair in the configured representation. Abstract
/// tokens keep the class of the concrete token they replace.
pub fn pair_sides(pair: &PairRecord, mode: Representation) -> Result<(Vec<TokenRecord>, Vec<TokenRecord>)> {
    match mode {
        Representation::Concrete => Ok((pair.buggy_tokens.clone(), pair.fixed_tokens.clone())),
        Representation::Abstract => {
            let (Some(b), Some(f)) = (&pair.abstract_buggy, &pair.abstract_fixed) else {
                return Err(CliError::Data(format!("pair {} has no abstract form", pair.id)).into());
            };
            let side = |texts: &[String], conc: &[TokenRecord]| -> Vec<TokenRecord> {
                texts
                    .iter()
                    .enumerate()
                    .map(|(i, t)| TokenRecord {
                        text: t.clone(),
                        class: conc.get(i).map_or(SyntaxClass::Other, |c| c.class),
                    })
                    .collect()
            };
            Ok((side(b, &pair.buggy_tokens), side(f, &pair.fixed_tokens)))
        }
    }
}

fn load_vocab(layout: &Layout) -> Result<SubwordVocabulary> {
    require("tokenizer", &layout.vocab_json(), "tok-train")?;
    let v = SubwordVocabulary::from_files(&read(&layout.vocab_json())?, &read(&layout.merges_txt())?)
        .context("loading the tokenizer")?;
    Ok(v)
}

fn split_pairs(cfg: &PipelineConfig, pairs: Vec<PairRecord>, test: bool) -> Vec<PairRecord> {
    pairs
        .into_iter()
        .filter(|p| cfg.eval.test_fraction <= 0.0 || in_test_split(&p.id, cfg.seed, cfg.eval.test_fraction) == test)
        .collect()
}

pub fn ingest(cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    let layout = Layout::new(cfg);
    require("ingest", &cfg.paths.corpus_in, "synth")?;
    let run = StageRun::new("ingest", &layout.root, &cfg.corpus)
        .input("corpus_in", cfg.paths.corpus_in.clone())
        .output("manifest", layout.corpus_manifest())
        .output("clean", layout.clean_dir());
    run_stage(run, force, || {
        let files = read_source_tree(&cfg.paths.corpus_in)?;
        let (manifest, cleaned) = process_corpus(files, &cfg.corpus);
        let clean = layout.clean_dir();
        if clean.exists() {
            fs::remove_dir_all(&clean)?;
        }
        for f in &cleaned {
            write(&clean.join(&f.path), &f.text)?;
        }
        write(&layout.corpus_manifest(), serde_json::to_string_pretty(&manifest)? + "\n")?;
        log::info!("ingest: {} accepted, {} rejected", manifest.files.len(), manifest.rejected.len());
        Ok(())
    })
}

fn cleaned_sources(layout: &Layout) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for f in read_source_tree(&layout.clean_dir())? {
        let text = String::from_utf8(f.content).map_err(|_| CliError::Data(format!("{} is not UTF-8", f.path)))?;
        out.push((f.path, text));
    }
    Ok(out)
}

pub fn extract(cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    let layout = Layout::new(cfg);
    require("extract", &cfg.paths.commits, "synth")?;
    require("extract", &layout.clean_dir(), "ingest")?;
    let run = StageRun::new("extract", &layout.root, &())
        .input("commits", cfg.paths.commits.clone())
        .input("clean", layout.clean_dir())
        .output("pairs", layout.pairs())
        .output("methods", layout.methods());
    run_stage(run, force, || {
        let commits = read_commits_jsonl(&read(&cfg.paths.commits)?)?;
        let pairs: Vec<PairRecord> = mine_pairs(&commits).iter().map(PairRecord::from_method_pair).collect();
        write(&layout.pairs(), write_jsonl(&pairs))?;

        let sources: Vec<(String, String)> =
            cleaned_sources(&layout)?.into_iter().filter(|(p, _)| p.ends_with(".java")).collect();
        let texts: Vec<&str> = sources.iter().map(|(_, t)| t.as_str()).collect();
        let mut methods = Vec::new();
        for ((path, _), parsed) in sources.iter().zip(extract_methods_batch(&texts)) {
            let units = match parsed {
                Ok(u) => u,
                Err(e) => {
                    log::warn!("extract: skipping {path}: {e}");
                    continue;
                }
            };
            let mut seen: HashMap<&str, usize> = HashMap::new();
            for u in &units {
                let n = seen.entry(u.qualified_name.as_str()).or_default();
                *n += 1;
                let id = if *n == 1 {
                    format!("{path}:{}", u.qualified_name)
                } else {
                    format!("{path}:{}#{n}", u.qualified_name)
                };
                methods.push(MethodRecord::from_unit(id, u));
            }
        }
        write(&layout.methods(), write_jsonl(&methods))?;
        log::info!("extract: {} pairs, {} methods", pairs.len(), methods.len());
        Ok(())
    })
}

fn units(tokens: &[TokenRecord], id: &str) -> MethodUnit {
    MethodUnit::new(id.to_string(), id.to_string(), tokens.iter().map(TokenRecord::to_classified).collect())
}

pub fn abstract_stage(cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    let layout = Layout::new(cfg);
    require("abstract", &layout.pairs(), "extract")?;
    let run = StageRun::new("abstract", &layout.root, &cfg.abstraction.idiom_budget)
        .input("pairs", layout.pairs())
        .input("methods", layout.methods())
        .output("idioms", layout.idioms())
        .output("abstract_pairs", layout.abstract_pairs());
    run_stage(run, force, || {
        let methods: Vec<MethodRecord> = read_records(&layout.methods())?;
        let mut pairs: Vec<PairRecord> = read_records(&layout.pairs())?;
        let mut corpus: Vec<MethodUnit> = methods.iter().map(|m| units(&m.tokens, &m.id)).collect();
        corpus.extend(pairs.iter().map(|p| units(&p.buggy_tokens, &p.id)));
        let idioms = mine_idioms(&corpus, cfg.abstraction.idiom_budget)?;
        let mut kept = Vec::with_capacity(pairs.len());
        for mut p in pairs.drain(..) {
            match p.abstract_with(&idioms) {
                Ok(()) => kept.push(p),
                Err(e) => log::warn!("abstract: dropping {}: {e}", p.id),
            }
        }
        write(&layout.idioms(), idioms.to_text())?;
        write(&layout.abstract_pairs(), write_jsonl(&kept))?;
        log::info!("abstract: {} idioms, {} pairs", idioms.len(), kept.len());
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerStats {
    pub base_size: usize,
    pub size: usize,
    pub fingerprint: String,
    /// Raw-corpus tokens under the base vocabulary over tokens under the
    /// extended one.
    pub whitespace_gain: f64,
}

pub fn tok_train(cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    let layout = Layout::new(cfg);
    let (pairs_file, needs) = pairs_path(cfg, &layout);
    require("tok-train", &pairs_file, needs)?;
    require("tok-train", &layout.methods(), "extract")?;
    let run = StageRun::new("tok-train", &layout.root, &(&cfg.tokenizer, cfg.abstraction.mode))
        .input("pairs", pairs_file.clone())
        .input("methods", layout.methods())
        .input("clean", layout.clean_dir())
        .output("vocab", layout.vocab_json())
        .output("merges", layout.merges_txt())
        .output("stats", layout.tokenizer_stats());
    run_stage(run, force, || {
        let methods: Vec<MethodRecord> = read_records(&layout.methods())?;
        let pairs: Vec<PairRecord> = read_records(&pairs_file)?;
        let mut texts: Vec<String> = methods.iter().map(|m| render(&token_texts(&m.tokens))).collect();
        for p in &pairs {
            let (b, f) = pair_sides(p, cfg.abstraction.mode)?;
            texts.push(render(&token_texts(&b)));
            texts.push(render(&token_texts(&f)));
        }
        let base = SubwordVocabulary::from_merges(train_bpe(&texts, cfg.tokenizer.num_merges)?)?;
        let raw: Vec<String> = cleaned_sources(&layout)?.into_iter().map(|(_, t)| t).collect();
        let (vocab, gain) = if cfg.tokenizer.extend_whitespace && !raw.is_empty() {
            let learned = train_bpe(&raw, cfg.tokenizer.raw_merges)?;
            let extended = extend_with_whitespace(&base, &learned);
            let gain = compression_gain(&raw, &base, &extended)?;
            (extended, gain)
        } else {
            (base.clone(), 1.0)
        };
        let (vocab_json, merges_txt) = vocab.to_files();
        write(&layout.vocab_json(), vocab_json)?;
        write(&layout.merges_txt(), merges_txt)?;
        let stats = TokenizerStats {
            base_size: base.len(),
            size: vocab.len(),
            fingerprint: vocab.fingerprint(),
            whitespace_gain: gain,
        };
        write(&layout.tokenizer_stats(), serde_json::to_string_pretty(&stats)? + "\n")?;
        log::info!("tok-train: {} tokens ({} before whitespace extension)", vocab.len(), base.len());
        Ok(())
    })
}

pub fn noise(cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    let layout = Layout::new(cfg);
    require("noise", &layout.methods(), "extract")?;
    let vocab = load_vocab(&layout)?;
    let run = StageRun::new("noise", &layout.root, &(&cfg.masking, cfg.seed))
        .input("methods", layout.methods())
        .input("vocab", layout.vocab_json())
        .input("merges", layout.merges_txt())
        .output("pretrain", layout.pretrain());
    run_stage(run, force, || {
        let methods: Vec<MethodRecord> = read_records(&layout.methods())?;
        let m = &cfg.masking;
        let encoded = par::map(&methods, |r| encode_lexemes(&vocab, &r.tokens).0);
        let windows: Vec<Vec<u32>> = encoded
            .iter()
            .flat_map(|ids| ids.chunks(m.window))
            .filter(|w| w.len() >= m.span_len)
            .map(<[u32]>::to_vec)
            .collect();
        let mut records = Vec::with_capacity(windows.len());
        for (i, r) in mask_batch(&windows, m.fraction, m.span_len, cfg.seed, &MASK_ID).into_iter().enumerate() {
            match r {
                Ok(pair) if !pair.target.is_empty() => records.push(PretrainRecord {
                    input_ids: pair.input,
                    target_ids: pair.target,
                    seed: example_seed(cfg.seed, i),
                }),
                Ok(_) => {}
                Err(e) => log::debug!("noise: window {i} skipped: {e}"),
            }
        }
        write(&layout.pretrain(), write_jsonl(&records))?;
        log::info!("noise: {} pretraining examples", records.len());
        Ok(())
    })
}

/// Repair examples for the training split, skipping any that exceed the
/// model's limits.
pub fn repair_examples(
    cfg: &PipelineConfig,
    vocab: &SubwordVocabulary,
    pairs: &[PairRecord],
    model: &ModelConfig,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for p in pairs {
        let (b, f) = pair_sides(p, cfg.abstraction.mode)?;
        let ex = repair_example(vocab, &b, &f);
        if fits(&ex, model.vocab_size, model.max_positions) {
            out.push(ex);
        } else {
            log::debug!("train: {} exceeds the model limits", p.id);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct TrainSettingsDigest<'a> {
    seed: u64,
    model: &'a ModelConfig,
    train: &'a crate::config::TrainSettings,
    mode: Representation,
    test_fraction: f64,
}

pub fn train_stage(cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    let layout = Layout::new(cfg);
    let (pairs_file, needs) = pairs_path(cfg, &layout);
    let uses = |o: Objective| cfg.train.stages.iter().any(|s| s.objective == o && s.steps > 0);
    let mut run = StageRun::new(
        "train",
        &layout.root,
        &TrainSettingsDigest {
            seed: cfg.seed,
            model: &cfg.model,
            train: &cfg.train,
            mode: cfg.abstraction.mode,
            test_fraction: cfg.eval.test_fraction,
        },
    )
    .input("vocab", layout.vocab_json())
    .input("merges", layout.merges_txt());
    if uses(Objective::Denoise) {
        require("train", &layout.pretrain(), "noise")?;
        run = run.input("pretrain", layout.pretrain());
    }
    if uses(Objective::Repair) {
        require("train", &pairs_file, needs)?;
        run = run.input("pairs", pairs_file.clone());
    }
    if let Some(init) = &cfg.train.init_checkpoint {
        require("train", init, "train")?;
        run = run.input("init_checkpoint", init.clone());
    }
    let run = run.output("checkpoint", layout.checkpoint()).output("metrics", layout.metrics());
    run_stage(run, force, || {
        let vocab = load_vocab(&layout)?;
        let (mut model, tag) = match &cfg.train.init_checkpoint {
            Some(path) => {
                let ck = Checkpoint::load(path)?;
                (ck.warm_start(&vocab, cfg.seed)?, ck.stage_tag.clone())
            }
            None => {
                let config = ModelConfig {
                    vocab_size: vocab.len(),
                    ..cfg.model.clone()
                };
                (Model::<f32>::new(config, cfg.seed)?, SCRATCH_TAG.to_string())
            }
        };
        let denoise: Vec<Example> = if uses(Objective::Denoise) {
            read_records::<PretrainRecord>(&layout.pretrain())?
                .iter()
                .map(denoise_example)
                .filter(|e| fits(e, model.config.vocab_size, model.config.max_positions))
                .collect()
        } else {
            Vec::new()
        };
        let repair: Vec<Example> = if uses(Objective::Repair) {
            let pairs = split_pairs(cfg, read_records(&pairs_file)?, false);
            repair_examples(cfg, &vocab, &pairs, &model.config)?
        } else {
            Vec::new()
        };
        for (o, data) in [(Objective::Denoise, &denoise), (Objective::Repair, &repair)] {
            if uses(o) && data.is_empty() {
                return Err(CliError::Data(format!("no usable {o:?} examples for training")).into());
            }
        }
        let stages: Vec<Stage<'_>> = cfg
            .train
            .stages
            .iter()
            .map(|s| Stage {
                spec: s.clone(),
                examples: match s.objective {
                    Objective::Denoise => &denoise,
                    Objective::Repair => &repair,
                },
            })
            .collect();
        let outcome = train(&mut model, &tag, &stages, cfg.seed, |info, _| {
            if info.stage_step % 50 == 0 {
                log::info!("train: step {} loss {:.4} lr {:.2e}", info.step, info.parts.loss, info.lr);
            }
            Control::Continue
        })?;
        Checkpoint::from_model(&model, &vocab.fingerprint(), &outcome.tag).save(&layout.checkpoint())?;
        write(&layout.metrics(), metrics_csv(&outcome.metrics))?;
        log::info!("train: {} steps, tag {}", outcome.steps, outcome.tag);
        Ok(())
    })
}

/// Beam-decodes one source side into lexemes, best first.
pub fn predict_one(
    model: &Model<f32>,
    vocab: &SubwordVocabulary,
    source: &[TokenRecord],
    cfg: &crate::config::EvalSettings,
) -> Result<Vec<dataset::Candidate>, ModelError> {
    let (ids, classes) = encode_lexemes(vocab, source);
    let found = model.beam_decode(&ids, &classes, cfg.beam_width, cfg.max_len, cfg.length_penalty)?;
    Ok(found
        .into_iter()
        .map(|c| dataset::Candidate {
            tokens: decode_lexemes(vocab, &c.tokens),
            score: c.score,
            finished: c.finished,
        })
        .collect())
}

pub fn predict(cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    let layout = Layout::new(cfg);
    let (pairs_file, needs) = pairs_path(cfg, &layout);
    require("predict", &layout.checkpoint(), "train")?;
    require("predict", &pairs_file, needs)?;
    let settings = (&cfg.eval, cfg.abstraction.mode, cfg.seed);
    let run = StageRun::new("predict", &layout.root, &settings)
        .input("checkpoint", layout.checkpoint())
        .input("vocab", layout.vocab_json())
        .input("merges", layout.merges_txt())
        .input("pairs", pairs_file.clone())
        .output("predictions", layout.predictions());
    run_stage(run, force, || {
        let vocab = load_vocab(&layout)?;
        let ck = Checkpoint::load(&layout.checkpoint())?;
        if ck.vocab_fingerprint != vocab.fingerprint() {
            return Err(ModelError::VocabMismatch("checkpoint was trained with a different tokenizer".into()).into());
        }
        let model = ck.model()?;
        let pairs = split_pairs(cfg, read_records(&pairs_file)?, true);
        let sources: Vec<(String, Vec<TokenRecord>)> = pairs
            .iter()
            .map(|p| Ok((p.id.clone(), pair_sides(p, cfg.abstraction.mode)?.0)))
            .collect::<Result<_>>()?;
        let decoded = par::map(&sources, |(id, src)| (id.clone(), predict_one(&model, &vocab, src, &cfg.eval)));
        let mut records = Vec::with_capacity(decoded.len());
        for (id, r) in decoded {
            match r {
                Ok(cands) => records.push(PredictionRecord {
                    id,
                    tokens: cands.first().map(|c| c.tokens.clone()).unwrap_or_default(),
                    candidates: Some(cands),
                }),
                Err(e @ (ModelError::PositionOverflow { .. } | ModelError::TokenOutOfRange { .. })) => {
                    log::warn!("predict: no prediction for {id}: {e}");
                }
                Err(e) => return Err(e.into()),
            }
        }
        write(&layout.predictions(), write_jsonl(&records))?;
        log::info!("predict: {} predictions", records.len());
        Ok(())
    })
}

/// Top-1 predictions in concrete form. Abstract predictions with a
/// placeholder outside the pair's map are dropped, which scores them as
/// misses.
pub fn concrete_predictions(
    predictions: &[PredictionRecord],
    pairs: &[PairRecord],
    mode: Representation,
) -> HashMap<String, Vec<String>> {
    let maps: HashMap<&str, &PairRecord> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut out = HashMap::new();
    for pred in predictions {
        let tokens = match mode {
            Representation::Concrete => Some(pred.tokens.clone()),
            Representation::Abstract => maps
                .get(pred.id.as_str())
                .and_then(|p| p.abstraction_map.as_ref())
                .and_then(|m| deabstract(&pred.tokens, m).ok()),
        };
        if let Some(t) = tokens {
            out.insert(pred.id.clone(), t);
        }
    }
    out
}

pub fn eval(cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    let layout = Layout::new(cfg);
    let (pairs_file, needs) = pairs_path(cfg, &layout);
    require("eval", &layout.predictions(), "predict")?;
    require("eval", &pairs_file, needs)?;
    let settings = (cfg.abstraction.mode, cfg.eval.test_fraction, cfg.seed);
    let run = StageRun::new("eval", &layout.root, &settings)
        .input("predictions", layout.predictions())
        .input("pairs", pairs_file.clone())
        .output("report_json", layout.report_json())
        .output("report_txt", layout.report_txt());
    run_stage(run, force, || {
        let predictions: Vec<PredictionRecord> = read_records(&layout.predictions())?;
        let pairs = split_pairs(cfg, read_records(&pairs_file)?, true);
        let examples: Vec<EvalExample> = pairs.iter().map(PairRecord::eval_example).collect();
        let report = evaluate_run(&concrete_predictions(&predictions, &pairs, cfg.abstraction.mode), &examples);
        if !report.partition_holds() {
            return Err(CliError::Data("fix counts do not partition".into()).into());
        }
        write(&layout.report_json(), serde_json::to_string_pretty(&report)? + "\n")?;
        write(&layout.report_txt(), report.render_table())?;
        Ok(())
    })
}

/// Last (step, loss) of each stage, in stage order.
fn final_losses(metrics_csv: &str) -> Vec<(String, usize, String)> {
    let mut last: Vec<(String, usize, String)> = Vec::new();
    for line in metrics_csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if let [step, stage, loss, ..] = cols[..] {
            let row = (stage.to_string(), step.parse().unwrap_or(0), loss.to_string());
            match last.last_mut() {
                Some(prev) if prev.0 == stage => *prev = row,
                _ => last.push(row),
            }
        }
    }
    last
}

pub fn report(cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    let layout = Layout::new(cfg);
    for (p, needs) in [
        (layout.corpus_manifest(), "ingest"),
        (layout.tokenizer_stats(), "tok-train"),
        (layout.metrics(), "train"),
        (layout.report_json(), "eval"),
    ] {
        require("report", &p, needs)?;
    }
    let mut run = StageRun::new("report", &layout.root, &cfg.masking)
        .input("manifest", layout.corpus_manifest())
        .input("tokenizer_stats", layout.tokenizer_stats())
        .input("metrics", layout.metrics())
        .input("report", layout.report_json());
    if layout.abstract_pairs().exists() {
        run = run.input("abstract_pairs", layout.abstract_pairs());
    }
    let run = run.output("summary", layout.summary());
    run_stage(run, force, || {
        let manifest: CorpusManifest = serde_json::from_str(&read(&layout.corpus_manifest())?)?;
        let stats: TokenizerStats = serde_json::from_str(&read(&layout.tokenizer_stats())?)?;
        let eval: EvalReport = serde_json::from_str(&read(&layout.report_json())?)?;
        let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
        for r in &manifest.rejected {
            *reasons.entry(serde_json::to_string(&r.reason)?.trim_matches('"').to_string()).or_default() += 1;
        }
        let mut s = String::new();
        s.push_str(&format!(
            "corpus: {} files kept, {} rejected {:?}\n",
            manifest.files.len(),
            manifest.rejected.len(),
            reasons
        ));
        s.push_str(&format!(
            "tokens: {} before, {} after filtering, {} after cleaning ({:.1}% removed)\n",
            manifest.token_count_before,
            manifest.token_count_after_filter,
            manifest.token_count_after,
            100.0 * manifest.removed_token_fraction()
        ));
        s.push_str(&format!(
            "tokenizer: {} tokens ({} before whitespace extension), whitespace gain {:.3}\n",
            stats.size, stats.base_size, stats.whitespace_gain
        ));
        s.push_str(&format!(
            "masking: fraction {}, span {}, encoder input shrink ratio {:.4}\n",
            cfg.masking.fraction,
            cfg.masking.span_len,
            input_shrink_ratio(cfg.masking.fraction, cfg.masking.span_len)
        ));
        if layout.abstract_pairs().exists() {
            let pairs: Vec<PairRecord> = read_records(&layout.abstract_pairs())?;
            let vocab: BTreeSet<&str> = pairs
                .iter()
                .flat_map(|p| p.abstract_buggy.iter().chain(&p.abstract_fixed).flatten())
                .map(String::as_str)
                .collect();
            s.push_str(&format!("abstract vocabulary: {} tokens over {} pairs\n", vocab.len(), pairs.len()));
        }
        for (stage, step, loss) in final_losses(&read(&layout.metrics())?) {
            s.push_str(&format!("training: {stage} ended at step {step} with loss {loss}\n"));
        }
        s.push('\n');
        s.push_str(&eval.render_table());
        write(&layout.summary(), s)?;
        Ok(())
    })
}

pub fn run_named(stage: &str, cfg: &PipelineConfig, force: bool) -> Result<StageStatus> {
    match stage {
        "ingest" => ingest(cfg, force),
        "extract" => extract(cfg, force),
        "abstract" => abstract_stage(cfg, force),
        "tok-train" => tok_train(cfg, force),
        "noise" => noise(cfg, force),
        "train" => train_stage(cfg, force),
        "predict" => predict(cfg, force),
        "eval" => eval(cfg, force),
        "report" => report(cfg, force),
        other => Err(CliError::Config {
            field: "stage".into(),
            message: format!("unknown stage {other}"),
        }
        .into()),
    }
}

/// Every stage in order.
pub fn run_all(cfg: &PipelineConfig, force: bool) -> Result<Vec<(&'static str, StageStatus)>> {
    STAGES.iter().map(|s| Ok((*s, run_named(s, cfg, force)?))).collect()
}

/// Writes a synthetic source tree and commit history to the configured
/// input paths.
pub fn synth(cfg: &PipelineConfig, repos: usize, files_per_repo: usize, commits: usize, shape: bugforge_core::synth::SynthShape) -> Result<()> {
    let tree = bugforge_core::synth::synth_source_tree(cfg.seed, repos, files_per_repo, shape);
    if cfg.paths.corpus_in.exists() {
        fs::remove_dir_all(&cfg.paths.corpus_in)?;
    }
    for f in &tree {
        write(&cfg.paths.corpus_in.join(&f.repo).join(&f.path), &f.content)?;
    }
    let history = bugforge_core::synth::synth_commits(cfg.seed, commits, shape);
    write(&cfg.paths.commits, write_jsonl(&history))?;
    Ok(())
}
