//! Training loop with lambda annealing, checkpointing, evaluation passes
//! and frozen-encoder linear probes.

use crate::config::FlatConfig;
use crate::corpus::{self, AnnotationRecord, TokenSequence, Vocabulary};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::{joint_loss, LossWeights};
use crate::metrics::{self, CaptionPair};
use crate::model::{DecoderSpec, JointModel, ModelConfig};
use crate::seeds;
use crate::toyworld::ToyManifest;
use crate::videoio::{self, Mode, VideoClip};
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;
use tapegrad::{clip_global_norm, Adam, Session};

/// The four source-task granularities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainTask {
    CoarseCls,
    FineCls,
    CaptionSimplified,
    CaptionFull,
}

impl TrainTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "coarse_cls" => Ok(TrainTask::CoarseCls),
            "fine_cls" => Ok(TrainTask::FineCls),
            "caption_simplified" => Ok(TrainTask::CaptionSimplified),
            "caption_full" => Ok(TrainTask::CaptionFull),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected coarse_cls | fine_cls | caption_simplified | caption_full)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainTask::CoarseCls => "coarse_cls",
            TrainTask::FineCls => "fine_cls",
            TrainTask::CaptionSimplified => "caption_simplified",
            TrainTask::CaptionFull => "caption_full",
        }
    }

    pub fn is_caption(&self) -> bool {
        matches!(self, TrainTask::CaptionSimplified | TrainTask::CaptionFull)
    }

    /// Validation metric used for best-checkpoint selection.
    pub fn selection_metric(&self) -> &'static str {
        if self.is_caption() {
            "exact_match"
        } else {
            "accuracy"
        }
    }
}

/// Piecewise-linear lambda schedule: `start` through the warmup, linear
/// interpolation to `end` over `anneal_steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub start: f64,
    pub end: f64,
    pub warmup_steps: u64,
    pub anneal_steps: u64,
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.end) || !(0.0..=1.0).contains(&self.start) || self.end > self.start {
            return Err(Error::Config(format!(
                "lambda schedule must satisfy 0 <= end <= start <= 1, got start={} end={}",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn constant(v: f64) -> Self {
        LambdaSchedule { start: v, end: v, warmup_steps: 0, anneal_steps: 0 }
    }
}

/// Lambda at an optimizer step.
pub fn lambda_at_step(step: u64, schedule: &LambdaSchedule) -> f64 {
    if step < schedule.warmup_steps || schedule.anneal_steps == 0 {
        if step < schedule.warmup_steps {
            return schedule.start;
        }
        return if schedule.anneal_steps == 0 { schedule.end } else { schedule.start };
    }
    let into = step - schedule.warmup_steps;
    if into >= schedule.anneal_steps {
        schedule.end
    } else {
        let frac = into as f64 / schedule.anneal_steps as f64;
        schedule.start + (schedule.end - schedule.start) * frac
    }
}

/// Fully resolved training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TrainTask,
    pub lambda: LambdaSchedule,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    pub manifest: PathBuf,
    pub vocab: Option<PathBuf>,
    pub encoder: EncoderConfig,
    pub decoder_embed: usize,
    pub decoder_hidden: usize,
    pub max_caption_len: usize,
    pub grad_clip: f64,
    /// Stop early once the selection metric reaches this value.
    pub target_value: Option<f64>,
    pub deterministic: bool,
}

pub const TRAIN_KEYS: &[&str] = &[
    "task",
    "lambda_start",
    "lambda_end",
    "lambda_warmup_steps",
    "lambda_anneal_steps",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "seed",
    "checkpoint_dir",
    "manifest",
    "vocab",
    "channels_3d",
    "channels_2d",
    "blocks",
    "lstm_hidden",
    "decoder_embed",
    "decoder_hidden",
    "max_caption_len",
    "grad_clip",
    "target_value",
    "deterministic",
];

impl TrainConfig {
    /// Resolves a flat config; `-1` warmup means "one epoch", substituted
    /// once the dataset size is known.
    pub fn from_flat(cfg: &FlatConfig) -> Result<Self> {
        cfg.ensure_known(TRAIN_KEYS)?;
        let task = TrainTask::parse(cfg.required("task")?)?;
        let lambda = LambdaSchedule {
            start: cfg.parse_or("lambda_start", 1.0)?,
            end: cfg.parse_or("lambda_end", 0.1)?,
            warmup_steps: cfg.parse_or("lambda_warmup_steps", u64::MAX)?,
            anneal_steps: cfg.parse_or("lambda_anneal_steps", 0)?,
        };
        let learning_rate = cfg.parse_or("learning_rate", 0.001)?;
        if learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        let target_value = match cfg.get("target_value") {
            None => None,
            Some(v) => Some(v.parse::<f64>().map_err(|_| Error::Config(format!("bad target_value '{v}'")))?),
        };
        Ok(TrainConfig {
            task,
            lambda,
            learning_rate,
            batch_size: cfg.parse_or("batch_size", 32)?,
            max_epochs: cfg.parse_or("max_epochs", 10)?,
            seed: cfg.parse_or("seed", 0)?,
            checkpoint_dir: PathBuf::from(cfg.required("checkpoint_dir")?),
            manifest: PathBuf::from(cfg.required("manifest")?),
            vocab: cfg.get("vocab").map(PathBuf::from),
            encoder: EncoderConfig {
                channels_3d: cfg.parse_or("channels_3d", 256)?,
                channels_2d: cfg.parse_or("channels_2d", 256)?,
                blocks: cfg.parse_or("blocks", 5)?,
                lstm_hidden: cfg.parse_or("lstm_hidden", 256)?,
            },
            decoder_embed: cfg.parse_or("decoder_embed", 256)?,
            decoder_hidden: cfg.parse_or("decoder_hidden", 256)?,
            max_caption_len: cfg.parse_or("max_caption_len", corpus::MAX_CAPTION_LEN)?,
            grad_clip: cfg.parse_or("grad_clip", 5.0)?,
            target_value,
            deterministic: cfg.parse_or("deterministic", false)?,
        })
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("task".into(), self.task.name().to_string());
        m.insert("lambda_start".into(), self.lambda.start.to_string());
        m.insert("lambda_end".into(), self.lambda.end.to_string());
        m.insert("lambda_warmup_steps".into(), self.lambda.warmup_steps.to_string());
        m.insert("lambda_anneal_steps".into(), self.lambda.anneal_steps.to_string());
        m.insert("learning_rate".into(), self.learning_rate.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("max_epochs".into(), self.max_epochs.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("manifest".into(), self.manifest.display().to_string());
        m.insert("channels_3d".into(), self.encoder.channels_3d.to_string());
        m.insert("channels_2d".into(), self.encoder.channels_2d.to_string());
        m.insert("blocks".into(), self.encoder.blocks.to_string());
        m.insert("lstm_hidden".into(), self.encoder.lstm_hidden.to_string());
        m.insert("grad_clip".into(), self.grad_clip.to_string());
        m
    }
}

/// Per-epoch training trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub lambda: f64,
    pub val_metrics: BTreeMap<String, f64>,
}

/// Evaluation/training report: per-split metric maps, config echo, step
/// count, wall time. All values finite by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub splits: BTreeMap<String, BTreeMap<String, f64>>,
    pub config: BTreeMap<String, String>,
    pub steps: u64,
    pub wall_time_s: f64,
    pub oracle_fixture_sha256: String,
    #[serde(default)]
    pub history: Vec<EpochStat>,
}

impl MetricsReport {
    pub fn new(config: BTreeMap<String, String>) -> Self {
        MetricsReport {
            splits: BTreeMap::new(),
            config,
            steps: 0,
            wall_time_s: 0.0,
            oracle_fixture_sha256: metrics::fixture_hash(),
            history: Vec::new(),
        }
    }

    pub fn insert(&mut self, split: &str, metric: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Metric(format!("metric {split}/{metric} is not finite")));
        }
        self.splits.entry(split.to_string()).or_default().insert(metric.to_string(), value);
        Ok(())
    }

    pub fn get(&self, split: &str, metric: &str) -> Option<f64> {
        self.splits.get(split).and_then(|m| m.get(metric)).copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    }
}

/// A stored toy corpus: manifest, annotations, decoded-frame cache.
pub struct ToyDataset {
    pub manifest: ToyManifest,
    pub root: PathBuf,
    annotations: HashMap<String, AnnotationRecord>,
    cache: Mutex<HashMap<String, Arc<Vec<Array3<u8>>>>>,
}

impl ToyDataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = ToyManifest::load(manifest_path)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let records = corpus::load_annotations(&root.join("annotations.jsonl"))?;
        let annotations = records.into_iter().map(|r| (r.video_id.clone(), r)).collect();
        Ok(ToyDataset { manifest, root, annotations, cache: Mutex::new(HashMap::new()) })
    }

    pub fn annotation(&self, id: &str) -> Result<&AnnotationRecord> {
        self.annotations
            .get(id)
            .ok_or_else(|| Error::Label(format!("no annotation for '{id}'")))
    }

    pub fn frames(&self, id: &str) -> Result<Arc<Vec<Array3<u8>>>> {
        if let Some(hit) = self.cache.lock().unwrap().get(id) {
            return Ok(Arc::clone(hit));
        }
        let meta = self
            .manifest
            .episode(id)
            .ok_or_else(|| Error::Label(format!("no manifest entry for '{id}'")))?;
        let frames = Arc::new(videoio::load_frame_dir(&self.root.join(&meta.dir))?);
        self.cache.lock().unwrap().insert(id.to_string(), Arc::clone(&frames));
        Ok(frames)
    }

    pub fn clip(&self, id: &str, mode: Mode, seed: u64) -> Result<VideoClip> {
        let frames = self.frames(id)?;
        videoio::load_clip(&frames, mode, seed)
    }

    /// Loads a batch of clips in parallel, order preserved.
    pub fn clips(&self, ids: &[(&str, Mode, u64)]) -> Result<Vec<VideoClip>> {
        ids.par_iter()
            .map(|(id, mode, seed)| self.clip(id, *mode, *seed))
            .collect()
    }

    pub fn split_ids(&self, split: &str) -> Result<Vec<String>> {
        self.manifest
            .split(split)
            .map(<[String]>::to_vec)
            .ok_or_else(|| Error::Config(format!("unknown split '{split}'")))
    }

    /// Reference caption tokens at one granularity.
    pub fn caption_tokens(&self, id: &str, simplified: bool) -> Result<Vec<String>> {
        let ann = self.annotation(id)?;
        let text = if simplified { ann.simplified() } else { ann.full_caption.clone() };
        Ok(corpus::tokenize_caption(&text))
    }
}

fn label_for(task: TrainTask, ann: &AnnotationRecord) -> usize {
    match task {
        TrainTask::CoarseCls => ann.action_group_id,
        _ => ann.action_category_id,
    }
}

fn build_model_config(cfg: &TrainConfig, dataset: &ToyDataset, vocab: Option<&Vocabulary>) -> Result<ModelConfig> {
    let classes = match cfg.task {
        TrainTask::CoarseCls => dataset.manifest.group_count,
        _ => dataset.manifest.category_count,
    };
    let decoder = if cfg.task.is_caption() {
        let vocab = vocab.ok_or_else(|| Error::Config("caption tasks need a vocabulary (vocab = <path>)".into()))?;
        Some(DecoderSpec {
            embed_dim: cfg.decoder_embed,
            hidden: cfg.decoder_hidden,
            max_len: cfg.max_caption_len,
            vocab: vocab.tokens().to_vec(),
        })
    } else {
        None
    };
    Ok(ModelConfig {
        encoder: cfg.encoder.clone(),
        classes,
        decoder,
        hierarchy: Some(dataset.manifest.category_groups.clone()),
        group_count: Some(dataset.manifest.group_count),
        init_seed: cfg.seed,
    })
}

/// One gradient step over a prepared batch. Returns the joint loss.
/// Branches with exactly zero weight are skipped outright, so their
/// parameters receive no tape nodes and stay bit-identical under Adam.
pub fn train_step(
    model: &mut JointModel,
    clips: &[VideoClip],
    labels: &[usize],
    captions: Option<&[TokenSequence]>,
    lambda: f64,
    optimizer: &mut Adam,
    grad_clip: f64,
) -> Result<f64> {
    let weights = LossWeights::new(lambda)?;
    let loss_value;
    {
        let mut s = Session::train(&mut model.store);
        let encoded = model.encoder.encode_clips(&mut s, clips)?;
        let loss = match (lambda > 0.0, lambda < 1.0, captions) {
            (true, false, _) | (true, true, None) => model.classifier.cross_entropy(&mut s, encoded.h, labels),
            (false, true, Some(caps)) => {
                let dec = model.decoder.as_ref().ok_or_else(|| Error::Config("model has no decoder".into()))?;
                dec.caption_nll(&mut s, encoded.h, caps)?
            }
            (true, true, Some(caps)) => {
                let cls = model.classifier.cross_entropy(&mut s, encoded.h, labels);
                let dec = model.decoder.as_ref().ok_or_else(|| Error::Config("model has no decoder".into()))?;
                let cap = dec.caption_nll(&mut s, encoded.h, caps)?;
                joint_loss(&mut s, cls, cap, weights)
            }
            (false, false, _) | (false, true, None) => {
                return Err(Error::Config("lambda = 0 training requires captions".into()));
            }
        };
        loss_value = s.tape.scalar(loss);
        s.backward(loss);
    }
    clip_global_norm(&mut model.store, grad_clip);
    optimizer.step(&mut model.store);
    Ok(loss_value)
}

/// Evaluation pass over a split: eval-mode preprocessing, batch-invariant
/// metrics; caption tasks also greedy-decode for exact match.
fn eval_split(
    model: &mut JointModel,
    dataset: &ToyDataset,
    ids: &[String],
    task: TrainTask,
    batch_size: usize,
) -> Result<BTreeMap<String, f64>> {
    if ids.is_empty() {
        return Err(Error::Metric("evaluation over an empty split".into()));
    }
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    let mut pairs: Vec<CaptionPair> = Vec::new();
    let vocab = model.vocab.clone();
    for chunk in ids.chunks(batch_size.max(1)) {
        let specs: Vec<(&str, Mode, u64)> = chunk.iter().map(|id| (id.as_str(), Mode::Eval, 0)).collect();
        let clips = dataset.clips(&specs)?;
        let mut s = Session::inference(&mut model.store);
        let out = model.encoder.encode_clips(&mut s, &clips)?;
        let probs = model.classifier.classify(&mut s, out.h);
        let pv = s.tape.value(probs).clone();
        let pv = pv.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();
        for (row, id) in pv.rows().into_iter().zip(chunk) {
            let pred = argmax(row.as_slice().unwrap());
            predictions.push(pred);
            labels.push(label_for(task, dataset.annotation(id)?));
        }
        if task.is_caption() {
            let dec = model.decoder.as_ref().expect("caption task has decoder");
            let vocab = vocab.as_ref().expect("caption task has vocab");
            let decoded = dec.decode_greedy(&mut s, out.h);
            for (d, id) in decoded.iter().zip(chunk) {
                let reference = dataset.caption_tokens(id, task == TrainTask::CaptionSimplified)?;
                pairs.push(CaptionPair::new(d.sequence.decode(vocab), reference));
            }
        }
    }
    let mut out = BTreeMap::new();
    out.insert("accuracy".to_string(), metrics::classification_accuracy(&predictions, &labels)?);
    if task.is_caption() {
        out.insert("exact_match".to_string(), metrics::exact_match_accuracy(&pairs)?);
    }
    Ok(out)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Trains a model per the config. Returns the best-checkpoint path and the
/// report. Fully reproducible given the seed.
pub fn train_model(cfg: &TrainConfig) -> Result<(PathBuf, MetricsReport)> {
    cfg.lambda.validate()?;
    let started = Instant::now();
    let dataset = ToyDataset::open(&cfg.manifest)?;
    let vocab = match (&cfg.vocab, cfg.task.is_caption()) {
        (Some(path), _) => Some(Vocabulary::load(path)?),
        (None, true) => return Err(Error::Config("caption tasks need a vocabulary (vocab = <path>)".into())),
        (None, false) => None,
    };
    let model_config = build_model_config(cfg, &dataset, vocab.as_ref())?;
    let mut model = JointModel::new(model_config)?;

    let train_ids = dataset.split_ids("train")?;
    if train_ids.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    let steps_per_epoch = train_ids.len().div_ceil(cfg.batch_size.max(1)) as u64;
    // warmup default: one epoch of pure classification
    let mut schedule = cfg.lambda;
    if schedule.warmup_steps == u64::MAX {
        schedule.warmup_steps = steps_per_epoch;
    }
    if !cfg.task.is_caption() {
        schedule = LambdaSchedule::constant(1.0);
    }

    let mut optimizer = Adam::new(cfg.learning_rate);
    let mut report = MetricsReport::new(cfg.echo());
    let selection = cfg.task.selection_metric();
    let mut best = f64::NEG_INFINITY;
    let best_path = cfg.checkpoint_dir.join("best.ckpt");
    let last_path = cfg.checkpoint_dir.join("last.ckpt");
    std::fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;

    let mut step: u64 = 0;
    let mut lambda_now = lambda_at_step(0, &schedule);
    for epoch in 0..cfg.max_epochs {
        let mut order = train_ids.clone();
        shuffle(&mut order, seeds::derive(cfg.seed, &[0xe90c, epoch as u64]));
        let mut epoch_loss = 0.0f64;
        let mut batches = 0.0f64;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            lambda_now = lambda_at_step(step, &schedule);
            let specs: Vec<(&str, Mode, u64)> = chunk
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    (id.as_str(), Mode::Train, seeds::derive(cfg.seed, &[0xda7a, epoch as u64, step, i as u64]))
                })
                .collect();
            let clips = dataset.clips(&specs)?;
            let labels: Vec<usize> = chunk
                .iter()
                .map(|id| dataset.annotation(id).map(|a| label_for(cfg.task, a)))
                .collect::<Result<_>>()?;
            let captions = if cfg.task.is_caption() {
                let vocab = vocab.as_ref().unwrap();
                let simplified = cfg.task == TrainTask::CaptionSimplified;
                let seqs: Vec<TokenSequence> = chunk
                    .iter()
                    .map(|id| {
                        let toks = dataset.caption_tokens(id, simplified)?;
                        Ok(corpus::encode_tokens(&toks, vocab, cfg.max_caption_len))
                    })
                    .collect::<Result<_>>()?;
                Some(seqs)
            } else {
                None
            };
            let loss = train_step(
                &mut model,
                &clips,
                &labels,
                captions.as_deref(),
                lambda_now,
                &mut optimizer,
                cfg.grad_clip,
            )?;
            if !loss.is_finite() {
                return Err(Error::Training { step, message: format!("non-finite loss {loss}") });
            }
            epoch_loss += loss;
            batches += 1.0;
            step += 1;
        }
        let val_ids = dataset.split_ids("val")?;
        let val_metrics = eval_split(&mut model, &dataset, &val_ids, cfg.task, cfg.batch_size)?;
        let score = val_metrics.get(selection).copied().unwrap_or(f64::NEG_INFINITY);
        report.history.push(EpochStat {
            epoch,
            train_loss: epoch_loss / batches.max(1.0),
            lambda: lambda_now,
            val_metrics: val_metrics.clone(),
        });
        if score > best {
            best = score;
            model.save(&best_path)?;
        }
        model.save(&last_path)?;
        if let Some(target) = cfg.target_value {
            if best >= target {
                break;
            }
        }
    }
    if !best_path.exists() {
        model.save(&best_path)?;
    }

    // final numbers come from the best checkpoint
    let mut best_model = JointModel::load(&best_path)?;
    for split in ["val", "test"] {
        let ids = dataset.split_ids(split)?;
        if ids.is_empty() {
            continue;
        }
        let m = eval_split(&mut best_model, &dataset, &ids, cfg.task, cfg.batch_size)?;
        for (k, v) in m {
            report.insert(split, &k, v)?;
        }
    }
    report.steps = step;
    report.wall_time_s = if cfg.deterministic { 0.0 } else { started.elapsed().as_secs_f64() };
    Ok((best_path, report))
}

fn shuffle(ids: &mut [String], seed: u64) {
    use rand::seq::SliceRandom;
    let mut rng = seeds::rng(seed, &[0x5ffe]);
    ids.shuffle(&mut rng);
}

/// Label space for probes and evaluation mappings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSpace {
    Coarse,
    Fine,
}

impl LabelSpace {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(LabelSpace::Coarse),
            "fine" => Ok(LabelSpace::Fine),
            other => Err(Error::Config(format!("unknown label space '{other}'"))),
        }
    }
}

/// Trains a fresh affine+softmax probe on frozen encoder features.
/// The encoder receives no updates; the caller can verify via
/// [`JointModel::params_hash`].
pub fn fit_linear_probe(
    checkpoint: &Path,
    target: LabelSpace,
    manifest: &Path,
    seed: u64,
) -> Result<MetricsReport> {
    let mut model = JointModel::load(checkpoint)?;
    let dataset = ToyDataset::open(manifest)?;
    let hash_before = model.params_hash();

    let classes = match target {
        LabelSpace::Coarse => dataset.manifest.group_count,
        LabelSpace::Fine => dataset.manifest.category_count,
    };
    let collect = |split: &str, model: &mut JointModel| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let ids = dataset.split_ids(split)?;
        let mut feats = Vec::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len());
        for chunk in ids.chunks(16) {
            let specs: Vec<(&str, Mode, u64)> = chunk.iter().map(|id| (id.as_str(), Mode::Eval, 0)).collect();
            let clips = dataset.clips(&specs)?;
            feats.extend(model.extract_features(&clips)?);
            for id in chunk {
                let ann = dataset.annotation(id)?;
                labels.push(match target {
                    LabelSpace::Coarse => ann.action_group_id,
                    LabelSpace::Fine => ann.action_category_id,
                });
            }
        }
        Ok((feats, labels))
    };
    let (train_x, train_y) = collect("train", &mut model)?;
    let (val_x, val_y) = collect("val", &mut model)?;
    if train_x.is_empty() {
        return Err(Error::Config("probe needs a nonempty train split".into()));
    }

    let (train_acc, val_acc) = train_softmax_probe(&train_x, &train_y, &val_x, &val_y, classes, seed)?;
    let hash_after = model.params_hash();
    if hash_before != hash_after {
        return Err(Error::Other("encoder parameters changed during probe training".into()));
    }

    let mut config = BTreeMap::new();
    config.insert("probe_target".into(), format!("{target:?}").to_lowercase());
    config.insert("checkpoint".into(), checkpoint.display().to_string());
    config.insert("encoder_params_hash".into(), hash_after);
    let mut report = MetricsReport::new(config);
    report.insert("train", "accuracy", train_acc)?;
    if !val_x.is_empty() {
        report.insert("val", "accuracy", val_acc)?;
    }
    Ok(report)
}

/// Adam-trained affine+softmax on fixed feature vectors. Returns
/// (train accuracy, val accuracy).
pub fn train_softmax_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    val_x: &[Vec<f64>],
    val_y: &[usize],
    classes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    use tapegrad::layers::Linear;
    use tapegrad::ParamStore;
    let dim = train_x[0].len();
    let mut store = ParamStore::new();
    let mut rng = seeds::rng(seed, &[0x90be]);
    let head = Linear::new(&mut store, "probe", &mut rng, dim, classes);
    let mut adam = Adam::new(0.01);
    let x = ndarray::Array2::from_shape_vec(
        (train_x.len(), dim),
        train_x.iter().flatten().copied().collect(),
    )
    .expect("ragged features")
    .into_dyn();
    for _ in 0..300 {
        let mut s = Session::train(&mut store);
        let xv = s.leaf(x.clone());
        let logits = head.forward(&mut s, xv);
        let ls = s.tape.log_softmax(logits);
        let picked = s.tape.gather_rows(ls, train_y);
        let sum = s.tape.sum_all(picked);
        let loss = s.tape.scale(sum, -1.0 / train_y.len() as f64);
        s.backward(loss);
        drop(s);
        adam.step(&mut store);
    }
    let predict = |store: &mut ParamStore, xs: &[Vec<f64>]| -> Vec<usize> {
        if xs.is_empty() {
            return Vec::new();
        }
        let x = ndarray::Array2::from_shape_vec((xs.len(), dim), xs.iter().flatten().copied().collect())
            .unwrap()
            .into_dyn();
        let mut s = Session::inference(store);
        let xv = s.leaf(x);
        let logits = head.forward(&mut s, xv);
        let lv = s.tape.value(logits);
        lv.rows().into_iter().map(|r| argmax(r.as_slice().unwrap())).collect()
    };
    let train_pred = predict(&mut store, train_x);
    let train_acc = metrics::classification_accuracy(&train_pred, train_y)?;
    let val_acc = if val_x.is_empty() {
        0.0
    } else {
        metrics::classification_accuracy(&predict(&mut store, val_x), val_y)?
    };
    Ok((train_acc, val_acc))
}

pub const KNOWN_EVAL_METRICS: &[&str] = &[
    "accuracy",
    "coarse_accuracy_hard",
    "coarse_accuracy_summed",
    "exact_match",
    "bleu4",
    "rouge_l",
    "meteor_lite",
];

/// Evaluates a checkpoint on a split with the requested metrics.
pub fn evaluate_model(
    checkpoint: &Path,
    manifest: &Path,
    split: &str,
    metric_names: &[String],
) -> Result<MetricsReport> {
    for m in metric_names {
        if !KNOWN_EVAL_METRICS.contains(&m.as_str()) {
            return Err(Error::Metric(format!(
                "unknown metric '{m}' (known: {})",
                KNOWN_EVAL_METRICS.join(", ")
            )));
        }
    }
    let mut model = JointModel::load(checkpoint)?;
    let dataset = ToyDataset::open(manifest)?;
    let ids = dataset.split_ids(split)?;
    if ids.is_empty() {
        return Err(Error::Metric(format!("split '{split}' is empty")));
    }
    let hierarchy = dataset.manifest.hierarchy();
    let fine_space = model.config.classes == dataset.manifest.category_count;

    let mut fine_preds = Vec::new();
    let mut hard_coarse = Vec::new();
    let mut summed_coarse = Vec::new();
    let mut fine_labels = Vec::new();
    let mut group_labels = Vec::new();
    let mut pairs = Vec::new();
    let wants_caption = metric_names.iter().any(|m| matches!(m.as_str(), "exact_match" | "bleu4" | "rouge_l" | "meteor_lite"));
    if wants_caption && model.decoder.is_none() {
        return Err(Error::Metric("caption metrics requested but the checkpoint has no decoder".into()));
    }

    for chunk in ids.chunks(16) {
        let specs: Vec<(&str, Mode, u64)> = chunk.iter().map(|id| (id.as_str(), Mode::Eval, 0)).collect();
        let clips = dataset.clips(&specs)?;
        let mut s = Session::inference(&mut model.store);
        let out = model.encoder.encode_clips(&mut s, &clips)?;
        let probs = model.classifier.classify(&mut s, out.h);
        let pv = s.tape.value(probs).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
        for (row, id) in pv.rows().into_iter().zip(chunk) {
            let p = row.as_slice().unwrap();
            let ann = dataset.annotation(id)?;
            fine_preds.push(argmax(p));
            fine_labels.push(ann.action_category_id);
            group_labels.push(ann.action_group_id);
            if fine_space {
                hard_coarse.push(hierarchy.group_of(argmax(p))?);
                let gp = metrics::group_probs_from_fine(p, &hierarchy)?;
                summed_coarse.push(argmax(&gp));
            }
        }
        if wants_caption {
            let dec = model.decoder.as_ref().unwrap();
            let vocab = model.vocab.as_ref().unwrap();
            let decoded = dec.decode_greedy(&mut s, out.h);
            for (d, id) in decoded.iter().zip(chunk) {
                let reference = dataset.caption_tokens(id, true)?;
                let reference_full = dataset.caption_tokens(id, false)?;
                // score against whichever granularity the decoder was
                // trained on: pick the reference whose tokens are all in
                // vocabulary, preferring simplified
                let reference = if reference.iter().all(|t| vocab.contains(t)) {
                    reference
                } else {
                    reference_full
                };
                pairs.push(CaptionPair::new(d.sequence.decode(vocab), reference));
            }
        }
    }

    let mut config = BTreeMap::new();
    config.insert("checkpoint".into(), checkpoint.display().to_string());
    config.insert("split".into(), split.to_string());
    let mut report = MetricsReport::new(config);
    for m in metric_names {
        let value = match m.as_str() {
            "accuracy" => {
                let labels = if fine_space { &fine_labels } else { &group_labels };
                metrics::classification_accuracy(&fine_preds, labels)?
            }
            "coarse_accuracy_hard" => {
                if !fine_space {
                    return Err(Error::Metric("coarse mapping needs a fine-grained checkpoint".into()));
                }
                metrics::classification_accuracy(&hard_coarse, &group_labels)?
            }
            "coarse_accuracy_summed" => {
                if !fine_space {
                    return Err(Error::Metric("coarse mapping needs a fine-grained checkpoint".into()));
                }
                metrics::classification_accuracy(&summed_coarse, &group_labels)?
            }
            "exact_match" => metrics::exact_match_accuracy(&pairs)?,
            "bleu4" => metrics::bleu4(&pairs)?,
            "rouge_l" => metrics::rouge_l(&pairs)?,
            "meteor_lite" => metrics::meteor_lite(&pairs)?,
            _ => unreachable!("validated above"),
        };
        report.insert(split, m, value)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_schedule_endpoints_and_midpoint() {
        let sched = LambdaSchedule { start: 1.0, end: 0.1, warmup_steps: 10, anneal_steps: 100 };
        assert_eq!(lambda_at_step(0, &sched), 1.0);
        assert_eq!(lambda_at_step(9, &sched), 1.0);
        assert_eq!(lambda_at_step(110, &sched), 0.1);
        assert_eq!(lambda_at_step(10_000, &sched), 0.1);
        let mid = lambda_at_step(60, &sched);
        assert!((mid - 0.55).abs() < 1e-12, "midpoint should be 0.55, got {mid}");
    }

    #[test]
    fn lambda_schedule_validation() {
        assert!(LambdaSchedule { start: 1.0, end: 0.1, warmup_steps: 0, anneal_steps: 1 }.validate().is_ok());
        assert!(LambdaSchedule { start: 0.1, end: 1.0, warmup_steps: 0, anneal_steps: 1 }.validate().is_err());
        assert!(LambdaSchedule { start: 1.5, end: 0.1, warmup_steps: 0, anneal_steps: 1 }.validate().is_err());
    }

    #[test]
    fn train_config_rejects_unknown_keys() {
        let cfg = FlatConfig::parse("task = fine_cls\nbogus = 1").unwrap();
        assert!(TrainConfig::from_flat(&cfg).is_err());
    }

    #[test]
    fn report_rejects_non_finite() {
        let mut r = MetricsReport::new(BTreeMap::new());
        assert!(r.insert("val", "accuracy", 0.5).is_ok());
        assert!(r.insert("val", "bad", f64::NAN).is_err());
    }
}
