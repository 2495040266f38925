//! Pipeline subcommands. Each invocation writes a run directory holding the
//! fully resolved config, logs/reports, and any produced files; exit status
//! is 0 on success, 1 on runtime failure (one JSON error line on stderr),
//! 2 on usage errors.

use crate::config::FlatConfig;
use crate::corpus;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::JointModel;
use crate::toyworld::{self, ToySpec};
use crate::training::{self, LabelSpace, TrainConfig};
use crate::transfer::{self, Backbone, EncoderBackbone, EpisodeSpec, HeadKind, PixelGridBackbone, Shots};
use crate::videoio::{self, Mode};
use crate::{explain, plot};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Environment variable naming the default run-directory root.
pub const RUN_ROOT_ENV: &str = "FINEGRAIN_RUN_ROOT";

#[derive(Parser)]
#[command(name = "finegrain", version, about = "fine-grained video classification, captioning and transfer benchmarking", max_term_width = 100)]
pub struct Cli {
    /// Master seed applied where a subcommand does not set its own.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Zero wall-clock fields so reports are bit-reproducible.
    #[arg(long, global = true, default_value_t = false)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic toy-video corpus with annotations and manifest.
    SynthData(SynthArgs),
    /// Build a vocabulary file from an annotation file.
    BuildVocab(BuildVocabArgs),
    /// Train a model from a flat key=value config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Greedy-caption one stored video, printing per-token log-probs.
    Caption(CaptionArgs),
    /// Fit a linear probe on frozen encoder features.
    Probe(ProbeArgs),
    /// Run the frozen-backbone transfer benchmark.
    TransferBench(TransferArgs),
    /// Render Grad-CAM saliency overlays.
    Explain(ExplainArgs),
    /// Merge reports from previous runs into one summary.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Episode count.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// World preset: ladder | kitchenware.
    #[arg(long, default_value = "ladder")]
    pub world: String,
}

#[derive(Args)]
pub struct BuildVocabArgs {
    /// Annotation JSON-lines file.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Output vocabulary file.
    #[arg(long)]
    pub out: PathBuf,
    /// Build from simplified captions instead of full ones.
    #[arg(long, default_value_t = false)]
    pub simplified: bool,
    /// Words occurring fewer times fold into the unknown token.
    #[arg(long, default_value_t = 6)]
    pub min_occurrences: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: PathBuf,
    /// key=value overrides applied on top of the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Comma-separated metric names.
    #[arg(long, default_value = "accuracy")]
    pub metrics: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of numbered frames for one video.
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Probe label space: coarse | fine.
    #[arg(long, default_value = "fine")]
    pub target: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Backbones as name=path checkpoint pairs, or the builtin "pixel".
    #[arg(long, value_name = "NAME=CKPT|pixel", num_args = 1..)]
    pub backbones: Vec<String>,
    /// Comma-separated heads: logistic,mlp512,bilstm128.
    #[arg(long, default_value = "logistic,mlp512,bilstm128")]
    pub heads: String,
    /// Comma-separated shot levels (numbers or "full").
    #[arg(long, default_value = "1,5,full")]
    pub shots: String,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of numbered frames for one video.
    #[arg(long)]
    pub video: PathBuf,
    /// Class id for classifier saliency.
    #[arg(long)]
    pub class_id: Option<usize>,
    /// Caption text for token saliency (teacher-forced).
    #[arg(long)]
    pub caption: Option<String>,
    /// Token position within the encoded caption.
    #[arg(long)]
    pub token_position: Option<usize>,
    /// Also export the raw volume as .npy.
    #[arg(long, default_value_t = false)]
    pub export_volume: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Report JSON files (metrics or benchmark reports).
    #[arg(long, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_dir(requested: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let dir = requested.clone().unwrap_or_else(|| run_root().join(name));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_resolved(dir: &Path, cfg: &FlatConfig) -> Result<()> {
    let path = dir.join("resolved.config");
    std::fs::write(&path, cfg.render()).map_err(|e| Error::io(&path, e))
}

/// Runs one parsed invocation. Returns the run directory.
pub fn run_command(cli: Cli) -> Result<PathBuf> {
    match cli.command {
        Command::SynthData(args) => {
            let dir = run_dir(&args.out, "synth-data")?;
            let spec = match args.world.as_str() {
                "ladder" => ToySpec::ladder(),
                "kitchenware" => ToySpec::kitchenware_analog(),
                other => return Err(Error::Config(format!("unknown world '{other}'"))),
            };
            if args.world == "ladder" {
                spec.validate()?;
            }
            let mut resolved = FlatConfig::new();
            resolved.set("world", &args.world);
            resolved.set("n", args.n);
            resolved.set("seed", cli.seed);
            write_resolved(&dir, &resolved)?;
            let manifest = toyworld::generate_toy_corpus(&spec, args.n, cli.seed, &dir)?;
            println!("manifest: {}", manifest.display());
            Ok(dir)
        }
        Command::BuildVocab(args) => {
            let dir = run_dir(&args.out.parent().map(Path::to_path_buf), "build-vocab")?;
            let records = corpus::load_annotations(&args.annotations)?;
            let captions: Vec<Vec<String>> = records
                .iter()
                .map(|r| {
                    let text = if args.simplified { r.simplified() } else { r.full_caption.clone() };
                    corpus::tokenize_caption(&text)
                })
                .collect();
            let vocab = corpus::build_vocabulary(&captions, args.min_occurrences);
            vocab.save(&args.out)?;
            let mut resolved = FlatConfig::new();
            resolved.set("annotations", args.annotations.display());
            resolved.set("simplified", args.simplified);
            resolved.set("min_occurrences", args.min_occurrences);
            write_resolved(&dir, &resolved)?;
            println!("vocabulary: {} tokens -> {}", vocab.len(), args.out.display());
            Ok(dir)
        }
        Command::Train(args) => {
            let mut flat = FlatConfig::load(&args.config)?;
            flat.apply_overrides(&args.overrides)?;
            if cli.deterministic {
                flat.set("deterministic", true);
            }
            let cfg = TrainConfig::from_flat(&flat)?;
            let dir = cfg.checkpoint_dir.clone();
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_resolved(&dir, &flat)?;
            let (ckpt, report) = training::train_model(&cfg)?;
            report.save(&dir.join("train_report.json"))?;
            println!("best checkpoint: {}", ckpt.display());
            for (split, metrics) in &report.splits {
                for (k, v) in metrics {
                    println!("{split}/{k} = {v:.4}");
                }
            }
            Ok(dir)
        }
        Command::Eval(args) => {
            let dir = run_dir(&args.out, "eval")?;
            let names: Vec<String> = args.metrics.split(',').map(|s| s.trim().to_string()).collect();
            let report = training::evaluate_model(&args.checkpoint, &args.manifest, &args.split, &names)?;
            report.save(&dir.join("eval_report.json"))?;
            let mut resolved = FlatConfig::new();
            resolved.set("checkpoint", args.checkpoint.display());
            resolved.set("manifest", args.manifest.display());
            resolved.set("split", &args.split);
            resolved.set("metrics", &args.metrics);
            write_resolved(&dir, &resolved)?;
            for (split, metrics) in &report.splits {
                for (k, v) in metrics {
                    println!("{split}/{k} = {v:.4}");
                }
            }
            Ok(dir)
        }
        Command::Caption(args) => {
            let dir = run_dir(&args.out, "caption")?;
            let mut model = JointModel::load(&args.checkpoint)?;
            let vocab = model
                .vocab
                .clone()
                .ok_or_else(|| Error::Config("checkpoint has no caption decoder".into()))?;
            let frames = videoio::load_frame_dir(&args.video)?;
            let clip = videoio::load_clip(&frames, Mode::Eval, 0)?;
            let decoded = {
                let mut s = tapegrad::Session::inference(&mut model.store);
                let out = model.encoder.encode_clips(&mut s, std::slice::from_ref(&clip))?;
                let dec = model.decoder.as_ref().expect("vocab implies decoder");
                dec.decode_greedy(&mut s, out.h).remove(0)
            };
            let words = decoded.sequence.decode(&vocab);
            println!("caption: {}", words.join(" "));
            let mut token_lines = Vec::new();
            for (tok, lp) in &decoded.token_logprobs {
                let text = vocab.token_at(*tok).unwrap_or("?").to_string();
                println!("token {text:>14}  logprob {lp:.4}");
                token_lines.push(serde_json::json!({"token": text, "logprob": lp}));
            }
            let payload = serde_json::json!({
                "caption": words.join(" "),
                "tokens": token_lines,
                "video": args.video.display().to_string(),
            });
            let path = dir.join("caption.json");
            std::fs::write(&path, serde_json::to_string_pretty(&payload).unwrap())
                .map_err(|e| Error::io(&path, e))?;
            Ok(dir)
        }
        Command::Probe(args) => {
            let dir = run_dir(&args.out, "probe")?;
            let target = LabelSpace::parse(&args.target)?;
            let report = training::fit_linear_probe(&args.checkpoint, target, &args.manifest, cli.seed)?;
            report.save(&dir.join("probe_report.json"))?;
            for (split, metrics) in &report.splits {
                for (k, v) in metrics {
                    println!("{split}/{k} = {v:.4}");
                }
            }
            Ok(dir)
        }
        Command::TransferBench(args) => {
            let dir = run_dir(&args.out, "transfer-bench")?;
            let dataset = training::ToyDataset::open(&args.manifest)?;
            let mut backbones: Vec<Box<dyn Backbone>> = Vec::new();
            for spec in &args.backbones {
                if spec == "pixel" {
                    backbones.push(Box::new(PixelGridBackbone::new("pixel", 16, 4)));
                } else if let Some((name, path)) = spec.split_once('=') {
                    backbones.push(Box::new(EncoderBackbone::from_checkpoint(name, Path::new(path))?));
                } else {
                    return Err(Error::Config(format!(
                        "backbone '{spec}' must be 'pixel' or name=checkpoint"
                    )));
                }
            }
            if backbones.is_empty() {
                return Err(Error::Config("transfer-bench needs at least one backbone".into()));
            }
            let heads: Vec<HeadKind> = args
                .heads
                .split(',')
                .map(|h| HeadKind::parse(h.trim()))
                .collect::<Result<_>>()?;
            let shots: Vec<Shots> = args
                .shots
                .split(',')
                .map(|s| Shots::parse(s.trim()))
                .collect::<Result<_>>()?;
            let spec = EpisodeSpec { shots, runs: args.runs, seed: cli.seed };
            let report = transfer::run_benchmark(&mut backbones, &heads, &spec, &dataset)?;
            report.save(&dir.join("benchmark.json"))?;
            plot::benchmark_chart(&report, &dir.join("benchmark.png"))?;
            let mut resolved = FlatConfig::new();
            resolved.set("manifest", args.manifest.display());
            resolved.set("backbones", args.backbones.join(" "));
            resolved.set("heads", &args.heads);
            resolved.set("shots", &args.shots);
            resolved.set("runs", args.runs);
            resolved.set("seed", cli.seed);
            write_resolved(&dir, &resolved)?;
            print!("{}", report.table());
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(dir)
        }
        Command::Explain(args) => {
            let dir = run_dir(&args.out, "explain")?;
            let mut model = JointModel::load(&args.checkpoint)?;
            let frames = videoio::load_frame_dir(&args.video)?;
            let clip = videoio::load_clip(&frames, Mode::Eval, 0)?;
            let volume = match (args.class_id, &args.caption) {
                (Some(class_id), None) => explain::grad_cam_class(&mut model, &clip, class_id)?,
                (None, Some(text)) => {
                    let vocab = model
                        .vocab
                        .clone()
                        .ok_or_else(|| Error::Config("token saliency needs a captioning checkpoint".into()))?;
                    let tokens = corpus::tokenize_caption(text);
                    let max_len = model.decoder.as_ref().map(|d| d.config.max_len).unwrap_or(corpus::MAX_CAPTION_LEN);
                    let seq = corpus::encode_tokens(&tokens, &vocab, max_len);
                    let position = args.token_position.unwrap_or(1);
                    explain::grad_cam_token(&mut model, &clip, &seq, position)?
                }
                _ => {
                    return Err(Error::Config(
                        "pass exactly one of --class-id or --caption (with --token-position)".into(),
                    ))
                }
            };
            let overlay = dir.join("saliency.png");
            explain::render_saliency_overlay(&clip, &volume, &overlay)?;
            if args.export_volume {
                volume.save_npy(&dir.join("saliency.npy"))?;
            }
            println!("overlay: {} (layer {:?})", overlay.display(), volume.layer);
            Ok(dir)
        }
        Command::Report(args) => {
            let dir = run_dir(&args.out, "report")?;
            let mut merged = BTreeMap::new();
            let mut lines = String::new();
            for input in &args.inputs {
                let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
                let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    path: input.clone(),
                    line: 0,
                    message: e.to_string(),
                })?;
                let name = input
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("report")
                    .to_string();
                lines.push_str(&render_report_lines(&name, &value));
                merged.insert(input.display().to_string(), value);
            }
            let summary = serde_json::json!({
                "reports": merged,
                "oracle_fixture_sha256": metrics::fixture_hash(),
            });
            let path = dir.join("summary.json");
            std::fs::write(&path, serde_json::to_string_pretty(&summary).unwrap())
                .map_err(|e| Error::io(&path, e))?;
            let table = dir.join("summary.txt");
            std::fs::write(&table, &lines).map_err(|e| Error::io(&table, e))?;
            print!("{lines}");
            Ok(dir)
        }
    }
}

fn render_report_lines(name: &str, value: &serde_json::Value) -> String {
    let mut out = String::new();
    if let Some(splits) = value.get("splits").and_then(|s| s.as_object()) {
        for (split, metrics) in splits {
            if let Some(metrics) = metrics.as_object() {
                for (k, v) in metrics {
                    if let Some(v) = v.as_f64() {
                        out.push_str(&format!("{name:<28} {split:<6} {k:<24} {v:.4}\n"));
                    }
                }
            }
        }
    }
    if let Some(cells) = value.get("cells").and_then(|c| c.as_array()) {
        for cell in cells {
            let g = |k: &str| cell.get(k).and_then(|v| v.as_str()).unwrap_or("?").to_string();
            let f = |k: &str| cell.get(k).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{name:<28} {:<20} {:<10} {:<8} mean {:.4} ci95 {:.4}\n",
                g("backbone"),
                g("head"),
                g("shots"),
                f("mean"),
                f("ci95")
            ));
        }
    }
    out
}

/// Entry point used by the binary: parse, dispatch, map errors to exit
/// codes (clap handles usage errors with exit 2 itself).
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run_command(cli) {
        Ok(_) => 0,
        Err(e) => {
            let line = serde_json::json!({ "error": e.to_string() });
            eprintln!("{line}");
            1
        }
    }
}
