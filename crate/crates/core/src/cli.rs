//! Command-line interface. Every command prints one JSON record on stdout.
//!
//! Exit codes: 0 pass, 1 fail (negative verdict), 2 usage or input error.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::attacks::{apply_attack, verify_output_equivalence, AttackKind, AttackRecipe, AttackSpec};
use crate::checkpoint::{read_checkpoint, write_checkpoint, ArchitectureDescriptor};
use crate::error::{Error, Result};
use crate::fpm::file::EncoderFile;
use crate::fpm::optim::OptimizerKind;
use crate::fpm::train::{calibrate, initial_encoder, train_fpm, TrainConfig};
use crate::invariants::{pcs, InvariantTensor, TERMS_PER_LAYER};
use crate::model::{generate_random_model, perturb_checkpoint, ProbeBatch};
use crate::numerics::Rng;
use crate::pipeline::{compare_invariants, fingerprint_checkpoint, PipelineConfig, DEFAULT_THRESHOLD};
use crate::render::DEFAULT_SIZE;
use crate::vocab::{count_frequencies, select_anchor_tokens, Corpus, DEFAULT_K};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "modelprint", version, about = "Weight fingerprints for transformer language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select anchors, stack invariant terms, encode and render.
    Fingerprint {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        /// Anchor count; defaults to the encoder's input size.
        #[arg(long)]
        k: Option<usize>,
        /// Number of final layers; defaults to the encoder's channels / 3.
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_SIZE)]
        size: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// ICS between two invariant files and the same-base verdict.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Apply a seeded camouflage attack.
    Attack {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated subset of linear_qk, linear_vo, permute_ffn, permute_embed.
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that two checkpoints produce the same logits.
    Verify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        against: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 8)]
        probes: usize,
        #[arg(long, default_value_t = 16)]
        probe_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the fingerprint encoder on synthetic tensors.
    TrainFpm {
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        steps_per_epoch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, value_parser = parse_optimizer)]
        optimizer: Option<OptimizerKind>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch metrics as JSON lines.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Rarest-token anchors of a corpus.
    SelectTokens {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter cosine similarity of two checkpoints.
    Pcs {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        against: PathBuf,
    },
    /// Write a random toy checkpoint.
    ToyModel {
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 512)]
        vocab: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a copy of a checkpoint with relative Gaussian weight noise.
    Perturb {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        relative: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic Zipf-distributed token corpus.
    Corpus {
        #[arg(long, default_value_t = 512)]
        vocab: usize,
        #[arg(long, default_value_t = 100_000)]
        tokens: usize,
        #[arg(long, default_value_t = 1.1)]
        zipf: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        _ => Err(format!("unknown optimizer `{s}` (sgd, adam)")),
    }
}

/// A command's JSON record and exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub record: Value,
    pub code: i32,
}

impl Outcome {
    fn pass(record: Value) -> Self {
        Outcome { record, code: EXIT_PASS }
    }

    fn verdict(record: Value, ok: bool) -> Self {
        Outcome {
            record,
            code: if ok { EXIT_PASS } else { EXIT_FAIL },
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Fingerprint {
            ckpt,
            corpus,
            encoder,
            k,
            layers,
            size,
            out,
        } => {
            let model = read_checkpoint(&ckpt).map_err(|e| e.at_stage("load checkpoint"))?;
            let corpus = Corpus::read(&corpus).map_err(|e| e.at_stage("load corpus"))?;
            let encoder = EncoderFile::read(&encoder).map_err(|e| e.at_stage("load encoder"))?;
            let mut cfg = PipelineConfig::for_encoder(&encoder);
            cfg.image_size = size;
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(r) = layers {
                cfg.layer_span = r;
            }
            let art = fingerprint_checkpoint(&model, &corpus, &encoder, &cfg)?;
            fs::create_dir_all(&out)?;
            let inv_path = out.join("invariants.hrit");
            let png_path = out.join("fingerprint.png");
            let meta_path = out.join("metadata.json");
            art.invariants.write(&inv_path)?;
            let sidecar = art.image.write(&png_path)?;
            let record = json!({
                "command": "fingerprint",
                "invariants": file_name(&inv_path),
                "image": file_name(&png_path),
                "image_sidecar": file_name(&sidecar),
                "metadata": art.metadata,
                "anchors": art.anchors.token_ids(),
                "fingerprint": art.fingerprint.v,
            });
            write_json(&meta_path, &record)?;
            Ok(Outcome::pass(json!({
                "command": "fingerprint",
                "metadata_file": path_str(&meta_path),
                "invariants": path_str(&inv_path),
                "image": path_str(&png_path),
                "metadata": art.metadata,
            })))
        }
        Command::Compare { a, b, threshold } => {
            let ta = InvariantTensor::read(&a)?;
            let tb = InvariantTensor::read(&b)?;
            let v = compare_invariants(&ta, &tb, threshold)?;
            Ok(Outcome::verdict(json!({ "command": "compare", "verdict": v }), v.same_base))
        }
        Command::Attack { ckpt, kinds, seed, out } => {
            let model = read_checkpoint(&ckpt)?;
            let kinds: BTreeSet<AttackKind> = match kinds {
                Some(list) => list.iter().map(|s| AttackKind::parse(s)).collect::<Result<_>>()?,
                None => AttackKind::ALL.into_iter().collect(),
            };
            let recipe = AttackRecipe {
                seed,
                kinds,
                arch_hash: model.arch().hash(),
            };
            let spec = AttackSpec::from_recipe(model.arch(), &recipe)?;
            let attacked = apply_attack(&model, &spec)?;
            write_checkpoint(&attacked, &out)?;
            let recipe_path = out.with_extension("recipe.json");
            fs::write(&recipe_path, recipe.to_json())?;
            Ok(Outcome::pass(json!({
                "command": "attack",
                "out": path_str(&out),
                "recipe": serde_json::from_str::<Value>(&recipe.to_json())?,
                "recipe_file": path_str(&recipe_path),
                "checkpoint_hash": attacked.content_hash()?,
            })))
        }
        Command::Verify {
            ckpt,
            against,
            tolerance,
            probes,
            probe_len,
            seed,
        } => {
            let a = read_checkpoint(&ckpt)?;
            let b = read_checkpoint(&against)?;
            let batch = ProbeBatch::random(&mut Rng::new(seed), probes, probe_len, a.arch().vocab_size)?;
            let report = verify_output_equivalence(&a, &b, &batch, tolerance)?;
            let ok = report.passed;
            Ok(Outcome::verdict(json!({ "command": "verify", "report": report }), ok))
        }
        Command::TrainFpm {
            k,
            layers,
            epochs,
            steps_per_epoch,
            lr,
            optimizer,
            seed,
            out,
            metrics,
        } => {
            let mut cfg = TrainConfig::recommended(k, TERMS_PER_LAYER * layers, seed);
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = steps_per_epoch {
                cfg.steps_per_epoch = s;
            }
            if let Some(lr) = lr {
                cfg.lr = lr;
            }
            if let Some(o) = optimizer {
                cfg.optimizer = o;
            }
            let mut lines = Vec::new();
            let file = if cfg.epochs == 0 {
                cfg.validate()?;
                let encoder = initial_encoder(&cfg)?;
                let calibration = calibrate(&encoder, &cfg)?;
                EncoderFile::new(encoder, calibration, Some(cfg))
            } else {
                train_fpm(&cfg, |m| {
                    let line = serde_json::to_string(m).expect("metrics serialize");
                    eprintln!("{line}");
                    lines.push(line);
                })?
                .into_file(&cfg)
            };
            if let Some(path) = &metrics {
                let mut text = lines.join("\n");
                if !text.is_empty() {
                    text.push('\n');
                }
                fs::write(path, text)?;
            }
            file.write(&out)?;
            Ok(Outcome::pass(json!({
                "command": "train-fpm",
                "out": path_str(&out),
                "encoder_hash": file.hash()?,
                "config": cfg,
                "epochs_run": lines.len(),
            })))
        }
        Command::SelectTokens { corpus, k, out } => {
            let corpus = Corpus::read(&corpus)?;
            let stats = count_frequencies(&corpus.tokens, corpus.vocab_size)?;
            let anchors = select_anchor_tokens(&stats, k)?;
            let record = json!({
                "command": "select-tokens",
                "k": anchors.k(),
                "anchor_hash": anchors.hash(),
                "corpus_hash": anchors.corpus_id(),
                "token_ids": anchors.token_ids(),
            });
            if let Some(path) = &out {
                write_json(path, &record)?;
            }
            Ok(Outcome::pass(record))
        }
        Command::Pcs { ckpt, against } => {
            let a = read_checkpoint(&ckpt)?;
            let b = read_checkpoint(&against)?;
            Ok(Outcome::pass(json!({ "command": "pcs", "pcs": pcs(&a, &b)? })))
        }
        Command::ToyModel {
            layers,
            dim,
            heads,
            vocab,
            seed,
            out,
        } => {
            let arch = ArchitectureDescriptor::toy(layers, dim, vocab, heads);
            let model = generate_random_model(&arch, &mut Rng::new(seed))?;
            write_checkpoint(&model, &out)?;
            Ok(Outcome::pass(json!({
                "command": "toy-model",
                "out": path_str(&out),
                "architecture_hash": arch.hash(),
                "checkpoint_hash": model.content_hash()?,
            })))
        }
        Command::Perturb {
            ckpt,
            relative,
            seed,
            out,
        } => {
            let model = read_checkpoint(&ckpt)?;
            let noisy = perturb_checkpoint(&model, relative, &mut Rng::new(seed))?;
            write_checkpoint(&noisy, &out)?;
            Ok(Outcome::pass(json!({
                "command": "perturb",
                "out": path_str(&out),
                "checkpoint_hash": noisy.content_hash()?,
            })))
        }
        Command::Corpus {
            vocab,
            tokens,
            zipf,
            seed,
            out,
        } => {
            let corpus = Corpus::synthetic_zipf(&mut Rng::new(seed), vocab, tokens, zipf);
            corpus.write(&out)?;
            Ok(Outcome::pass(json!({
                "command": "corpus",
                "out": path_str(&out),
                "corpus_hash": corpus.content_hash(),
                "tokens": corpus.tokens.len(),
            })))
        }
    }
}

/// JSON record for a failed command.
pub fn error_record(e: &Error) -> Value {
    let stage = match e {
        Error::Stage { stage, .. } => Some(*stage),
        _ => None,
    };
    json!({ "error": e.to_string(), "stage": stage })
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(out) => {
            println!("{}", out.record);
            out.code
        }
        Err(e) => {
            println!("{}", error_record(&e));
            EXIT_USAGE
        }
    }
}
