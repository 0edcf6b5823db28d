//! The `medslot` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use medslot_core::distmatch::{SynonymTable, DEFAULT_MAX_SRC_LEN, DEFAULT_MIN_SCORE};
use medslot_core::dualsemi::DualConfig;
use medslot_core::seq2seq::ModelConfig;
use serde_json::json;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::formats;
use crate::pipeline;
use crate::synth::SynthCorpus;

#[derive(Debug, Parser)]
#[command(
    name = "medslot",
    version,
    about = "Medication slot extraction with sequence-to-sequence models"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, env = "MEDSLOT_SEED", default_value_t = 0)]
    seed: u64,
    /// Suppress progress messages and the evaluation table.
    #[arg(long, global = true)]
    quiet: bool,
    /// Emit progress messages as JSON lines on stderr.
    #[arg(long, global = true)]
    json_logs: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert documents and annotation files into sentence/frame pairs.
    Convert {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn or apply byte pair encoding.
    Bpe {
        #[command(subcommand)]
        command: BpeCommand,
    },
    /// Pair prescription records with note sentences.
    Match {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        notes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_SCORE)]
        min_score: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_SRC_LEN)]
        max_len: usize,
        #[arg(long)]
        dedup: bool,
        /// Synonym table replacing the bundled one.
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a text-to-frame model.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Merges file; both sides are segmented and the codes are stored.
        #[arg(long)]
        bpe: Option<PathBuf>,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train text-to-frame and frame-to-text models jointly on paired and
    /// unpaired data.
    TrainSemi {
        #[arg(long)]
        paired: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Validation pairs; defaults to the paired set.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Unpaired batch size as a multiple of the paired batch size.
        #[arg(long, default_value_t = 1)]
        unpaired_ratio: usize,
        #[arg(long)]
        out_nlu: PathBuf,
        #[arg(long)]
        out_nlg: PathBuf,
        #[arg(long)]
        bpe: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Decode frames for the sentences of a pairs file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted frames against references.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 100)]
        docs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum BpeCommand {
    Learn {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Apply {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 500)]
    embed_dim: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 2.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 70)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 60)]
    max_decode_len: usize,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> Result<ModelConfig> {
        let config = ModelConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            layers: self.layers,
            dropout: self.dropout,
            lr: self.lr,
            clip_norm: self.clip_norm,
            max_epochs: self.epochs,
            batch_size: self.batch_size,
            max_decode_len: self.max_decode_len,
            seed,
        };
        config.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(config)
    }
}

struct Log {
    quiet: bool,
    json: bool,
}

impl Log {
    fn event(&self, event: &str, message: String, fields: serde_json::Value) {
        if self.quiet {
            return;
        }
        let mut err = std::io::stderr().lock();
        if self.json {
            let mut obj = json!({ "event": event, "message": message });
            if let (Some(o), serde_json::Value::Object(f)) = (obj.as_object_mut(), fields) {
                o.extend(f);
            }
            let _ = writeln!(err, "{obj}");
        } else {
            let _ = writeln!(err, "{message}");
        }
    }
}

fn wrote(log: &Log, what: &str, count: usize, path: &Path) {
    log.event(
        "wrote",
        format!("wrote {count} {what} to {}", path.display()),
        json!({ "what": what, "count": count, "path": path }),
    );
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 success, 1 usage error, 2 data error, 3 training
/// divergence.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let log = Log {
        quiet: cli.quiet,
        json: cli.json_logs,
    };
    match dispatch(cli, &log) {
        Ok(()) => 0,
        Err(e) => {
            if log.json {
                eprintln!(
                    "{}",
                    json!({ "event": "error", "message": e.to_string(), "exit_code": e.exit_code() })
                );
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, log: &Log) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Convert {
            docs,
            annotations,
            out,
        } => {
            let pairs = pipeline::convert(&docs, &annotations)?;
            formats::write_pairs(&out, &pairs)?;
            wrote(log, "pairs", pairs.len(), &out);
        }
        Command::Bpe {
            command: BpeCommand::Learn { input, merges, out },
        } => {
            let pairs = formats::read_pair_lines(&input)?;
            let model = pipeline::bpe_learn(&pairs, merges);
            formats::write_merges(&out, &model)?;
            wrote(log, "merges", model.merges().len(), &out);
        }
        Command::Bpe {
            command: BpeCommand::Apply { codes, input, out },
        } => {
            let model = formats::read_merges(&codes)?;
            let pairs = formats::read_pair_lines(&input)?;
            let encoded = pipeline::bpe_apply(&model, &pairs);
            formats::write_jsonl(&out, &encoded)?;
            wrote(log, "pairs", encoded.len(), &out);
        }
        Command::Match {
            records,
            notes,
            min_score,
            max_len,
            dedup,
            synonyms,
            out,
        } => {
            if min_score == 0 {
                return Err(Error::Usage("--min-score must be at least 1".into()));
            }
            let synonyms = match synonyms {
                Some(path) => SynonymTable::parse(&formats::read_text(&path)?)
                    .map_err(|e| Error::format(&path, 1, e.to_string()))?,
                None => SynonymTable::builtin(),
            };
            let records = formats::read_records(&records)?;
            let notes: Vec<formats::NoteLine> = formats::read_jsonl(&notes)?;
            let pairs =
                pipeline::match_records(&records, &notes, min_score, max_len, dedup, &synonyms);
            formats::write_pairs(&out, &pairs)?;
            wrote(log, "pairs", pairs.len(), &out);
        }
        Command::Train {
            pairs,
            val,
            out,
            bpe,
            log: log_path,
            model,
        } => {
            let config = model.config(seed)?;
            let bpe = bpe.map(|p| formats::read_merges(&p)).transpose()?;
            let train = formats::read_pair_lines(&pairs)?;
            let val = formats::read_pair_lines(&val)?;
            let (ckpt, training) = pipeline::train(&train, &val, &config, bpe)?;
            for e in &training.epochs {
                log.event(
                    "epoch",
                    format!(
                        "epoch {} train {:.4} val {:.4}",
                        e.epoch, e.train_loss, e.val_loss
                    ),
                    json!({ "epoch": e.epoch, "train_loss": e.train_loss, "val_loss": e.val_loss }),
                );
            }
            checkpoint::save(&out, &ckpt)?;
            if let Some(p) = log_path {
                formats::write_training_log(&p, &training)?;
            }
            log.event(
                "trained",
                format!(
                    "saved model to {} (best epoch {:?})",
                    out.display(),
                    training.best_epoch
                ),
                json!({ "path": out, "best_epoch": training.best_epoch }),
            );
        }
        Command::TrainSemi {
            paired,
            text,
            frames,
            val,
            alpha,
            beta,
            gamma,
            delta,
            unpaired_ratio,
            out_nlu,
            out_nlg,
            bpe,
            log: log_path,
            model,
        } => {
            let config = model.config(seed)?;
            let cfg = DualConfig {
                alpha,
                beta,
                gamma,
                delta,
                unpaired_batch_ratio: unpaired_ratio,
                nlu: config.clone(),
                nlg: config,
            };
            cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
            let bpe = bpe.map(|p| formats::read_merges(&p)).transpose()?;
            let paired_lines = formats::read_pair_lines(&paired)?;
            let text = formats::read_unpaired_text(&text)?;
            let frames = formats::read_unpaired_frames(&frames)?;
            let val = match val {
                Some(p) => formats::read_pair_lines(&p)?,
                None => paired_lines.clone(),
            };
            let (nlu, nlg, joint) =
                pipeline::train_semi(&paired_lines, &text, &frames, &val, &cfg, bpe)?;
            for e in &joint.epochs {
                log.event(
                    "epoch",
                    format!(
                        "epoch {} nlu {:.4} nlg {:.4} nlg_u {:.4} nlu_u {:.4} val {:.4}",
                        e.epoch,
                        e.nlu_train,
                        e.nlg_train,
                        e.nlg_unpaired,
                        e.nlu_unpaired,
                        e.nlu_val
                    ),
                    json!({
                        "epoch": e.epoch,
                        "nlu_train": e.nlu_train,
                        "nlg_train": e.nlg_train,
                        "nlg_unpaired": e.nlg_unpaired,
                        "nlu_unpaired": e.nlu_unpaired,
                        "nlu_val": e.nlu_val,
                        "nlg_val": e.nlg_val,
                    }),
                );
            }
            checkpoint::save(&out_nlu, &nlu)?;
            checkpoint::save(&out_nlg, &nlg)?;
            if let Some(p) = log_path {
                formats::write_joint_log(&p, &joint)?;
            }
            log.event(
                "trained",
                format!(
                    "saved models to {} and {}",
                    out_nlu.display(),
                    out_nlg.display()
                ),
                json!({ "nlu": out_nlu, "nlg": out_nlg, "best_epoch": joint.best_epoch }),
            );
        }
        Command::Predict { model, input, out } => {
            let ckpt = checkpoint::load(&model)?;
            let inputs = formats::read_pair_lines(&input)?;
            let predictions = pipeline::predict(&ckpt, &inputs)?;
            formats::write_jsonl(&out, &predictions)?;
            wrote(log, "predictions", predictions.len(), &out);
        }
        Command::Evaluate {
            pred,
            reference,
            out,
        } => {
            let predictions = formats::read_pairs(&pred)?;
            let references = formats::read_pairs(&reference)?;
            let report = pipeline::evaluate_pairs(&predictions, &references)?;
            if let Some(p) = &out {
                formats::write_report(p, &report)?;
            }
            if !cli.quiet {
                if log.json {
                    println!("{}", formats::report_json(&report));
                } else {
                    print!("{}", report.render_table("model"));
                }
            }
        }
        Command::Synth { docs, out } => {
            if docs == 0 {
                return Err(Error::Usage("--docs must be at least 1".into()));
            }
            let corpus = SynthCorpus::generate(docs, seed);
            corpus.write(&out)?;
            wrote(log, "documents", corpus.docs.len(), &out);
        }
    }
    Ok(())
}
