//! Command-line surface of the `seqfuse` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use seqfuse_core::data::{synth_corpus, SynthSpec};
use seqfuse_core::heads::RnnVariant;
use seqfuse_core::metrics::MetricsReport;
use seqfuse_core::model::HeadKind;
use seqfuse_core::optim::{OptimizerConfig, OptimizerKind};
use seqfuse_core::tokenizer::{train_bpe, TrainOptions};
use seqfuse_core::train::TrainConfig;

use crate::dataset::{self, Schema};
use crate::error::write_file;
use crate::results::{self, ResultsRow};
use crate::run::{self, DataSource, EncoderSettings, GridSpec, RunConfig};
use crate::vocab;

#[derive(Debug, Parser)]
#[command(
    name = "seqfuse",
    version,
    about = "Encoder plus recurrent-head sequence classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a BPE vocabulary on the code of a JSONL dataset.
    Tokenizer(TokenizerArgs),
    /// Train one model and append its train/val/test rows to the results CSV.
    Train(TrainArgs),
    /// Rerun a training run from a saved config.json.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Train every point of a hyperparameter grid.
    Grid(GridArgs),
    /// Fit and score an n-gram language model.
    Ngram(NgramArgs),
    /// Write the synthetic order-sensitive corpus as generic JSONL.
    Synth(SynthArgs),
}

fn parse_schema(s: &str) -> Result<Schema, String> {
    s.parse()
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    OptimizerKind::parse(s)
        .ok_or_else(|| format!("unknown optimizer {s:?} (expected adamw, nadam or rmsprop)"))
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    if s == "meanpool" {
        return Ok(HeadKind::MeanPool);
    }
    RnnVariant::parse(s)
        .map(HeadKind::Rnn)
        .map_err(|_| format!("unknown head {s:?} (expected lstm, bilstm, gru, bigru or meanpool)"))
}

#[derive(Debug, Args)]
pub struct TokenizerArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "generic", value_parser = parse_schema)]
    pub schema: Schema,
    #[arg(long, default_value_t = 1000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 2)]
    pub min_frequency: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by `train` and `grid`.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSONL dataset.
    #[arg(
        long,
        required_unless_present = "embeddings",
        conflicts_with = "embeddings"
    )]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "generic", value_parser = parse_schema)]
    pub schema: Schema,
    /// Precomputed embedding file used in place of the internal encoder.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Results CSV; defaults to <out>/results.csv.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Value of the results `model` column.
    #[arg(long)]
    pub model_tag: Option<String>,
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1000)]
    pub vocab_size: usize,
    /// Use this vocabulary file instead of training one.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub encoder_dropout: Option<f64>,
    #[arg(long)]
    pub causal: bool,
    #[arg(long)]
    pub pre_norm: bool,
    /// Span-mask denoising epochs before supervised training.
    #[arg(long, default_value_t = 0)]
    pub pretrain_epochs: usize,
    #[arg(long, default_value = "adamw", value_parser = parse_optimizer)]
    pub optimizer: OptimizerKind,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Bridge output width; defaults to the embedding width.
    #[arg(long)]
    pub rnn_input: Option<usize>,
    /// Record wall time in logs and rows (makes them run-dependent).
    #[arg(long)]
    pub record_time: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "gru", value_parser = parse_head)]
    pub rnn: HeadKind,
    #[arg(long, default_value_t = 64)]
    pub hidden_units: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    pub lr: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "gru")]
    pub rnn: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub hidden_units: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub dropout: Vec<f64>,
    /// Worker processes running grid points concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(
        long,
        required_unless_present = "embeddings",
        conflicts_with = "embeddings"
    )]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "generic", value_parser = parse_schema)]
    pub schema: Schema,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also append the row to this results CSV.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NgramArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "generic", value_parser = parse_schema)]
    pub schema: Schema,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// Score BPE tokens from this vocabulary instead of whitespace words.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability floor for unseen events.
    #[arg(long, default_value_t = 1e-10)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub min_fillers: Option<usize>,
    #[arg(long)]
    pub max_fillers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn data_source(
    data: Option<&Path>,
    schema: Schema,
    embeddings: Option<&Path>,
) -> anyhow::Result<DataSource> {
    match (data, embeddings) {
        (Some(path), None) => Ok(DataSource::Jsonl {
            path: path.to_path_buf(),
            schema,
        }),
        (None, Some(path)) => Ok(DataSource::Imported {
            path: path.to_path_buf(),
        }),
        _ => bail!("give exactly one of --data and --embeddings"),
    }
}

impl RunArgs {
    fn encoder(&self) -> anyhow::Result<Option<EncoderSettings>> {
        let touched = self.d_model.is_some()
            || self.heads.is_some()
            || self.layers.is_some()
            || self.ffn_dim.is_some()
            || self.encoder_dropout.is_some()
            || self.causal
            || self.pre_norm;
        if self.embeddings.is_some() {
            if touched {
                bail!("encoder flags cannot be combined with --embeddings");
            }
            return Ok(None);
        }
        let mut e = EncoderSettings::default();
        if let Some(d) = self.d_model {
            e.d_model = d;
            e.ffn_dim = 4 * d;
        }
        e.heads = self.heads.unwrap_or(e.heads);
        e.layers = self.layers.unwrap_or(e.layers);
        e.ffn_dim = self.ffn_dim.unwrap_or(e.ffn_dim);
        e.dropout = self.encoder_dropout.unwrap_or(e.dropout);
        e.causal = self.causal;
        e.pre_norm = self.pre_norm;
        Ok(Some(e))
    }

    fn config(
        &self,
        lr: f64,
        head: HeadKind,
        hidden_units: usize,
        dropout: f64,
    ) -> anyhow::Result<RunConfig> {
        let data = data_source(
            self.data.as_deref(),
            self.schema,
            self.embeddings.as_deref(),
        )?;
        let default_tag = if self.embeddings.is_some() {
            "imported"
        } else {
            "toy-encoder"
        };
        let mut optimizer = OptimizerConfig::new(self.optimizer, lr);
        if let Some(wd) = self.weight_decay {
            optimizer = optimizer.with_weight_decay(wd);
        }
        let mut train = TrainConfig::new(optimizer, self.seed);
        train.epochs = self.epochs;
        train.batch_size = self.batch_size;
        train.freeze_encoder = self.freeze_encoder;
        train.clip_norm = self.clip_norm;
        let cfg = RunConfig {
            model_tag: self
                .model_tag
                .clone()
                .unwrap_or_else(|| default_tag.to_string()),
            data,
            out_dir: self.out.clone(),
            results: self.results.clone(),
            max_len: self.max_len,
            vocab_size: self.vocab_size,
            vocab: self.vocab.clone(),
            encoder: self.encoder()?,
            pretrain_epochs: self.pretrain_epochs,
            head,
            hidden_units,
            rnn_input: self.rnn_input,
            dropout,
            train,
            record_time: self.record_time,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn print_report(
    out: &mut impl Write,
    report: &MetricsReport,
    labels: &[String],
) -> std::io::Result<()> {
    writeln!(out, "accuracy           {:.6}", report.accuracy)?;
    let w = &report.weighted;
    let m = &report.macro_avg;
    writeln!(
        out,
        "weighted P/R/F1    {:.6} {:.6} {:.6}",
        w.precision, w.recall, w.f1
    )?;
    writeln!(
        out,
        "macro P/R/F1       {:.6} {:.6} {:.6}",
        m.precision, m.recall, m.f1
    )?;
    writeln!(out, "class\tsupport\tprecision\trecall\tf1")?;
    for (j, c) in report.per_class.iter().enumerate() {
        let name = labels.get(j).map(String::as_str).unwrap_or("?");
        writeln!(
            out,
            "{name}\t{}\t{:.6}\t{:.6}\t{:.6}",
            report.supports[j], c.precision, c.recall, c.f1
        )?;
    }
    Ok(())
}

fn print_rows(rows: &[ResultsRow]) -> anyhow::Result<()> {
    std::io::stdout().write_all(&results::to_csv(rows, true)?)?;
    Ok(())
}

/// Runs one parsed command. `Ok(false)` means the command finished but
/// some of its work failed.
pub fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Tokenizer(a) => {
            let loaded = dataset::load_jsonl(&a.corpus, a.schema)?;
            let mut opts = TrainOptions::new(a.vocab_size);
            opts.min_frequency = a.min_frequency;
            let v = train_bpe(loaded.samples.iter().map(|s| s.code.as_str()), &opts)?;
            vocab::save(&v, &a.out)?;
            println!(
                "{} tokens, {} merges -> {}",
                v.len(),
                v.merges().len(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let cfg = a.run.config(a.lr, a.rnn, a.hidden_units, a.dropout)?;
            let out = run::run_train(&cfg)?;
            print_rows(&out.rows)?;
        }
        Command::Run { config } => {
            let text =
                std::fs::read_to_string(&config).with_context(|| config.display().to_string())?;
            let cfg: RunConfig =
                serde_json::from_str(&text).with_context(|| config.display().to_string())?;
            let out = run::run_train(&cfg)?;
            print_rows(&out.rows)?;
        }
        Command::Eval(a) => {
            let source = data_source(a.data.as_deref(), a.schema, a.embeddings.as_deref())?;
            let (report, row) = run::run_eval(&a.checkpoint, &source, &a.split)?;
            let (_, meta) = crate::checkpoint::load(&a.checkpoint)?;
            print_report(&mut std::io::stdout(), &report, &meta.labels)?;
            print_rows(std::slice::from_ref(&row))?;
            if let Some(path) = &a.results {
                results::append_csv(path, &[row])?;
            }
        }
        Command::Grid(a) => {
            let heads = a
                .rnn
                .iter()
                .map(|s| parse_head(s))
                .collect::<Result<Vec<_>, _>>()
                .map_err(anyhow::Error::msg)?;
            let spec = GridSpec {
                lrs: a.lr.clone(),
                dropouts: a.dropout.clone(),
                hidden_units: a.hidden_units.clone(),
                heads,
            };
            let base = a.run.config(
                spec.lrs[0],
                spec.heads[0],
                spec.hidden_units[0],
                spec.dropouts[0],
            )?;
            let worker = std::env::current_exe().ok();
            let out = run::run_grid(&base, &spec, a.jobs, worker.as_deref())?;
            print_rows(&out.rows)?;
            if out.failed > 0 {
                eprintln!("{} of {} grid runs failed", out.failed, out.rows.len());
                return Ok(false);
            }
        }
        Command::Ngram(a) => {
            let v = a.vocab.as_deref().map(vocab::load).transpose()?;
            let s = run::ngram_report(&a.data, a.schema, a.seed, a.order, v.as_ref(), a.epsilon)?;
            println!("order\ttrain_bits_per_token\ttest_bits_per_token");
            println!("{}\t{:.6}\t{:.6}", s.order, s.train_bits, s.test_bits);
        }
        Command::Synth(a) => {
            let mut spec = SynthSpec::new(a.classes, a.per_class, a.seed);
            spec.min_fillers = a.min_fillers.unwrap_or(spec.min_fillers);
            spec.max_fillers = a.max_fillers.unwrap_or(spec.max_fillers);
            let samples = synth_corpus(&spec)?;
            write_file(&a.out, dataset::to_generic_jsonl(&samples).as_bytes())?;
            println!("{} samples -> {}", samples.len(), a.out.display());
        }
    }
    Ok(true)
}

/// Parses `args`, runs the command and maps the outcome to an exit code:
/// 0 on full success, 1 when any work failed, 2 for usage errors.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", chain.join(": "));
            1
        }
    }
}
