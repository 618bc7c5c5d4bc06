//! End-to-end runs: data preparation, training, evaluation, grids and the
//! n-gram baseline.
//!
//! A training run writes into its output directory:
//!
//! | file | contents |
//! |------|----------|
//! | `config.json` | the [`RunConfig`] |
//! | `manifest.json` | config echo, input hashes, label map, loader counts |
//! | `split.json` | sample ids of each split |
//! | `vocab.txt` | tokenizer, for internal encoders |
//! | `pretrain.log` | `epoch<TAB>loss`, when pretraining ran |
//! | `train.log` | `epoch<TAB>train_loss<TAB>val_accuracy<TAB>val_f1_weighted<TAB>wall_seconds` |
//! | `model.sqck` | checkpoint of the selected epoch |
//!
//! and appends one results row per split to the results CSV. Reported
//! metrics always come from the checkpoint as written, so `eval` on the
//! checkpoint reproduces them exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seqfuse_core::data::{self, DatasetSplits, LabeledSample};
use seqfuse_core::encoder::EncoderConfig;
use seqfuse_core::metrics::MetricsReport;
use seqfuse_core::model::{HeadKind, Model, ModelConfig, SourceConfig};
use seqfuse_core::ngram::NGramModel;
use seqfuse_core::tokenizer::{train_bpe, BpeVocabulary, TrainOptions};
use seqfuse_core::train::{
    self, Clock, EpochLog, Example, NoClock, PretrainConfig, RunStreams, Sample, TrainConfig,
    TrainReport,
};

use crate::checkpoint::{self, CheckpointMeta};
use crate::dataset::{self, Schema};
use crate::embeddings::{self, ImportedSample};
use crate::error::{read_file, write_file, Error, Result};
use crate::results::{self, ResultsRow, RowMetrics, RunTag};
use crate::vocab;

/// Encoder hyperparameters exposed on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSettings {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub causal: bool,
    pub pre_norm: bool,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            d_model: 64,
            heads: 4,
            layers: 2,
            ffn_dim: 256,
            dropout: 0.1,
            causal: false,
            pre_norm: false,
        }
    }
}

impl EncoderSettings {
    pub fn config(&self, vocab_size: usize, max_len: usize) -> EncoderConfig {
        let mut c = EncoderConfig::new(vocab_size, max_len).with_dims(
            self.d_model,
            self.heads,
            self.layers,
        );
        c.ffn_dim = self.ffn_dim;
        c.dropout = self.dropout;
        c.causal = self.causal;
        c.pre_norm = self.pre_norm;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DataSource {
    Jsonl {
        path: PathBuf,
        schema: Schema,
    },
    /// Precomputed embedding file; the model has no encoder of its own.
    Imported {
        path: PathBuf,
    },
}

impl DataSource {
    pub fn path(&self) -> &Path {
        match self {
            DataSource::Jsonl { path, .. } | DataSource::Imported { path } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_tag: String,
    pub data: DataSource,
    pub out_dir: PathBuf,
    /// Results CSV to append to; `out_dir/results.csv` when absent.
    pub results: Option<PathBuf>,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Existing vocabulary file to use instead of training one.
    pub vocab: Option<PathBuf>,
    /// `None` exactly when the data source is imported.
    pub encoder: Option<EncoderSettings>,
    pub pretrain_epochs: usize,
    pub head: HeadKind,
    pub hidden_units: usize,
    /// Bridge output width; the embedding width when absent.
    pub rnn_input: Option<usize>,
    pub dropout: f64,
    pub train: TrainConfig,
    /// Measure wall time. Off keeps logs and rows byte-reproducible.
    pub record_time: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let imported = matches!(self.data, DataSource::Imported { .. });
        if imported && self.encoder.is_some() {
            return Err(Error::Config(
                "imported embeddings cannot be combined with encoder settings".into(),
            ));
        }
        if !imported && self.encoder.is_none() {
            return Err(Error::Config("token data needs encoder settings".into()));
        }
        if imported
            && (self.train.freeze_encoder || self.pretrain_epochs > 0 || self.vocab.is_some())
        {
            return Err(Error::Config(
                "--freeze-encoder, --pretrain-epochs and --vocab need an internal encoder".into(),
            ));
        }
        if self.max_len < 2 {
            return Err(Error::Config(format!(
                "max length {} is below 2",
                self.max_len
            )));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn results_path(&self) -> PathBuf {
        self.results
            .clone()
            .unwrap_or_else(|| self.out_dir.join("results.csv"))
    }

    fn tag(&self, wall_seconds: f64) -> RunTag {
        RunTag {
            model: self.model_tag.clone(),
            rnn: self.head.name().to_string(),
            lr: self.train.optimizer.lr,
            optimizer: self.train.optimizer.kind.name().to_string(),
            hidden_units: self.hidden_units,
            dropout: self.dropout,
            seed: self.train.seed,
            wall_seconds,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Loaded, deduplicated and split data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub splits: DatasetSplits,
    pub labels: Vec<String>,
    pub skipped_lines: usize,
    pub removed_duplicates: usize,
    pub input_sha256: String,
    /// Embeddings by sample id, for imported sources.
    pub imported: Option<BTreeMap<u64, ImportedSample>>,
}

pub fn prepare(source: &DataSource, seed: u64) -> Result<Prepared> {
    let bytes = read_file(source.path())?;
    let input_sha256 = sha256_hex(&bytes);
    match source {
        DataSource::Jsonl { path, schema } => {
            let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
            let loaded = dataset::parse_jsonl(&text, *schema, path)?;
            let (samples, removed) = data::dedupe(loaded.samples);
            if removed > 0 {
                log::info!("removed {removed} duplicate sample(s)");
            }
            let splits = data::split(samples, seed)?;
            Ok(Prepared {
                splits,
                labels: loaded.labels,
                skipped_lines: loaded.skipped,
                removed_duplicates: removed,
                input_sha256,
                imported: None,
            })
        }
        DataSource::Imported { path } => {
            let samples = embeddings::decode(&bytes, path)?;
            let classes = samples
                .iter()
                .map(|s| s.label as usize + 1)
                .max()
                .unwrap_or(0)
                .max(2);
            let listed = samples
                .iter()
                .enumerate()
                .map(|(i, s)| LabeledSample::new(String::new(), s.label as usize, i as u64))
                .collect();
            let splits = data::split(listed, seed)?;
            Ok(Prepared {
                splits,
                labels: (0..classes).map(|k| k.to_string()).collect(),
                skipped_lines: 0,
                removed_duplicates: 0,
                input_sha256,
                imported: Some(
                    samples
                        .into_iter()
                        .enumerate()
                        .map(|(i, s)| (i as u64, s))
                        .collect(),
                ),
            })
        }
    }
}

impl Prepared {
    pub fn examples(
        &self,
        split: &[LabeledSample],
        vocab: Option<&BpeVocabulary>,
        max_len: usize,
    ) -> Result<Vec<Example>> {
        split
            .iter()
            .map(|s| {
                let sample = match (&self.imported, vocab) {
                    (Some(map), _) => Sample::Embeddings(map[&s.id].embeddings.clone()),
                    (None, Some(v)) => Sample::Tokens(v.encode(&s.code, max_len)?),
                    (None, None) => {
                        return Err(Error::Config("token data needs a vocabulary".into()))
                    }
                };
                Ok(Example {
                    sample,
                    label: s.label,
                })
            })
            .collect()
    }

    pub fn split_named(&self, name: &str) -> Result<&[LabeledSample]> {
        match name {
            "train" => Ok(&self.splits.train),
            "val" => Ok(&self.splits.val),
            "test" => Ok(&self.splits.test),
            _ => Err(Error::Config(format!(
                "unknown split {name:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Serialize)]
struct SplitManifest<'a> {
    seed: u64,
    train: Vec<u64>,
    val: Vec<u64>,
    test: Vec<u64>,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    labels: &'a [String],
    skipped_lines: usize,
    removed_duplicates: usize,
    rng: &'static str,
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub fn format_train_log(epochs: &[EpochLog]) -> String {
    let mut out = String::new();
    for e in epochs {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            e.epoch, e.train_loss, e.val_accuracy, e.val_f1_weighted, e.wall_seconds
        );
    }
    out
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Train, val and test rows, in that order.
    pub rows: Vec<ResultsRow>,
    pub report: TrainReport,
    /// The model as stored in the checkpoint.
    pub model: Model,
    pub checkpoint: PathBuf,
}

impl RunOutcome {
    pub fn row(&self, split: &str) -> Option<&ResultsRow> {
        self.rows.iter().find(|r| r.split == split)
    }
}

pub fn run_train(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("config.json"), cfg)?;

    let seed = cfg.train.seed;
    let prepared = prepare(&cfg.data, seed)?;
    for w in &prepared.splits.warnings {
        log::warn!("{w}");
    }
    let mut inputs = BTreeMap::new();
    inputs.insert(
        cfg.data.path().display().to_string(),
        prepared.input_sha256.clone(),
    );

    let vocabulary = match (&cfg.encoder, &cfg.vocab) {
        (None, _) => None,
        (Some(_), Some(path)) => {
            inputs.insert(path.display().to_string(), sha256_hex(&read_file(path)?));
            Some(vocab::load(path)?)
        }
        (Some(_), None) => {
            let texts = prepared.splits.train.iter().map(|s| s.code.as_str());
            Some(train_bpe(texts, &TrainOptions::new(cfg.vocab_size))?)
        }
    };
    write_json(
        &dir.join("split.json"),
        &SplitManifest {
            seed,
            train: prepared.splits.train.iter().map(|s| s.id).collect(),
            val: prepared.splits.val.iter().map(|s| s.id).collect(),
            test: prepared.splits.test.iter().map(|s| s.id).collect(),
            warnings: &prepared.splits.warnings,
        },
    )?;
    write_json(
        &dir.join("manifest.json"),
        &RunManifest {
            config: cfg,
            inputs,
            labels: &prepared.labels,
            skipped_lines: prepared.skipped_lines,
            removed_duplicates: prepared.removed_duplicates,
            rng: seqfuse_core::RandomSource::ALGORITHM,
        },
    )?;
    let vocab_text = vocabulary.as_ref().map(vocab::to_text);
    if let Some(text) = &vocab_text {
        write_file(&dir.join("vocab.txt"), text.as_bytes())?;
    }

    let v = vocabulary.as_ref();
    let train_set = prepared.examples(&prepared.splits.train, v, cfg.max_len)?;
    let val_set = prepared.examples(&prepared.splits.val, v, cfg.max_len)?;
    let test_set = prepared.examples(&prepared.splits.test, v, cfg.max_len)?;

    let source = match (&cfg.encoder, v) {
        (Some(enc), Some(v)) => SourceConfig::Internal(enc.config(v.len(), cfg.max_len)),
        _ => {
            let dim = prepared
                .imported
                .as_ref()
                .and_then(|m| m.values().next())
                .map(|s| s.embeddings.dim());
            SourceConfig::Imported {
                dim: dim.ok_or_else(|| Error::Config("no imported samples".into()))?,
            }
        }
    };
    let mut model_cfg = ModelConfig::new(source, cfg.head, cfg.hidden_units, prepared.labels.len());
    model_cfg.dropout = cfg.dropout;
    if let Some(w) = cfg.rnn_input {
        model_cfg.rnn_input = w;
    }
    let mut model = Model::new(model_cfg, &mut RunStreams::new(seed).init)?;

    if cfg.pretrain_epochs > 0 {
        let mut pc = PretrainConfig::new(cfg.train.optimizer, cfg.pretrain_epochs, seed);
        pc.batch_size = cfg.train.batch_size;
        let corpus: Vec<_> = train_set
            .iter()
            .filter_map(|e| match &e.sample {
                Sample::Tokens(t) => Some(t.clone()),
                Sample::Embeddings(_) => None,
            })
            .collect();
        let mut log = String::new();
        train::pretrain(&mut model, &corpus, &pc, |epoch, loss| {
            log::info!("pretrain epoch {epoch}: loss {loss:.4}");
            let _ = writeln!(log, "{epoch}\t{loss:.6}");
        })?;
        write_file(&dir.join("pretrain.log"), log.as_bytes())?;
    }

    let clock: Box<dyn Clock> = if cfg.record_time {
        Box::new(WallClock(start))
    } else {
        Box::new(NoClock)
    };
    let report = train::train(
        &mut model,
        &train_set,
        &val_set,
        &cfg.train,
        clock.as_ref(),
        |e| {
            log::info!(
                "epoch {}: loss {:.4}, val accuracy {:.4}, val F1 {:.4}",
                e.epoch,
                e.train_loss,
                e.val_accuracy,
                e.val_f1_weighted
            );
        },
    )?;
    write_file(
        &dir.join("train.log"),
        format_train_log(&report.epochs).as_bytes(),
    )?;

    let wall = if cfg.record_time {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let meta = CheckpointMeta {
        max_len: cfg.max_len,
        labels: prepared.labels.clone(),
        split_seed: seed,
        vocabulary: vocab_text,
        tag: cfg.tag(wall),
    };
    let ckpt_path = dir.join("model.sqck");
    let bytes = checkpoint::encode(&model, &meta)?;
    write_file(&ckpt_path, &bytes)?;
    let (stored, _) = checkpoint::decode(&bytes, &ckpt_path)?;

    let mut rows = Vec::with_capacity(3);
    for (name, set) in [
        ("train", &train_set),
        ("val", &val_set),
        ("test", &test_set),
    ] {
        let eval = train::evaluate(&stored, set)?;
        rows.push(meta.tag.row(name, Some(RowMetrics::from(&eval.report))));
    }
    results::append_csv(&cfg.results_path(), &rows)?;
    Ok(RunOutcome {
        rows,
        report,
        model: stored,
        checkpoint: ckpt_path,
    })
}

/// Forward-only evaluation of a checkpoint on one split of `source`,
/// reconstructed with the checkpoint's split seed.
pub fn run_eval(
    checkpoint_path: &Path,
    source: &DataSource,
    split: &str,
) -> Result<(MetricsReport, ResultsRow)> {
    let (model, meta) = checkpoint::load(checkpoint_path)?;
    let prepared = prepare(source, meta.split_seed)?;
    if prepared.labels.len() != model.config.classes || prepared.labels != meta.labels {
        return Err(seqfuse_core::Error::Data(format!(
            "dataset classes {:?} do not match checkpoint classes {:?}",
            prepared.labels, meta.labels
        ))
        .into());
    }
    let vocabulary = match (&meta.vocabulary, &model.config.source) {
        (Some(text), SourceConfig::Internal(_)) => Some(vocab::from_text(text, checkpoint_path)?),
        (None, SourceConfig::Imported { .. }) if prepared.imported.is_some() => None,
        _ => {
            return Err(Error::Config(
                "checkpoint and data source disagree on tokens versus imported embeddings".into(),
            ))
        }
    };
    let examples = prepared.examples(
        prepared.split_named(split)?,
        vocabulary.as_ref(),
        meta.max_len,
    )?;
    let eval = train::evaluate(&model, &examples)?;
    let row = meta.tag.row(split, Some(RowMetrics::from(&eval.report)));
    Ok((eval.report, row))
}

/// Axes of a hyperparameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lrs: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub hidden_units: Vec<usize>,
    pub heads: Vec<HeadKind>,
}

impl GridSpec {
    pub fn cardinality(&self) -> usize {
        self.lrs.len() * self.dropouts.len() * self.hidden_units.len() * self.heads.len()
    }

    /// One config per grid point, each with its own output directory under
    /// `base.out_dir/runs`.
    pub fn configs(&self, base: &RunConfig) -> Vec<RunConfig> {
        let mut out = Vec::with_capacity(self.cardinality());
        for &lr in &self.lrs {
            for &dropout in &self.dropouts {
                for &hidden in &self.hidden_units {
                    for &head in &self.heads {
                        let mut c = base.clone();
                        c.train.optimizer.lr = lr;
                        c.dropout = dropout;
                        c.hidden_units = hidden;
                        c.head = head;
                        let name = format!(
                            "{}-{}-lr{lr}-h{hidden}-do{dropout}",
                            head.name(),
                            c.train.optimizer.kind.name()
                        );
                        c.out_dir = base.out_dir.join("runs").join(name);
                        c.results = Some(c.out_dir.join("results.csv"));
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// One test row per grid point in grid order, failed runs flagged.
    pub rows: Vec<ResultsRow>,
    pub failed: usize,
}

fn test_row_of(cfg: &RunConfig) -> Option<ResultsRow> {
    let rows = results::read_csv(&cfg.results_path()).ok()?;
    rows.into_iter().rev().find(|r| r.split == "test")
}

/// Runs every grid point and writes `grid.csv`, `best_accuracy.csv` and
/// `best_f1_weighted.csv` into `base.out_dir`. With `worker` set, points run
/// as `worker run --config <path>` child processes, at most `jobs` at a
/// time; otherwise they run in this process one after another.
pub fn run_grid(
    base: &RunConfig,
    spec: &GridSpec,
    jobs: usize,
    worker: Option<&Path>,
) -> Result<GridOutcome> {
    if spec.cardinality() == 0 {
        return Err(Error::Config("grid has an empty axis".into()));
    }
    let configs = spec.configs(base);
    for c in &configs {
        c.validate()?;
        if c.results_path().exists() {
            std::fs::remove_file(c.results_path()).map_err(|e| Error::io(c.results_path(), e))?;
        }
    }
    let mut rows: Vec<ResultsRow> = Vec::with_capacity(configs.len());
    match worker {
        Some(program) if jobs > 1 => {
            let mut outcome: Vec<bool> = vec![false; configs.len()];
            let mut running: Vec<(usize, Child)> = Vec::new();
            let wait = |(i, mut child): (usize, Child), outcome: &mut Vec<bool>| {
                outcome[i] = child.wait().map(|s| s.success()).unwrap_or(false);
            };
            for (i, c) in configs.iter().enumerate() {
                std::fs::create_dir_all(&c.out_dir).map_err(|e| Error::io(&c.out_dir, e))?;
                let path = c.out_dir.join("config.json");
                write_json(&path, c)?;
                if running.len() >= jobs {
                    wait(running.remove(0), &mut outcome);
                }
                let stderr = std::fs::File::create(c.out_dir.join("stderr.log"))
                    .map_err(|e| Error::io(&c.out_dir, e))?;
                match Command::new(program)
                    .arg("run")
                    .arg("--config")
                    .arg(&path)
                    .stdout(Stdio::null())
                    .stderr(stderr)
                    .spawn()
                {
                    Ok(child) => running.push((i, child)),
                    Err(e) => log::warn!("could not start worker for {}: {e}", c.out_dir.display()),
                }
            }
            for r in running.drain(..) {
                wait(r, &mut outcome);
            }
            for (c, ok) in configs.iter().zip(outcome) {
                rows.push(match test_row_of(c).filter(|_| ok) {
                    Some(r) => r,
                    None => c.tag(0.0).row("test", None),
                });
            }
        }
        _ => {
            for c in &configs {
                rows.push(match run_train(c) {
                    Ok(out) => out.row("test").cloned().expect("runs report a test row"),
                    Err(e) => {
                        log::warn!("{}: {e}", c.out_dir.display());
                        c.tag(0.0).row("test", None)
                    }
                });
            }
        }
    }
    let failed = rows.iter().filter(|r| r.failed()).count();
    let mut sorted = rows.clone();
    sorted.sort_by(ResultsRow::grid_order);
    write_file(
        &base.out_dir.join("grid.csv"),
        &results::to_csv(&sorted, true)?,
    )?;
    let best_acc = results::best_rows(&sorted, "test", |m| m.accuracy);
    write_file(
        &base.out_dir.join("best_accuracy.csv"),
        &results::to_csv(&best_acc, true)?,
    )?;
    let best_f1 = results::best_rows(&sorted, "test", |m| m.f1_weighted);
    write_file(
        &base.out_dir.join("best_f1_weighted.csv"),
        &results::to_csv(&best_f1, true)?,
    )?;
    Ok(GridOutcome {
        rows: sorted,
        failed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramSummary {
    pub order: usize,
    pub train_bits: f64,
    pub test_bits: f64,
}

fn ngram_bits<T: Ord + Clone>(
    train_seqs: &[Vec<T>],
    test_seqs: &[Vec<T>],
    order: usize,
    epsilon: f64,
) -> Result<NgramSummary> {
    let model = NGramModel::fit(train_seqs, order)?;
    Ok(NgramSummary {
        order,
        train_bits: model.cross_entropy(train_seqs, epsilon)?,
        test_bits: model.cross_entropy(test_seqs, epsilon)?,
    })
}

/// Fits an order-`order` model on the train split and scores train and
/// test in bits per token. Tokens are BPE ids with `vocabulary`, otherwise
/// whitespace-separated words.
pub fn ngram_report(
    path: &Path,
    schema: Schema,
    seed: u64,
    order: usize,
    vocabulary: Option<&BpeVocabulary>,
    epsilon: f64,
) -> Result<NgramSummary> {
    let prepared = prepare(
        &DataSource::Jsonl {
            path: path.to_path_buf(),
            schema,
        },
        seed,
    )?;
    let (tr, te) = (&prepared.splits.train, &prepared.splits.test);
    match vocabulary {
        Some(v) => {
            let ids =
                |s: &[LabeledSample]| s.iter().map(|x| v.tokenize(&x.code)).collect::<Vec<_>>();
            ngram_bits(&ids(tr), &ids(te), order, epsilon)
        }
        None => {
            let words = |s: &[LabeledSample]| {
                s.iter()
                    .map(|x| x.code.split_whitespace().map(str::to_string).collect())
                    .collect::<Vec<Vec<String>>>()
            };
            ngram_bits(&words(tr), &words(te), order, epsilon)
        }
    }
}
