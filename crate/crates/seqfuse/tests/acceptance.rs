//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p seqfuse --test acceptance -- 4 9`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};

use seqfuse::dataset::{self, Schema};
use seqfuse::run::{prepare, DataSource};
use seqfuse_core::data::{split, synth_corpus, LabeledSample, SynthSpec};
use seqfuse_core::encoder::{
    self, AttentionParams, Encoder, EncoderConfig, FeedForwardParams, LayerNormParams,
};
use seqfuse_core::gradcheck::check_gradients;
use seqfuse_core::heads::{
    self, BiRnnParams, BridgeParams, CellKind, ClassifierParams, RnnCellParams, RnnVariant,
};
use seqfuse_core::metrics;
use seqfuse_core::model::{HeadKind, Model, ModelConfig, SourceConfig};
use seqfuse_core::ngram::{NGramModel, Symbol};
use seqfuse_core::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use seqfuse_core::params::{self, Bound, ParamStore};
use seqfuse_core::tokenizer::{pad_ids, train_bpe, BpeVocabulary, TrainOptions};
use seqfuse_core::train::{evaluate, train, Example, NoClock, RunStreams, TrainConfig};
use seqfuse_core::{RandomSource, Tape, Tensor, Var};

// Gradient suite.
const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: u64 = 5;
const GRAD_BUDGET_S: f64 = 60.0;

// Metric oracle.
const METRIC_TRIALS: usize = 1000;
const METRIC_MAX_K: usize = 6;
const METRIC_MAX_N: usize = 200;
const METRIC_TOL: f64 = 1e-12;

const CAUSAL_TRIALS: u64 = 100;

// Optimizer suite.
const OPT_LR: f64 = 0.01;
const OPT_STEPS: usize = 500;
const OPT_TARGET_NORM: f64 = 0.05;
const DECAY: f64 = 0.1;
const DECAY_TOL: f64 = 1e-10;

// Overfit run.
const OVERFIT_PER_CLASS: usize = 50;
const OVERFIT_EPOCHS: usize = 30;
const OVERFIT_MIN_ACC: f64 = 0.95;
const OVERFIT_BUDGET_S: f64 = 120.0;

// Recurrent head versus mean pooling.
const GAP_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const GAP_PER_CLASS: usize = 100;
const GAP_EPOCHS: usize = 20;
const GAP_MIN_PP: f64 = 5.0;

// Shared toy-encoder settings.
const VOCAB: usize = 600;
const MAX_LEN: usize = 96;
const D_MODEL: usize = 64;
const HEADS: usize = 4;
const LAYERS: usize = 2;
const HIDDEN: usize = 32;
const DROPOUT: f64 = 0.1;
const LR: f64 = 1e-3;
const BATCH: usize = 8;

const SPLIT_RECORDS: usize = 25_400;
const SPLIT_SIZES: (usize, usize, usize) = (20_320, 2_540, 2_540);

fn random(shape: &[usize], rng: &mut RandomSource) -> Tensor {
    params::uniform(shape, 1.0, rng)
}

/// Weighted sum of every output element, so each one carries its own
/// coefficient in the checked scalar.
fn contract(tape: &mut Tape, out: Var, seed: u64) -> seqfuse_core::Result<Var> {
    let w = random(tape.shape(out), &mut RandomSource::new(seed));
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn store_error<F>(store: &ParamStore, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> seqfuse_core::Result<Var>,
{
    Ok(check_gradients(
        |tape, vars| f(tape, &Bound::from_vars(vars.to_vec())),
        store.tensors(),
        FD_STEP,
    )?)
}

fn layer_error(layer: &str, seed: u64) -> Result<f64> {
    let mut rng = RandomSource::new(seed);
    let mut store = ParamStore::new();
    let x = random(&[4, 6], &mut rng);
    match layer {
        "embedding" | "denoising head" => {
            let mut cfg = EncoderConfig::new(12, 6).with_dims(6, 2, 1);
            cfg.dropout = 0.0;
            let enc = Encoder::new(cfg, &mut store, &mut rng)?;
            let tokens = pad_ids(vec![5, 7, 2, 9, 5], 6);
            if layer == "embedding" {
                store_error(&store, |t, b| {
                    let e = enc.embed_tokens(t, b, &tokens)?;
                    contract(t, e, seed)
                })
            } else {
                store_error(&store, |t, b| {
                    enc.denoising_loss(
                        t,
                        b,
                        &tokens,
                        &[(2, 8), (3, 6)],
                        false,
                        &mut RandomSource::new(0),
                    )
                })
            }
        }
        "attention" | "masked attention" => {
            let attn = AttentionParams::new("attn", 6, 2, &mut store, &mut rng);
            let causal = layer == "masked attention";
            store_error(&store, |t, b| {
                let xv = t.constant(x.clone());
                let m = t.constant(encoder::attention_mask(4, causal, &[1, 1, 1, 0]));
                let o = encoder::multi_head_attention(t, b, &attn, xv, Some(m))?;
                contract(t, o, seed)
            })
        }
        "pfnn" => {
            let ffn = FeedForwardParams::new("ffn", 6, 12, &mut store, &mut rng);
            store_error(&store, |t, b| {
                let xv = t.constant(x.clone());
                let o = ffn.forward(t, b, xv)?;
                contract(t, o, seed)
            })
        }
        "layer norm" => {
            let ln = LayerNormParams::new("ln", 6, &mut store);
            for p in store.tensors_mut() {
                *p = random(p.shape(), &mut rng);
            }
            store_error(&store, |t, b| {
                let xv = t.constant(x.clone());
                let o = ln.forward(t, b, xv, 1e-5)?;
                contract(t, o, seed)
            })
        }
        "bridge" => {
            let bridge = BridgeParams::new("bridge", 6, 3, &mut store, &mut rng);
            store_error(&store, |t, b| {
                let xv = t.constant(x.clone());
                let o = bridge.forward(t, b, xv)?;
                contract(t, o, seed)
            })
        }
        "vanilla cell" | "lstm cell" | "gru cell" => {
            let kind = match layer {
                "vanilla cell" => CellKind::Vanilla,
                "lstm cell" => CellKind::Lstm,
                _ => CellKind::Gru,
            };
            let cell = RnnCellParams::new("cell", kind, 6, 4, &mut store, &mut rng);
            store_error(&store, |t, b| {
                let xv = t.constant(x.clone());
                let (states, _) = heads::rnn_forward(t, b, &cell, xv, 3)?;
                contract(t, states, seed)
            })
        }
        "bilstm head" | "bigru head" => {
            let kind = if layer == "bilstm head" {
                CellKind::Lstm
            } else {
                CellKind::Gru
            };
            let bi = BiRnnParams::new("bi", kind, 6, 3, &mut store, &mut rng);
            let cls = ClassifierParams::new("cls", 6, 5, 3, 0.0, &mut store, &mut rng)?;
            store_error(&store, |t, b| {
                let xv = t.constant(x.clone());
                let states = heads::birnn_forward(t, b, &bi, xv, 3)?;
                let p = heads::classify(
                    t,
                    b,
                    &cls,
                    states,
                    3,
                    true,
                    &mut RandomSource::new(0),
                    false,
                )?;
                t.nll(p, &[1])
            })
        }
        "fc classifier" => {
            let cls = ClassifierParams::new("cls", 6, 5, 3, 0.0, &mut store, &mut rng)?;
            let summary = random(&[1, 6], &mut rng);
            store_error(&store, |t, b| {
                let s = t.constant(summary.clone());
                let p = cls.probabilities(t, b, s)?;
                t.nll(p, &[2])
            })
        }
        other => bail!("unknown layer {other}"),
    }
}

fn gradient_suite() -> Result<String> {
    let layers = [
        "embedding",
        "attention",
        "masked attention",
        "pfnn",
        "layer norm",
        "bridge",
        "vanilla cell",
        "lstm cell",
        "gru cell",
        "bilstm head",
        "bigru head",
        "fc classifier",
        "denoising head",
    ];
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    for layer in layers {
        for seed in 0..GRAD_INSTANCES {
            let err = layer_error(layer, seed).with_context(|| format!("{layer} seed {seed}"))?;
            ensure!(
                err < GRAD_TOL,
                "{layer} seed {seed}: relative error {err:.3e}"
            );
            if err > worst.0 {
                worst = (err, layer);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < GRAD_BUDGET_S, "took {secs:.1} s");
    Ok(format!(
        "{} layers x {GRAD_INSTANCES} instances, worst {:.2e} ({}), {secs:.1} s",
        layers.len(),
        worst.0,
        worst.1
    ))
}

/// Pair-counting reference: every quantity is a count over (truth, pred)
/// pairs, with 0 for empty denominators.
fn oracle(truth: &[usize], pred: &[usize], k: usize) -> [f64; 7] {
    let n = truth.len() as f64;
    let count = |f: &dyn Fn(usize, usize) -> bool| {
        truth.iter().zip(pred).filter(|(&t, &p)| f(t, p)).count() as f64
    };
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let harmonic = |p: f64, r: f64| {
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };
    let (mut wp, mut wr, mut wf, mut mp, mut mr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..k {
        let tp = count(&|t, p| t == j && p == j);
        let support = count(&|t, _| t == j);
        let precision = ratio(tp, count(&|_, p| p == j));
        let recall = ratio(tp, support);
        wp += precision * support / n;
        wr += recall * support / n;
        wf += harmonic(precision, recall) * support / n;
        mp += precision / k as f64;
        mr += recall / k as f64;
    }
    [
        count(&|t, p| t == p) / n,
        wp,
        wr,
        wf,
        mp,
        mr,
        harmonic(mp, mr),
    ]
}

fn metric_oracle() -> Result<String> {
    let mut rng = RandomSource::new(2024);
    let mut worst = 0.0f64;
    for trial in 0..METRIC_TRIALS {
        let k = 2 + rng.below(METRIC_MAX_K - 1);
        let n = 1 + rng.below(METRIC_MAX_N);
        let truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let r = metrics::report(&truth, &pred, k)?;
        let got = [
            r.accuracy,
            r.weighted.precision,
            r.weighted.recall,
            r.weighted.f1,
            r.macro_avg.precision,
            r.macro_avg.recall,
            r.macro_avg.f1,
        ];
        for (g, w) in got.iter().zip(oracle(&truth, &pred, k)) {
            let d = (g - w).abs();
            ensure!(d < METRIC_TOL, "trial {trial} (K={k}, n={n}): {g} vs {w}");
            worst = worst.max(d);
        }
    }
    let r = metrics::report(&[0, 0, 0, 1], &[0, 0, 1, 1], 2)?;
    let cm = metrics::confusion(&[0, 0, 0, 1], &[0, 0, 1, 1], 2)?;
    ensure!(
        [cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)] == [2, 1, 0, 1],
        "fixture confusion matrix"
    );
    for (name, got, want) in [
        ("accuracy", r.accuracy, 0.75),
        ("weighted F1", r.weighted.f1, 23.0 / 30.0),
        ("macro F1", r.macro_avg.f1, 15.0 / 19.0),
    ] {
        ensure!(
            (got - want).abs() < METRIC_TOL,
            "fixture {name}: {got} vs {want}"
        );
    }
    Ok(format!(
        "{METRIC_TRIALS} labelings, worst {worst:.1e}; fixture acc {:.5} F1w {:.5} F1m {:.5}",
        r.accuracy, r.weighted.f1, r.macro_avg.f1
    ))
}

fn causal_mask() -> Result<String> {
    let mut attention_rows = 0;
    let mut encoder_rows = 0;
    for trial in 0..CAUSAL_TRIALS {
        let mut rng = RandomSource::new(trial);
        let n = 2 + rng.below(11);
        let cut = rng.below(n - 1);

        let mut store = ParamStore::new();
        let attn = AttentionParams::new("attn", 8, 2, &mut store, &mut rng);
        let x = random(&[n, 8], &mut rng);
        let mut y = x.clone();
        for v in &mut y.data_mut()[(cut + 1) * 8..] {
            *v = rng.uniform(-3.0, 3.0);
        }
        let attend = |input: &Tensor| -> Result<Tensor> {
            let mut tape = Tape::new();
            let b = store.bind_constant(&mut tape);
            let xv = tape.constant(input.clone());
            let m = tape.constant(encoder::attention_mask(n, true, &vec![1; n]));
            let o = encoder::multi_head_attention(&mut tape, &b, &attn, xv, Some(m))?;
            Ok(tape.value(o).clone())
        };
        let (a, b) = (attend(&x)?, attend(&y)?);
        for i in 0..=cut {
            ensure!(
                a.row(i) == b.row(i),
                "trial {trial}: attention row {i} changed"
            );
            attention_rows += 1;
        }

        let mut cfg = EncoderConfig::new(40, 16).with_dims(8, 2, 2);
        cfg.causal = true;
        let mut store = ParamStore::new();
        let enc = Encoder::new(cfg, &mut store, &mut rng)?;
        let ids: Vec<u32> = (0..n).map(|_| 5 + rng.below(35) as u32).collect();
        let mut changed = ids.clone();
        for t in &mut changed[cut + 1..] {
            *t = 5 + (*t - 5 + 1 + rng.below(34) as u32) % 35;
        }
        let a = enc.embed(&store, &pad_ids(ids, 16))?;
        let b = enc.embed(&store, &pad_ids(changed, 16))?;
        for i in 0..=cut {
            ensure!(
                a.vectors.row(i) == b.vectors.row(i),
                "trial {trial}: encoder row {i} changed"
            );
            encoder_rows += 1;
        }
    }
    Ok(format!(
        "{CAUSAL_TRIALS} inputs, {attention_rows} attention rows and {encoder_rows} encoder rows unchanged"
    ))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn optimizer_suite() -> Result<String> {
    let mut reached = Vec::new();
    for kind in [
        OptimizerKind::AdamW,
        OptimizerKind::NAdam,
        OptimizerKind::RmsProp,
    ] {
        let mut theta = vec![0.5; 4];
        let mut opt = OptimizerState::new(OptimizerConfig::new(kind, OPT_LR), [theta.len()])?;
        let mut first = None;
        for step in 1..=OPT_STEPS {
            let grad: Vec<f64> = theta.iter().map(|v| 2.0 * v).collect();
            opt.step_slices(&mut [&mut theta], &[&grad], &[true])?;
            if first.is_none() && norm(&theta) < OPT_TARGET_NORM {
                first = Some(step);
            }
        }
        let Some(step) = first else {
            bail!(
                "{} never reached |theta| < {OPT_TARGET_NORM} (final {:.4})",
                kind.name(),
                norm(&theta)
            );
        };
        reached.push(format!("{} at step {step}", kind.name()));
    }

    let start = vec![1.0, -2.0, 0.5, 3.0];
    let mut theta = start.clone();
    let cfg = OptimizerConfig::new(OptimizerKind::AdamW, OPT_LR).with_weight_decay(DECAY);
    let mut opt = OptimizerState::new(cfg, [theta.len()])?;
    let zero = vec![0.0; theta.len()];
    let mut worst = 0.0f64;
    for t in 1..=1000 {
        opt.step_slices(&mut [&mut theta], &[&zero], &[true])?;
        let factor = (1.0 - OPT_LR * DECAY).powi(t);
        for (v, s) in theta.iter().zip(&start) {
            worst = worst.max((v - s * factor).abs());
        }
    }
    ensure!(worst < DECAY_TOL, "decoupled decay off by {worst:.3e}");
    Ok(format!(
        "{}; decay identity within {worst:.1e}",
        reached.join(", ")
    ))
}

fn encode_all(vocab: &BpeVocabulary, samples: &[LabeledSample]) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| Ok(Example::tokens(vocab.encode(&s.code, MAX_LEN)?, s.label)))
        .collect()
}

fn fit(
    head: HeadKind,
    train_set: &[Example],
    val_set: &[Example],
    vocab: usize,
    epochs: usize,
    seed: u64,
) -> Result<Model> {
    let mut enc = EncoderConfig::new(vocab, MAX_LEN).with_dims(D_MODEL, HEADS, LAYERS);
    enc.dropout = DROPOUT;
    let mut cfg = ModelConfig::new(SourceConfig::Internal(enc), head, HIDDEN, 2);
    cfg.dropout = DROPOUT;
    let mut model = Model::new(cfg, &mut RunStreams::new(seed).init)?;
    let mut tc = TrainConfig::new(OptimizerConfig::new(OptimizerKind::AdamW, LR), seed);
    tc.epochs = epochs;
    tc.batch_size = BATCH;
    train(&mut model, train_set, val_set, &tc, &NoClock, |_| {})?;
    Ok(model)
}

fn pipeline_overfit() -> Result<String> {
    let corpus = synth_corpus(&SynthSpec::new(2, OVERFIT_PER_CLASS, 1))?;
    let vocab = train_bpe(
        corpus.iter().map(|s| s.code.as_str()),
        &TrainOptions::new(VOCAB),
    )?;
    let examples = encode_all(&vocab, &corpus)?;
    let head = HeadKind::Rnn(RnnVariant::Gru);

    let start = Instant::now();
    let model = fit(head, &examples, &examples, vocab.len(), OVERFIT_EPOCHS, 1)?;
    let secs = start.elapsed().as_secs_f64();
    let acc = evaluate(&model, &examples)?.report.accuracy;

    let again = fit(head, &examples, &examples, vocab.len(), OVERFIT_EPOCHS, 1)?;
    ensure!(
        again.params == model.params,
        "rerun with the same seed gave different parameters"
    );
    ensure!(acc >= OVERFIT_MIN_ACC, "train accuracy {acc:.3}");
    ensure!(secs < OVERFIT_BUDGET_S, "took {secs:.1} s");
    Ok(format!(
        "train accuracy {acc:.3} after {OVERFIT_EPOCHS} epochs in {secs:.1} s, rerun identical"
    ))
}

fn recurrent_gap() -> Result<String> {
    let mut gru = Vec::new();
    let mut pooled = Vec::new();
    for seed in GAP_SEEDS {
        let corpus = synth_corpus(&SynthSpec::new(2, GAP_PER_CLASS, seed))?;
        let s = split(corpus, seed)?;
        let vocab = train_bpe(
            s.train.iter().map(|x| x.code.as_str()),
            &TrainOptions::new(VOCAB),
        )?;
        let (tr, va, te) = (
            encode_all(&vocab, &s.train)?,
            encode_all(&vocab, &s.val)?,
            encode_all(&vocab, &s.test)?,
        );
        for (head, out) in [
            (HeadKind::Rnn(RnnVariant::Gru), &mut gru),
            (HeadKind::MeanPool, &mut pooled),
        ] {
            let model = fit(head, &tr, &va, vocab.len(), GAP_EPOCHS, seed)?;
            out.push(evaluate(&model, &te)?.report.accuracy);
        }
    }
    let mean = |v: &[f64]| 100.0 * v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&gru) - mean(&pooled);
    let detail = format!(
        "GRU {:.1}% vs mean-pool {:.1}% over {} seeds, gap {gap:.1} pp",
        mean(&gru),
        mean(&pooled),
        GAP_SEEDS.len()
    );
    ensure!(gap >= GAP_MIN_PP, "{detail}");
    Ok(detail)
}

fn seqfuse(args: &[&str], dir: &Path) -> Result<Vec<u8>> {
    let out = Command::new(env!("CARGO_BIN_EXE_seqfuse"))
        .args(args)
        .current_dir(dir)
        .output()?;
    ensure!(
        out.status.success(),
        "seqfuse {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(out.stdout)
}

fn train_determinism() -> Result<String> {
    let dir = tempfile::tempdir()?;
    seqfuse(
        &[
            "synth",
            "--per-class",
            "30",
            "--seed",
            "4",
            "--out",
            "data.jsonl",
        ],
        dir.path(),
    )?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let stdout = seqfuse(
            &[
                "train",
                "--data",
                "data.jsonl",
                "--out",
                run,
                "--max-len",
                "64",
                "--vocab-size",
                "300",
                "--d-model",
                "16",
                "--heads",
                "2",
                "--layers",
                "1",
                "--epochs",
                "2",
                "--batch-size",
                "8",
                "--hidden-units",
                "8",
                "--seed",
                "9",
            ],
            dir.path(),
        )?;
        let checkpoint = std::fs::read(dir.path().join(run).join("model.sqck"))?;
        let results = std::fs::read(dir.path().join(run).join("results.csv"))?;
        outputs.push((stdout, checkpoint, results));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    ensure!(a.0 == b.0, "printed rows differ");
    ensure!(a.2 == b.2, "results files differ");
    ensure!(a.1 == b.1, "checkpoints differ");
    Ok(format!(
        "rows and {}-byte checkpoint identical across two runs",
        a.1.len()
    ))
}

fn split_arithmetic() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("synth.jsonl");
    let corpus = synth_corpus(&SynthSpec::new(2, SPLIT_RECORDS / 2, 0))?;
    std::fs::write(&path, dataset::to_generic_jsonl(&corpus))?;
    let loaded = dataset::load_jsonl(&path, Schema::Generic)?;
    ensure!(
        loaded.samples.len() == SPLIT_RECORDS,
        "loaded {} records",
        loaded.samples.len()
    );
    let p = prepare(
        &DataSource::Jsonl {
            path,
            schema: Schema::Generic,
        },
        0,
    )?;
    ensure!(
        p.removed_duplicates == 0,
        "{} duplicates removed",
        p.removed_duplicates
    );
    let sizes = p.splits.sizes();
    ensure!(sizes == SPLIT_SIZES, "split sizes {sizes:?}");
    Ok(format!(
        "{SPLIT_RECORDS} records -> {}/{}/{}",
        sizes.0, sizes.1, sizes.2
    ))
}

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

fn ngram_suite() -> Result<String> {
    let tok = |c: char| Symbol::Token(c);

    let abab = NGramModel::fit([chars("abab")], 2)?;
    ensure!(
        abab.probability(&['a'], &'b')? == 1.0 && abab.probability(&['b'], &'a')? == 1.0,
        "abab bigram"
    );

    let abac = NGramModel::fit([chars("abac")], 2)?;
    ensure!(
        abac.probability(&['a'], &'b')? == 0.5 && abac.probability(&['a'], &'c')? == 0.5,
        "abac bigram"
    );
    ensure!(
        abac.count_ratio(&[tok('a')], &'b')? == Some((1, 2)),
        "abac count ratio"
    );
    ensure!(
        abac.probability(&['a'], &'a')? == 0.0,
        "unseen token in a seen context"
    );
    ensure!(
        abac.probability(&['c'], &'a')? == 1.0 / 3.0,
        "unseen context falls back to 1/|V|"
    );
    ensure!(
        abac.probability(&[], &'a').is_err(),
        "short context accepted"
    );

    let unigram = NGramModel::fit([chars("abac")], 1)?;
    ensure!(
        unigram.probability(&[], &'a')? == 0.5 && unigram.probability(&[], &'b')? == 0.25,
        "unigram"
    );
    ensure!(
        NGramModel::<char>::fit([chars("ab")], 0).is_err(),
        "order 0 accepted"
    );

    let deterministic = [chars("abcd")];
    let self_bits =
        NGramModel::fit(deterministic.clone(), 2)?.cross_entropy(deterministic, 1e-10)?;
    ensure!(
        self_bits == 0.0,
        "self-scored deterministic corpus gives {self_bits} bits"
    );
    let coin = NGramModel::fit([chars("ab")], 1)?.cross_entropy([chars("ab")], 1e-10)?;
    ensure!(coin == 1.0, "two equiprobable tokens give {coin} bits");
    let floored = NGramModel::fit([chars("ab")], 2)?.cross_entropy([chars("b")], 2f64.powi(-20))?;
    ensure!(floored == 20.0, "floored unseen event gives {floored} bits");

    let mut rng = RandomSource::new(17);
    let corpus: Vec<Vec<u8>> = (0..12)
        .map(|_| (0..1 + rng.below(30)).map(|_| rng.below(6) as u8).collect())
        .collect();
    let mut contexts = 0;
    for order in 1..=4 {
        let model = NGramModel::fit(&corpus, order)?;
        for (ctx, total) in model.contexts() {
            let counts: u64 = model.continuations(ctx).map(|(_, c)| c).sum();
            ensure!(
                counts == total,
                "order {order}: counts {counts} vs total {total}"
            );
            let mut numerators = 0;
            for t in model.vocabulary() {
                match model.count_ratio(ctx, t)? {
                    Some((n, d)) if d == total => numerators += n,
                    other => bail!("order {order}: ratio {other:?} for a seen context"),
                }
            }
            ensure!(
                numerators == total,
                "order {order}: probabilities sum to {numerators}/{total}"
            );
            let p: f64 = model
                .vocabulary()
                .iter()
                .map(|t| model.probability_of(ctx, t))
                .sum::<seqfuse_core::Result<f64>>()?;
            ensure!((p - 1.0).abs() < 1e-12, "order {order}: floating sum {p}");
            contexts += 1;
        }
    }
    Ok(format!(
        "hand fixtures exact, self-entropy 0 bits, {contexts} contexts sum to 1"
    ))
}

fn zero_fixed_points() -> Result<String> {
    let mut checked = 0;
    for seed in 0..20 {
        let mut rng = RandomSource::new(seed);
        let x = params::uniform(&[1 + rng.below(10), 5], 10.0, &mut rng.fork(1));
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let mut store = ParamStore::new();
            let cell = RnnCellParams::new("cell", kind, 5, 4, &mut store, &mut rng);
            let bi = BiRnnParams::new("bi", kind, 5, 4, &mut store, &mut rng);
            for p in store.tensors_mut() {
                *p = Tensor::zeros(p.shape());
            }
            let mut tape = Tape::new();
            let b = store.bind_constant(&mut tape);
            let xv = tape.constant(x.clone());
            let n = x.shape()[0];
            let (states, last) = heads::rnn_forward(&mut tape, &b, &cell, xv, n)?;
            let both = heads::birnn_forward(&mut tape, &b, &bi, xv, n)?;
            for v in [states, last.hidden, both] {
                ensure!(
                    tape.value(v).data().iter().all(|&h| h == 0.0),
                    "{kind:?} seed {seed}: non-zero state"
                );
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} zero-parameter LSTM/GRU runs stay at the zero state"
    ))
}

type Check = fn() -> Result<String>;

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("gradient suite", gradient_suite),
        ("metric oracle", metric_oracle),
        ("causal mask", causal_mask),
        ("optimizer suite", optimizer_suite),
        ("pipeline overfit", pipeline_overfit),
        ("recurrent head beats mean pooling", recurrent_gap),
        ("train determinism", train_determinism),
        ("split arithmetic", split_arithmetic),
        ("n-gram suite", ngram_suite),
        ("zero-parameter fixed points", zero_fixed_points),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {number:>2} {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {number:>2} {name}: {e:#}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
