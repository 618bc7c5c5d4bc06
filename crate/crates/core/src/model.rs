//! End-to-end classifier: embeddings, dropout, bridge, recurrent head,
//! dropout, dense layer and softmax.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingSequence, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{self, BridgeParams, ClassifierParams, Recurrent, RnnVariant};
use crate::params::{Bound, ParamStore};
use crate::rng::RandomSource;
use crate::tape::{Tape, Var};
use crate::tokenizer::TokenSequence;

/// Where per-token embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SourceConfig {
    Internal(EncoderConfig),
    Imported { dim: usize },
}

impl SourceConfig {
    pub fn dim(&self) -> usize {
        match self {
            SourceConfig::Internal(c) => c.d_model,
            SourceConfig::Imported { dim } => *dim,
        }
    }
}

/// Sequence reader on top of the bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "variant")]
pub enum HeadKind {
    Rnn(RnnVariant),
    /// Mean of the bridged rows; blind to token order within the head.
    MeanPool,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Rnn(v) => v.name(),
            HeadKind::MeanPool => "meanpool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub source: SourceConfig,
    pub head: HeadKind,
    /// Width after the bridge projection.
    pub rnn_input: usize,
    /// Per-direction recurrent width.
    pub hidden: usize,
    pub dense: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(source: SourceConfig, head: HeadKind, hidden: usize, classes: usize) -> Self {
        let width = source.dim();
        ModelConfig {
            source,
            head,
            rnn_input: width,
            hidden,
            dense: hidden,
            classes,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rnn_input == 0 || self.hidden == 0 || self.dense == 0 || self.source.dim() == 0 {
            return Err(Error::param("model widths must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::param("a classifier needs at least 2 classes"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param("dropout must be in [0, 1)"));
        }
        if let SourceConfig::Internal(c) = &self.source {
            c.validate()?;
        }
        Ok(())
    }
}

/// One model input, tokenized text or precomputed embeddings.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Tokens(&'a TokenSequence),
    Embeddings(&'a EmbeddingSequence),
}

impl Input<'_> {
    pub fn valid_len(&self) -> usize {
        match self {
            Input::Tokens(t) => t.valid_len(),
            Input::Embeddings(e) => e.valid_len,
        }
    }
}

/// Parameters plus architecture; the unit saved in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: Option<Encoder>,
    bridge: BridgeParams,
    recurrent: Option<Recurrent>,
    classifier: ClassifierParams,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut RandomSource) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let encoder = match &config.source {
            SourceConfig::Internal(c) => Some(Encoder::new(c.clone(), &mut params, rng)?),
            SourceConfig::Imported { .. } => None,
        };
        let bridge = BridgeParams::new(
            "bridge",
            config.source.dim(),
            config.rnn_input,
            &mut params,
            rng,
        );
        let (recurrent, summary_width) = match config.head {
            HeadKind::Rnn(v) => {
                let r = Recurrent::new("rnn", v, config.rnn_input, config.hidden, &mut params, rng);
                let w = r.output_width();
                (Some(r), w)
            }
            HeadKind::MeanPool => (None, config.rnn_input),
        };
        let classifier = ClassifierParams::new(
            "classifier",
            summary_width,
            config.dense,
            config.classes,
            config.dropout,
            &mut params,
            rng,
        )?;
        Ok(Model {
            config,
            params,
            encoder,
            bridge,
            recurrent,
            classifier,
        })
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        self.encoder.as_ref()
    }

    /// `false` for encoder tensors when `freeze_encoder` is set.
    pub fn trainable_mask(&self, freeze_encoder: bool) -> Vec<bool> {
        self.params
            .iter()
            .map(|(_, name, _)| !(freeze_encoder && name.starts_with("encoder.")))
            .collect()
    }

    /// Per-token embeddings on the tape, one row per valid position.
    pub fn embeddings(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: Input<'_>,
        rng: &mut RandomSource,
        training: bool,
    ) -> Result<Var> {
        // Trailing PAD rows never reach real rows or the head, so they are
        // dropped before encoding.
        let keep = input.valid_len().max(1);
        match (input, &self.encoder) {
            (Input::Tokens(t), Some(enc)) if keep < t.max_len() => {
                enc.forward(tape, bound, &t.prefix(keep), training, rng)
            }
            (Input::Tokens(t), Some(enc)) => enc.forward(tape, bound, t, training, rng),
            (Input::Embeddings(e), _) => {
                if e.dim() != self.config.source.dim() {
                    return Err(Error::dim(
                        "embeddings",
                        e.vectors.shape(),
                        &[self.config.source.dim()],
                    ));
                }
                let all = tape.constant(e.vectors.clone());
                if keep < e.len() {
                    tape.slice(all, 0, 0, keep)
                } else {
                    Ok(all)
                }
            }
            (Input::Tokens(_), None) => {
                Err(Error::data("model reads imported embeddings, not tokens"))
            }
        }
    }

    /// Head pipeline on given embeddings. Returns `1×K` probabilities.
    pub fn head_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        embeddings: Var,
        valid_len: usize,
        rng: &mut RandomSource,
        training: bool,
    ) -> Result<Var> {
        let p = self.config.dropout;
        let h = tape.dropout(embeddings, p, rng, training)?;
        let z = self.bridge.forward(tape, bound, h)?;
        match &self.recurrent {
            Some(r) => {
                let states = r.forward(tape, bound, z, valid_len)?;
                heads::classify(
                    tape,
                    bound,
                    &self.classifier,
                    states,
                    valid_len,
                    r.is_bidirectional(),
                    rng,
                    training,
                )
            }
            None => {
                let rows = tape.slice(z, 0, 0, valid_len.max(1))?;
                let pooled = tape.mean_rows(rows)?;
                let pooled = tape.dropout(pooled, p, rng, training)?;
                self.classifier.probabilities(tape, bound, pooled)
            }
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: Input<'_>,
        rng: &mut RandomSource,
        training: bool,
    ) -> Result<Var> {
        let e = self.embeddings(tape, bound, input, rng, training)?;
        self.head_forward(tape, bound, e, input.valid_len(), rng, training)
    }

    /// Probabilities and the floored negative log-likelihood of `label`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: Input<'_>,
        label: usize,
        rng: &mut RandomSource,
        training: bool,
    ) -> Result<(Var, Var)> {
        if label >= self.config.classes {
            return Err(Error::data(alloc::format!(
                "label {label} out of range for {} classes",
                self.config.classes
            )));
        }
        let probs = self.forward(tape, bound, input, rng, training)?;
        let loss = tape.nll(probs, &[label])?;
        Ok((probs, loss))
    }

    /// Evaluation-mode class probabilities.
    pub fn probabilities(&self, input: Input<'_>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let mut rng = RandomSource::new(0);
        let p = self.forward(&mut tape, &bound, input, &mut rng, false)?;
        Ok(tape.value(p).data().to_vec())
    }

    pub fn predict(&self, input: Input<'_>) -> Result<usize> {
        Ok(heads::predict(&self.probabilities(input)?))
    }
}
