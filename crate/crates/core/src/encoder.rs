//! Toy transformer encoder producing per-token contextual embeddings.
//!
//! Token embeddings plus a sinusoidal position table feed `L` post-norm
//! layers of multi-head self-attention and a position-wise feed-forward
//! network, each wrapped in a residual connection and layer normalization.
//! PAD positions are excluded as attention keys; an optional causal mask
//! restricts position `i` to keys `j <= i`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::{self, Bound, ParamId, ParamStore};
use crate::rng::RandomSource;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{TokenSequence, MASK, PAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_position: usize,
    pub dropout: f64,
    /// Restrict attention to keys at or before the query position.
    pub causal: bool,
    /// Normalize before each sublayer instead of after the residual add.
    pub pre_norm: bool,
    /// Add the sinusoidal position table to token embeddings.
    pub positional: bool,
    /// Multiplier on looked-up token embeddings before positions are added.
    pub embed_scale: f64,
    pub ln_eps: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: 2 layers, `d_model = 64`, 4 heads, FFN
    /// `4·d_model`, embeddings scaled by `√d_model`.
    pub fn new(vocab_size: usize, max_position: usize) -> Self {
        EncoderConfig {
            d_model: 64,
            heads: 4,
            layers: 2,
            ffn_dim: 256,
            vocab_size,
            max_position,
            dropout: 0.1,
            causal: false,
            pre_norm: false,
            positional: true,
            embed_scale: 8.0,
            ln_eps: 1e-5,
        }
    }

    pub fn with_dims(mut self, d_model: usize, heads: usize, layers: usize) -> Self {
        self.d_model = d_model;
        self.heads = heads;
        self.layers = layers;
        self.ffn_dim = 4 * d_model;
        self.embed_scale = math::sqrt(d_model as f64);
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.heads == 0
            || self.ffn_dim == 0
            || self.vocab_size == 0
            || self.max_position == 0
        {
            return Err(Error::param("encoder sizes must be positive"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::param(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout)
            || self.ln_eps.is_nan()
            || self.ln_eps <= 0.0
            || !self.embed_scale.is_finite()
        {
            return Err(Error::param(
                "encoder dropout must be in [0, 1), ln_eps positive, embed_scale finite",
            ));
        }
        Ok(())
    }
}

/// `P[pos, 2i] = sin(pos / 10000^(2i/d))`, `P[pos, 2i+1] = cos(same)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalTable {
    table: Tensor,
}

impl PositionalTable {
    pub fn new(max_position: usize, d_model: usize) -> Self {
        let mut table = Tensor::zeros(&[max_position, d_model]);
        let data = table.data_mut();
        for pos in 0..max_position {
            for dim in 0..d_model {
                let pair = (dim / 2) * 2;
                let angle = pos as f64 / math::powf(10000.0, pair as f64 / d_model as f64);
                data[pos * d_model + dim] = if dim % 2 == 0 {
                    math::sin(angle)
                } else {
                    math::cos(angle)
                };
            }
        }
        PositionalTable { table }
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn rows(&self, n: usize) -> Tensor {
        let d = self.table.shape()[1];
        Tensor::new(&[n, d], self.table.data()[..n * d].to_vec()).expect("n within table")
    }
}

/// Positional encoding vector for one position.
pub fn positional_encoding(config: &EncoderConfig, pos: usize) -> Result<Vec<f64>> {
    if pos >= config.max_position {
        return Err(Error::param(format!(
            "position {pos} beyond max position {}",
            config.max_position
        )));
    }
    let d = config.d_model;
    Ok((0..d)
        .map(|dim| {
            let pair = (dim / 2) * 2;
            let angle = pos as f64 / math::powf(10000.0, pair as f64 / d as f64);
            if dim % 2 == 0 {
                math::sin(angle)
            } else {
                math::cos(angle)
            }
        })
        .collect())
}

/// Additive `n×n` attention mask: `0` where query `i` may attend key `j`,
/// `-inf` otherwise. Keys with `key_mask[j] == 0` are always blocked.
pub fn attention_mask(n: usize, causal: bool, key_mask: &[u8]) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    let data = m.data_mut();
    for i in 0..n {
        for j in 0..n {
            if (causal && j > i) || key_mask.get(j) == Some(&0) {
                data[i * n + j] = f64::NEG_INFINITY;
            }
        }
    }
    m
}

/// `softmax(Q Kᵀ · scale + mask) V` for `n×d_k` inputs. A row whose keys
/// are all masked attends only to position 0.
pub fn attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<Var>,
    scale: f64,
) -> Result<Var> {
    if tape.shape(q) != tape.shape(k) || tape.shape(k)[0] != tape.shape(v)[0] {
        return Err(Error::dim("attention", tape.shape(q), tape.shape(k)));
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.affine(scores, scale, 0.0);
    let scores = match mask {
        Some(m) => tape.add(scores, m)?,
        None => scores,
    };
    let weights = tape.softmax(scores, 1)?;
    tape.matmul(weights, v)
}

/// Per-head projections `W^Q_i, W^K_i, W^V_i` (`d_model × d_k`) and the
/// output projection `W^O` (`d_model × d_model`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    pub output: ParamId,
}

impl AttentionParams {
    pub fn new(
        prefix: &str,
        d_model: usize,
        heads: usize,
        store: &mut ParamStore,
        rng: &mut RandomSource,
    ) -> Self {
        let dk = d_model / heads;
        let mut proj = |kind: &str| -> Vec<ParamId> {
            (0..heads)
                .map(|h| {
                    store.add(
                        format!("{prefix}.head{h}.{kind}"),
                        params::xavier(d_model, dk, rng),
                    )
                })
                .collect()
        };
        let query = proj("wq");
        let key = proj("wk");
        let value = proj("wv");
        let output = store.add(
            format!("{prefix}.wo"),
            params::xavier(d_model, d_model, rng),
        );
        AttentionParams {
            query,
            key,
            value,
            output,
        }
    }
}

/// `concat_i(head_i) W^O` with `head_i = attention(X W^Q_i, X W^K_i, X W^V_i)`.
pub fn multi_head_attention(
    tape: &mut Tape,
    bound: &Bound,
    params: &AttentionParams,
    x: Var,
    mask: Option<Var>,
) -> Result<Var> {
    let heads = params.query.len();
    let mut outs = Vec::with_capacity(heads);
    let mut dk = 0;
    for h in 0..heads {
        let q = tape.matmul(x, bound[params.query[h]])?;
        let k = tape.matmul(x, bound[params.key[h]])?;
        let v = tape.matmul(x, bound[params.value[h]])?;
        dk = tape.shape(q)[1];
        outs.push(attention(tape, q, k, v, mask, 1.0 / math::sqrt(dk as f64))?);
    }
    let _ = dk;
    let cat = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat(&outs, 1)?
    };
    tape.matmul(cat, bound[params.output])
}

/// `ReLU(X W¹ + b¹) W² + b²`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForwardParams {
    pub fn new(
        prefix: &str,
        d_model: usize,
        inner: usize,
        store: &mut ParamStore,
        rng: &mut RandomSource,
    ) -> Self {
        FeedForwardParams {
            w1: store.add(format!("{prefix}.w1"), params::xavier(d_model, inner, rng)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[inner])),
            w2: store.add(format!("{prefix}.w2"), params::xavier(inner, d_model, rng)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[d_model])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound[self.w1])?;
        let h = tape.add_bias(h, bound[self.b1])?;
        let h = tape.relu(h);
        let o = tape.matmul(h, bound[self.w2])?;
        tape.add_bias(o, bound[self.b2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(prefix: &str, d: usize, store: &mut ParamStore) -> Self {
        LayerNormParams {
            gain: store.add(format!("{prefix}.gain"), Tensor::full(&[d], 1.0)),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, eps: f64) -> Result<Var> {
        tape.layer_norm(x, bound[self.gain], bound[self.bias], eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: AttentionParams,
    pub norm1: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub norm2: LayerNormParams,
}

/// Where an embedding sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Internal,
    Imported,
}

/// `n×d` contextual vectors; rows at or beyond `valid_len` are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub vectors: Tensor,
    pub valid_len: usize,
    pub source: SourceTag,
}

impl EmbeddingSequence {
    pub fn imported(vectors: Tensor) -> Result<Self> {
        if vectors.rank() != 2 {
            return Err(Error::dim("embedding sequence", vectors.shape(), &[]));
        }
        let valid_len = vectors.shape()[0];
        Ok(EmbeddingSequence {
            vectors,
            valid_len,
            source: SourceTag::Imported,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.valid_len == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embedding: ParamId,
    pub layers: Vec<EncoderLayer>,
    positions: PositionalTable,
}

impl Encoder {
    /// Registers all encoder parameters under the `encoder.` prefix.
    /// Embeddings start uniform in `[-0.1, 0.1]`, weights Glorot-uniform,
    /// biases zero, norm gains one.
    pub fn new(
        config: EncoderConfig,
        store: &mut ParamStore,
        rng: &mut RandomSource,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let embedding = store.add(
            "encoder.embedding",
            params::uniform(&[config.vocab_size, d], 0.1, rng),
        );
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("encoder.layer{l}");
                EncoderLayer {
                    attention: AttentionParams::new(
                        &format!("{p}.attn"),
                        d,
                        config.heads,
                        store,
                        rng,
                    ),
                    norm1: LayerNormParams::new(&format!("{p}.norm1"), d, store),
                    ffn: FeedForwardParams::new(&format!("{p}.ffn"), d, config.ffn_dim, store, rng),
                    norm2: LayerNormParams::new(&format!("{p}.norm2"), d, store),
                }
            })
            .collect();
        let positions = PositionalTable::new(config.max_position, d);
        Ok(Encoder {
            config,
            embedding,
            layers,
            positions,
        })
    }

    pub fn positions(&self) -> &PositionalTable {
        &self.positions
    }

    /// Embedding lookup plus positions, before any layer.
    pub fn embed_tokens(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        tokens: &TokenSequence,
    ) -> Result<Var> {
        let n = tokens.input_ids.len();
        if n > self.config.max_position {
            return Err(Error::data(format!(
                "sequence length {n} exceeds max position {}",
                self.config.max_position
            )));
        }
        if let Some(bad) = tokens
            .input_ids
            .iter()
            .find(|&&id| id as usize >= self.config.vocab_size)
        {
            return Err(Error::data(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let ids: Vec<usize> = tokens.input_ids.iter().map(|&i| i as usize).collect();
        let e = tape.gather_rows(bound[self.embedding], &ids)?;
        let e = tape.affine(e, self.config.embed_scale, 0.0);
        if self.config.positional {
            let p = tape.constant(self.positions.rows(n));
            tape.add(e, p)
        } else {
            Ok(e)
        }
    }

    /// Contextual embeddings `n×d_model` for one sequence.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        tokens: &TokenSequence,
        training: bool,
        rng: &mut RandomSource,
    ) -> Result<Var> {
        let n = tokens.input_ids.len();
        let p = self.config.dropout;
        let eps = self.config.ln_eps;
        let mut x = self.embed_tokens(tape, bound, tokens)?;
        x = tape.dropout(x, p, rng, training)?;
        let mask = tape.constant(attention_mask(
            n,
            self.config.causal,
            &tokens.attention_mask,
        ));
        for layer in &self.layers {
            if self.config.pre_norm {
                let h = layer.norm1.forward(tape, bound, x, eps)?;
                let a = multi_head_attention(tape, bound, &layer.attention, h, Some(mask))?;
                let a = tape.dropout(a, p, rng, training)?;
                x = tape.add(x, a)?;
                let h = layer.norm2.forward(tape, bound, x, eps)?;
                let f = layer.ffn.forward(tape, bound, h)?;
                let f = tape.dropout(f, p, rng, training)?;
                x = tape.add(x, f)?;
            } else {
                let a = multi_head_attention(tape, bound, &layer.attention, x, Some(mask))?;
                let a = tape.dropout(a, p, rng, training)?;
                let r = tape.add(x, a)?;
                x = layer.norm1.forward(tape, bound, r, eps)?;
                let f = layer.ffn.forward(tape, bound, x)?;
                let f = tape.dropout(f, p, rng, training)?;
                let r = tape.add(x, f)?;
                x = layer.norm2.forward(tape, bound, r, eps)?;
            }
        }
        Ok(x)
    }

    /// Inference-only embeddings as a plain tensor.
    pub fn embed(&self, store: &ParamStore, tokens: &TokenSequence) -> Result<EmbeddingSequence> {
        let mut tape = Tape::new();
        let bound = store.bind_constant(&mut tape);
        let mut rng = RandomSource::new(0);
        let out = self.forward(&mut tape, &bound, tokens, false, &mut rng)?;
        Ok(EmbeddingSequence {
            vectors: tape.value(out).clone(),
            valid_len: tokens.valid_len(),
            source: SourceTag::Internal,
        })
    }

    /// Mean negative log-likelihood of the original ids at the masked
    /// positions, with vocabulary logits from the tied embedding matrix.
    pub fn denoising_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        corrupted: &TokenSequence,
        targets: &[(usize, u32)],
        training: bool,
        rng: &mut RandomSource,
    ) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::param(
                "denoising loss needs at least one masked position",
            ));
        }
        let h = self.forward(tape, bound, corrupted, training, rng)?;
        let positions: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let labels: Vec<usize> = targets.iter().map(|t| t.1 as usize).collect();
        let picked = tape.gather_rows(h, &positions)?;
        let table_t = tape.transpose(bound[self.embedding])?;
        let logits = tape.matmul(picked, table_t)?;
        let probs = tape.softmax(logits, 1)?;
        tape.nll(probs, &labels)
    }
}

/// Masks non-overlapping spans covering `round(mask_rate · real tokens)`
/// positions. Span lengths are geometric with mean `mean_span`, clipped to
/// the remaining budget. Returns the corrupted sequence and the
/// `(position, original id)` targets in position order.
pub fn span_mask(
    tokens: &TokenSequence,
    rng: &mut RandomSource,
    mask_rate: f64,
    mean_span: f64,
) -> Result<(TokenSequence, Vec<(usize, u32)>)> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::param(format!(
            "mask rate {mask_rate} outside (0, 1)"
        )));
    }
    if mean_span.is_nan() || mean_span < 1.0 {
        return Err(Error::param(format!("mean span {mean_span} below 1")));
    }
    let real: Vec<usize> = (0..tokens.input_ids.len())
        .filter(|&i| tokens.attention_mask[i] == 1 && tokens.input_ids[i] != PAD)
        .collect();
    let mut corrupted = tokens.clone();
    if real.is_empty() {
        return Ok((corrupted, Vec::new()));
    }
    let mut budget = math::round(mask_rate * real.len() as f64) as usize;
    let mut masked = vec![false; tokens.input_ids.len()];
    let p = 1.0 / mean_span;
    while budget > 0 {
        let want = rng.geometric(p).min(budget);
        // Longest length that still has a free placement, starting at `want`.
        let mut len = want;
        let starts = loop {
            let starts: Vec<usize> = (0..real.len())
                .filter(|&s| s + len <= real.len() && (s..s + len).all(|k| !masked[real[k]]))
                .collect();
            if !starts.is_empty() || len == 1 {
                break starts;
            }
            len -= 1;
        };
        let s = starts[rng.below(starts.len())];
        for k in s..s + len {
            masked[real[k]] = true;
        }
        budget -= len;
    }
    let mut targets = Vec::new();
    for (i, &m) in masked.iter().enumerate() {
        if m {
            targets.push((i, tokens.input_ids[i]));
            corrupted.input_ids[i] = MASK;
        }
    }
    Ok((corrupted, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::pad_ids;

    #[test]
    fn positional_examples() {
        let cfg = EncoderConfig::new(10, 8).with_dims(4, 1, 1);
        let p0 = positional_encoding(&cfg, 0).unwrap();
        assert_eq!(p0, vec![0.0, 1.0, 0.0, 1.0]);
        let p1 = positional_encoding(&cfg, 1).unwrap();
        let expect = [0.841471, 0.540302, 0.010000, 0.999950];
        for (a, b) in p1.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(positional_encoding(&cfg, 8).is_err());
        let table = PositionalTable::new(50, 6);
        assert!(table
            .table()
            .data()
            .iter()
            .all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(
            table.rows(2).row(1),
            &positional_encoding(&EncoderConfig::new(1, 50).with_dims(6, 1, 1), 1).unwrap()[..]
        );
    }

    #[test]
    fn causal_mask_matrix() {
        let m = attention_mask(3, true, &[1, 1, 1]);
        let inf = f64::NEG_INFINITY;
        assert_eq!(m.data(), &[0.0, inf, inf, 0.0, 0.0, inf, 0.0, 0.0, 0.0]);
        let pad = attention_mask(2, false, &[1, 0]);
        assert_eq!(pad.data(), &[0.0, inf, 0.0, inf]);
    }

    #[test]
    fn singleton_attention_returns_value_row() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::from_rows(&[&[0.3, -1.0]]).unwrap());
        let k = t.constant(Tensor::from_rows(&[&[2.0, 0.5]]).unwrap());
        let v = t.constant(Tensor::from_rows(&[&[7.0, -3.0]]).unwrap());
        let o = attention(&mut t, q, k, v, None, 0.5).unwrap();
        assert_eq!(t.value(o).data(), &[7.0, -3.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5], &[0.0, 3.0]]).unwrap());
        let k = t.constant(Tensor::from_rows(&[&[0.4, 0.1], &[0.4, 0.1], &[0.4, 0.1]]).unwrap());
        let v = t.constant(Tensor::from_rows(&[&[1.0, 0.0], &[2.0, 3.0], &[6.0, -3.0]]).unwrap());
        let o = attention(&mut t, q, k, v, None, 1.0).unwrap();
        for r in 0..3 {
            let row = t.value(o).row(r);
            assert!((row[0] - 3.0).abs() < 1e-12 && row[1].abs() < 1e-12);
        }
    }

    #[test]
    fn span_mask_examples() {
        let tokens = pad_ids((10..20).collect(), 12);
        let mut rng = RandomSource::new(4);
        let (c, targets) = span_mask(&tokens, &mut rng, 0.3, 1.0).unwrap();
        assert_eq!(targets.len(), 3);
        assert_eq!(c.input_ids.iter().filter(|&&i| i == MASK).count(), 3);
        for (pos, orig) in &targets {
            assert_eq!(tokens.input_ids[*pos], *orig);
        }
        let (_, none) = span_mask(&tokens, &mut rng, 0.01, 3.0).unwrap();
        assert!(none.is_empty());

        let mut a = RandomSource::new(11);
        let mut b = RandomSource::new(11);
        assert_eq!(
            span_mask(&tokens, &mut a, 0.5, 2.0).unwrap(),
            span_mask(&tokens, &mut b, 0.5, 2.0).unwrap()
        );

        let all_pad = pad_ids(vec![], 5);
        let (same, t) = span_mask(&all_pad, &mut rng, 0.5, 2.0).unwrap();
        assert_eq!(same, all_pad);
        assert!(t.is_empty());
        assert!(span_mask(&tokens, &mut rng, 0.0, 1.0).is_err());
        assert!(span_mask(&tokens, &mut rng, 1.0, 1.0).is_err());
    }

    #[test]
    fn longer_spans_still_hit_budget() {
        let tokens = pad_ids((10..40).collect(), 30);
        for seed in 0..20 {
            let mut rng = RandomSource::new(seed);
            let (_, t) = span_mask(&tokens, &mut rng, 0.4, 3.0).unwrap();
            assert_eq!(t.len(), 12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::new(10, 10)
            .with_dims(10, 3, 1)
            .validate()
            .is_err());
        assert!(EncoderConfig::new(10, 10).validate().is_ok());
    }
}
