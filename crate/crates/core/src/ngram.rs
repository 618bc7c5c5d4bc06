//! Maximum-likelihood n-gram language model.
//!
//! Probabilities are raw count ratios `C(context · token) / C(context)`.
//! Contexts never seen in training fall back to the uniform distribution
//! over the training vocabulary. Zero probabilities are only floored inside
//! [`NGramModel::cross_entropy`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// A context position: either a sequence-start marker or a real token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol<T> {
    Bos,
    Token(T),
}

/// How windows are formed at sequence starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Prefix each sequence with `N - 1` BOS markers so every token is
    /// predicted, the first one from an all-BOS context.
    #[default]
    PadWithBos,
    /// Only full windows of real tokens; sequences shorter than `N` add
    /// nothing.
    Unpadded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramModel<T: Ord + Clone> {
    order: usize,
    boundary: Boundary,
    counts: BTreeMap<Vec<Symbol<T>>, BTreeMap<T, u64>>,
    totals: BTreeMap<Vec<Symbol<T>>, u64>,
    vocab: BTreeSet<T>,
}

fn windows<T: Clone>(seq: &[T], order: usize, boundary: Boundary) -> Vec<(Vec<Symbol<T>>, T)> {
    let ctx = order - 1;
    let padded: Vec<Symbol<T>> = match boundary {
        Boundary::PadWithBos => core::iter::repeat_n(Symbol::Bos, ctx)
            .chain(seq.iter().cloned().map(Symbol::Token))
            .collect(),
        Boundary::Unpadded => seq.iter().cloned().map(Symbol::Token).collect(),
    };
    if padded.len() < order {
        return Vec::new();
    }
    padded
        .windows(order)
        .map(|w| {
            let Symbol::Token(t) = w[ctx].clone() else {
                unreachable!("the predicted position is always a real token")
            };
            (w[..ctx].to_vec(), t)
        })
        .collect()
}

impl<T: Ord + Clone> NGramModel<T> {
    /// Counts every order-`order` window of every sequence, BOS-padded.
    pub fn fit<I, S>(corpus: I, order: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[T]>,
    {
        Self::fit_with(corpus, order, Boundary::default())
    }

    pub fn fit_with<I, S>(corpus: I, order: usize, boundary: Boundary) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[T]>,
    {
        if order < 1 {
            return Err(Error::param("n-gram order must be at least 1"));
        }
        let mut model = NGramModel {
            order,
            boundary,
            counts: BTreeMap::new(),
            totals: BTreeMap::new(),
            vocab: BTreeSet::new(),
        };
        let mut sequences = 0;
        for seq in corpus {
            sequences += 1;
            let seq = seq.as_ref();
            model.vocab.extend(seq.iter().cloned());
            for (ctx, tok) in windows(seq, order, boundary) {
                *model
                    .counts
                    .entry(ctx.clone())
                    .or_default()
                    .entry(tok)
                    .or_insert(0) += 1;
                *model.totals.entry(ctx).or_insert(0) += 1;
            }
        }
        if sequences == 0 || model.vocab.is_empty() {
            return Err(Error::data("cannot fit an n-gram model on an empty corpus"));
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocabulary(&self) -> &BTreeSet<T> {
        &self.vocab
    }

    /// Observed contexts with their total counts.
    pub fn contexts(&self) -> impl Iterator<Item = (&[Symbol<T>], u64)> {
        self.totals.iter().map(|(c, &n)| (c.as_slice(), n))
    }

    /// Tokens observed after `context` with their counts.
    pub fn continuations(&self, context: &[Symbol<T>]) -> impl Iterator<Item = (&T, u64)> {
        self.counts
            .get(context)
            .into_iter()
            .flat_map(|m| m.iter().map(|(t, &c)| (t, c)))
    }

    /// `(C(context · token), C(context))` when the context was observed.
    pub fn count_ratio(&self, context: &[Symbol<T>], token: &T) -> Result<Option<(u64, u64)>> {
        self.check_context(context.len())?;
        Ok(self.totals.get(context).map(|&total| {
            let c = self.counts[context].get(token).copied().unwrap_or(0);
            (c, total)
        }))
    }

    fn check_context(&self, len: usize) -> Result<()> {
        if len != self.order - 1 {
            return Err(Error::param(format!(
                "context length {len} does not match order {} (expected {})",
                self.order,
                self.order - 1
            )));
        }
        Ok(())
    }

    /// `P(token | context)` over a context that may contain BOS markers.
    pub fn probability_of(&self, context: &[Symbol<T>], token: &T) -> Result<f64> {
        Ok(match self.count_ratio(context, token)? {
            Some((c, total)) => c as f64 / total as f64,
            None => 1.0 / self.vocab.len() as f64,
        })
    }

    /// `P(token | context)` for a context of real tokens.
    pub fn probability(&self, context: &[T], token: &T) -> Result<f64> {
        let ctx: Vec<Symbol<T>> = context.iter().cloned().map(Symbol::Token).collect();
        self.probability_of(&ctx, token)
    }

    /// Mean `-log2 max(P, epsilon)` over every scored position of `corpus`,
    /// in bits per token.
    pub fn cross_entropy<I, S>(&self, corpus: I, epsilon: f64) -> Result<f64>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[T]>,
    {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::param("cross-entropy floor must be positive"));
        }
        let mut bits = 0.0;
        let mut n = 0usize;
        for seq in corpus {
            for (ctx, tok) in windows(seq.as_ref(), self.order, self.boundary) {
                let p = self.probability_of(&ctx, &tok)?;
                bits -= math::log2(p.max(epsilon));
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::data("no scorable positions in evaluation corpus"));
        }
        Ok(bits / n as f64)
    }
}
