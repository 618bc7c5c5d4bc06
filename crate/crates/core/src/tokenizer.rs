//! Byte-level byte-pair-encoding tokenizer.
//!
//! Text is first cut into chunks, each a run of whitespace followed by a run
//! of non-whitespace (`"int main() {"` becomes `"int"`, `" main()"`,
//! `" {"`). Merges never cross chunk boundaries. Chunks are then split into
//! bytes and merged greedily in merge-priority order.
//!
//! Ids `0..5` are reserved for PAD, UNK, MASK, BOS and EOS; learned tokens
//! follow.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const BOS: u32 = 3;
pub const EOS: u32 = 4;
pub const RESERVED_NAMES: [&str; 5] = ["<pad>", "<unk>", "<mask>", "<bos>", "<eos>"];
pub const RESERVED_COUNT: usize = RESERVED_NAMES.len();

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainOptions {
    pub vocab_size: usize,
    pub min_frequency: u64,
    /// Seed the alphabet with all 256 bytes. When false only bytes seen in
    /// the corpus are included and unseen bytes encode to UNK.
    pub full_byte_alphabet: bool,
}

impl TrainOptions {
    pub fn new(vocab_size: usize) -> Self {
        TrainOptions {
            vocab_size,
            min_frequency: 2,
            full_byte_alphabet: true,
        }
    }
}

/// Learned vocabulary. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocabulary {
    /// Bytes of every non-reserved token; id = index + RESERVED_COUNT.
    tokens: Vec<Vec<u8>>,
    lookup: BTreeMap<Vec<u8>, u32>,
    byte_ids: Vec<Option<u32>>,
    merges: Vec<(u32, u32)>,
    ranks: BTreeMap<(u32, u32), (usize, u32)>,
}

/// One encoded sample, padded or truncated to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub input_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub token_type_ids: Vec<u8>,
    /// Token count before padding or truncation.
    pub original_len: usize,
}

impl TokenSequence {
    /// The first `len` positions (clamped to the current length).
    pub fn prefix(&self, len: usize) -> TokenSequence {
        let len = len.min(self.input_ids.len());
        TokenSequence {
            input_ids: self.input_ids[..len].to_vec(),
            attention_mask: self.attention_mask[..len].to_vec(),
            token_type_ids: self.token_type_ids[..len].to_vec(),
            original_len: self.original_len,
        }
    }

    pub fn max_len(&self) -> usize {
        self.input_ids.len()
    }

    /// Number of real (non-PAD) positions.
    pub fn valid_len(&self) -> usize {
        self.original_len.min(self.input_ids.len())
    }
}

/// Splits text into whitespace-led chunks. Concatenating the chunks gives
/// back the input.
pub fn chunks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws && i > start {
            out.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

impl BpeVocabulary {
    /// Total number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        RESERVED_COUNT + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Bytes of a non-reserved token, `None` for reserved or unknown ids.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        (id as usize)
            .checked_sub(RESERVED_COUNT)
            .and_then(|i| self.tokens.get(i))
            .map(Vec::as_slice)
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        self.lookup.get(bytes).copied()
    }

    /// Builds a vocabulary from learned token bytes (in id order, starting
    /// right after the reserved ids) and merges given as id pairs in
    /// priority order.
    pub fn from_parts(tokens: Vec<Vec<u8>>, merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut lookup = BTreeMap::new();
        let mut byte_ids = vec![None; 256];
        for (i, t) in tokens.iter().enumerate() {
            let id = (i + RESERVED_COUNT) as u32;
            if t.is_empty() {
                return Err(Error::data(format!("token {id} is empty")));
            }
            if lookup.insert(t.clone(), id).is_some() {
                return Err(Error::data(format!(
                    "token {id} duplicates an earlier token"
                )));
            }
            if t.len() == 1 {
                byte_ids[t[0] as usize] = Some(id);
            }
        }
        let mut vocab = BpeVocabulary {
            tokens,
            lookup,
            byte_ids,
            merges: Vec::new(),
            ranks: BTreeMap::new(),
        };
        for (l, r) in merges {
            let (lb, rb) = match (vocab.token_bytes(l), vocab.token_bytes(r)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::data(format!(
                        "merge ({l}, {r}) names an unknown token"
                    )))
                }
            };
            let joined = [lb, rb].concat();
            let Some(id) = vocab.id_of(&joined) else {
                return Err(Error::data(format!("merge ({l}, {r}) has no result token")));
            };
            vocab.push_merge(l, r, id)?;
        }
        Ok(vocab)
    }

    fn push_merge(&mut self, l: u32, r: u32, id: u32) -> Result<()> {
        let rank = self.merges.len();
        if self.ranks.insert((l, r), (rank, id)).is_some() {
            return Err(Error::data(format!("merge ({l}, {r}) listed twice")));
        }
        self.merges.push((l, r));
        Ok(())
    }

    fn bytes_to_ids(&self, chunk: &[u8]) -> Vec<u32> {
        chunk
            .iter()
            .map(|&b| self.byte_ids[b as usize].unwrap_or(UNK))
            .collect()
    }

    fn apply_merges(&self, ids: &mut Vec<u32>) {
        while ids.len() > 1 {
            let best = ids
                .windows(2)
                .filter_map(|w| {
                    self.ranks
                        .get(&(w[0], w[1]))
                        .map(|&(rank, id)| (rank, w[0], w[1], id))
                })
                .min();
            let Some((_, l, r, merged)) = best else { break };
            merge_pair(ids, l, r, merged);
        }
    }

    /// Token ids for `text` without padding or truncation.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in chunks(text) {
            let mut ids = self.bytes_to_ids(chunk.as_bytes());
            self.apply_merges(&mut ids);
            out.extend(ids);
        }
        out
    }

    /// Encodes `text` into exactly `max_len` positions. Truncation keeps the
    /// head of the sequence; token type ids are all zero.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len < 2 {
            return Err(Error::param(format!(
                "max_len must be at least 2, got {max_len}"
            )));
        }
        Ok(pad_ids(self.tokenize(text), max_len))
    }

    /// Inverse of [`encode`](Self::encode) up to PAD stripping. Reserved
    /// ids other than PAD render as their placeholder names.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            if id == PAD {
                continue;
            }
            if (id as usize) < RESERVED_COUNT {
                bytes.extend_from_slice(RESERVED_NAMES[id as usize].as_bytes());
            } else if let Some(b) = self.token_bytes(id) {
                bytes.extend_from_slice(b);
            } else {
                return Err(Error::data(format!("unknown token id {id}")));
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

/// Pads with PAD or truncates `ids` to `max_len` positions.
pub fn pad_ids(mut ids: Vec<u32>, max_len: usize) -> TokenSequence {
    let original_len = ids.len();
    ids.truncate(max_len);
    let real = ids.len();
    ids.resize(max_len, PAD);
    let mut attention_mask = vec![1u8; real];
    attention_mask.resize(max_len, 0);
    TokenSequence {
        input_ids: ids,
        attention_mask,
        token_type_ids: vec![0; max_len],
        original_len,
    }
}

fn merge_pair(ids: &mut Vec<u32>, l: u32, r: u32, merged: u32) {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
            out.push(merged);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    *ids = out;
}

/// Learns merges greedily by pair frequency. Equal counts are broken by the
/// lexicographically smallest `(left bytes, right bytes)`. Training stops
/// at `vocab_size` ids or when no pair occurs at least
/// `max(min_frequency, 2)` times.
pub fn train_bpe<'a, I>(corpus: I, options: &TrainOptions) -> Result<BpeVocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut words: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    let mut seen = [false; 256];
    let mut any = false;
    for text in corpus {
        for chunk in chunks(text) {
            any = true;
            for &b in chunk.as_bytes() {
                seen[b as usize] = true;
            }
            *words.entry(chunk.as_bytes().to_vec()).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::data("cannot train a tokenizer on an empty corpus"));
    }
    let alphabet: Vec<u8> = (0..=255u8)
        .filter(|&b| options.full_byte_alphabet || seen[b as usize])
        .collect();
    if options.vocab_size <= alphabet.len() + RESERVED_COUNT {
        return Err(Error::param(format!(
            "vocab_size {} must exceed the {} reserved and {} alphabet tokens",
            options.vocab_size,
            RESERVED_COUNT,
            alphabet.len()
        )));
    }

    let mut vocab =
        BpeVocabulary::from_parts(alphabet.iter().map(|&b| vec![b]).collect(), Vec::new())?;
    let mut words: Vec<(Vec<u32>, u64)> = words
        .into_iter()
        .map(|(w, c)| (vocab.bytes_to_ids(&w), c))
        .collect();
    let threshold = options.min_frequency.max(2);

    while vocab.len() < options.vocab_size {
        let mut pairs: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for (w, c) in &words {
            for p in w.windows(2) {
                *pairs.entry((p[0], p[1])).or_insert(0) += c;
            }
        }
        let mut best: Option<((u32, u32), u64)> = None;
        for (&pair, &count) in &pairs {
            if pair.0 == UNK || pair.1 == UNK {
                continue;
            }
            best = match best {
                None => Some((pair, count)),
                Some((bp, bc))
                    if count > bc || (count == bc && vocab.pair_key(pair) < vocab.pair_key(bp)) =>
                {
                    Some((pair, count))
                }
                keep => keep,
            };
        }
        let Some(((l, r), count)) = best else { break };
        if count < threshold {
            break;
        }
        let joined = [vocab.token_bytes(l).unwrap(), vocab.token_bytes(r).unwrap()].concat();
        let id = match vocab.id_of(&joined) {
            Some(id) => id,
            None => {
                let id = vocab.len() as u32;
                vocab.lookup.insert(joined.clone(), id);
                vocab.tokens.push(joined);
                id
            }
        };
        vocab.push_merge(l, r, id)?;
        for (w, _) in &mut words {
            merge_pair(w, l, r, id);
        }
    }
    Ok(vocab)
}

impl BpeVocabulary {
    fn pair_key(&self, (l, r): (u32, u32)) -> (&[u8], &[u8]) {
        (
            self.token_bytes(l).unwrap_or(&[]),
            self.token_bytes(r).unwrap_or(&[]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_merge() -> TrainOptions {
        TrainOptions::new(RESERVED_COUNT + 256 + 1)
    }

    #[test]
    fn first_merge_on_aaab() {
        let v = train_bpe(["aaab"], &one_merge()).unwrap();
        let a = v.id_of(b"a").unwrap();
        assert_eq!(v.merges(), &[(a, a)]);
        assert_eq!(v.id_of(b"aa"), Some(v.len() as u32 - 1));
    }

    #[test]
    fn unique_characters_give_no_merges() {
        let v = train_bpe(["abcdefg"], &TrainOptions::new(400)).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.len(), RESERVED_COUNT + 256);
    }

    #[test]
    fn retraining_is_identical() {
        let corpus = ["int main() { return 0; }", "int f(int x) { return x; }"];
        let a = train_bpe(corpus, &TrainOptions::new(300)).unwrap();
        let b = train_bpe(corpus, &TrainOptions::new(300)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // "ab" and "cd" both occur twice; ("a","b") sorts first.
        let v = train_bpe(["ab", "cd", "ab", "cd"], &one_merge()).unwrap();
        let (a, b) = (v.id_of(b"a").unwrap(), v.id_of(b"b").unwrap());
        assert_eq!(v.merges(), &[(a, b)]);
    }

    #[test]
    fn min_frequency_stops_training() {
        let mut opts = TrainOptions::new(400);
        opts.min_frequency = 3;
        let v = train_bpe(["aab aab"], &opts).unwrap();
        assert!(v.merges().is_empty());
    }

    #[test]
    fn empty_corpus_and_small_vocab_are_rejected() {
        assert!(matches!(
            train_bpe([""], &TrainOptions::new(400)),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            train_bpe(["ab"], &TrainOptions::new(100)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn encode_examples() {
        let v = train_bpe(["aaab"], &one_merge()).unwrap();
        let empty = v.encode("", 4).unwrap();
        assert_eq!(empty.input_ids, vec![PAD; 4]);
        assert_eq!(empty.attention_mask, vec![0; 4]);

        let s = v.encode("aaab", 5).unwrap();
        let ids: Vec<u32> = [&b"aa"[..], b"a", b"b"]
            .iter()
            .map(|t| v.id_of(t).unwrap())
            .collect();
        assert_eq!(&s.input_ids[..3], &ids[..]);
        assert_eq!(s.attention_mask, vec![1, 1, 1, 0, 0]);
        assert_eq!(s.token_type_ids, vec![0; 5]);
        assert_eq!(s.valid_len(), 3);

        let t = v.encode("aaab", 2).unwrap();
        assert_eq!(t.input_ids, ids[..2].to_vec());
        assert_eq!(t.original_len, 3);
        assert!(v.encode("x", 1).is_err());
    }

    #[test]
    fn decode_examples() {
        let v = train_bpe(["ab ab"], &TrainOptions::new(300)).unwrap();
        let e = v.encode("ab", 8).unwrap();
        assert_eq!(v.decode(&e.input_ids).unwrap(), "ab");
        assert_eq!(v.decode(&[PAD, PAD]).unwrap(), "");
        assert!(matches!(v.decode(&[9999]), Err(Error::Data(_))));
    }

    #[test]
    fn out_of_alphabet_char_decodes_to_placeholder() {
        let mut opts = TrainOptions::new(RESERVED_COUNT + 3);
        opts.full_byte_alphabet = false;
        let v = train_bpe(["ab"], &opts).unwrap();
        let e = v.encode("azb", 8).unwrap();
        assert_eq!(e.input_ids[1], UNK);
        assert_eq!(v.decode(&e.input_ids).unwrap(), "a<unk>b");
    }

    #[test]
    fn chunks_concatenate_back() {
        let text = "  int main() {\n\treturn 0;\n}  ";
        assert_eq!(chunks(text).concat(), text);
        assert_eq!(chunks("int main() {"), vec!["int", " main()", " {"]);
    }

    #[test]
    fn from_parts_validates() {
        assert!(BpeVocabulary::from_parts(vec![b"a".to_vec(), b"a".to_vec()], vec![]).is_err());
        let toks = vec![b"a".to_vec(), b"b".to_vec(), b"ab".to_vec()];
        let v = BpeVocabulary::from_parts(toks.clone(), vec![(5, 6)]).unwrap();
        assert_eq!(v.tokenize("ab"), vec![7]);
        assert!(BpeVocabulary::from_parts(toks, vec![(6, 5)]).is_err());
    }
}
