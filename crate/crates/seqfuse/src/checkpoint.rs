//! Binary model checkpoints.
//!
//! All integers are little-endian `u32`, all tensor values little-endian
//! `f32`:
//!
//! ```text
//! "SQCK"  version
//! header_len  header (UTF-8 JSON: {"model": ModelConfig, "meta": CheckpointMeta})
//! tensor_count
//! per tensor: name_len name  rank dims[rank]  values[product(dims)]
//! ```
//!
//! Tensors appear in parameter-store order. Values are rounded to `f32` on
//! save, so a loaded model is the saved model rounded, not bit-identical to
//! the `f64` training state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use seqfuse_core::model::{Model, ModelConfig};
use seqfuse_core::{RandomSource, Tensor};

use crate::binary::Reader;
use crate::error::{read_file, write_file, Error, Result};
use crate::results::RunTag;

pub const MAGIC: &[u8; 4] = b"SQCK";
pub const VERSION: u32 = 1;

/// Everything besides the weights needed to rerun inference on raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub max_len: usize,
    /// Class names by index.
    pub labels: Vec<String>,
    pub split_seed: u64,
    /// Vocabulary file contents, absent for imported-embedding models.
    pub vocabulary: Option<String>,
    pub tag: RunTag,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: CheckpointMeta,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v =
        u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(model: &Model, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        model: model.config.clone(),
        meta: meta.clone(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, header.len())?;
    out.extend_from_slice(&header);
    put_u32(&mut out, model.params.len())?;
    for (_, name, tensor) in model.params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.rank())?;
        for &d in tensor.shape() {
            put_u32(&mut out, d)?;
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<(Model, CheckpointMeta)> {
    let mut r = Reader::new(bytes, origin);
    if r.take(4)? != MAGIC {
        return Err(Error::format(origin, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::format(origin, format!("header: {e}")))?;
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(origin, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let values = r.f32s(shape.iter().product())?;
        named.push((name, Tensor::new(&shape, values)?));
    }
    r.finish()?;
    let mut model = Model::new(header.model, &mut RandomSource::new(0))?;
    model
        .params
        .load_named(named)
        .map_err(|e| Error::format(origin, e.to_string()))?;
    Ok((model, header.meta))
}

pub fn save(model: &Model, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    write_file(path, &encode(model, meta)?)
}

pub fn load(path: &Path) -> Result<(Model, CheckpointMeta)> {
    decode(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqfuse_core::encoder::EncoderConfig;
    use seqfuse_core::heads::RnnVariant;
    use seqfuse_core::model::{HeadKind, SourceConfig};

    fn model() -> Model {
        let enc = EncoderConfig::new(40, 8).with_dims(8, 2, 1);
        let cfg = ModelConfig::new(
            SourceConfig::Internal(enc),
            HeadKind::Rnn(RnnVariant::Bilstm),
            4,
            3,
        );
        Model::new(cfg, &mut RandomSource::new(5)).unwrap()
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            max_len: 8,
            labels: vec!["a".into(), "b".into(), "c".into()],
            split_seed: 3,
            vocabulary: None,
            tag: RunTag {
                model: "toy".into(),
                rnn: "bilstm".into(),
                lr: 0.01,
                optimizer: "nadam".into(),
                hidden_units: 4,
                dropout: 0.1,
                seed: 3,
                wall_seconds: 0.0,
            },
        }
    }

    #[test]
    fn round_trip_rounds_to_f32_once() {
        let m = model();
        let bytes = encode(&m, &meta()).unwrap();
        let (back, back_meta) = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back_meta, meta());
        assert_eq!(back.config, m.config);
        for ((_, _, a), (_, _, b)) in m.params.iter().zip(back.params.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        assert_eq!(encode(&back, &meta()).unwrap(), bytes);
    }

    #[test]
    fn truncated_or_foreign_bytes_fail() {
        let bytes = encode(&model(), &meta()).unwrap();
        let p = Path::new("mem");
        assert!(decode(&bytes[..bytes.len() - 1], p).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer, p).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong, p).is_err());
    }
}
