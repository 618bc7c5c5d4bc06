//! Precomputed embedding files from an external encoder.
//!
//! ```text
//! "SQF1"  count
//! per sample: n  d  values[n·d] (f32, row-major)  label
//! ```
//!
//! Integers are little-endian `u32`.

use std::path::Path;

use seqfuse_core::encoder::EmbeddingSequence;
use seqfuse_core::Tensor;

use crate::binary::Reader;
use crate::error::{read_file, write_file, Error, Result};

pub const MAGIC: &[u8; 4] = b"SQF1";

#[derive(Debug, Clone, PartialEq)]
pub struct ImportedSample {
    pub embeddings: EmbeddingSequence,
    pub label: u32,
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Vec<ImportedSample>> {
    let mut r = Reader::new(bytes, origin);
    if r.take(4)? != MAGIC {
        return Err(Error::format(origin, "not an embedding file (bad magic)"));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut width = None;
    for i in 0..count {
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        if n == 0 || d == 0 {
            return Err(Error::format(
                origin,
                format!("sample {i} has shape {n}×{d}"),
            ));
        }
        if *width.get_or_insert(d) != d {
            return Err(Error::format(
                origin,
                format!("sample {i} has width {d}, expected {}", width.unwrap()),
            ));
        }
        let values = r.f32s(n * d)?;
        let label = r.u32()?;
        out.push(ImportedSample {
            embeddings: EmbeddingSequence::imported(Tensor::new(&[n, d], values)?)?,
            label,
        });
    }
    r.finish()?;
    if out.is_empty() {
        return Err(Error::format(origin, "no samples"));
    }
    Ok(out)
}

pub fn encode(samples: &[ImportedSample]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        let v = &s.embeddings.vectors;
        let valid = s.embeddings.valid_len;
        let d = s.embeddings.dim();
        out.extend_from_slice(&(valid as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for x in &v.data()[..valid * d] {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        out.extend_from_slice(&s.label.to_le_bytes());
    }
    out
}

pub fn load(path: &Path) -> Result<Vec<ImportedSample>> {
    decode(&read_file(path)?, path)
}

/// Writes the valid rows of each sample.
pub fn save(samples: &[ImportedSample], path: &Path) -> Result<()> {
    write_file(path, &encode(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, label: u32) -> ImportedSample {
        let data = (0..n * 3).map(|i| i as f64 * 0.5 - 1.0).collect();
        ImportedSample {
            embeddings: EmbeddingSequence::imported(Tensor::new(&[n, 3], data).unwrap()).unwrap(),
            label,
        }
    }

    #[test]
    fn round_trip() {
        let samples = vec![sample(2, 0), sample(5, 1)];
        let bytes = encode(&samples);
        assert_eq!(&bytes[..4], b"SQF1");
        assert_eq!(bytes.len(), 4 + 4 + 2 * 12 + (2 + 5) * 3 * 4);
        assert_eq!(decode(&bytes, Path::new("mem")).unwrap(), samples);
    }

    #[test]
    fn inconsistent_or_short_files_fail() {
        let p = Path::new("mem");
        let mut mixed = b"SQF1".to_vec();
        for word in [2u32, 1, 3] {
            mixed.extend_from_slice(&word.to_le_bytes());
        }
        mixed.extend_from_slice(&[0u8; 12]);
        for word in [0u32, 1, 2] {
            mixed.extend_from_slice(&word.to_le_bytes());
        }
        mixed.extend_from_slice(&[0u8; 8]);
        mixed.extend_from_slice(&1u32.to_le_bytes());
        assert!(decode(&mixed, p)
            .unwrap_err()
            .to_string()
            .contains("width 2"));
        let ok = encode(&[sample(2, 0)]);
        assert!(decode(&ok[..ok.len() - 2], p).is_err());
        assert!(decode(&encode(&[]), p).is_err());
    }
}
