//! Versioned model container.
//!
//! Layout: magic `MEDSLOT\0`, format version (u32 LE), header length (u64
//! LE), JSON header {format_version, config, src_vocab, tgt_vocab, bpe},
//! parameter count (u32 LE), then per parameter: name length (u32 LE),
//! name bytes, rank (u32 LE), dims (u64 LE each) and the values as f64 LE.
//! A SHA-256 digest of everything before it closes the file.

use std::fs;
use std::path::Path;

use medslot_core::autodiff::{Array, ParamSet};
use medslot_core::seq2seq::{ModelConfig, Seq2Seq, Vocab};
use medslot_core::subword::BpeModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::write_atomic;

pub const MAGIC: &[u8; 8] = b"MEDSLOT\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not describe a valid model: {0}")]
    Model(#[from] medslot_core::seq2seq::Seq2SeqError),
}

/// A trained model plus the subword codec its vocabularies were built on.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Seq2Seq,
    pub bpe: Option<BpeModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigJson {
    embed_dim: usize,
    hidden: usize,
    layers: usize,
    dropout: f64,
    lr: f64,
    clip_norm: f64,
    max_epochs: usize,
    batch_size: usize,
    max_decode_len: usize,
    seed: u64,
}

impl From<&ModelConfig> for ConfigJson {
    fn from(c: &ModelConfig) -> Self {
        Self {
            embed_dim: c.embed_dim,
            hidden: c.hidden,
            layers: c.layers,
            dropout: c.dropout,
            lr: c.lr,
            clip_norm: c.clip_norm,
            max_epochs: c.max_epochs,
            batch_size: c.batch_size,
            max_decode_len: c.max_decode_len,
            seed: c.seed,
        }
    }
}

impl From<ConfigJson> for ModelConfig {
    fn from(c: ConfigJson) -> Self {
        Self {
            embed_dim: c.embed_dim,
            hidden: c.hidden,
            layers: c.layers,
            dropout: c.dropout,
            lr: c.lr,
            clip_norm: c.clip_norm,
            max_epochs: c.max_epochs,
            batch_size: c.batch_size,
            max_decode_len: c.max_decode_len,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ConfigJson,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    bpe: Option<Vec<(String, String)>>,
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let model = &ckpt.model;
    let header = Header {
        format_version: FORMAT_VERSION,
        config: (&model.config).into(),
        src_vocab: model.src_vocab.tokens().to_vec(),
        tgt_vocab: model.tgt_vocab.tokens().to_vec(),
        bpe: ckpt.bpe.as_ref().map(|b| b.merges().to_vec()),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, array) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(array.shape().len() as u32).to_le_bytes());
        for &d in array.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in array.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Corrupt("length overflow".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < r.pos + DIGEST_LEN {
        return Err(corrupt("truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader {
        buf: body,
        pos: r.pos,
    };
    let header_len = r.len()?;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(corrupt("header version disagrees with preamble"));
    }
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt("parameter name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| corrupt("shape overflow"))?;
        let data: Vec<f64> = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let array =
            Array::from_vec(&shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        params.insert(name, array);
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    let src_vocab =
        Vocab::from_tokens(header.src_vocab).ok_or_else(|| corrupt("bad source vocabulary"))?;
    let tgt_vocab =
        Vocab::from_tokens(header.tgt_vocab).ok_or_else(|| corrupt("bad target vocabulary"))?;
    let bpe = header
        .bpe
        .map(BpeModel::from_merges)
        .transpose()
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let model = Seq2Seq::from_parts(header.config.into(), src_vocab, tgt_vocab, params)?;
    Ok(Checkpoint { model, bpe })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = to_bytes(ckpt);
    write_atomic(path, |w| w.write_all(&bytes))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}
