//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..8   magic "ARCNCA01"
//! bytes 8..12  u32 format version (currently 1)
//! bytes 12..20 u64 JSON header length H
//! bytes 20..   H bytes of UTF-8 JSON header
//! then         parameter blocks as raw f32 little-endian, in header order
//! ```
//!
//! The header records the architecture dimensions, a digest of the training
//! configuration that produced the weights, and the name and shape of every
//! block. Loading verifies all of it and rejects trailing bytes, so a
//! checkpoint either round-trips bit-exactly or fails loudly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{block_shapes, ModelParams, ModelSpec, ParamSet, BLOCK_NAMES};

const MAGIC: [u8; 8] = *b"ARCNCA01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (supported: {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("block {block} has shape {got:?}, expected {want:?}")]
    BlockShape {
        block: String,
        want: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("block {index} is named {got:?}, expected {want:?}")]
    BlockName {
        index: usize,
        want: &'static str,
        got: String,
    },
    #[error("header lists {got} blocks, expected {want}")]
    BlockCount { want: usize, got: usize },
    #[error("{count} unexpected trailing bytes after the last block")]
    TrailingBytes { count: usize },
}

#[derive(Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    train_config_digest: String,
    blocks: Vec<BlockInfo>,
}

/// Writes a model plus the digest of the config that trained it.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams<f32>,
    train_config_digest: &str,
) -> Result<(), CheckpointError> {
    let shapes = block_shapes(&params.spec);
    let header = Header {
        spec: params.spec,
        train_config_digest: train_config_digest.to_string(),
        blocks: BLOCK_NAMES
            .iter()
            .zip(shapes.iter())
            .map(|(name, shape)| BlockInfo {
                name: name.to_string(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for i in 0..BLOCK_NAMES.len() {
        for &value in params.weights.block(i) {
            out.write_all(&value.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact_or(
    reader: &mut impl Read,
    buf: &mut [u8],
    what: &'static str,
) -> Result<(), CheckpointError> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => return Err(CheckpointError::Truncated { what }),
            n => filled += n,
        }
    }
    Ok(())
}

/// Reads a checkpoint back. Returns the model and the stored training-config
/// digest.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, String), CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    read_exact_or(&mut reader, &mut magic, "magic bytes")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    read_exact_or(&mut reader, &mut word, "format version")?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let mut long = [0u8; 8];
    read_exact_or(&mut reader, &mut long, "header length")?;
    let header_len = u64::from_le_bytes(long) as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact_or(&mut reader, &mut header_bytes, "header")?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    let expected_shapes = block_shapes(&header.spec);
    if header.blocks.len() != BLOCK_NAMES.len() {
        return Err(CheckpointError::BlockCount {
            want: BLOCK_NAMES.len(),
            got: header.blocks.len(),
        });
    }
    let mut weights = ParamSet::<f32>::zeros(&header.spec);
    for (i, info) in header.blocks.iter().enumerate() {
        if info.name != BLOCK_NAMES[i] {
            return Err(CheckpointError::BlockName {
                index: i,
                want: BLOCK_NAMES[i],
                got: info.name.clone(),
            });
        }
        if info.shape != expected_shapes[i] {
            return Err(CheckpointError::BlockShape {
                block: info.name.clone(),
                want: expected_shapes[i].clone(),
                got: info.shape.clone(),
            });
        }
        let block = weights.block_mut(i);
        let expected_len: usize = info.shape.iter().product();
        debug_assert_eq!(block.len(), expected_len);
        let mut bytes = vec![0u8; expected_len * 4];
        read_exact_or(&mut reader, &mut bytes, "parameter block")?;
        for (j, chunk) in bytes.chunks_exact(4).enumerate() {
            block[j] = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        }
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::TrailingBytes { count: rest.len() });
    }
    Ok((
        ModelParams {
            spec: header.spec,
            weights,
        },
        header.train_config_digest,
    ))
}
