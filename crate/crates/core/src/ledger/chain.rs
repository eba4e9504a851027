//! Chain verification and the line-oriented export format.
//!
//! An export line is `<hex canonical block bytes> <hex block hash>`.

use alloc::format;
use alloc::string::String;

use thiserror::Error;

use super::types::{Block, ChainVerdict};
use crate::hash::{Canonical, DecodeError, Digest};

/// Recomputes every hash and link. Heights must run 0, 1, 2, ... and the
/// first block must be a genesis block with an all-zero `prev_hash`.
pub fn verify_blocks<B: AsRef<Block>>(blocks: &[B]) -> ChainVerdict {
    let mut prev = Digest::ZERO;
    for (i, b) in blocks.iter().enumerate() {
        let b = b.as_ref();
        let expected_height = i as u64;
        let genesis_ok = i != 0 || b.txs.is_empty();
        if b.height != expected_height || b.prev_hash != prev || !b.hash_is_consistent() || !genesis_ok
        {
            return ChainVerdict::Corrupt {
                height: expected_height,
            };
        }
        prev = b.block_hash;
    }
    ChainVerdict::Intact
}

impl AsRef<Block> for Block {
    fn as_ref(&self) -> &Block {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExportError {
    #[error("line is missing the digest column")]
    MissingDigest,
    #[error("bad hex in block column")]
    BadHex,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("digest column {column} does not match block hash {actual}")]
    DigestMismatch { column: String, actual: String },
}

pub fn export_line(block: &Block) -> String {
    format!(
        "{} {}",
        hex::encode(block.canonical_bytes()),
        block.block_hash.to_hex()
    )
}

pub fn import_line(line: &str) -> Result<Block, ExportError> {
    let (body, digest) = line
        .trim_end()
        .split_once(' ')
        .ok_or(ExportError::MissingDigest)?;
    let bytes = hex::decode(body).map_err(|_| ExportError::BadHex)?;
    let block = Block::decode_canonical(&bytes)?;
    let column = Digest::from_hex(digest)?;
    if column != block.block_hash {
        return Err(ExportError::DigestMismatch {
            column: column.to_hex(),
            actual: block.block_hash.to_hex(),
        });
    }
    Ok(block)
}
