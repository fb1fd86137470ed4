//! Binary layout of the result region the consumer hands back.
//!
//! Every field is a little-endian 64-bit word:
//!
//! ```text
//! magic   u64  "TSHMRES1" as bytes
//! rank    u64  R
//! order   u64  d
//! dims    d × u64
//! weights R × f64
//! factors for m in 0..d: dims[m] × R f64, row-major
//! ```

use thiserror::Error;

use crate::cp::{KruskalModel, Matrix};

pub const RESULT_MAGIC: [u8; 8] = *b"TSHMRES1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResultError {
    #[error("result magic mismatch")]
    BadMagic,
    #[error("result region holds {have} bytes, layout needs {need}")]
    Truncated { have: usize, need: usize },
    #[error("result header declares rank 0 or order 0")]
    Empty,
}

/// Bytes needed to encode a model of this shape.
pub fn encoded_len(rank: usize, dims: &[usize]) -> usize {
    8 * (3 + dims.len() + rank + dims.iter().sum::<usize>() * rank)
}

pub fn encode(model: &KruskalModel) -> Vec<u8> {
    let dims = model.dims();
    let mut out = Vec::with_capacity(encoded_len(model.rank(), &dims));
    out.extend_from_slice(&RESULT_MAGIC);
    out.extend_from_slice(&(model.rank() as u64).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    for &n in &dims {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for &w in &model.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for f in &model.factors {
        for &x in f.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn word(bytes: &[u8], index: usize) -> [u8; 8] {
    bytes[index * 8..index * 8 + 8].try_into().expect("8-byte slice")
}

/// Decodes a model; trailing bytes beyond the layout are ignored.
pub fn decode(bytes: &[u8]) -> Result<KruskalModel, ResultError> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(ResultError::Truncated {
                have: bytes.len(),
                need: n,
            })
        } else {
            Ok(())
        }
    };
    need(24)?;
    if word(bytes, 0) != RESULT_MAGIC {
        return Err(ResultError::BadMagic);
    }
    let rank = u64::from_le_bytes(word(bytes, 1)) as usize;
    let order = u64::from_le_bytes(word(bytes, 2)) as usize;
    if rank == 0 || order == 0 {
        return Err(ResultError::Empty);
    }
    need(8 * (3 + order))?;
    let dims: Vec<usize> = (0..order)
        .map(|m| u64::from_le_bytes(word(bytes, 3 + m)) as usize)
        .collect();
    need(encoded_len(rank, &dims))?;
    let mut at = 3 + order;
    let mut take = |n: usize| -> Vec<f64> {
        let v = (at..at + n).map(|i| f64::from_le_bytes(word(bytes, i))).collect();
        at += n;
        v
    };
    let weights = take(rank);
    let factors = dims
        .iter()
        .map(|&n| Matrix::from_row_major(n, rank, take(n * rank)))
        .collect();
    Ok(KruskalModel { weights, factors })
}
