//! Binary model files.
//!
//! Layout (little endian): 8-byte magic `RLBFMODL`, `u32` format version,
//! four `u32` shape fields (max observed jobs, features, policy hidden width,
//! value hidden width), then the policy and value vectors, each as a `u64`
//! length followed by that many `f64` values.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::net::{AgentParams, AgentShape};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"RLBFMODL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated")]
    Truncated,
    #[error("model shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        expected: AgentShape,
        found: AgentShape,
    },
    #[error("model parameter count {found} does not match its shape ({expected})")]
    LengthMismatch { expected: usize, found: usize },
}

pub fn encode_model<T: Scalar>(params: &AgentParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * (params.policy.len() + params.value.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let s = params.shape;
    for v in [s.max_obsv_size, s.features, s.policy_hidden, s.value_hidden] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for block in [&params.policy, &params.value] {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for v in block.iter() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64_block<T: Scalar>(&mut self, expected: usize) -> Result<Vec<T>, ModelError> {
        let len = self.u64()? as usize;
        if len != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                found: len,
            });
        }
        let bytes = self.take(len.checked_mul(8).ok_or(ModelError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<AgentParams<T>, ModelError> {
    let mut r = Reader { buf: bytes };
    if r.take(MAGIC.len()).map_err(|_| ModelError::BadMagic)? != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let shape = AgentShape {
        max_obsv_size: r.u32()? as usize,
        features: r.u32()? as usize,
        policy_hidden: r.u32()? as usize,
        value_hidden: r.u32()? as usize,
    };
    let policy = r.f64_block(AgentParams::<T>::policy_len(&shape))?;
    let value = r.f64_block(AgentParams::<T>::value_len(&shape))?;
    Ok(AgentParams {
        shape,
        policy,
        value,
    })
}

pub fn save_model<T: Scalar>(params: &AgentParams<T>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, encode_model(params)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<AgentParams<T>, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_model(&bytes)
}

/// Loads a model and checks it has the expected shape.
pub fn load_model_with_shape<T: Scalar>(
    path: &Path,
    expected: AgentShape,
) -> Result<AgentParams<T>, ModelError> {
    let params = load_model(path)?;
    if params.shape != expected {
        return Err(ModelError::ShapeMismatch {
            expected,
            found: params.shape,
        });
    }
    Ok(params)
}
