//! Checkpoint container and its on-disk format.
//!
//! A file is a one-line preamble `EDGESKILLS-CHECKPOINT <version> <header-bytes>`,
//! a TOML header of exactly `<header-bytes>` bytes, and a payload of
//! little-endian `f64` values. The header echoes both configs, lists every
//! array with its shape and byte offset, and carries the SHA-256 digest of the
//! payload.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::policy::{AgentParams, Networks};
use super::{AgentError, TrainConfig};
use crate::nn::{NamedArray, ParameterSet};
use crate::EnvConfig;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "EDGESKILLS-CHECKPOINT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("payload digest mismatch: header says {expected}, payload hashes to {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("checkpoint does not match its configuration: {0}")]
    Layout(String),
}

/// A trained (or freshly initialized) agent together with the configuration
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub params: AgentParams,
    pub episodes_completed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    episodes_completed: u64,
    payload_bytes: u64,
    payload_sha256: String,
    train: TrainConfig,
    env: EnvConfig,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<u64>,
    offset: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    /// Freshly initialized parameters drawn from the config's seed.
    pub fn fresh(env: EnvConfig, train: TrainConfig) -> Result<Self, AgentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        Self::fresh_with(env, train, &mut rng)
    }

    pub(crate) fn fresh_with(
        env: EnvConfig,
        train: TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        env.validate()?;
        train.validate()?;
        let nets = Networks::new(&train)?;
        Ok(Self {
            params: AgentParams::init(&nets, rng),
            train,
            env,
            episodes_completed: 0,
        })
    }

    pub fn networks(&self) -> Networks {
        Networks::new(&self.train).expect("validated config yields valid networks")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut arrays = Vec::new();
        for (group, set) in self.params.groups() {
            for a in set.arrays() {
                arrays.push(ArrayEntry {
                    name: format!("{group}/{}", a.name),
                    shape: a.shape.iter().map(|&d| d as u64).collect(),
                    offset: payload.len() as u64,
                });
                for v in &a.data {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            episodes_completed: self.episodes_completed as u64,
            payload_bytes: payload.len() as u64,
            payload_sha256: sha256_hex(&payload),
            train: self.train,
            env: self.env,
            arrays,
        };
        let text = toml::to_string(&header).expect("checkpoint header serializes");
        let mut out = format!("{MAGIC} {FORMAT_VERSION} {}\n", text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let fmt = |m: &str| CheckpointError::Format(m.to_string());
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fmt("missing preamble line"))?;
        let preamble = std::str::from_utf8(&bytes[..newline]).map_err(|_| fmt("preamble is not UTF-8"))?;
        let mut parts = preamble.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(fmt("not a checkpoint file (bad magic)"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fmt("bad version field"))?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header_len: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fmt("bad header length field"))?;
        if parts.next().is_some() {
            return Err(fmt("trailing preamble fields"));
        }
        let header_start = newline + 1;
        let payload_start = header_start
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| fmt("file shorter than its header"))?;
        let text = std::str::from_utf8(&bytes[header_start..payload_start])
            .map_err(|_| fmt("header is not UTF-8"))?;
        let header: Header =
            toml::from_str(text).map_err(|e| CheckpointError::Format(format!("header: {e}")))?;
        if header.format_version != version {
            return Err(fmt("header version disagrees with preamble"));
        }
        let payload = &bytes[payload_start..];
        if payload.len() as u64 != header.payload_bytes {
            return Err(CheckpointError::Format(format!(
                "payload has {} bytes, header says {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        let found = sha256_hex(payload);
        if found != header.payload_sha256 {
            return Err(CheckpointError::DigestMismatch {
                expected: header.payload_sha256,
                found,
            });
        }
        Self::assemble(header, payload)
    }

    fn assemble(header: Header, payload: &[u8]) -> Result<Self, CheckpointError> {
        let layout = |m: String| CheckpointError::Layout(m);
        header.env.validate().map_err(|e| layout(e.to_string()))?;
        header.train.validate().map_err(|e| layout(e.to_string()))?;

        let mut groups: Vec<Vec<NamedArray<f64>>> = vec![Vec::new(); AgentParams::GROUPS.len()];
        let mut cursor = 0u64;
        for entry in header.arrays {
            if entry.offset != cursor {
                return Err(layout(format!(
                    "`{}` starts at byte {}, expected {cursor}",
                    entry.name, entry.offset
                )));
            }
            let (group, name) = entry
                .name
                .split_once('/')
                .ok_or_else(|| layout(format!("array name `{}` lacks a group", entry.name)))?;
            let g = AgentParams::GROUPS
                .iter()
                .position(|&x| x == group)
                .ok_or_else(|| layout(format!("unknown group `{group}`")))?;
            let len = entry
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| layout(format!("`{}` shape overflows", entry.name)))?;
            let end = len
                .checked_mul(8)
                .and_then(|n| n.checked_add(cursor))
                .filter(|&e| e <= payload.len() as u64)
                .ok_or_else(|| layout(format!("`{}` runs past the payload", entry.name)))?;
            let data = payload[cursor as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let shape = entry.shape.iter().map(|&d| d as usize).collect();
            groups[g].push(NamedArray::new(name, shape, data).map_err(|e| layout(e.to_string()))?);
            cursor = end;
        }
        if cursor != payload.len() as u64 {
            return Err(layout("payload has trailing bytes".into()));
        }
        let mut sets = groups
            .into_iter()
            .map(|arrays| ParameterSet::new(arrays).map_err(|e| layout(e.to_string())));
        let mut next = || sets.next().expect("six groups");
        let params = AgentParams {
            actor: next()?,
            critic1: next()?,
            critic2: next()?,
            target1: next()?,
            target2: next()?,
            discriminator: next()?,
        };
        let nets = Networks::new(&header.train).map_err(|e| layout(e.to_string()))?;
        params.check(&nets).map_err(|e| layout(e.to_string()))?;
        Ok(Self {
            train: header.train,
            env: header.env,
            params,
            episodes_completed: header.episodes_completed as usize,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
