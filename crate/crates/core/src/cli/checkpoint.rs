//! Bit-exact checkpointing.
//!
//! A checkpoint is a single JSON header line (format version, shapes, seeds,
//! config hash, array directory) followed by length-prefixed little-endian
//! `f64` arrays in the declared order. Writing is deterministic, so
//! save -> load -> save reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// A client's persisted trainable state and RNG seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientSnapshot {
    pub seed: u64,
    pub rank: usize,
    pub alpha: f64,
    pub adapter_a: Matrix,
    pub adapter_b: Matrix,
}

/// Everything needed to resume a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub round: usize,
    pub feature_seed: u64,
    pub config_hash: String,
    pub w_base: Matrix,
    pub b0: Vec<f64>,
    pub w_cls: Vec<f64>,
    pub b_cls: f64,
    pub clients: Vec<ClientSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    round: usize,
    hidden_dim: usize,
    feature_dim: usize,
    feature_seed: u64,
    config_hash: String,
    client_seeds: Vec<u64>,
    client_ranks: Vec<usize>,
    client_alphas: Vec<f64>,
    arrays: Vec<ArraySpec>,
}

fn array_directory(ckpt: &Checkpoint) -> Vec<(String, Vec<f64>)> {
    let mut arrays = vec![
        ("w_base".to_string(), ckpt.w_base.data().to_vec()),
        ("b0".to_string(), ckpt.b0.clone()),
        ("w_cls".to_string(), ckpt.w_cls.clone()),
        ("b_cls".to_string(), vec![ckpt.b_cls]),
    ];
    for (i, client) in ckpt.clients.iter().enumerate() {
        arrays.push((format!("client{i}_a"), client.adapter_a.data().to_vec()));
        arrays.push((format!("client{i}_b"), client.adapter_b.data().to_vec()));
    }
    arrays
}

/// Writes a checkpoint. The byte stream is a pure function of the
/// checkpoint contents.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let arrays = array_directory(ckpt);
    let header = Header {
        version: ckpt.version,
        round: ckpt.round,
        hidden_dim: ckpt.w_base.rows(),
        feature_dim: ckpt.w_base.cols(),
        feature_seed: ckpt.feature_seed,
        config_hash: ckpt.config_hash.clone(),
        client_seeds: ckpt.clients.iter().map(|c| c.seed).collect(),
        client_ranks: ckpt.clients.iter().map(|c| c.rank).collect(),
        client_alphas: ckpt.clients.iter().map(|c| c.alpha).collect(),
        arrays: arrays
            .iter()
            .map(|(name, data)| ArraySpec {
                name: name.clone(),
                len: data.len() as u64,
            })
            .collect(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    let header_json = serde_json::to_string(&header).expect("header serializes");
    out.write_all(header_json.as_bytes())?;
    out.write_all(b"\n")?;
    for (_, data) in &arrays {
        out.write_all(&(data.len() as u64).to_le_bytes())?;
        for value in data {
            out.write_all(&value.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct ByteCursor {
    bytes: Vec<u8>,
    offset: usize,
}

impl ByteCursor {
    fn take(&mut self, count: usize, what: &str) -> Result<&[u8]> {
        if self.offset + count > self.bytes.len() {
            return Err(Error::CheckpointCorrupt {
                offset: self.bytes.len() as u64,
                message: format!(
                    "file truncated while reading {what}: needed {count} bytes at offset {}",
                    self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + count];
        self.offset += count;
        Ok(slice)
    }

    fn read_u64(&mut self, what: &str) -> Result<u64> {
        let offset = self.offset;
        let bytes = self.take(8, what)?;
        let mut buf = [0u8; 8];
        buf.copy_from_slice(bytes);
        let _ = offset;
        Ok(u64::from_le_bytes(buf))
    }

    fn read_f64_array(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(count * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|chunk| {
                let mut buf = [0u8; 8];
                buf.copy_from_slice(chunk);
                f64::from_le_bytes(buf)
            })
            .collect())
    }
}

/// Reads and validates a checkpoint, reporting the byte offset of any
/// corruption.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;

    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(Error::CheckpointCorrupt {
            offset: bytes.len() as u64,
            message: "no header line terminator".into(),
        })?;
    let header: Header =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::CheckpointCorrupt {
            offset: 0,
            message: format!("unreadable header: {e}"),
        })?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            expected: CHECKPOINT_VERSION,
            found: header.version,
        });
    }
    let n_clients = header.client_seeds.len();
    if header.client_ranks.len() != n_clients
        || header.client_alphas.len() != n_clients
        || header.arrays.len() != 4 + 2 * n_clients
    {
        return Err(Error::CheckpointCorrupt {
            offset: 0,
            message: "header directory inconsistent with client count".into(),
        });
    }

    let mut cursor = ByteCursor {
        bytes,
        offset: newline + 1,
    };
    let mut arrays: Vec<Vec<f64>> = Vec::with_capacity(header.arrays.len());
    for spec in &header.arrays {
        let prefix_offset = cursor.offset as u64;
        let declared = cursor.read_u64(&spec.name)?;
        if declared != spec.len {
            return Err(Error::CheckpointCorrupt {
                offset: prefix_offset,
                message: format!(
                    "array {} length prefix {declared} disagrees with header {}",
                    spec.name, spec.len
                ),
            });
        }
        arrays.push(cursor.read_f64_array(declared as usize, &spec.name)?);
    }
    if cursor.offset != cursor.bytes.len() {
        return Err(Error::CheckpointCorrupt {
            offset: cursor.offset as u64,
            message: format!(
                "{} trailing bytes after final array",
                cursor.bytes.len() - cursor.offset
            ),
        });
    }

    let (m, n) = (header.hidden_dim, header.feature_dim);
    let mut iter = arrays.into_iter();
    let w_base = Matrix::from_vec(m, n, iter.next().expect("directory checked"))
        .map_err(|e| Error::CheckpointCorrupt {
            offset: 0,
            message: format!("w_base: {e}"),
        })?;
    let b0 = iter.next().expect("directory checked");
    let w_cls = iter.next().expect("directory checked");
    let b_cls = iter.next().expect("directory checked")[0];
    let mut clients = Vec::with_capacity(n_clients);
    for i in 0..n_clients {
        let rank = header.client_ranks[i];
        let adapter_a = Matrix::from_vec(rank, n, iter.next().expect("directory checked"))
            .map_err(|e| Error::CheckpointCorrupt {
                offset: 0,
                message: format!("client{i}_a: {e}"),
            })?;
        let adapter_b = Matrix::from_vec(m, rank, iter.next().expect("directory checked"))
            .map_err(|e| Error::CheckpointCorrupt {
                offset: 0,
                message: format!("client{i}_b: {e}"),
            })?;
        clients.push(ClientSnapshot {
            seed: header.client_seeds[i],
            rank,
            alpha: header.client_alphas[i],
            adapter_a,
            adapter_b,
        });
    }

    Ok(Checkpoint {
        version: header.version,
        round: header.round,
        feature_seed: header.feature_seed,
        config_hash: header.config_hash,
        w_base,
        b0,
        w_cls,
        b_cls,
        clients,
    })
}
