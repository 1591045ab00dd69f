//! Binary checkpoint container.
//!
//! ```text
//! magic    8 bytes   "RPPGCKPT"
//! version  u32 LE    CHECKPOINT_VERSION
//! length   u64 LE    byte length of the JSON header
//! header   JSON      CheckpointHeader
//! data     f32 LE    tensors back to back, in header order
//! ```
//!
//! Tensors are the network parameters and normalisation statistics under
//! their dotted names, followed by Adam moments as `adam.m.<name>` and
//! `adam.v.<name>` when optimiser state is present.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::NetConfig;
use super::network::RppgNet;
use crate::error::{Error, Result};
use crate::nn::{Adam, Module};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RPPGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub net: NetConfig,
    /// Resolved run configuration the weights were trained under.
    pub run_config: serde_json::Value,
    /// SHA-256 of the compact JSON encoding of `run_config`.
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerState>,
    pub rng: Option<ChaCha8Rng>,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub data: Vec<Vec<f32>>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn invalid(reason: impl Into<String>) -> Error {
    Error::InvalidCheckpoint(reason.into())
}

impl Checkpoint {
    pub fn capture(
        net: &mut RppgNet<f32>,
        optimizer: Option<&Adam>,
        rng: Option<&ChaCha8Rng>,
        run_config: serde_json::Value,
        epoch: usize,
    ) -> Self {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        let mut trainable = Vec::new();
        net.visit("", &mut |name, p| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: p.shape.clone(),
            });
            data.push(p.value.clone());
            if p.trainable {
                trainable.push((name.to_string(), p.shape.clone()));
            }
        });
        if let Some(adam) = optimizer {
            for (kind, pick) in [("m", 0), ("v", 1)] {
                for ((name, shape), moments) in trainable.iter().zip(&adam.moments) {
                    let values = if pick == 0 { &moments.0 } else { &moments.1 };
                    tensors.push(TensorEntry {
                        name: format!("adam.{kind}.{name}"),
                        shape: shape.clone(),
                    });
                    data.push(values.iter().map(|&v| v as f32).collect());
                }
            }
        }
        Self {
            header: CheckpointHeader {
                net: net.config().clone(),
                config_hash: config_hash(&run_config),
                run_config,
                tensors,
                optimizer: optimizer.map(|a| OptimizerState {
                    lr: a.lr,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: a.eps,
                    step: a.step,
                }),
                rng: rng.cloned(),
                epoch,
            },
            data,
        }
    }

    fn tensor(&self, name: &str) -> Option<(&TensorEntry, &Vec<f32>)> {
        self.header.tensors.iter().zip(&self.data).find(|(t, _)| t.name == name)
    }

    /// Rebuilds the network; every parameter must be present with its shape.
    pub fn restore(&self) -> Result<RppgNet<f32>> {
        let mut net = RppgNet::<f32>::new(&self.header.net)?;
        let mut failure = None;
        let mut expected = 0;
        net.visit("", &mut |name, p| {
            expected += 1;
            match self.tensor(name) {
                Some((entry, values)) if entry.shape == p.shape => p.value.copy_from_slice(values),
                Some((entry, _)) => failure = Some(format!("`{name}` has shape {:?}, network expects {:?}", entry.shape, p.shape)),
                None => failure = Some(format!("missing tensor `{name}`")),
            }
        });
        if let Some(reason) = failure {
            return Err(invalid(reason));
        }
        let extra = self.header.tensors.iter().filter(|t| !t.name.starts_with("adam.")).count();
        if extra != expected {
            return Err(invalid(format!("{extra} parameter tensors for a network with {expected}")));
        }
        Ok(net)
    }

    /// Optimiser with its moments, matched to `net`'s trainable parameters.
    pub fn restore_optimizer(&self, net: &mut RppgNet<f32>) -> Result<Option<Adam>> {
        let Some(state) = &self.header.optimizer else {
            return Ok(None);
        };
        let mut adam = Adam::new(state.lr);
        adam.beta1 = state.beta1;
        adam.beta2 = state.beta2;
        adam.eps = state.eps;
        adam.step = state.step;
        let mut failure = None;
        net.visit("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let m = self.tensor(&format!("adam.m.{name}"));
            let v = self.tensor(&format!("adam.v.{name}"));
            match (m, v) {
                (Some((_, m)), Some((_, v))) if m.len() == p.len() && v.len() == p.len() => adam
                    .moments
                    .push((m.iter().map(|&x| x as f64).collect(), v.iter().map(|&x| x as f64).collect())),
                _ => failure = Some(format!("optimiser state for `{name}` missing or mis-sized")),
            }
        });
        match failure {
            Some(reason) => Err(invalid(reason)),
            None => Ok(Some(adam)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("checkpoint header serialises");
        let payload: usize = self.data.iter().map(|d| d.len() * 4).sum();
        let mut out = Vec::with_capacity(20 + header.len() + payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for values in &self.data {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(invalid("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(invalid(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| invalid("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[20..header_end]).map_err(|e| invalid(format!("header: {e}")))?;
        if config_hash(&header.run_config) != header.config_hash {
            return Err(invalid("configuration hash does not match the stored configuration"));
        }
        let mut offset = header_end;
        let mut data = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let len: usize = entry.shape.iter().product();
            let end = offset + len * 4;
            if end > bytes.len() {
                return Err(invalid(format!("truncated data for `{}`", entry.name)));
            }
            data.push(
                bytes[offset..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            );
            offset = end;
        }
        if offset != bytes.len() {
            return Err(invalid(format!("{} trailing bytes", bytes.len() - offset)));
        }
        Ok(Self { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
