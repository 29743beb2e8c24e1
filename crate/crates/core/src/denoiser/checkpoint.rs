//! Self-describing checkpoint files.
//!
//! Layout (all integers and floats little-endian):
//!
//! | offset     | size  | content                                   |
//! |------------|-------|-------------------------------------------|
//! | 0          | 8     | magic `TRUSTCKP`                          |
//! | 8          | 4     | format version (`u32`, currently 1)       |
//! | 12         | 4     | header length `H` in bytes (`u32`)        |
//! | 16         | H     | UTF-8 JSON header ([`CheckpointHeader`])  |
//! | 16 + H     | 8 * N | `N = parameter_count` `f64` parameters    |
//!
//! Parameters are stored layer by layer, input layer first. Each layer
//! contributes its `(out, in)` weight matrix in row-major order followed by
//! its `out` biases.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Architecture, DenoiserModel};
use super::train::{OptimizerInfo, TrainConfig};
use crate::diffusion::ScheduleParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TRUSTCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_loss: f64,
    pub dataset_id: String,
    pub optimizer: OptimizerInfo,
}

impl TrainingMeta {
    pub fn from_config(cfg: &TrainConfig, final_loss: f64) -> Self {
        Self {
            seed: cfg.seed,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            final_loss,
            dataset_id: cfg.dataset_id.clone(),
            optimizer: OptimizerInfo::default(),
        }
    }
}

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub schedule: ScheduleParams,
    pub layer_dims: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: String,
    pub parameter_count: usize,
    pub training: TrainingMeta,
}

/// A trained model together with the schedule it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ScheduleParams,
    pub model: DenoiserModel,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let arch = self.model.architecture();
        CheckpointHeader {
            version: FORMAT_VERSION,
            schedule: self.schedule,
            layer_dims: arch.layer_dims(),
            time_embed_dim: arch.time_embed_dim,
            activation: arch.activation.name().to_string(),
            parameter_count: arch.parameter_count(),
            training: self.training.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let params = self.model.to_flat();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing TRUSTCKP magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;

        let dims = &header.layer_dims;
        if dims.len() < 2 {
            return Err(bad("layer_dims needs at least input and output".into()));
        }
        let data_dim = *dims.last().unwrap();
        if dims[0] != data_dim + header.time_embed_dim {
            return Err(bad(format!(
                "input width {} != data dim {} + time embedding {}",
                dims[0], data_dim, header.time_embed_dim
            )));
        }
        let activation = Activation::from_name(&header.activation)
            .ok_or_else(|| bad(format!("unknown activation {:?}", header.activation)))?;
        let arch = Architecture {
            data_dim,
            hidden: dims[1..dims.len() - 1].to_vec(),
            time_embed_dim: header.time_embed_dim,
            activation,
        };
        if arch.parameter_count() != header.parameter_count {
            return Err(bad(format!(
                "layer_dims imply {} parameters but header declares {}",
                arch.parameter_count(),
                header.parameter_count
            )));
        }
        let payload = &bytes[16 + hlen..];
        if payload.len() != 8 * header.parameter_count {
            return Err(bad(format!(
                "payload holds {} bytes, expected {} for {} parameters",
                payload.len(),
                8 * header.parameter_count,
                header.parameter_count
            )));
        }
        let params: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let model = DenoiserModel::from_flat(arch, &params)
            .map_err(|e| bad(format!("weights: {e}")))?;
        Ok(Self {
            schedule: header.schedule,
            model,
            training: header.training,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        Checkpoint {
            schedule: ScheduleParams::default(),
            model: DenoiserModel::init(Architecture::standard(2), &mut rng).unwrap(),
            training: TrainingMeta {
                seed: 987654321,
                epochs: 77,
                batch_size: 128,
                learning_rate: 1e-3,
                final_loss: 0.123,
                dataset_id: "mix8".into(),
                optimizer: OptimizerInfo::default(),
            },
        }
    }

    #[test]
    fn save_load_preserves_forward_bitwise() {
        let ck = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.training.seed, 987654321);
        assert_eq!(back.training.epochs, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let t = rng.random_range(1..=1000);
            let a = ck.model.forward(&x, t).unwrap();
            let b = back.model.forward(&x, t).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(back, ck);
    }

    #[test]
    fn header_and_payload_disagreement_is_rejected() {
        let ck = sample_checkpoint();
        let mut header = ck.header();
        header.layer_dims[1] = 64;
        let hbytes = serde_json::to_vec(&header).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(hbytes.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&hbytes);
        for p in ck.model.to_flat() {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));

        let mut truncated = ck.to_bytes();
        truncated.truncate(truncated.len() - 8);
        assert!(matches!(Checkpoint::from_bytes(&truncated), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
    }

    #[test]
    fn serialization_is_deterministic() {
        assert_eq!(sample_checkpoint().to_bytes(), sample_checkpoint().to_bytes());
    }
}
