//! Network checkpoints: a `params.json` descriptor next to a `params.bin`
//! payload of little-endian `f32` values in descriptor order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::net::{ScoreNetParams, LAYER_NAMES};
use super::stack::Channels;
use crate::error::{Error, Result};
use crate::io;
use crate::sampler::NoiseSchedule;

pub const CHECKPOINT_FORMAT: &str = "jointrecon-scorenet-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub n_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDescriptor {
    pub format: String,
    pub channels: Channels,
    pub widths: [usize; 3],
    pub layers: Vec<LayerDescriptor>,
    pub n_params: usize,
    pub schedule: NoiseSchedule,
    pub seed: u64,
    pub payload_sha256: String,
}

fn encode(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `params.json` and `params.bin` into `dir`.
pub fn save_checkpoint(params: &ScoreNetParams, schedule: &NoiseSchedule, seed: u64, dir: &Path) -> Result<()> {
    params.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let payload = encode(&params.values);
    let layers = params
        .layer_shapes()
        .iter()
        .zip(LAYER_NAMES)
        .map(|(s, name)| LayerDescriptor {
            name: name.to_string(),
            cin: s.cin,
            cout: s.cout,
            kernel: 3,
            n_params: s.n_params(),
        })
        .collect();
    let desc = CheckpointDescriptor {
        format: CHECKPOINT_FORMAT.to_string(),
        channels: params.channels,
        widths: params.widths,
        layers,
        n_params: params.n_params(),
        schedule: *schedule,
        seed,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let bin = dir.join("params.bin");
    fs::write(&bin, &payload).map_err(|e| Error::io(&bin, e))?;
    io::write_json(&desc, &dir.join("params.json"))
}

/// Loads a checkpoint directory, verifying its payload hash.
pub fn load_checkpoint(dir: &Path) -> Result<(ScoreNetParams, CheckpointDescriptor)> {
    let json = dir.join("params.json");
    let bin = dir.join("params.bin");
    for p in [&json, &bin] {
        if !p.exists() {
            return Err(Error::MissingInput(format!("checkpoint file {} not found", p.display())));
        }
    }
    let desc: CheckpointDescriptor = io::read_json(&json)?;
    let bad = |reason: String| Error::Format {
        path: bin.clone(),
        reason,
    };
    if desc.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unknown checkpoint format '{}'", desc.format)));
    }
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != desc.n_params * 4 {
        return Err(bad(format!(
            "payload has {} bytes, descriptor implies {}",
            bytes.len(),
            desc.n_params * 4
        )));
    }
    if hex::encode(Sha256::digest(&bytes)) != desc.payload_sha256 {
        return Err(bad("payload hash does not match descriptor".to_string()));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let params = ScoreNetParams {
        channels: desc.channels,
        widths: desc.widths,
        sigma_min: desc.schedule.sigma_min,
        sigma_max: desc.schedule.sigma_max,
        values,
    };
    params.validate()?;
    let shapes = params.layer_shapes();
    if desc.layers.len() != shapes.len()
        || desc.layers.iter().zip(&shapes).any(|(l, s)| l.cin != s.cin || l.cout != s.cout)
    {
        return Err(bad("layer table does not match the architecture".to_string()));
    }
    Ok((params, desc))
}
