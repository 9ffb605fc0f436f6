//! Versioned checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!   magic "DNCKPT\0\0" (8 bytes)
//!   u32 version (= 1)
//!   u32 in_channels, u32 hidden_channels, u32 hidden_layers, u32 kernel
//!   f64 leaky_slope
//!   u64 step_count (cumulative, including any fine-tune base)
//!   u64 base_step (steps inherited from the fine-tune base; 0 for fresh runs)
//!   32-byte training config hash
//!   u32 conv count, then per conv: u32 co, u32 ci, u32 k,
//!     co*k*k*ci f64 weights ([out][ky][kx][in] order), co f64 biases
//!   u8 has_adam; if 1: u64 t, f64 beta1, f64 beta2, f64 eps,
//!     then per conv m-weights/m-bias, then per conv v-weights/v-bias
//!
//! Parameters are stored as f64. An f32 network widens exactly on save and
//! truncates back to the identical bits on load, so load(save(x)) == x in
//! either precision.

use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AdamState, Architecture, ConvLayer, LayerGrad, Network, Scalar};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DNCKPT\0\0";
const VERSION: u32 = 1;

/// Everything a training run needs to stop and continue: parameters,
/// optimizer state, progress, and the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub net: Network<T>,
    pub step_count: u64,
    pub base_step: u64,
    pub config_hash: [u8; 32],
    pub adam: Option<AdamState<T>>,
}

/// Serializes and writes the checkpoint; returns the hex SHA-256 of the
/// written bytes (the identity used in evaluation reports).
pub fn save_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<String> {
    let bytes = serialize(ckpt);
    std::fs::write(path, &bytes)?;
    Ok(hex_sha256(&bytes))
}

/// Reads and parses a checkpoint; returns it with the hex SHA-256 of the
/// file contents.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Checkpoint<T>, String)> {
    let bytes = std::fs::read(path)?;
    let ckpt = deserialize(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok((ckpt, hex_sha256(&bytes)))
}

fn serialize<T: Scalar>(ckpt: &Checkpoint<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let arch = ckpt.net.arch();
    put_u32(&mut out, arch.in_channels as u32);
    put_u32(&mut out, arch.hidden_channels as u32);
    put_u32(&mut out, arch.hidden_layers as u32);
    put_u32(&mut out, arch.kernel_size as u32);
    put_f64(&mut out, arch.leaky_slope);
    out.extend_from_slice(&ckpt.step_count.to_le_bytes());
    out.extend_from_slice(&ckpt.base_step.to_le_bytes());
    out.extend_from_slice(&ckpt.config_hash);
    put_u32(&mut out, ckpt.net.layers.len() as u32);
    for layer in &ckpt.net.layers {
        put_u32(&mut out, layer.co as u32);
        put_u32(&mut out, layer.ci as u32);
        put_u32(&mut out, layer.k as u32);
        for &w in &layer.weights {
            put_f64(&mut out, w.to_f64());
        }
        for &b in &layer.bias {
            put_f64(&mut out, b.to_f64());
        }
    }
    match &ckpt.adam {
        None => out.push(0),
        Some(adam) => {
            out.push(1);
            out.extend_from_slice(&adam.t.to_le_bytes());
            put_f64(&mut out, adam.beta1);
            put_f64(&mut out, adam.beta2);
            put_f64(&mut out, adam.eps);
            for blocks in [&adam.m, &adam.v] {
                for block in blocks {
                    for &w in &block.d_weights {
                        put_f64(&mut out, w.to_f64());
                    }
                    for &b in &block.d_bias {
                        put_f64(&mut out, b.to_f64());
                    }
                }
            }
        }
    }
    out
}

fn deserialize<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let arch = Architecture {
        in_channels: get_u32(&mut r)? as usize,
        hidden_channels: get_u32(&mut r)? as usize,
        hidden_layers: get_u32(&mut r)? as usize,
        kernel_size: get_u32(&mut r)? as usize,
        leaky_slope: get_f64(&mut r)?,
    };
    arch.validate()?;
    let mut step = [0u8; 8];
    read_exact(&mut r, &mut step)?;
    let step_count = u64::from_le_bytes(step);
    read_exact(&mut r, &mut step)?;
    let base_step = u64::from_le_bytes(step);
    if base_step > step_count {
        return Err(Error::Format(format!(
            "base_step {base_step} exceeds step_count {step_count}"
        )));
    }
    let mut config_hash = [0u8; 32];
    read_exact(&mut r, &mut config_hash)?;

    let n_convs = get_u32(&mut r)? as usize;
    if n_convs != arch.n_convs() {
        return Err(Error::Format(format!(
            "{n_convs} conv blocks, architecture implies {}",
            arch.n_convs()
        )));
    }
    let mut net = Network::zeros(arch)?;
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let co = get_u32(&mut r)? as usize;
        let ci = get_u32(&mut r)? as usize;
        let k = get_u32(&mut r)? as usize;
        if co != layer.co || ci != layer.ci || k != layer.k {
            return Err(Error::Format(format!(
                "conv {i} is {co}x{ci}x{k}x{k}, architecture implies {}x{}x{}x{}",
                layer.co, layer.ci, layer.k, layer.k
            )));
        }
        read_block(&mut r, layer)?;
    }

    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag)?;
    let adam = match flag[0] {
        0 => None,
        1 => {
            let mut t = [0u8; 8];
            read_exact(&mut r, &mut t)?;
            let mut adam = AdamState::new(&net);
            adam.t = u64::from_le_bytes(t);
            adam.beta1 = get_f64(&mut r)?;
            adam.beta2 = get_f64(&mut r)?;
            adam.eps = get_f64(&mut r)?;
            for which in 0..2 {
                let blocks: &mut Vec<LayerGrad<T>> =
                    if which == 0 { &mut adam.m } else { &mut adam.v };
                for block in blocks {
                    for w in &mut block.d_weights {
                        *w = T::from_f64(get_f64(&mut r)?);
                    }
                    for b in &mut block.d_bias {
                        *b = T::from_f64(get_f64(&mut r)?);
                    }
                }
            }
            Some(adam)
        }
        other => return Err(Error::Format(format!("bad adam flag {other}"))),
    };
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", r.len())));
    }
    Ok(Checkpoint {
        net,
        step_count,
        base_step,
        config_hash,
        adam,
    })
}

fn read_block<T: Scalar>(r: &mut &[u8], layer: &mut ConvLayer<T>) -> Result<()> {
    for w in &mut layer.weights {
        *w = T::from_f64(get_f64(r)?);
    }
    for b in &mut layer.bias {
        *b = T::from_f64(get_f64(r)?);
    }
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn get_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut &[u8]) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    Read::read_exact(r, buf).map_err(|_| Error::Format("truncated checkpoint".into()))
}

/// Hex SHA-256, also used to fingerprint training configs.
pub fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
