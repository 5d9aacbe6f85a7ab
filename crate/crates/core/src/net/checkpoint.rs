//! Versioned binary checkpoint container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "EMCK" | version u32
//! | config: n_conv u32, per conv layer (out_ch, k_t, k_f, s_t, s_f) u32 x5,
//!   bilstm u32, hidden u32, use_bn u8, activation u8, num_classes u32,
//!   input_bins u32, bn_epsilon f64
//! | n_tensors u32
//! | per tensor: name_len u32, UTF-8 name, rank u32, dims u32 each,
//!   row-major f32 values
//! ```
//!
//! Tensors cover all learnable parameters plus the running batch-norm
//! statistics (as one-element tensors), so an evaluation-ready model round
//! trips through the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::net::params::NetworkParams;
use crate::net::{Activation, ConvLayerConfig, NetworkConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    write_u32(w, t.dims().len() as u32)?;
    for &d in t.dims() {
        write_u32(w, d as u32)?;
    }
    for &v in t.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<(String, Tensor)> {
    let name_len = read_u32(r)? as usize;
    if name_len > 4096 {
        return Err(CoreError::data("implausible tensor name length"));
    }
    let mut name_buf = vec![0u8; name_len];
    r.read_exact(&mut name_buf)?;
    let name = String::from_utf8(name_buf)
        .map_err(|_| CoreError::data("tensor name is not UTF-8"))?;
    let rank = read_u32(r)? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(r)? as usize);
    }
    let len: usize = dims.iter().product();
    let mut raw = vec![0u8; len * 4];
    r.read_exact(&mut raw)?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((name, Tensor::from_vec(&dims, data)?))
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| CoreError::data(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let cfg = &params.config;

    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    write_u32(&mut w, cfg.conv_layers.len() as u32)?;
    for layer in &cfg.conv_layers {
        write_u32(&mut w, layer.out_channels as u32)?;
        write_u32(&mut w, layer.kernel.0 as u32)?;
        write_u32(&mut w, layer.kernel.1 as u32)?;
        write_u32(&mut w, layer.stride.0 as u32)?;
        write_u32(&mut w, layer.stride.1 as u32)?;
    }
    write_u32(&mut w, cfg.bilstm_layers as u32)?;
    write_u32(&mut w, cfg.hidden_size as u32)?;
    w.write_all(&[cfg.use_seq_batchnorm as u8])?;
    let act = match cfg.activation {
        Activation::LeakyRelu => 0u8,
        Activation::Relu => 1,
        Activation::Tanh => 2,
    };
    w.write_all(&[act])?;
    write_u32(&mut w, cfg.num_classes as u32)?;
    write_u32(&mut w, params.input_bins as u32)?;
    let bn_eps = params
        .lstm
        .first()
        .and_then(|l| l.fwd.bn.as_ref())
        .map(|bn| bn.epsilon)
        .unwrap_or(crate::net::params::BN_EPSILON);
    w.write_all(&bn_eps.to_le_bytes())?;

    let mut tensors: Vec<(String, Tensor)> = params
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    for (i, layer) in params.lstm.iter().enumerate() {
        for (dir, p) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)] {
            if let Some(bn) = &p.bn {
                tensors.push((
                    format!("bilstm.{i}.{dir}.bn_running_mean"),
                    Tensor::scalar(bn.running_mean),
                ));
                tensors.push((
                    format!("bilstm.{i}.{dir}.bn_running_var"),
                    Tensor::scalar(bn.running_var),
                ));
            }
        }
    }
    write_u32(&mut w, tensors.len() as u32)?;
    for (name, t) in &tensors {
        write_tensor(&mut w, name, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let file = File::open(path)
        .map_err(|e| CoreError::data(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let bad = |msg: String| CoreError::data(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not an EMCK checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let n_conv = read_u32(&mut r)? as usize;
    if n_conv > 16 {
        return Err(bad("implausible conv layer count".into()));
    }
    let mut conv_layers = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        let out_channels = read_u32(&mut r)? as usize;
        let k_t = read_u32(&mut r)? as usize;
        let k_f = read_u32(&mut r)? as usize;
        let s_t = read_u32(&mut r)? as usize;
        let s_f = read_u32(&mut r)? as usize;
        conv_layers.push(ConvLayerConfig {
            out_channels,
            kernel: (k_t, k_f),
            stride: (s_t, s_f),
        });
    }
    let bilstm_layers = read_u32(&mut r)? as usize;
    let mut hidden = [0u8; 4];
    r.read_exact(&mut hidden)?;
    let hidden_size = u32::from_le_bytes(hidden) as usize;
    let mut flags = [0u8; 2];
    r.read_exact(&mut flags)?;
    let use_seq_batchnorm = flags[0] != 0;
    let activation = match flags[1] {
        0 => Activation::LeakyRelu,
        1 => Activation::Relu,
        2 => Activation::Tanh,
        other => return Err(bad(format!("unknown activation code {other}"))),
    };
    let num_classes = read_u32(&mut r)? as usize;
    let input_bins = read_u32(&mut r)? as usize;
    let mut eps_buf = [0u8; 8];
    r.read_exact(&mut eps_buf)?;
    let bn_epsilon = f64::from_le_bytes(eps_buf);

    let config = NetworkConfig {
        conv_layers,
        bilstm_layers,
        hidden_size,
        use_seq_batchnorm,
        activation,
        num_classes,
    };
    // Build a skeleton with the right shapes, then fill from the file.
    let mut params = crate::net::params::init_params(&config, input_bins, 0)?;
    for layer in &mut params.lstm {
        for p in [&mut layer.fwd, &mut layer.bwd] {
            if let Some(bn) = &mut p.bn {
                bn.epsilon = bn_epsilon;
            }
        }
    }

    let n_tensors = read_u32(&mut r)? as usize;
    let mut loaded = std::collections::HashMap::new();
    for _ in 0..n_tensors {
        let (name, tensor) = read_tensor(&mut r)?;
        loaded.insert(name, tensor);
    }

    for (name, slot) in params.tensors_mut() {
        let tensor = loaded
            .remove(&name)
            .ok_or_else(|| CoreError::data(format!("checkpoint misses tensor {name}")))?;
        if tensor.dims() != slot.dims() {
            return Err(CoreError::data(format!(
                "tensor {name}: shape {:?} does not match expected {:?}",
                tensor.dims(),
                slot.dims()
            )));
        }
        *slot = tensor;
    }
    for (i, layer) in params.lstm.iter_mut().enumerate() {
        for (dir, p) in [("fwd", &mut layer.fwd), ("bwd", &mut layer.bwd)] {
            if let Some(bn) = &mut p.bn {
                let mean = loaded
                    .remove(&format!("bilstm.{i}.{dir}.bn_running_mean"))
                    .ok_or_else(|| CoreError::data("checkpoint misses running mean"))?;
                let var = loaded
                    .remove(&format!("bilstm.{i}.{dir}.bn_running_var"))
                    .ok_or_else(|| CoreError::data("checkpoint misses running var"))?;
                bn.running_mean = mean.data()[0];
                bn.running_var = var.data()[0];
            }
        }
    }
    if !loaded.is_empty() {
        let mut names: Vec<String> = loaded.into_keys().collect();
        names.sort();
        return Err(CoreError::data(format!(
            "checkpoint carries unexpected tensors: {}",
            names.join(", ")
        )));
    }
    Ok(params)
}
