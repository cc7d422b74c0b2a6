//! Agent checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! (format version, config, tensor table, optimiser counters, RNG state),
//! then every tensor as little-endian `f32` in table order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::network::ConvNet;
use crate::nn::Adam;
use crate::sac::{Nets, SacAgent, SacConfig};
use crate::DrlError;

pub const MAGIC: &[u8; 8] = b"EXPOSAC\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Stored as a string because JSON numbers stop at 64 bits.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, String> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|e| format!("rng word position: {e}"))?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: SacConfig,
    tensors: Vec<TensorInfo>,
    adam_steps: [u64; 4],
    updates: u64,
    rng: RngState,
}

/// Parameter tensors of one network under a name prefix.
fn net_tensors(prefix: &str, net: &ConvNet) -> Vec<TensorInfo> {
    net.tensors()
        .into_iter()
        .map(|(name, shape)| TensorInfo { name: format!("{prefix}.{name}"), shape })
        .collect()
}

/// Full tensor table of an agent built from `config`, in storage order.
pub fn tensor_table(config: &SacConfig) -> Vec<TensorInfo> {
    let nets = Nets::new(config);
    let mut t = Vec::new();
    let groups: [(&str, &ConvNet); 5] = [
        ("actor", &nets.actor),
        ("critic1", &nets.critic),
        ("critic2", &nets.critic),
        ("target1", &nets.critic),
        ("target2", &nets.critic),
    ];
    for (prefix, net) in groups {
        t.extend(net_tensors(prefix, net));
    }
    t.push(TensorInfo { name: "log_alpha".into(), shape: vec![1] });
    for (prefix, net) in [("actor", &nets.actor), ("critic1", &nets.critic), ("critic2", &nets.critic)] {
        let n = net.param_len();
        t.push(TensorInfo { name: format!("adam.{prefix}.m"), shape: vec![n] });
        t.push(TensorInfo { name: format!("adam.{prefix}.v"), shape: vec![n] });
    }
    t.push(TensorInfo { name: "adam.log_alpha.m".into(), shape: vec![1] });
    t.push(TensorInfo { name: "adam.log_alpha.v".into(), shape: vec![1] });
    t
}

fn flat_storage(agent: &SacAgent) -> Vec<&[f32]> {
    let p = &agent.params;
    let o = &agent.optim;
    vec![
        &p.actor,
        &p.critics[0],
        &p.critics[1],
        &p.targets[0],
        &p.targets[1],
        std::slice::from_ref(&agent.log_alpha),
        &o.actor.m,
        &o.actor.v,
        &o.critics[0].m,
        &o.critics[0].v,
        &o.critics[1].m,
        &o.critics[1].v,
        &o.log_alpha.m,
        &o.log_alpha.v,
    ]
}

pub fn save_agent(agent: &SacAgent, path: &Path) -> Result<(), DrlError> {
    let header = Header {
        version: FORMAT_VERSION,
        config: agent.config.clone(),
        tensors: tensor_table(&agent.config),
        adam_steps: [agent.optim.actor.steps, agent.optim.critics[0].steps, agent.optim.critics[1].steps, agent.optim.log_alpha.steps],
        updates: agent.updates,
        rng: RngState::capture(&agent.rng),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ckpt_err(path, e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for slice in flat_storage(agent) {
        for v in slice {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> DrlError {
    DrlError::Checkpoint { path: path.display().to_string(), message: message.into() }
}

fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; 4 * n];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Loads a checkpoint, rejecting any tensor whose name or shape differs
/// from what its stored configuration implies.
pub fn load_agent(path: &Path) -> Result<SacAgent, DrlError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| ckpt_err(path, e.to_string()))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| ckpt_err(path, e.to_string()))?;
    if &magic != MAGIC {
        return Err(ckpt_err(path, "not an agent checkpoint"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(ckpt_err(path, "header too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|e| ckpt_err(path, e.to_string()))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ckpt_err(path, format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(ckpt_err(path, format!("format version {} unsupported", header.version)));
    }
    header.config.validate().map_err(|e| ckpt_err(path, e.to_string()))?;
    let expected = tensor_table(&header.config);
    if expected.len() != header.tensors.len() {
        return Err(ckpt_err(path, format!("{} tensors, expected {}", header.tensors.len(), expected.len())));
    }
    for (got, want) in header.tensors.iter().zip(&expected) {
        if got != want {
            return Err(ckpt_err(path, format!("tensor {} has shape {:?}, expected {} {:?}", got.name, got.shape, want.name, want.shape)));
        }
    }

    let mut agent = SacAgent::new(header.config.clone(), 0).map_err(|e| ckpt_err(path, e.to_string()))?;
    let lens: Vec<usize> = flat_storage(&agent).iter().map(|s| s.len()).collect();
    let mut blocks = Vec::with_capacity(lens.len());
    for n in lens {
        blocks.push(read_f32s(&mut r, n).map_err(|e| ckpt_err(path, format!("tensor data: {e}")))?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ckpt_err(path, "trailing bytes after tensor data"));
    }
    let mut it = blocks.into_iter();
    let mut next = || it.next().expect("block count matches");
    agent.params.actor = next();
    agent.params.critics = [next(), next()];
    agent.params.targets = [next(), next()];
    agent.log_alpha = next()[0];
    let lr = header.config.lr;
    let adam = |m: Vec<f32>, v: Vec<f32>, steps: u64, lr: f64| Adam { m, v, steps, ..Adam::new(0, lr) };
    agent.optim.actor = adam(next(), next(), header.adam_steps[0], lr);
    agent.optim.critics = [adam(next(), next(), header.adam_steps[1], lr), adam(next(), next(), header.adam_steps[2], lr)];
    agent.optim.log_alpha = adam(next(), next(), header.adam_steps[3], header.config.alpha_lr);
    agent.updates = header.updates;
    agent.rng = header.rng.restore().map_err(|e| ckpt_err(path, e))?;
    Ok(agent)
}
