//! `CLWF` checkpoint files. Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "CLWF" | version u32
//! trunk config as JSON: length u32 | bytes
//! head_count u32 | head_count × (task_id u8 | class_count u32 | role u8)
//! param_count u32 | per parameter: length u64 | length × f64
//! stat_count u32  | per running statistic: length u64 | length × f64
//! has_rng u8 [| seed 32 bytes | stream u64 | word_pos u128]
//! config hash 32 bytes
//! SHA-256 of every preceding byte, 32 bytes
//! ```

use super::{write_atomic, ByteReader};
use crate::data::TaskId;
use crate::error::{Error, Result};
use crate::nn::{Head, HeadRole, MultiHeadNet, TrunkConfig};
use crate::rng::{RngState, SeededRng};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CLWF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A network plus the generator position and the hash of the config that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: MultiHeadNet,
    pub rng: Option<RngState>,
    pub config_hash: [u8; 32],
}

impl Checkpoint {
    pub fn new(net: MultiHeadNet) -> Self {
        Self {
            net,
            rng: None,
            config_hash: [0; 32],
        }
    }
}

fn push_array(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let net = &ckpt.net;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(net.config()).expect("trunk config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(net.heads().len() as u32).to_le_bytes());
    for h in net.heads() {
        out.push(h.task.get());
        out.extend_from_slice(&(h.class_count() as u32).to_le_bytes());
        out.push(match h.role {
            HeadRole::Old => 0,
            HeadRole::New => 1,
        });
    }
    let params = net.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        push_array(&mut out, p);
    }
    let stats = net.running_stats();
    out.extend_from_slice(&(stats.len() as u32).to_le_bytes());
    for s in stats {
        push_array(&mut out, s);
    }
    match &ckpt.rng {
        None => out.push(0),
        Some(state) => {
            out.push(1);
            out.extend_from_slice(&state.seed);
            out.extend_from_slice(&state.stream.to_le_bytes());
            out.extend_from_slice(&state.word_pos.to_le_bytes());
        }
    }
    out.extend_from_slice(&ckpt.config_hash);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn read_into(r: &mut ByteReader, targets: Vec<&mut Tensor>, what: &str) -> Result<()> {
    let n = r.u32()? as usize;
    if n != targets.len() {
        return Err(Error::Format(format!("{n} {what} arrays, architecture has {}", targets.len())));
    }
    for (i, t) in targets.into_iter().enumerate() {
        let len = r.u64()? as usize;
        if len != t.len() {
            return Err(Error::Format(format!("{what} {i} has {len} values, expected {}", t.len())));
        }
        for v in t.data_mut() {
            *v = r.f64()?;
        }
    }
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes, "checkpoint");
    if r.take(4).map_err(|_| Error::Format("file too short for checkpoint magic".into()))? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic: not a CLWF checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 40 {
        return Err(Error::Integrity("checkpoint truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("checkpoint digest mismatch (truncated or corrupted)".into()));
    }
    let mut r = ByteReader::new(body, "checkpoint");
    r.take(8)?;
    let config_len = r.u32()? as usize;
    let config: TrunkConfig =
        serde_json::from_slice(r.take(config_len)?).map_err(|e| Error::Format(format!("trunk config: {e}")))?;
    config.validate().map_err(|e| Error::Format(e.to_string()))?;
    let d = config.feature_dim();
    let n_heads = r.u32()? as usize;
    let mut heads = Vec::with_capacity(n_heads.min(16));
    for _ in 0..n_heads {
        let task = TaskId::new(r.u8()?).map_err(|e| Error::Format(e.to_string()))?;
        let k = r.u32()? as usize;
        let role = match r.u8()? {
            0 => HeadRole::Old,
            1 => HeadRole::New,
            other => return Err(Error::Format(format!("unknown head role {other}"))),
        };
        if k < 2 || heads.iter().any(|h: &Head| h.task == task) {
            return Err(Error::Format(format!("invalid head registry entry for task {task}")));
        }
        heads.push(Head {
            task,
            weight: Tensor::zeros(&[d, k]),
            bias: Tensor::zeros(&[k]),
            role,
        });
    }
    let skeleton = MultiHeadNet::build(&config, &mut SeededRng::new(0))?;
    let mut net = MultiHeadNet::from_parts(skeleton.trunk().clone(), heads);
    read_into(&mut r, net.params_mut(), "parameter")?;
    read_into(&mut r, net.running_stats_mut(), "running statistic")?;
    let rng = match r.u8()? {
        0 => None,
        1 => Some(RngState {
            seed: r.take(32)?.try_into().expect("32 bytes"),
            stream: r.u64()?,
            word_pos: r.u128()?,
        }),
        other => return Err(Error::Format(format!("bad rng flag {other}"))),
    };
    let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    if !r.is_done() {
        return Err(Error::Format(format!(
            "{} unexpected bytes at offset {}",
            r.remaining(),
            r.position()
        )));
    }
    Ok(Checkpoint { net, rng, config_hash })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn save_checkpoint(net: &MultiHeadNet, path: &Path) -> Result<()> {
    write_checkpoint(&Checkpoint::new(net.clone()), path)
}

pub fn load_checkpoint(path: &Path) -> Result<MultiHeadNet> {
    Ok(read_checkpoint(path)?.net)
}
