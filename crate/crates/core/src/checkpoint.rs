//! Binary checkpoint format.
//!
//! All integers little-endian. Layout:
//!
//! ```text
//! magic "TBCK" | version u32 | role u8
//! config: in_channels, input_size, widths[4], groups, proj_dim, num_classes (u32 each)
//! parent hash: u8 flag + 32 bytes (sha256 of the checkpoint this one descends from)
//! tensor count u32, then per tensor: name (u32 length + UTF-8), rank u32, dims u32...
//! tensor blobs, float32, in table order
//! optimizer: u8 flag; if set, step u64, base_lr f64, warmup u32, patience u32,
//!            scale f64, best f64 (NaN when unset), bad_epochs u32,
//!            then first and second moments for every tensor in table order
//! sha256 of every preceding byte
//! ```
//!
//! The trailing digest doubles as the checkpoint's content hash.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::encoder::{EncoderConfig, EncoderWeights, Role};
use crate::error::{Error, Result};
use crate::optim::{Adam, LrSchedule};

pub const MAGIC: &[u8; 4] = b"TBCK";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub adam: Adam<f32>,
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub weights: EncoderWeights<f32>,
    pub optimizer: Option<OptimizerState>,
    /// Hex hash of the checkpoint these weights were derived from.
    pub parent: Option<String>,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let w = &ckpt.weights;
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    put_u32(&mut b, VERSION);
    b.push(w.role.code());
    let c = &w.config;
    for v in [c.in_channels, c.input_size]
        .into_iter()
        .chain(c.widths)
        .chain([c.groups, c.proj_dim, c.num_classes])
    {
        put_u32(&mut b, v as u32);
    }
    match &ckpt.parent {
        Some(hex_hash) => {
            let raw = hex::decode(hex_hash)
                .ok()
                .filter(|r| r.len() == DIGEST_LEN)
                .ok_or_else(|| Error::contract(format!("parent hash '{hex_hash}' is not a sha256 hex digest")))?;
            b.push(1);
            b.extend_from_slice(&raw);
        }
        None => {
            b.push(0);
            b.extend_from_slice(&[0; DIGEST_LEN]);
        }
    }
    let meta = w.param_meta();
    put_u32(&mut b, meta.len() as u32);
    for m in &meta {
        put_u32(&mut b, m.name.len() as u32);
        b.extend_from_slice(m.name.as_bytes());
        put_u32(&mut b, m.shape.len() as u32);
        for &d in &m.shape {
            put_u32(&mut b, d as u32);
        }
    }
    for t in w.tensors() {
        put_f32s(&mut b, t);
    }
    match &ckpt.optimizer {
        Some(opt) => {
            b.push(1);
            b.extend_from_slice(&opt.adam.step.to_le_bytes());
            let s = &opt.schedule;
            b.extend_from_slice(&s.base_lr.to_le_bytes());
            put_u32(&mut b, s.warmup_epochs as u32);
            put_u32(&mut b, s.patience as u32);
            b.extend_from_slice(&s.scale.to_le_bytes());
            b.extend_from_slice(&s.best.unwrap_or(f64::NAN).to_le_bytes());
            put_u32(&mut b, s.bad_epochs as u32);
            for buf in opt.adam.m.iter().chain(&opt.adam.v) {
                put_f32s(&mut b, buf);
            }
        }
        None => b.push(0),
    }
    let digest = Sha256::digest(&b);
    b.extend_from_slice(&digest);
    Ok(b)
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(b: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        b.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, dst: &mut [f32]) -> std::result::Result<(), String> {
        let raw = self.take(4 * dst.len())?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(format!("file too short ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic, expected TBCK".into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err("content hash mismatch (corrupt or truncated file)".into());
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("format version {version}, expected {VERSION}"));
    }
    let role = Role::from_code(r.u8()?).ok_or("unknown role code")?;
    let mut dims = [0usize; 9];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = EncoderConfig {
        in_channels: dims[0],
        input_size: dims[1],
        widths: [dims[2], dims[3], dims[4], dims[5]],
        groups: dims[6],
        proj_dim: dims[7],
        num_classes: dims[8],
    };
    let has_parent = r.u8()? == 1;
    let parent_raw = r.take(DIGEST_LEN)?;
    let parent = has_parent.then(|| hex::encode(parent_raw));
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut weights =
        EncoderWeights::<f32>::new(config, role, &mut rng).map_err(|e| format!("bad configuration: {e}"))?;
    let meta = weights.param_meta();
    if r.u32()? as usize != meta.len() {
        return Err("tensor count does not match configuration".into());
    }
    for m in &meta {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8")?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        if name != m.name || shape != m.shape {
            return Err(format!("tensor table entry {name} {shape:?} does not match {} {:?}", m.name, m.shape));
        }
    }
    for t in weights.tensors_mut() {
        r.f32s(t)?;
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let base_lr = r.f64()?;
            let warmup_epochs = r.u32()? as usize;
            let patience = r.u32()? as usize;
            let scale = r.f64()?;
            let best = Some(r.f64()?).filter(|b| !b.is_nan());
            let bad_epochs = r.u32()? as usize;
            let lengths: Vec<usize> = meta.iter().map(|m| m.shape.iter().product()).collect();
            let mut adam = Adam::new(&lengths);
            adam.step = step;
            for buf in adam.m.iter_mut().chain(adam.v.iter_mut()) {
                r.f32s(buf)?;
            }
            Some(OptimizerState {
                adam,
                schedule: LrSchedule {
                    base_lr,
                    warmup_epochs,
                    patience,
                    scale,
                    best,
                    bad_epochs,
                },
            })
        }
        other => return Err(format!("bad optimizer flag {other}")),
    };
    if r.pos != body.len() {
        return Err(format!("{} trailing bytes", body.len() - r.pos));
    }
    Ok(Checkpoint {
        weights,
        optimizer,
        parent,
    })
}

/// Writes the checkpoint and returns its content hash.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<String> {
    let bytes = encode(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(&bytes[bytes.len() - DIGEST_LEN..]))
}

/// Reads a checkpoint and its content hash.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = decode(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })?;
    Ok((ckpt, hex::encode(&bytes[bytes.len() - DIGEST_LEN..])))
}

/// Content hash of a checkpoint file without decoding it.
pub fn file_hash(path: &Path) -> Result<String> {
    load_checkpoint(path).map(|(_, h)| h)
}

/// Content hash of an in-memory checkpoint.
pub fn content_hash(ckpt: &Checkpoint) -> Result<String> {
    let bytes = encode(ckpt)?;
    Ok(hex::encode(&bytes[bytes.len() - DIGEST_LEN..]))
}
