//! Checkpoint container and attention CSV export.
//!
//! Layout, little-endian: magic `PROSECK\0`, version u32, config hash
//! [32], vocabulary hash [32], u32 length + JSON model config, u32 tensor
//! count, then per tensor: u32 length + UTF-8 name, u32 rows, u32 cols,
//! `rows * cols` f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::nn_core::Mat;
use crate::symbolic::Vocabulary;

use super::{ModelError, Prose, ProseConfig};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"PROSECK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config_hash: [u8; 32],
    pub vocab_hash: [u8; 32],
}

pub fn save_checkpoint(path: &Path, model: &Prose, config_hash: [u8; 32]) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&config_hash)?;
    w.write_all(&Vocabulary::default().hash())?;
    let cfg = serde_json::to_vec(&model.cfg).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    write_bytes(&mut w, &cfg)?;
    w.write_all(&(model.store.len() as u32).to_le_bytes())?;
    for p in model.store.ids() {
        write_bytes(&mut w, model.store.name(p).as_bytes())?;
        let m = model.store.get(p);
        w.write_all(&(m.rows as u32).to_le_bytes())?;
        w.write_all(&(m.cols as u32).to_le_bytes())?;
        for v in &m.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Prose), ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut config_hash = [0u8; 32];
    let mut vocab_hash = [0u8; 32];
    r.read_exact(&mut config_hash)?;
    r.read_exact(&mut vocab_hash)?;
    if vocab_hash != Vocabulary::default().hash() {
        return Err(bad("vocabulary hash differs from this build"));
    }
    let cfg: ProseConfig =
        serde_json::from_slice(&read_bytes(&mut r)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut model = Prose::new(cfg, 0)?;
    let count = read_u32(&mut r)? as usize;
    if count != model.store.len() {
        return Err(ModelError::Checkpoint(format!(
            "{count} tensors, model has {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let name = String::from_utf8(read_bytes(&mut r)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        let p = model
            .store
            .find(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor {name}")))?;
        let (rows, cols) = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
        if model.store.get(p).shape() != (rows, cols) {
            return Err(ModelError::Checkpoint(format!("{name}: shape {rows}x{cols}")));
        }
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *model.store.get_mut(p) = Mat::from_vec(rows, cols, data);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok((
        CheckpointHeader {
            version,
            config_hash,
            vocab_hash,
        },
        model,
    ))
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>, ModelError> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(ModelError::Checkpoint("oversized field".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Writes `fusion_l{layer}_h{head}.csv` per matrix, row-major, and returns
/// the paths in layer-major order.
pub fn write_attention_csv(dir: &Path, maps: &[Vec<Mat>]) -> std::io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (l, heads) in maps.iter().enumerate() {
        for (h, m) in heads.iter().enumerate() {
            let path = dir.join(format!("fusion_l{l}_h{h}.csv"));
            let mut w = BufWriter::new(File::create(&path)?);
            for r in 0..m.rows {
                let line: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            w.flush()?;
            paths.push(path);
        }
    }
    Ok(paths)
}
