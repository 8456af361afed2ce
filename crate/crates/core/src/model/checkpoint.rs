//! ERPW parameter checkpoints, little-endian:
//!
//! ```text
//! "ERPW" | u32 version | u32 n_entries
//! n_entries × ( u32 name_len | name | u32 rank | rank × u32 dims | Π dims × f32 )
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const ERPW_MAGIC: &[u8; 4] = b"ERPW";
pub const ERPW_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, write_erpw(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        read_erpw(&bytes)
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub fn write_erpw(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ERPW_MAGIC);
    out.extend_from_slice(&ERPW_VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.entries.len() as u32).to_le_bytes());
    for e in &ckpt.entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() - *pos < n {
        return Err(Error::format(
            *pos as u64,
            format!("truncated {what}: need {n} bytes, {} remain", bytes.len() - *pos),
        ));
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn u32_at(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4, what)?.try_into().unwrap()))
}

pub fn read_erpw(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4, "magic")? != ERPW_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"ERPW\""));
    }
    let version = u32_at(bytes, &mut pos, "version")?;
    if version != ERPW_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n = u32_at(bytes, &mut pos, "entry count")? as usize;
    let mut entries = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name_at = pos;
        let len = u32_at(bytes, &mut pos, "name length")? as usize;
        let name = std::str::from_utf8(take(bytes, &mut pos, len, "name")?)
            .map_err(|_| Error::format(name_at as u64, "tensor name is not UTF-8"))?
            .to_string();
        let rank = u32_at(bytes, &mut pos, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(u32_at(bytes, &mut pos, "dimension")? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = take(bytes, &mut pos, count.saturating_mul(4), &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push(CheckpointEntry { name, shape, data });
    }
    if pos != bytes.len() {
        return Err(Error::format(pos as u64, format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(Checkpoint { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Group, ModelConfig, ModelParams};

    #[test]
    fn model_round_trip_is_byte_exact() {
        let cfg = ModelConfig::default();
        let p = ModelParams::<f32>::init(&cfg, 5).unwrap();
        let all = [Group::Encoder, Group::Projector, Group::ProjectorState, Group::Classifier];
        let bytes = write_erpw(&p.to_checkpoint(&all));
        let ckpt = read_erpw(&bytes).unwrap();
        let mut q = ModelParams::<f32>::init(&cfg, 6).unwrap();
        q.apply_checkpoint(&ckpt, &all).unwrap();
        assert_eq!(p, q);
        assert_eq!(write_erpw(&q.to_checkpoint(&all)), bytes);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = ModelParams::<f32>::init(&ModelConfig::reduced(), 1).unwrap();
        let ckpt = p.to_checkpoint(&[Group::Encoder]);
        let mut q = ModelParams::<f32>::init(&ModelConfig::default(), 1).unwrap();
        assert!(q.apply_checkpoint(&ckpt, &[Group::Encoder]).is_err());
    }

    #[test]
    fn missing_required_group_is_rejected() {
        let cfg = ModelConfig::reduced();
        let p = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let ckpt = p.to_checkpoint(&[Group::Encoder]);
        let mut q = p.clone();
        assert!(q.apply_checkpoint(&ckpt, &[Group::Classifier]).is_err());
        assert!(q.apply_checkpoint(&ckpt, &[Group::Encoder]).is_ok());
    }

    #[test]
    fn corrupted_files_report_positions() {
        let p = ModelParams::<f32>::init(&ModelConfig::reduced(), 1).unwrap();
        let bytes = write_erpw(&p.to_checkpoint(&[Group::Encoder]));
        match read_erpw(&bytes[..bytes.len() - 2]) {
            Err(Error::Format { offset, message }) => {
                assert!(offset > 12, "{offset}");
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[1] = 0;
        assert!(matches!(read_erpw(&bad), Err(Error::Format { offset: 0, .. })));
        let mut long = bytes;
        long.extend_from_slice(&[0, 0]);
        assert!(matches!(read_erpw(&long), Err(Error::Format { .. })));
    }
}
