//! ERPD trial container, little-endian throughout:
//!
//! ```text
//! "ERPD" | u32 version | u32 n_trials | u32 M | u32 N | f32 fs
//! u32 name_block_len | UTF-8 channel names joined by '\n'
//! n_trials × ( u32 subject_id | u8 label | u32 stimulus_code | M·N × f32 )
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, Label, Trial};
use crate::error::{Error, Result};

pub const ERPD_MAGIC: &[u8; 4] = b"ERPD";
pub const ERPD_VERSION: u32 = 1;

const HEADER_FIXED: usize = 4 + 4 * 4 + 4 + 4;

pub fn write_erpd<W: Write>(dataset: &Dataset, mut w: W) -> std::io::Result<()> {
    let names = dataset.channel_names.join("\n");
    w.write_all(ERPD_MAGIC)?;
    w.write_all(&ERPD_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.trials.len() as u32).to_le_bytes())?;
    w.write_all(&(dataset.n_channels as u32).to_le_bytes())?;
    w.write_all(&(dataset.n_samples as u32).to_le_bytes())?;
    w.write_all(&dataset.sample_rate.to_le_bytes())?;
    w.write_all(&(names.len() as u32).to_le_bytes())?;
    w.write_all(names.as_bytes())?;
    let mut buf = Vec::with_capacity(9 + 4 * dataset.n_channels * dataset.n_samples);
    for t in &dataset.trials {
        buf.clear();
        buf.extend_from_slice(&t.subject_id.to_le_bytes());
        buf.push(t.label as u8);
        buf.extend_from_slice(&t.stimulus_code.to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_erpd(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_erpd(dataset, &mut bytes).map_err(|e| Error::io(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_erpd(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_erpd(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_erpd(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != ERPD_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"ERPD\"")));
    }
    let version = c.u32("version")?;
    if version != ERPD_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n_trials = c.u32("trial count")? as usize;
    let m = c.u32("channel count")? as usize;
    let n = c.u32("sample count")? as usize;
    let fs = f32::from_le_bytes(c.take(4, "sample rate")?.try_into().unwrap());
    let name_pos = c.pos;
    let name_len = c.u32("channel-name length")? as usize;
    let names_raw = c.take(name_len, "channel names")?;
    let names = std::str::from_utf8(names_raw)
        .map_err(|e| Error::format((name_pos + 4 + e.valid_up_to()) as u64, "channel names are not UTF-8"))?;
    let channel_names: Vec<String> = if names.is_empty() {
        Vec::new()
    } else {
        names.split('\n').map(str::to_owned).collect()
    };
    if !channel_names.is_empty() && channel_names.len() != m {
        return Err(Error::format(
            name_pos as u64,
            format!("{} channel names for {m} channels", channel_names.len()),
        ));
    }

    let record = 9 + 4 * m * n;
    let expected = HEADER_FIXED + name_len + n_trials * record;
    if bytes.len() != expected {
        let offset = bytes.len().min(expected) as u64;
        return Err(Error::format(
            offset,
            format!(
                "declared {n_trials} trials need {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }

    let mut ds = Dataset::new(m, n, fs, channel_names);
    ds.trials.reserve(n_trials);
    for _ in 0..n_trials {
        let subject_id = c.u32("subject id")?;
        let label_pos = c.pos;
        let label = Label::from_u8(c.take(1, "label")?[0])
            .ok_or_else(|| Error::format(label_pos as u64, "label must be 0 or 1"))?;
        let stimulus_code = c.u32("stimulus code")?;
        let raw = c.take(4 * m * n, "trial data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        ds.trials.push(Trial {
            subject_id,
            label,
            stimulus_code,
            data,
        });
    }
    Ok(ds)
}
