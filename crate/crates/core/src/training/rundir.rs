use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use super::History;
use crate::error::{Error, Result};
use crate::model::Checkpoint;

/// `key = value` lines.
pub fn write_config_snapshot<K: Display, V: Display>(path: &Path, entries: &[(K, V)]) -> Result<()> {
    let text: String = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Output directory of one run: `config.txt`, `<phase>_metrics.csv` and
/// ERPW checkpoints.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }

    pub fn write_config<K: Display, V: Display>(&self, entries: &[(K, V)]) -> Result<()> {
        write_config_snapshot(&self.path.join("config.txt"), entries)
    }

    pub fn write_metrics(&self, phase: &str, history: &History) -> Result<()> {
        let p = self.path.join(format!("{phase}_metrics.csv"));
        fs::write(&p, history.to_csv()).map_err(|e| Error::io(&p, e))
    }

    pub fn save_checkpoint(&self, name: &str, ckpt: &Checkpoint) -> Result<PathBuf> {
        let p = self.path.join(name);
        ckpt.save(&p)?;
        Ok(p)
    }
}
