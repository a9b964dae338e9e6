//! Output directories and atomic file writes.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use tempfile::NamedTempFile;

/// `./out/run-<unix seconds>`.
pub fn default_dir() -> PathBuf {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from("out").join(format!("run-{secs}"))
}

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: PathBuf) -> io::Result<Self> {
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Writes `name` through a temp file in the same directory, then renames
    /// it into place, so readers never see a partial file.
    pub fn write_atomic<F, E>(&self, name: &str, fill: F) -> Result<PathBuf, E>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), E>,
        E: From<io::Error>,
    {
        let target = self.root.join(name);
        let tmp = NamedTempFile::new_in(&self.root)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w)?;
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(&target).map_err(|e| e.error)?;
        Ok(target)
    }
}
