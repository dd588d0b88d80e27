use std::fs;
use std::path::Path;

use vkd_core::checkpoint::{decode, encode, Checkpoint};

use crate::error::{io_err, Error, Result};

/// Writes through a sibling temporary file so an interrupted save never
/// leaves a truncated checkpoint behind.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, encode(ckpt)).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|e| match e {
        vkd_core::Error::Checkpoint(m) => Error::Core(vkd_core::Error::Checkpoint(format!("{}: {m}", path.display()))),
        other => other.into(),
    })
}
