//! Atomic file output: write to a sibling temp file, then rename into
//! place so readers never observe a partial file.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| ".out".into());
    name.push(&format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes bytes atomically (temp file + rename in the same directory).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs a save routine against a temp path, then renames the result
/// into place. Used for module `save` methods that take a path.
pub fn save_atomic<E>(
    path: &Path,
    save: impl FnOnce(&Path) -> Result<(), E>,
) -> Result<(), io::Error>
where
    E: std::fmt::Display,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = temp_sibling(path);
    save(&tmp).map_err(|e| io::Error::other(e.to_string()))?;
    fs::rename(&tmp, path)?;
    Ok(())
}
