//! Crash-safe file output: every write goes to a temporary file in the
//! destination directory and is renamed into place.

use std::io::{self, Write};
use std::path::Path;

/// Replaces `path` with `bytes` atomically; readers see the old content or
/// the new content, never a prefix.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
