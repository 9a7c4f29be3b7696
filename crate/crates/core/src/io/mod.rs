pub mod checkpoint;
pub mod container;
pub mod layout;
pub mod loader;
pub mod params;
pub mod pmap;

use std::io::Write;
use std::path::Path;

pub use checkpoint::{init_checkpoint, quantize_checkpoint, TensorSummary};
pub use container::{read_container, write_container, Container, Meta, TensorData};
pub use loader::{f32_params, load_latent_model, load_model};
pub use params::{param_count, ParamCounts};
pub use pmap::{Precision, PrecisionMap};

use crate::error::{Error, Result};

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    // Temp files are created owner-only; outputs get ordinary permissions.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_container(path: &Path, c: &Container) -> Result<()> {
    write_atomic(path, &c.to_bytes()?)
}

pub fn load_container(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_container(&bytes)
}
