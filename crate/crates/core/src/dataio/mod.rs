//! On-disk formats: PNM images, dataset manifests, checkpoints.

mod checkpoint;
mod observation;
pub mod pnm;

pub use checkpoint::{Checkpoint, VoxelRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use observation::{Manifest, ObservationSet, State, View, ViewRecord, MANIFEST_FILE, MANIFEST_VERSION};

use std::path::Path;

use crate::{Error, Result};

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
