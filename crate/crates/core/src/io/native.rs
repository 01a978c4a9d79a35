//! Native volume format: `<name>.rav` holds raw little-endian voxels and
//! `<name>.json` a sidecar `{dims, spacing, dtype}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, Dtype, Volume, VoxelData};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub dtype: Dtype,
}

/// Both file paths for a native volume, given either file or the stem.
pub fn native_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("rav") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut rav = stem.clone().into_os_string();
    rav.push(".rav");
    let mut json = stem.into_os_string();
    json.push(".json");
    (rav.into(), json.into())
}

pub fn write_native(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let (rav, json) = native_paths(path.as_ref());
    let sidecar = Sidecar {
        dims: v.dims(),
        spacing: v.spacing(),
        dtype: v.dtype(),
    };
    std::fs::write(&rav, v.data().to_le_bytes()).map_err(|e| Error::io(&rav, e))?;
    std::fs::write(&json, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))
}

pub fn read_native(path: impl AsRef<Path>) -> Result<Volume> {
    let (rav, json) = native_paths(path.as_ref());
    let text = std::fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: Sidecar = serde_json::from_slice(&text)?;
    let bytes = std::fs::read(&rav).map_err(|e| Error::io(&rav, e))?;
    let expected = sidecar.dims.len() * sidecar.dtype.size();
    if bytes.len() != expected {
        return Err(Error::TruncatedData {
            expected,
            actual: bytes.len(),
        });
    }
    Volume::new(
        sidecar.dims,
        sidecar.spacing,
        VoxelData::from_le_bytes(sidecar.dtype, &bytes),
    )
}
