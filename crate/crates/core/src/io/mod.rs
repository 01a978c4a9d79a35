//! Volume and mask file formats.

pub mod native;
pub mod nifti;
pub mod rle;

use std::path::Path;

use crate::error::Result;
use crate::grid::Volume;

pub use native::{read_native, write_native};
pub use nifti::{read_nifti, write_nifti};
pub use rle::{rle_decode, rle_encode, RleMask};

fn is_nifti(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

/// Read a volume, choosing the format from the file name.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    if is_nifti(path) {
        read_nifti(path)
    } else {
        read_native(path)
    }
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_nifti(path) {
        write_nifti(v, path)
    } else {
        write_native(v, path)
    }
}
