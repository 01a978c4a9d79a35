//! Minimal single-file NIfTI-1 (`.nii`, `.nii.gz`) reader and writer.
//!
//! Only 3D images of `uint8`, `int16` or `float32` are supported. Spacing is
//! taken from `pixdim[1..=3]`; the qform/sform fields are kept opaquely on
//! the [`Volume`] and written back unchanged.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::grid::{Dims, Dtype, Orientation, Volume, VoxelData};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

fn dtype_code(d: Dtype) -> (i16, i16) {
    match d {
        Dtype::Uint8 => (DT_UINT8, 8),
        Dtype::Int16 => (DT_INT16, 16),
        Dtype::Float32 => (DT_FLOAT32, 32),
    }
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        raw = out;
    }
    decode(&raw)
}

pub fn decode(raw: &[u8]) -> Result<Volume> {
    if raw.len() < HEADER_SIZE {
        return Err(Error::TruncatedData {
            expected: HEADER_SIZE,
            actual: raw.len(),
        });
    }
    if LittleEndian::read_i32(&raw[0..4]) == HEADER_SIZE as i32 {
        decode_with::<LittleEndian>(raw)
    } else if BigEndian::read_i32(&raw[0..4]) == HEADER_SIZE as i32 {
        decode_with::<BigEndian>(raw)
    } else {
        Err(Error::MalformedHeader("sizeof_hdr is not 348".into()))
    }
}

fn decode_with<B: ByteOrder>(raw: &[u8]) -> Result<Volume> {
    let h = &raw[..HEADER_SIZE];
    if &h[344..348] != b"n+1\0" {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&h[344..347])
        )));
    }
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = B::read_i16(&h[40 + 2 * i..]);
    }
    if dim[0] != 3 {
        return Err(Error::MalformedHeader(format!("dim[0] = {}, expected 3", dim[0])));
    }
    if dim[1..4].iter().any(|d| *d <= 0) {
        return Err(Error::MalformedHeader(format!("non-positive dims {:?}", &dim[1..4])));
    }
    let dims = Dims::new(dim[1] as usize, dim[2] as usize, dim[3] as usize);

    let datatype = B::read_i16(&h[70..]);
    let dtype = match datatype {
        DT_UINT8 => Dtype::Uint8,
        DT_INT16 => Dtype::Int16,
        DT_FLOAT32 => Dtype::Float32,
        other => return Err(Error::UnsupportedDtype(other)),
    };

    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = B::read_f32(&h[76 + 4 * i..]);
    }
    let vox_offset = B::read_f32(&h[108..]);
    if vox_offset.is_nan() || vox_offset < HEADER_SIZE as f32 || vox_offset.fract() != 0.0 {
        return Err(Error::MalformedHeader(format!("vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;

    let mut orientation = Orientation {
        qform_code: B::read_i16(&h[252..]),
        sform_code: B::read_i16(&h[254..]),
        qfac: pixdim[0],
        ..Default::default()
    };
    for (i, q) in orientation.quatern.iter_mut().enumerate() {
        *q = B::read_f32(&h[256 + 4 * i..]);
    }
    for (i, s) in orientation.srow.iter_mut().enumerate() {
        *s = B::read_f32(&h[280 + 4 * i..]);
    }

    let nbytes = dims.len() * dtype.size();
    let available = raw.len().saturating_sub(offset);
    if available < nbytes {
        return Err(Error::TruncatedData {
            expected: nbytes,
            actual: available,
        });
    }
    let body = &raw[offset..offset + nbytes];
    let data = match dtype {
        Dtype::Uint8 => VoxelData::Uint8(body.to_vec()),
        Dtype::Int16 => {
            let mut v = vec![0i16; dims.len()];
            B::read_i16_into(body, &mut v);
            VoxelData::Int16(v)
        }
        Dtype::Float32 => {
            let mut v = vec![0f32; dims.len()];
            B::read_f32_into(body, &mut v);
            VoxelData::Float32(v)
        }
    };
    let spacing = [pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64];
    let mut vol = Volume::new(dims, spacing, data)?;
    vol.orientation = orientation;
    Ok(vol)
}

/// Serialize to little-endian single-file NIfTI-1 bytes (uncompressed).
pub fn encode(v: &Volume) -> Vec<u8> {
    type B = LittleEndian;
    let mut h = vec![0u8; VOX_OFFSET];
    B::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[38] = b'r';
    let d = v.dims();
    let dim: [i16; 8] = [3, d.nx as i16, d.ny as i16, d.nz as i16, 1, 1, 1, 1];
    for (i, x) in dim.iter().enumerate() {
        B::write_i16(&mut h[40 + 2 * i..], *x);
    }
    let (code, bitpix) = dtype_code(v.dtype());
    B::write_i16(&mut h[70..], code);
    B::write_i16(&mut h[72..], bitpix);
    let s = v.spacing();
    let o = &v.orientation;
    let pixdim: [f32; 8] = [
        o.qfac,
        s[0] as f32,
        s[1] as f32,
        s[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        B::write_f32(&mut h[76 + 4 * i..], *p);
    }
    B::write_f32(&mut h[108..], VOX_OFFSET as f32);
    B::write_f32(&mut h[112..], 1.0); // scl_slope
    h[123] = 2; // xyzt_units: mm
    B::write_i16(&mut h[252..], o.qform_code);
    B::write_i16(&mut h[254..], o.sform_code);
    for (i, q) in o.quatern.iter().enumerate() {
        B::write_f32(&mut h[256 + 4 * i..], *q);
    }
    for (i, r) in o.srow.iter().enumerate() {
        B::write_f32(&mut h[280 + 4 * i..], *r);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    // bytes 348..352: empty extension flag
    h.extend_from_slice(&v.data().to_le_bytes());
    h
}

/// Write `v`; a `.gz` suffix selects gzip compression.
pub fn write_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(v);
    let gz = path.extension().is_some_and(|e| e == "gz");
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = if gz {
        let mut enc = GzEncoder::new(w, Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        w.write_all(&bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}
