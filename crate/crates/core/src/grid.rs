//! Voxel grid types shared by every other module.
//!
//! Coordinates are `(x, y, z)` with `x` varying fastest in memory. The `z`
//! axis is the axial (through-plane) axis: "axial slice `z`" always means
//! the fixed-`z` plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 3]", from = "[usize; 3]")]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        [d.nx, d.ny, d.nz]
    }
}

impl From<[usize; 3]> for Dims {
    fn from(a: [usize; 3]) -> Self {
        Dims::new(a[0], a[1], a[2])
    }
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidDims(*self));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / (self.nx * self.ny);
        [x, y, z]
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        p[0] < self.nx && p[1] < self.ny && p[2] < self.nz
    }

    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.nx,
            Axis::Y => self.ny,
            Axis::Z => self.nz,
        }
    }

    /// In-plane `(width, height)` of a slice taken perpendicular to `axis`.
    pub fn slice_dims(&self, axis: Axis) -> (usize, usize) {
        match axis {
            Axis::Z => (self.nx, self.ny),
            Axis::Y => (self.nx, self.nz),
            Axis::X => (self.ny, self.nz),
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        (*self).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    /// Map in-slice `(u, v)` on the plane `axis = idx` back to a 3D voxel.
    #[inline]
    pub fn to_voxel(self, idx: usize, u: usize, v: usize) -> [usize; 3] {
        match self {
            Axis::Z => [u, v, idx],
            Axis::Y => [u, idx, v],
            Axis::X => [idx, u, v],
        }
    }

    /// Project a 3D voxel into `(slice index, u, v)` for this axis.
    #[inline]
    pub fn from_voxel(self, p: [usize; 3]) -> (usize, usize, usize) {
        match self {
            Axis::Z => (p[2], p[0], p[1]),
            Axis::Y => (p[1], p[0], p[2]),
            Axis::X => (p[0], p[1], p[2]),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Uint8,
    Int16,
    Float32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Uint8 => 1,
            Dtype::Int16 => 2,
            Dtype::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub enum VoxelData {
    Uint8(Vec<u8>),
    Int16(Vec<i16>),
    Float32(Vec<f32>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::Uint8(v) => v.len(),
            VoxelData::Int16(v) => v.len(),
            VoxelData::Float32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            VoxelData::Uint8(_) => Dtype::Uint8,
            VoxelData::Int16(_) => Dtype::Int16,
            VoxelData::Float32(_) => Dtype::Float32,
        }
    }

    #[inline]
    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            VoxelData::Uint8(v) => v[i] as f64,
            VoxelData::Int16(v) => v[i] as f64,
            VoxelData::Float32(v) => v[i] as f64,
        }
    }

    /// Little-endian raw bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            VoxelData::Uint8(v) => v.clone(),
            VoxelData::Int16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VoxelData::Float32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::Uint8 => VoxelData::Uint8(bytes.to_vec()),
            Dtype::Int16 => VoxelData::Int16(
                bytes
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            Dtype::Float32 => VoxelData::Float32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        }
    }
}

// Float data compares bitwise so NaN payloads survive round-trip checks.
impl PartialEq for VoxelData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (VoxelData::Uint8(a), VoxelData::Uint8(b)) => a == b,
            (VoxelData::Int16(a), VoxelData::Int16(b)) => a == b,
            (VoxelData::Float32(a), VoxelData::Float32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// Orientation fields of a NIfTI header. Carried through unchanged; none of
/// the prompting or evaluation code looks at them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    /// quatern_b, quatern_c, quatern_d, qoffset_x, qoffset_y, qoffset_z
    pub quatern: [f32; 6],
    /// srow_x, srow_y, srow_z
    pub srow: [f32; 12],
    pub qfac: f32,
}

impl Default for Orientation {
    fn default() -> Self {
        Self {
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 6],
            srow: [0.0; 12],
            qfac: 1.0,
        }
    }
}

/// A 3D scalar image with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f64; 3],
    data: VoxelData,
    pub orientation: Orientation,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f64; 3], data: VoxelData) -> Result<Self> {
        dims.validate()?;
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidSpacing(spacing));
        }
        if data.len() != dims.len() {
            return Err(Error::DataLength {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            data,
            orientation: Orientation::default(),
        })
    }

    pub fn zeros(dims: Dims, dtype: Dtype) -> Result<Self> {
        let n = dims.len();
        let data = match dtype {
            Dtype::Uint8 => VoxelData::Uint8(vec![0; n]),
            Dtype::Int16 => VoxelData::Int16(vec![0; n]),
            Dtype::Float32 => VoxelData::Float32(vec![0.0; n]),
        };
        Self::new(dims, [1.0; 3], data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &VoxelData {
        &self.data
    }

    #[inline]
    pub fn value(&self, p: [usize; 3]) -> f64 {
        self.data.get_f64(self.dims.index(p[0], p[1], p[2]))
    }
}

/// Binary mask on a 3D grid, one flag per voxel in x-fastest order.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<bool>,
    count: usize,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("dims", &self.dims)
            .field("count", &self.count)
            .finish()
    }
}

impl BinaryMask {
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            bits: vec![false; dims.len()],
            count: 0,
        }
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            dims,
            bits: vec![true; dims.len()],
            count: dims.len(),
        }
    }

    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::DataLength {
                expected: dims.len(),
                actual: bits.len(),
            });
        }
        let count = bits.iter().filter(|b| **b).count();
        Ok(Self { dims, bits, count })
    }

    pub fn from_voxels<I: IntoIterator<Item = [usize; 3]>>(dims: Dims, voxels: I) -> Self {
        let mut m = Self::empty(dims);
        for p in voxels {
            m.set(p, true);
        }
        m
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn voxel_count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn get(&self, p: [usize; 3]) -> bool {
        self.bits[self.dims.index(p[0], p[1], p[2])]
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.bits[i]
    }

    #[inline]
    pub fn set(&mut self, p: [usize; 3], value: bool) {
        let i = self.dims.index(p[0], p[1], p[2]);
        self.set_index(i, value);
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, value: bool) {
        let old = std::mem::replace(&mut self.bits[i], value);
        match (old, value) {
            (false, true) => self.count += 1,
            (true, false) => self.count -= 1,
            _ => {}
        }
    }

    /// Iterate foreground voxels in raster order.
    pub fn voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| self.dims.coords(i))
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(self.dims, other.dims));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.check_dims(other)?;
        let bits: Vec<bool> = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Self::from_bits(self.dims, bits)
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    /// `self ∧ ¬other`
    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn xor(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a != b)
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count())
    }

    /// Foreground voxel count on axial slice `z`.
    pub fn slice_count(&self, z: usize) -> usize {
        let plane = self.dims.nx * self.dims.ny;
        self.bits[z * plane..(z + 1) * plane]
            .iter()
            .filter(|b| **b)
            .count()
    }

    pub fn slice(&self, axis: Axis, idx: usize) -> Mask2d {
        let (w, h) = self.dims.slice_dims(axis);
        let mut out = Mask2d::empty(w, h);
        for v in 0..h {
            for u in 0..w {
                if self.get(axis.to_voxel(idx, u, v)) {
                    out.set(u, v, true);
                }
            }
        }
        out
    }

    pub fn set_slice(&mut self, axis: Axis, idx: usize, slice: &Mask2d) {
        let (w, h) = self.dims.slice_dims(axis);
        assert_eq!((w, h), (slice.width(), slice.height()), "slice dims");
        for v in 0..h {
            for u in 0..w {
                self.set(axis.to_voxel(idx, u, v), slice.get(u, v));
            }
        }
    }

    /// Copy of `self` with everything outside axial slices `[lo, hi]` cleared.
    pub fn restrict_axial(&self, lo: usize, hi: usize) -> Self {
        let plane = self.dims.nx * self.dims.ny;
        let bits = self
            .bits
            .iter()
            .enumerate()
            .map(|(i, b)| *b && (lo..=hi).contains(&(i / plane)))
            .collect();
        Self::from_bits(self.dims, bits).expect("same length")
    }
}

/// A 2D binary slice, `u` fastest.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask2d {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    count: usize,
}

impl std::fmt::Debug for Mask2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Mask2d {}x{} ({} set)", self.width, self.height, self.count)?;
        for v in 0..self.height {
            let row: String = (0..self.width)
                .map(|u| if self.get(u, v) { '#' } else { '.' })
                .collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

impl Mask2d {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
            count: 0,
        }
    }

    pub fn from_pixels<I: IntoIterator<Item = (usize, usize)>>(
        width: usize,
        height: usize,
        pixels: I,
    ) -> Self {
        let mut m = Self::empty(width, height);
        for (u, v) in pixels {
            m.set(u, v, true);
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        let i = v * self.width + u;
        let old = std::mem::replace(&mut self.bits[i], value);
        match (old, value) {
            (false, true) => self.count += 1,
            (true, false) => self.count -= 1,
            _ => {}
        }
    }

    /// Foreground pixels in raster order (v-major, u-minor).
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    /// Lift to a `width × height × 1` mask, the wire shape of a slice.
    pub fn to_mask3(&self) -> BinaryMask {
        BinaryMask::from_bits(Dims::new(self.width, self.height, 1), self.bits.clone())
            .expect("same length")
    }

    pub fn from_mask3(m: &BinaryMask) -> Result<Self> {
        let d = m.dims();
        if d.nz != 1 {
            return Err(Error::InvalidDims(d));
        }
        Ok(Self {
            width: d.nx,
            height: d.ny,
            bits: m.bits().to_vec(),
            count: m.voxel_count(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn linear_index_is_bijective(nx in 1usize..9, ny in 1usize..9, nz in 1usize..9) {
            let d = Dims::new(nx, ny, nz);
            let mut seen = vec![false; d.len()];
            for z in 0..nz { for y in 0..ny { for x in 0..nx {
                let i = d.index(x, y, z);
                prop_assert!(!seen[i]);
                seen[i] = true;
                prop_assert_eq!(d.coords(i), [x, y, z]);
            }}}
            prop_assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn volume_rejects_bad_spacing_and_length() {
        let d = Dims::new(2, 2, 2);
        assert!(matches!(
            Volume::new(d, [1.0, 0.0, 1.0], VoxelData::Uint8(vec![0; 8])),
            Err(Error::InvalidSpacing(_))
        ));
        assert!(matches!(
            Volume::new(d, [1.0; 3], VoxelData::Uint8(vec![0; 7])),
            Err(Error::DataLength { .. })
        ));
    }

    #[test]
    fn count_tracks_bits() {
        let mut m = BinaryMask::empty(Dims::new(3, 3, 3));
        m.set([1, 1, 1], true);
        m.set([1, 1, 1], true);
        m.set([0, 2, 1], true);
        assert_eq!(m.voxel_count(), 2);
        m.set([1, 1, 1], false);
        assert_eq!(m.voxel_count(), 1);
        assert_eq!(m.voxel_count(), m.bits().iter().filter(|b| **b).count());
    }

    #[test]
    fn slice_roundtrip_each_axis() {
        let d = Dims::new(4, 5, 6);
        let m = BinaryMask::from_voxels(d, [[1, 2, 3], [3, 4, 5], [0, 0, 3]]);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let mut rebuilt = BinaryMask::empty(d);
            for i in 0..d.extent(axis) {
                rebuilt.set_slice(axis, i, &m.slice(axis, i));
            }
            assert_eq!(rebuilt, m);
        }
        assert_eq!(m.slice(Axis::Z, 3).count(), 2);
        assert!(m.slice(Axis::X, 3).get(4, 5));
    }
}
