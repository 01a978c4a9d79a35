//! Deterministic 2D/3D binary morphology.
//!
//! Everything here is a pure function of its inputs. Component ids are
//! assigned in raster discovery order, so identical masks always produce
//! identical label arrays.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, BinaryMask, Dims, Mask2d};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity3 {
    #[serde(rename = "6")]
    Six,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity2 {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

fn offsets3(c: Connectivity3) -> Vec<[isize; 3]> {
    let mut out = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                let keep = match c {
                    Connectivity3::Six => manhattan == 1,
                    Connectivity3::TwentySix => manhattan > 0,
                };
                if keep {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

fn offsets2(c: Connectivity2) -> Vec<[isize; 3]> {
    let mut out = Vec::new();
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let manhattan = dx.abs() + dy.abs();
            let keep = match c {
                Connectivity2::Four => manhattan == 1,
                Connectivity2::Eight => manhattan > 0,
            };
            if keep {
                out.push([dx, dy, 0]);
            }
        }
    }
    out
}

/// Per-voxel component ids, `0` for background and `1..=count` otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabels {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub count: usize,
    /// `sizes[id - 1]` is the voxel count of component `id`.
    pub sizes: Vec<usize>,
}

impl ComponentLabels {
    pub fn size_of(&self, id: u32) -> usize {
        self.sizes[id as usize - 1]
    }

    pub fn mask_of(&self, id: u32) -> BinaryMask {
        let bits = self.labels.iter().map(|l| *l == id).collect();
        BinaryMask::from_bits(self.dims, bits).expect("label array matches dims")
    }

    /// Id of the largest component; ties go to the smallest id, i.e. the
    /// component discovered first in raster order.
    pub fn largest_id(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, i as u32 + 1));
            }
        }
        best.map(|(_, id)| id)
    }
}

fn label_grid(dims: Dims, fg: &[bool], offsets: &[[isize; 3]]) -> ComponentLabels {
    let mut labels = vec![0u32; dims.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..dims.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let [x, y, z] = dims.coords(i);
            for o in offsets {
                let (nx, ny, nz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
                if nx < 0 || ny < 0 || nz < 0 {
                    continue;
                }
                let n = [nx as usize, ny as usize, nz as usize];
                if !dims.contains(n) {
                    continue;
                }
                let j = dims.index(n[0], n[1], n[2]);
                if fg[j] && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    ComponentLabels {
        dims,
        labels,
        count: sizes.len(),
        sizes,
    }
}

pub fn connected_components(m: &BinaryMask, connectivity: Connectivity3) -> ComponentLabels {
    label_grid(m.dims(), m.bits(), &offsets3(connectivity))
}

/// 2D labeling; the result lives on a `width × height × 1` grid.
pub fn connected_components_2d(m: &Mask2d, connectivity: Connectivity2) -> ComponentLabels {
    let m3 = m.to_mask3();
    label_grid(m3.dims(), m3.bits(), &offsets2(connectivity))
}

pub fn largest_component(c: &ComponentLabels) -> Result<BinaryMask> {
    let id = c.largest_id().ok_or(Error::EmptyMask)?;
    Ok(c.mask_of(id))
}

pub fn largest_component_2d(m: &Mask2d, connectivity: Connectivity2) -> Result<Mask2d> {
    let labels = connected_components_2d(m, connectivity);
    let mask = largest_component(&labels).map_err(|_| Error::EmptySlice)?;
    Mask2d::from_mask3(&mask)
}

/// Representative click for a 2D region: the rounded centroid if it lands
/// on the region, else the region pixel nearest the exact centroid (ties by
/// `v`, then `u`).
pub fn centroid_point(m: &Mask2d) -> Result<(usize, usize)> {
    let n = m.count() as i128;
    if n == 0 {
        return Err(Error::EmptySlice);
    }
    let (mut su, mut sv) = (0i128, 0i128);
    for (u, v) in m.pixels() {
        su += u as i128;
        sv += v as i128;
    }
    // round half up of s / n
    let round = |s: i128| ((2 * s + n) / (2 * n)) as usize;
    let (ru, rv) = (round(su), round(sv));
    if ru < m.width() && rv < m.height() && m.get(ru, rv) {
        return Ok((ru, rv));
    }
    // Squared distances scaled by n² stay integral.
    let mut best: Option<(i128, usize, usize)> = None;
    for (u, v) in m.pixels() {
        let du = u as i128 * n - su;
        let dv = v as i128 * n - sv;
        let d = du * du + dv * dv;
        // pixels() is already (v, u)-ordered, so strict `<` keeps the tie rule
        if best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, u, v));
        }
    }
    let (_, u, v) = best.expect("non-empty");
    Ok((u, v))
}

/// Inclusive `(min, max)` corners of the foreground.
pub fn bounding_box_2d(m: &Mask2d) -> Result<((usize, usize), (usize, usize))> {
    let mut it = m.pixels();
    let first = it.next().ok_or(Error::EmptySlice)?;
    let (mut lo, mut hi) = (first, first);
    for (u, v) in it {
        lo = (lo.0.min(u), lo.1.min(v));
        hi = (hi.0.max(u), hi.1.max(v));
    }
    Ok((lo, hi))
}

pub fn bounding_box_3d(m: &BinaryMask) -> Result<([usize; 3], [usize; 3])> {
    let mut it = m.voxels();
    let first = it.next().ok_or(Error::EmptyMask)?;
    let (mut lo, mut hi) = (first, first);
    for p in it {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Ok((lo, hi))
}

/// One pass of a 1D running max (`dilate`) or min (`erode`) of half-width
/// `r` along `axis`, restricted to in-bounds samples.
fn sweep(dims: Dims, bits: &[bool], axis: usize, r: usize, dilate: bool) -> Vec<bool> {
    let n = [dims.nx, dims.ny, dims.nz][axis];
    let stride = [1, dims.nx, dims.nx * dims.ny][axis];
    let mut out = vec![false; bits.len()];
    let mut line = vec![false; n];
    for start in 0..bits.len() {
        if dims.coords(start)[axis] != 0 {
            continue;
        }
        for (k, l) in line.iter_mut().enumerate() {
            *l = bits[start + k * stride];
        }
        for k in 0..n {
            let lo = k.saturating_sub(r);
            let hi = (k + r).min(n - 1);
            let window = &line[lo..=hi];
            out[start + k * stride] = if dilate {
                window.iter().any(|b| *b)
            } else {
                window.iter().all(|b| *b)
            };
        }
    }
    out
}

fn morph3(m: &BinaryMask, radius: usize, dilate: bool, axes: &[usize]) -> BinaryMask {
    if radius == 0 {
        return m.clone();
    }
    let mut bits = m.bits().to_vec();
    for &a in axes {
        bits = sweep(m.dims(), &bits, a, radius, dilate);
    }
    BinaryMask::from_bits(m.dims(), bits).expect("same length")
}

/// Dilation by a Chebyshev ball (a `(2r+1)³` cube), clipped to the grid.
pub fn dilate(m: &BinaryMask, radius: usize) -> BinaryMask {
    morph3(m, radius, true, &[0, 1, 2])
}

/// Erosion by a Chebyshev ball. Out-of-grid voxels are ignored, so erosion
/// never eats into the volume border by itself.
pub fn erode(m: &BinaryMask, radius: usize) -> BinaryMask {
    morph3(m, radius, false, &[0, 1, 2])
}

pub fn dilate_2d(m: &Mask2d, radius: usize) -> Mask2d {
    Mask2d::from_mask3(&morph3(&m.to_mask3(), radius, true, &[0, 1])).expect("2d")
}

pub fn erode_2d(m: &Mask2d, radius: usize) -> Mask2d {
    Mask2d::from_mask3(&morph3(&m.to_mask3(), radius, false, &[0, 1])).expect("2d")
}

/// All in-bounds pixels whose Chebyshev distance to the nearest foreground
/// pixel is exactly `radius`.
pub fn chebyshev_ring(m: &Mask2d, radius: usize) -> Result<Mask2d> {
    if m.is_empty() {
        return Err(Error::EmptySlice);
    }
    if radius == 0 {
        return Ok(m.clone());
    }
    let outer = dilate_2d(m, radius);
    let inner = dilate_2d(m, radius - 1);
    Ok(Mask2d::from_pixels(
        m.width(),
        m.height(),
        outer.pixels().filter(|&(u, v)| !inner.get(u, v)),
    ))
}

/// An ordered in-plane curve on a non-axial slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContourCurve {
    pub slice_axis: Axis,
    pub slice_idx: usize,
    /// `(u, v)` pixels in the slice plane.
    pub points: Vec<(usize, usize)>,
    pub closed: bool,
}

impl ContourCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn voxel(&self, i: usize) -> [usize; 3] {
        let (u, v) = self.points[i];
        self.slice_axis.to_voxel(self.slice_idx, u, v)
    }
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Greedy nearest-neighbour chain over a pixel set.
///
/// Pixels are compared as `(v, u)`. The chain starts at the smallest pixel
/// and repeatedly hops to the nearest unvisited one by squared Euclidean
/// distance, ties going to the smallest pixel.
pub fn order_into_curve(axis: Axis, idx: usize, pixels: &[(usize, usize)]) -> ContourCurve {
    let key = |p: &(usize, usize)| (p.1, p.0);
    let mut remaining: Vec<(usize, usize)> = pixels.to_vec();
    remaining.sort_by_key(key);
    remaining.dedup();
    let mut points = Vec::with_capacity(remaining.len());
    if !remaining.is_empty() {
        let mut current = remaining.remove(0);
        points.push(current);
        while !remaining.is_empty() {
            let (best, _) = remaining
                .iter()
                .enumerate()
                .min_by_key(|(_, p)| {
                    let du = p.0.abs_diff(current.0);
                    let dv = p.1.abs_diff(current.1);
                    (du * du + dv * dv, key(p))
                })
                .expect("non-empty");
            current = remaining.remove(best);
            points.push(current);
        }
    }
    let closed = points.len() > 1 && chebyshev(points[0], *points.last().unwrap()) <= 2;
    ContourCurve {
        slice_axis: axis,
        slice_idx: idx,
        points,
        closed,
    }
}

/// The fixed-x or fixed-y slice holding the most `pred ∧ ¬gt` voxels.
/// Ties prefer the x axis, then the lowest index.
pub fn non_axial_slice_with_most_fp(pred: &BinaryMask, gt: &BinaryMask) -> Result<(Axis, usize)> {
    let fp = pred.and_not(gt)?;
    let d = fp.dims();
    let mut per_x = vec![0usize; d.nx];
    let mut per_y = vec![0usize; d.ny];
    for [x, y, _] in fp.voxels() {
        per_x[x] += 1;
        per_y[y] += 1;
    }
    let mut best = (0usize, Axis::X, 0usize);
    for (axis, counts) in [(Axis::X, &per_x), (Axis::Y, &per_y)] {
        for (i, &c) in counts.iter().enumerate() {
            if c > best.0 {
                best = (c, axis, i);
            }
        }
    }
    if best.0 == 0 {
        return Err(Error::NoFalsePositives);
    }
    Ok((best.1, best.2))
}

/// Axial structure of an instance: which z-slices hold foreground.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForegroundExtent {
    /// Sorted axial indices with at least one foreground voxel.
    pub slice_set: Vec<usize>,
    pub min_idx: usize,
    pub max_idx: usize,
    /// Lower median of `slice_set`.
    pub median_idx: usize,
}

impl ForegroundExtent {
    pub fn from_mask(m: &BinaryMask) -> Result<Self> {
        let slice_set: Vec<usize> = (0..m.dims().nz).filter(|&z| m.slice_count(z) > 0).collect();
        Self::from_indices(slice_set)
    }

    pub fn from_indices(mut slice_set: Vec<usize>) -> Result<Self> {
        slice_set.sort_unstable();
        slice_set.dedup();
        if slice_set.is_empty() {
            return Err(Error::EmptyMask);
        }
        let median_idx = slice_set[(slice_set.len() - 1) / 2];
        Ok(Self {
            min_idx: slice_set[0],
            max_idx: *slice_set.last().unwrap(),
            median_idx,
            slice_set,
        })
    }

    pub fn len(&self) -> usize {
        self.slice_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slice_set.is_empty()
    }

    pub fn contains(&self, z: usize) -> bool {
        self.slice_set.binary_search(&z).is_ok()
    }

    /// Whether every index in `[min_idx, max_idx]` holds foreground.
    pub fn is_contiguous(&self) -> bool {
        self.max_idx - self.min_idx + 1 == self.slice_set.len()
    }
}
