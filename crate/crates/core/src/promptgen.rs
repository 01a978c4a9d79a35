//! Static prompt schemes: everything that can be derived from the ground
//! truth alone, without a model in the loop.
//!
//! Each generator is a plain function; [`StaticScheme`] wraps them behind a
//! common trait so the session engine can pick one by name.

use crate::error::{Error, Result};
use crate::grid::{Axis, BinaryMask, Dims};
use crate::morphology::{
    bounding_box_2d, bounding_box_3d, centroid_point, dilate_2d, largest_component_2d,
    Connectivity2, ForegroundExtent,
};
use crate::prompt::{Mode, Prompt, PromptPlan, PromptShape};
use crate::rng::SeededRng;

/// `round(num / den)` with halves rounded up, for non-negative operands.
fn round_div(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Index in the sorted `set` closest to `target`; ties go to the lower one.
fn snap_to_member(set: &[usize], target: usize) -> usize {
    *set.iter()
        .min_by_key(|&&i| (i.abs_diff(target), i))
        .expect("non-empty slice set")
}

/// `n` anchor slices spread evenly over `[min(I), max(I)]`, each snapped to
/// the closest member of `I`. Always starts at `min(I)` and ends at
/// `max(I)`; returns all of `I` when `|I| <= n`.
pub fn equally_spaced_indices(extent: &ForegroundExtent, n: usize) -> Vec<usize> {
    let set = &extent.slice_set;
    if set.len() <= n {
        return set.clone();
    }
    if n < 2 {
        return vec![extent.median_idx];
    }
    let span = extent.max_idx - extent.min_idx;
    let mut out: Vec<usize> = Vec::with_capacity(n);
    for j in 0..n {
        let raw = extent.min_idx + round_div(j * span, n - 1);
        let snapped = snap_to_member(set, raw);
        if !out.contains(&snapped) {
            out.push(snapped);
        }
    }
    out
}

fn axial(gt: &BinaryMask, z: usize) -> crate::grid::Mask2d {
    gt.slice(Axis::Z, z)
}

/// Click position on one slice: centroid of its largest 8-connected part.
pub fn slice_anchor_point(gt: &BinaryMask, z: usize) -> Result<[usize; 3]> {
    let lc = largest_component_2d(&axial(gt, z), Connectivity2::Eight)?;
    let (x, y) = centroid_point(&lc)?;
    Ok([x, y, z])
}

fn extent(gt: &BinaryMask) -> Result<ForegroundExtent> {
    ForegroundExtent::from_mask(gt)
}

/// Pick `n` of `pool`, distinct while possible, then with replacement.
/// Returned flag marks resampled entries.
fn pick<T: Copy>(pool: &[T], n: usize, rng: &mut SeededRng) -> Vec<(T, bool)> {
    let mut out: Vec<(T, bool)> = rng
        .sample_distinct(pool.len(), n)
        .into_iter()
        .map(|i| (pool[i], false))
        .collect();
    while out.len() < n {
        out.push((pool[rng.below(pool.len())], true));
    }
    out
}

/// `n` random foreground clicks on every foreground slice.
pub fn n_pps(gt: &BinaryMask, n: usize, rng: &mut SeededRng) -> Result<PromptPlan> {
    if n == 0 {
        return Err(Error::InvalidParameter("N PPS needs n >= 1".into()));
    }
    let ext = extent(gt)?;
    let mut prompts = Vec::new();
    for &z in &ext.slice_set {
        let pixels: Vec<(usize, usize)> = axial(gt, z).pixels().collect();
        let mut stream = rng.child(z);
        for ((x, y), dup) in pick(&pixels, n, &mut stream) {
            let mut p = Prompt::pos([x, y, z]);
            p.duplicate = dup;
            prompts.push(p);
        }
    }
    Ok(PromptPlan::new(format!("{n}PPS"), rng.path(), Mode::TwoD, prompts))
}

/// `ceil(n/2)` foreground and `floor(n/2)` background clicks per slice,
/// interleaved positive first. With `neg_radius` the background clicks are
/// drawn from within that Chebyshev distance of the slice foreground.
pub fn n_pm_pps(
    gt: &BinaryMask,
    n: usize,
    neg_radius: Option<usize>,
    rng: &mut SeededRng,
) -> Result<PromptPlan> {
    if n < 2 {
        return Err(Error::InvalidParameter("N±PPS needs n >= 2".into()));
    }
    let ext = extent(gt)?;
    let (n_pos, n_neg) = (n.div_ceil(2), n / 2);
    let mut prompts = Vec::new();
    for &z in &ext.slice_set {
        let slice = axial(gt, z);
        let fg: Vec<(usize, usize)> = slice.pixels().collect();
        let region = match neg_radius {
            Some(r) => dilate_2d(&slice, r),
            None => crate::grid::Mask2d::from_pixels(
                slice.width(),
                slice.height(),
                (0..slice.height()).flat_map(|v| (0..slice.width()).map(move |u| (u, v))),
            ),
        };
        let bg: Vec<(usize, usize)> = region.pixels().filter(|&(u, v)| !slice.get(u, v)).collect();
        if bg.is_empty() {
            return Err(Error::FullSlice(z));
        }
        let mut stream = rng.child(z);
        let pos = pick(&fg, n_pos, &mut stream);
        let neg = pick(&bg, n_neg, &mut stream);
        for (i, &((x, y), dup)) in pos.iter().enumerate() {
            let mut p = Prompt::pos([x, y, z]);
            p.duplicate = dup;
            prompts.push(p);
            if let Some(&((x, y), dup)) = neg.get(i) {
                let mut q = Prompt::neg([x, y, z]);
                q.duplicate = dup;
                prompts.push(q);
            }
        }
    }
    Ok(PromptPlan::new(format!("{n}pmPPS"), rng.path(), Mode::TwoD, prompts))
}

/// Tight 2D box on every foreground slice.
pub fn box_ps(gt: &BinaryMask) -> Result<PromptPlan> {
    let ext = extent(gt)?;
    let mut prompts = Vec::with_capacity(ext.len());
    for &z in &ext.slice_set {
        let ((x0, y0), (x1, y1)) = bounding_box_2d(&axial(gt, z))?;
        prompts.push(Prompt::box2d(z, [x0, y0], [x1, y1]));
    }
    Ok(PromptPlan::new("Box_PS", "", Mode::TwoD, prompts))
}

/// Linear blend of two anchors at `z`, exact integer arithmetic.
fn lerp_parts(a: usize, b: usize, za: usize, zb: usize, z: usize) -> (usize, usize) {
    (a * (zb - z) + b * (z - za), zb - za)
}

/// Per-slice points on the polyline through the anchor clicks, for every
/// `z` in `[min(I), max(I)]`. Anchors are user clicks; the rest are flagged
/// as interpolated and cost nothing.
fn interpolated_points(gt: &BinaryMask, anchors: &[usize]) -> Result<Vec<Prompt>> {
    let points: Vec<[usize; 3]> = anchors
        .iter()
        .map(|&z| slice_anchor_point(gt, z))
        .collect::<Result<_>>()?;
    let mut prompts = Vec::new();
    prompts.push(Prompt::pos(points[0]));
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        for z in a[2] + 1..b[2] {
            let (nx, d) = lerp_parts(a[0], b[0], a[2], b[2], z);
            let (ny, _) = lerp_parts(a[1], b[1], a[2], b[2], z);
            prompts.push(Prompt::pos([round_div(nx, d), round_div(ny, d), z]).auto());
        }
        prompts.push(Prompt::pos(b));
    }
    Ok(prompts)
}

pub fn point_interpolation(gt: &BinaryMask, n: usize) -> Result<PromptPlan> {
    if n < 3 {
        return Err(Error::NTooSmall { n, min: 3 });
    }
    let ext = extent(gt)?;
    let anchors = equally_spaced_indices(&ext, n);
    let prompts = interpolated_points(gt, &anchors)?;
    Ok(PromptPlan::new(format!("{n}P_Inter"), "", Mode::TwoD, prompts))
}

pub fn box_interpolation(gt: &BinaryMask, n: usize) -> Result<PromptPlan> {
    if n < 3 {
        return Err(Error::NTooSmall { n, min: 3 });
    }
    let ext = extent(gt)?;
    let anchors = equally_spaced_indices(&ext, n);
    let boxes: Vec<(usize, [usize; 2], [usize; 2])> = anchors
        .iter()
        .map(|&z| {
            let ((x0, y0), (x1, y1)) = bounding_box_2d(&axial(gt, z))?;
            Ok((z, [x0, y0], [x1, y1]))
        })
        .collect::<Result<_>>()?;
    let mut prompts = vec![Prompt::box2d(boxes[0].0, boxes[0].1, boxes[0].2)];
    for w in boxes.windows(2) {
        let ((za, mina, maxa), (zb, minb, maxb)) = (w[0], w[1]);
        for z in za + 1..zb {
            let mut lo = [0; 2];
            let mut hi = [0; 2];
            for a in 0..2 {
                let (n_lo, d) = lerp_parts(mina[a], minb[a], za, zb, z);
                lo[a] = n_lo / d;
                let (n_hi, d) = lerp_parts(maxa[a], maxb[a], za, zb, z);
                hi[a] = n_hi.div_ceil(d);
            }
            prompts.push(Prompt::box2d(z, lo, hi).auto());
        }
        prompts.push(Prompt::box2d(zb, minb, maxb));
    }
    Ok(PromptPlan::new(format!("{n}B_Inter"), "", Mode::TwoD, prompts))
}

/// `n` random foreground voxels of the whole volume.
pub fn n_ppv(gt: &BinaryMask, n: usize, rng: &mut SeededRng) -> Result<PromptPlan> {
    if n == 0 {
        return Err(Error::InvalidParameter("N PPV needs n >= 1".into()));
    }
    if gt.is_empty() {
        return Err(Error::EmptyMask);
    }
    let voxels: Vec<[usize; 3]> = gt.voxels().collect();
    let prompts = pick(&voxels, n, rng)
        .into_iter()
        .map(|(p, dup)| {
            let mut q = Prompt::pos(p);
            q.duplicate = dup;
            q
        })
        .collect();
    Ok(PromptPlan::new(format!("{n}PPV"), rng.path(), Mode::ThreeD, prompts))
}

/// `n` clicks taken along the five-anchor interpolation line at equally
/// spaced axial positions (`n = 1` takes the median slice).
pub fn n_center_ppv(gt: &BinaryMask, n: usize) -> Result<PromptPlan> {
    if n == 0 {
        return Err(Error::InvalidParameter("N center PPV needs n >= 1".into()));
    }
    let ext = extent(gt)?;
    let line = interpolated_points(gt, &equally_spaced_indices(&ext, 5))?;
    let at = |z: usize| -> [usize; 3] {
        line.iter()
            .find(|p| p.z() == Some(z))
            .and_then(|p| p.point())
            .expect("line covers [min, max]")
    };
    let picks = if n == 1 {
        vec![ext.median_idx]
    } else {
        equally_spaced_indices(&ext, n)
    };
    let prompts = picks.into_iter().map(|z| Prompt::pos(at(z))).collect();
    Ok(PromptPlan::new(format!("{n}_center_PPV"), "", Mode::ThreeD, prompts))
}

pub fn box_3d(gt: &BinaryMask) -> Result<PromptPlan> {
    let (lo, hi) = bounding_box_3d(gt)?;
    Ok(PromptPlan::new("3D_Box", "", Mode::ThreeD, vec![Prompt::box3d(lo, hi)]))
}

fn shift(v: usize, delta: i64, limit: usize) -> usize {
    (v as i64 + delta).clamp(0, limit as i64 - 1) as usize
}

/// Shift every box corner coordinate by an independent uniform integer in
/// `[-k, k]`, clip to the grid and re-sort so `min <= max`.
pub fn perturb_boxes(plan: &PromptPlan, k: usize, dims: Dims, rng: &mut SeededRng) -> PromptPlan {
    let k = k as i64;
    let limits = [dims.nx, dims.ny, dims.nz];
    let mut out = plan.clone();
    for p in &mut out.prompts {
        match &mut p.shape {
            PromptShape::Box2d { min, max, .. } => {
                for a in 0..2 {
                    let lo = shift(min[a], rng.symmetric(k), limits[a]);
                    let hi = shift(max[a], rng.symmetric(k), limits[a]);
                    (min[a], max[a]) = (lo.min(hi), lo.max(hi));
                }
            }
            PromptShape::Box3d { min, max } => {
                for a in 0..3 {
                    let lo = shift(min[a], rng.symmetric(k), limits[a]);
                    let hi = shift(max[a], rng.symmetric(k), limits[a]);
                    (min[a], max[a]) = (lo.min(hi), lo.max(hi));
                }
            }
            _ => {}
        }
    }
    out
}

/// A scheme that turns a ground-truth instance into a fixed prompt plan.
pub trait StaticScheme: Send + Sync {
    fn id(&self) -> String;
    fn mode(&self) -> Mode;
    fn generate(&self, gt: &BinaryMask, rng: &mut SeededRng) -> Result<PromptPlan>;
}

macro_rules! static_scheme {
    ($name:ident { $($field:ident : $ty:ty),* }, $mode:expr, |$s:ident| $id:expr, |$this:ident, $gt:ident, $rng:ident| $body:expr) => {
        #[derive(Debug, Clone)]
        pub struct $name { $(pub $field: $ty),* }

        impl StaticScheme for $name {
            fn id(&self) -> String {
                let $s = self;
                $id
            }
            fn mode(&self) -> Mode {
                $mode
            }
            fn generate(&self, $gt: &BinaryMask, $rng: &mut SeededRng) -> Result<PromptPlan> {
                let $this = self;
                let mut plan = $body?;
                plan.seed_path = $rng.path().to_string();
                plan.scheme_id = self.id();
                Ok(plan)
            }
        }
    };
}

static_scheme!(PointsPerSlice { n: usize }, Mode::TwoD, |s| format!("{}PPS", s.n),
    |this, gt, rng| n_pps(gt, this.n, rng));
static_scheme!(PosNegPointsPerSlice { n: usize, neg_radius: Option<usize> }, Mode::TwoD,
    |s| format!("{}pmPPS", s.n),
    |this, gt, rng| n_pm_pps(gt, this.n, this.neg_radius, rng));
static_scheme!(BoxPerSlice {}, Mode::TwoD, |_s| "Box_PS".to_string(),
    |_this, gt, _rng| box_ps(gt));
static_scheme!(PointInterpolation { n: usize }, Mode::TwoD, |s| format!("{}P_Inter", s.n),
    |this, gt, _rng| point_interpolation(gt, this.n));
static_scheme!(BoxInterpolation { n: usize }, Mode::TwoD, |s| format!("{}B_Inter", s.n),
    |this, gt, _rng| box_interpolation(gt, this.n));
static_scheme!(PointsPerVolume { n: usize }, Mode::ThreeD, |s| format!("{}PPV", s.n),
    |this, gt, rng| n_ppv(gt, this.n, rng));
static_scheme!(CenterPointsPerVolume { n: usize }, Mode::ThreeD,
    |s| format!("{}_center_PPV", s.n),
    |this, gt, _rng| n_center_ppv(gt, this.n));
static_scheme!(Box3d {}, Mode::ThreeD, |_s| "3D_Box".to_string(),
    |_this, gt, _rng| box_3d(gt));
