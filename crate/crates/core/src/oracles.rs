//! White-box synthetic segmenters and a synthetic case generator.
//!
//! Oracles see the ground truth of every instance in the case. They exist
//! to exercise the engine deterministically, not to be fair models. Each
//! behaviour implements [`OracleBehavior`] and is registered by name in
//! [`OracleRegistry`].

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims, Volume, VoxelData};
use crate::morphology::{dilate, dilate_2d, erode, erode_2d};
use crate::prompt::{Mode, PromptShape};
use crate::rng::SeededRng;
use crate::segmenter::{Capabilities, CaseData, PredictRequest, Scope, Segmenter};

/// Serializable oracle selection, e.g. `{"kind": "dilated", "k": 1}` or the
/// string form `dilated:1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    Perfect,
    Dilated { k: usize },
    Eroded { k: usize },
    Correctable { r: usize },
    FloodFill { tau: f64 },
    ConstantEmpty,
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OracleSpec::Dilated { k: 0 } | OracleSpec::Eroded { k: 0 } => {
                Err(Error::InvalidParameter("k must be >= 1".into()))
            }
            OracleSpec::Correctable { r: 0 } => {
                Err(Error::InvalidParameter("r must be >= 1".into()))
            }
            OracleSpec::FloodFill { tau } if !tau.is_finite() => {
                Err(Error::InvalidParameter("tau must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::Perfect => write!(f, "perfect"),
            OracleSpec::Dilated { k } => write!(f, "dilated:{k}"),
            OracleSpec::Eroded { k } => write!(f, "eroded:{k}"),
            OracleSpec::Correctable { r } => write!(f, "correctable:{r}"),
            OracleSpec::FloodFill { tau } => write!(f, "flood_fill:{tau}"),
            OracleSpec::ConstantEmpty => write!(f, "constant_empty"),
        }
    }
}

impl FromStr for OracleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OracleRegistry::default().spec(s)
    }
}

/// Everything an oracle knows about an opened case.
#[derive(Debug)]
pub struct OracleCase {
    pub volume: Arc<Volume>,
    pub instances: Arc<Vec<BinaryMask>>,
    /// `labels[i]` is `instance index + 1`, or 0 for background.
    labels: Vec<u32>,
}

impl OracleCase {
    pub fn new(volume: Arc<Volume>, instances: Arc<Vec<BinaryMask>>) -> Result<Self> {
        let dims = volume.dims();
        let mut labels = vec![0u32; dims.len()];
        for (k, m) in instances.iter().enumerate() {
            if m.dims() != dims {
                return Err(Error::DimMismatch(m.dims(), dims));
            }
            for (i, b) in m.bits().iter().enumerate() {
                if *b {
                    labels[i] = k as u32 + 1;
                }
            }
        }
        Ok(Self {
            volume,
            instances,
            labels,
        })
    }

    pub fn dims(&self) -> Dims {
        self.volume.dims()
    }

    fn label_at(&self, p: [usize; 3]) -> u32 {
        self.labels[self.dims().index(p[0], p[1], p[2])]
    }

    fn majority_label(&self, voxels: impl Iterator<Item = [usize; 3]>) -> Option<usize> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for p in voxels {
            let l = self.label_at(p);
            if l > 0 {
                *counts.entry(l).or_default() += 1;
            }
        }
        // highest count, then lowest label
        counts
            .into_iter()
            .max_by_key(|&(l, c)| (c, std::cmp::Reverse(l)))
            .map(|(l, _)| l as usize - 1)
    }

    /// Which instance a request is about: the first positive click that
    /// lands on one, else the instance filling most of the first box, else
    /// the one overlapping the previous mask most.
    pub fn resolve_target(&self, req: &PredictRequest) -> Option<usize> {
        for p in &req.prompts {
            if let PromptShape::PosPoint { point } = p.shape {
                if self.dims().contains(point) && self.label_at(point) > 0 {
                    return Some(self.label_at(point) as usize - 1);
                }
            }
        }
        for p in &req.prompts {
            match p.shape {
                PromptShape::Box2d { z, min, max } => {
                    return self.majority_label(
                        (min[1]..=max[1])
                            .flat_map(move |y| (min[0]..=max[0]).map(move |x| [x, y, z])),
                    );
                }
                PromptShape::Box3d { min, max } => {
                    return self.majority_label((min[2]..=max[2]).flat_map(move |z| {
                        (min[1]..=max[1])
                            .flat_map(move |y| (min[0]..=max[0]).map(move |x| [x, y, z]))
                    }));
                }
                _ => {}
            }
        }
        let prev = req.prev_mask.as_ref()?;
        let dims = self.dims();
        let voxels: Vec<[usize; 3]> = match req.scope {
            Scope::Volume => prev.voxels().collect(),
            Scope::Slice { axis, idx } => {
                let (w, _) = dims.slice_dims(axis);
                prev.voxels().map(|[u, v, _]| axis.to_voxel(idx, u.min(w - 1), v)).collect()
            }
        };
        self.majority_label(voxels.into_iter())
    }
}

/// Restrict a full-grid mask to the requested scope.
pub fn scoped(mask: &BinaryMask, scope: Scope) -> BinaryMask {
    match scope {
        Scope::Volume => mask.clone(),
        Scope::Slice { axis, idx } => mask.slice(axis, idx).to_mask3(),
    }
}

/// Per-session mutable state of an oracle.
#[derive(Debug, Default)]
pub struct OracleMemory {
    /// Current belief per instance, for oracles that learn from refinement.
    pub beliefs: HashMap<usize, BinaryMask>,
}

pub trait OracleBehavior: Send + Sync + fmt::Debug {
    fn spec(&self) -> OracleSpec;
    /// Scoped prediction for one request.
    fn predict(&self, case: &OracleCase, memory: &mut OracleMemory, req: &PredictRequest) -> BinaryMask;
}

fn empty_for(case: &OracleCase, scope: Scope) -> BinaryMask {
    BinaryMask::empty(scope.mask_dims(case.dims()))
}

#[derive(Debug)]
pub struct PerfectOracle;

impl OracleBehavior for PerfectOracle {
    fn spec(&self) -> OracleSpec {
        OracleSpec::Perfect
    }

    fn predict(&self, case: &OracleCase, _: &mut OracleMemory, req: &PredictRequest) -> BinaryMask {
        match case.resolve_target(req) {
            Some(t) => scoped(&case.instances[t], req.scope),
            None => empty_for(case, req.scope),
        }
    }
}

/// Ground truth grown (`dilate = true`) or shrunk by `k`. Slice requests
/// are morphed in-plane, volume requests in 3D.
#[derive(Debug)]
pub struct MorphedOracle {
    pub k: usize,
    pub dilate: bool,
}

impl OracleBehavior for MorphedOracle {
    fn spec(&self) -> OracleSpec {
        if self.dilate {
            OracleSpec::Dilated { k: self.k }
        } else {
            OracleSpec::Eroded { k: self.k }
        }
    }

    fn predict(&self, case: &OracleCase, _: &mut OracleMemory, req: &PredictRequest) -> BinaryMask {
        let Some(t) = case.resolve_target(req) else {
            return empty_for(case, req.scope);
        };
        let gt = &case.instances[t];
        match req.scope {
            Scope::Volume if self.dilate => dilate(gt, self.k),
            Scope::Volume => erode(gt, self.k),
            Scope::Slice { axis, idx } => {
                let s = gt.slice(axis, idx);
                let m = if self.dilate {
                    dilate_2d(&s, self.k)
                } else {
                    erode_2d(&s, self.k)
                };
                m.to_mask3()
            }
        }
    }
}

/// Starts from the ground truth dilated by one voxel. Every point prompt
/// sent together with a previous mask pulls all voxels within Chebyshev
/// radius `r` of the point (in-plane for slice requests) to the truth, and
/// the correction persists for the rest of the session.
#[derive(Debug)]
pub struct CorrectableOracle {
    pub r: usize,
}

impl OracleBehavior for CorrectableOracle {
    fn spec(&self) -> OracleSpec {
        OracleSpec::Correctable { r: self.r }
    }

    fn predict(&self, case: &OracleCase, memory: &mut OracleMemory, req: &PredictRequest) -> BinaryMask {
        let Some(t) = case.resolve_target(req) else {
            return empty_for(case, req.scope);
        };
        let gt = &case.instances[t];
        let belief = memory.beliefs.entry(t).or_insert_with(|| dilate(gt, 1));
        if req.prev_mask.is_some() {
            let dims = case.dims();
            let r = self.r as isize;
            for p in req.prompts.iter().filter_map(|p| p.point()) {
                let (dz_lo, dz_hi) = match req.scope {
                    Scope::Volume => (-r, r),
                    Scope::Slice { .. } => (0, 0),
                };
                for dz in dz_lo..=dz_hi {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let q = [p[0] as isize + dx, p[1] as isize + dy, p[2] as isize + dz];
                            if q.iter().any(|c| *c < 0) {
                                continue;
                            }
                            let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                            if dims.contains(q) {
                                belief.set(q, gt.get(q));
                            }
                        }
                    }
                }
            }
        }
        scoped(belief, req.scope)
    }
}

/// Region growing on intensities: from each positive click (or the box
/// centre when there is none) over connected voxels within `tau` of the
/// seed value, clipped to the boxes. Negative clicks carve out their own
/// grown regions. Does not look at the ground truth.
#[derive(Debug)]
pub struct FloodFillOracle {
    pub tau: f64,
}

fn grow(volume: &Volume, scope: Scope, seed: [usize; 3], tau: f64, allowed: &BinaryMask) -> BinaryMask {
    let dims = volume.dims();
    let out_dims = scope.mask_dims(dims);
    let mut out = BinaryMask::empty(out_dims);
    let to_local = |p: [usize; 3]| -> [usize; 3] {
        match scope {
            Scope::Volume => p,
            Scope::Slice { axis, .. } => {
                let (_, u, v) = axis.from_voxel(p);
                [u, v, 0]
            }
        }
    };
    let to_global = |l: [usize; 3]| -> [usize; 3] {
        match scope {
            Scope::Volume => l,
            Scope::Slice { axis, idx } => axis.to_voxel(idx, l[0], l[1]),
        }
    };
    let start = to_local(seed);
    if !out_dims.contains(start) || !allowed.get(start) {
        return out;
    }
    let reference = volume.value(seed);
    let mut queue = VecDeque::from([start]);
    out.set(start, true);
    let steps: &[[isize; 3]] = &[[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    while let Some(l) = queue.pop_front() {
        for s in steps {
            let n = [l[0] as isize + s[0], l[1] as isize + s[1], l[2] as isize + s[2]];
            if n.iter().any(|c| *c < 0) {
                continue;
            }
            let n = [n[0] as usize, n[1] as usize, n[2] as usize];
            if !out_dims.contains(n) || out.get(n) || !allowed.get(n) {
                continue;
            }
            if (volume.value(to_global(n)) - reference).abs() <= tau {
                out.set(n, true);
                queue.push_back(n);
            }
        }
    }
    out
}

impl OracleBehavior for FloodFillOracle {
    fn spec(&self) -> OracleSpec {
        OracleSpec::FloodFill { tau: self.tau }
    }

    fn predict(&self, case: &OracleCase, _: &mut OracleMemory, req: &PredictRequest) -> BinaryMask {
        let dims = case.dims();
        let out_dims = req.scope.mask_dims(dims);
        let local = |p: [usize; 3]| match req.scope {
            Scope::Volume => p,
            Scope::Slice { axis, .. } => {
                let (_, u, v) = axis.from_voxel(p);
                [u, v, 0]
            }
        };
        // region permitted by box prompts
        let mut boxes: Vec<([usize; 3], [usize; 3])> = Vec::new();
        for p in &req.prompts {
            match p.shape {
                PromptShape::Box2d { z, min, max } => {
                    boxes.push(([min[0], min[1], z], [max[0], max[1], z]))
                }
                PromptShape::Box3d { min, max } => boxes.push((min, max)),
                _ => {}
            }
        }
        let allowed = if boxes.is_empty() {
            BinaryMask::full(out_dims)
        } else {
            let mut a = BinaryMask::empty(out_dims);
            for (lo, hi) in &boxes {
                for z in lo[2]..=hi[2] {
                    for y in lo[1]..=hi[1] {
                        for x in lo[0]..=hi[0] {
                            let l = local([x, y, z]);
                            if out_dims.contains(l) {
                                a.set(l, true);
                            }
                        }
                    }
                }
            }
            a
        };
        let mut seeds: Vec<[usize; 3]> = req
            .prompts
            .iter()
            .filter_map(|p| match p.shape {
                PromptShape::PosPoint { point } => Some(point),
                _ => None,
            })
            .collect();
        if seeds.is_empty() {
            seeds = boxes
                .iter()
                .map(|(lo, hi)| [(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2])
                .collect();
        }
        let mut out = BinaryMask::empty(out_dims);
        for s in seeds.into_iter().filter(|s| dims.contains(*s)) {
            out = out.or(&grow(&case.volume, req.scope, s, self.tau, &allowed)).expect("dims");
        }
        let everywhere = BinaryMask::full(out_dims);
        for p in &req.prompts {
            if let PromptShape::NegPoint { point } = p.shape {
                if dims.contains(point) {
                    let carve = grow(&case.volume, req.scope, point, self.tau, &everywhere);
                    out = out.and_not(&carve).expect("dims");
                }
            }
        }
        out
    }
}

#[derive(Debug)]
pub struct EmptyOracle;

impl OracleBehavior for EmptyOracle {
    fn spec(&self) -> OracleSpec {
        OracleSpec::ConstantEmpty
    }

    fn predict(&self, case: &OracleCase, _: &mut OracleMemory, req: &PredictRequest) -> BinaryMask {
        empty_for(case, req.scope)
    }
}

type OracleCtor = fn(Option<&str>) -> Result<OracleSpec>;

fn parse_param<T: FromStr>(name: &str, p: Option<&str>) -> Result<T> {
    let raw = p.ok_or_else(|| Error::InvalidParameter(format!("{name} needs a parameter")))?;
    raw.parse()
        .map_err(|_| Error::InvalidParameter(format!("bad {name} parameter `{raw}`")))
}

/// Oracle behaviours by name. `name[:param]` strings resolve through here.
pub struct OracleRegistry {
    entries: BTreeMap<&'static str, OracleCtor>,
}

impl Default for OracleRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("perfect", |_| Ok(OracleSpec::Perfect));
        r.register("dilated", |p| Ok(OracleSpec::Dilated { k: parse_param("dilated", p.or(Some("1")))? }));
        r.register("eroded", |p| Ok(OracleSpec::Eroded { k: parse_param("eroded", p.or(Some("1")))? }));
        r.register("correctable", |p| {
            Ok(OracleSpec::Correctable { r: parse_param("correctable", p.or(Some("2")))? })
        });
        r.register("flood_fill", |p| Ok(OracleSpec::FloodFill { tau: parse_param("flood_fill", p)? }));
        r.register("constant_empty", |_| Ok(OracleSpec::ConstantEmpty));
        r.register("empty", |_| Ok(OracleSpec::ConstantEmpty));
        r
    }
}

impl OracleRegistry {
    pub fn register(&mut self, name: &'static str, ctor: OracleCtor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn spec(&self, text: &str) -> Result<OracleSpec> {
        let (name, param) = match text.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (text.trim(), None),
        };
        let ctor = self
            .entries
            .get(name)
            .ok_or_else(|| Error::UnknownOracle(text.to_string()))?;
        let spec = ctor(param)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn behavior(spec: &OracleSpec) -> Arc<dyn OracleBehavior> {
        match *spec {
            OracleSpec::Perfect => Arc::new(PerfectOracle),
            OracleSpec::Dilated { k } => Arc::new(MorphedOracle { k, dilate: true }),
            OracleSpec::Eroded { k } => Arc::new(MorphedOracle { k, dilate: false }),
            OracleSpec::Correctable { r } => Arc::new(CorrectableOracle { r }),
            OracleSpec::FloodFill { tau } => Arc::new(FloodFillOracle { tau }),
            OracleSpec::ConstantEmpty => Arc::new(EmptyOracle),
        }
    }
}

struct OracleSession {
    case: OracleCase,
    memory: OracleMemory,
}

/// An oracle behaviour wrapped as a [`Segmenter`].
pub struct OracleSegmenter {
    behavior: Arc<dyn OracleBehavior>,
    mode: Option<Mode>,
    sessions: HashMap<String, OracleSession>,
    next: u64,
}

impl OracleSegmenter {
    pub fn new(spec: &OracleSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            behavior: OracleRegistry::behavior(spec),
            mode: None,
            sessions: HashMap::new(),
            next: 0,
        })
    }

    /// Advertise only one of 2D or 3D.
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = Some(mode);
        self
    }

    pub fn spec(&self) -> OracleSpec {
        self.behavior.spec()
    }
}

impl Segmenter for OracleSegmenter {
    fn capabilities(&self) -> Capabilities {
        let mut caps = Capabilities::all(format!("oracle:{}", self.behavior.spec()));
        caps.wants_reference = true;
        if let Some(mode) = self.mode {
            caps.supports_2d = mode == Mode::TwoD;
            caps.supports_3d = mode == Mode::ThreeD;
        }
        caps
    }

    fn open_case(&mut self, case: &CaseData) -> Result<String> {
        let instances = case.reference.clone().unwrap_or_default();
        let oracle_case = OracleCase::new(case.volume.clone(), instances)?;
        self.next += 1;
        let id = format!("{}#{}", case.case_id, self.next);
        self.sessions.insert(
            id.clone(),
            OracleSession {
                case: oracle_case,
                memory: OracleMemory::default(),
            },
        );
        Ok(id)
    }

    fn predict(&mut self, session: &str, req: &PredictRequest) -> Result<BinaryMask> {
        let s = self
            .sessions
            .get_mut(session)
            .ok_or_else(|| Error::Protocol(format!("unknown session {session}")))?;
        if !req.scope.is_valid_for(s.case.dims()) {
            return Err(Error::InvalidParameter(format!("scope {:?} out of range", req.scope)));
        }
        Ok(self.behavior.predict(&s.case, &mut s.memory, req))
    }

    fn close_case(&mut self, session: &str) -> Result<()> {
        self.sessions.remove(session);
        Ok(())
    }
}

/// Parameters of one synthetic case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCaseSpec {
    pub dims: Dims,
    pub instances: usize,
    /// Inclusive range of ellipsoid semi-axes, in voxels.
    pub radius_range: [usize; 2],
    /// Instance intensity minus background intensity.
    pub contrast: f64,
    pub noise_sigma: f64,
    #[serde(default = "default_background")]
    pub background: f64,
    pub seed: u64,
}

fn default_background() -> f64 {
    100.0
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub volume: Volume,
    /// Pairwise disjoint instance masks, in placement order.
    pub instances: Vec<BinaryMask>,
    /// `uint8` map with instance `k` labelled `k + 1`.
    pub instance_labels: Volume,
}

/// Lattice points of an axis-aligned ellipsoid.
pub fn ellipsoid(dims: Dims, center: [usize; 3], radii: [usize; 3]) -> BinaryMask {
    let mut m = BinaryMask::empty(dims);
    let lo: Vec<usize> = (0..3).map(|a| center[a].saturating_sub(radii[a])).collect();
    let hi: Vec<usize> = (0..3)
        .map(|a| (center[a] + radii[a]).min(dims.as_array()[a] - 1))
        .collect();
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let p = [x, y, z];
                let s: f64 = (0..3)
                    .map(|a| {
                        let d = p[a] as f64 - center[a] as f64;
                        d * d / (radii[a] as f64 * radii[a] as f64)
                    })
                    .sum();
                if s <= 1.0 {
                    m.set(p, true);
                }
            }
        }
    }
    m
}

const PLACEMENT_RETRIES: usize = 1000;
/// Free voxels kept between instance bounding boxes.
const INSTANCE_GAP: usize = 2;

/// Axis-aligned ellipsoids with integer centres on a noisy background.
/// Instance bounding boxes stay one voxel inside the grid and at least
/// [`INSTANCE_GAP`] voxels apart.
pub fn generate_synthetic_case(spec: &SyntheticCaseSpec) -> Result<SyntheticCase> {
    spec.dims.validate()?;
    let [rmin, rmax] = spec.radius_range;
    if rmin == 0 || rmin > rmax {
        return Err(Error::InvalidParameter(format!("radius range {:?}", spec.radius_range)));
    }
    if spec.noise_sigma.is_nan() || spec.noise_sigma < 0.0 || !spec.contrast.is_finite() {
        return Err(Error::InvalidParameter("noise/contrast".into()));
    }
    let dims = spec.dims;
    let extents = dims.as_array();
    let root = SeededRng::new(spec.seed, "synthetic");
    let mut place_rng = root.child("placement");
    let mut boxes: Vec<([usize; 3], [usize; 3])> = Vec::new();
    let mut instances = Vec::new();
    for _ in 0..spec.instances {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let radii: [usize; 3] = std::array::from_fn(|_| rmin + place_rng.below(rmax - rmin + 1));
            // centre range keeping [c - r, c + r] inside [1, n - 2]
            let mut center = [0usize; 3];
            let mut fits = true;
            for a in 0..3 {
                let lo = radii[a] + 1;
                let hi = extents[a] as isize - 2 - radii[a] as isize;
                if (hi as isize) < lo as isize {
                    fits = false;
                    break;
                }
                center[a] = lo + place_rng.below(hi as usize - lo + 1);
            }
            if !fits {
                continue;
            }
            let lo: [usize; 3] = std::array::from_fn(|a| center[a] - radii[a]);
            let hi: [usize; 3] = std::array::from_fn(|a| center[a] + radii[a]);
            let clear = boxes.iter().all(|(blo, bhi)| {
                (0..3).any(|a| hi[a] + INSTANCE_GAP < blo[a] || bhi[a] + INSTANCE_GAP < lo[a])
            });
            if clear {
                boxes.push((lo, hi));
                instances.push(ellipsoid(dims, center, radii));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementFailure(spec.instances));
        }
    }

    let mut labels = vec![0u8; dims.len()];
    for (k, m) in instances.iter().enumerate() {
        for (i, b) in m.bits().iter().enumerate() {
            if *b {
                labels[i] = (k + 1).min(255) as u8;
            }
        }
    }
    let mut noise_rng = root.child("noise");
    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let data: Vec<f32> = labels
        .iter()
        .map(|&l| {
            let base = spec.background + if l > 0 { spec.contrast } else { 0.0 };
            let n = if spec.noise_sigma > 0.0 {
                normal.sample(&mut RngAdapter(&mut noise_rng))
            } else {
                0.0
            };
            (base + n) as f32
        })
        .collect();
    Ok(SyntheticCase {
        volume: Volume::new(dims, [1.0; 3], VoxelData::Float32(data))?,
        instance_labels: Volume::new(dims, [1.0; 3], VoxelData::Uint8(labels))?,
        instances,
    })
}

/// Lets `rand_distr` draw from a [`SeededRng`].
struct RngAdapter<'a>(&'a mut SeededRng);

impl rand::RngCore for RngAdapter<'_> {
    fn next_u32(&mut self) -> u32 {
        (self.0.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let v = self.0.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::prompt::Prompt;

    fn case_with(instances: Vec<BinaryMask>) -> CaseData {
        let dims = instances[0].dims();
        CaseData {
            case_id: "c".into(),
            volume: Arc::new(Volume::zeros(dims, crate::grid::Dtype::Float32).unwrap()),
            image_path: None,
            reference: Some(Arc::new(instances)),
        }
    }

    #[test]
    fn brute_force_ball_count() {
        // lattice points with x² + y² + z² <= 9
        let mut count = 0;
        for x in -3i32..=3 {
            for y in -3i32..=3 {
                for z in -3i32..=3 {
                    if x * x + y * y + z * z <= 9 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 123);
        let m = ellipsoid(Dims::new(32, 32, 32), [16, 16, 16], [3, 3, 3]);
        assert_eq!(m.voxel_count(), count);
    }

    #[test]
    fn spec_strings() {
        assert_eq!("dilated:2".parse::<OracleSpec>().unwrap(), OracleSpec::Dilated { k: 2 });
        assert_eq!("correctable".parse::<OracleSpec>().unwrap(), OracleSpec::Correctable { r: 2 });
        assert!("dilated:0".parse::<OracleSpec>().is_err());
        assert!("nope".parse::<OracleSpec>().is_err());
        let json = serde_json::to_string(&OracleSpec::FloodFill { tau: 5.0 }).unwrap();
        assert_eq!(json, r#"{"kind":"flood_fill","tau":5.0}"#);
    }

    #[test]
    fn perfect_returns_gt_slice_and_empty_on_miss() {
        let dims = Dims::new(8, 8, 4);
        let gt = BinaryMask::from_voxels(dims, [[2, 2, 1], [3, 2, 1], [2, 3, 2]]);
        let mut seg = OracleSegmenter::new(&OracleSpec::Perfect).unwrap();
        let s = seg.open_case(&case_with(vec![gt.clone()])).unwrap();
        let req = PredictRequest {
            scope: Scope::axial(1),
            prompts: vec![Prompt::pos([2, 2, 1])],
            prev_mask: None,
        };
        let out = seg.predict(&s, &req).unwrap();
        assert_eq!(out, gt.slice(Axis::Z, 1).to_mask3());
        let miss = PredictRequest {
            prompts: vec![Prompt::pos([7, 7, 1])],
            ..req
        };
        assert!(seg.predict(&s, &miss).unwrap().is_empty());
    }

    #[test]
    fn dilated_single_pixel_is_block() {
        let dims = Dims::new(8, 8, 3);
        let gt = BinaryMask::from_voxels(dims, [[4, 4, 1]]);
        let mut seg = OracleSegmenter::new(&OracleSpec::Dilated { k: 1 }).unwrap();
        let s = seg.open_case(&case_with(vec![gt])).unwrap();
        let out = seg
            .predict(
                &s,
                &PredictRequest {
                    scope: Scope::axial(1),
                    prompts: vec![Prompt::pos([4, 4, 1])],
                    prev_mask: None,
                },
            )
            .unwrap();
        assert_eq!(out.voxel_count(), 9);
    }

    #[test]
    fn correctable_absorbs_points() {
        let dims = Dims::new(12, 12, 12);
        let gt = ellipsoid(dims, [6, 6, 6], [3, 3, 3]);
        let mut seg = OracleSegmenter::new(&OracleSpec::Correctable { r: 2 }).unwrap();
        let s = seg.open_case(&case_with(vec![gt.clone()])).unwrap();
        let first = seg
            .predict(
                &s,
                &PredictRequest {
                    scope: Scope::Volume,
                    prompts: vec![Prompt::pos([6, 6, 6])],
                    prev_mask: None,
                },
            )
            .unwrap();
        assert_eq!(first, dilate(&gt, 1));
        let fp = first.and_not(&gt).unwrap().voxels().next().unwrap();
        let second = seg
            .predict(
                &s,
                &PredictRequest {
                    scope: Scope::Volume,
                    prompts: vec![Prompt::neg(fp)],
                    prev_mask: Some(first.clone()),
                },
            )
            .unwrap();
        assert!(!second.get(fp));
        assert!(second.xor(&gt).unwrap().voxel_count() < first.xor(&gt).unwrap().voxel_count());
    }

    #[test]
    fn flood_fill_follows_contrast() {
        let spec = SyntheticCaseSpec {
            dims: Dims::new(24, 24, 24),
            instances: 1,
            radius_range: [4, 6],
            contrast: 100.0,
            noise_sigma: 2.0,
            background: 100.0,
            seed: 7,
        };
        let c = generate_synthetic_case(&spec).unwrap();
        let gt = &c.instances[0];
        let center = crate::promptgen::n_center_ppv(gt, 1).unwrap().prompts[0].point().unwrap();
        let mut seg = OracleSegmenter::new(&OracleSpec::FloodFill { tau: 20.0 }).unwrap();
        let s = seg
            .open_case(&CaseData {
                case_id: "c".into(),
                volume: Arc::new(c.volume.clone()),
                image_path: None,
                reference: None,
            })
            .unwrap();
        let out = seg
            .predict(
                &s,
                &PredictRequest {
                    scope: Scope::Volume,
                    prompts: vec![Prompt::pos(center)],
                    prev_mask: None,
                },
            )
            .unwrap();
        assert_eq!(out, *gt);
    }

    #[test]
    fn synthetic_is_deterministic_and_disjoint() {
        let spec = SyntheticCaseSpec {
            dims: Dims::new(40, 40, 40),
            instances: 4,
            radius_range: [3, 6],
            contrast: 50.0,
            noise_sigma: 10.0,
            background: 100.0,
            seed: 42,
        };
        let a = generate_synthetic_case(&spec).unwrap();
        let b = generate_synthetic_case(&spec).unwrap();
        assert_eq!(a.volume, b.volume);
        assert_eq!(a.instances.len(), 4);
        for i in 0..4 {
            assert!(!a.instances[i].is_empty());
            for j in i + 1..4 {
                assert_eq!(a.instances[i].intersection_count(&a.instances[j]).unwrap(), 0);
            }
        }
    }

    #[test]
    fn placement_fails_in_tiny_volume() {
        let spec = SyntheticCaseSpec {
            dims: Dims::new(8, 8, 8),
            instances: 3,
            radius_range: [3, 3],
            contrast: 1.0,
            noise_sigma: 0.0,
            background: 0.0,
            seed: 1,
        };
        assert!(matches!(generate_synthetic_case(&spec), Err(Error::PlacementFailure(3))));
    }
}
