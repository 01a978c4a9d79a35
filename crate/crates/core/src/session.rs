//! The interactive loop: initial prompting, model-in-the-loop propagation
//! and iterative refinement, with an interaction ledger per session.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, BinaryMask, Dims, Mask2d};
use crate::io::rle_encode;
use crate::morphology::{
    bounding_box_2d, centroid_point, chebyshev_ring, connected_components, largest_component,
    largest_component_2d, non_axial_slice_with_most_fp, order_into_curve, Connectivity2,
    Connectivity3, ForegroundExtent,
};
use crate::prompt::{EffortSchedule, Mode, Point3, Prompt, PromptKind, PromptPlan, PromptShape};
use crate::promptgen::{self, equally_spaced_indices, slice_anchor_point, StaticScheme};
use crate::rng::SeededRng;
use crate::segmenter::{Capabilities, CaseData, PredictRequest, Scope, Segmenter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub step: u32,
    pub scheme_id: String,
    pub cost: u32,
}

/// Running count of simulated user interactions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionLedger {
    entries: Vec<LedgerEntry>,
    total: u32,
}

impl InteractionLedger {
    pub fn charge(&mut self, step: u32, scheme_id: impl Into<String>, cost: u32) {
        self.total += cost;
        self.entries.push(LedgerEntry {
            step,
            scheme_id: scheme_id.into(),
            cost,
        });
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Cost charged at one step.
    pub fn step_cost(&self, step: u32) -> u32 {
        self.entries.iter().filter(|e| e.step == step).map(|e| e.cost).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementStats {
    pub n_fn: usize,
    pub n_fp: usize,
}

impl RefinementStats {
    pub fn of(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        let overlap = pred.intersection_count(gt)?;
        Ok(Self {
            n_fn: gt.voxel_count() - overlap,
            n_fp: pred.voxel_count() - overlap,
        })
    }

    /// Probability of drawing a positive scribble; `None` when there is
    /// nothing to correct.
    pub fn p(&self) -> Option<f64> {
        let total = self.n_fn + self.n_fp;
        (total > 0).then(|| self.n_fn as f64 / total as f64)
    }
}

/// One prediction request and its answer, as written to the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub session: String,
    pub iteration: u32,
    pub scheme: String,
    pub scope: Scope,
    pub prompts: Vec<Prompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_mask_digest: Option<String>,
    pub mask_digest: String,
    pub mask_voxels: usize,
}

pub fn write_transcript<W: Write>(records: &[TranscriptRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("transcript", e))?;
    }
    Ok(())
}

/// An open case on a segmenter. Every request goes through
/// [`Session::predict`], which refuses anything the segmenter did not
/// advertise and checks the returned mask.
pub struct Session<'s> {
    seg: &'s mut dyn Segmenter,
    caps: Capabilities,
    id: String,
    label: String,
    dims: Dims,
    transcript: Vec<TranscriptRecord>,
    open: bool,
}

impl<'s> Session<'s> {
    pub fn open(seg: &'s mut dyn Segmenter, case: &CaseData, label: impl Into<String>) -> Result<Self> {
        let caps = seg.capabilities();
        let id = seg.open_case(case).map_err(failure)?;
        Ok(Self {
            seg,
            caps,
            id,
            label: label.into(),
            dims: case.volume.dims(),
            transcript: Vec::new(),
            open: true,
        })
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    pub fn predict(&mut self, iteration: u32, scheme: &str, req: PredictRequest) -> Result<BinaryMask> {
        self.caps.check_request(&req)?;
        if !req.scope.is_valid_for(self.dims) {
            return Err(Error::InvalidParameter(format!("scope {:?} outside volume", req.scope)));
        }
        if let Some(p) = req.prompts.iter().find(|p| !p.in_bounds(self.dims)) {
            return Err(Error::InvalidParameter(format!("prompt out of bounds: {p:?}")));
        }
        let expected = req.scope.mask_dims(self.dims);
        if let Some(prev) = &req.prev_mask {
            if prev.dims() != expected {
                return Err(Error::DimMismatch(prev.dims(), expected));
            }
        }
        let mask = self.seg.predict(&self.id, &req).map_err(failure)?;
        if mask.dims() != expected {
            return Err(Error::SegmenterFailure(format!(
                "mask dims {:?}, expected {:?}",
                mask.dims(),
                expected
            )));
        }
        self.transcript.push(TranscriptRecord {
            session: self.label.clone(),
            iteration,
            scheme: scheme.to_string(),
            scope: req.scope,
            prompts: req.prompts,
            prev_mask_digest: req.prev_mask.as_ref().map(|m| rle_encode(m).digest()),
            mask_digest: rle_encode(&mask).digest(),
            mask_voxels: mask.voxel_count(),
        });
        Ok(mask)
    }

    /// Close the case and hand back the transcript.
    pub fn finish(mut self) -> Result<Vec<TranscriptRecord>> {
        self.open = false;
        self.seg.close_case(&self.id).map_err(failure)?;
        Ok(std::mem::take(&mut self.transcript))
    }
}

impl Drop for Session<'_> {
    fn drop(&mut self) {
        if self.open {
            let _ = self.seg.close_case(&self.id);
        }
    }
}

fn failure(e: Error) -> Error {
    match e {
        Error::SegmenterFailure(_) | Error::CapabilityMissing(_) => e,
        other => Error::SegmenterFailure(other.to_string()),
    }
}

/// Everything the engine tracks about one instance under one scheme.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub gt: BinaryMask,
    pub pred: BinaryMask,
    pub mode: Mode,
    pub extent: ForegroundExtent,
    /// Initial prompts per axial slice (2D schemes).
    pub initial_slice_prompts: BTreeMap<usize, Vec<Prompt>>,
    /// Initial prompts of a volume-level scheme (3D schemes).
    pub initial_volume_prompts: Vec<Prompt>,
    pub slice_history: BTreeMap<usize, Vec<Prompt>>,
    pub volume_history: Vec<Prompt>,
    pub ledger: InteractionLedger,
    pub iteration: u32,
    pub reuse_initial: bool,
    /// Notable non-fatal events, e.g. propagation carrying a prompt over
    /// an empty prediction.
    pub events: Vec<String>,
}

impl SessionState {
    pub fn new(gt: &BinaryMask, mode: Mode) -> Result<Self> {
        Ok(Self {
            extent: ForegroundExtent::from_mask(gt)?,
            gt: gt.clone(),
            pred: BinaryMask::empty(gt.dims()),
            mode,
            initial_slice_prompts: BTreeMap::new(),
            initial_volume_prompts: Vec::new(),
            slice_history: BTreeMap::new(),
            volume_history: Vec::new(),
            ledger: InteractionLedger::default(),
            iteration: 0,
            reuse_initial: mode == Mode::TwoD,
            events: Vec::new(),
        })
    }

    pub fn stats(&self) -> RefinementStats {
        RefinementStats::of(&self.pred, &self.gt).expect("same grid")
    }

    pub fn is_perfect(&self) -> bool {
        self.pred == self.gt
    }

    /// Predict one axial slice and write the answer into `pred`.
    fn predict_slice(
        &mut self,
        session: &mut Session<'_>,
        scheme: &str,
        z: usize,
        prompts: Vec<Prompt>,
        with_prev: bool,
    ) -> Result<Mask2d> {
        let prev_mask = with_prev.then(|| self.pred.slice(Axis::Z, z).to_mask3());
        let out = session.predict(
            self.iteration,
            scheme,
            PredictRequest {
                scope: Scope::axial(z),
                prompts: prompts.clone(),
                prev_mask,
            },
        )?;
        let slice = Mask2d::from_mask3(&out)?;
        self.pred.set_slice(Axis::Z, z, &slice);
        self.slice_history.entry(z).or_default().extend(prompts);
        Ok(slice)
    }

    fn predict_volume(
        &mut self,
        session: &mut Session<'_>,
        scheme: &str,
        prompts: Vec<Prompt>,
        with_prev: bool,
    ) -> Result<()> {
        let prev_mask = with_prev.then(|| self.pred.clone());
        self.pred = session.predict(
            self.iteration,
            scheme,
            PredictRequest {
                scope: Scope::Volume,
                prompts: prompts.clone(),
                prev_mask,
            },
        )?;
        self.volume_history.extend(prompts);
        Ok(())
    }
}

/// How a session starts: a static prompt plan or a propagation scheme.
pub trait InitialStrategy: Send + Sync {
    fn id(&self) -> String;
    fn mode(&self) -> Mode;
    /// Cost as printed in result tables; `x` marks a per-slice cost.
    fn notation(&self) -> String;
    fn required_kinds(&self) -> Vec<PromptKind>;
    fn run(&self, session: &mut Session<'_>, gt: &BinaryMask, rng: &mut SeededRng) -> Result<SessionState>;

    /// The full prompt plan when it does not depend on model output.
    fn plan(&self, _gt: &BinaryMask, _rng: &mut SeededRng) -> Option<Result<PromptPlan>> {
        None
    }

    fn check(&self, caps: &Capabilities) -> Result<()> {
        caps.require_mode(self.mode())?;
        self.required_kinds().into_iter().try_for_each(|k| caps.require_kind(k))
    }
}

/// A [`StaticScheme`] sent to the model as-is: one request per prompted
/// slice in 2D, one volume request in 3D.
pub struct StaticInitial {
    pub scheme: Box<dyn StaticScheme>,
    pub notation: String,
    pub kinds: Vec<PromptKind>,
    /// Maximum random shift of box vertices; 0 leaves boxes untouched.
    pub perturb: usize,
}

impl InitialStrategy for StaticInitial {
    fn id(&self) -> String {
        self.scheme.id()
    }

    fn mode(&self) -> Mode {
        self.scheme.mode()
    }

    fn notation(&self) -> String {
        self.notation.clone()
    }

    fn required_kinds(&self) -> Vec<PromptKind> {
        self.kinds.clone()
    }

    fn plan(&self, gt: &BinaryMask, rng: &mut SeededRng) -> Option<Result<PromptPlan>> {
        Some(self.scheme.generate(gt, rng).map(|plan| {
            if self.perturb > 0 {
                promptgen::perturb_boxes(&plan, self.perturb, gt.dims(), &mut rng.child("perturb"))
            } else {
                plan
            }
        }))
    }

    fn run(&self, session: &mut Session<'_>, gt: &BinaryMask, rng: &mut SeededRng) -> Result<SessionState> {
        let plan = self.plan(gt, rng).expect("static schemes have a plan")?;
        let id = self.id();
        let mut st = SessionState::new(gt, plan.mode)?;
        st.ledger.charge(0, &id, plan.interaction_cost);
        match plan.mode {
            Mode::TwoD => {
                let per_slice = plan.per_slice();
                for (z, prompts) in &per_slice {
                    st.predict_slice(session, &id, *z, prompts.clone(), false)?;
                }
                st.initial_slice_prompts = per_slice;
            }
            Mode::ThreeD => {
                st.predict_volume(session, &id, plan.prompts.clone(), false)?;
                st.initial_volume_prompts = plan.prompts;
            }
        }
        Ok(st)
    }
}

fn move_to_slice(p: &Prompt, z: usize) -> Prompt {
    let shape = match p.shape.clone() {
        PromptShape::PosPoint { point } => PromptShape::PosPoint { point: [point[0], point[1], z] },
        PromptShape::Box2d { min, max, .. } => PromptShape::Box2d { z, min, max },
        other => other,
    };
    Prompt::new(shape, 0).auto()
}

/// Prompt for slice `z` derived from the neighbouring slice's prediction.
fn derive_prompt(prev: &Mask2d, z: usize, boxes: bool) -> Result<Prompt> {
    if boxes {
        let ((u0, v0), (u1, v1)) = bounding_box_2d(prev)?;
        Ok(Prompt::box2d(z, [u0, v0], [u1, v1]).auto())
    } else {
        let (u, v) = centroid_point(&largest_component_2d(prev, Connectivity2::Eight)?)?;
        Ok(Prompt::pos([u, v, z]).auto())
    }
}

/// Median slice first, then slice by slice down to `min(I)` and up to
/// `max(I)`, each prompt derived from the previous slice's prediction.
/// User anchors override derived prompts on their slices.
fn propagate(
    session: &mut Session<'_>,
    st: &mut SessionState,
    id: &str,
    anchors: &BTreeMap<usize, Prompt>,
    boxes: bool,
) -> Result<()> {
    let ext = st.extent.clone();
    let m = ext.median_idx;
    let first = anchors[&m].clone();
    st.predict_slice(session, id, m, vec![first.clone()], false)?;
    st.initial_slice_prompts.insert(m, vec![first.clone()]);
    let down: Vec<(usize, usize)> = (ext.min_idx..m).rev().map(|z| (z, z + 1)).collect();
    let up: Vec<(usize, usize)> = (m + 1..=ext.max_idx).map(|z| (z, z - 1)).collect();
    for pass in [down, up] {
        let mut carried = first.clone();
        for (z, from) in pass {
            let prompt = if let Some(a) = anchors.get(&z) {
                a.clone()
            } else {
                let prev = st.pred.slice(Axis::Z, from);
                if prev.is_empty() {
                    st.events.push(format!("empty prediction on slice {from}; prompt carried to {z}"));
                    move_to_slice(&carried, z)
                } else {
                    derive_prompt(&prev, z, boxes)?
                }
            };
            st.predict_slice(session, id, z, vec![prompt.clone()], false)?;
            st.initial_slice_prompts.insert(z, vec![prompt.clone()]);
            carried = prompt;
        }
    }
    Ok(())
}

/// "P Prop" (n = 1) and "nP Prop": a click on the median slice plus n - 1
/// re-anchor clicks, with the two axial bounds picked by the user.
#[derive(Debug, Clone)]
pub struct PointPropagation {
    pub n: usize,
}

impl InitialStrategy for PointPropagation {
    fn id(&self) -> String {
        if self.n == 1 {
            "P_Prop".into()
        } else {
            format!("{}P_Prop", self.n)
        }
    }

    fn mode(&self) -> Mode {
        Mode::TwoD
    }

    fn notation(&self) -> String {
        (self.n as u32 * EffortSchedule::DEFAULT.point + 2 * EffortSchedule::DEFAULT.axial_bound).to_string()
    }

    fn required_kinds(&self) -> Vec<PromptKind> {
        vec![PromptKind::PosPoint]
    }

    fn run(&self, session: &mut Session<'_>, gt: &BinaryMask, _rng: &mut SeededRng) -> Result<SessionState> {
        let id = self.id();
        let mut st = SessionState::new(gt, Mode::TwoD)?;
        let m = st.extent.median_idx;
        let mut anchors = BTreeMap::new();
        anchors.insert(m, Prompt::pos(slice_anchor_point(gt, m)?));
        if self.n > 1 {
            let mut extra = equally_spaced_indices(&st.extent, self.n);
            // the median click takes the place of the closest spaced index
            let closest = *extra
                .iter()
                .min_by_key(|&&z| (z.abs_diff(m), z))
                .expect("non-empty");
            extra.retain(|&z| z != closest);
            for z in extra {
                anchors.insert(z, Prompt::pos(slice_anchor_point(gt, z)?));
            }
        }
        let user: u32 = anchors.values().map(|p| p.cost).sum();
        st.ledger.charge(0, &id, user);
        st.ledger.charge(0, "axial_bounds", 2 * EffortSchedule::DEFAULT.axial_bound);
        propagate(session, &mut st, &id, &anchors, false)?;
        Ok(st)
    }
}

/// "B Prop": tight box on the median slice plus the axial bounds.
#[derive(Debug, Clone)]
pub struct BoxPropagation;

impl InitialStrategy for BoxPropagation {
    fn id(&self) -> String {
        "B_Prop".into()
    }

    fn mode(&self) -> Mode {
        Mode::TwoD
    }

    fn notation(&self) -> String {
        (EffortSchedule::DEFAULT.box2d + 2 * EffortSchedule::DEFAULT.axial_bound).to_string()
    }

    fn required_kinds(&self) -> Vec<PromptKind> {
        vec![PromptKind::Box2d]
    }

    fn run(&self, session: &mut Session<'_>, gt: &BinaryMask, _rng: &mut SeededRng) -> Result<SessionState> {
        let id = self.id();
        let mut st = SessionState::new(gt, Mode::TwoD)?;
        let m = st.extent.median_idx;
        let ((u0, v0), (u1, v1)) = bounding_box_2d(&gt.slice(Axis::Z, m))?;
        let anchors = BTreeMap::from([(m, Prompt::box2d(m, [u0, v0], [u1, v1]))]);
        st.ledger.charge(0, &id, EffortSchedule::DEFAULT.box2d);
        st.ledger.charge(0, "axial_bounds", 2 * EffortSchedule::DEFAULT.axial_bound);
        propagate(session, &mut st, &id, &anchors, true)?;
        Ok(st)
    }
}

/// One refinement iteration driven by the current errors.
pub trait RefineStrategy: Send + Sync {
    fn id(&self) -> String;
    fn notation(&self) -> String;
    fn step(&self, session: &mut Session<'_>, st: &mut SessionState, rng: &mut SeededRng) -> Result<()>;

    fn check(&self, caps: &Capabilities, _mode: Mode) -> Result<()> {
        if !caps.accepts_mask_prompt {
            return Err(Error::CapabilityMissing("accepts_mask_prompt".into()));
        }
        caps.require_kind(PromptKind::PosPoint)?;
        caps.require_kind(PromptKind::NegPoint)
    }
}

fn click(gt: &BinaryMask, p: Point3) -> Prompt {
    if gt.get(p) {
        Prompt::pos(p)
    } else {
        Prompt::neg(p)
    }
}

fn with_initial(st: &SessionState, z: Option<usize>, fresh: Vec<Prompt>) -> Vec<Prompt> {
    let mut out = Vec::new();
    if st.reuse_initial {
        let initial = match z {
            Some(z) => st.initial_slice_prompts.get(&z).cloned().unwrap_or_default(),
            None => st.initial_volume_prompts.clone(),
        };
        out.extend(initial.into_iter().map(Prompt::reused));
    }
    out.extend(fresh);
    out
}

/// "1PPS Refine" (2D) and "1PPV Refine" (3D): one random misclassified
/// voxel per slice of `I`, or per volume.
#[derive(Debug, Clone)]
pub struct RandomPointRefine {
    pub mode: Mode,
}

impl RefineStrategy for RandomPointRefine {
    fn id(&self) -> String {
        match self.mode {
            Mode::TwoD => "1PPS_Refine".into(),
            Mode::ThreeD => "1PPV_Refine".into(),
        }
    }

    fn notation(&self) -> String {
        match self.mode {
            Mode::TwoD => format!("{}x", EffortSchedule::DEFAULT.point),
            Mode::ThreeD => EffortSchedule::DEFAULT.point.to_string(),
        }
    }

    fn check(&self, caps: &Capabilities, mode: Mode) -> Result<()> {
        if mode != self.mode {
            return Err(Error::InvalidParameter(format!("{} needs a {} initial scheme", self.id(), self.mode)));
        }
        if !caps.accepts_mask_prompt {
            return Err(Error::CapabilityMissing("accepts_mask_prompt".into()));
        }
        caps.require_kind(PromptKind::PosPoint)?;
        caps.require_kind(PromptKind::NegPoint)
    }

    fn step(&self, session: &mut Session<'_>, st: &mut SessionState, rng: &mut SeededRng) -> Result<()> {
        if st.is_perfect() {
            return Err(Error::AlreadyPerfect);
        }
        let id = self.id();
        let errors = st.pred.xor(&st.gt)?;
        st.iteration += 1;
        match st.mode {
            Mode::TwoD => {
                let mut slices: Vec<usize> = st
                    .extent
                    .slice_set
                    .iter()
                    .copied()
                    .filter(|&z| errors.slice_count(z) > 0)
                    .collect();
                if slices.is_empty() {
                    // only stray false positives outside I remain
                    slices = (0..errors.dims().nz).filter(|&z| errors.slice_count(z) > 0).collect();
                    st.events.push("refinement outside the foreground slices".into());
                }
                for z in slices {
                    let pixels: Vec<(usize, usize)> = errors.slice(Axis::Z, z).pixels().collect();
                    let (u, v) = pixels[rng.below(pixels.len())];
                    let p = click(&st.gt, [u, v, z]);
                    st.ledger.charge(st.iteration, &id, p.cost);
                    let prompts = with_initial(st, Some(z), vec![p]);
                    st.predict_slice(session, &id, z, prompts, true)?;
                }
            }
            Mode::ThreeD => {
                let voxels: Vec<Point3> = errors.voxels().collect();
                let p = click(&st.gt, voxels[rng.below(voxels.len())]);
                st.ledger.charge(st.iteration, &id, p.cost);
                let prompts = with_initial(st, None, vec![p]);
                st.predict_volume(session, &id, prompts, true)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A simulated scribble, already reduced to the voxels it corrects.
#[derive(Debug, Clone, PartialEq)]
pub struct Scribble {
    pub polarity: Polarity,
    pub stats: RefinementStats,
    /// Positive: one centroid per axial slice of the largest false-negative
    /// component, bottom to top. Negative: false-positive voxels on the arc.
    pub points: Vec<Point3>,
    /// Length of the full contour curve (negative branch only).
    pub curve_len: usize,
    /// Length of the drawn arc (negative branch only).
    pub arc_len: usize,
    /// The arc crossed no false positive; a random one was used instead.
    pub fallback: bool,
}

/// Fraction of the contour a negative scribble covers, as `num / den`.
const ARC_FRACTION: (usize, usize) = (3, 5);
/// Distance of the negative scribble contour from the ground truth.
const RING_RADIUS: usize = 2;

pub fn arc_length(curve_len: usize) -> usize {
    (ARC_FRACTION.0 * curve_len).div_ceil(ARC_FRACTION.1)
}

pub fn build_scribble(pred: &BinaryMask, gt: &BinaryMask, rng: &mut SeededRng) -> Result<Scribble> {
    let stats = RefinementStats::of(pred, gt)?;
    let p = stats.p().ok_or(Error::NothingToRefine)?;
    // exactly one draw before any branch work
    let positive = rng.unit() < p;
    if positive {
        let fn_mask = gt.and_not(pred)?;
        let largest = largest_component(&connected_components(&fn_mask, Connectivity3::TwentySix))?;
        let mut points = Vec::new();
        for z in 0..largest.dims().nz {
            if largest.slice_count(z) > 0 {
                let (u, v) = centroid_point(&largest.slice(Axis::Z, z))?;
                points.push([u, v, z]);
            }
        }
        return Ok(Scribble {
            polarity: Polarity::Positive,
            stats,
            points,
            curve_len: 0,
            arc_len: 0,
            fallback: false,
        });
    }
    let (axis, idx) = non_axial_slice_with_most_fp(pred, gt)?;
    let fp_slice = pred.and_not(gt)?.slice(axis, idx);
    let gt_slice = gt.slice(axis, idx);
    let mut curve_len = 0;
    let mut arc_len = 0;
    let mut points: Vec<Point3> = Vec::new();
    if !gt_slice.is_empty() {
        let ring = chebyshev_ring(&gt_slice, RING_RADIUS)?;
        let pixels: Vec<(usize, usize)> = ring.pixels().collect();
        let curve = order_into_curve(axis, idx, &pixels);
        curve_len = curve.len();
        arc_len = arc_length(curve_len);
        if curve_len > 0 {
            let start = if curve.closed {
                rng.below(curve_len)
            } else {
                rng.below(curve_len - arc_len + 1)
            };
            for i in 0..arc_len {
                let (u, v) = curve.points[(start + i) % curve_len];
                if fp_slice.get(u, v) {
                    points.push(curve.voxel((start + i) % curve_len));
                }
            }
        }
    }
    let fallback = points.is_empty();
    if fallback {
        let fps: Vec<(usize, usize)> = fp_slice.pixels().collect();
        let (u, v) = fps[rng.below(fps.len())];
        points.push(axis.to_voxel(idx, u, v));
    }
    Ok(Scribble {
        polarity: Polarity::Negative,
        stats,
        points,
        curve_len,
        arc_len,
        fallback,
    })
}

/// "Scribble Refine": one scribble per iteration, counted as three
/// interactions.
#[derive(Debug, Clone, Default)]
pub struct ScribbleRefine;

impl RefineStrategy for ScribbleRefine {
    fn id(&self) -> String {
        "Scribble_Refine".into()
    }

    fn notation(&self) -> String {
        EffortSchedule::DEFAULT.scribble.to_string()
    }

    fn step(&self, session: &mut Session<'_>, st: &mut SessionState, rng: &mut SeededRng) -> Result<()> {
        if st.is_perfect() {
            return Err(Error::AlreadyPerfect);
        }
        let id = self.id();
        let scribble = build_scribble(&st.pred, &st.gt, rng)?;
        if scribble.fallback {
            st.events.push("scribble arc missed every false positive; random false positive used".into());
        }
        st.iteration += 1;
        st.ledger.charge(st.iteration, &id, EffortSchedule::DEFAULT.scribble);
        let as_prompt = |p: Point3| -> Prompt {
            let shape = match scribble.polarity {
                Polarity::Positive => PromptShape::PosPoint { point: p },
                Polarity::Negative => PromptShape::NegPoint { point: p },
            };
            // the scribble as a whole carries the cost
            Prompt::new(shape, 0)
        };
        match st.mode {
            Mode::TwoD => {
                let mut per_slice: BTreeMap<usize, Vec<Prompt>> = BTreeMap::new();
                for &p in &scribble.points {
                    if scribble.polarity == Polarity::Positive && st.pred.get(p) {
                        continue;
                    }
                    per_slice.entry(p[2]).or_default().push(as_prompt(p));
                }
                for (z, fresh) in per_slice {
                    let prompts = with_initial(st, Some(z), fresh);
                    st.predict_slice(session, &id, z, prompts, true)?;
                }
            }
            Mode::ThreeD => {
                let p = scribble.points[rng.below(scribble.points.len())];
                let prompts = with_initial(st, None, vec![as_prompt(p)]);
                st.predict_volume(session, &id, prompts, true)?;
            }
        }
        Ok(())
    }
}

/// Prediction and cumulative cost after one protocol iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub iteration: u32,
    pub pred: BinaryMask,
    pub interactions: u32,
    /// The prediction already matched the ground truth, so no refinement
    /// was requested and the previous mask was carried forward.
    pub converged: bool,
}

/// Initial prediction followed by `iterations` refinement steps. The
/// outcome at index `t` is the state after iteration `t`.
pub fn run_protocol(
    session: &mut Session<'_>,
    gt: &BinaryMask,
    initial: &dyn InitialStrategy,
    refine: Option<&dyn RefineStrategy>,
    iterations: u32,
    reuse_initial: Option<bool>,
    rng: &SeededRng,
) -> Result<(SessionState, Vec<IterationOutcome>)> {
    initial.check(session.capabilities())?;
    if iterations > 0 {
        let r = refine.ok_or_else(|| Error::InvalidParameter("iterations without a refinement scheme".into()))?;
        r.check(session.capabilities(), initial.mode())?;
    }
    let mut st = initial.run(session, gt, &mut rng.child("initial"))?;
    if let Some(reuse) = reuse_initial {
        st.reuse_initial = reuse;
    }
    let mut out = vec![IterationOutcome {
        iteration: 0,
        pred: st.pred.clone(),
        interactions: st.ledger.total(),
        converged: st.is_perfect(),
    }];
    for t in 1..=iterations {
        let converged = st.is_perfect();
        if !converged {
            let r = refine.expect("checked above");
            r.step(session, &mut st, &mut rng.child(format!("refine/{t}")))?;
        }
        out.push(IterationOutcome {
            iteration: t,
            pred: st.pred.clone(),
            interactions: st.ledger.total(),
            converged,
        });
    }
    Ok((st, out))
}

/// Options that apply to some initial schemes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemeOptions {
    /// Background clicks of `n±PPS` stay within this distance of the target.
    #[serde(default)]
    pub neg_radius: Option<usize>,
    /// Box vertex perturbation in voxels.
    #[serde(default)]
    pub perturb: usize,
}

type InitialCtor = fn(Option<usize>, &SchemeOptions) -> Result<Box<dyn InitialStrategy>>;
type RefineCtor = fn(Option<usize>) -> Result<Box<dyn RefineStrategy>>;

/// Split a scheme name into its leading count and a normalised key:
/// `"3B Inter"` → `(Some(3), "binter")`, `"5±PPS"` → `(Some(5), "pmpps")`.
pub fn normalize_scheme_id(text: &str) -> (Option<usize>, String) {
    let flat: String = text
        .replace('±', "pm")
        .replace("+-", "pm")
        .chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-'))
        .flat_map(char::to_lowercase)
        .collect();
    if flat.starts_with("3dbox") {
        return (None, flat);
    }
    let digits: String = flat.chars().take_while(char::is_ascii_digit).collect();
    let rest = flat[digits.len()..].to_string();
    (digits.parse().ok(), rest)
}

fn static_initial(scheme: Box<dyn StaticScheme>, notation: String, kinds: Vec<PromptKind>, o: &SchemeOptions) -> Box<dyn InitialStrategy> {
    Box::new(StaticInitial {
        scheme,
        notation,
        kinds,
        perturb: o.perturb,
    })
}

fn at_least(n: usize, min: usize) -> Result<usize> {
    if n < min {
        Err(Error::NTooSmall { n, min })
    } else {
        Ok(n)
    }
}

/// Initial and refinement schemes by name.
pub struct SchemeRegistry {
    initial: BTreeMap<&'static str, InitialCtor>,
    refine: BTreeMap<&'static str, RefineCtor>,
}

impl Default for SchemeRegistry {
    fn default() -> Self {
        use PromptKind::*;
        let mut r = Self {
            initial: BTreeMap::new(),
            refine: BTreeMap::new(),
        };
        r.register_initial("pps", |n, o| {
            let n = at_least(n.unwrap_or(1), 1)?;
            Ok(static_initial(Box::new(promptgen::PointsPerSlice { n }), format!("{n}x"), vec![PosPoint], o))
        });
        r.register_initial("pmpps", |n, o| {
            let n = at_least(n.unwrap_or(2), 2)?;
            let s = promptgen::PosNegPointsPerSlice { n, neg_radius: o.neg_radius };
            Ok(static_initial(Box::new(s), format!("{n}x"), vec![PosPoint, NegPoint], o))
        });
        r.register_initial("boxps", |_, o| {
            Ok(static_initial(Box::new(promptgen::BoxPerSlice {}), format!("{}x", EffortSchedule::DEFAULT.box2d), vec![Box2d], o))
        });
        r.register_initial("pinter", |n, o| {
            let n = at_least(n.unwrap_or(3), 3)?;
            Ok(static_initial(Box::new(promptgen::PointInterpolation { n }), n.to_string(), vec![PosPoint], o))
        });
        r.register_initial("binter", |n, o| {
            let n = at_least(n.unwrap_or(3), 2)?;
            let cost = n as u32 * EffortSchedule::DEFAULT.box2d;
            Ok(static_initial(Box::new(promptgen::BoxInterpolation { n }), cost.to_string(), vec![Box2d], o))
        });
        r.register_initial("pprop", |n, _| {
            Ok(Box::new(PointPropagation { n: at_least(n.unwrap_or(1), 1)? }))
        });
        r.register_initial("bprop", |_, _| Ok(Box::new(BoxPropagation)));
        r.register_initial("ppv", |n, o| {
            let n = at_least(n.unwrap_or(1), 1)?;
            Ok(static_initial(Box::new(promptgen::PointsPerVolume { n }), n.to_string(), vec![PosPoint], o))
        });
        r.register_initial("centerppv", |n, o| {
            let n = at_least(n.unwrap_or(1), 1)?;
            Ok(static_initial(Box::new(promptgen::CenterPointsPerVolume { n }), n.to_string(), vec![PosPoint], o))
        });
        r.register_initial("3dbox", |_, o| {
            Ok(static_initial(Box::new(promptgen::Box3d {}), EffortSchedule::DEFAULT.box3d.to_string(), vec![Box3d], o))
        });
        r.register_refine("ppsrefine", |_| Ok(Box::new(RandomPointRefine { mode: Mode::TwoD })));
        r.register_refine("ppvrefine", |_| Ok(Box::new(RandomPointRefine { mode: Mode::ThreeD })));
        r.register_refine("scribblerefine", |_| Ok(Box::new(ScribbleRefine)));
        r
    }
}

/// A parsed `initial [+ refine][*]` scheme description.
pub struct ProtocolChoice {
    pub initial: Box<dyn InitialStrategy>,
    pub refine: Option<Box<dyn RefineStrategy>>,
    /// `Some(true)` when the name ends in `*`.
    pub reuse_initial: Option<bool>,
}

impl SchemeRegistry {
    pub fn register_initial(&mut self, key: &'static str, ctor: InitialCtor) {
        self.initial.insert(key, ctor);
    }

    pub fn register_refine(&mut self, key: &'static str, ctor: RefineCtor) {
        self.refine.insert(key, ctor);
    }

    pub fn initial_keys(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.initial.keys().copied()
    }

    pub fn initial(&self, name: &str, options: &SchemeOptions) -> Result<Box<dyn InitialStrategy>> {
        let (n, key) = normalize_scheme_id(name);
        let ctor = self.initial.get(key.as_str()).ok_or_else(|| Error::UnknownScheme(name.to_string()))?;
        ctor(n, options)
    }

    pub fn refine(&self, name: &str) -> Result<Box<dyn RefineStrategy>> {
        let (n, key) = normalize_scheme_id(name);
        let ctor = self.refine.get(key.as_str()).ok_or_else(|| Error::UnknownScheme(name.to_string()))?;
        if n.is_some_and(|n| n != 1) {
            return Err(Error::InvalidParameter(format!("{name}: refinement places one click")));
        }
        ctor(n)
    }

    /// Parse names such as `"1 center PPV + Scribble Refine"` or
    /// `"1PPS + 1PPS Refine*"`.
    pub fn protocol(&self, text: &str, options: &SchemeOptions) -> Result<ProtocolChoice> {
        let trimmed = text.trim();
        let (body, star) = match trimmed.strip_suffix('*') {
            Some(b) => (b, true),
            None => (trimmed, false),
        };
        let mut parts = body.splitn(2, " + ");
        let initial = self.initial(parts.next().unwrap_or_default(), options)?;
        let refine = parts.next().map(|r| self.refine(r)).transpose()?;
        Ok(ProtocolChoice {
            initial,
            refine,
            reuse_initial: star.then_some(true),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalisation() {
        assert_eq!(normalize_scheme_id("3B Inter"), (Some(3), "binter".into()));
        assert_eq!(normalize_scheme_id("5±PPS"), (Some(5), "pmpps".into()));
        assert_eq!(normalize_scheme_id("3D Box"), (None, "3dbox".into()));
        assert_eq!(normalize_scheme_id("1 center PPV"), (Some(1), "centerppv".into()));
        assert_eq!(normalize_scheme_id("Box_PS"), (None, "boxps".into()));
        assert_eq!(normalize_scheme_id("1PPS_Refine"), (Some(1), "ppsrefine".into()));
    }

    #[test]
    fn registry_ids_round_trip() {
        let reg = SchemeRegistry::default();
        let o = SchemeOptions::default();
        for name in ["1PPS", "4±PPS", "Box PS", "3P Inter", "P Prop", "5P Prop", "3B Inter", "B Prop", "2PPV", "1 center PPV", "3D Box"] {
            let s = reg.initial(name, &o).unwrap();
            // canonical ids parse back to themselves
            assert_eq!(reg.initial(&s.id(), &o).unwrap().id(), s.id(), "{name}");
        }
        assert!(reg.initial("7Q Inter", &o).is_err());
        let p = reg.protocol("1PPS + Scribble Refine*", &o).unwrap();
        assert_eq!(p.initial.notation(), "1x");
        assert_eq!(p.refine.unwrap().notation(), "3");
        assert_eq!(p.reuse_initial, Some(true));
    }

    #[test]
    fn arc_lengths() {
        assert_eq!(arc_length(40), 24);
        assert_eq!(arc_length(1), 1);
        assert_eq!(arc_length(7), 5);
    }

    #[test]
    fn stats_probability() {
        let d = Dims::new(4, 1, 1);
        let gt = BinaryMask::from_voxels(d, [[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        let pred = BinaryMask::from_voxels(d, [[3, 0, 0]]);
        let s = RefinementStats::of(&pred, &gt).unwrap();
        assert_eq!((s.n_fn, s.n_fp), (3, 1));
        assert_eq!(s.p(), Some(0.75));
        assert_eq!(RefinementStats::of(&gt, &gt).unwrap().p(), None);
    }

    #[test]
    fn forced_positive_single_fn() {
        let d = Dims::new(5, 5, 5);
        let gt = BinaryMask::from_voxels(d, [[2, 2, 2], [2, 2, 3]]);
        let pred = BinaryMask::from_voxels(d, [[2, 2, 2]]);
        let s = build_scribble(&pred, &gt, &mut SeededRng::new(1, "t")).unwrap();
        assert_eq!(s.polarity, Polarity::Positive);
        assert_eq!(s.points, vec![[2, 2, 3]]);
    }
}
