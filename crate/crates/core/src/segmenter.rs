//! The model-facing seam: what a segmenter can do and what it is asked.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, BinaryMask, Dims, Volume};
use crate::prompt::{Mode, Prompt, PromptKind};

/// Prompt types and scopes a segmenter accepts. Sent as the reply to
/// `hello` on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default)]
    pub name: String,
    pub supports_2d: bool,
    pub supports_3d: bool,
    pub accepts_boxes: bool,
    pub accepts_points: bool,
    pub accepts_neg_points: bool,
    pub accepts_mask_prompt: bool,
    /// White-box segmenters ask for per-instance ground truth on open.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub wants_reference: bool,
}

impl Capabilities {
    pub fn all(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            supports_2d: true,
            supports_3d: true,
            accepts_boxes: true,
            accepts_points: true,
            accepts_neg_points: true,
            accepts_mask_prompt: true,
            wants_reference: false,
        }
    }

    pub fn supports_mode(&self, mode: Mode) -> bool {
        match mode {
            Mode::TwoD => self.supports_2d,
            Mode::ThreeD => self.supports_3d,
        }
    }

    pub fn accepts(&self, kind: PromptKind) -> bool {
        match kind {
            PromptKind::PosPoint => self.accepts_points,
            PromptKind::NegPoint => self.accepts_neg_points,
            PromptKind::Box2d | PromptKind::Box3d => self.accepts_boxes,
            PromptKind::PrevMask => self.accepts_mask_prompt,
            // scribbles are always decomposed into points before sending
            PromptKind::Scribble => false,
        }
    }

    pub fn require_mode(&self, mode: Mode) -> Result<()> {
        if self.supports_mode(mode) {
            Ok(())
        } else {
            Err(Error::CapabilityMissing(format!("supports_{mode}")))
        }
    }

    pub fn require_kind(&self, kind: PromptKind) -> Result<()> {
        if self.accepts(kind) {
            Ok(())
        } else {
            Err(Error::CapabilityMissing(format!("{kind:?}")))
        }
    }

    /// Refuse any request the segmenter did not advertise support for.
    pub fn check_request(&self, req: &PredictRequest) -> Result<()> {
        match req.scope {
            Scope::Slice { .. } => self.require_mode(Mode::TwoD)?,
            Scope::Volume => self.require_mode(Mode::ThreeD)?,
        }
        for p in &req.prompts {
            self.require_kind(p.kind())?;
        }
        if req.prev_mask.is_some() {
            self.require_kind(PromptKind::PrevMask)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Slice { axis: Axis, idx: usize },
    Volume,
}

impl Scope {
    pub fn axial(z: usize) -> Self {
        Scope::Slice { axis: Axis::Z, idx: z }
    }

    /// Grid of the mask a segmenter must return for this scope.
    pub fn mask_dims(&self, volume: Dims) -> Dims {
        match *self {
            Scope::Slice { axis, .. } => {
                let (w, h) = volume.slice_dims(axis);
                Dims::new(w, h, 1)
            }
            Scope::Volume => volume,
        }
    }

    pub fn is_valid_for(&self, volume: Dims) -> bool {
        match *self {
            Scope::Slice { axis, idx } => idx < volume.extent(axis),
            Scope::Volume => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    pub scope: Scope,
    pub prompts: Vec<Prompt>,
    /// Previous prediction on the same scope grid.
    pub prev_mask: Option<BinaryMask>,
}

/// What a segmenter learns about a case when it is opened.
#[derive(Debug, Clone)]
pub struct CaseData {
    pub case_id: String,
    pub volume: Arc<Volume>,
    /// Set when the image exists on local disk, so it can be sent by path.
    pub image_path: Option<PathBuf>,
    /// Per-instance ground truth. Only white-box oracles use this.
    pub reference: Option<Arc<Vec<BinaryMask>>>,
}

/// A promptable segmentation model.
///
/// One `open_case` starts an independent session; state such as the
/// corrections a model has absorbed never leaks across sessions.
pub trait Segmenter: Send {
    fn capabilities(&self) -> Capabilities;
    fn open_case(&mut self, case: &CaseData) -> Result<String>;
    /// Returns a mask on `req.scope.mask_dims(volume dims)`.
    fn predict(&mut self, session: &str, req: &PredictRequest) -> Result<BinaryMask>;
    fn close_case(&mut self, session: &str) -> Result<()>;
}

impl<S: Segmenter + ?Sized> Segmenter for Box<S> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn open_case(&mut self, case: &CaseData) -> Result<String> {
        (**self).open_case(case)
    }
    fn predict(&mut self, session: &str, req: &PredictRequest) -> Result<BinaryMask> {
        (**self).predict(session, req)
    }
    fn close_case(&mut self, session: &str) -> Result<()> {
        (**self).close_case(session)
    }
}
