//! Simulated prompting, interaction accounting and instance-wise Dice
//! evaluation for interactive 3D segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`] and [`io`]: volumes, binary masks and their file formats.
//! - [`morphology`]: components, centroids, boxes, rings and curves.
//! - [`promptgen`]: prompt schemes computed from the ground truth alone.
//! - [`segmenter`]: the model-facing trait and request types.
//! - [`session`]: model-in-the-loop propagation and refinement.
//! - [`oracles`]: white-box synthetic segmenters and a synthetic data
//!   generator.
//! - [`metrics`]: Dice and the instance → case → dataset aggregation.
//! - [`wire`]: the line-delimited JSON protocol spoken with external
//!   segmenters.

pub mod dataset;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod morphology;
pub mod oracles;
pub mod prompt;
pub mod promptgen;
pub mod rng;
pub mod segmenter;
pub mod session;
pub mod wire;

pub use error::{Error, Result};
pub use grid::{Axis, BinaryMask, Dims, Dtype, Mask2d, Volume, VoxelData};
pub use prompt::{EffortSchedule, Mode, Prompt, PromptKind, PromptPlan, PromptShape};
pub use rng::SeededRng;
pub use segmenter::{Capabilities, CaseData, PredictRequest, Scope, Segmenter};
