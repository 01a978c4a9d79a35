//! Prompt values, prompt plans and the interaction cost schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::grid::Dims;
use crate::io::RleMask;

pub type Point3 = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::TwoD => "2d",
            Mode::ThreeD => "3d",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptShape {
    PosPoint { point: Point3 },
    NegPoint { point: Point3 },
    /// Box on axial slice `z`, inclusive `(x, y)` corners.
    Box2d { z: usize, min: [usize; 2], max: [usize; 2] },
    Box3d { min: Point3, max: Point3 },
    Scribble { points: Vec<Point3> },
    PrevMask { mask: RleMask },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    PosPoint,
    NegPoint,
    Box2d,
    Box3d,
    Scribble,
    PrevMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    #[serde(flatten)]
    pub shape: PromptShape,
    /// Produced by interpolation or propagation rather than by the user.
    #[serde(default)]
    pub interpolated: bool,
    /// Resampled point on a slice with fewer pixels than requested.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
    pub cost: u32,
}

impl Prompt {
    pub fn new(shape: PromptShape, cost: u32) -> Self {
        Self {
            shape,
            interpolated: false,
            duplicate: false,
            cost,
        }
    }

    pub fn pos(p: Point3) -> Self {
        Self::new(PromptShape::PosPoint { point: p }, EffortSchedule::DEFAULT.point)
    }

    pub fn neg(p: Point3) -> Self {
        Self::new(PromptShape::NegPoint { point: p }, EffortSchedule::DEFAULT.point)
    }

    pub fn box2d(z: usize, min: [usize; 2], max: [usize; 2]) -> Self {
        Self::new(PromptShape::Box2d { z, min, max }, EffortSchedule::DEFAULT.box2d)
    }

    pub fn box3d(min: Point3, max: Point3) -> Self {
        Self::new(PromptShape::Box3d { min, max }, EffortSchedule::DEFAULT.box3d)
    }

    /// Mark as machine-generated: flagged and free.
    pub fn auto(mut self) -> Self {
        self.interpolated = true;
        self.cost = 0;
        self
    }

    /// Re-sent copy of an earlier prompt; costs nothing again.
    pub fn reused(mut self) -> Self {
        self.cost = 0;
        self
    }

    pub fn kind(&self) -> PromptKind {
        match self.shape {
            PromptShape::PosPoint { .. } => PromptKind::PosPoint,
            PromptShape::NegPoint { .. } => PromptKind::NegPoint,
            PromptShape::Box2d { .. } => PromptKind::Box2d,
            PromptShape::Box3d { .. } => PromptKind::Box3d,
            PromptShape::Scribble { .. } => PromptKind::Scribble,
            PromptShape::PrevMask { .. } => PromptKind::PrevMask,
        }
    }

    /// Axial slice the prompt lives on, for slice-bound prompts.
    pub fn z(&self) -> Option<usize> {
        match &self.shape {
            PromptShape::PosPoint { point } | PromptShape::NegPoint { point } => Some(point[2]),
            PromptShape::Box2d { z, .. } => Some(*z),
            _ => None,
        }
    }

    pub fn point(&self) -> Option<Point3> {
        match &self.shape {
            PromptShape::PosPoint { point } | PromptShape::NegPoint { point } => Some(*point),
            _ => None,
        }
    }

    pub fn in_bounds(&self, dims: Dims) -> bool {
        match &self.shape {
            PromptShape::PosPoint { point } | PromptShape::NegPoint { point } => {
                dims.contains(*point)
            }
            PromptShape::Box2d { z, min, max } => {
                *z < dims.nz
                    && min[0] <= max[0]
                    && min[1] <= max[1]
                    && max[0] < dims.nx
                    && max[1] < dims.ny
            }
            PromptShape::Box3d { min, max } => {
                (0..3).all(|a| min[a] <= max[a]) && dims.contains(*max)
            }
            PromptShape::Scribble { points } => points.iter().all(|p| dims.contains(*p)),
            PromptShape::PrevMask { mask } => mask.dims == dims,
        }
    }
}

/// Interaction cost of each kind of human input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffortSchedule {
    pub point: u32,
    pub box2d: u32,
    pub box3d: u32,
    /// Picking the lowest or highest axial slice of the target.
    pub axial_bound: u32,
    pub scribble: u32,
}

impl EffortSchedule {
    pub const DEFAULT: EffortSchedule = EffortSchedule {
        point: 1,
        box2d: 2,
        box3d: 3,
        axial_bound: 1,
        scribble: 3,
    };
}

impl Default for EffortSchedule {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Output of a static prompting scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub scheme_id: String,
    pub seed_path: String,
    pub interaction_cost: u32,
    pub mode: Mode,
    pub prompts: Vec<Prompt>,
}

impl PromptPlan {
    /// Build a plan whose cost is the sum of its prompt costs.
    pub fn new(scheme_id: impl Into<String>, seed_path: impl Into<String>, mode: Mode, prompts: Vec<Prompt>) -> Self {
        let interaction_cost = prompts.iter().map(|p| p.cost).sum();
        Self {
            scheme_id: scheme_id.into(),
            seed_path: seed_path.into(),
            interaction_cost,
            mode,
            prompts,
        }
    }

    /// Slice-bound prompts grouped by axial index.
    pub fn per_slice(&self) -> BTreeMap<usize, Vec<Prompt>> {
        let mut map: BTreeMap<usize, Vec<Prompt>> = BTreeMap::new();
        for p in &self.prompts {
            if let Some(z) = p.z() {
                map.entry(z).or_default().push(p.clone());
            }
        }
        map
    }

    pub fn boxes_2d(&self) -> BTreeMap<usize, ([usize; 2], [usize; 2])> {
        self.prompts
            .iter()
            .filter_map(|p| match p.shape {
                PromptShape::Box2d { z, min, max } => Some((z, (min, max))),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_json_shape() {
        let p = Prompt::box2d(4, [1, 2], [3, 5]);
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"kind":"box2d","z":4,"min":[1,2],"max":[3,5],"interpolated":false,"cost":2}"#
        );
        let q = Prompt::pos([1, 2, 3]).auto();
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, r#"{"kind":"pos_point","point":[1,2,3],"interpolated":true,"cost":0}"#);
        assert_eq!(serde_json::from_str::<Prompt>(&s).unwrap(), q);
    }

    #[test]
    fn plan_cost_sums_prompts() {
        let plan = PromptPlan::new(
            "x",
            "s",
            Mode::TwoD,
            vec![Prompt::pos([0, 0, 0]), Prompt::pos([0, 0, 1]).auto(), Prompt::box2d(2, [0, 0], [1, 1])],
        );
        assert_eq!(plan.interaction_cost, 3);
        assert_eq!(plan.per_slice().len(), 3);
    }

    #[test]
    fn bounds() {
        let d = Dims::new(4, 4, 4);
        assert!(Prompt::box3d([0, 0, 0], [3, 3, 3]).in_bounds(d));
        assert!(!Prompt::box3d([0, 0, 0], [4, 3, 3]).in_bounds(d));
        assert!(!Prompt::box2d(1, [2, 0], [1, 1]).in_bounds(d));
    }
}
