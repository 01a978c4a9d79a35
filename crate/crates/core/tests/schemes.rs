use std::sync::Arc;

use volprompt_core::morphology::{bounding_box_2d, ForegroundExtent};
use volprompt_core::oracles::{ellipsoid, OracleSegmenter, OracleSpec};
use volprompt_core::promptgen::{box_interpolation, box_ps, perturb_boxes};
use volprompt_core::session::{run_protocol, IterationOutcome, SchemeOptions, SchemeRegistry, Session, SessionState};
use volprompt_core::{Axis, BinaryMask, CaseData, Dims, Dtype, Mode, PromptShape, SeededRng, Volume};

fn target() -> BinaryMask {
    ellipsoid(Dims::new(32, 32, 32), [16, 15, 16], [6, 5, 7])
}

fn case(gt: &BinaryMask) -> CaseData {
    CaseData {
        case_id: "c".into(),
        volume: Arc::new(Volume::zeros(gt.dims(), Dtype::Float32).unwrap()),
        image_path: None,
        reference: Some(Arc::new(vec![gt.clone()])),
    }
}

fn run(scheme: &str, oracle: OracleSpec, gt: &BinaryMask, iterations: u32) -> (SessionState, Vec<IterationOutcome>) {
    let reg = SchemeRegistry::default();
    let choice = reg.protocol(scheme, &SchemeOptions::default()).unwrap();
    let mut seg = OracleSegmenter::new(&oracle).unwrap();
    let data = case(gt);
    let mut session = Session::open(&mut seg, &data, scheme).unwrap();
    let out = run_protocol(
        &mut session,
        gt,
        choice.initial.as_ref(),
        choice.refine.as_deref(),
        iterations,
        choice.reuse_initial,
        &SeededRng::new(3, scheme),
    )
    .unwrap();
    session.finish().unwrap();
    out
}

#[test]
fn initial_interaction_counts() {
    let gt = target();
    let slices = ForegroundExtent::from_mask(&gt).unwrap().len() as u32;
    assert!(slices >= 10);
    let cases = [
        ("3P Inter", 3),
        ("5P Prop", 7),
        ("P Prop", 3),
        ("B Prop", 4),
        ("3B Inter", 6),
        ("5B Inter", 10),
        ("10B Inter", 20),
        ("Box PS", 2 * slices),
        ("1PPS", slices),
        ("3D Box", 3),
        ("1 center PPV", 1),
        ("2PPV", 2),
    ];
    for (scheme, expected) in cases {
        let (st, outcomes) = run(scheme, OracleSpec::Perfect, &gt, 0);
        assert_eq!(st.ledger.total(), expected, "{scheme}");
        assert_eq!(outcomes[0].interactions, expected, "{scheme}");
    }
}

#[test]
fn scribble_refine_costs_three_per_iteration() {
    let gt = target();
    let (st, outcomes) = run("1 center PPV + Scribble Refine", OracleSpec::Dilated { k: 1 }, &gt, 4);
    let costs: Vec<u32> = (1..=4).map(|t| st.ledger.step_cost(t)).collect();
    assert_eq!(costs, [3, 3, 3, 3]);
    let totals: Vec<u32> = outcomes.iter().map(|o| o.interactions).collect();
    assert_eq!(totals, [1, 4, 7, 10, 13]);
}

#[test]
fn perfect_oracle_reproduces_target() {
    let gt = target();
    for scheme in ["3B Inter", "5P Prop", "B Prop", "Box PS", "3D Box", "1 center PPV", "3P Inter", "2±PPS"] {
        let (st, _) = run(scheme, OracleSpec::Perfect, &gt, 0);
        assert_eq!(st.pred, gt, "{scheme}");
    }
}

#[test]
fn converged_sessions_carry_forward() {
    let gt = target();
    let (_, outcomes) = run("3D Box + 1PPV Refine", OracleSpec::Perfect, &gt, 3);
    assert!(outcomes.iter().skip(1).all(|o| o.converged && o.pred == gt && o.interactions == 3));
}

fn blob(seed: u64) -> BinaryMask {
    let mut rng = SeededRng::new(seed, "blob");
    let dims = Dims::new(24, 24, 24);
    let mut m = BinaryMask::empty(dims);
    let c0 = [8 + rng.below(8), 8 + rng.below(8), 8 + rng.below(8)];
    for k in 0..1 + rng.below(3) {
        let c = if k == 0 {
            c0
        } else {
            std::array::from_fn(|a| (c0[a] as i64 + rng.symmetric(3)) as usize)
        };
        let r = [1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(5)];
        m = m.or(&ellipsoid(dims, c, r)).unwrap();
    }
    m
}

#[test]
fn box_interpolation_with_all_slices_equals_box_per_slice() {
    for seed in 0..50 {
        let gt = blob(seed);
        let ext = ForegroundExtent::from_mask(&gt).unwrap();
        assert!(ext.is_contiguous());
        let n = ext.len().max(3);
        let inter = box_interpolation(&gt, n).unwrap();
        let per_slice = box_ps(&gt).unwrap();
        if ext.len() >= 3 {
            assert_eq!(inter.boxes_2d(), per_slice.boxes_2d(), "seed {seed}");
        }
        // independent check of the per-slice boxes themselves
        for (z, (lo, hi)) in per_slice.boxes_2d() {
            let ((x0, y0), (x1, y1)) = bounding_box_2d(&gt.slice(Axis::Z, z)).unwrap();
            assert_eq!((lo, hi), ([x0, y0], [x1, y1]));
        }
    }
}

#[test]
fn perturbation_stays_within_k() {
    let dims = Dims::new(64, 64, 64);
    let gt = ellipsoid(dims, [32, 32, 32], [10, 12, 8]);
    let reg = SchemeRegistry::default();
    let plans: Vec<_> = ["3B Inter", "3D Box"]
        .iter()
        .map(|s| {
            let init = reg.initial(s, &SchemeOptions::default()).unwrap();
            init.plan(&gt, &mut SeededRng::new(0, *s)).unwrap().unwrap()
        })
        .collect();
    for k in [3usize, 5] {
        for draw in 0..2500 {
            let mut rng = SeededRng::new(draw, format!("p{k}"));
            for plan in &plans {
                let moved = perturb_boxes(plan, k, dims, &mut rng);
                for (a, b) in plan.prompts.iter().zip(&moved.prompts) {
                    let (pa, pb): (Vec<usize>, Vec<usize>) = match (&a.shape, &b.shape) {
                        (PromptShape::Box2d { min, max, .. }, PromptShape::Box2d { min: m2, max: x2, .. }) => {
                            ([min.as_slice(), max].concat(), [m2.as_slice(), x2].concat())
                        }
                        (PromptShape::Box3d { min, max }, PromptShape::Box3d { min: m2, max: x2 }) => {
                            ([min.as_slice(), max].concat(), [m2.as_slice(), x2].concat())
                        }
                        _ => unreachable!(),
                    };
                    assert!(pa.iter().zip(&pb).all(|(x, y)| x.abs_diff(*y) <= k));
                    assert!(b.in_bounds(dims));
                }
            }
        }
    }
}

#[test]
fn two_d_refinement_rejects_three_d_initial() {
    let reg = SchemeRegistry::default();
    let choice = reg.protocol("3D Box + 1PPS Refine", &SchemeOptions::default()).unwrap();
    let caps = volprompt_core::Capabilities::all("x");
    assert_eq!(choice.initial.mode(), Mode::ThreeD);
    assert!(choice.refine.unwrap().check(&caps, Mode::ThreeD).is_err());
}
