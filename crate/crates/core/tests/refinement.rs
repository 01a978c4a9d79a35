use std::sync::Arc;

use volprompt_core::oracles::{ellipsoid, generate_synthetic_case, OracleSegmenter, OracleSpec, SyntheticCaseSpec};
use volprompt_core::session::{build_scribble, run_protocol, Polarity, SchemeOptions, SchemeRegistry, Session};
use volprompt_core::{BinaryMask, CaseData, Dims, Dtype, PromptKind, SeededRng, Volume};

fn case(gt: &BinaryMask) -> CaseData {
    CaseData {
        case_id: "c".into(),
        volume: Arc::new(Volume::zeros(gt.dims(), Dtype::Float32).unwrap()),
        image_path: None,
        reference: Some(Arc::new(vec![gt.clone()])),
    }
}

/// Per-iteration predictions and the refinement prompts that followed.
fn scribble_run(scheme: &str, oracle: OracleSpec, gt: &BinaryMask, iterations: u32) -> Vec<BinaryMask> {
    let reg = SchemeRegistry::default();
    let choice = reg.protocol(scheme, &SchemeOptions::default()).unwrap();
    let mut seg = OracleSegmenter::new(&oracle).unwrap();
    let data = case(gt);
    let mut session = Session::open(&mut seg, &data, "s").unwrap();
    let (_, outcomes) = run_protocol(
        &mut session,
        gt,
        choice.initial.as_ref(),
        choice.refine.as_deref(),
        iterations,
        None,
        &SeededRng::new(11, "s"),
    )
    .unwrap();
    let transcript = session.finish().unwrap();
    // a dilating oracle only ever draws negative scribbles, an eroding one
    // only positive ones; re-sent initial prompts are boxes or positive clicks
    for r in transcript.iter().filter(|r| r.iteration > 0) {
        let neg = r.prompts.iter().filter(|p| p.kind() == PromptKind::NegPoint).count();
        match oracle {
            OracleSpec::Dilated { .. } => assert!(neg > 0, "{:?}", r.prompts),
            _ => assert_eq!(neg, 0, "{:?}", r.prompts),
        }
    }
    outcomes.into_iter().map(|o| o.pred).collect()
}

#[test]
fn dilated_oracle_forces_negative_scribbles_on_false_positives() {
    let gt = ellipsoid(Dims::new(28, 28, 24), [14, 13, 12], [6, 5, 5]);
    for scheme in ["1 center PPV + Scribble Refine", "3B Inter + Scribble Refine"] {
        let preds = scribble_run(scheme, OracleSpec::Dilated { k: 1 }, &gt, 4);
        for (t, pred) in preds.iter().enumerate().take(4) {
            let fp = pred.and_not(&gt).unwrap();
            if fp.is_empty() {
                continue;
            }
            assert_eq!(gt.and_not(pred).unwrap().voxel_count(), 0);
            let s = build_scribble(pred, &gt, &mut SeededRng::new(t as u64, "x")).unwrap();
            assert_eq!(s.polarity, Polarity::Negative);
            assert!(s.points.iter().all(|&p| fp.get(p)), "{scheme} t={t}");
        }
    }
}

#[test]
fn eroded_oracle_forces_positive_scribbles() {
    let gt = ellipsoid(Dims::new(28, 28, 24), [14, 13, 12], [6, 5, 5]);
    for scheme in ["1 center PPV + Scribble Refine", "3B Inter + Scribble Refine"] {
        let preds = scribble_run(scheme, OracleSpec::Eroded { k: 1 }, &gt, 3);
        let pred = &preds[0];
        assert!(pred.and_not(&gt).unwrap().is_empty());
        let s = build_scribble(pred, &gt, &mut SeededRng::new(0, "x")).unwrap();
        assert_eq!(s.polarity, Polarity::Positive);
        // one centroid per slice of the false-negative component, bottom to top
        let zs: Vec<usize> = s.points.iter().map(|p| p[2]).collect();
        assert!(zs.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn branch_frequency_follows_error_ratio() {
    // 3 false negatives for every false positive: p = 0.75
    let dims = Dims::new(8, 8, 8);
    let gt = BinaryMask::from_voxels(dims, (1..7).map(|x| [x, 2, 3]));
    let mut pred = BinaryMask::from_voxels(dims, (4..7).map(|x| [x, 2, 3]));
    pred.set([4, 5, 3], true);
    let stats = volprompt_core::session::RefinementStats::of(&pred, &gt).unwrap();
    assert_eq!(stats.p(), Some(0.75));
    let trials = 10_000;
    let positive = (0..trials)
        .filter(|&i| {
            let s = build_scribble(&pred, &gt, &mut SeededRng::new(42, format!("b/{i}"))).unwrap();
            s.polarity == Polarity::Positive
        })
        .count();
    let freq = positive as f64 / trials as f64;
    assert!((freq - 0.75).abs() <= 0.03, "{freq}");
}

#[test]
fn correctable_oracle_improves_every_iteration() {
    let spec = SyntheticCaseSpec {
        dims: Dims::new(40, 40, 40),
        instances: 2,
        radius_range: [4, 7],
        contrast: 200.0,
        noise_sigma: 5.0,
        background: 100.0,
        seed: 9,
    };
    let c = generate_synthetic_case(&spec).unwrap();
    let reg = SchemeRegistry::default();
    for gt in &c.instances {
        let choice = reg.protocol("1 center PPV + Scribble Refine", &SchemeOptions::default()).unwrap();
        let mut seg = OracleSegmenter::new(&OracleSpec::Correctable { r: 2 }).unwrap();
        let data = CaseData {
            case_id: "c".into(),
            volume: Arc::new(c.volume.clone()),
            image_path: None,
            reference: Some(Arc::new(c.instances.clone())),
        };
        let mut session = Session::open(&mut seg, &data, "s").unwrap();
        let (_, outcomes) = run_protocol(
            &mut session,
            gt,
            choice.initial.as_ref(),
            choice.refine.as_deref(),
            5,
            None,
            &SeededRng::new(1, "s"),
        )
        .unwrap();
        let scores: Vec<f64> = outcomes
            .iter()
            .map(|o| volprompt_core::metrics::dsc(&o.pred, gt).unwrap())
            .collect();
        for w in scores.windows(2) {
            assert!(w[1] > w[0] || w[0] == 1.0, "{scores:?}");
        }
    }
}
