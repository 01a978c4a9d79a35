// One line per acceptance criterion. Runs as a plain binary so the lines
// show up in `cargo test` output; exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use volprompt_bench::config::{OracleConfig, RunConfig, SchemeConfig, SegmenterConfig};
use volprompt_bench::conformance::{run_conformance, Status};
use volprompt_bench::runner::{run_benchmark, RECORDS_CSV};
use volprompt_core::dataset::{load_case, write_synthetic_dataset, DatasetManifest, LoadedCase, SyntheticDatasetSpec};
use volprompt_core::io::{read_nifti, rle_decode, rle_encode, write_nifti};
use volprompt_core::metrics::{aggregate, dsc, AggregateLevel, AggregationOrder, EvaluationRecord};
use volprompt_core::morphology::{chebyshev_ring, connected_components, Connectivity3, ForegroundExtent};
use volprompt_core::oracles::{ellipsoid, OracleSegmenter, OracleSpec};
use volprompt_core::promptgen::{box_interpolation, box_ps, perturb_boxes};
use volprompt_core::session::{build_scribble, run_protocol, IterationOutcome, Polarity, SchemeOptions, SchemeRegistry, Session, TranscriptRecord};
use volprompt_core::wire::ProcessClient;
use volprompt_core::{BinaryMask, CaseData, Dims, Mask2d, PromptShape, SeededRng, Volume, VoxelData};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn acceptance_dataset(dir: &Path) -> (DatasetManifest, Vec<LoadedCase>) {
    let spec = SyntheticDatasetSpec {
        dataset_id: "synthetic".into(),
        cases: 10,
        size_range: [32, 64],
        instances_range: [1, 3],
        radius_range: [3, 8],
        contrast: 200.0,
        noise_sigma: 5.0,
        classes: vec!["lesion".into()],
        seed: 42,
    };
    let m = write_synthetic_dataset(&spec, dir).expect("synthetic dataset");
    let cases = m.cases.iter().map(|c| load_case(dir, c).expect("case loads")).collect();
    (m, cases)
}

fn scheme(initial: &str, refine: Option<&str>, iterations: u32) -> SchemeConfig {
    SchemeConfig {
        initial: initial.into(),
        refine: refine.map(str::to_string),
        iterations,
        reuse_initial: None,
        perturb: 0,
        neg_radius: None,
        label: None,
    }
}

fn run_config(manifest: &Path, out: &Path, oracle: OracleSpec, schemes: Vec<SchemeConfig>, parallelism: usize) -> RunConfig {
    RunConfig {
        seed: 42,
        manifest: manifest.to_path_buf(),
        schemes,
        segmenter: SegmenterConfig::Oracle(OracleConfig { spec: oracle, mode: None }),
        output_dir: out.to_path_buf(),
        parallelism,
        max_failure_rate: 0.0,
        aggregation: AggregationOrder::ClassFirst,
    }
}

struct Run {
    outcomes: Vec<IterationOutcome>,
    transcript: Vec<TranscriptRecord>,
    ledger_steps: Vec<u32>,
}

fn session(case: &LoadedCase, gt: &BinaryMask, text: &str, oracle: &OracleSpec, iterations: u32, seed: u64) -> Run {
    let reg = SchemeRegistry::default();
    let choice = reg.protocol(text, &SchemeOptions::default()).expect("scheme");
    let mut seg = OracleSegmenter::new(oracle).expect("oracle");
    let data = CaseData {
        case_id: case.case_id.clone(),
        volume: case.image.clone(),
        image_path: None,
        reference: Some(Arc::new(case.instances.iter().map(|i| i.mask.clone()).collect())),
    };
    let mut s = Session::open(&mut seg, &data, text).expect("open");
    let (st, outcomes) = run_protocol(
        &mut s,
        gt,
        choice.initial.as_ref(),
        choice.refine.as_deref(),
        iterations,
        choice.reuse_initial,
        &SeededRng::new(seed, text),
    )
    .expect("protocol");
    let transcript = s.finish().expect("close");
    Run {
        outcomes,
        transcript,
        ledger_steps: (0..=iterations).map(|t| st.ledger.step_cost(t)).collect(),
    }
}

// Interaction counts as printed in the paper's tables.
fn effort_accounting() -> Check {
    let start = Instant::now();
    let dims = Dims::new(40, 40, 40);
    let gt = ellipsoid(dims, [20, 20, 20], [7, 6, 8]);
    let slices = ForegroundExtent::from_mask(&gt).unwrap().len() as u32;
    let case = LoadedCase {
        case_id: "c".into(),
        image: Arc::new(Volume::zeros(dims, volprompt_core::Dtype::Uint8).unwrap()),
        image_path: "c.nii".into(),
        instances: vec![volprompt_core::dataset::Instance {
            instance_id: "1".into(),
            class: "x".into(),
            mask: gt.clone(),
        }],
    };
    let expected: [(&str, u32); 9] = [
        ("3P Inter", 3),
        ("5P Prop", 7),
        ("B Prop", 4),
        ("3B Inter", 6),
        ("5B Inter", 10),
        ("10B Inter", 20),
        ("Box PS", 2 * slices),
        ("3D Box", 3),
        ("1 center PPV", 1),
    ];
    for (name, want) in expected {
        let got = session(&case, &gt, name, &OracleSpec::Perfect, 0, 0).outcomes[0].interactions;
        ensure(got == want, || format!("{name}: {got} != {want}"))?;
    }
    let r = session(&case, &gt, "1 center PPV + Scribble Refine", &OracleSpec::Dilated { k: 1 }, 3, 0);
    ensure(r.ledger_steps[1..] == [3, 3, 3], || format!("Scribble Refine steps {:?}", r.ledger_steps))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("10 schemes exact, Box PS = 2x{slices}, {elapsed:.2?} < 1s"))
}

const ALL_SCHEMES: [&str; 16] = [
    "1PPS", "3PPS", "2±PPS", "3±PPS", "Box PS", "3P Inter", "3B Inter", "5B Inter", "10B Inter", "P Prop", "5P Prop",
    "B Prop", "1PPV", "5PPV", "1 center PPV", "3D Box",
];

fn perfect_oracle_end_to_end(dir: &Path) -> Check {
    let start = Instant::now();
    let (_, cases) = acceptance_dataset(&dir.join("data"));
    let mut schemes: Vec<SchemeConfig> = ALL_SCHEMES.iter().map(|s| scheme(s, None, 0)).collect();
    schemes.push(scheme("1PPS", Some("1PPS Refine"), 2));
    schemes.push(scheme("3D Box", Some("1PPV Refine"), 2));
    schemes.push(scheme("3B Inter", Some("Scribble Refine"), 2));
    let n_schemes = schemes.len();
    let cfg = run_config(&dir.join("data/manifest.json"), &dir.join("perfect"), OracleSpec::Perfect, schemes, 1);
    let outcome = run_benchmark(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    // every instance here has contiguous slices, so the predicted scope of
    // the 2D schemes is [min(I), max(I)] and full-grid DSC applies
    for c in &cases {
        for i in &c.instances {
            ensure(ForegroundExtent::from_mask(&i.mask).unwrap().is_contiguous(), || format!("{} has gap slices", c.case_id))?;
        }
    }
    let bad: Vec<&EvaluationRecord> = outcome.records.iter().filter(|r| r.dsc != Some(1.0)).collect();
    ensure(bad.is_empty(), || format!("{} records below 1.0, e.g. {:?}", bad.len(), bad[0]))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    let instances: usize = cases.iter().map(|c| c.instances.len()).sum();
    Ok(format!(
        "{} records ({instances} instances x {n_schemes} schemes) all DSC 1.0, {elapsed:.1?} < 120s",
        outcome.records.len()
    ))
}

fn refinement_monotonicity(dir: &Path) -> Check {
    let (_, cases) = acceptance_dataset(&dir.join("mono"));
    let instances: Vec<(&LoadedCase, &BinaryMask)> =
        cases.iter().flat_map(|c| c.instances.iter().map(move |i| (c, &i.mask))).take(10).collect();
    ensure(instances.len() == 10, || format!("only {} instances", instances.len()))?;
    let mut steps = 0;
    for (k, (case, gt)) in instances.iter().enumerate() {
        let r = session(case, gt, "1 center PPV + Scribble Refine", &OracleSpec::Correctable { r: 2 }, 5, k as u64);
        let scores: Vec<f64> = r.outcomes.iter().map(|o| dsc(&o.pred, gt).unwrap()).collect();
        for w in scores.windows(2) {
            ensure(w[1] > w[0] || w[0] == 1.0, || format!("{}: {scores:?}", case.case_id))?;
            steps += 1;
        }
    }
    Ok(format!("10 instances x 5 iterations, {steps} strict increases"))
}

fn scribble_branches(dir: &Path) -> Check {
    let (_, cases) = acceptance_dataset(&dir.join("scribble"));
    let mut checked = 0;
    for (oracle, want) in [(OracleSpec::Dilated { k: 1 }, Polarity::Negative), (OracleSpec::Eroded { k: 1 }, Polarity::Positive)] {
        for case in cases.iter().take(4) {
            for inst in &case.instances {
                for text in ["1 center PPV + Scribble Refine", "3B Inter + Scribble Refine"] {
                    let r = session(case, &inst.mask, text, &oracle, 3, 7);
                    for rec in r.transcript.iter().filter(|t| t.iteration > 0) {
                        let before = &r.outcomes[rec.iteration as usize - 1].pred;
                        let fp = before.and_not(&inst.mask).unwrap();
                        let fneg = inst.mask.and_not(before).unwrap();
                        for p in &rec.prompts {
                            let ok = match (&p.shape, want) {
                                (PromptShape::NegPoint { point }, Polarity::Negative) => fp.get(*point),
                                (PromptShape::PosPoint { point }, Polarity::Positive) => fneg.get(*point),
                                (PromptShape::Box2d { .. }, _) => p.cost == 0,
                                _ => false,
                            };
                            ensure(ok, || format!("{oracle} {text}: unexpected prompt {p:?}"))?;
                            checked += 1;
                        }
                    }
                    // and directly on every intermediate prediction
                    for o in r.outcomes.iter().filter(|o| o.pred != inst.mask) {
                        let s = build_scribble(&o.pred, &inst.mask, &mut SeededRng::new(1, "branch")).unwrap();
                        ensure(s.polarity == want, || format!("{oracle}: {:?}", s.polarity))?;
                    }
                }
            }
        }
    }
    // p = 3 / (3 + 1)
    let dims = Dims::new(8, 8, 8);
    let gt = BinaryMask::from_voxels(dims, (1..7).map(|x| [x, 2, 3]));
    let mut pred = BinaryMask::from_voxels(dims, (4..7).map(|x| [x, 2, 3]));
    pred.set([4, 5, 3], true);
    let trials = 10_000;
    let positive = (0..trials)
        .filter(|i| {
            build_scribble(&pred, &gt, &mut SeededRng::new(42, format!("bernoulli/{i}"))).unwrap().polarity == Polarity::Positive
        })
        .count();
    let freq = positive as f64 / trials as f64;
    ensure((freq - 0.75).abs() <= 0.03, || format!("frequency {freq}"))?;
    Ok(format!("{checked} refinement prompts on the right side, p=0.75 -> {freq:.4} (±0.03)"))
}

fn random_mask(rng: &mut SeededRng, n: usize, density: f64) -> BinaryMask {
    let dims = Dims::new(n, n, n);
    let bits = (0..dims.len()).map(|_| rng.bernoulli(density)).collect();
    BinaryMask::from_bits(dims, bits).unwrap()
}

fn flood_fill_sizes(m: &BinaryMask) -> Vec<usize> {
    let d = m.dims();
    let mut left: HashSet<[usize; 3]> = m.voxels().collect();
    let mut sizes = Vec::new();
    while let Some(&seed) = left.iter().next() {
        left.remove(&seed);
        let mut stack = vec![seed];
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let q = [p[0] as i64 + dx, p[1] as i64 + dy, p[2] as i64 + dz];
                        if q.iter().zip([d.nx, d.ny, d.nz]).all(|(&c, n)| c >= 0 && (c as usize) < n) {
                            let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                            if left.remove(&q) {
                                stack.push(q);
                            }
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable();
    sizes
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn oracle_equivalences() -> Check {
    let seeds = 200;
    let mut mismatches = BTreeMap::from([("cc", 0), ("dsc", 0), ("ring", 0), ("aggregate", 0)]);
    for seed in 0..seeds {
        let mut rng = SeededRng::new(seed, "equivalence");
        let d = 0.05 + 0.4 * rng.unit();
        let a = random_mask(&mut rng, 8, d);
        let cc = connected_components(&a, Connectivity3::TwentySix);
        let mut sizes: Vec<usize> = (1..=cc.count as u32).map(|i| cc.size_of(i)).collect();
        sizes.sort_unstable();
        if sizes != flood_fill_sizes(&a) {
            *mismatches.get_mut("cc").unwrap() += 1;
        }

        let d = 0.05 + 0.4 * rng.unit();
        let mut b = random_mask(&mut rng, 8, d);
        b.set([rng.below(8), rng.below(8), rng.below(8)], true);
        let (sa, sb): (HashSet<_>, HashSet<_>) = (a.voxels().collect(), b.voxels().collect());
        let want = 2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64;
        if (dsc(&a, &b).unwrap() - want).abs() > 1e-12 {
            *mismatches.get_mut("dsc").unwrap() += 1;
        }

        let slice: Mask2d = b.slice(volprompt_core::Axis::Z, rng.below(8));
        if !slice.is_empty() {
            let fg: Vec<(usize, usize)> = slice.pixels().collect();
            for r in 1..=3 {
                let ring = chebyshev_ring(&slice, r).unwrap();
                for v in 0..8 {
                    for u in 0..8 {
                        let dist = fg.iter().map(|&(x, y)| x.abs_diff(u).max(y.abs_diff(v))).min().unwrap();
                        if ring.get(u, v) != (dist == r) {
                            *mismatches.get_mut("ring").unwrap() += 1;
                        }
                    }
                }
            }
        }

        let mut records = Vec::new();
        for c in 0..1 + rng.below(4) {
            for class in ["a", "b"].iter().take(1 + rng.below(2)) {
                for i in 0..1 + rng.below(3) {
                    records.push(EvaluationRecord {
                        dataset: "d".into(),
                        case: format!("c{c}"),
                        class: class.to_string(),
                        instance: i.to_string(),
                        iteration: 0,
                        scheme: "s".into(),
                        interactions: 1,
                        dsc: Some(rng.unit()),
                        cause: None,
                    });
                }
            }
        }
        let mut nested: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
        for r in &records {
            nested.entry(&r.class).or_default().entry(&r.case).or_default().push(r.dsc.unwrap());
        }
        let want = mean(&nested.values().map(|cs| mean(&cs.values().map(|v| mean(v)).collect::<Vec<_>>())).collect::<Vec<_>>());
        let got = aggregate(&records, AggregationOrder::ClassFirst)
            .into_iter()
            .find(|r| r.level == AggregateLevel::Dataset)
            .and_then(|r| r.mean_dsc)
            .unwrap();
        if (got - want).abs() > 1e-12 {
            *mismatches.get_mut("aggregate").unwrap() += 1;
        }
    }
    let total: usize = mismatches.values().sum();
    ensure(total == 0, || format!("mismatches {mismatches:?}"))?;
    Ok(format!("{seeds} seeds x 4 oracles, 0 mismatches"))
}

fn interpolation_equivalence() -> Check {
    let dims = Dims::new(24, 24, 24);
    for seed in 0..50 {
        let mut rng = SeededRng::new(seed, "blob");
        let c0 = [8 + rng.below(8), 8 + rng.below(8), 8 + rng.below(8)];
        let mut gt = BinaryMask::empty(dims);
        for k in 0..1 + rng.below(3) {
            let c = if k == 0 { c0 } else { c0.map(|v| (v as i64 + rng.symmetric(3)) as usize) };
            let r = [1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(5)];
            gt = gt.or(&ellipsoid(dims, c, r)).unwrap();
        }
        let n = ForegroundExtent::from_mask(&gt).unwrap().len();
        if n < 3 {
            // n >= 3 is required by nB Inter; Box PS has nothing to compare against
            continue;
        }
        let a = box_interpolation(&gt, n).unwrap().boxes_2d();
        let b = box_ps(&gt).unwrap().boxes_2d();
        ensure(a == b, || format!("blob {seed}: boxes differ"))?;
    }
    Ok("50 blobs, nB Inter (n=|I|) boxes == Box PS boxes".into())
}

fn determinism(dir: &Path) -> Check {
    acceptance_dataset(&dir.join("det"));
    let schemes = vec![
        scheme("5P Prop", None, 0),
        scheme("3B Inter", Some("Scribble Refine"), 3),
        scheme("1 center PPV", Some("1PPV Refine"), 3),
        scheme("1PPS", Some("1PPS Refine"), 2),
        SchemeConfig { perturb: 5, ..scheme("3D Box", None, 0) },
    ];
    let mut csvs = Vec::new();
    for (k, parallelism) in [4, 4, 1].into_iter().enumerate() {
        let out = dir.join(format!("det_out{k}"));
        let cfg = run_config(&dir.join("det/manifest.json"), &out, OracleSpec::Correctable { r: 2 }, schemes.clone(), parallelism);
        run_benchmark(&cfg).map_err(|e| e.to_string())?;
        csvs.push(fs::read(out.join(RECORDS_CSV)).map_err(|e| e.to_string())?);
    }
    ensure(csvs[0] == csvs[1], || "two parallel runs differ".into())?;
    ensure(csvs[0] == csvs[2], || "parallel and serial runs differ".into())?;
    Ok(format!("records.csv identical across parallelism 4, 4, 1 ({} bytes)", csvs[0].len()))
}

fn perturbation_bounds() -> Check {
    let dims = Dims::new(48, 48, 48);
    let reg = SchemeRegistry::default();
    let mut vertices = 0u64;
    for (k, grid) in [(3usize, dims), (5, dims), (5, Dims::new(20, 20, 20))] {
        let gt = ellipsoid(grid, [grid.nx / 2, grid.ny / 2, grid.nz / 2], [grid.nx / 2 - 1, 6, 5]);
        let plans: Vec<_> = ["3B Inter", "3D Box"]
            .iter()
            .map(|s| reg.initial(s, &SchemeOptions::default()).unwrap().plan(&gt, &mut SeededRng::new(0, "p")).unwrap().unwrap())
            .collect();
        for draw in 0..10_000 {
            let mut rng = SeededRng::new(draw, format!("perturb/{k}"));
            for plan in &plans {
                // replay the same draws to recover the unclipped shifts
                let mut replay = rng.clone();
                let moved = perturb_boxes(plan, k, grid, &mut rng);
                for (a, b) in plan.prompts.iter().zip(&moved.prompts) {
                    let (lo, hi, lo2, hi2): (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) = match (&a.shape, &b.shape) {
                        (PromptShape::Box2d { min, max, .. }, PromptShape::Box2d { min: m, max: x, .. }) => {
                            (min.to_vec(), max.to_vec(), m.to_vec(), x.to_vec())
                        }
                        (PromptShape::Box3d { min, max }, PromptShape::Box3d { min: m, max: x }) => {
                            (min.to_vec(), max.to_vec(), m.to_vec(), x.to_vec())
                        }
                        _ => return Err("shape changed".into()),
                    };
                    let limits = [grid.nx, grid.ny, grid.nz];
                    for axis in 0..lo.len() {
                        let (d_lo, d_hi) = (replay.symmetric(k as i64), replay.symmetric(k as i64));
                        ensure(d_lo.unsigned_abs() as usize <= k && d_hi.unsigned_abs() as usize <= k, || {
                            format!("shift {d_lo}/{d_hi} > {k}")
                        })?;
                        let clip = |v: usize, d: i64| (v as i64 + d).clamp(0, limits[axis] as i64 - 1) as usize;
                        let (x, y) = (clip(lo[axis], d_lo), clip(hi[axis], d_hi));
                        ensure((lo2[axis], hi2[axis]) == (x.min(y), x.max(y)), || "unexpected vertex".into())?;
                        ensure(hi2[axis] < limits[axis], || "box leaves the grid".into())?;
                        vertices += 2;
                    }
                    ensure(b.in_bounds(grid), || format!("{b:?} out of bounds"))?;
                }
            }
        }
    }
    Ok(format!("k in {{3,5}}, 10^4 draws each, {vertices} vertex shifts <= k, all boxes in bounds"))
}

fn protocol_conformance() -> Check {
    let bin = env!("CARGO_BIN_EXE_volprompt");
    let oracles = ["perfect", "dilated:1", "eroded:1", "correctable:2", "flood_fill:50", "constant_empty"];
    for o in oracles {
        let cmd = vec![bin.to_string(), "serve".into(), "--oracle".into(), o.into()];
        let mut client = ProcessClient::spawn(&cmd).map_err(|e| e.to_string())?;
        let report = run_conformance(&mut client, o).map_err(|e| e.to_string())?;
        let failed: Vec<_> = report.clauses.iter().filter(|c| c.status != Status::Pass).map(|c| c.clause.clone()).collect();
        ensure(failed.is_empty(), || format!("{o}: {failed:?}"))?;
    }
    let cases = 1000;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for seed in 0..cases {
        let mut rng = SeededRng::new(seed, "fuzz");
        let dims = Dims::new(1 + rng.below(10), 1 + rng.below(10), 1 + rng.below(10));
        let density = rng.unit();
        let bits: Vec<bool> = (0..dims.len()).map(|_| rng.bernoulli(density)).collect();
        let m = BinaryMask::from_bits(dims, bits).unwrap();
        let rle = rle_encode(&m);
        let wire: volprompt_core::io::RleMask = serde_json::from_str(&serde_json::to_string(&rle).unwrap()).unwrap();
        ensure(rle_decode(&wire).unwrap() == m, || format!("rle seed {seed}"))?;

        let data = match seed % 3 {
            0 => VoxelData::Uint8((0..dims.len()).map(|_| rng.below(256) as u8).collect()),
            1 => VoxelData::Int16((0..dims.len()).map(|_| rng.next_u64() as i16).collect()),
            _ => VoxelData::Float32((0..dims.len()).map(|_| f32::from_bits(rng.next_u64() as u32 & 0x7f7f_ffff)).collect()),
        };
        let spacing = [0.5 + rng.unit(), 0.5 + rng.unit(), 1.0 + rng.unit()].map(|s| s as f32 as f64);
        let v = Volume::new(dims, spacing, data).unwrap();
        let path = dir.path().join(if seed % 2 == 0 { "f.nii.gz" } else { "f.nii" });
        write_nifti(&v, &path).map_err(|e| e.to_string())?;
        let back = read_nifti(&path).map_err(|e| e.to_string())?;
        ensure(back.dims() == v.dims() && back.spacing() == v.spacing() && back.data() == v.data(), || {
            format!("nifti seed {seed}")
        })?;
    }
    Ok(format!("{} oracles over stdio pass every clause; {cases} RLE + {cases} NIfTI round-trips lossless", oracles.len()))
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let d = dir.path();
    let criteria: Vec<Criterion> = vec![
        ("effort accounting", Box::new(effort_accounting)),
        ("perfect oracle end-to-end", Box::new(|| perfect_oracle_end_to_end(d))),
        ("refinement monotonicity", Box::new(|| refinement_monotonicity(d))),
        ("scribble branch correctness", Box::new(|| scribble_branches(d))),
        ("oracle equivalences", Box::new(oracle_equivalences)),
        ("interpolation/per-slice equivalence", Box::new(interpolation_equivalence)),
        ("determinism", Box::new(|| determinism(d))),
        ("box perturbation bounds", Box::new(perturbation_bounds)),
        ("protocol conformance", Box::new(protocol_conformance)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
