mod common;

use std::fs;

use common::{config, dataset_spec, refined, scheme, synth};
use volprompt_bench::config::{ExternalConfig, SegmenterConfig};
use volprompt_bench::report::report_dir;
use volprompt_bench::runner::{run_benchmark, AGGREGATE_CSV, RECORDS_CSV, TRANSCRIPTS_DIR};
use volprompt_bench::BenchError;
use volprompt_core::metrics::{AggregateLevel, AggregationOrder};
use volprompt_core::oracles::OracleSpec;

#[test]
fn perfect_oracle_box_interpolation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), &dataset_spec(3, [24, 32], 1));
    let cfg = config(&manifest, &dir.path().join("out"), OracleSpec::Perfect, vec![scheme("3B Inter")]);
    let outcome = run_benchmark(&cfg).unwrap();
    outcome.check_failures().unwrap();
    assert!(outcome.records.iter().all(|r| r.interactions == 6 && r.dsc == Some(1.0)));
    let ds = outcome.aggregate.iter().find(|r| r.level == AggregateLevel::Dataset).unwrap();
    assert_eq!(ds.mean_dsc, Some(1.0));
    let transcripts = fs::read_dir(dir.path().join("out").join(TRANSCRIPTS_DIR).join("3B_Inter")).unwrap().count();
    assert_eq!(transcripts, outcome.records.len());
}

#[test]
fn parallel_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), &dataset_spec(3, [24, 32], 2));
    let schemes = vec![
        scheme("5P Prop"),
        scheme("1PPV"),
        refined("1 center PPV", "Scribble Refine", 3),
        refined("3B Inter", "1PPS Refine", 2),
        common::SchemeConfig { perturb: 3, ..scheme("Box PS") },
    ];
    let mut outputs = Vec::new();
    for (i, parallelism) in [1, 4, 4].into_iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let mut cfg = config(&manifest, &out, OracleSpec::Correctable { r: 2 }, schemes.clone());
        cfg.parallelism = parallelism;
        run_benchmark(&cfg).unwrap();
        outputs.push((fs::read(out.join(RECORDS_CSV)).unwrap(), fs::read(out.join(AGGREGATE_CSV)).unwrap()));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn crashed_sessions_become_missing_records() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), &dataset_spec(2, [20, 24], 3));
    let mut cfg = config(&manifest, &dir.path().join("out"), OracleSpec::Perfect, vec![scheme("3D Box")]);
    // answers the handshake, then exits
    let caps = r#"{"type":"capabilities","protocol":1,"capabilities":{"name":"flaky","supports_2d":true,"supports_3d":true,"accepts_boxes":true,"accepts_points":true,"accepts_neg_points":true,"accepts_mask_prompt":true}}"#;
    cfg.segmenter = SegmenterConfig::External(ExternalConfig {
        command: Some(vec!["sh".into(), "-c".into(), format!("head -n 1 >/dev/null; echo '{caps}'")]),
        addr: None,
    });
    let outcome = run_benchmark(&cfg).unwrap();
    assert_eq!(outcome.manifest.failed, outcome.manifest.sessions);
    assert!(outcome.records.iter().all(|r| r.dsc.is_none() && r.cause.is_some()));
    assert!(matches!(outcome.check_failures(), Err(BenchError::FailureThreshold { .. })));
    cfg.max_failure_rate = 1.0;
    let outcome = run_benchmark(&cfg).unwrap();
    outcome.check_failures().unwrap();
    let ds = outcome.aggregate.iter().find(|r| r.level == AggregateLevel::Dataset).unwrap();
    assert_eq!(ds.mean_dsc, None);
    assert_eq!(ds.n_missing, outcome.records.len());
}

#[test]
fn refinement_report_has_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), &dataset_spec(2, [24, 28], 4));
    let out = dir.path().join("out");
    let cfg = config(
        &manifest,
        &out,
        OracleSpec::Dilated { k: 1 },
        vec![scheme("3D Box"), refined("3B Inter", "Scribble Refine", 5)],
    );
    run_benchmark(&cfg).unwrap();
    let report = report_dir(&out, AggregationOrder::ClassFirst).unwrap();
    let rows: Vec<_> = report.rows.iter().filter(|r| r.scheme.starts_with("3B_Inter")).collect();
    assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), [0, 1, 2, 3, 4, 5]);
    assert_eq!(rows.iter().filter(|r| r.is_final).count(), 1);
    assert!(rows[5].is_final);
    assert_eq!(rows[0].notation, "6/3");
    let text = report.to_text();
    assert!(text.contains("Interactions"));
    assert!(out.join("report.csv").exists());
}

#[test]
fn capability_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), &dataset_spec(1, [28, 28], 5));
    let mut cfg = config(&manifest, &dir.path().join("out"), OracleSpec::Perfect, vec![scheme("3D Box")]);
    cfg.segmenter = SegmenterConfig::Oracle(volprompt_bench::config::OracleConfig {
        spec: OracleSpec::Perfect,
        mode: Some(volprompt_core::Mode::TwoD),
    });
    let err = run_benchmark(&cfg).err().unwrap();
    assert_eq!(err.exit_code(), 2);
}
