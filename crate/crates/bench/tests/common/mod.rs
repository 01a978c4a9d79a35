#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub use volprompt_bench::config::{OracleConfig, RunConfig, SchemeConfig, SegmenterConfig};
use volprompt_core::dataset::{write_synthetic_dataset, SyntheticDatasetSpec};
use volprompt_core::metrics::AggregationOrder;
use volprompt_core::oracles::OracleSpec;

pub fn dataset_spec(cases: usize, size: [usize; 2], seed: u64) -> SyntheticDatasetSpec {
    SyntheticDatasetSpec {
        dataset_id: "synthetic".into(),
        cases,
        size_range: size,
        instances_range: [1, 3],
        radius_range: [3, 7],
        contrast: 200.0,
        noise_sigma: 5.0,
        classes: vec!["lesion".into(), "cyst".into()],
        seed,
    }
}

/// Write a synthetic dataset and return its manifest path.
pub fn synth(dir: &Path, spec: &SyntheticDatasetSpec) -> PathBuf {
    write_synthetic_dataset(spec, dir).unwrap();
    dir.join("manifest.json")
}

pub fn scheme(initial: &str) -> SchemeConfig {
    SchemeConfig {
        initial: initial.into(),
        refine: None,
        iterations: 0,
        reuse_initial: None,
        perturb: 0,
        neg_radius: None,
        label: None,
    }
}

pub fn refined(initial: &str, refine: &str, iterations: u32) -> SchemeConfig {
    SchemeConfig {
        refine: Some(refine.into()),
        iterations,
        ..scheme(initial)
    }
}

pub fn config(manifest: &Path, out: &Path, oracle: OracleSpec, schemes: Vec<SchemeConfig>) -> RunConfig {
    RunConfig {
        seed: 42,
        manifest: manifest.to_path_buf(),
        schemes,
        segmenter: SegmenterConfig::Oracle(OracleConfig { spec: oracle, mode: None }),
        output_dir: out.to_path_buf(),
        parallelism: 1,
        max_failure_rate: 0.0,
        aggregation: AggregationOrder::ClassFirst,
    }
}
