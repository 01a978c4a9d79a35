//! Subcommands that do not run a full benchmark.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use serde::Serialize;
use volprompt_core::dataset::{load_case, write_synthetic_dataset, DatasetManifest, SyntheticDatasetSpec};
use volprompt_core::io::read_volume;
use volprompt_core::metrics::{dsc, write_records_csv, EvaluationRecord};
use volprompt_core::oracles::{OracleRegistry, OracleSegmenter};
use volprompt_core::session::SchemeRegistry;
use volprompt_core::wire::serve;
use volprompt_core::{Error as CoreError, Mode, PromptPlan, SeededRng};

use crate::config::SchemeConfig;
use crate::error::{BenchError, Result};
use crate::runner::slug;

fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    DatasetManifest::load(path).map_err(|e| BenchError::Config(format!("manifest {}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanLine {
    pub dataset: String,
    pub case: String,
    pub class: String,
    pub instance: String,
    pub scheme: String,
    pub plan: PromptPlan,
}

/// Prompt plans of a static scheme for every instance of a dataset, one
/// JSON object per line. Uses the same seed paths as `run`, so the plans
/// match what a run would send.
pub fn simulate_prompts(
    manifest: &Path,
    scheme: &SchemeConfig,
    seed: u64,
    out: &mut dyn Write,
) -> Result<usize> {
    let resolved = scheme.resolve(&SchemeRegistry::default())?;
    let (m, base) = load_manifest(manifest)?;
    let mut n = 0;
    for entry in &m.cases {
        let case = load_case(&base, entry).map_err(|e| BenchError::Config(format!("case {}: {e}", entry.case_id)))?;
        for inst in &case.instances {
            let path = format!("{}/{}/{}/{}", m.dataset_id, case.case_id, inst.instance_id, resolved.label);
            let mut rng = SeededRng::new(seed, &path).child("initial");
            let plan = resolved.initial.plan(&inst.mask, &mut rng).ok_or_else(|| {
                BenchError::Config(format!(
                    "{} derives its prompts from model output; it has no static plan",
                    resolved.initial.id()
                ))
            })??;
            let line = PlanLine {
                dataset: m.dataset_id.clone(),
                case: case.case_id.clone(),
                class: inst.class.clone(),
                instance: inst.instance_id.clone(),
                scheme: resolved.label.clone(),
                plan,
            };
            serde_json::to_writer(&mut *out, &line).map_err(CoreError::from)?;
            out.write_all(b"\n").map_err(|e| BenchError::io("<output>", e))?;
            n += 1;
        }
    }
    Ok(n)
}

const PRED_EXTENSIONS: [&str; 3] = ["nii.gz", "nii", "rav"];

/// The prediction file of one instance, `{case}__{instance}.{ext}`.
pub fn prediction_path(dir: &Path, case: &str, instance: &str) -> Option<PathBuf> {
    PRED_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{}__{}.{ext}", slug(case), slug(instance))))
        .find(|p| p.exists())
}

/// Score externally produced masks. Voxels above 0.5 count as foreground.
/// Missing or unreadable predictions give a NaN record with a cause.
pub fn evaluate(pred_dir: &Path, manifest: &Path, scheme: &str) -> Result<Vec<EvaluationRecord>> {
    let (m, base) = load_manifest(manifest)?;
    let mut records = Vec::new();
    for entry in &m.cases {
        let case = load_case(&base, entry).map_err(|e| BenchError::Config(format!("case {}: {e}", entry.case_id)))?;
        for inst in &case.instances {
            let scored = match prediction_path(pred_dir, &case.case_id, &inst.instance_id) {
                None => Err("missing_prediction"),
                Some(p) => read_volume(&p)
                    .map_err(|_| "unreadable_prediction")
                    .and_then(|v| {
                        let dims = v.dims();
                        let bits = (0..dims.len()).map(|i| v.data().get_f64(i) > 0.5).collect();
                        volprompt_core::BinaryMask::from_bits(dims, bits).map_err(|_| "unreadable_prediction")
                    })
                    .and_then(|pred| dsc(&pred, &inst.mask).map_err(|_| "dims_mismatch")),
            };
            records.push(EvaluationRecord {
                dataset: m.dataset_id.clone(),
                case: case.case_id.clone(),
                class: inst.class.clone(),
                instance: inst.instance_id.clone(),
                iteration: 0,
                scheme: scheme.to_string(),
                interactions: 0,
                dsc: scored.ok(),
                cause: scored.err().map(str::to_string),
            });
        }
    }
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(records)
}

pub fn write_records(records: &[EvaluationRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| BenchError::io(path, e))?;
    write_records_csv(records, BufWriter::new(f))?;
    Ok(())
}

pub fn synth(spec_path: &Path, out: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(spec_path)
        .map_err(|e| BenchError::Config(format!("{}: {e}", spec_path.display())))?;
    let spec: SyntheticDatasetSpec =
        serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", spec_path.display())))?;
    Ok(write_synthetic_dataset(&spec, out)?)
}

fn oracle(spec: &str, mode: Option<Mode>) -> Result<OracleSegmenter> {
    let spec = OracleRegistry::default().spec(spec)?;
    let seg = OracleSegmenter::new(&spec)?;
    Ok(match mode {
        Some(m) => seg.with_mode(m),
        None => seg,
    })
}

/// Serve an oracle on stdio until the input closes.
pub fn serve_stdio(spec: &str, mode: Option<Mode>) -> Result<()> {
    let seg = oracle(spec, mode)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(seg, stdin.lock(), stdout.lock())?;
    Ok(())
}

/// Serve an oracle on TCP, one fresh oracle per connection. Runs until the
/// process is stopped; `ready` receives the bound address.
pub fn serve_tcp(spec: &str, mode: Option<Mode>, listen: &str, ready: impl FnOnce(std::net::SocketAddr)) -> Result<()> {
    oracle(spec, mode)?;
    let listener = TcpListener::bind(listen).map_err(|e| BenchError::io(listen, e))?;
    ready(listener.local_addr().map_err(|e| BenchError::io(listen, e))?);
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let seg = oracle(spec, mode)?;
        std::thread::spawn(move || {
            let Ok(read) = stream.try_clone() else { return };
            let _ = serve(seg, BufReader::new(read), stream);
        });
    }
    Ok(())
}

/// Read a JSON-lines file of plans back, e.g. in tests.
pub fn read_plan_lines(path: &Path) -> Result<Vec<serde_json::Value>> {
    let f = File::open(path).map_err(|e| BenchError::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| BenchError::io(path, e))?;
            Ok(serde_json::from_str(&l).map_err(CoreError::from)?)
        })
        .collect()
}
