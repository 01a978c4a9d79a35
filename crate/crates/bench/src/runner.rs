//! Drives every (case, instance, scheme) session and writes the results
//! directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use serde::{Deserialize, Serialize};
use volprompt_core::dataset::{load_case, DatasetManifest, LoadedCase};
use volprompt_core::metrics::{aggregate, dsc, write_aggregate_csv, write_records_csv, AggregateRow, EvaluationRecord};
use volprompt_core::segmenter::{Capabilities, CaseData};
use volprompt_core::session::{run_protocol, write_transcript, Session, TranscriptRecord};
use volprompt_core::{BinaryMask, Error as CoreError, Segmenter, SeededRng};

use crate::config::{ResolvedScheme, RunConfig};
use crate::error::{BenchError, Result};

pub const RECORDS_CSV: &str = "records.csv";
pub const RECORDS_JSON: &str = "records.json";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const TRANSCRIPTS_DIR: &str = "transcripts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub label: String,
    pub initial: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<String>,
    pub iterations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reuse_initial: Option<bool>,
    pub perturb: usize,
    pub notation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFailure {
    pub case: String,
    pub instance: String,
    pub scheme: String,
    pub cause: String,
    pub message: String,
}

/// What a run used and how it went; written next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub dataset_id: String,
    pub manifest: PathBuf,
    pub segmenter: Capabilities,
    pub schemes: Vec<SchemeSummary>,
    pub sessions: usize,
    pub failed: usize,
    pub failures: Vec<SessionFailure>,
}

pub struct RunOutcome {
    pub records: Vec<EvaluationRecord>,
    pub aggregate: Vec<AggregateRow>,
    pub manifest: RunManifest,
    pub output_dir: PathBuf,
    max_failure_rate: f64,
}

impl RunOutcome {
    /// `Err` when more sessions failed than the configuration allows.
    pub fn check_failures(&self) -> Result<()> {
        let (failed, total) = (self.manifest.failed, self.manifest.sessions);
        if total > 0 && failed as f64 / total as f64 > self.max_failure_rate {
            return Err(BenchError::FailureThreshold {
                failed,
                total,
                max_rate: self.max_failure_rate,
            });
        }
        Ok(())
    }
}

/// Short machine-readable reason for a failed session.
pub fn cause_code(e: &CoreError) -> &'static str {
    match e {
        CoreError::SegmenterFailure(_) => "segmenter_failure",
        CoreError::Protocol(_) | CoreError::Io { .. } => "protocol",
        CoreError::CapabilityMissing(_) => "capability_missing",
        CoreError::EmptyMask | CoreError::EmptySlice | CoreError::EmptyGroundTruth => "empty_target",
        _ => "engine_error",
    }
}

#[derive(Clone, Copy)]
struct Job {
    case: usize,
    instance: usize,
    scheme: usize,
}

struct JobResult {
    index: usize,
    records: Vec<EvaluationRecord>,
    transcript: Vec<TranscriptRecord>,
    failure: Option<SessionFailure>,
}

pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

struct Shared<'a> {
    dataset_id: &'a str,
    seed: u64,
    cases: &'a [LoadedCase],
    references: &'a [Arc<Vec<BinaryMask>>],
    schemes: &'a [ResolvedScheme],
}

fn run_job(seg: &mut dyn Segmenter, sh: &Shared<'_>, job: Job) -> volprompt_core::Result<(Vec<EvaluationRecord>, Vec<TranscriptRecord>)> {
    let case = &sh.cases[job.case];
    let inst = &case.instances[job.instance];
    let scheme = &sh.schemes[job.scheme];
    let path = format!("{}/{}/{}/{}", sh.dataset_id, case.case_id, inst.instance_id, scheme.label);
    let data = CaseData {
        case_id: case.case_id.clone(),
        volume: case.image.clone(),
        image_path: Some(case.image_path.clone()),
        reference: Some(sh.references[job.case].clone()),
    };
    let mut session = Session::open(seg, &data, &path)?;
    let (_, outcomes) = run_protocol(
        &mut session,
        &inst.mask,
        scheme.initial.as_ref(),
        scheme.refine.as_deref(),
        scheme.iterations,
        scheme.reuse_initial,
        &SeededRng::new(sh.seed, &path),
    )?;
    let transcript = session.finish()?;
    let records = outcomes
        .iter()
        .map(|o| {
            Ok(EvaluationRecord {
                dataset: sh.dataset_id.to_string(),
                case: case.case_id.clone(),
                class: inst.class.clone(),
                instance: inst.instance_id.clone(),
                iteration: o.iteration,
                scheme: scheme.label.clone(),
                interactions: o.interactions,
                dsc: Some(dsc(&o.pred, &inst.mask)?),
                cause: None,
            })
        })
        .collect::<volprompt_core::Result<_>>()?;
    Ok((records, transcript))
}

fn failed_records(sh: &Shared<'_>, job: Job, cause: &str) -> Vec<EvaluationRecord> {
    let case = &sh.cases[job.case];
    let inst = &case.instances[job.instance];
    let scheme = &sh.schemes[job.scheme];
    (0..=scheme.iterations)
        .map(|iteration| EvaluationRecord {
            dataset: sh.dataset_id.to_string(),
            case: case.case_id.clone(),
            class: inst.class.clone(),
            instance: inst.instance_id.clone(),
            iteration,
            scheme: scheme.label.clone(),
            interactions: 0,
            dsc: None,
            cause: Some(cause.to_string()),
        })
        .collect()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| BenchError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(CoreError::from)?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| BenchError::io(path, e))?))
}

/// Load the dataset, check every scheme against the segmenter's
/// capabilities, run all sessions and write the results directory.
pub fn run_benchmark(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let (dataset, base) = DatasetManifest::load(&cfg.manifest)
        .map_err(|e| BenchError::Config(format!("manifest {}: {e}", cfg.manifest.display())))?;
    let cases: Vec<LoadedCase> = dataset
        .cases
        .iter()
        .map(|c| load_case(&base, c).map_err(|e| BenchError::Config(format!("case {}: {e}", c.case_id))))
        .collect::<Result<_>>()?;
    let references: Vec<Arc<Vec<BinaryMask>>> = cases
        .iter()
        .map(|c| Arc::new(c.instances.iter().map(|i| i.mask.clone()).collect()))
        .collect();
    let schemes = cfg.resolve_schemes()?;

    let first = cfg.segmenter.connect()?;
    let caps = first.capabilities();
    for s in &schemes {
        s.initial.check(&caps)?;
        if let (Some(r), true) = (&s.refine, s.iterations > 0) {
            r.check(&caps, s.initial.mode())?;
        }
    }

    let mut jobs = Vec::new();
    for (ci, c) in cases.iter().enumerate() {
        for ii in 0..c.instances.len() {
            for si in 0..schemes.len() {
                jobs.push(Job {
                    case: ci,
                    instance: ii,
                    scheme: si,
                });
            }
        }
    }

    let out = &cfg.output_dir;
    let tdir = out.join(TRANSCRIPTS_DIR);
    fs::create_dir_all(&tdir).map_err(|e| BenchError::io(&tdir, e))?;
    for s in &schemes {
        let d = tdir.join(slug(&s.label));
        fs::create_dir_all(&d).map_err(|e| BenchError::io(&d, e))?;
    }

    let shared = Shared {
        dataset_id: &dataset.dataset_id,
        seed: cfg.seed,
        cases: &cases,
        references: &references,
        schemes: &schemes,
    };
    let next = AtomicUsize::new(0);
    let spare = Mutex::new(Some(first));
    let (tx, rx) = mpsc::channel::<JobResult>();
    let mut results: Vec<Option<JobResult>> = (0..jobs.len()).map(|_| None).collect();

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..cfg.parallelism.min(jobs.len().max(1)) {
            let tx = tx.clone();
            let (shared, jobs, next, spare) = (&shared, &jobs, &next, &spare);
            scope.spawn(move || {
                let mut seg: Option<Box<dyn Segmenter>> = spare.lock().expect("unpoisoned").take();
                loop {
                    let index = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&job) = jobs.get(index) else { break };
                    let attempt = match seg.as_mut() {
                        Some(s) => run_job(s.as_mut(), shared, job),
                        None => cfg
                            .segmenter
                            .connect()
                            .map_err(|e| CoreError::SegmenterFailure(e.to_string()))
                            .and_then(|s| run_job(seg.insert(s).as_mut(), shared, job)),
                    };
                    let result = match attempt {
                        Ok((records, transcript)) => JobResult {
                            index,
                            records,
                            transcript,
                            failure: None,
                        },
                        Err(e) => {
                            // a crashed external process is replaced for the next session
                            seg = None;
                            let cause = cause_code(&e);
                            let case = &shared.cases[job.case];
                            JobResult {
                                index,
                                records: failed_records(shared, job, cause),
                                transcript: Vec::new(),
                                failure: Some(SessionFailure {
                                    case: case.case_id.clone(),
                                    instance: case.instances[job.instance].instance_id.clone(),
                                    scheme: shared.schemes[job.scheme].label.clone(),
                                    cause: cause.to_string(),
                                    message: e.to_string(),
                                }),
                            }
                        }
                    };
                    if tx.send(result).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        // single writer for transcripts
        for r in rx {
            let job = jobs[r.index];
            let case = &cases[job.case];
            let path = tdir.join(slug(&schemes[job.scheme].label)).join(format!(
                "{}__{}.jsonl",
                slug(&case.case_id),
                slug(&case.instances[job.instance].instance_id)
            ));
            write_transcript(&r.transcript, create(&path)?)?;
            let i = r.index;
            results[i] = Some(r);
        }
        Ok(())
    })?;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results.into_iter().flatten() {
        records.extend(r.records);
        failures.extend(r.failure);
    }
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let rows = aggregate(&records, cfg.aggregation);

    write_records_csv(&records, create(&out.join(RECORDS_CSV))?)?;
    write_json(&out.join(RECORDS_JSON), &records)?;
    write_aggregate_csv(&rows, create(&out.join(AGGREGATE_CSV))?)?;
    write_json(&out.join(AGGREGATE_JSON), &rows)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        dataset_id: dataset.dataset_id.clone(),
        manifest: cfg.manifest.clone(),
        segmenter: caps,
        schemes: schemes
            .iter()
            .map(|s| SchemeSummary {
                label: s.label.clone(),
                initial: s.initial.id(),
                refine: s.refine.as_ref().map(|r| r.id()),
                iterations: s.iterations,
                reuse_initial: s.reuse_initial,
                perturb: s.config.perturb,
                notation: s.notation.clone(),
            })
            .collect(),
        sessions: jobs.len(),
        failed: failures.len(),
        failures,
    };
    write_json(&out.join(RUN_MANIFEST), &manifest)?;
    Ok(RunOutcome {
        records,
        aggregate: rows,
        manifest,
        output_dir: out.clone(),
        max_failure_rate: cfg.max_failure_rate,
    })
}
