use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use volprompt_bench::config::{RunConfig, SchemeConfig};
use volprompt_bench::conformance::run_conformance;
use volprompt_bench::error::{BenchError, Result};
use volprompt_bench::report::report_dir;
use volprompt_bench::runner::run_benchmark;
use volprompt_bench::commands;
use volprompt_core::metrics::AggregationOrder;
use volprompt_core::wire::{ProcessClient, TcpClient};
use volprompt_core::Mode;

#[derive(Parser)]
#[command(name = "volprompt", version, about = "Prompt simulation and evaluation for interactive 3D segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scheme of a config against its segmenter.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the prompt plans of a static scheme without a model.
    SimulatePrompts {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Box vertex perturbation in voxels.
        #[arg(long, default_value_t = 0)]
        perturb: usize,
        #[arg(long)]
        neg_radius: Option<usize>,
    },
    /// Score prediction files named `{case}__{instance}.nii.gz`.
    Evaluate {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Scheme label written into the records.
        #[arg(long, default_value = "external")]
        scheme: String,
        /// Defaults to `records.csv` inside the prediction directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild report tables of a results directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Average cases first, then classes.
        #[arg(long)]
        case_first: bool,
    },
    /// Check an endpoint against the wire protocol.
    Conformance(Endpoint),
    /// Generate a synthetic dataset from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a built-in oracle over stdio, or TCP with `--listen`.
    Serve {
        #[arg(long)]
        oracle: String,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Endpoint {
    /// Command line of a process speaking the protocol on stdio.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    cmd: Option<Vec<String>>,
    #[arg(long)]
    addr: Option<String>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s.to_ascii_lowercase().as_str() {
        "2d" => Ok(Mode::TwoD),
        "3d" => Ok(Mode::ThreeD),
        _ => Err(format!("`{s}`: expected 2d or 3d")),
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| BenchError::io(path, e))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = run_benchmark(&cfg)?;
            let report = report_dir(&outcome.output_dir, cfg.aggregation)?;
            print!("{}", report.to_text());
            eprintln!(
                "{} sessions, {} failed; results in {}",
                outcome.manifest.sessions,
                outcome.manifest.failed,
                outcome.output_dir.display()
            );
            outcome.check_failures()
        }
        Command::SimulatePrompts { manifest, scheme, out, seed, perturb, neg_radius } => {
            let cfg = SchemeConfig {
                initial: scheme,
                refine: None,
                iterations: 0,
                reuse_initial: None,
                perturb,
                neg_radius,
                label: None,
            };
            let mut w = create(&out)?;
            let n = commands::simulate_prompts(&manifest, &cfg, seed, &mut w)?;
            w.flush().map_err(|e| BenchError::io(&out, e))?;
            eprintln!("{n} plans written to {}", out.display());
            Ok(())
        }
        Command::Evaluate { pred_dir, manifest, scheme, out } => {
            let records = commands::evaluate(&pred_dir, &manifest, &scheme)?;
            let out = out.unwrap_or_else(|| pred_dir.join("records.csv"));
            commands::write_records(&records, &out)?;
            let scored: Vec<f64> = records.iter().filter_map(|r| r.dsc).collect();
            let missing = records.len() - scored.len();
            let mean = if scored.is_empty() { f64::NAN } else { scored.iter().sum::<f64>() / scored.len() as f64 };
            println!("{} instances, mean DSC {mean:.4}, {missing} missing", records.len());
            Ok(())
        }
        Command::Report { results, case_first } => {
            let order = if case_first { AggregationOrder::CaseFirst } else { AggregationOrder::ClassFirst };
            print!("{}", report_dir(&results, order)?.to_text());
            Ok(())
        }
        Command::Conformance(Endpoint { cmd, addr }) => {
            let report = match (cmd, addr) {
                (Some(cmd), _) => {
                    let mut c = ProcessClient::spawn(&cmd)?;
                    run_conformance(&mut c, &cmd.join(" "))?
                }
                (None, Some(addr)) => {
                    let mut c = TcpClient::connect(addr.as_str())?;
                    run_conformance(&mut c, &addr)?
                }
                (None, None) => return Err(BenchError::Config("--cmd or --addr required".into())),
            };
            println!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(BenchError::ConformanceFailed)
            }
        }
        Command::Synth { spec, out } => {
            let m = commands::synth(&spec, &out)?;
            eprintln!("{} cases written to {}", m.cases.len(), out.display());
            Ok(())
        }
        Command::Serve { oracle, mode, listen } => match listen {
            Some(addr) => commands::serve_tcp(&oracle, mode, &addr, |a| eprintln!("listening on {a}")),
            None => commands::serve_stdio(&oracle, mode),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
