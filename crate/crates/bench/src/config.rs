//! Run configuration as read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use volprompt_core::metrics::AggregationOrder;
use volprompt_core::oracles::{OracleSegmenter, OracleSpec};
use volprompt_core::session::{InitialStrategy, RefineStrategy, SchemeOptions, SchemeRegistry};
use volprompt_core::wire::{ProcessClient, TcpClient};
use volprompt_core::{Mode, Segmenter};

use crate::error::{BenchError, Result};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: PathBuf,
    pub schemes: Vec<SchemeConfig>,
    pub segmenter: SegmenterConfig,
    pub output_dir: PathBuf,
    /// Sessions in flight at once, each with its own segmenter.
    #[serde(default = "one")]
    pub parallelism: usize,
    /// Fraction of sessions allowed to fail before the run reports an
    /// error exit.
    #[serde(default)]
    pub max_failure_rate: f64,
    #[serde(default)]
    pub aggregation: AggregationOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    /// Initial scheme, e.g. `"3B Inter"`, optionally with the refinement
    /// appended: `"1 center PPV + Scribble Refine"`.
    pub initial: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<String>,
    #[serde(default)]
    pub iterations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reuse_initial: Option<bool>,
    #[serde(default)]
    pub perturb: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg_radius: Option<usize>,
    /// Name used in results; derived from the schemes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterConfig {
    Oracle(OracleConfig),
    External(ExternalConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(flatten)]
    pub spec: OracleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Program and arguments speaking the protocol on stdio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    /// `host:port` of a protocol server.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addr: Option<String>,
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SegmenterConfig::Oracle(o) => o.spec.validate().map_err(BenchError::from),
            SegmenterConfig::External(e) => match (&e.command, &e.addr) {
                (Some(c), None) if !c.is_empty() => Ok(()),
                (None, Some(_)) => Ok(()),
                _ => Err(BenchError::Config("external segmenter needs exactly one of command or addr".into())),
            },
        }
    }

    /// A fresh connection or instance; one per worker.
    pub fn connect(&self) -> Result<Box<dyn Segmenter>> {
        Ok(match self {
            SegmenterConfig::Oracle(o) => {
                let seg = OracleSegmenter::new(&o.spec)?;
                match o.mode {
                    Some(m) => Box::new(seg.with_mode(m)),
                    None => Box::new(seg),
                }
            }
            SegmenterConfig::External(ExternalConfig { command: Some(cmd), .. }) => {
                Box::new(ProcessClient::spawn(cmd)?)
            }
            SegmenterConfig::External(ExternalConfig { addr: Some(addr), .. }) => {
                Box::new(TcpClient::connect(addr.as_str())?)
            }
            SegmenterConfig::External(_) => {
                return Err(BenchError::Config("external segmenter without command or addr".into()))
            }
        })
    }
}

/// A scheme entry turned into strategies.
pub struct ResolvedScheme {
    pub label: String,
    pub initial: Box<dyn InitialStrategy>,
    pub refine: Option<Box<dyn RefineStrategy>>,
    pub iterations: u32,
    pub reuse_initial: Option<bool>,
    pub notation: String,
    pub config: SchemeConfig,
}

impl SchemeConfig {
    pub fn resolve(&self, registry: &SchemeRegistry) -> Result<ResolvedScheme> {
        let options = SchemeOptions {
            neg_radius: self.neg_radius,
            perturb: self.perturb,
        };
        let choice = registry.protocol(&self.initial, &options)?;
        let refine = match (choice.refine, &self.refine) {
            (Some(_), Some(_)) => {
                return Err(BenchError::Config(format!(
                    "`{}` already names a refinement; drop the refine field",
                    self.initial
                )))
            }
            (Some(r), None) => Some(r),
            (None, Some(name)) => Some(registry.refine(name)?),
            (None, None) => None,
        };
        if self.iterations > 0 && refine.is_none() {
            return Err(BenchError::Config(format!("{}: iterations without a refinement scheme", self.initial)));
        }
        let reuse_initial = self.reuse_initial.or(choice.reuse_initial);
        let initial = choice.initial;
        let effective_reuse = reuse_initial.unwrap_or(initial.mode() == Mode::TwoD);
        let label = self.label.clone().unwrap_or_else(|| {
            let mut l = initial.id();
            if let Some(r) = &refine {
                l.push_str(" + ");
                l.push_str(&r.id());
                if effective_reuse {
                    l.push('*');
                }
            }
            if self.perturb > 0 {
                l.push_str(&format!(" ~{}", self.perturb));
            }
            l
        });
        let notation = match &refine {
            Some(r) => format!("{}/{}", initial.notation(), r.notation()),
            None => initial.notation(),
        };
        Ok(ResolvedScheme {
            label,
            initial,
            refine,
            iterations: self.iterations,
            reuse_initial,
            notation,
            config: self.clone(),
        })
    }
}

impl RunConfig {
    /// Parse, resolve relative paths against the file's directory and
    /// validate.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.manifest = volprompt_core::dataset::resolve(base, &cfg.manifest);
        cfg.output_dir = volprompt_core::dataset::resolve(base, &cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(BenchError::Config("no schemes".into()));
        }
        if self.parallelism == 0 {
            return Err(BenchError::Config("parallelism must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(BenchError::Config("max_failure_rate must lie in [0, 1]".into()));
        }
        self.segmenter.validate()?;
        let registry = SchemeRegistry::default();
        let mut labels = std::collections::BTreeSet::new();
        for s in &self.schemes {
            let r = s.resolve(&registry)?;
            if !labels.insert(r.label.clone()) {
                return Err(BenchError::Config(format!("scheme label `{}` used twice", r.label)));
            }
        }
        Ok(())
    }

    pub fn resolve_schemes(&self) -> Result<Vec<ResolvedScheme>> {
        let registry = SchemeRegistry::default();
        self.schemes.iter().map(|s| s.resolve(&registry)).collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
