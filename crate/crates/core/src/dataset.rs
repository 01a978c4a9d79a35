//! Dataset manifests: which images and label maps make up a dataset, and
//! how label maps split into target instances.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims, Volume, VoxelData};
use crate::io::{read_volume, write_volume};
use crate::morphology::{connected_components, Connectivity3};
use crate::oracles::{generate_synthetic_case, SyntheticCaseSpec};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstancePolicy {
    /// Every 26-connected component of a label value is one instance.
    #[default]
    ConnectedComponents,
    /// Every label value is one instance.
    ExplicitLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    /// Label value (as a decimal string) to class name.
    pub class_map: BTreeMap<String, String>,
    #[serde(default)]
    pub instance_policy: InstancePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub cases: Vec<CaseEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for c in &self.cases {
            if !ids.insert(&c.case_id) {
                return Err(Error::InvalidParameter(format!("duplicate case_id {}", c.case_id)));
            }
            let mut names = BTreeSet::new();
            for (value, class) in &c.class_map {
                match value.parse::<i64>() {
                    Ok(v) if v != 0 => {}
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "case {}: label value `{value}` must be a non-zero integer",
                            c.case_id
                        )))
                    }
                }
                if !names.insert(class) {
                    return Err(Error::InvalidParameter(format!(
                        "case {}: class `{class}` mapped twice",
                        c.case_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Read and validate a manifest; returns it with the directory that
    /// relative paths refer to.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub instance_id: String,
    pub class: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub case_id: String,
    pub image: Arc<Volume>,
    pub image_path: PathBuf,
    pub instances: Vec<Instance>,
}

fn label_value(data: &VoxelData, i: usize) -> i64 {
    data.get_f64(i).round() as i64
}

/// Split a label map into instances, ordered by label value and then by
/// component discovery order.
pub fn extract_instances(
    labels: &Volume,
    class_map: &BTreeMap<String, String>,
    policy: InstancePolicy,
) -> Result<Vec<Instance>> {
    let mut values: Vec<(i64, &String)> = class_map
        .iter()
        .map(|(k, v)| {
            k.parse::<i64>()
                .map(|k| (k, v))
                .map_err(|_| Error::InvalidParameter(format!("label value `{k}`")))
        })
        .collect::<Result<_>>()?;
    values.sort();
    let dims = labels.dims();
    let mut out = Vec::new();
    for (value, class) in values {
        let bits: Vec<bool> = (0..dims.len()).map(|i| label_value(labels.data(), i) == value).collect();
        let mask = BinaryMask::from_bits(dims, bits)?;
        if mask.is_empty() {
            continue;
        }
        match policy {
            InstancePolicy::ExplicitLabels => out.push(Instance {
                instance_id: value.to_string(),
                class: class.clone(),
                mask,
            }),
            InstancePolicy::ConnectedComponents => {
                let cc = connected_components(&mask, Connectivity3::TwentySix);
                for id in 1..=cc.count as u32 {
                    out.push(Instance {
                        instance_id: format!("{value}-{id}"),
                        class: class.clone(),
                        mask: cc.mask_of(id),
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn load_case(base: &Path, entry: &CaseEntry) -> Result<LoadedCase> {
    let image_path = resolve(base, &entry.image_path);
    let image = read_volume(&image_path)?;
    let labels = read_volume(resolve(base, &entry.label_path))?;
    if labels.dims() != image.dims() {
        return Err(Error::DimMismatch(labels.dims(), image.dims()));
    }
    Ok(LoadedCase {
        case_id: entry.case_id.clone(),
        image: Arc::new(image),
        image_path,
        instances: extract_instances(&labels, &entry.class_map, entry.instance_policy)?,
    })
}

/// Parameters of a whole synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    pub cases: usize,
    /// Inclusive range each grid extent is drawn from.
    pub size_range: [usize; 2],
    /// Inclusive range of the instance count per case.
    pub instances_range: [usize; 2],
    pub radius_range: [usize; 2],
    pub contrast: f64,
    pub noise_sigma: f64,
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    pub seed: u64,
}

fn default_dataset_id() -> String {
    "synthetic".into()
}

fn default_classes() -> Vec<String> {
    vec!["lesion".into()]
}

impl SyntheticDatasetSpec {
    /// Case-level specs, derived deterministically from the dataset seed.
    pub fn case_specs(&self) -> Result<Vec<(String, SyntheticCaseSpec)>> {
        let [lo, hi] = self.size_range;
        let [ilo, ihi] = self.instances_range;
        if lo == 0 || lo > hi || ilo == 0 || ilo > ihi {
            return Err(Error::InvalidParameter("synthetic size/instance ranges".into()));
        }
        if self.classes.is_empty() || self.classes.len() > 255 {
            return Err(Error::InvalidParameter("synthetic classes".into()));
        }
        let root = SeededRng::new(self.seed, format!("synth/{}", self.dataset_id));
        (0..self.cases)
            .map(|i| {
                let mut rng = root.child(format!("case/{i}"));
                let mut draw = |a: usize, b: usize| a + rng.below(b - a + 1);
                let dims = Dims::new(draw(lo, hi), draw(lo, hi), draw(lo, hi));
                let instances = draw(ilo, ihi);
                let seed = rng.next_u64();
                Ok((
                    format!("case_{i:03}"),
                    SyntheticCaseSpec {
                        dims,
                        instances,
                        radius_range: self.radius_range,
                        contrast: self.contrast,
                        noise_sigma: self.noise_sigma,
                        background: 100.0,
                        seed,
                    },
                ))
            })
            .collect()
    }
}

/// Write images, label maps and `manifest.json` into `out_dir`. Instance
/// `k` gets class `classes[k % classes.len()]`, stored as label value
/// `class index + 1`; instances are split back apart by connectivity.
pub fn write_synthetic_dataset(spec: &SyntheticDatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut cases = Vec::new();
    for (case_id, cs) in spec.case_specs()? {
        let c = generate_synthetic_case(&cs)?;
        let dims = c.volume.dims();
        let mut labels = vec![0u8; dims.len()];
        for (k, m) in c.instances.iter().enumerate() {
            let value = (k % spec.classes.len() + 1) as u8;
            for (i, b) in m.bits().iter().enumerate() {
                if *b {
                    labels[i] = value;
                }
            }
        }
        let image_path = PathBuf::from(format!("{case_id}.nii.gz"));
        let label_path = PathBuf::from(format!("{case_id}_label.nii.gz"));
        write_volume(&c.volume, out_dir.join(&image_path))?;
        write_volume(
            &Volume::new(dims, [1.0; 3], VoxelData::Uint8(labels))?,
            out_dir.join(&label_path),
        )?;
        let used = c.instances.len().min(spec.classes.len());
        let class_map = spec.classes[..used]
            .iter()
            .enumerate()
            .map(|(i, name)| ((i + 1).to_string(), name.clone()))
            .collect();
        cases.push(CaseEntry {
            case_id,
            image_path,
            label_path,
            class_map,
            instance_policy: InstancePolicy::ConnectedComponents,
        });
    }
    let manifest = DatasetManifest {
        dataset_id: spec.dataset_id.clone(),
        cases,
    };
    manifest.validate()?;
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
