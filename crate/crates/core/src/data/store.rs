//! On-disk dataset format.
//!
//! A dataset directory holds `manifest.json` plus `images/<id>.pgm`. The
//! manifest carries the landmark count, image size, generator seed, and one
//! entry per sample; unlabeled samples simply omit their landmarks. Loading
//! is all-or-nothing: any malformed piece fails the whole load.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::pgm::{read_pgm, write_pgm};
use crate::error::{Error, Result};
use crate::graph::LandmarkSet;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Labeled,
    Unlabeled,
    Validation,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    k: usize,
    /// [width, height] in pixels.
    image_size: [usize; 2],
    generator_seed: u64,
    samples: Vec<ManifestSample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSample {
    id: String,
    split: Split,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    landmarks: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub image: Tensor,
    pub landmarks: Option<LandmarkSet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub generator_seed: u64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("dataset: k must be >= 1"));
        }
        if self.image_w < 2 || self.image_h < 2 {
            return Err(Error::invalid("dataset: image dims must be >= 2"));
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            if s.id.is_empty()
                || !s.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(Error::invalid(format!("dataset: unusable sample id {:?}", s.id)));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("dataset: duplicate sample id {:?}", s.id)));
            }
            let shape = s.image.shape();
            if shape != [1, self.image_h, self.image_w] {
                return Err(Error::invalid(format!(
                    "dataset: sample {} image shape {shape:?} does not match [1,{},{}]",
                    s.id, self.image_h, self.image_w
                )));
            }
            if let Some(lm) = &s.landmarks {
                if lm.k() != self.k {
                    return Err(Error::invalid(format!(
                        "dataset: sample {} has {} landmarks, expected {}",
                        s.id,
                        lm.k(),
                        self.k
                    )));
                }
                if lm.points().iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                    return Err(Error::invalid(format!(
                        "dataset: sample {} has non-finite landmarks",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for s in &ds.samples {
        write_pgm(&images.join(format!("{}.pgm", s.id)), &s.image)?;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        k: ds.k,
        image_size: [ds.image_w, ds.image_h],
        generator_seed: ds.generator_seed,
        samples: ds
            .samples
            .iter()
            .map(|s| ManifestSample {
                id: s.id.clone(),
                split: s.split,
                landmarks: s.landmarks.as_ref().map(|l| l.points().to_vec()),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(format!("manifest serialization: {e}")))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    // Check the version before strict field validation so that a newer
    // format is reported as a version problem, not a parse problem. Both
    // passes parse the raw text: a detour through a dynamic JSON value can
    // perturb the last bit of f64 landmark coordinates.
    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: u64,
    }
    let probe: VersionProbe = serde_json::from_str(&raw)
        .map_err(|e| Error::format(format!("{}: invalid JSON: {e}", path.display())))?;
    if probe.format_version != FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: probe.format_version.min(u32::MAX as u64) as u32,
            supported: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_str(&raw)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;

    let mut samples = Vec::with_capacity(manifest.samples.len());
    for m in &manifest.samples {
        if m.id.is_empty() || !m.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::format(format!("manifest: unusable sample id {:?}", m.id)));
        }
        let image = read_pgm(&dir.join("images").join(format!("{}.pgm", m.id)))?;
        samples.push(Sample {
            id: m.id.clone(),
            split: m.split,
            image,
            landmarks: m.landmarks.as_ref().map(|p| LandmarkSet::new(p.clone())),
        });
    }
    let ds = Dataset {
        k: manifest.k,
        image_w: manifest.image_size[0],
        image_h: manifest.image_size[1],
        generator_seed: manifest.generator_seed,
        samples,
    };
    ds.validate().map_err(|e| Error::format(format!("loaded dataset inconsistent: {e}")))?;
    Ok(ds)
}
