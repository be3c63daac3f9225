//! Strict JSON run configuration shared by the subcommands.
//!
//! Every field has a default, so an empty object `{}` (or no `--config` at
//! all) is a complete configuration. Unknown keys anywhere in the document
//! are rejected with an error that names the offending key. The fully
//! resolved settings are echoed to `resolved_config.json` next to each
//! command's outputs so a run can always be traced back to the exact values
//! it used.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use graphmark::data::{Dataset, GeneratorConfig};
use graphmark::eval::DEFAULT_FAILURE_FRACTION;
use graphmark::model::ArchDescriptor;
use graphmark::train::{Strategy, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Where `gen-data` writes and the training commands read datasets.
    pub dataset_dir: PathBuf,
    /// Where command outputs land unless `--out` overrides it.
    pub output_dir: PathBuf,
    /// Synthetic-image generator settings used by `gen-data`.
    pub generator: GeneratorConfig,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Seed for dataset generation.
    pub dataset_seed: u64,
    /// Seed for fresh model initialization when no checkpoint is given.
    pub model_seed: u64,
    /// Model architecture; omitted means the stock architecture sized to the
    /// dataset it is trained on.
    pub arch: Option<ArchDescriptor>,
    /// Supervised warm-up settings used by `pretrain`.
    pub pretrain: TrainConfig,
    /// Strategy-phase settings used by `train-ssl`.
    pub train: TrainConfig,
    /// Failure threshold for evaluation, as a fraction of image width.
    pub failure_fraction: f64,
    /// Pixel magnification of overlay renderings.
    pub overlay_scale: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        let pretrain = TrainConfig { strategy: Strategy::Supervised, ..TrainConfig::default() };
        CliConfig {
            dataset_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            generator: GeneratorConfig::default(),
            n_labeled: 5,
            n_unlabeled: 500,
            n_validation: 10,
            n_test: 200,
            dataset_seed: 42,
            model_seed: 1,
            arch: None,
            pretrain,
            train: TrainConfig::default(),
            failure_fraction: DEFAULT_FAILURE_FRACTION,
            overlay_scale: 4,
        }
    }
}

impl CliConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        if let Some(arch) = &self.arch {
            arch.validate()?;
        }
        if self.n_labeled == 0 {
            bail!("config: n_labeled must be >= 1");
        }
        if self.n_validation == 0 {
            bail!("config: n_validation must be >= 1 (model selection needs it)");
        }
        if self.n_test == 0 {
            bail!("config: n_test must be >= 1");
        }
        if self.train.strategy.uses_unlabeled() && self.n_unlabeled == 0 {
            bail!("config: strategy {} needs n_unlabeled >= 1", self.train.strategy);
        }
        if !(self.failure_fraction > 0.0 && self.failure_fraction < 1.0) {
            bail!("config: failure_fraction must be in (0, 1)");
        }
        if self.overlay_scale == 0 {
            bail!("config: overlay_scale must be >= 1");
        }
        Ok(())
    }

    /// The architecture to train on a dataset with the given geometry:
    /// the configured one (checked for consistency) or the stock design
    /// sized to fit.
    pub fn arch_for(&self, k: usize, image_h: usize, image_w: usize) -> Result<ArchDescriptor> {
        match &self.arch {
            Some(arch) => {
                if arch.k != k || arch.image_h != image_h || arch.image_w != image_w {
                    bail!(
                        "config arch expects {}x{} px with {} landmarks, dataset has {}x{} px with {} landmarks",
                        arch.image_w, arch.image_h, arch.k, image_w, image_h, k
                    );
                }
                Ok(arch.clone())
            }
            None => {
                let arch =
                    ArchDescriptor { image_h, image_w, ..ArchDescriptor::desk(k) };
                arch.validate()?;
                Ok(arch)
            }
        }
    }

    /// Like [`arch_for`](Self::arch_for), sized from a loaded dataset.
    pub fn arch_for_dataset(&self, ds: &Dataset) -> Result<ArchDescriptor> {
        self.arch_for(ds.k, ds.image_h, ds.image_w)
    }

    /// Write the fully resolved configuration next to a command's outputs.
    pub fn write_snapshot(&self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create {}", out_dir.display()))?;
        let path = out_dir.join("resolved_config.json");
        let mut text = serde_json::to_string_pretty(self).context("serialize config")?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

/// Load and validate a configuration file; `None` means all defaults.
pub fn load_config(path: Option<&Path>) -> Result<CliConfig> {
    let cfg: CliConfig = match path {
        None => CliConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid config {}", p.display()))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
