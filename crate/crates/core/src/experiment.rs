//! Experiment orchestration: standard dataset construction, multi-seed
//! strategy comparisons, and aggregated reports.
//!
//! A plan fixes the data distribution, the architecture, the training
//! configurations, and a list of strategy rows. Running it repeats, for each
//! run seed: initialize → supervised pretraining on the labeled split → one
//! strategy-training run per row (each starting from the same pretrained
//! weights) → evaluation on the held-out test split. Rows are summarized by
//! the median over seeds.

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{generate_samples, GeneratorConfig};
use crate::data::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, DEFAULT_FAILURE_FRACTION};
use crate::model::{ArchDescriptor, ModelParams};
use crate::train::{pretrain, train_ssl, Strategy, TrainConfig, TrainData};

/// One comparison row: a strategy plus an optional feature-consistency
/// weight override applied on top of the shared strategy-training config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub label: String,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_consistency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub generator: GeneratorConfig,
    pub arch: ArchDescriptor,
    pub dataset_seed: u64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub pretrain: TrainConfig,
    pub ssl: TrainConfig,
    pub run_seeds: Vec<u64>,
    pub strategies: Vec<StrategySpec>,
}

pub const LABEL_SUPERVISED: &str = "supervised";
pub const LABEL_MEAN_TEACHER: &str = "mean_teacher";
pub const LABEL_MEAN_TEACHER_JS: &str = "mean_teacher_js";

impl ExperimentPlan {
    /// Three-row comparison demonstrating the expected quality trend:
    /// supervised-only < mean teacher < mean teacher + feature consistency.
    pub fn trend() -> Self {
        let generator = GeneratorConfig::default();
        let arch = ArchDescriptor::desk(generator.k);
        let mut pre = TrainConfig::default();
        pre.strategy = Strategy::Supervised;
        pre.epochs = 100;
        let mut ssl = TrainConfig::default();
        ssl.strategy = Strategy::MeanTeacher;
        ssl.epochs = 150;
        // Draw 20 unlabeled images per labeled one each epoch, and perturb
        // the student's copy hard enough that matching the teacher on them
        // is informative; together these keep each strategy run near ten
        // single-core minutes while leaving the teacher still improving at
        // the final epoch.
        ssl.unlabeled_per_labeled = 20;
        ssl.noise_std = 0.3;
        ExperimentPlan {
            generator,
            arch,
            dataset_seed: 42,
            n_labeled: 5,
            n_unlabeled: 500,
            n_validation: 10,
            n_test: 200,
            pretrain: pre,
            ssl,
            run_seeds: vec![1, 2, 3],
            strategies: vec![
                StrategySpec {
                    label: LABEL_SUPERVISED.into(),
                    strategy: Strategy::Supervised,
                    w_consistency: None,
                },
                StrategySpec {
                    label: LABEL_MEAN_TEACHER.into(),
                    strategy: Strategy::MeanTeacher,
                    w_consistency: Some(0.0),
                },
                StrategySpec {
                    label: LABEL_MEAN_TEACHER_JS.into(),
                    strategy: Strategy::MeanTeacher,
                    w_consistency: Some(1.0),
                },
            ],
        }
    }

    /// Trend rows plus the remaining semi-supervised baselines.
    pub fn full_table() -> Self {
        let mut plan = Self::trend();
        plan.strategies.extend([
            StrategySpec {
                label: "pi_model".into(),
                strategy: Strategy::PiModel,
                w_consistency: None,
            },
            StrategySpec {
                label: "pseudo_label".into(),
                strategy: Strategy::PseudoLabel,
                w_consistency: None,
            },
            StrategySpec {
                label: "temporal_ensemble".into(),
                strategy: Strategy::TemporalEnsemble,
                w_consistency: None,
            },
        ]);
        plan
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.arch.validate()?;
        if self.arch.k != self.generator.k {
            return Err(Error::invalid("plan: arch.k must match generator.k"));
        }
        if self.arch.image_w != self.generator.image_w
            || self.arch.image_h != self.generator.image_h
        {
            return Err(Error::invalid("plan: arch image size must match generator image size"));
        }
        if self.n_labeled == 0 {
            return Err(Error::invalid("plan: n_labeled must be >= 1"));
        }
        if self.n_validation == 0 {
            return Err(Error::invalid("plan: n_validation must be >= 1"));
        }
        if self.n_test == 0 {
            return Err(Error::invalid("plan: n_test must be >= 1"));
        }
        if self.run_seeds.is_empty() {
            return Err(Error::invalid("plan: run_seeds must not be empty"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("plan: strategies must not be empty"));
        }
        let mut labels: Vec<&str> = self.strategies.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.strategies.len() {
            return Err(Error::invalid("plan: strategy labels must be unique"));
        }
        if self
            .strategies
            .iter()
            .any(|s| s.strategy.uses_unlabeled() && self.n_unlabeled == 0)
        {
            return Err(Error::invalid(
                "plan: strategies that use unlabeled data require n_unlabeled >= 1",
            ));
        }
        self.pretrain.validate()?;
        self.ssl.validate()?;
        Ok(())
    }
}

/// Build a split dataset: samples are generated in one deterministic
/// sequence and assigned, in order, to labeled → unlabeled → validation →
/// test. Unlabeled samples keep no landmarks.
pub fn build_split_dataset(
    generator: &GeneratorConfig,
    seed: u64,
    n_labeled: usize,
    n_unlabeled: usize,
    n_validation: usize,
    n_test: usize,
) -> Result<Dataset> {
    let total = n_labeled + n_unlabeled + n_validation + n_test;
    let generated = generate_samples(generator, seed, 0, total)?;
    let mut samples = Vec::with_capacity(total);
    for (i, g) in generated.into_iter().enumerate() {
        let (split, keep_landmarks) = if i < n_labeled {
            (Split::Labeled, true)
        } else if i < n_labeled + n_unlabeled {
            (Split::Unlabeled, false)
        } else if i < n_labeled + n_unlabeled + n_validation {
            (Split::Validation, true)
        } else {
            (Split::Test, true)
        };
        samples.push(Sample {
            id: g.id,
            split,
            image: g.image,
            landmarks: keep_landmarks.then_some(g.landmarks),
        });
    }
    let ds = Dataset {
        k: generator.k,
        image_w: generator.image_w,
        image_h: generator.image_h,
        generator_seed: seed,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

/// [`build_split_dataset`] with the plan's generator, seed, and split sizes.
pub fn build_standard_dataset(plan: &ExperimentPlan) -> Result<Dataset> {
    plan.validate()?;
    build_split_dataset(
        &plan.generator,
        plan.dataset_seed,
        plan.n_labeled,
        plan.n_unlabeled,
        plan.n_validation,
        plan.n_test,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub mean_error_px: f64,
    pub failure_rate: f64,
    pub best_epoch: Option<usize>,
    pub best_val_error_px: Option<f64>,
    pub converged: bool,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub label: String,
    pub strategy: Strategy,
    pub seeds: Vec<SeedOutcome>,
    pub median_mean_error_px: f64,
    pub median_failure_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub dataset_seed: u64,
    pub k: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub run_seeds: Vec<u64>,
    /// Test error of each seed's pretrained weights, for reference.
    pub pretrain_mean_error_px: Vec<f64>,
    pub rows: Vec<RowReport>,
}

impl TrendReport {
    pub fn row(&self, label: &str) -> Option<&RowReport> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Plain-text summary table.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "dataset seed {} | {} labeled / {} unlabeled / {} val / {} test | {}x{} px, {} landmarks\n",
            self.dataset_seed,
            self.n_labeled,
            self.n_unlabeled,
            self.n_validation,
            self.n_test,
            self.image_w,
            self.image_h,
            self.k
        ));
        let pre = median(&self.pretrain_mean_error_px);
        out.push_str(&format!(
            "pretrained reference: median test error {pre:.3} px over seeds {:?}\n\n",
            self.run_seeds
        ));
        out.push_str(&format!(
            "{:<20} {:>12} {:>10}  {}\n",
            "strategy", "median px", "fail rate", "per-seed px"
        ));
        for row in &self.rows {
            let per_seed = row
                .seeds
                .iter()
                .map(|s| format!("{:.3}", s.mean_error_px))
                .collect::<Vec<_>>()
                .join(", ");
            out.push_str(&format!(
                "{:<20} {:>12.3} {:>10.3}  [{per_seed}]\n",
                row.label, row.median_mean_error_px, row.median_failure_rate
            ));
        }
        out
    }
}

/// Median of a non-empty slice (mean of the two middle values when even).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("comparable values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fraction by which `value` improves on `baseline` (positive = better).
pub fn relative_improvement(baseline: f64, value: f64) -> f64 {
    assert!(baseline > 0.0, "baseline must be positive");
    (baseline - value) / baseline
}

fn eval_on_test(
    params: &ModelParams,
    ds: &Dataset,
    data: &TrainData,
) -> Result<EvalReport> {
    let test: Vec<(&crate::tensor::Tensor, &crate::graph::LandmarkSet)> = ds
        .split(Split::Test)
        .into_iter()
        .map(|s| {
            s.landmarks
                .as_ref()
                .map(|lm| (&s.image, lm))
                .ok_or_else(|| Error::invalid(format!("test sample {} has no landmarks", s.id)))
        })
        .collect::<Result<_>>()?;
    evaluate(params, &test, &data.mean_shape, &data.topology, DEFAULT_FAILURE_FRACTION)
}

/// Run the full plan on `ds` (normally from [`build_standard_dataset`]).
pub fn run_experiment(plan: &ExperimentPlan, ds: &Dataset) -> Result<TrendReport> {
    plan.validate()?;
    if ds.k != plan.arch.k || ds.image_w != plan.arch.image_w || ds.image_h != plan.arch.image_h {
        return Err(Error::invalid("experiment: dataset does not match the plan architecture"));
    }
    let data = TrainData::from_dataset(ds)?;

    let mut pretrain_errors = Vec::with_capacity(plan.run_seeds.len());
    let mut per_row: Vec<Vec<SeedOutcome>> = vec![Vec::new(); plan.strategies.len()];

    for &seed in &plan.run_seeds {
        info!("seed {seed}: pretraining ({} epochs)", plan.pretrain.epochs);
        let init = ModelParams::init(&plan.arch, seed)?;
        let mut pre_cfg = plan.pretrain.clone();
        pre_cfg.strategy = Strategy::Supervised;
        pre_cfg.seed = seed;
        let pre = pretrain(init, &data, &pre_cfg)?;
        let pre_eval = eval_on_test(&pre.params, ds, &data)?;
        info!("seed {seed}: pretrained test error {:.3} px", pre_eval.mean_error_px);
        pretrain_errors.push(pre_eval.mean_error_px);

        for (ri, spec) in plan.strategies.iter().enumerate() {
            let mut cfg = plan.ssl.clone();
            cfg.strategy = spec.strategy;
            cfg.seed = seed;
            if let Some(w) = spec.w_consistency {
                cfg.loss.w_consistency = w;
            }
            info!("seed {seed}: row '{}' ({} epochs)", spec.label, cfg.epochs);
            let out = train_ssl(pre.params.clone(), &data, &cfg)?;
            let report = eval_on_test(&out.params, ds, &data)?;
            info!(
                "seed {seed}: row '{}' test error {:.3} px (failure rate {:.3})",
                spec.label, report.mean_error_px, report.failure_rate
            );
            per_row[ri].push(SeedOutcome {
                seed,
                mean_error_px: report.mean_error_px,
                failure_rate: report.failure_rate,
                best_epoch: out.best_epoch,
                best_val_error_px: out.best_val_error_px,
                converged: out.converged,
                steps: out.steps,
            });
        }
    }

    let rows = plan
        .strategies
        .iter()
        .zip(per_row)
        .map(|(spec, seeds)| {
            let errs: Vec<f64> = seeds.iter().map(|s| s.mean_error_px).collect();
            let fails: Vec<f64> = seeds.iter().map(|s| s.failure_rate).collect();
            RowReport {
                label: spec.label.clone(),
                strategy: spec.strategy,
                median_mean_error_px: median(&errs),
                median_failure_rate: median(&fails),
                seeds,
            }
        })
        .collect();

    Ok(TrendReport {
        dataset_seed: plan.dataset_seed,
        k: ds.k,
        image_w: ds.image_w,
        image_h: ds.image_h,
        n_labeled: plan.n_labeled,
        n_unlabeled: plan.n_unlabeled,
        n_validation: plan.n_validation,
        n_test: plan.n_test,
        run_seeds: plan.run_seeds.clone(),
        pretrain_mean_error_px: pretrain_errors,
        rows,
    })
}
