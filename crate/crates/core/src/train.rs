//! Training strategies: supervised baseline, the teacher-student scheme with
//! feature-consistency, and three classic semi-supervised baselines.
//!
//! Every run is fully determined by (initial weights, data, config): all
//! randomness flows from `TrainConfig::seed` through fixed derivation
//! streams, per-sample work is parallelized but reduced in slot order, and
//! no wall-clock or thread-dependent state is consulted.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::augment::{add_gaussian_noise, augment_sample, sample_augment_params, AugmentConfig};
use crate::data::splitmix64;
use crate::data::store::{Dataset, Split};
use crate::ema::{ema_update, ema_update_slice};
use crate::error::{Error, Result};
use crate::eval::mean_error_px;
use crate::graph::{compute_mean_shape, GraphTopology, LandmarkSet, MeanShape};
use crate::loss::{supervised_total, unlabeled_total, LossConfig};
use crate::model::{forward, predict, ModelParams, ParamVars, Prediction};
use crate::optim::{AdamConfig, AdamState};
use crate::schedule::{alpha_schedule, build_batch_schedule, default_batch_size, lr_at_epoch, BatchKind};
use crate::autodiff::Tape;
use crate::tensor::Tensor;

/// Validation mean error below this fraction of image width counts as a
/// converged run.
pub const CONVERGENCE_FRACTION: f64 = 0.25;

/// Fixed target-smoothing momentum of the temporal-ensembling baseline.
const TEMPORAL_ENSEMBLE_ALPHA: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Labeled data only.
    Supervised,
    /// EMA teacher provides pseudo landmarks and the feature-consistency
    /// target on unlabeled images.
    MeanTeacher,
    /// One model; its own clean-input prediction (detached) is the target
    /// for a noised-input forward pass.
    PiModel,
    /// Pseudo landmarks precomputed once with the initial weights.
    PseudoLabel,
    /// Per-image pseudo landmarks smoothed across epochs by an EMA.
    TemporalEnsemble,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Supervised,
        Strategy::MeanTeacher,
        Strategy::PiModel,
        Strategy::PseudoLabel,
        Strategy::TemporalEnsemble,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Supervised => "supervised",
            Strategy::MeanTeacher => "mean_teacher",
            Strategy::PiModel => "pi_model",
            Strategy::PseudoLabel => "pseudo_label",
            Strategy::TemporalEnsemble => "temporal_ensemble",
        }
    }

    pub fn uses_unlabeled(&self) -> bool {
        !matches!(self, Strategy::Supervised)
    }

    pub fn has_teacher(&self) -> bool {
        matches!(self, Strategy::MeanTeacher)
    }

    /// Strategies whose consistency signal is landmark-only: the
    /// feature-divergence weight is forced to zero for them.
    pub fn forces_zero_consistency(&self) -> bool {
        matches!(self, Strategy::PiModel | Strategy::PseudoLabel | Strategy::TemporalEnsemble)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    /// Labeled (and unlabeled) batch size; derived from the labeled-set size
    /// when absent.
    pub batch_size: Option<usize>,
    /// Unlabeled batches interleaved after each labeled batch.
    pub unlabeled_per_labeled: usize,
    /// Gaussian input noise applied to the student on consistency steps.
    pub noise_std: f64,
    pub augment_enabled: bool,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::MeanTeacher,
            epochs: 50,
            batch_size: None,
            unlabeled_per_labeled: 100,
            noise_std: 0.1,
            augment_enabled: true,
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("train config: epochs must be >= 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("train config: batch_size must be >= 1"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid("train config: noise_std must be >= 0"));
        }
        self.augment.validate()?;
        self.adam.validate()?;
        self.loss.validate()
    }
}

/// Borrowed views of the dataset splits a training run needs.
pub struct TrainData<'a> {
    pub labeled: Vec<(&'a Tensor, &'a LandmarkSet)>,
    pub unlabeled: Vec<&'a Tensor>,
    pub val: Vec<(&'a Tensor, &'a LandmarkSet)>,
    pub mean_shape: MeanShape,
    pub topology: GraphTopology,
    pub image_w: usize,
    pub image_h: usize,
}

impl<'a> TrainData<'a> {
    /// Standard assembly: mean shape from the labeled landmarks, chain
    /// topology over the dataset's landmark count.
    pub fn from_dataset(ds: &'a Dataset) -> Result<Self> {
        ds.validate()?;
        let mut labeled = Vec::new();
        for s in ds.split(Split::Labeled) {
            let lm = s
                .landmarks
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("labeled sample {} has no landmarks", s.id)))?;
            labeled.push((&s.image, lm));
        }
        if labeled.is_empty() {
            return Err(Error::invalid("dataset has no labeled samples"));
        }
        let mut val = Vec::new();
        for s in ds.split(Split::Validation) {
            let lm = s.landmarks.as_ref().ok_or_else(|| {
                Error::invalid(format!("validation sample {} has no landmarks", s.id))
            })?;
            val.push((&s.image, lm));
        }
        let unlabeled = ds.split(Split::Unlabeled).iter().map(|s| &s.image).collect();
        let sets: Vec<LandmarkSet> = labeled.iter().map(|(_, l)| (*l).clone()).collect();
        Ok(TrainData {
            labeled,
            unlabeled,
            val,
            mean_shape: compute_mean_shape(&sets)?,
            topology: GraphTopology::chain(ds.k)?,
            image_w: ds.image_w,
            image_h: ds.image_h,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub labeled_loss: f64,
    pub unlabeled_loss: Option<f64>,
    pub val_error_px: Option<f64>,
}

pub struct TrainOutcome {
    /// Selected weights: best-validation candidate for strategy runs, final
    /// weights for pretraining.
    pub params: ModelParams,
    /// Final teacher weights, when the strategy keeps one.
    pub teacher: Option<ModelParams>,
    pub final_student: ModelParams,
    pub history: Vec<EpochStats>,
    /// Total optimizer steps taken.
    pub steps: u64,
    pub best_epoch: Option<usize>,
    pub best_val_error_px: Option<f64>,
    pub converged: bool,
}

/// Seed-derivation streams (all chained through SplitMix64).
const STREAM_POOL: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_SAMPLE: u64 = 3;

fn derive2(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

fn derive3(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    splitmix64(derive2(seed, stream, a) ^ b)
}

/// Endless shuffled cycle over unlabeled indices.
struct UnlabeledPool {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl UnlabeledPool {
    fn new(n: usize, seed: u64) -> Self {
        let mut pool =
            UnlabeledPool { order: (0..n).collect(), pos: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        pool.order.shuffle(&mut pool.rng);
        pool
    }

    fn draw(&mut self, count: usize) -> Vec<usize> {
        (0..count)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                let v = self.order[self.pos];
                self.pos += 1;
                v
            })
            .collect()
    }
}

/// Supervised training (labeled split only); returns the final weights.
pub fn pretrain(initial: ModelParams, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(initial, data, cfg, Strategy::Supervised, false)
}

/// Strategy training from (usually pretrained) initial weights; returns the
/// best-validation weights (teacher weights for teacher-bearing strategies).
pub fn train_ssl(initial: ModelParams, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(initial, data, cfg, cfg.strategy, true)
}

fn run(
    initial: ModelParams,
    data: &TrainData,
    cfg: &TrainConfig,
    strategy: Strategy,
    select_best: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.labeled.is_empty() {
        return Err(Error::invalid("training requires labeled samples"));
    }
    if strategy.uses_unlabeled() && data.unlabeled.is_empty() {
        return Err(Error::invalid(format!(
            "strategy {strategy} requires unlabeled samples"
        )));
    }
    if data.mean_shape.k() != initial.desc.k {
        return Err(Error::invalid("mean shape and model landmark counts differ"));
    }

    let loss_cfg = if strategy.forces_zero_consistency() {
        LossConfig { w_consistency: 0.0, ..cfg.loss }
    } else {
        cfg.loss
    };
    let n_labeled = data.labeled.len();
    let batch_size = cfg.batch_size.unwrap_or_else(|| default_batch_size(n_labeled)).min(n_labeled);
    let n_labeled_batches = n_labeled.div_ceil(batch_size);
    let ratio = if strategy.uses_unlabeled() { cfg.unlabeled_per_labeled } else { 0 };
    let schedule = build_batch_schedule(n_labeled_batches, ratio);
    let adj = data.topology.normalized_adjacency();

    let mut student = initial;
    let mut teacher = strategy.has_teacher().then(|| student.clone());
    let mut adam = AdamState::new(&student);
    let mut t: u64 = 0;

    // Pseudo-target state for the self-labeling baselines.
    let mut pseudo_targets: Vec<LandmarkSet> =
        if matches!(strategy, Strategy::PseudoLabel | Strategy::TemporalEnsemble) {
            predict_landmarks(&student, &data.unlabeled, &data.mean_shape, &data.topology)?
        } else {
            Vec::new()
        };

    let mut pool = UnlabeledPool::new(data.unlabeled.len(), derive2(cfg.seed, STREAM_POOL, 0));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg.adam.lr, cfg.adam.lr_decay, cfg.adam.lr_interval, epoch)?;
        let mut order: Vec<usize> = (0..n_labeled).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive2(
            cfg.seed,
            STREAM_SHUFFLE,
            epoch as u64,
        )));
        let labeled_batches: Vec<&[usize]> = order.chunks(batch_size).collect();
        let mut next_labeled = 0usize;
        let (mut l_sum, mut l_cnt, mut u_sum, mut u_cnt) = (0.0f64, 0usize, 0.0f64, 0usize);

        for kind in &schedule {
            let sample_seeds: Vec<u64> =
                (0..batch_size as u64).map(|slot| derive3(cfg.seed, STREAM_SAMPLE, t, slot)).collect();
            let (_, grads) = match kind {
                BatchKind::Labeled => {
                    let idxs = labeled_batches[next_labeled];
                    next_labeled += 1;
                    let out = labeled_batch(&student, data, idxs, &sample_seeds, cfg, &loss_cfg, &adj)?;
                    l_sum += out.0;
                    l_cnt += 1;
                    out
                }
                BatchKind::Unlabeled => {
                    let idxs = pool.draw(batch_size);
                    let out = unlabeled_batch(
                        &student,
                        teacher.as_ref(),
                        strategy,
                        data,
                        &idxs,
                        &pseudo_targets,
                        &sample_seeds,
                        cfg,
                        &loss_cfg,
                        &adj,
                    )?;
                    u_sum += out.0;
                    u_cnt += 1;
                    out
                }
            };
            adam.step(&mut student, &grads, lr, &cfg.adam)?;
            t += 1;
            if let Some(teacher) = teacher.as_mut() {
                let alpha = alpha_schedule(t as i64)?;
                ema_update(teacher, &student, alpha)?;
            }
        }

        if strategy == Strategy::TemporalEnsemble {
            let fresh =
                predict_landmarks(&student, &data.unlabeled, &data.mean_shape, &data.topology)?;
            for (tgt, new) in pseudo_targets.iter_mut().zip(&fresh) {
                let mut flat: Vec<f64> = tgt.points().iter().flatten().copied().collect();
                let new_flat: Vec<f64> = new.points().iter().flatten().copied().collect();
                ema_update_slice(&mut flat, &new_flat, TEMPORAL_ENSEMBLE_ALPHA)?;
                *tgt = LandmarkSet::new(flat.chunks(2).map(|c| [c[0], c[1]]).collect());
            }
        }

        let candidate: &ModelParams = teacher.as_ref().unwrap_or(&student);
        let val_error = if data.val.is_empty() {
            None
        } else {
            Some(mean_error_px(candidate, &data.val, &data.mean_shape, &data.topology)?)
        };
        if select_best {
            if let Some(err) = val_error {
                if best.as_ref().map_or(true, |(_, b, _)| err < *b) {
                    best = Some((epoch, err, candidate.clone()));
                }
            }
        }
        history.push(EpochStats {
            epoch,
            lr,
            labeled_loss: if l_cnt > 0 { l_sum / l_cnt as f64 } else { 0.0 },
            unlabeled_loss: (u_cnt > 0).then(|| u_sum / u_cnt as f64),
            val_error_px: val_error,
        });
    }

    let (best_epoch, best_val_error_px) = match &best {
        Some((e, v, _)) => (Some(*e), Some(*v)),
        None => (None, history.last().and_then(|h| h.val_error_px)),
    };
    let selected = match best {
        Some((_, _, params)) => params,
        None => teacher.clone().unwrap_or_else(|| student.clone()),
    };
    let converged = best_val_error_px
        .map(|e| e < CONVERGENCE_FRACTION * data.image_w as f64)
        .unwrap_or(false);
    Ok(TrainOutcome {
        params: selected,
        teacher,
        final_student: student,
        history,
        steps: t,
        best_epoch,
        best_val_error_px,
        converged,
    })
}

fn predict_landmarks(
    params: &ModelParams,
    images: &[&Tensor],
    mean_shape: &MeanShape,
    topology: &GraphTopology,
) -> Result<Vec<LandmarkSet>> {
    images
        .par_iter()
        .map(|img| predict(params, img, mean_shape, topology).map(|p| p.v_local().clone()))
        .collect()
}

/// Mean of per-sample (loss, gradient) pairs, reduced in slot order.
fn reduce_batch(results: Vec<(f64, Vec<Tensor>)>) -> Result<(f64, Vec<Tensor>)> {
    let n = results.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let inv = 1.0 / n as f64;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("n > 0");
    for (l, g) in iter {
        loss += l;
        for (acc, add) in grads.iter_mut().zip(&g) {
            acc.add_assign(add)?;
        }
    }
    for g in &mut grads {
        for v in g.data_mut() {
            *v *= inv;
        }
    }
    Ok((loss * inv, grads))
}

fn per_sample_supervised(
    params: &ModelParams,
    image: &Tensor,
    gt: &LandmarkSet,
    data: &TrainData,
    loss_cfg: &LossConfig,
    adj: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let pv = ParamVars::from_params(&tape, params, true);
    let fw = forward(&tape, &pv, image, &data.mean_shape, adj)?;
    let gt_var = tape.constant(gt.to_tensor());
    let loss = supervised_total(fw.v_global, fw.v_local(), gt_var, loss_cfg)?;
    let value = loss.value().item()?;
    let grads = loss.backward()?;
    Ok((value, pv.flat.iter().map(|v| grads.wrt(*v)).collect()))
}

fn per_sample_consistency(
    params: &ModelParams,
    target: &Prediction,
    image: &Tensor,
    data: &TrainData,
    loss_cfg: &LossConfig,
    adj: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let pv = ParamVars::from_params(&tape, params, true);
    let fw = forward(&tape, &pv, image, &data.mean_shape, adj)?;
    let pseudo = tape.constant(target.v_local().to_tensor());
    let target_fmap = tape.constant(target.fmap.clone());
    let loss =
        unlabeled_total(fw.v_global, fw.v_local(), pseudo, fw.fmap, target_fmap, loss_cfg)?;
    let value = loss.value().item()?;
    let grads = loss.backward()?;
    Ok((value, pv.flat.iter().map(|v| grads.wrt(*v)).collect()))
}

fn labeled_batch(
    student: &ModelParams,
    data: &TrainData,
    idxs: &[usize],
    sample_seeds: &[u64],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    adj: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    let results: Vec<(f64, Vec<Tensor>)> = idxs
        .par_iter()
        .zip(sample_seeds)
        .map(|(&i, &seed)| {
            let (image, gt) = data.labeled[i];
            if cfg.augment_enabled {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = sample_augment_params(&cfg.augment, gt, &mut rng)?;
                let (img, lm) = augment_sample(image, Some(gt), &a)?;
                let lm = lm.expect("landmarks passed in");
                per_sample_supervised(student, &img, &lm, data, loss_cfg, adj)
            } else {
                per_sample_supervised(student, image, gt, data, loss_cfg, adj)
            }
        })
        .collect::<Result<_>>()?;
    reduce_batch(results)
}

#[allow(clippy::too_many_arguments)]
fn unlabeled_batch(
    student: &ModelParams,
    teacher: Option<&ModelParams>,
    strategy: Strategy,
    data: &TrainData,
    idxs: &[usize],
    pseudo_targets: &[LandmarkSet],
    sample_seeds: &[u64],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    adj: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    let results: Vec<(f64, Vec<Tensor>)> = idxs
        .par_iter()
        .zip(sample_seeds)
        .map(|(&i, &seed)| {
            let image = data.unlabeled[i];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match strategy {
                Strategy::MeanTeacher | Strategy::PiModel => {
                    // The translation bound has no landmarks to consult on
                    // unlabeled images; the mean shape stands in.
                    let aug_img = if cfg.augment_enabled {
                        let a = sample_augment_params(
                            &cfg.augment,
                            data.mean_shape.landmarks(),
                            &mut rng,
                        )?;
                        augment_sample(image, None, &a)?.0
                    } else {
                        image.clone()
                    };
                    let target_params = teacher.unwrap_or(student);
                    let target =
                        predict(target_params, &aug_img, &data.mean_shape, &data.topology)?;
                    let student_input = add_gaussian_noise(&aug_img, cfg.noise_std, &mut rng)?;
                    per_sample_consistency(student, &target, &student_input, data, loss_cfg, adj)
                }
                Strategy::PseudoLabel | Strategy::TemporalEnsemble => {
                    let gt = &pseudo_targets[i];
                    if cfg.augment_enabled {
                        let a = sample_augment_params(&cfg.augment, gt, &mut rng)?;
                        let (img, lm) = augment_sample(image, Some(gt), &a)?;
                        let lm = lm.expect("landmarks passed in");
                        per_sample_supervised(student, &img, &lm, data, loss_cfg, adj)
                    } else {
                        per_sample_supervised(student, image, gt, data, loss_cfg, adj)
                    }
                }
                Strategy::Supervised => Err(Error::invalid(
                    "supervised strategy scheduled an unlabeled batch",
                )),
            }
        })
        .collect::<Result<_>>()?;
    reduce_batch(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_samples, GeneratorConfig};
    use crate::model::ArchDescriptor;

    fn tiny_setup() -> (Dataset, ArchDescriptor) {
        let gcfg = GeneratorConfig { k: 3, image_h: 16, image_w: 16, ..Default::default() };
        let samples = generate_samples(&gcfg, 5, 0, 8).unwrap();
        let splits = [
            Split::Labeled,
            Split::Labeled,
            Split::Labeled,
            Split::Unlabeled,
            Split::Unlabeled,
            Split::Unlabeled,
            Split::Validation,
            Split::Test,
        ];
        let samples = samples
            .into_iter()
            .zip(splits)
            .map(|(g, split)| crate::data::store::Sample {
                id: g.id,
                split,
                image: g.image,
                landmarks: if split == Split::Unlabeled { None } else { Some(g.landmarks) },
            })
            .collect();
        let ds = Dataset { k: 3, image_w: 16, image_h: 16, generator_seed: 5, samples };
        let desc = ArchDescriptor {
            image_h: 16,
            image_w: 16,
            enc_channels: vec![4, 8],
            enc_strides: vec![2, 2],
            gcn_width: 8,
            gcn_depth: 1,
            cascade_len: 1,
            k: 3,
        };
        (ds, desc)
    }

    fn tiny_cfg(strategy: Strategy, epochs: usize) -> TrainConfig {
        TrainConfig {
            strategy,
            epochs,
            batch_size: Some(2),
            unlabeled_per_labeled: 1,
            noise_std: 0.05,
            augment_enabled: false,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn pretrain_decreases_loss_and_is_deterministic() {
        let (ds, desc) = tiny_setup();
        let data = TrainData::from_dataset(&ds).unwrap();
        let cfg = tiny_cfg(Strategy::Supervised, 8);
        let run1 = pretrain(ModelParams::init(&desc, 1).unwrap(), &data, &cfg).unwrap();
        let run2 = pretrain(ModelParams::init(&desc, 1).unwrap(), &data, &cfg).unwrap();
        assert_eq!(run1.params, run2.params);
        assert_eq!(run1.history, run2.history);
        let first = run1.history.first().unwrap().labeled_loss;
        let last = run1.history.last().unwrap().labeled_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        assert_eq!(run1.steps, 8 * 2);
        assert!(run1.teacher.is_none());
    }

    #[test]
    fn all_strategies_run_and_stay_finite() {
        let (ds, desc) = tiny_setup();
        let data = TrainData::from_dataset(&ds).unwrap();
        let init = ModelParams::init(&desc, 2).unwrap();
        for strategy in Strategy::ALL {
            let cfg = tiny_cfg(strategy, 2);
            let out = train_ssl(init.clone(), &data, &cfg)
                .unwrap_or_else(|e| panic!("{strategy} failed: {e}"));
            for t in out.params.tensors() {
                assert!(t.all_finite(), "{strategy} produced non-finite weights");
            }
            assert!(out.best_val_error_px.unwrap().is_finite());
            assert_eq!(out.teacher.is_some(), strategy.has_teacher());
            for h in &out.history {
                assert!(h.labeled_loss.is_finite());
                if strategy.uses_unlabeled() {
                    assert!(h.unlabeled_loss.unwrap().is_finite());
                } else {
                    assert!(h.unlabeled_loss.is_none());
                }
            }
        }
    }

    #[test]
    fn mean_teacher_bitwise_reproducible() {
        let (ds, desc) = tiny_setup();
        let data = TrainData::from_dataset(&ds).unwrap();
        let init = ModelParams::init(&desc, 3).unwrap();
        let cfg = TrainConfig { augment_enabled: true, ..tiny_cfg(Strategy::MeanTeacher, 2) };
        let a = train_ssl(init.clone(), &data, &cfg).unwrap();
        let b = train_ssl(init, &data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.teacher, b.teacher);
        assert_eq!(a.final_student, b.final_student);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn different_seeds_differ() {
        let (ds, desc) = tiny_setup();
        let data = TrainData::from_dataset(&ds).unwrap();
        let init = ModelParams::init(&desc, 3).unwrap();
        let cfg_a = TrainConfig { augment_enabled: true, ..tiny_cfg(Strategy::MeanTeacher, 2) };
        let cfg_b = TrainConfig { seed: 8, ..cfg_a.clone() };
        let a = train_ssl(init.clone(), &data, &cfg_a).unwrap();
        let b = train_ssl(init, &data, &cfg_b).unwrap();
        assert_ne!(a.final_student, b.final_student);
    }

    #[test]
    fn schedule_step_count_matches() {
        let (ds, desc) = tiny_setup();
        let data = TrainData::from_dataset(&ds).unwrap();
        let init = ModelParams::init(&desc, 4).unwrap();
        // 3 labeled, batch 2 -> 2 labeled batches; ratio 1 -> 4 steps/epoch.
        let cfg = tiny_cfg(Strategy::MeanTeacher, 3);
        let out = train_ssl(init, &data, &cfg).unwrap();
        assert_eq!(out.steps, 3 * 4);
    }

    #[test]
    fn ssl_requires_unlabeled_data() {
        let (mut ds, desc) = tiny_setup();
        ds.samples.retain(|s| s.split != Split::Unlabeled);
        let data = TrainData::from_dataset(&ds).unwrap();
        let init = ModelParams::init(&desc, 1).unwrap();
        assert!(train_ssl(init, &data, &tiny_cfg(Strategy::MeanTeacher, 1)).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn pool_cycles_with_reshuffle() {
        let mut pool = UnlabeledPool::new(3, 99);
        let batch = pool.draw(7);
        assert_eq!(batch.len(), 7);
        let mut counts = [0usize; 3];
        for &i in &batch {
            counts[i] += 1;
        }
        // Every index appears at least twice in 7 draws over 3 items.
        assert!(counts.iter().all(|&c| c >= 2));
    }
}
