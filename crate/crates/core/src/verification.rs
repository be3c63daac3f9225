//! Numerical verification suites.
//!
//! * A randomized finite-difference gradient check covering every primitive
//!   operation and the composed losses (including a whole-model composition
//!   that differentiates through encoder, sampling, and both GCN stages).
//! * A consistency fixed-point probe: when student and teacher weights
//!   coincide and the student input is unperturbed, the unlabeled objective
//!   sits at an exact stationary point and every parameter gradient must be
//!   exactly zero in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, GradCheckReport};
use crate::graph::{GraphTopology, LandmarkSet, MeanShape};
use crate::loss::{
    global_loss, js_from_channel_probs, js_loss, local_loss, supervised_total, unlabeled_total,
    LossConfig,
};
use crate::model::{forward, predict, ArchDescriptor, ModelParams, ParamVars};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub instances: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSuite {
    pub seed: u64,
    pub eps: f64,
    pub entries: Vec<SuiteEntry>,
}

impl GradcheckSuite {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn total_checked(&self) -> usize {
        self.entries.iter().map(|e| e.checked).sum()
    }

    pub fn total_skipped(&self) -> usize {
        self.entries.iter().map(|e| e.skipped).sum()
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= tol && e.checked > 0)
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("sized data")
}

/// Scalarize with a random weighting so upstream gradients are non-uniform.
fn weighted_mean<'t>(tape: &'t Tape, v: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    v.mul(tape.constant(w.clone()))?.mean()
}

type CaseFn = Box<dyn FnMut(&mut ChaCha8Rng, f64) -> Result<GradCheckReport>>;

fn aggregate(
    name: &str,
    instances: usize,
    rng: &mut ChaCha8Rng,
    eps: f64,
    case: &mut CaseFn,
) -> Result<SuiteEntry> {
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut max_rel_err = 0.0f64;
    for _ in 0..instances {
        let r = case(rng, eps)?;
        checked += r.checked;
        skipped += r.skipped;
        max_rel_err = max_rel_err.max(r.max_rel_err);
    }
    Ok(SuiteEntry { name: name.to_string(), instances, checked, skipped, max_rel_err })
}

fn model_fixture(rng: &mut ChaCha8Rng) -> (ModelParams, Tensor, LandmarkSet, MeanShape, Tensor) {
    let desc = ArchDescriptor {
        image_h: 12,
        image_w: 12,
        enc_channels: vec![2, 4],
        enc_strides: vec![2, 2],
        gcn_width: 6,
        gcn_depth: 1,
        cascade_len: 1,
        k: 3,
    };
    let mut params = ModelParams::init(&desc, rng.random()).unwrap();
    // Randomize everything (heads included) so all gradient paths are live.
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    let image = rand_tensor(rng, vec![1, 12, 12], 0.0, 1.0);
    let gt = LandmarkSet::new(vec![
        [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)],
        [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)],
        [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)],
    ]);
    let mean_shape = MeanShape(LandmarkSet::new(vec![[0.3, 0.5], [0.5, 0.5], [0.7, 0.5]]));
    let adj = GraphTopology::chain(3).unwrap().normalized_adjacency();
    (params, image, gt, mean_shape, adj)
}

/// Run the full randomized gradient-check suite.
pub fn run_gradcheck_suite(seed: u64, instances: usize, eps: f64) -> Result<GradcheckSuite> {
    if instances == 0 {
        return Err(Error::invalid("gradcheck suite: instances must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();

    let mut cases: Vec<(&'static str, CaseFn)> = Vec::new();

    cases.push((
        "add",
        Box::new(|rng, eps| {
            let c = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            let w = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            let x = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            finite_diff_check(
                |tape, v| weighted_mean(tape, v.add(tape.constant(c.clone()))?, &w),
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "sub_lhs",
        Box::new(|rng, eps| {
            let c = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            let w = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            let x = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            finite_diff_check(
                |tape, v| weighted_mean(tape, v.sub(tape.constant(c.clone()))?, &w),
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "sub_rhs",
        Box::new(|rng, eps| {
            let c = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            let w = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            let x = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            finite_diff_check(
                |tape, v| weighted_mean(tape, tape.constant(c.clone()).sub(v)?, &w),
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "mul",
        Box::new(|rng, eps| {
            let c = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            let w = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            let x = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            finite_diff_check(
                |tape, v| weighted_mean(tape, v.mul(tape.constant(c.clone()))?, &w),
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "add_scalar",
        Box::new(|rng, eps| {
            let s: f64 = rng.random_range(-2.0..2.0);
            let w = rand_tensor(rng, vec![3, 2], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 2], -1.0, 1.0);
            finite_diff_check(|tape, v| weighted_mean(tape, v.add_scalar(s), &w), &x, eps)
        }),
    ));
    cases.push((
        "mul_scalar",
        Box::new(|rng, eps| {
            let s: f64 = rng.random_range(-2.0..2.0);
            let w = rand_tensor(rng, vec![3, 2], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 2], -1.0, 1.0);
            finite_diff_check(|tape, v| weighted_mean(tape, v.mul_scalar(s), &w), &x, eps)
        }),
    ));
    cases.push((
        "matmul_lhs",
        Box::new(|rng, eps| {
            let c = rand_tensor(rng, vec![3, 4], -1.0, 1.0);
            let w = rand_tensor(rng, vec![2, 4], -1.0, 1.0);
            let x = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            finite_diff_check(
                |tape, v| weighted_mean(tape, v.matmul(tape.constant(c.clone()))?, &w),
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "matmul_rhs",
        Box::new(|rng, eps| {
            let c = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            let w = rand_tensor(rng, vec![2, 4], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 4], -1.0, 1.0);
            finite_diff_check(
                |tape, v| weighted_mean(tape, tape.constant(c.clone()).matmul(v)?, &w),
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "add_bias_row_input",
        Box::new(|rng, eps| {
            let b = rand_tensor(rng, vec![4], -1.0, 1.0);
            let w = rand_tensor(rng, vec![3, 4], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 4], -1.0, 1.0);
            finite_diff_check(
                |tape, v| weighted_mean(tape, v.add_bias_row(tape.constant(b.clone()))?, &w),
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "add_bias_row_bias",
        Box::new(|rng, eps| {
            let input = rand_tensor(rng, vec![3, 4], -1.0, 1.0);
            let w = rand_tensor(rng, vec![3, 4], -1.0, 1.0);
            let x = rand_tensor(rng, vec![4], -1.0, 1.0);
            finite_diff_check(
                |tape, v| weighted_mean(tape, tape.constant(input.clone()).add_bias_row(v)?, &w),
                &x,
                eps,
            )
        }),
    ));
    for (name, stride) in [("conv2d_input_s1", 1usize), ("conv2d_input_s2", 2usize)] {
        cases.push((
            name,
            Box::new(move |rng, eps| {
                let wt = rand_tensor(rng, vec![3, 2, 3, 3], -0.5, 0.5);
                let b = rand_tensor(rng, vec![3], -0.5, 0.5);
                let out_d = if stride == 1 { 5 } else { 3 };
                let w = rand_tensor(rng, vec![3, out_d, out_d], -1.0, 1.0);
                let x = rand_tensor(rng, vec![2, 5, 5], -1.0, 1.0);
                finite_diff_check(
                    |tape, v| {
                        let out =
                            v.conv2d(tape.constant(wt.clone()), tape.constant(b.clone()), stride)?;
                        weighted_mean(tape, out, &w)
                    },
                    &x,
                    eps,
                )
            }),
        ));
    }
    cases.push((
        "conv2d_weight",
        Box::new(|rng, eps| {
            let input = rand_tensor(rng, vec![2, 5, 5], -1.0, 1.0);
            let b = rand_tensor(rng, vec![3], -0.5, 0.5);
            let w = rand_tensor(rng, vec![3, 5, 5], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 2, 3, 3], -0.5, 0.5);
            finite_diff_check(
                |tape, v| {
                    let out =
                        tape.constant(input.clone()).conv2d(v, tape.constant(b.clone()), 1)?;
                    weighted_mean(tape, out, &w)
                },
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "conv2d_bias",
        Box::new(|rng, eps| {
            let input = rand_tensor(rng, vec![2, 5, 5], -1.0, 1.0);
            let wt = rand_tensor(rng, vec![3, 2, 3, 3], -0.5, 0.5);
            let w = rand_tensor(rng, vec![3, 5, 5], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3], -0.5, 0.5);
            finite_diff_check(
                |tape, v| {
                    let out = tape.constant(input.clone()).conv2d(tape.constant(wt.clone()), v, 1)?;
                    weighted_mean(tape, out, &w)
                },
                &x,
                eps,
            )
        }),
    ));
    for (name, f) in [
        ("relu", 0usize),
        ("hinge", 1usize),
        ("tanh", 2usize),
        ("abs", 3usize),
    ] {
        cases.push((
            name,
            Box::new(move |rng, eps| {
                let w = rand_tensor(rng, vec![3, 3], -1.0, 1.0);
                let x = rand_tensor(rng, vec![3, 3], -1.5, 1.5);
                finite_diff_check(
                    |tape, v| {
                        let y = match f {
                            0 => v.relu(),
                            1 => v.hinge(),
                            2 => v.tanh(),
                            _ => v.abs(),
                        };
                        weighted_mean(tape, y, &w)
                    },
                    &x,
                    eps,
                )
            }),
        ));
    }
    cases.push((
        "log",
        Box::new(|rng, eps| {
            let w = rand_tensor(rng, vec![3, 3], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 3], 0.2, 3.0);
            finite_diff_check(|tape, v| weighted_mean(tape, v.log(), &w), &x, eps)
        }),
    ));
    cases.push((
        "mean",
        Box::new(|rng, eps| {
            let x = rand_tensor(rng, vec![4, 3], -2.0, 2.0);
            finite_diff_check(|_, v| v.mean(), &x, eps)
        }),
    ));
    cases.push((
        "mean_rows",
        Box::new(|rng, eps| {
            let w = rand_tensor(rng, vec![1, 4], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 4], -2.0, 2.0);
            finite_diff_check(|tape, v| weighted_mean(tape, v.mean_rows()?, &w), &x, eps)
        }),
    ));
    for (name, axis, shape) in [
        ("softmax_axis0", 0usize, vec![3usize, 4]),
        ("softmax_axis1", 1, vec![3, 4]),
        ("softmax_channels_3d", 0, vec![3, 2, 2]),
    ] {
        cases.push((
            name,
            Box::new(move |rng, eps| {
                let w = rand_tensor(rng, shape.clone(), -1.0, 1.0);
                let x = rand_tensor(rng, shape.clone(), -2.0, 2.0);
                finite_diff_check(
                    |tape, v| weighted_mean(tape, v.channel_softmax(axis)?, &w),
                    &x,
                    eps,
                )
            }),
        ));
    }
    cases.push((
        "bilinear_fmap",
        Box::new(|rng, eps| {
            let points = rand_tensor(rng, vec![3, 2], -0.5, 3.5);
            let w = rand_tensor(rng, vec![3, 2], -1.0, 1.0);
            let x = rand_tensor(rng, vec![2, 4, 4], -1.0, 1.0);
            finite_diff_check(
                |tape, v| {
                    weighted_mean(tape, v.bilinear_sample(tape.constant(points.clone()))?, &w)
                },
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "bilinear_points",
        Box::new(|rng, eps| {
            let fmap = rand_tensor(rng, vec![2, 4, 4], -1.0, 1.0);
            let w = rand_tensor(rng, vec![3, 2], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 2], -0.5, 3.5);
            finite_diff_check(
                |tape, v| {
                    weighted_mean(tape, tape.constant(fmap.clone()).bilinear_sample(v)?, &w)
                },
                &x,
                eps,
            )
        }),
    ));
    for (name, axis) in [("concat_axis0", 0usize), ("concat_axis1", 1usize)] {
        cases.push((
            name,
            Box::new(move |rng, eps| {
                let other = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
                let out_shape = if axis == 0 { vec![4, 3] } else { vec![2, 6] };
                let w = rand_tensor(rng, out_shape, -1.0, 1.0);
                let x = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
                finite_diff_check(
                    |tape, v| weighted_mean(tape, v.concat(tape.constant(other.clone()), axis)?, &w),
                    &x,
                    eps,
                )
            }),
        ));
    }
    cases.push((
        "reshape",
        Box::new(|rng, eps| {
            let w = rand_tensor(rng, vec![6], -1.0, 1.0);
            let x = rand_tensor(rng, vec![2, 3], -1.0, 1.0);
            finite_diff_check(
                |tape, v| weighted_mean(tape, v.reshape(vec![6])?, &w),
                &x,
                eps,
            )
        }),
    ));

    // Composed losses.
    cases.push((
        "global_loss",
        Box::new(|rng, eps| {
            let gt = rand_tensor(rng, vec![4, 2], 0.2, 0.8);
            let x = rand_tensor(rng, vec![4, 2], 0.0, 1.0);
            finite_diff_check(
                |tape, v| global_loss(v, tape.constant(gt.clone()), 0.01),
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "local_loss",
        Box::new(|rng, eps| {
            let gt = rand_tensor(rng, vec![4, 2], 0.2, 0.8);
            let x = rand_tensor(rng, vec![4, 2], 0.0, 1.0);
            finite_diff_check(|tape, v| local_loss(v, tape.constant(gt.clone())), &x, eps)
        }),
    ));
    cases.push((
        "js_loss_student_fmap",
        Box::new(|rng, eps| {
            let target = rand_tensor(rng, vec![3, 2, 2], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 2, 2], -1.0, 1.0);
            finite_diff_check(
                |tape, v| js_loss(v, tape.constant(target.clone()), 1e-8),
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "js_divergence_probs",
        Box::new(|rng, eps| {
            let q_logits = rand_tensor(rng, vec![3, 2, 2], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 2, 2], -1.5, 1.5);
            finite_diff_check(
                |tape, v| {
                    let p = v.channel_softmax(0)?;
                    let q = tape.constant(q_logits.clone()).channel_softmax(0)?;
                    js_from_channel_probs(p, q, 1e-8)
                },
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "supervised_total",
        Box::new(|rng, eps| {
            let gt = rand_tensor(rng, vec![4, 2], 0.2, 0.8);
            let x = rand_tensor(rng, vec![4, 2], 0.0, 1.0);
            let cfg = LossConfig::default();
            finite_diff_check(
                |tape, v| {
                    let local = v.mul_scalar(1.1).add_scalar(-0.02);
                    supervised_total(v, local, tape.constant(gt.clone()), &cfg)
                },
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "unlabeled_total_fmap",
        Box::new(|rng, eps| {
            let pseudo = rand_tensor(rng, vec![3, 2], 0.2, 0.8);
            let pred = rand_tensor(rng, vec![3, 2], 0.0, 1.0);
            let target_fmap = rand_tensor(rng, vec![2, 3, 3], -1.0, 1.0);
            let x = rand_tensor(rng, vec![2, 3, 3], -1.0, 1.0);
            let cfg = LossConfig::default();
            finite_diff_check(
                |tape, v| {
                    let vg = tape.constant(pred.clone());
                    unlabeled_total(
                        vg,
                        vg,
                        tape.constant(pseudo.clone()),
                        v,
                        tape.constant(target_fmap.clone()),
                        &cfg,
                    )
                },
                &x,
                eps,
            )
        }),
    ));
    cases.push((
        "unlabeled_total_landmarks",
        Box::new(|rng, eps| {
            let pseudo = rand_tensor(rng, vec![3, 2], 0.2, 0.8);
            let fmap_s = rand_tensor(rng, vec![2, 3, 3], -1.0, 1.0);
            let fmap_t = rand_tensor(rng, vec![2, 3, 3], -1.0, 1.0);
            let x = rand_tensor(rng, vec![3, 2], 0.0, 1.0);
            let cfg = LossConfig::default();
            finite_diff_check(
                |tape, v| {
                    unlabeled_total(
                        v,
                        v.mul_scalar(0.95),
                        tape.constant(pseudo.clone()),
                        tape.constant(fmap_s.clone()),
                        tape.constant(fmap_t.clone()),
                        &cfg,
                    )
                },
                &x,
                eps,
            )
        }),
    ));

    for (name, mut case) in cases {
        entries.push(aggregate(name, instances, &mut rng, eps, &mut case)?);
    }

    // Whole-model composition: loss wrt a randomly chosen parameter tensor.
    let model_instances = instances.min(8).max(1);
    let mut model_case: CaseFn = Box::new(|rng, eps| {
        let (params, image, gt, mean_shape, adj) = model_fixture(rng);
        let n = params.tensors().len();
        let idx = rng.random_range(0..n);
        let x = params.tensors()[idx].clone();
        let cfg = LossConfig::default();
        finite_diff_check(
            |tape, leaf| {
                let pv = ParamVars::from_params_substituting(tape, &params, idx, leaf);
                let fw = forward(tape, &pv, &image, &mean_shape, &adj)?;
                supervised_total(fw.v_global, fw.v_local(), tape.constant(gt.to_tensor()), &cfg)
            },
            &x,
            eps,
        )
    });
    entries.push(aggregate("model_supervised_loss", model_instances, &mut rng, eps, &mut model_case)?);

    Ok(GradcheckSuite { seed, eps, entries })
}

/// Result of probing the consistency objective at a self-consistent point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointProbe {
    /// Largest |gradient| over every model parameter and probed image.
    pub max_abs_grad: f64,
    /// Largest |loss value| over the probed images.
    pub max_abs_loss: f64,
}

/// Probe the unlabeled objective when the target is produced by the same
/// weights on the same images (teacher == student, no input noise).
///
/// When the model's refinement displacements stay within the hinge margin —
/// exactly true for freshly initialized weights, whose zero refinement heads
/// make the coarse and refined outputs coincide — both the loss and every
/// parameter gradient are exactly 0.0: the landmark terms sit at the hinge's
/// flat side / the absolute value's zero (subgradient 0), and the divergence
/// term's gradient cancels bitwise at equal distributions.
pub fn consistency_fixed_point(
    params: &ModelParams,
    images: &[&Tensor],
    mean_shape: &MeanShape,
    topology: &GraphTopology,
    loss_cfg: &LossConfig,
) -> Result<FixedPointProbe> {
    let adj = topology.normalized_adjacency();
    let mut probe = FixedPointProbe { max_abs_grad: 0.0, max_abs_loss: 0.0 };
    for image in images {
        let target = predict(params, image, mean_shape, topology)?;
        let tape = Tape::new();
        let pv = ParamVars::from_params(&tape, params, true);
        let fw = forward(&tape, &pv, image, mean_shape, &adj)?;
        let loss = unlabeled_total(
            fw.v_global,
            fw.v_local(),
            tape.constant(target.v_local().to_tensor()),
            fw.fmap,
            tape.constant(target.fmap.clone()),
            loss_cfg,
        )?;
        probe.max_abs_loss = probe.max_abs_loss.max(loss.value().item()?.abs());
        let grads = loss.backward()?;
        for v in &pv.flat {
            for &g in grads.wrt(*v).data() {
                probe.max_abs_grad = probe.max_abs_grad.max(g.abs());
            }
        }
    }
    Ok(probe)
}
