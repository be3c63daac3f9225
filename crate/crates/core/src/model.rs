//! Cascaded landmark-graph regressor.
//!
//! Forward pass: a small CNN encodes the image into a feature map; vertex
//! features are sampled at the current landmark positions by bilinear
//! interpolation (each concatenated with the vertex's own normalized
//! coordinates); a global GCN pools over vertices and emits a residual
//! affine transform applied to the mean shape; a cascade of local GCNs then
//! emits per-vertex displacements. All residual output heads start at zero,
//! so a freshly initialized model reproduces the mean shape exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{GraphTopology, LandmarkSet, MeanShape};
use crate::kernels::conv_out_dim;
use crate::tensor::Tensor;

/// Immutable architecture description shared by teacher/student copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    pub image_h: usize,
    pub image_w: usize,
    /// Output channels per encoder block.
    pub enc_channels: Vec<usize>,
    /// Stride per encoder block (1 or 2).
    pub enc_strides: Vec<usize>,
    /// Hidden width of every GCN layer.
    pub gcn_width: usize,
    /// GCN layers per stage (global stage and each local stage).
    pub gcn_depth: usize,
    /// Number of local refinement stages.
    pub cascade_len: usize,
    /// Landmark count.
    pub k: usize,
}

impl ArchDescriptor {
    /// Default desk-scale architecture for 64x64 inputs: output stride 4,
    /// 32 feature channels.
    pub fn desk(k: usize) -> Self {
        ArchDescriptor {
            image_h: 64,
            image_w: 64,
            enc_channels: vec![16, 16, 32, 32],
            enc_strides: vec![1, 2, 1, 2],
            gcn_width: 64,
            gcn_depth: 3,
            cascade_len: 3,
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_h < 1 || self.image_w < 1 {
            return Err(Error::invalid("descriptor: image dims must be >= 1"));
        }
        if self.enc_channels.is_empty() || self.enc_channels.len() != self.enc_strides.len() {
            return Err(Error::invalid(
                "descriptor: enc_channels and enc_strides must be non-empty and equal length",
            ));
        }
        if self.enc_channels.iter().any(|&c| c == 0) {
            return Err(Error::invalid("descriptor: zero channel count"));
        }
        if self.enc_strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::invalid("descriptor: strides must be 1 or 2"));
        }
        if self.gcn_width == 0 || self.gcn_depth == 0 || self.cascade_len == 0 || self.k == 0 {
            return Err(Error::invalid("descriptor: widths, depths and k must be >= 1"));
        }
        Ok(())
    }

    /// (channels, height, width) of the encoder output.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let mut h = self.image_h;
        let mut w = self.image_w;
        for &s in &self.enc_strides {
            h = conv_out_dim(h, s);
            w = conv_out_dim(w, s);
        }
        (*self.enc_channels.last().expect("non-empty"), h, w)
    }

    /// Width of a vertex input row: sampled channels plus (x, y).
    pub fn vertex_in_width(&self) -> usize {
        self.feature_shape().0 + 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub weight: Tensor, // [cout, cin, 3, 3]
    pub bias: Tensor,   // [cout]
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayerParams {
    pub w_self: Tensor,  // [fin, fout]
    pub w_neigh: Tensor, // [fin, fout]
    pub bias: Tensor,    // [fout]
}

/// One GCN stage: hidden layers plus a linear output head.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnStack {
    pub layers: Vec<GcnLayerParams>,
    pub head_w: Tensor, // [width, out]
    pub head_b: Tensor, // [out]
}

/// All learnable weights. Tensor traversal order (encoder blocks in order,
/// each weight then bias; global stage layers in order, each w_self, w_neigh,
/// bias, then head_w, head_b; local stages likewise) is part of the
/// checkpoint and optimizer-state contract.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub desc: ArchDescriptor,
    pub encoder: Vec<ConvBlock>,
    pub global: GcnStack,
    pub local: Vec<GcnStack>,
}

impl ModelParams {
    /// He-normal hidden weights, zero biases, zero output heads.
    pub fn init(desc: &ArchDescriptor, seed: u64) -> Result<Self> {
        desc.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |shape: Vec<usize>, fan_in: usize| -> Tensor {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
            Tensor::new(shape, data).expect("sized data")
        };

        let mut encoder = Vec::new();
        let mut cin = 1usize;
        for (&cout, &stride) in desc.enc_channels.iter().zip(&desc.enc_strides) {
            encoder.push(ConvBlock {
                weight: normal(vec![cout, cin, 3, 3], cin * 9),
                bias: Tensor::zeros(vec![cout]),
                stride,
            });
            cin = cout;
        }

        let vin = desc.vertex_in_width();
        let stack = |head_out: usize, normal: &mut dyn FnMut(Vec<usize>, usize) -> Tensor| {
            let mut layers = Vec::new();
            let mut fin = vin;
            for _ in 0..desc.gcn_depth {
                layers.push(GcnLayerParams {
                    w_self: normal(vec![fin, desc.gcn_width], fin),
                    w_neigh: normal(vec![fin, desc.gcn_width], fin),
                    bias: Tensor::zeros(vec![desc.gcn_width]),
                });
                fin = desc.gcn_width;
            }
            GcnStack {
                layers,
                head_w: Tensor::zeros(vec![desc.gcn_width, head_out]),
                head_b: Tensor::zeros(vec![head_out]),
            }
        };

        let global = stack(6, &mut normal);
        let local = (0..desc.cascade_len).map(|_| stack(2, &mut normal)).collect();
        Ok(ModelParams { desc: desc.clone(), encoder, global, local })
    }

    /// All-zero parameters with the descriptor's shapes (a shape skeleton
    /// for deserialization).
    pub fn zeros(desc: &ArchDescriptor) -> Result<Self> {
        desc.validate()?;
        let mut encoder = Vec::new();
        let mut cin = 1usize;
        for (&cout, &stride) in desc.enc_channels.iter().zip(&desc.enc_strides) {
            encoder.push(ConvBlock {
                weight: Tensor::zeros(vec![cout, cin, 3, 3]),
                bias: Tensor::zeros(vec![cout]),
                stride,
            });
            cin = cout;
        }
        let vin = desc.vertex_in_width();
        let stack = |head_out: usize| {
            let mut layers = Vec::new();
            let mut fin = vin;
            for _ in 0..desc.gcn_depth {
                layers.push(GcnLayerParams {
                    w_self: Tensor::zeros(vec![fin, desc.gcn_width]),
                    w_neigh: Tensor::zeros(vec![fin, desc.gcn_width]),
                    bias: Tensor::zeros(vec![desc.gcn_width]),
                });
                fin = desc.gcn_width;
            }
            GcnStack {
                layers,
                head_w: Tensor::zeros(vec![desc.gcn_width, head_out]),
                head_b: Tensor::zeros(vec![head_out]),
            }
        };
        Ok(ModelParams {
            desc: desc.clone(),
            encoder,
            global: stack(6),
            local: (0..desc.cascade_len).map(|_| stack(2)).collect(),
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.encoder {
            out.push(&b.weight);
            out.push(&b.bias);
        }
        for stack in std::iter::once(&self.global).chain(&self.local) {
            for l in &stack.layers {
                out.push(&l.w_self);
                out.push(&l.w_neigh);
                out.push(&l.bias);
            }
            out.push(&stack.head_w);
            out.push(&stack.head_b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.encoder {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        for stack in std::iter::once(&mut self.global).chain(&mut self.local) {
            for l in &mut stack.layers {
                out.push(&mut l.w_self);
                out.push(&mut l.w_neigh);
                out.push(&mut l.bias);
            }
            out.push(&mut stack.head_w);
            out.push(&mut stack.head_b);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

pub struct EncBlockVars<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
    pub stride: usize,
}

pub struct GcnLayerVars<'t> {
    pub w_self: Var<'t>,
    pub w_neigh: Var<'t>,
    pub bias: Var<'t>,
}

pub struct GcnStackVars<'t> {
    pub layers: Vec<GcnLayerVars<'t>>,
    pub head_w: Var<'t>,
    pub head_b: Var<'t>,
}

/// Parameter leaves on one tape, mirroring [`ModelParams`].
pub struct ParamVars<'t> {
    pub desc: ArchDescriptor,
    pub encoder: Vec<EncBlockVars<'t>>,
    pub global: GcnStackVars<'t>,
    pub local: Vec<GcnStackVars<'t>>,
    /// Flat view in [`ModelParams::tensors`] order, for gradient extraction.
    pub flat: Vec<Var<'t>>,
}

impl<'t> ParamVars<'t> {
    pub fn from_params(tape: &'t Tape, params: &ModelParams, requires_grad: bool) -> Self {
        Self::build(tape, params, |_, t| tape.leaf(t.clone(), requires_grad))
    }

    /// As `from_params`, but the tensor at flat position `subst_idx` is
    /// replaced by an existing leaf (used to gradient-check one parameter
    /// tensor while holding the rest constant).
    pub fn from_params_substituting(
        tape: &'t Tape,
        params: &ModelParams,
        subst_idx: usize,
        leaf: Var<'t>,
    ) -> Self {
        Self::build(tape, params, |i, t| if i == subst_idx { leaf } else { tape.constant(t.clone()) })
    }

    fn build(
        tape: &'t Tape,
        params: &ModelParams,
        mut make: impl FnMut(usize, &Tensor) -> Var<'t>,
    ) -> Self {
        let _ = tape;
        let mut flat = Vec::new();
        let mut next = |t: &Tensor, flat: &mut Vec<Var<'t>>| {
            let v = make(flat.len(), t);
            flat.push(v);
            v
        };
        let encoder = params
            .encoder
            .iter()
            .map(|b| EncBlockVars {
                weight: next(&b.weight, &mut flat),
                bias: next(&b.bias, &mut flat),
                stride: b.stride,
            })
            .collect();
        let mut stack = |s: &GcnStack, flat: &mut Vec<Var<'t>>| GcnStackVars {
            layers: s
                .layers
                .iter()
                .map(|l| GcnLayerVars {
                    w_self: next(&l.w_self, flat),
                    w_neigh: next(&l.w_neigh, flat),
                    bias: next(&l.bias, flat),
                })
                .collect(),
            head_w: next(&s.head_w, flat),
            head_b: next(&s.head_b, flat),
        };
        let global = stack(&params.global, &mut flat);
        let local = params.local.iter().map(|s| stack(s, &mut flat)).collect();
        ParamVars { desc: params.desc.clone(), encoder, global, local, flat }
    }
}

/// One graph-convolution layer:
/// h'_i = act(W_self . h_i + W_neigh . mean_{j in N(i)} h_j + b).
pub fn gcn_layer<'t>(
    features: Var<'t>,
    adj: Var<'t>,
    w_self: Var<'t>,
    w_neigh: Var<'t>,
    bias: Var<'t>,
    relu: bool,
) -> Result<Var<'t>> {
    let sf = features.shape();
    let sa = adj.shape();
    if sf.len() != 2 || sa.len() != 2 || sa[0] != sa[1] || sa[0] != sf[0] {
        return Err(Error::invalid(format!(
            "gcn_layer: features {sf:?} incompatible with adjacency {sa:?}"
        )));
    }
    let own = features.matmul(w_self)?;
    let agg = adj.matmul(features)?.matmul(w_neigh)?;
    let h = own.add(agg)?.add_bias_row(bias)?;
    Ok(if relu { h.relu() } else { h })
}

fn gcn_hidden<'t>(mut h: Var<'t>, stack: &GcnStackVars<'t>, adj: Var<'t>) -> Result<Var<'t>> {
    for l in &stack.layers {
        h = gcn_layer(h, adj, l.w_self, l.w_neigh, l.bias, true)?;
    }
    Ok(h)
}

/// Encoder forward: image [1,h,w] -> feature map [c,h',w'].
pub fn encode<'t>(pv: &ParamVars<'t>, image: Var<'t>) -> Result<Var<'t>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 || s[1] != pv.desc.image_h || s[2] != pv.desc.image_w {
        return Err(Error::invalid(format!(
            "encode: image must be [1,{},{}], got {s:?}",
            pv.desc.image_h, pv.desc.image_w
        )));
    }
    let mut x = image;
    for b in &pv.encoder {
        x = x.conv2d(b.weight, b.bias, b.stride)?.relu();
    }
    Ok(x)
}

/// Rows of [k,2] holding (w'-1, h'-1): multiplying normalized vertices by it
/// yields feature-map pixel coordinates.
fn feature_scale(tape: &Tape, k: usize, fh: usize, fw: usize) -> Var<'_> {
    let mut data = Vec::with_capacity(k * 2);
    for _ in 0..k {
        data.push((fw - 1) as f64);
        data.push((fh - 1) as f64);
    }
    tape.constant(Tensor::new(vec![k, 2], data).expect("k*2"))
}

/// Bilinear feature rows at normalized vertex positions: row i holds the
/// feature vector at vertex i. Differentiable w.r.t. both inputs.
pub fn sample_vertex_features<'t>(
    tape: &'t Tape,
    fmap: Var<'t>,
    vertices: Var<'t>,
) -> Result<Var<'t>> {
    let sf = fmap.shape();
    if sf.len() != 3 {
        return Err(Error::invalid(format!("sample_vertex_features: fmap {sf:?} must be [c,h,w]")));
    }
    let sv = vertices.shape();
    if sv.len() != 2 || sv[1] != 2 {
        return Err(Error::invalid(format!(
            "sample_vertex_features: vertices {sv:?} must be [k,2]"
        )));
    }
    let scale = feature_scale(tape, sv[0], sf[1], sf[2]);
    let px = vertices.mul(scale)?;
    fmap.bilinear_sample(px)
}

/// Applies a 6-value affine parameter row [1,6] laid out as
/// (a11, a21, a12, a22, tx, ty) to a [k,2] shape via homogeneous coordinates.
pub fn apply_affine_var<'t>(
    tape: &'t Tape,
    shape: Var<'t>,
    params6: Var<'t>,
) -> Result<Var<'t>> {
    let sv = shape.shape();
    if sv.len() != 2 || sv[1] != 2 {
        return Err(Error::invalid(format!("apply_affine_var: shape {sv:?} must be [k,2]")));
    }
    let ones = tape.constant(Tensor::full(vec![sv[0], 1], 1.0));
    let homog = shape.concat(ones, 1)?;
    let p = params6.reshape(vec![3, 2])?;
    homog.matmul(p)
}

pub struct ForwardVars<'t> {
    pub fmap: Var<'t>,
    pub v_global: Var<'t>,
    pub v_local_steps: Vec<Var<'t>>,
}

impl<'t> ForwardVars<'t> {
    /// Final refined landmark prediction.
    pub fn v_local(&self) -> Var<'t> {
        *self.v_local_steps.last().expect("cascade_len >= 1")
    }
}

/// Full forward pass on the given tape.
pub fn forward<'t>(
    tape: &'t Tape,
    pv: &ParamVars<'t>,
    image: &Tensor,
    mean_shape: &MeanShape,
    adj: &Tensor,
) -> Result<ForwardVars<'t>> {
    if mean_shape.k() != pv.desc.k {
        return Err(Error::invalid(format!(
            "forward: mean shape has {} vertices, descriptor expects {}",
            mean_shape.k(),
            pv.desc.k
        )));
    }
    let image = tape.constant(image.clone());
    let fmap = encode(pv, image)?;
    let adj = tape.constant(adj.clone());

    // Global stage: vertex features at the mean shape -> residual affine.
    let mean_var = tape.constant(mean_shape.landmarks().to_tensor());
    let feats = sample_vertex_features(tape, fmap, mean_var)?;
    let h0 = feats.concat(mean_var, 1)?;
    let h = gcn_hidden(h0, &pv.global, adj)?;
    let pooled = h.mean_rows()?;
    let residual = pooled.matmul(pv.global.head_w)?.add_bias_row(pv.global.head_b)?;
    let identity = tape.constant(
        Tensor::new(vec![1, 6], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).expect("6 elements"),
    );
    let affine6 = residual.add(identity)?;
    let v_global = apply_affine_var(tape, mean_var, affine6)?;

    // Local cascade: per-vertex displacements from features at the current
    // vertex positions.
    let mut v = v_global;
    let mut steps = Vec::with_capacity(pv.desc.cascade_len);
    for stage in &pv.local {
        let feats = sample_vertex_features(tape, fmap, v)?;
        let h0 = feats.concat(v, 1)?;
        let h = gcn_hidden(h0, stage, adj)?;
        let delta = h.matmul(stage.head_w)?.add_bias_row(stage.head_b)?;
        v = v.add(delta)?;
        steps.push(v);
    }
    Ok(ForwardVars { fmap, v_global, v_local_steps: steps })
}

/// Gradient-free forward pass; returns plain tensors.
pub struct Prediction {
    pub fmap: Tensor,
    pub v_global: LandmarkSet,
    pub v_local_steps: Vec<LandmarkSet>,
}

impl Prediction {
    pub fn v_local(&self) -> &LandmarkSet {
        self.v_local_steps.last().expect("cascade_len >= 1")
    }
}

/// Convenience wrapper: runs `forward` on a private tape with constant
/// parameters (no gradients are tracked).
pub fn predict(
    params: &ModelParams,
    image: &Tensor,
    mean_shape: &MeanShape,
    topology: &GraphTopology,
) -> Result<Prediction> {
    let tape = Tape::new();
    let pv = ParamVars::from_params(&tape, params, false);
    let adj = topology.normalized_adjacency();
    let out = forward(&tape, &pv, image, mean_shape, &adj)?;
    Ok(Prediction {
        fmap: out.fmap.value(),
        v_global: LandmarkSet::from_tensor(&out.v_global.value())?,
        v_local_steps: out
            .v_local_steps
            .iter()
            .map(|v| LandmarkSet::from_tensor(&v.value()))
            .collect::<Result<_>>()?,
    })
}

/// Encoder output for a plain image tensor; no gradients are tracked.
pub fn extract_features(params: &ModelParams, image: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let pv = ParamVars::from_params(&tape, params, false);
    let image = tape.constant(image.clone());
    Ok(encode(&pv, image)?.value())
}
