//! Reverse-mode differentiation on a per-step tape.
//!
//! A [`Tape`] owns an append-only list of nodes; every operation runs its
//! forward pass eagerly and records the inputs it needs for the reverse
//! sweep. Node ids grow monotonically, so walking ids in reverse is a valid
//! reverse topological order. A tape is single-threaded by construction
//! (interior mutability via `RefCell`); independent tapes may live on
//! separate threads.
//!
//! When a tape is created with [`Tape::with_trace`], piecewise ops (relu,
//! abs, bilinear cells and clamps) append branch signatures to a trace
//! vector. Two evaluations with equal traces took identical branches, which
//! is how the finite-difference checker detects kink crossings.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    MatMul(usize, usize),
    AddBiasRow(usize, usize),
    Conv2d { input: usize, weight: usize, bias: usize, stride: usize },
    Relu(usize),
    Tanh(usize),
    Abs(usize),
    Log(usize),
    Mean(usize),
    MeanRows(usize),
    Softmax { input: usize, axis: usize },
    Bilinear { fmap: usize, points: usize },
    Concat { a: usize, b: usize, axis: usize },
    Reshape(usize),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    trace: RefCell<Option<Vec<i32>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), trace: RefCell::new(None) }
    }

    /// A tape that records branch signatures during forward passes.
    pub fn with_trace() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), trace: RefCell::new(Some(Vec::new())) }
    }

    /// Branch signature recorded since construction (empty when tracing is off).
    pub fn take_trace(&self) -> Vec<i32> {
        self.trace.borrow_mut().take().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// New grad-tracked or constant input node.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let id = self.push(Node { value, requires_grad, op: Op::Leaf });
        Var { tape: self, id }
    }

    /// Constant input (never receives gradient).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn trace_push(&self, values: impl IntoIterator<Item = i32>) {
        if let Some(t) = self.trace.borrow_mut().as_mut() {
            t.extend(values);
        }
    }

    fn tracing(&self) -> bool {
        self.trace.borrow().is_some()
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

/// Handle to a tape node. Copyable; all arithmetic goes through methods that
/// append new nodes to the owning tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Per-leaf gradient buffers from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when no path reached it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes[v.id].clone()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, |t| t.clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// Same value as a fresh constant leaf: gradients never flow past it.
    pub fn detach(self) -> Var<'t> {
        let v = self.value();
        self.tape.constant(v)
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::invalid("operands come from different tapes"))
        }
    }

    fn unary(
        self,
        value: Tensor,
        op: impl FnOnce(usize) -> Op,
    ) -> Var<'t> {
        let requires_grad = self.requires_grad();
        let id = self.tape.push(Node { value, requires_grad, op: op(self.id) });
        Var { tape: self.tape, id }
    }

    fn binary(
        self,
        other: Var<'t>,
        value: Tensor,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Var<'t> {
        let requires_grad = self.requires_grad() || other.requires_grad();
        let id = self.tape.push(Node { value, requires_grad, op: op(self.id, other.id) });
        Var { tape: self.tape, id }
    }

    fn elementwise_pair(self, other: Var<'t>, name: &str) -> Result<()> {
        self.same_tape(&other)?;
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(Error::invalid(format!("{name}: shape mismatch {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise_pair(other, "add")?;
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| {
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                Tensor::new(a.shape().to_vec(), data).expect("same shape")
            })
        });
        Ok(self.binary(other, value, Op::Add))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise_pair(other, "sub")?;
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| {
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
                Tensor::new(a.shape().to_vec(), data).expect("same shape")
            })
        });
        Ok(self.binary(other, value, Op::Sub))
    }

    /// Elementwise product (no broadcasting).
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise_pair(other, "mul")?;
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| {
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
                Tensor::new(a.shape().to_vec(), data).expect("same shape")
            })
        });
        Ok(self.binary(other, value, Op::Mul))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(|v| v + c));
        self.unary(value, Op::AddScalar)
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(|v| v * c));
        self.unary(value, |i| Op::MulScalar(i, c))
    }

    /// [m,k] @ [k,n] -> [m,n]
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::invalid(format!("matmul: incompatible shapes {sa:?} @ {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| {
                Tensor::new(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))
                    .expect("matmul shape")
            })
        });
        Ok(self.binary(other, value, Op::MatMul))
    }

    /// Row-broadcast bias: [r,c] + bias with c elements.
    pub fn add_bias_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias)?;
        let sa = self.shape();
        let sb = bias.shape();
        let c = *sa.last().ok_or_else(|| Error::invalid("add_bias_row: scalar input"))?;
        let blen: usize = sb.iter().product();
        if sa.len() != 2 || blen != c {
            return Err(Error::invalid(format!(
                "add_bias_row: input {sa:?} needs bias of {c} elements, got {sb:?}"
            )));
        }
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(bias.id, |b| {
                let mut data = a.data().to_vec();
                for row in data.chunks_mut(c) {
                    for (v, bv) in row.iter_mut().zip(b.data()) {
                        *v += bv;
                    }
                }
                Tensor::new(sa.clone(), data).expect("bias shape")
            })
        });
        Ok(self.binary(bias, value, |a, b| Op::AddBiasRow(a, b)))
    }

    /// 3x3 convolution, zero padding 1, stride 1 or 2, fused bias.
    /// self [cin,h,w], weight [cout,cin,3,3], bias [cout] -> [cout,ho,wo]
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize) -> Result<Var<'t>> {
        self.same_tape(&weight)?;
        self.same_tape(&bias)?;
        if stride != 1 && stride != 2 {
            return Err(Error::invalid(format!("conv2d: stride must be 1 or 2, got {stride}")));
        }
        let si = self.shape();
        let sw = weight.shape();
        let sb = bias.shape();
        if si.len() != 3 || sw.len() != 4 || sw[2] != 3 || sw[3] != 3 || sw[1] != si[0] {
            return Err(Error::invalid(format!(
                "conv2d: input {si:?} incompatible with weight {sw:?}"
            )));
        }
        if si[1] < 1 || si[2] < 1 {
            return Err(Error::invalid("conv2d: empty spatial dims"));
        }
        if sb != vec![sw[0]] {
            return Err(Error::invalid(format!(
                "conv2d: bias {sb:?} must be [{}]",
                sw[0]
            )));
        }
        let (cin, h, w) = (si[0], si[1], si[2]);
        let cout = sw[0];
        let ho = kernels::conv_out_dim(h, stride);
        let wo = kernels::conv_out_dim(w, stride);
        let value = self.tape.with_value(self.id, |inp| {
            self.tape.with_value(weight.id, |wt| {
                self.tape.with_value(bias.id, |bs| {
                    Tensor::new(
                        vec![cout, ho, wo],
                        kernels::conv2d_forward(
                            inp.data(),
                            cin,
                            h,
                            w,
                            wt.data(),
                            bs.data(),
                            cout,
                            stride,
                        ),
                    )
                    .expect("conv shape")
                })
            })
        });
        let requires_grad =
            self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        let id = self.tape.push(Node {
            value,
            requires_grad,
            op: Op::Conv2d { input: self.id, weight: weight.id, bias: bias.id, stride },
        });
        Ok(Var { tape: self.tape, id })
    }

    pub fn relu(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(|v| v.max(0.0)));
        if self.tape.tracing() {
            let sig: Vec<i32> =
                self.tape.with_value(self.id, |a| a.data().iter().map(|&v| (v > 0.0) as i32).collect());
            self.tape.trace_push(sig);
        }
        self.unary(value, Op::Relu)
    }

    /// max(x, 0); identical to relu, named for hinge-style losses.
    pub fn hinge(self) -> Var<'t> {
        self.relu()
    }

    pub fn tanh(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(f64::tanh));
        self.unary(value, Op::Tanh)
    }

    pub fn abs(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(f64::abs));
        if self.tape.tracing() {
            let sig: Vec<i32> = self.tape.with_value(self.id, |a| {
                a.data()
                    .iter()
                    .map(|&v| {
                        if v > 0.0 {
                            1
                        } else if v < 0.0 {
                            -1
                        } else {
                            0
                        }
                    })
                    .collect()
            });
            self.tape.trace_push(sig);
        }
        self.unary(value, Op::Abs)
    }

    /// Natural log; caller guarantees positive inputs.
    pub fn log(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(f64::ln));
        self.unary(value, Op::Log)
    }

    /// Mean over all elements -> [1].
    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.tape.with_value(self.id, |a| a.len());
        if n == 0 {
            return Err(Error::invalid("mean: empty tensor"));
        }
        let value = self.tape.with_value(self.id, |a| {
            Tensor::scalar(a.data().iter().sum::<f64>() / n as f64)
        });
        Ok(self.unary(value, Op::Mean))
    }

    /// Column means of a [r,c] matrix -> [1,c].
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::invalid(format!("mean_rows: need non-empty [r,c], got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let value = self.tape.with_value(self.id, |a| {
            let mut out = vec![0.0; c];
            for row in a.data().chunks(c) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o /= r as f64;
            }
            Tensor::new(vec![1, c], out).expect("mean_rows shape")
        });
        Ok(self.unary(value, Op::MeanRows))
    }

    /// Softmax along `axis`; each slice sums to 1.
    pub fn channel_softmax(self, axis: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if self.tape.with_value(self.id, |a| a.is_empty()) {
            return Err(Error::invalid("channel_softmax: empty tensor"));
        }
        if axis >= s.len() {
            return Err(Error::invalid(format!(
                "channel_softmax: axis {axis} out of range for shape {s:?}"
            )));
        }
        let value = self.tape.with_value(self.id, |a| {
            Tensor::new(s.clone(), kernels::softmax_forward(a.data(), a.shape(), axis))
                .expect("softmax shape")
        });
        Ok(self.unary(value, |i| Op::Softmax { input: i, axis }))
    }

    /// self is a feature map [c,h,w]; points [k,2] in pixel coordinates.
    /// Returns [k,c]. Points are clamped into the grid; clamping blocks the
    /// coordinate gradient of the clamped component.
    pub fn bilinear_sample(self, points: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&points)?;
        let sf = self.shape();
        let sp = points.shape();
        if sf.len() != 3 {
            return Err(Error::invalid(format!("bilinear_sample: fmap must be [c,h,w], got {sf:?}")));
        }
        if sf[1] < 1 || sf[2] < 1 {
            return Err(Error::invalid("bilinear_sample: feature map has empty spatial dims"));
        }
        if sp.len() != 2 || sp[1] != 2 {
            return Err(Error::invalid(format!("bilinear_sample: points must be [k,2], got {sp:?}")));
        }
        let (c, h, w) = (sf[0], sf[1], sf[2]);
        let k = sp[0];
        let value = self.tape.with_value(self.id, |fm| {
            self.tape.with_value(points.id, |pt| {
                Tensor::new(vec![k, c], kernels::bilinear_forward(fm.data(), c, h, w, pt.data(), k))
                    .expect("bilinear shape")
            })
        });
        if self.tape.tracing() {
            let sig: Vec<i32> = self.tape.with_value(points.id, |pt| {
                let mut sig = Vec::with_capacity(k * 4);
                for p in 0..k {
                    let cell = kernels::bilinear_cell(pt.data()[2 * p], pt.data()[2 * p + 1], h, w);
                    sig.extend([
                        cell.x0 as i32,
                        cell.y0 as i32,
                        cell.clamped_x as i32,
                        cell.clamped_y as i32,
                    ]);
                }
                sig
            });
            self.tape.trace_push(sig);
        }
        Ok(self.binary(points, value, |f, p| Op::Bilinear { fmap: f, points: p }))
    }

    /// Concatenate along `axis`; all other dims must match.
    pub fn concat(self, other: Var<'t>, axis: usize) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let sa = self.shape();
        let sb = other.shape();
        if sa.len() != sb.len() || axis >= sa.len() {
            return Err(Error::invalid(format!(
                "concat: incompatible ranks or axis {axis} for {sa:?} and {sb:?}"
            )));
        }
        for d in 0..sa.len() {
            if d != axis && sa[d] != sb[d] {
                return Err(Error::invalid(format!(
                    "concat: dim {d} differs: {sa:?} vs {sb:?}"
                )));
            }
        }
        let mut out_shape = sa.clone();
        out_shape[axis] += sb[axis];
        let (outer, _, inner) = kernels::axis_groups(&sa, axis);
        let a_block = sa[axis] * inner;
        let b_block = sb[axis] * inner;
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| {
                let mut data = Vec::with_capacity(a.len() + b.len());
                for o in 0..outer {
                    data.extend_from_slice(&a.data()[o * a_block..(o + 1) * a_block]);
                    data.extend_from_slice(&b.data()[o * b_block..(o + 1) * b_block]);
                }
                Tensor::new(out_shape.clone(), data).expect("concat shape")
            })
        });
        Ok(self.binary(other, value, |a, b| Op::Concat { a, b, axis }))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |a| a.reshaped(shape.clone()))?;
        Ok(self.unary(value, Op::Reshape))
    }

    /// Reverse sweep from a scalar loss; returns gradients for every
    /// grad-tracked leaf that participates (zeros otherwise).
    pub fn backward(self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        if nodes[self.id].value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                nodes[self.id].value.shape()
            )));
        }
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[self.id] = Some(Tensor::full(shapes[self.id].clone(), 1.0));

        for id in (0..=self.id).rev() {
            if grads[id].is_none() || !nodes[id].requires_grad {
                continue;
            }
            if matches!(nodes[id].op, Op::Leaf) {
                continue;
            }
            let g = grads[id].take().expect("checked above");
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, delta: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(t) => t.add_assign(&delta).expect("gradient shapes always match"),
        slot @ None => *slot = Some(delta),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let shape_of = |i: usize| nodes[i].value.shape().to_vec();
    match nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, a, g.clone());
            accumulate(grads, nodes, b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, a, g.clone());
            accumulate(grads, nodes, b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if nodes[a].requires_grad {
                let vb = &nodes[b].value;
                let data = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, nodes, a, Tensor::new(shape_of(a), data).expect("shape"));
            }
            if nodes[b].requires_grad {
                let va = &nodes[a].value;
                let data = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, nodes, b, Tensor::new(shape_of(b), data).expect("shape"));
            }
        }
        Op::AddScalar(a) => accumulate(grads, nodes, a, g.clone()),
        Op::MulScalar(a, c) => accumulate(grads, nodes, a, g.map(|v| v * c)),
        Op::MatMul(a, b) => {
            let sa = shape_of(a);
            let sb = shape_of(b);
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if nodes[a].requires_grad {
                let vb = &nodes[b].value;
                let da = kernels::matmul_nt(g.data(), vb.data(), m, n, k);
                accumulate(grads, nodes, a, Tensor::new(sa.clone(), da).expect("shape"));
            }
            if nodes[b].requires_grad {
                let va = &nodes[a].value;
                let db = kernels::matmul_tn(va.data(), g.data(), k, m, n);
                accumulate(grads, nodes, b, Tensor::new(sb, db).expect("shape"));
            }
        }
        Op::AddBiasRow(a, b) => {
            accumulate(grads, nodes, a, g.clone());
            if nodes[b].requires_grad {
                let c = shape_of(a)[1];
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (o, v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                accumulate(grads, nodes, b, Tensor::new(shape_of(b), db).expect("shape"));
            }
        }
        Op::Conv2d { input, weight, bias, stride } => {
            let si = shape_of(input);
            let sw = shape_of(weight);
            let (cin, h, w) = (si[0], si[1], si[2]);
            let cout = sw[0];
            let (di, dw, db) = kernels::conv2d_backward(
                nodes[input].value.data(),
                cin,
                h,
                w,
                nodes[weight].value.data(),
                cout,
                stride,
                g.data(),
            );
            accumulate(grads, nodes, input, Tensor::new(si, di).expect("shape"));
            accumulate(grads, nodes, weight, Tensor::new(sw, dw).expect("shape"));
            accumulate(grads, nodes, bias, Tensor::new(vec![cout], db).expect("shape"));
        }
        Op::Relu(a) => {
            let va = &nodes[a].value;
            let data = g
                .data()
                .iter()
                .zip(va.data())
                .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                .collect();
            accumulate(grads, nodes, a, Tensor::new(shape_of(a), data).expect("shape"));
        }
        Op::Tanh(a) => {
            let y = &nodes[id].value;
            let data = g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect();
            accumulate(grads, nodes, a, Tensor::new(shape_of(a), data).expect("shape"));
        }
        Op::Abs(a) => {
            let va = &nodes[a].value;
            let data = g
                .data()
                .iter()
                .zip(va.data())
                .map(|(&gv, &xv)| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })
                .collect();
            accumulate(grads, nodes, a, Tensor::new(shape_of(a), data).expect("shape"));
        }
        Op::Log(a) => {
            let va = &nodes[a].value;
            let data = g.data().iter().zip(va.data()).map(|(&gv, &xv)| gv / xv).collect();
            accumulate(grads, nodes, a, Tensor::new(shape_of(a), data).expect("shape"));
        }
        Op::Mean(a) => {
            let sa = shape_of(a);
            let n: usize = sa.iter().product();
            let gv = g.data()[0] / n as f64;
            accumulate(grads, nodes, a, Tensor::full(sa, gv));
        }
        Op::MeanRows(a) => {
            let sa = shape_of(a);
            let (r, c) = (sa[0], sa[1]);
            let mut data = vec![0.0; r * c];
            for row in data.chunks_mut(c) {
                for (o, gv) in row.iter_mut().zip(g.data()) {
                    *o = gv / r as f64;
                }
            }
            accumulate(grads, nodes, a, Tensor::new(sa, data).expect("shape"));
        }
        Op::Softmax { input, axis } => {
            let y = &nodes[id].value;
            let dx = kernels::softmax_backward(y.data(), y.shape(), axis, g.data());
            accumulate(grads, nodes, input, Tensor::new(shape_of(input), dx).expect("shape"));
        }
        Op::Bilinear { fmap, points } => {
            let sf = shape_of(fmap);
            let sp = shape_of(points);
            let (c, h, w) = (sf[0], sf[1], sf[2]);
            let k = sp[0];
            let (df, dp) = kernels::bilinear_backward(
                nodes[fmap].value.data(),
                c,
                h,
                w,
                nodes[points].value.data(),
                k,
                g.data(),
            );
            accumulate(grads, nodes, fmap, Tensor::new(sf, df).expect("shape"));
            accumulate(grads, nodes, points, Tensor::new(sp, dp).expect("shape"));
        }
        Op::Concat { a, b, axis } => {
            let sa = shape_of(a);
            let sb = shape_of(b);
            let (outer, _, inner) = kernels::axis_groups(&sa, axis);
            let a_block = sa[axis] * inner;
            let b_block = sb[axis] * inner;
            let mut da = Vec::with_capacity(a_block * outer);
            let mut db = Vec::with_capacity(b_block * outer);
            let gd = g.data();
            for o in 0..outer {
                let base = o * (a_block + b_block);
                da.extend_from_slice(&gd[base..base + a_block]);
                db.extend_from_slice(&gd[base + a_block..base + a_block + b_block]);
            }
            accumulate(grads, nodes, a, Tensor::new(sa, da).expect("shape"));
            accumulate(grads, nodes, b, Tensor::new(sb, db).expect("shape"));
        }
        Op::Reshape(a) => {
            let delta = g.reshaped(shape_of(a)).expect("reshape grad");
            accumulate(grads, nodes, a, delta);
        }
    }
}
