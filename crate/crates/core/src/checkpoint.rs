//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     4 bytes  "GMCK"
//! version   u32      currently 1
//! flags     u32      bit 0: teacher present, bit 1: optimizer present
//! t         u64      optimizer steps taken so far
//! arch      image_h u32, image_w u32, n_enc u32,
//!           (channels u32, stride u32) per encoder block,
//!           gcn_width u32, gcn_depth u32, cascade_len u32, k u32
//! mean      k * 2 f32 (landmark mean shape, row-major [x, y])
//! topology  n_edges u32, (a u32, b u32) per edge
//! student   tensor block (see below) per tensor, traversal order
//! teacher   same as student, only when flag bit 0
//! optimizer adam_t u64, then first-moment tensors, then second-moment
//!           tensors, only when flag bit 1
//! ```
//!
//! A tensor block is: ndim u32, each dim u32, then the row-major values as
//! f32. Weights are kept as f64 in memory and rounded to f32 on save.
//! Loading is strict: wrong magic or any trailing byte is a format error,
//! an unknown version is a version error, and every tensor shape must match
//! what the architecture descriptor implies.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{GraphTopology, LandmarkSet, MeanShape};
use crate::model::{ArchDescriptor, ModelParams};
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_TEACHER: u32 = 1 << 0;
const FLAG_OPTIMIZER: u32 = 1 << 1;
const KNOWN_FLAGS: u32 = FLAG_TEACHER | FLAG_OPTIMIZER;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub t: u64,
    pub student: ModelParams,
    pub teacher: Option<ModelParams>,
    pub optimizer: Option<AdamState>,
    pub mean_shape: MeanShape,
    pub topology: GraphTopology,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.student.desc.validate()?;
        if let Some(teacher) = &self.teacher {
            if teacher.desc != self.student.desc {
                return Err(Error::invalid("checkpoint: teacher architecture differs"));
            }
        }
        if self.mean_shape.k() != self.student.desc.k {
            return Err(Error::invalid("checkpoint: mean shape landmark count differs"));
        }
        if self.topology.k() != self.student.desc.k {
            return Err(Error::invalid("checkpoint: topology landmark count differs"));
        }
        if let Some(opt) = &self.optimizer {
            let shapes: Vec<_> = self.student.tensors().iter().map(|t| t.shape().to_vec()).collect();
            if opt.m.len() != shapes.len() || opt.v.len() != shapes.len() {
                return Err(Error::invalid("checkpoint: optimizer slot count differs"));
            }
            for ((m, v), s) in opt.m.iter().zip(&opt.v).zip(&shapes) {
                if m.shape() != s.as_slice() || v.shape() != s.as_slice() {
                    return Err(Error::invalid("checkpoint: optimizer tensor shape differs"));
                }
            }
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_usize_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v32: u32 = v
        .try_into()
        .map_err(|_| Error::invalid(format!("checkpoint: {what} {v} exceeds u32 range")))?;
    push_u32(out, v32);
    Ok(())
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor) -> Result<()> {
    push_usize_u32(out, t.shape().len(), "tensor rank")?;
    for &d in t.shape() {
        push_usize_u32(out, d, "tensor dim")?;
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.validate()?;
    let desc = &ckpt.student.desc;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, CHECKPOINT_VERSION);
    let mut flags = 0u32;
    if ckpt.teacher.is_some() {
        flags |= FLAG_TEACHER;
    }
    if ckpt.optimizer.is_some() {
        flags |= FLAG_OPTIMIZER;
    }
    push_u32(&mut out, flags);
    push_u64(&mut out, ckpt.t);

    push_usize_u32(&mut out, desc.image_h, "image_h")?;
    push_usize_u32(&mut out, desc.image_w, "image_w")?;
    push_usize_u32(&mut out, desc.enc_channels.len(), "encoder depth")?;
    for (&c, &s) in desc.enc_channels.iter().zip(&desc.enc_strides) {
        push_usize_u32(&mut out, c, "channels")?;
        push_usize_u32(&mut out, s, "stride")?;
    }
    push_usize_u32(&mut out, desc.gcn_width, "gcn_width")?;
    push_usize_u32(&mut out, desc.gcn_depth, "gcn_depth")?;
    push_usize_u32(&mut out, desc.cascade_len, "cascade_len")?;
    push_usize_u32(&mut out, desc.k, "k")?;

    for p in ckpt.mean_shape.landmarks().points() {
        out.extend_from_slice(&(p[0] as f32).to_le_bytes());
        out.extend_from_slice(&(p[1] as f32).to_le_bytes());
    }

    push_usize_u32(&mut out, ckpt.topology.edges().len(), "edge count")?;
    for &(a, b) in ckpt.topology.edges() {
        push_usize_u32(&mut out, a, "edge endpoint")?;
        push_usize_u32(&mut out, b, "edge endpoint")?;
    }

    for t in ckpt.student.tensors() {
        push_tensor(&mut out, t)?;
    }
    if let Some(teacher) = &ckpt.teacher {
        for t in teacher.tensors() {
            push_tensor(&mut out, t)?;
        }
    }
    if let Some(opt) = &ckpt.optimizer {
        push_u64(&mut out, opt.t);
        for t in opt.m.iter().chain(&opt.v) {
            push_tensor(&mut out, t)?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!(
                "checkpoint truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    /// Read a tensor block that must have the given shape.
    fn tensor_expecting(&mut self, expect: &[usize]) -> Result<Tensor> {
        let ndim = self.dim()?;
        if ndim != expect.len() {
            return Err(Error::format(format!(
                "checkpoint tensor rank {ndim} where {} expected",
                expect.len()
            )));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(self.dim()?);
        }
        if dims != expect {
            return Err(Error::format(format!(
                "checkpoint tensor shape {dims:?} where {expect:?} expected"
            )));
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f32()? as f64);
        }
        Tensor::new(dims, data)
    }
}

fn read_params(r: &mut Reader<'_>, desc: &ArchDescriptor) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(desc)?;
    let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
    for (slot, shape) in params.tensors_mut().into_iter().zip(&shapes) {
        *slot = r.tensor_expecting(shape)?;
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(Error::format(format!("{}: not a checkpoint (bad magic)", path.display())));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, supported: CHECKPOINT_VERSION });
    }
    let flags = r.u32()?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(Error::format(format!("unknown checkpoint flags {flags:#x}")));
    }
    let t = r.u64()?;

    let image_h = r.dim()?;
    let image_w = r.dim()?;
    let n_enc = r.dim()?;
    if n_enc > 64 {
        return Err(Error::format(format!("implausible encoder depth {n_enc}")));
    }
    let mut enc_channels = Vec::with_capacity(n_enc);
    let mut enc_strides = Vec::with_capacity(n_enc);
    for _ in 0..n_enc {
        enc_channels.push(r.dim()?);
        enc_strides.push(r.dim()?);
    }
    let gcn_width = r.dim()?;
    let gcn_depth = r.dim()?;
    let cascade_len = r.dim()?;
    let k = r.dim()?;
    let desc = ArchDescriptor {
        image_h,
        image_w,
        enc_channels,
        enc_strides,
        gcn_width,
        gcn_depth,
        cascade_len,
        k,
    };
    desc.validate().map_err(|e| Error::format(format!("checkpoint architecture: {e}")))?;

    let mut points = Vec::with_capacity(k);
    for _ in 0..k {
        let x = r.f32()? as f64;
        let y = r.f32()? as f64;
        points.push([x, y]);
    }
    let mean_shape = MeanShape(LandmarkSet::new(points));

    let n_edges = r.dim()?;
    if n_edges > k.saturating_mul(k) {
        return Err(Error::format(format!("implausible edge count {n_edges}")));
    }
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        edges.push((r.dim()?, r.dim()?));
    }
    let topology = GraphTopology::new(k, edges)
        .map_err(|e| Error::format(format!("checkpoint topology: {e}")))?;

    let student = read_params(&mut r, &desc)?;
    let teacher =
        if flags & FLAG_TEACHER != 0 { Some(read_params(&mut r, &desc)?) } else { None };
    let optimizer = if flags & FLAG_OPTIMIZER != 0 {
        let adam_t = r.u64()?;
        let shapes: Vec<Vec<usize>> = student.tensors().iter().map(|t| t.shape().to_vec()).collect();
        let mut m = Vec::with_capacity(shapes.len());
        for s in &shapes {
            m.push(r.tensor_expecting(s)?);
        }
        let mut v = Vec::with_capacity(shapes.len());
        for s in &shapes {
            v.push(r.tensor_expecting(s)?);
        }
        Some(AdamState { t: adam_t, m, v })
    } else {
        None
    };

    if r.pos != bytes.len() {
        return Err(Error::format(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let ckpt = Checkpoint { t, student, teacher, optimizer, mean_shape, topology };
    ckpt.validate().map_err(|e| Error::format(format!("loaded checkpoint inconsistent: {e}")))?;
    Ok(ckpt)
}
