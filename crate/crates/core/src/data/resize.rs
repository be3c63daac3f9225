//! Image resizing with half-pixel-center alignment.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize of a [1,h,w] image. Output sample centers map to source
/// coordinates via (i + 0.5) * (in / out) - 0.5; source lookups clamp to the
/// border. A same-size resize is an exact identity.
pub fn resize(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 || s[1] == 0 || s[2] == 0 {
        return Err(Error::invalid(format!("resize: image must be [1,h,w], got {s:?}")));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize: output dims must be >= 1"));
    }
    let (h, w) = (s[1], s[2]);
    if out_h == h && out_w == w {
        return Ok(image.clone());
    }
    let src = image.data();
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = (sy.floor() as usize).min(h.saturating_sub(2));
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = (sx.floor() as usize).min(w.saturating_sub(2));
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let v00 = src[y0 * w + x0];
            let v01 = src[y0 * w + x1];
            let v10 = src[y1 * w + x0];
            let v11 = src[y1 * w + x1];
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            out.push(top + (bot - top) * fy);
        }
    }
    Tensor::new(vec![1, out_h, out_w], out)
}

/// Resize, then rescale intensities to [0, 1] only if they fall outside it:
/// an already-conforming image passes through unchanged; otherwise
/// v -> (v - min) / (max - min), with a constant image mapping to 0.
pub fn resize_normalize(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let mut resized = resize(image, out_h, out_w)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in resized.data() {
        if !v.is_finite() {
            return Err(Error::invalid("resize_normalize: non-finite intensity"));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo >= 0.0 && hi <= 1.0 {
        return Ok(resized);
    }
    let range = hi - lo;
    for v in resized.data_mut() {
        *v = if range == 0.0 { 0.0 } else { (*v - lo) / range };
    }
    Ok(resized)
}
