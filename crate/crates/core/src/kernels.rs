//! Raw numeric kernels shared by the autodiff ops. All buffers are row-major
//! f64 slices; shape checks happen at the op layer, not here.

/// C = A[m,k] @ B[k,n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// C = A[m,k] @ B[n,k]^T
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// C = A[k,m]^T @ B[k,n]
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Output spatial size for a 3x3 kernel with padding 1.
pub fn conv_out_dim(dim: usize, stride: usize) -> usize {
    (dim - 1) / stride + 1
}

/// Valid output range [lo, hi) so that `o*stride + off` stays inside [0, dim).
#[inline]
fn conv_range(dim: usize, out_dim: usize, stride: usize, off: isize) -> (usize, usize) {
    // o*stride + off >= 0  =>  o >= ceil(-off/stride)
    let lo = if off < 0 { ((-off) as usize).div_ceil(stride) } else { 0 };
    // o*stride + off <= dim-1  =>  o <= (dim-1-off)/stride
    let max_i = dim as isize - 1 - off;
    if max_i < 0 {
        return (0, 0);
    }
    let hi = ((max_i as usize) / stride + 1).min(out_dim);
    (lo.min(hi), hi)
}

/// 3x3 convolution with zero padding 1 and fused bias.
/// input [cin,h,w], weight [cout,cin,3,3], bias [cout] -> [cout,ho,wo]
pub fn conv2d_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    stride: usize,
) -> Vec<f64> {
    let ho = conv_out_dim(h, stride);
    let wo = conv_out_dim(w, stride);
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.fill(bias[co]);
        for ci in 0..cin {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let wv = weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (oy_lo, oy_hi) = conv_range(h, ho, stride, dy);
                    let (ox_lo, ox_hi) = conv_range(w, wo, stride, dx);
                    for oy in oy_lo..oy_hi {
                        let iy = (oy * stride) as isize + dy;
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut plane[oy * wo..(oy + 1) * wo];
                        if stride == 1 {
                            let src = &in_row[(ox_lo as isize + dx) as usize..];
                            for (o, &iv) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                *o += wv * iv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * stride) as isize + dx) as usize;
                                out_row[ox] += wv * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of conv2d_forward w.r.t. (input, weight, bias).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    stride: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ho = conv_out_dim(h, stride);
    let wo = conv_out_dim(w, stride);
    let mut d_input = vec![0.0; cin * h * w];
    let mut d_weight = vec![0.0; cout * cin * 9];
    let mut d_bias = vec![0.0; cout];
    for co in 0..cout {
        let g_plane = &grad_out[co * ho * wo..(co + 1) * ho * wo];
        d_bias[co] = g_plane.iter().sum();
        for ci in 0..cin {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            let di_plane = &mut d_input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let mut dw = 0.0;
                    let (oy_lo, oy_hi) = conv_range(h, ho, stride, dy);
                    let (ox_lo, ox_hi) = conv_range(w, wo, stride, dx);
                    for oy in oy_lo..oy_hi {
                        let iy = ((oy * stride) as isize + dy) as usize;
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let g_row = &g_plane[oy * wo..(oy + 1) * wo];
                        let di_row = &mut di_plane[iy * w..(iy + 1) * w];
                        if stride == 1 {
                            let base = (ox_lo as isize + dx) as usize;
                            for (i, &g) in g_row[ox_lo..ox_hi].iter().enumerate() {
                                dw += g * in_row[base + i];
                                di_row[base + i] += wv * g;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * stride) as isize + dx) as usize;
                                let g = g_row[ox];
                                dw += g * in_row[ix];
                                di_row[ix] += wv * g;
                            }
                        }
                    }
                    d_weight[widx] = dw;
                }
            }
        }
    }
    (d_input, d_weight, d_bias)
}

/// Per-point interpolation cell and clamp flags; doubles as the kink
/// signature for finite-difference checks.
#[derive(Clone, Copy)]
pub struct BilinearCell {
    pub x0: usize,
    pub y0: usize,
    pub fx: f64,
    pub fy: f64,
    pub clamped_x: bool,
    pub clamped_y: bool,
}

pub fn bilinear_cell(x: f64, y: f64, h: usize, w: usize) -> BilinearCell {
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let cx = x.clamp(0.0, max_x);
    let cy = y.clamp(0.0, max_y);
    let (x0, fx) = if w == 1 { (0, 0.0) } else { split_coord(cx, w) };
    let (y0, fy) = if h == 1 { (0, 0.0) } else { split_coord(cy, h) };
    BilinearCell { x0, y0, fx, fy, clamped_x: cx != x, clamped_y: cy != y }
}

#[inline]
fn split_coord(c: f64, dim: usize) -> (usize, f64) {
    let i = (c.floor() as usize).min(dim - 2);
    (i, c - i as f64)
}

/// fmap [c,h,w], points [k,2] pixel coords -> out [k,c].
/// Points are clamped into the grid; the clamp zeroes coordinate gradients.
pub fn bilinear_forward(
    fmap: &[f64],
    c: usize,
    h: usize,
    w: usize,
    points: &[f64],
    k: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; k * c];
    for p in 0..k {
        let cell = bilinear_cell(points[2 * p], points[2 * p + 1], h, w);
        let (x0, y0, fx, fy) = (cell.x0, cell.y0, cell.fx, cell.fy);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        for ch in 0..c {
            let plane = &fmap[ch * h * w..(ch + 1) * h * w];
            let v00 = plane[y0 * w + x0];
            let v01 = plane[y0 * w + x1];
            let v10 = plane[y1 * w + x0];
            let v11 = plane[y1 * w + x1];
            out[p * c + ch] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                + fy * ((1.0 - fx) * v10 + fx * v11);
        }
    }
    out
}

/// Gradients of bilinear_forward w.r.t. (fmap, points).
pub fn bilinear_backward(
    fmap: &[f64],
    c: usize,
    h: usize,
    w: usize,
    points: &[f64],
    k: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut d_fmap = vec![0.0; c * h * w];
    let mut d_points = vec![0.0; k * 2];
    for p in 0..k {
        let cell = bilinear_cell(points[2 * p], points[2 * p + 1], h, w);
        let (x0, y0, fx, fy) = (cell.x0, cell.y0, cell.fx, cell.fy);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let mut dx = 0.0;
        let mut dy = 0.0;
        for ch in 0..c {
            let g = grad_out[p * c + ch];
            let plane = &fmap[ch * h * w..(ch + 1) * h * w];
            let v00 = plane[y0 * w + x0];
            let v01 = plane[y0 * w + x1];
            let v10 = plane[y1 * w + x0];
            let v11 = plane[y1 * w + x1];
            dx += g * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
            dy += g * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
            let dp = &mut d_fmap[ch * h * w..(ch + 1) * h * w];
            dp[y0 * w + x0] += g * (1.0 - fx) * (1.0 - fy);
            dp[y0 * w + x1] += g * fx * (1.0 - fy);
            dp[y1 * w + x0] += g * (1.0 - fx) * fy;
            dp[y1 * w + x1] += g * fx * fy;
        }
        if !cell.clamped_x {
            d_points[2 * p] = dx;
        }
        if !cell.clamped_y {
            d_points[2 * p + 1] = dy;
        }
    }
    (d_fmap, d_points)
}

/// Group layout for an axis reduction: (outer, axis_len, inner).
pub fn axis_groups(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis` (max subtraction per group).
pub fn softmax_forward(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_groups(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for j in 0..len {
                mx = mx.max(x[base + j * inner]);
            }
            let mut sum = 0.0;
            for j in 0..len {
                let e = (x[base + j * inner] - mx).exp();
                out[base + j * inner] = e;
                sum += e;
            }
            for j in 0..len {
                out[base + j * inner] /= sum;
            }
        }
    }
    out
}

/// dx_j = y_j * (g_j - sum_k g_k y_k), per softmax group.
pub fn softmax_backward(y: &[f64], shape: &[usize], axis: usize, grad_out: &[f64]) -> Vec<f64> {
    let (outer, len, inner) = axis_groups(shape, axis);
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = 0.0;
            for j in 0..len {
                let idx = base + j * inner;
                dot += grad_out[idx] * y[idx];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] = y[idx] * (grad_out[idx] - dot);
            }
        }
    }
    dx
}
