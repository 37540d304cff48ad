//! Raw forward/backward kernels over flat N×C×H×W buffers.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.k) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Unfolds one image (Cin×H×W) into a (Cin·k·k)×(Ho·Wo) column matrix.
fn im2col(g: &ConvGeom, image: &[f64], cols: &mut [f64]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let pad = g.padding as isize;
    for ci in 0..g.cin {
        let src = &image[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back into an image, accumulating overlaps.
fn col2im(g: &ConvGeom, cols: &[f64], image: &mut [f64]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let pad = g.padding as isize;
    for ci in 0..g.cin {
        let dst = &mut image[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// C (m×n) = alpha·op(A)·op(B) + beta·C, all row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every stride/extent pair below addresses elements inside the
    // slices passed in; callers size `a`, `b` and `c` from the same geometry.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let rows = g.col_rows();
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * plane;
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; rows * plane]
    };
    for b in 0..g.n {
        let image = &input[b * in_len..(b + 1) * in_len];
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        for (co, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[co]);
        }
        let cols_ref: &[f64] = if g.is_pointwise() {
            image
        } else {
            im2col(g, image, &mut cols);
            &cols
        };
        gemm(
            g.cout,
            rows,
            plane,
            weight,
            (rows as isize, 1),
            cols_ref,
            (plane as isize, 1),
            1.0,
            dst,
        );
    }
}

/// Accumulates input, weight and bias gradients. Any of the three
/// destination buffers may be `None` when that operand needs no gradient.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    mut grad_input: Option<&mut [f64]>,
    mut grad_weight: Option<&mut [f64]>,
    mut grad_bias: Option<&mut [f64]>,
) {
    let plane = g.out_h() * g.out_w();
    let rows = g.col_rows();
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * plane;
    let pointwise = g.is_pointwise();
    let mut cols = vec![0.0; if pointwise { 0 } else { rows * plane }];
    let mut dcols = vec![0.0; if pointwise { 0 } else { rows * plane }];
    for b in 0..g.n {
        let image = &input[b * in_len..(b + 1) * in_len];
        let dout = &grad_out[b * out_len..(b + 1) * out_len];
        if let Some(db) = grad_bias.as_deref_mut() {
            for (co, chunk) in dout.chunks(plane).enumerate() {
                db[co] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(dw) = grad_weight.as_deref_mut() {
            let cols_ref: &[f64] = if pointwise {
                image
            } else {
                im2col(g, image, &mut cols);
                &cols
            };
            // dW (Cout×rows) += dOut (Cout×plane) · colsᵀ (plane×rows)
            gemm(
                g.cout,
                plane,
                rows,
                dout,
                (plane as isize, 1),
                cols_ref,
                (1, plane as isize),
                1.0,
                dw,
            );
        }
        if let Some(dx) = grad_input.as_deref_mut() {
            let dst = &mut dx[b * in_len..(b + 1) * in_len];
            // dCols (rows×plane) = Wᵀ (rows×Cout) · dOut (Cout×plane)
            if pointwise {
                gemm(
                    rows,
                    g.cout,
                    plane,
                    weight,
                    (1, rows as isize),
                    dout,
                    (plane as isize, 1),
                    1.0,
                    dst,
                );
            } else {
                gemm(
                    rows,
                    g.cout,
                    plane,
                    weight,
                    (1, rows as isize),
                    dout,
                    (plane as isize, 1),
                    0.0,
                    &mut dcols,
                );
                col2im(g, &dcols, dst);
            }
        }
    }
}

/// 2×2/stride-2 max pooling. Returns the flat input index of each
/// window's maximum; ties keep the first position in row-major order.
pub(crate) fn maxpool2_forward(
    dims: [usize; 4],
    input: &[f64],
    out: &mut [f64],
) -> Vec<usize> {
    let [n, c, h, w] = dims;
    let (ho, wo) = (h / 2, w / 2);
    let mut argmax = vec![0usize; n * c * ho * wo];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let o = (plane * ho + oy) * wo + ox;
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                argmax[o] = best;
                out[o] = input[best];
            }
        }
    }
    argmax
}

/// Same-size box mean with zero padding `k/2` and constant divisor `k²`.
pub(crate) fn box_mean(dims: [usize; 4], k: usize, input: &[f64], out: &mut [f64]) {
    let [n, c, h, w] = dims;
    let r = (k / 2) as isize;
    let norm = 1.0 / (k * k) as f64;
    let mut rows = vec![0.0; h * w];
    for plane in 0..n * c {
        let src = &input[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let lo = (x as isize - r).max(0) as usize;
                let hi = ((x as isize + r) as usize).min(w - 1);
                rows[y * w + x] = src[y * w + lo..=y * w + hi].iter().sum();
            }
        }
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let lo = (y as isize - r).max(0) as usize;
            let hi = ((y as isize + r) as usize).min(h - 1);
            for x in 0..w {
                let mut acc = 0.0;
                for yy in lo..=hi {
                    acc += rows[yy * w + x];
                }
                dst[y * w + x] = acc * norm;
            }
        }
    }
}

pub(crate) fn upsample2_forward(dims: [usize; 4], input: &[f64], out: &mut [f64]) {
    let [n, c, h, w] = dims;
    let wo = 2 * w;
    for plane in 0..n * c {
        let src = &input[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            for x in 0..wo {
                dst[y * wo + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
}

pub(crate) fn upsample2_backward(dims: [usize; 4], grad_out: &[f64], grad_in: &mut [f64]) {
    let [n, c, h, w] = dims;
    let wo = 2 * w;
    for plane in 0..n * c {
        let src = &grad_out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        let dst = &mut grad_in[plane * h * w..(plane + 1) * h * w];
        for y in 0..2 * h {
            for x in 0..wo {
                dst[(y / 2) * w + x / 2] += src[y * wo + x];
            }
        }
    }
}


/// Neumaier-compensated sum; keeps reductions over large feature maps
/// accurate enough for finite-difference checks of the full loss.
pub(crate) fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}
