//! Direct 3D convolution kernels.
//!
//! Feature maps are `[C, D, H, W]` row-major. The forward pass is output
//! stationary: each output row is accumulated in a local buffer across all
//! input channels and kernel taps, so the input volume is streamed once per
//! output channel instead of being expanded 27x as an unrolled column
//! matrix. The x-contiguous inner loops vectorize under `target-cpu`
//! builds, which matters on memory-bandwidth-limited hosts.

use crate::tensor::{matmul_at_into, matmul_bt_into, Scalar, Tensor};

/// Below this output-voxel count the unrolled-column GEMM path wins over
/// the direct kernels (rows are too short to amortize per-row setup).
const GEMM_SPATIAL_LIMIT: usize = 4096;
/// Minimum unrolled K for the GEMM path to be worthwhile.
const GEMM_K_MIN: usize = 128;

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_dim(&self, d: usize) -> usize {
        (d + 2 * self.pad - self.ksize) / self.stride + 1
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> [usize; 4] {
        [
            self.out_ch,
            self.out_dim(in_shape[1]),
            self.out_dim(in_shape[2]),
            self.out_dim(in_shape[3]),
        ]
    }

    fn k_total(&self) -> usize {
        self.in_ch * self.ksize * self.ksize * self.ksize
    }

    fn use_gemm(&self, out_shape: &[usize; 4]) -> bool {
        let n = out_shape[1] * out_shape[2] * out_shape[3];
        self.ksize == 3 && n <= GEMM_SPATIAL_LIMIT && self.k_total() >= GEMM_K_MIN
    }
}

/// Fills `col` (k_total x n_out) from the padded input.
fn im2col<S: Scalar>(x: &[S], in_shape: &[usize], spec: &ConvSpec, out_shape: &[usize; 4], col: &mut [S]) {
    let (d, h, w) = (in_shape[1], in_shape[2], in_shape[3]);
    let (od, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
    let (k, s, p) = (spec.ksize, spec.stride, spec.pad);
    let n = od * oh * ow;
    let mut row_idx = 0usize;
    for c in 0..spec.in_ch {
        let x_c = &x[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dest = &mut col[row_idx * n..(row_idx + 1) * n];
                    let mut idx = 0usize;
                    for oz in 0..od {
                        let iz = (oz * s + kz) as isize - p as isize;
                        if iz < 0 || iz >= d as isize {
                            dest[idx..idx + oh * ow].iter_mut().for_each(|v| *v = S::ZERO);
                            idx += oh * ow;
                            continue;
                        }
                        let zoff = iz as usize * h * w;
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let dst = &mut dest[idx..idx + ow];
                            idx += ow;
                            if iy < 0 || iy >= h as isize {
                                dst.iter_mut().for_each(|v| *v = S::ZERO);
                                continue;
                            }
                            let row = &x_c[zoff + iy as usize * w..zoff + (iy as usize + 1) * w];
                            for (ox, v) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - p as isize;
                                *v = if ix >= 0 && ix < w as isize {
                                    row[ix as usize]
                                } else {
                                    S::ZERO
                                };
                            }
                        }
                    }
                    row_idx += 1;
                }
            }
        }
    }
}

/// Scatter-adds `col` back into `dx` (transpose of [`im2col`]).
fn col2im_add<S: Scalar>(col: &[S], in_shape: &[usize], spec: &ConvSpec, out_shape: &[usize; 4], dx: &mut [S]) {
    let (d, h, w) = (in_shape[1], in_shape[2], in_shape[3]);
    let (od, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
    let (k, s, p) = (spec.ksize, spec.stride, spec.pad);
    let n = od * oh * ow;
    let mut row_idx = 0usize;
    for c in 0..spec.in_ch {
        let dx_c = &mut dx[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &col[row_idx * n..(row_idx + 1) * n];
                    let mut idx = 0usize;
                    for oz in 0..od {
                        let iz = (oz * s + kz) as isize - p as isize;
                        if iz < 0 || iz >= d as isize {
                            idx += oh * ow;
                            continue;
                        }
                        let zoff = iz as usize * h * w;
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let srow = &src[idx..idx + ow];
                            idx += ow;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let drow = &mut dx_c[zoff + iy as usize * w..zoff + (iy as usize + 1) * w];
                            for (ox, &v) in srow.iter().enumerate() {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    drow[ix as usize] += v;
                                }
                            }
                        }
                    }
                    row_idx += 1;
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes
/// without floating-point reassociation; combination order is fixed.
#[inline(always)]
fn dot8<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ca = &a[i * 8..i * 8 + 8];
        let cb = &b[i * 8..i * 8 + 8];
        for j in 0..8 {
            acc[j] += ca[j] * cb[j];
        }
    }
    let mut tail = S::ZERO;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Adds `w0*row[x-1] + w1*row[x] + w2*row[x+1]` into `acc` (stride 1).
#[inline(always)]
fn row_taps_s1<S: Scalar>(acc: &mut [S], row: &[S], w0: S, w1: S, w2: S) {
    let n = acc.len();
    debug_assert_eq!(row.len(), n);
    if n == 0 {
        return;
    }
    if n == 1 {
        acc[0] += w1 * row[0];
        return;
    }
    acc[0] += w1 * row[0] + w2 * row[1];
    // Interior: all three taps in one fused pass.
    {
        let (a_mid, r_m1, r_0, r_p1) = (
            &mut acc[1..n - 1],
            &row[0..n - 2],
            &row[1..n - 1],
            &row[2..n],
        );
        for i in 0..a_mid.len() {
            a_mid[i] += w0 * r_m1[i] + w1 * r_0[i] + w2 * r_p1[i];
        }
    }
    acc[n - 1] += w0 * row[n - 2] + w1 * row[n - 1];
}

/// Strided variant: adds `wk*row[ox*stride + kx - pad]` for each tap.
#[inline(always)]
fn row_taps_strided<S: Scalar>(
    acc: &mut [S],
    row: &[S],
    taps: &[S],
    ksize: usize,
    stride: usize,
    pad: usize,
) {
    let w = row.len();
    for (kx, &wk) in taps.iter().enumerate().take(ksize) {
        let shift = kx as isize - pad as isize;
        // valid ox: 0 <= ox*stride + shift < w
        let lo = if shift >= 0 {
            0
        } else {
            ((-shift) as usize).div_ceil(stride)
        };
        let hi_excl = {
            let max_in = w as isize - 1 - shift;
            if max_in < 0 {
                0
            } else {
                (max_in as usize) / stride + 1
            }
        };
        let hi = hi_excl.min(acc.len());
        for ox in lo..hi {
            let ix = (ox * stride) as isize + shift;
            acc[ox] += wk * row[ix as usize];
        }
    }
}

/// y = conv(x, w) + b. `w` is `[out_ch, in_ch, k, k, k]`, `b` is `[out_ch]`.
pub fn conv3d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    spec: &ConvSpec,
) -> Tensor<S> {
    let in_shape = x.shape();
    assert_eq!(in_shape[0], spec.in_ch, "input channel mismatch");
    let (ci_n, d, h, wd) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let out_shape = spec.out_shape(in_shape);
    let (od, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
    let (k, s, p) = (spec.ksize, spec.stride, spec.pad);

    if spec.use_gemm(&out_shape) {
        // Small-volume path: unroll columns once and run a single GEMM.
        let n = od * oh * ow;
        let k_total = spec.k_total();
        let mut col = vec![S::ZERO; k_total * n];
        im2col(x.data(), in_shape, spec, &out_shape, &mut col);
        let mut y = Tensor::zeros(&out_shape);
        crate::tensor::matmul_into(spec.out_ch, k_total, n, w.data(), &col, S::ZERO, y.data_mut());
        let yd = y.data_mut();
        for c in 0..spec.out_ch {
            let bias = b.data()[c];
            for v in &mut yd[c * n..(c + 1) * n] {
                *v += bias;
            }
        }
        return y;
    }

    let mut y = Tensor::zeros(&out_shape);

    let xd = x.data();
    let wdta = w.data();
    let yd = y.data_mut();
    let mut acc = vec![S::ZERO; ow];

    for co in 0..spec.out_ch {
        let bias = b.data()[co];
        for oz in 0..od {
            for oy in 0..oh {
                acc.iter_mut().for_each(|v| *v = bias);
                for ci in 0..ci_n {
                    let x_c = &xd[ci * d * h * wd..(ci + 1) * d * h * wd];
                    let w_base = ((co * ci_n + ci) * k) * k * k;
                    for kz in 0..k {
                        let iz = (oz * s + kz) as isize - p as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        let zoff = iz as usize * h * wd;
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &x_c[zoff + iy as usize * wd..zoff + (iy as usize + 1) * wd];
                            let taps = &wdta[w_base + (kz * k + ky) * k..w_base + (kz * k + ky) * k + k];
                            if s == 1 && k == 3 && ow == wd && p == 1 {
                                row_taps_s1(&mut acc, row, taps[0], taps[1], taps[2]);
                            } else if k == 1 {
                                // Pointwise: ow == wd, stride 1, no pad.
                                let t0 = taps[0];
                                for (a, &r) in acc.iter_mut().zip(row.iter()) {
                                    *a += t0 * r;
                                }
                            } else {
                                row_taps_strided(&mut acc, row, taps, k, s, p);
                            }
                        }
                    }
                }
                let dst = &mut yd[((co * od + oz) * oh + oy) * ow..((co * od + oz) * oh + oy) * ow + ow];
                dst.copy_from_slice(&acc);
            }
        }
    }
    y
}

/// Scatter of one dy row into a dx row for the stride-1 3-tap case:
/// dx[ox-1] += w0*dy[ox]; dx[ox] += w1*dy[ox]; dx[ox+1] += w2*dy[ox].
#[inline(always)]
fn row_scatter_s1<S: Scalar>(dx_row: &mut [S], dy_row: &[S], w0: S, w1: S, w2: S) {
    let n = dy_row.len();
    if n == 0 {
        return;
    }
    if n == 1 {
        dx_row[0] += w1 * dy_row[0];
        return;
    }
    // Equivalent gather form: dx[i] += w2*dy[i-1] + w1*dy[i] + w0*dy[i+1].
    dx_row[0] += w1 * dy_row[0] + w0 * dy_row[1];
    {
        let n_mid = n - 2;
        let (d_mid, y_m1, y_0, y_p1) = (
            &mut dx_row[1..n - 1],
            &dy_row[0..n - 2],
            &dy_row[1..n - 1],
            &dy_row[2..n],
        );
        for i in 0..n_mid {
            d_mid[i] += w2 * y_m1[i] + w1 * y_0[i] + w0 * y_p1[i];
        }
    }
    dx_row[n - 1] += w2 * dy_row[n - 2] + w1 * dy_row[n - 1];
}

/// Backward pass; accumulates into `dw`/`db` and returns dx.
pub fn conv3d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
    spec: &ConvSpec,
    dw: &mut Tensor<S>,
    db: &mut Tensor<S>,
) -> Tensor<S> {
    let in_shape = x.shape();
    let out_shape = spec.out_shape(in_shape);
    assert_eq!(dy.shape(), out_shape);
    let (ci_n, d, h, wd) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (od, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
    let (k, s, p) = (spec.ksize, spec.stride, spec.pad);

    let xd = x.data();
    let dyd = dy.data();
    let wdta = w.data();

    // db
    for co in 0..spec.out_ch {
        let mut acc = S::ZERO;
        for &v in &dyd[co * od * oh * ow..(co + 1) * od * oh * ow] {
            acc += v;
        }
        db.data_mut()[co] += acc;
    }

    if spec.use_gemm(&out_shape) {
        let n = od * oh * ow;
        let k_total = spec.k_total();
        let mut col = vec![S::ZERO; k_total * n];
        im2col(xd, in_shape, spec, &out_shape, &mut col);
        // dW[Co, K] += dOut[Co, n] * col[K, n]^T
        matmul_bt_into(spec.out_ch, n, k_total, dyd, &col, S::ONE, dw.data_mut());
        // dcol[K, n] = W[Co, K]^T * dOut[Co, n]
        let mut dcol = vec![S::ZERO; k_total * n];
        matmul_at_into(k_total, spec.out_ch, n, wdta, dyd, S::ZERO, &mut dcol);
        let mut dx = Tensor::zeros(in_shape);
        col2im_add(&dcol, in_shape, spec, &out_shape, dx.data_mut());
        return dx;
    }

    // dW: per (co, ci, kz, ky) accumulate the k x-taps with row dots.
    {
        let dwd = dw.data_mut();
        for co in 0..spec.out_ch {
            let dy_c = &dyd[co * od * oh * ow..(co + 1) * od * oh * ow];
            for ci in 0..ci_n {
                let x_c = &xd[ci * d * h * wd..(ci + 1) * d * h * wd];
                let w_base = (co * ci_n + ci) * k * k * k;
                for kz in 0..k {
                    for ky in 0..k {
                        let mut taps = vec![S::ZERO; k];
                        for oz in 0..od {
                            let iz = (oz * s + kz) as isize - p as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            let zoff = iz as usize * h * wd;
                            for oy in 0..oh {
                                let iy = (oy * s + ky) as isize - p as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let x_row =
                                    &x_c[zoff + iy as usize * wd..zoff + (iy as usize + 1) * wd];
                                let dy_row =
                                    &dy_c[(oz * oh + oy) * ow..(oz * oh + oy) * ow + ow];
                                for (kx, tap) in taps.iter_mut().enumerate() {
                                    let shift = kx as isize - p as isize;
                                    if s == 1 {
                                        let lo = (-shift).max(0) as usize;
                                        let hi = (wd as isize - shift).min(ow as isize) as usize;
                                        if lo >= hi {
                                            continue;
                                        }
                                        let xs = &x_row[(lo as isize + shift) as usize
                                            ..(hi as isize + shift) as usize];
                                        let ys = &dy_row[lo..hi];
                                        *tap += dot8(ys, xs);
                                    } else {
                                        let lo = if shift >= 0 {
                                            0
                                        } else {
                                            ((-shift) as usize).div_ceil(s)
                                        };
                                        let max_in = wd as isize - 1 - shift;
                                        if max_in < 0 {
                                            continue;
                                        }
                                        let hi = ((max_in as usize) / s + 1).min(ow);
                                        let mut acc = S::ZERO;
                                        for ox in lo..hi {
                                            let ix = (ox * s) as isize + shift;
                                            acc += dy_row[ox] * x_row[ix as usize];
                                        }
                                        *tap += acc;
                                    }
                                }
                            }
                        }
                        for (kx, &t) in taps.iter().enumerate() {
                            dwd[w_base + (kz * k + ky) * k + kx] += t;
                        }
                    }
                }
            }
        }
    }

    // dx: scatter dy through the kernel.
    let mut dx = Tensor::zeros(in_shape);
    {
        let dxd = dx.data_mut();
        for ci in 0..ci_n {
            let dx_c = &mut dxd[ci * d * h * wd..(ci + 1) * d * h * wd];
            for co in 0..spec.out_ch {
                let dy_c = &dyd[co * od * oh * ow..(co + 1) * od * oh * ow];
                let w_base = (co * ci_n + ci) * k * k * k;
                for kz in 0..k {
                    for ky in 0..k {
                        let taps = &wdta[w_base + (kz * k + ky) * k..w_base + (kz * k + ky) * k + k];
                        for oz in 0..od {
                            let iz = (oz * s + kz) as isize - p as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            let zoff = iz as usize * h * wd;
                            for oy in 0..oh {
                                let iy = (oy * s + ky) as isize - p as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let dx_row = &mut dx_c
                                    [zoff + iy as usize * wd..zoff + (iy as usize + 1) * wd];
                                let dy_row =
                                    &dy_c[(oz * oh + oy) * ow..(oz * oh + oy) * ow + ow];
                                if s == 1 && k == 3 && ow == wd && p == 1 {
                                    row_scatter_s1(dx_row, dy_row, taps[0], taps[1], taps[2]);
                                } else if k == 1 {
                                    let t0 = taps[0];
                                    for (a, &g) in dx_row.iter_mut().zip(dy_row.iter()) {
                                        *a += t0 * g;
                                    }
                                } else {
                                    for (kx, &wk) in taps.iter().enumerate().take(k) {
                                        let shift = kx as isize - p as isize;
                                        let lo = if shift >= 0 {
                                            0
                                        } else {
                                            ((-shift) as usize).div_ceil(s)
                                        };
                                        let max_in = wd as isize - 1 - shift;
                                        if max_in < 0 {
                                            continue;
                                        }
                                        let hi = ((max_in as usize) / s + 1).min(ow);
                                        for ox in lo..hi {
                                            let ix = (ox * s) as isize + shift;
                                            dx_row[ix as usize] += wk * dy_row[ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Matmul-style forward for 1x1x1 convolutions used by output heads.
pub fn pointwise_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let spec = ConvSpec {
        in_ch: x.shape()[0],
        out_ch: w.shape()[0],
        ksize: 1,
        stride: 1,
        pad: 0,
    };
    conv3d_forward(x, w, b, &spec)
}
