//! Group normalization over channel pairs.
//!
//! Statistics are taken over (group x spatial) slices with groups of two
//! channels (or one group for odd widths), with a per-channel affine. Pair
//! groups behave like instance normalization at ordinary feature-map sizes
//! but stay well-conditioned when a stage's spatial extent collapses to a
//! single voxel, where per-channel statistics would normalize every map to
//! its bias and gradients through the bottleneck path would degenerate.

use crate::tensor::{Scalar, Tensor};

pub const NORM_EPS: f64 = 1e-5;

fn group_size(channels: usize) -> usize {
    if channels % 2 == 0 {
        2
    } else {
        channels
    }
}

/// Sum and sum-of-squares with eight independent accumulators each, so the
/// reductions vectorize without reassociation; combination order is fixed.
#[inline(always)]
fn sum_and_sumsq<S: Scalar>(xs: &[S]) -> (S, S) {
    let mut s = [S::ZERO; 8];
    let mut q = [S::ZERO; 8];
    let chunks = xs.len() / 8;
    for i in 0..chunks {
        let c = &xs[i * 8..i * 8 + 8];
        for j in 0..8 {
            s[j] += c[j];
            q[j] += c[j] * c[j];
        }
    }
    let mut st = S::ZERO;
    let mut qt = S::ZERO;
    for &v in &xs[chunks * 8..] {
        st += v;
        qt += v * v;
    }
    (
        (s[0] + s[4]) + (s[1] + s[5]) + ((s[2] + s[6]) + (s[3] + s[7])) + st,
        (q[0] + q[4]) + (q[1] + q[5]) + ((q[2] + q[6]) + (q[3] + q[7])) + qt,
    )
}

#[inline(always)]
fn sum_pair<S: Scalar>(a: &[S], b: &[S]) -> (S, S) {
    // (sum a, sum a*b) with the same 8-lane layout.
    let mut s = [S::ZERO; 8];
    let mut q = [S::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ca = &a[i * 8..i * 8 + 8];
        let cb = &b[i * 8..i * 8 + 8];
        for j in 0..8 {
            s[j] += ca[j];
            q[j] += ca[j] * cb[j];
        }
    }
    let mut st = S::ZERO;
    let mut qt = S::ZERO;
    for (&x, &y) in a[chunks * 8..].iter().zip(&b[chunks * 8..]) {
        st += x;
        qt += x * y;
    }
    (
        (s[0] + s[4]) + (s[1] + s[5]) + ((s[2] + s[6]) + (s[3] + s[7])) + st,
        (q[0] + q[4]) + (q[1] + q[5]) + ((q[2] + q[6]) + (q[3] + q[7])) + qt,
    )
}

pub struct NormCache<S: Scalar> {
    /// Normalized pre-affine activations.
    pub xhat: Tensor<S>,
    /// Per-group reciprocal standard deviation.
    pub inv_std: Vec<S>,
}

/// y_c = gamma_c * xhat_c + beta_c with xhat normalized per channel-pair
/// group over the group's channels and all spatial positions.
pub fn instance_norm_forward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
) -> (Tensor<S>, NormCache<S>) {
    let shape = x.shape();
    let c = shape[0];
    let n = shape[1] * shape[2] * shape[3];
    let gs = group_size(c);
    let groups = c / gs;
    let gn = gs * n;
    let inv_gn = S::from_f64(1.0 / gn as f64);
    let eps = S::from_f64(NORM_EPS);

    let mut y = Tensor::zeros(shape);
    let mut xhat = Tensor::zeros(shape);
    let mut inv_std = vec![S::ZERO; groups];

    for g in 0..groups {
        let xs = &x.data()[g * gn..(g + 1) * gn];
        let (sum, sumsq) = sum_and_sumsq(xs);
        let mean = sum * inv_gn;
        // Biased variance via E[x^2] - mean^2, floored at zero against
        // cancellation on near-constant groups.
        let var = (sumsq * inv_gn - mean * mean).max(S::ZERO);
        let istd = S::ONE / (var + eps).sqrt();
        inv_std[g] = istd;

        let xh = &mut xhat.data_mut()[g * gn..(g + 1) * gn];
        for (dst, &v) in xh.iter_mut().zip(xs) {
            *dst = (v - mean) * istd;
        }
        let ys = &mut y.data_mut()[g * gn..(g + 1) * gn];
        for ch_in_g in 0..gs {
            let ch = g * gs + ch_in_g;
            let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
            for (dst, &h) in ys[ch_in_g * n..(ch_in_g + 1) * n]
                .iter_mut()
                .zip(&xh[ch_in_g * n..(ch_in_g + 1) * n])
            {
                *dst = gm * h + bt;
            }
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Accumulates dgamma/dbeta and returns dx.
pub fn instance_norm_backward<S: Scalar>(
    cache: &NormCache<S>,
    gamma: &Tensor<S>,
    dy: &Tensor<S>,
    dgamma: &mut Tensor<S>,
    dbeta: &mut Tensor<S>,
) -> Tensor<S> {
    let shape = cache.xhat.shape();
    let c = shape[0];
    let n = shape[1] * shape[2] * shape[3];
    let gs = group_size(c);
    let groups = c / gs;
    let gn = gs * n;
    let inv_gn = S::from_f64(1.0 / gn as f64);

    let mut dx = Tensor::zeros(shape);
    // u = gamma_c * dy = dL/dxhat; scratch buffer reused per group.
    let mut u = vec![S::ZERO; gn];
    for g in 0..groups {
        let xh = &cache.xhat.data()[g * gn..(g + 1) * gn];
        let dys = &dy.data()[g * gn..(g + 1) * gn];

        for ch_in_g in 0..gs {
            let ch = g * gs + ch_in_g;
            let (s_dy, s_dy_xh) = sum_pair(
                &dys[ch_in_g * n..(ch_in_g + 1) * n],
                &xh[ch_in_g * n..(ch_in_g + 1) * n],
            );
            dbeta.data_mut()[ch] += s_dy;
            dgamma.data_mut()[ch] += s_dy_xh;
            let gm = gamma.data()[ch];
            for (dst, &d) in u[ch_in_g * n..(ch_in_g + 1) * n]
                .iter_mut()
                .zip(&dys[ch_in_g * n..(ch_in_g + 1) * n])
            {
                *dst = gm * d;
            }
        }

        let (sum_u, sum_u_xh) = sum_pair(&u, xh);
        let mean_u = sum_u * inv_gn;
        let mean_u_xh = sum_u_xh * inv_gn;
        let istd = cache.inv_std[g];
        let dxs = &mut dx.data_mut()[g * gn..(g + 1) * gn];
        for ((dst, &uv), &h) in dxs.iter_mut().zip(u.iter()).zip(xh) {
            *dst = istd * (uv - mean_u - h * mean_u_xh);
        }
    }
    dx
}
