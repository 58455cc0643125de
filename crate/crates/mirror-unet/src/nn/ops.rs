//! Elementwise and shape operations with explicit backward passes.

use crate::tensor::{Scalar, Tensor};

#[inline(always)]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    // Branchless: exp_fast clamps its argument (and f64 exp saturates to
    // infinity), so 1/(1 + e^-x) is stable across the whole range.
    S::ONE / (S::ONE + (-x).exp_fast())
}

/// SiLU (x * sigmoid(x)); smooth, so finite-difference checks are clean.
pub fn silu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_backward<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = Tensor::zeros(x.shape());
    for ((dst, &v), &d) in dx
        .data_mut()
        .iter_mut()
        .zip(x.data())
        .zip(dy.data())
    {
        let s = sigmoid(v);
        *dst = d * (s * (S::ONE + v * (S::ONE - s)));
    }
    dx
}

/// Nearest-neighbor x2 upsampling of `[C, D, H, W]`.
pub fn upsample2_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let s = x.shape();
    let (c, d, h, w) = (s[0], s[1], s[2], s[3]);
    let (od, oh, ow) = (d * 2, h * 2, w * 2);
    let mut y = Tensor::zeros(&[c, od, oh, ow]);
    let yd = y.data_mut();
    for ch in 0..c {
        for z in 0..od {
            for yy in 0..oh {
                let src = &x.data()
                    [((ch * d + z / 2) * h + yy / 2) * w..((ch * d + z / 2) * h + yy / 2) * w + w];
                let dst = &mut yd[((ch * od + z) * oh + yy) * ow..((ch * od + z) * oh + yy) * ow + ow];
                for (pair, &v) in dst.chunks_exact_mut(2).zip(src.iter()) {
                    pair[0] = v;
                    pair[1] = v;
                }
            }
        }
    }
    y
}

/// Sums gradients over each 2x2x2 child block.
pub fn upsample2_backward<S: Scalar>(dy: &Tensor<S>, in_shape: &[usize]) -> Tensor<S> {
    let (c, d, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (od, oh, ow) = (d * 2, h * 2, w * 2);
    assert_eq!(dy.shape(), [c, od, oh, ow]);
    let mut dx = Tensor::zeros(in_shape);
    let dxd = dx.data_mut();
    for ch in 0..c {
        for z in 0..od {
            for yy in 0..oh {
                let src = &dy.data()[((ch * od + z) * oh + yy) * ow..((ch * od + z) * oh + yy) * ow + ow];
                let drow = &mut dxd
                    [((ch * d + z / 2) * h + yy / 2) * w..((ch * d + z / 2) * h + yy / 2) * w + w];
                for (ox, &v) in src.iter().enumerate() {
                    drow[ox / 2] += v;
                }
            }
        }
    }
    dx
}

/// Channel concatenation of two `[C, D, H, W]` tensors with equal spatial dims.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(&sa[1..], &sb[1..], "spatial shape mismatch in concat");
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[sa[0] + sb[0], sa[1], sa[2], sa[3]], data)
}

/// Splits a concat gradient back into the two inputs' gradients.
pub fn split_channels<S: Scalar>(dy: &Tensor<S>, c_first: usize) -> (Tensor<S>, Tensor<S>) {
    let s = dy.shape();
    let vol = s[1] * s[2] * s[3];
    let first = Tensor::from_vec(
        &[c_first, s[1], s[2], s[3]],
        dy.data()[..c_first * vol].to_vec(),
    );
    let second = Tensor::from_vec(
        &[s[0] - c_first, s[1], s[2], s[3]],
        dy.data()[c_first * vol..].to_vec(),
    );
    (first, second)
}

/// Global average pool over spatial dims: `[C, D, H, W]` -> `[C]`.
pub fn gap_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let s = x.shape();
    let n = s[1] * s[2] * s[3];
    let inv_n = S::from_f64(1.0 / n as f64);
    let mut y = Tensor::zeros(&[s[0]]);
    for c in 0..s[0] {
        let mut acc = S::ZERO;
        for &v in &x.data()[c * n..(c + 1) * n] {
            acc += v;
        }
        y.data_mut()[c] = acc * inv_n;
    }
    y
}

pub fn gap_backward<S: Scalar>(dy: &Tensor<S>, in_shape: &[usize]) -> Tensor<S> {
    let n = in_shape[1] * in_shape[2] * in_shape[3];
    let inv_n = S::from_f64(1.0 / n as f64);
    let mut dx = Tensor::zeros(in_shape);
    for c in 0..in_shape[0] {
        let g = dy.data()[c] * inv_n;
        for v in &mut dx.data_mut()[c * n..(c + 1) * n] {
            *v = g;
        }
    }
    dx
}
