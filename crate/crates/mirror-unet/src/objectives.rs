//! Segmentation, reconstruction, and classification losses, composed into
//! the per-version multi-task objectives.

use crate::error::{Error, Result};
use crate::model::{fuse_logits, BranchOutputs, OutputGrads, Version};
use crate::nn::ops::sigmoid;
use crate::tensor::{Scalar, Tensor};

pub const DICE_EPS: f64 = 1e-5;

/// Loss-balancing weights; defaults follow the training recipe
/// (rec 1e-4, seg 0.5, class 1e-3).
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_seg: f64,
    pub lambda_class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rec: 1e-4,
            lambda_seg: 0.5,
            lambda_class: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_rec", self.lambda_rec),
            ("lambda_seg", self.lambda_seg),
            ("lambda_class", self.lambda_class),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Per-step loss components. Absent terms are zero with the matching
/// presence flag cleared. For the brain variants the bottleneck task's
/// Dice-CE is reported in `rec_btl` (the bottleneck-term slot).
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown<S: Scalar> {
    pub total: S,
    pub seg: S,
    pub rec_branch: S,
    pub rec_btl: S,
    pub class_term: S,
    pub has_seg: bool,
    pub has_rec_branch: bool,
    pub has_rec_btl: bool,
    pub has_class: bool,
}

impl<S: Scalar> LossBreakdown<S> {
    fn zeroed() -> Self {
        LossBreakdown {
            total: S::ZERO,
            seg: S::ZERO,
            rec_branch: S::ZERO,
            rec_btl: S::ZERO,
            class_term: S::ZERO,
            has_seg: false,
            has_rec_branch: false,
            has_rec_btl: false,
            has_class: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.seg.is_finite()
            && self.rec_branch.is_finite()
            && self.rec_btl.is_finite()
            && self.class_term.is_finite()
    }
}

fn check_binary<S: Scalar>(target: &Tensor<S>) -> Result<()> {
    for &v in target.data() {
        let f = v.to_f64();
        if f != 0.0 && f != 1.0 {
            return Err(Error::InvalidValue(format!(
                "target contains non-binary value {f}"
            )));
        }
    }
    Ok(())
}

/// Numerically stable binary cross-entropy with logits:
/// max(l,0) - l*t + ln(1 + exp(-|l|)).
#[inline]
fn bce_with_logits<S: Scalar>(l: S, t: S) -> S {
    l.max(S::ZERO) - l * t + (S::ONE + (-l.abs()).exp()).ln()
}

/// Soft-Dice loss plus voxel-mean BCE on logits. The Dice part is
/// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps) with p = sigmoid(logits).
pub fn dice_ce_loss<S: Scalar>(pred_logits: &Tensor<S>, target: &Tensor<S>) -> Result<S> {
    let (loss, _) = dice_ce_parts(pred_logits, target, false)?;
    Ok(loss)
}

/// Loss together with its gradient w.r.t. the logits.
pub fn dice_ce_with_grad<S: Scalar>(
    pred_logits: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<(S, Tensor<S>)> {
    let (loss, grad) = dice_ce_parts(pred_logits, target, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn dice_ce_parts<S: Scalar>(
    logits: &Tensor<S>,
    target: &Tensor<S>,
    want_grad: bool,
) -> Result<(S, Option<Tensor<S>>)> {
    if logits.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs target {:?}",
            logits.shape(),
            target.shape()
        )));
    }
    check_binary(target)?;
    let n = logits.numel();
    let inv_n = S::from_f64(1.0 / n as f64);
    let eps = S::from_f64(DICE_EPS);

    let mut sum_p = S::ZERO;
    let mut sum_g = S::ZERO;
    let mut sum_pg = S::ZERO;
    let mut bce = S::ZERO;
    let mut probs = Vec::with_capacity(n);
    for (&l, &g) in logits.data().iter().zip(target.data()) {
        let p = sigmoid(l);
        probs.push(p);
        sum_p += p;
        sum_g += g;
        sum_pg += p * g;
        bce += bce_with_logits(l, g);
    }
    bce *= inv_n;
    let num = S::from_f64(2.0) * sum_pg + eps;
    let den = sum_p + sum_g + eps;
    let dice_loss = S::ONE - num / den;
    let loss = dice_loss + bce;

    let grad = if want_grad {
        let den2 = den * den;
        let two = S::from_f64(2.0);
        let mut g_out = Tensor::zeros(logits.shape());
        for (i, ((&l, &g), &p)) in logits
            .data()
            .iter()
            .zip(target.data())
            .zip(probs.iter())
            .enumerate()
        {
            // d dice_loss / dp = -(2 g * den - num) / den^2
            let d_dice_dp = -(two * g * den - num) / den2;
            let d_p_dl = p * (S::ONE - p);
            let d_bce = (sigmoid(l) - g) * inv_n;
            g_out.data_mut()[i] = d_dice_dp * d_p_dl + d_bce;
        }
        Some(g_out)
    } else {
        None
    };
    Ok((loss, grad))
}

/// Mean over channels of per-channel Dice-CE; used by the 3-channel brain
/// segmentation head.
pub fn dice_ce_multi<S: Scalar>(
    logits: &Tensor<S>,
    targets: &[Tensor<S>],
) -> Result<(S, Tensor<S>)> {
    let c = logits.shape()[0];
    if targets.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "{c}-channel logits with {} targets",
            targets.len()
        )));
    }
    let spatial: Vec<usize> = std::iter::once(1)
        .chain(logits.shape()[1..].iter().copied())
        .collect();
    let vol = logits.numel() / c;
    let mut total = S::ZERO;
    let mut grad = Tensor::zeros(logits.shape());
    let inv_c = S::from_f64(1.0 / c as f64);
    for (ch, target) in targets.iter().enumerate() {
        let ch_logits = Tensor::from_vec(&spatial, logits.data()[ch * vol..(ch + 1) * vol].to_vec());
        let (loss, g) = dice_ce_with_grad(&ch_logits, target)?;
        total += loss * inv_c;
        for (dst, &v) in grad.data_mut()[ch * vol..(ch + 1) * vol]
            .iter_mut()
            .zip(g.data())
        {
            *dst = v * inv_c;
        }
    }
    Ok((total, grad))
}

/// Voxel-mean squared error.
pub fn mse_loss<S: Scalar>(recon: &Tensor<S>, target: &Tensor<S>) -> Result<S> {
    if recon.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "recon {:?} vs target {:?}",
            recon.shape(),
            target.shape()
        )));
    }
    let inv_n = S::from_f64(1.0 / recon.numel() as f64);
    let mut acc = S::ZERO;
    for (&a, &b) in recon.data().iter().zip(target.data()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc * inv_n)
}

/// MSE with gradient w.r.t. the reconstruction.
pub fn mse_with_grad<S: Scalar>(recon: &Tensor<S>, target: &Tensor<S>) -> Result<(S, Tensor<S>)> {
    let loss = mse_loss(recon, target)?;
    let scale = S::from_f64(2.0 / recon.numel() as f64);
    let mut grad = Tensor::zeros(recon.shape());
    for ((dst, &a), &b) in grad.data_mut().iter_mut().zip(recon.data()).zip(target.data()) {
        *dst = scale * (a - b);
    }
    Ok((loss, grad))
}

/// Binary cross-entropy on the logistic of a scalar logit.
pub fn bce_label_loss<S: Scalar>(class_logit: S, c: u8) -> Result<S> {
    if c > 1 {
        return Err(Error::InvalidValue(format!("label c = {c} is not binary")));
    }
    Ok(bce_with_logits(class_logit, S::from_f64(c as f64)))
}

/// Targets and context for the version losses.
pub struct LossInputs<'a, S: Scalar> {
    /// Uncorrupted branch-A input (reconstruction target for v1-v3 and the
    /// FLAIR target for v2-rec-brain).
    pub x_a_clean: &'a Tensor<S>,
    /// Branch-B input; the bottleneck reconstruction target.
    pub x_b: &'a Tensor<S>,
    /// Binary mask, or {0,1,2} label map for the brain versions.
    pub y: &'a Tensor<S>,
    /// Tumor-presence label.
    pub c: u8,
    /// Fusion weight for v4.
    pub theta: Option<S>,
}

fn brain_target_tensors<S: Scalar>(y: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let mut edema = Tensor::zeros(y.shape());
    let mut core = Tensor::zeros(y.shape());
    let mut whole = Tensor::zeros(y.shape());
    for (i, &v) in y.data().iter().enumerate() {
        let f = v.to_f64();
        if f != 0.0 && f != 1.0 && f != 2.0 {
            return Err(Error::InvalidValue(format!("brain label {f} outside {{0,1,2}}")));
        }
        if f == 1.0 {
            edema.data_mut()[i] = S::ONE;
        }
        if f == 2.0 {
            core.data_mut()[i] = S::ONE;
        }
        if f >= 1.0 {
            whole.data_mut()[i] = S::ONE;
        }
    }
    Ok((edema, core, whole))
}

/// Composes the version objective and its output gradients.
pub fn version_loss_with_grads<S: Scalar>(
    version: Version,
    outputs: &BranchOutputs<S>,
    inputs: &LossInputs<'_, S>,
    weights: &LossWeights,
) -> Result<(LossBreakdown<S>, OutputGrads<S>)> {
    let lr = S::from_f64(weights.lambda_rec);
    let ls = S::from_f64(weights.lambda_seg);
    let lc = S::from_f64(weights.lambda_class);
    let mut b = LossBreakdown::zeroed();
    let mut grads = OutputGrads {
        d_out_a: Tensor::zeros(outputs.out_a.shape()),
        d_out_b: Tensor::zeros(outputs.out_b.shape()),
        d_out_btl: None,
        d_class_logit: None,
        d_theta: None,
    };

    match version {
        Version::V1 | Version::V2 | Version::V3 => {
            let (rec, mut d_rec) = mse_with_grad(&outputs.out_a, inputs.x_a_clean)?;
            let (seg, mut d_seg) = dice_ce_with_grad(&outputs.out_b, inputs.y)?;
            b.rec_branch = rec;
            b.has_rec_branch = true;
            b.seg = seg;
            b.has_seg = true;
            b.total = lr * rec + ls * seg;
            d_rec.scale(lr);
            grads.d_out_a = d_rec;
            d_seg.scale(ls);
            grads.d_out_b = d_seg;

            if version != Version::V1 {
                let out_btl = outputs
                    .out_btl
                    .as_ref()
                    .ok_or(Error::MissingOutput("out_btl"))?;
                let (rb, mut d_rb) = mse_with_grad(out_btl, inputs.x_b)?;
                b.rec_btl = rb;
                b.has_rec_btl = true;
                b.total += lr * rb;
                d_rb.scale(lr);
                grads.d_out_btl = Some(d_rb);
            }
            if version == Version::V3 {
                let logit = outputs
                    .class_logit
                    .ok_or(Error::MissingOutput("class_logit"))?;
                let ct = bce_label_loss(logit, inputs.c)?;
                b.class_term = ct;
                b.has_class = true;
                b.total += lc * ct;
                grads.d_class_logit =
                    Some(lc * (sigmoid(logit) - S::from_f64(inputs.c as f64)));
            }
        }
        Version::V4 => {
            let theta = inputs.theta.ok_or(Error::MissingOutput("theta"))?;
            let fused = fuse_logits(&outputs.out_a, &outputs.out_b, theta)?;
            let (seg, d_fused) = dice_ce_with_grad(&fused, inputs.y)?;
            b.seg = seg;
            b.has_seg = true;
            b.total = seg;
            // d out_a = theta * d_fused; d out_b = (1 - theta) * d_fused;
            // d theta = sum d_fused * (ct - pet).
            let mut d_theta = S::ZERO;
            for (i, &df) in d_fused.data().iter().enumerate() {
                grads.d_out_a.data_mut()[i] = theta * df;
                grads.d_out_b.data_mut()[i] = (S::ONE - theta) * df;
                d_theta += df * (outputs.out_a.data()[i] - outputs.out_b.data()[i]);
            }
            grads.d_theta = Some(d_theta);
        }
        Version::V2Brain => {
            let (edema, core, whole) = brain_target_tensors(inputs.y)?;
            let out_btl = outputs
                .out_btl
                .as_ref()
                .ok_or(Error::MissingOutput("out_btl"))?;
            let (la, mut da) = dice_ce_with_grad(&outputs.out_a, &edema)?;
            let (lb, mut db) = dice_ce_with_grad(&outputs.out_b, &core)?;
            let (lw, mut dw) = dice_ce_with_grad(out_btl, &whole)?;
            b.seg = la + lb;
            b.has_seg = true;
            b.rec_btl = lw; // bottleneck-term slot holds the whole-tumor Dice-CE
            b.has_rec_btl = true;
            b.total = ls * (la + lb) + ls * lw;
            da.scale(ls);
            db.scale(ls);
            dw.scale(ls);
            grads.d_out_a = da;
            grads.d_out_b = db;
            grads.d_out_btl = Some(dw);
        }
        Version::V2RecBrain => {
            let (edema, core, whole) = brain_target_tensors(inputs.y)?;
            let out_btl = outputs
                .out_btl
                .as_ref()
                .ok_or(Error::MissingOutput("out_btl"))?;
            let (rec, mut d_rec) = mse_with_grad(&outputs.out_a, inputs.x_a_clean)?;
            let (seg, mut d_seg) = dice_ce_multi(&outputs.out_b, &[edema, core, whole])?;
            let (rb, mut d_rb) = mse_with_grad(out_btl, inputs.x_b)?;
            b.rec_branch = rec;
            b.has_rec_branch = true;
            b.seg = seg;
            b.has_seg = true;
            b.rec_btl = rb;
            b.has_rec_btl = true;
            b.total = lr * rec + ls * seg + lr * rb;
            d_rec.scale(lr);
            d_seg.scale(ls);
            d_rb.scale(lr);
            grads.d_out_a = d_rec;
            grads.d_out_b = d_seg;
            grads.d_out_btl = Some(d_rb);
        }
    }
    Ok((b, grads))
}

/// Loss values only.
pub fn version_loss<S: Scalar>(
    version: Version,
    outputs: &BranchOutputs<S>,
    inputs: &LossInputs<'_, S>,
    weights: &LossWeights,
) -> Result<LossBreakdown<S>> {
    version_loss_with_grads(version, outputs, inputs, weights).map(|(b, _)| b)
}
