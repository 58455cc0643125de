//! Building blocks shared by the mirror model and the fusion baselines.
//!
//! A stage block is two 3x3x3 convolutions, each followed by instance
//! normalization and SiLU; the first convolution carries the stage's
//! stride. Decoder stages run on nearest-neighbor x2 upsampled input,
//! concatenated with the matching encoder skip where skips exist.

use crate::nn::conv::{conv3d_backward, conv3d_forward, ConvSpec};
use crate::nn::norm::{instance_norm_backward, instance_norm_forward, NormCache};
use crate::nn::ops::{silu_backward, silu_forward};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub weight: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub spec: ConvSpec,
}

pub struct UnitCache<S: Scalar> {
    x_in: Tensor<S>,
    norm: NormCache<S>,
    act_in: Tensor<S>,
}

impl ConvUnit {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        idx: usize,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let k = 3;
        let fan_in = in_ch * k * k * k;
        let weight = store.add_weight(
            format!("{prefix}.conv{idx}.weight"),
            &[out_ch, in_ch, k, k, k],
            fan_in,
            rng,
        );
        let bias = store.add_zeros(format!("{prefix}.conv{idx}.bias"), &[out_ch]);
        let gamma = store.add_full(format!("{prefix}.norm{idx}.gamma"), &[out_ch], S::ONE);
        let beta = store.add_zeros(format!("{prefix}.norm{idx}.beta"), &[out_ch]);
        ConvUnit {
            weight,
            bias,
            gamma,
            beta,
            spec: ConvSpec {
                in_ch,
                out_ch,
                ksize: k,
                stride,
                pad: 1,
            },
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: Tensor<S>,
    ) -> (Tensor<S>, UnitCache<S>) {
        let z = conv3d_forward(&x, store.get(self.weight), store.get(self.bias), &self.spec);
        let (a, norm) = instance_norm_forward(&z, store.get(self.gamma), store.get(self.beta));
        let y = silu_forward(&a);
        (
            y,
            UnitCache {
                x_in: x,
                norm,
                act_in: a,
            },
        )
    }

    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &UnitCache<S>,
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let da = silu_backward(&cache.act_in, dy);
        let dz = {
            let gamma = store.get(self.gamma).clone();
            let mut dgamma = Tensor::zeros(&[self.spec.out_ch]);
            let mut dbeta = Tensor::zeros(&[self.spec.out_ch]);
            let dz = instance_norm_backward(&cache.norm, &gamma, &da, &mut dgamma, &mut dbeta);
            store.grad_mut(self.gamma).add_assign(&dgamma);
            store.grad_mut(self.beta).add_assign(&dbeta);
            dz
        };
        let w = store.get(self.weight).clone();
        let mut dw = Tensor::zeros(w.shape());
        let mut db = Tensor::zeros(&[self.spec.out_ch]);
        let dx = conv3d_backward(&cache.x_in, &w, &dz, &self.spec, &mut dw, &mut db);
        store.grad_mut(self.weight).add_assign(&dw);
        store.grad_mut(self.bias).add_assign(&db);
        dx
    }

    fn push_names(&self, prefix: &str, idx: usize, out: &mut Vec<(String, ParamId)>) {
        out.push((format!("{prefix}.conv{idx}.weight"), self.weight));
        out.push((format!("{prefix}.conv{idx}.bias"), self.bias));
        out.push((format!("{prefix}.norm{idx}.gamma"), self.gamma));
        out.push((format!("{prefix}.norm{idx}.beta"), self.beta));
    }

    fn ids(&self, out: &mut Vec<ParamId>) {
        out.extend([self.weight, self.bias, self.gamma, self.beta]);
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub u1: ConvUnit,
    pub u2: ConvUnit,
}

pub struct BlockCache<S: Scalar> {
    c1: UnitCache<S>,
    c2: UnitCache<S>,
}

impl Block {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        Block {
            u1: ConvUnit::new(store, prefix, 1, in_ch, out_ch, stride, rng),
            u2: ConvUnit::new(store, prefix, 2, out_ch, out_ch, 1, rng),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: Tensor<S>,
    ) -> (Tensor<S>, BlockCache<S>) {
        let (h, c1) = self.u1.forward(store, x);
        let (y, c2) = self.u2.forward(store, h);
        (y, BlockCache { c1, c2 })
    }

    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &BlockCache<S>,
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let dh = self.u2.backward(store, &cache.c2, dy);
        self.u1.backward(store, &cache.c1, &dh)
    }

    pub fn push_names(&self, prefix: &str, out: &mut Vec<(String, ParamId)>) {
        self.u1.push_names(prefix, 1, out);
        self.u2.push_names(prefix, 2, out);
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = Vec::with_capacity(8);
        self.u1.ids(&mut v);
        self.u2.ids(&mut v);
        v
    }
}

/// Stage block plus 1x1x1 projection to the output channels.
#[derive(Debug, Clone)]
pub struct Head {
    pub block: Block,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    proj_spec: ConvSpec,
}

pub struct HeadCache<S: Scalar> {
    block: BlockCache<S>,
    proj_in: Tensor<S>,
}

impl Head {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
        rng: &mut Rng,
    ) -> Self {
        let block = Block::new(store, &format!("{prefix}.head"), in_ch, mid_ch, 1, rng);
        let proj_w = store.add_weight(
            format!("{prefix}.head.proj.weight"),
            &[out_ch, mid_ch, 1, 1, 1],
            mid_ch,
            rng,
        );
        let proj_b = store.add_zeros(format!("{prefix}.head.proj.bias"), &[out_ch]);
        Head {
            block,
            proj_w,
            proj_b,
            proj_spec: ConvSpec {
                in_ch: mid_ch,
                out_ch,
                ksize: 1,
                stride: 1,
                pad: 0,
            },
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: Tensor<S>,
    ) -> (Tensor<S>, HeadCache<S>) {
        let (h, block) = self.block.forward(store, x);
        let y = conv3d_forward(
            &h,
            store.get(self.proj_w),
            store.get(self.proj_b),
            &self.proj_spec,
        );
        (
            y,
            HeadCache {
                block,
                proj_in: h,
            },
        )
    }

    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &HeadCache<S>,
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let w = store.get(self.proj_w).clone();
        let mut dw = Tensor::zeros(w.shape());
        let mut db = Tensor::zeros(&[self.proj_spec.out_ch]);
        let dh = conv3d_backward(&cache.proj_in, &w, dy, &self.proj_spec, &mut dw, &mut db);
        store.grad_mut(self.proj_w).add_assign(&dw);
        store.grad_mut(self.proj_b).add_assign(&db);
        self.block.backward(store, &cache.block, &dh)
    }

    pub fn push_names(&self, prefix: &str, out: &mut Vec<(String, ParamId)>) {
        self.block.push_names(&format!("{prefix}.head"), out);
        out.push((format!("{prefix}.head.proj.weight"), self.proj_w));
        out.push((format!("{prefix}.head.proj.bias"), self.proj_b));
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.block.ids();
        v.push(self.proj_w);
        v.push(self.proj_b);
        v
    }
}

/// Full 8-stage branch: stages 1-5 encode (stride-2 from stage 2 on),
/// stages 6-8 decode with skip concatenation, and the non-indexed head
/// restores full resolution and projects to `out_ch`.
#[derive(Debug, Clone)]
pub struct Branch {
    pub stages: Vec<Block>,
    pub head: Head,
    pub widths: [usize; 5],
}

pub struct BranchCache<S: Scalar> {
    block: Vec<BlockCache<S>>,
    /// Encoder outputs e1..e5; e5 doubles as the bottleneck feature map.
    pub enc_outs: Vec<Tensor<S>>,
    head: HeadCache<S>,
}

impl<S: Scalar> BranchCache<S> {
    pub fn bottleneck(&self) -> &Tensor<S> {
        &self.enc_outs[4]
    }
}

impl Branch {
    /// Builds a branch; when `tie` is given, stages whose 1-based index is
    /// in the set reuse the other branch's parameter storage.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        widths: [usize; 5],
        rng: &mut Rng,
        tie: Option<(&Branch, &std::collections::BTreeSet<usize>)>,
    ) -> Self {
        let [w1, w2, w3, w4, w5] = widths;
        // (in, out, stride) for stages 1..=8.
        let dims = [
            (in_ch, w1, 1),
            (w1, w2, 2),
            (w2, w3, 2),
            (w3, w4, 2),
            (w4, w5, 2),
            (w5 + w4, w4, 1),
            (w4 + w3, w3, 1),
            (w3 + w2, w2, 1),
        ];
        let mut stages = Vec::with_capacity(8);
        for (i, &(ci, co, stride)) in dims.iter().enumerate() {
            let stage_no = i + 1;
            let tied = tie
                .as_ref()
                .filter(|(_, set)| set.contains(&stage_no))
                .map(|(other, _)| other.stages[i].clone());
            match tied {
                Some(block) => stages.push(block),
                None => stages.push(Block::new(
                    store,
                    &format!("{prefix}.stage{stage_no}"),
                    ci,
                    co,
                    stride,
                    rng,
                )),
            }
        }
        let head = Head::new(store, prefix, w2 + w1, w1, out_ch, rng);
        Branch {
            stages,
            head,
            widths,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: Tensor<S>,
    ) -> (Tensor<S>, BranchCache<S>) {
        use crate::nn::ops::{concat_channels, upsample2_forward};
        let mut block_caches = Vec::with_capacity(8);
        let mut enc_outs = Vec::with_capacity(5);

        let mut cur = x;
        for i in 0..5 {
            let (y, c) = self.stages[i].forward(store, cur);
            block_caches.push(c);
            enc_outs.push(y.clone());
            cur = y;
        }
        // cur is e5; decoder stage (i+1) takes its skip from encoder
        // stage 10-(i+1): stage6 <- e4, stage7 <- e3, stage8 <- e2.
        for i in 5..8 {
            let up = upsample2_forward(&cur);
            let skip = &enc_outs[8 - i];
            let cat = concat_channels(&up, skip);
            let (y, c) = self.stages[i].forward(store, cat);
            block_caches.push(c);
            cur = y;
        }
        let up = upsample2_forward(&cur);
        let cat = concat_channels(&up, &enc_outs[0]);
        let (out, head) = self.head.forward(store, cat);
        (
            out,
            BranchCache {
                block: block_caches,
                enc_outs,
                head,
            },
        )
    }

    /// Backpropagates from the head output; `d_bottleneck_extra` carries
    /// gradient contributions that other consumers (bottleneck decoder,
    /// classifier) send into this branch's stage-5 output. Returns dx.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &BranchCache<S>,
        d_out: &Tensor<S>,
        d_bottleneck_extra: Option<&Tensor<S>>,
    ) -> Tensor<S> {
        use crate::nn::ops::{split_channels, upsample2_backward};
        let [_w1, w2, w3, w4, w5] = self.widths;

        // Head: its concat was (up(d8) [w2] | e1 [w1]).
        let d_cat = self.head.backward(store, &cache.head, d_out);
        let (d_up, d_e1_skip) = split_channels(&d_cat, w2);
        let mut d_skips: [Option<Tensor<S>>; 5] = [None, None, None, None, None];
        d_skips[0] = Some(d_e1_skip);
        // d8 has the same shape as stage 8's activation cache.
        let mut d_cur = upsample2_backward(&d_up, cache.block[7].c2.act_in.shape());

        // Decoder stages 8, 7, 6: concat was (up(prev) [up_w] | e_k [skip_w]).
        for i in (5..8).rev() {
            let d_cat = self.stages[i].backward(store, &cache.block[i], &d_cur);
            let up_w = match i {
                5 => w5,
                6 => w4,
                7 => w3,
                _ => unreachable!(),
            };
            let (d_up, d_skip) = split_channels(&d_cat, up_w);
            d_skips[8 - i] = Some(d_skip); // e4 -> idx 3, e3 -> 2, e2 -> 1
            let prev_shape = if i == 5 {
                cache.enc_outs[4].shape()
            } else {
                cache.block[i - 1].c2.act_in.shape()
            };
            d_cur = upsample2_backward(&d_up, prev_shape);
        }

        // d_cur is now the decoder's gradient into e5.
        if let Some(extra) = d_bottleneck_extra {
            d_cur.add_assign(extra);
        }

        // Encoder stages 5..1, merging skip gradients.
        for i in (0..5).rev() {
            let mut dy = d_cur;
            if let Some(d_skip) = d_skips[i].take() {
                dy.add_assign(&d_skip);
            }
            d_cur = self.stages[i].backward(store, &cache.block[i], &dy);
        }
        d_cur
    }

    pub fn push_names(&self, prefix: &str, out: &mut Vec<(String, ParamId)>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.push_names(&format!("{prefix}.stage{}", i + 1), out);
        }
        self.head.push_names(prefix, out);
    }

    pub fn stage_ids(&self, stage_no: usize) -> Vec<ParamId> {
        self.stages[stage_no - 1].ids()
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.stages.iter().flat_map(|s| s.ids()).collect();
        v.extend(self.head.ids());
        v
    }
}
