//! Fusion baselines sharing the mirror model's backbone: unimodal CT/PET,
//! early fusion (channel concatenation at the input), middle fusion (dual
//! encoders into one decoder), and the late-fusion pair of independently
//! trained unimodal models.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::TilePredictor;
use crate::model::blocks::{Block, BlockCache, Branch, BranchCache, Head, HeadCache};
use crate::model::checkpoint::{read_named, write_named};
use crate::nn::ops::{
    concat_channels, sigmoid, split_channels, upsample2_backward, upsample2_forward,
};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    UnimodalCt,
    UnimodalPet,
    EarlyFusion,
    MiddleFusion,
    /// The pair of independently trained unimodal models; the combination
    /// rule lives in `inference::late_fuse`.
    LateFusionBase,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unimodal_ct" | "ct" => Ok(BaselineKind::UnimodalCt),
            "unimodal_pet" | "pet" => Ok(BaselineKind::UnimodalPet),
            "early_fusion" | "ef" => Ok(BaselineKind::EarlyFusion),
            "middle_fusion" | "mf" => Ok(BaselineKind::MiddleFusion),
            "late_fusion_base" | "lf" => Ok(BaselineKind::LateFusionBase),
            other => Err(Error::InvalidConfig(format!("unknown baseline '{other}'"))),
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineKind::UnimodalCt => "unimodal_ct",
            BaselineKind::UnimodalPet => "unimodal_pet",
            BaselineKind::EarlyFusion => "early_fusion",
            BaselineKind::MiddleFusion => "middle_fusion",
            BaselineKind::LateFusionBase => "late_fusion_base",
        })
    }
}

/// Five encoder stages (the downsampling half of a branch).
#[derive(Clone)]
struct EncoderStages {
    stages: Vec<Block>,
}

pub struct EncoderCache<S: Scalar> {
    block: Vec<BlockCache<S>>,
    outs: Vec<Tensor<S>>,
}

impl EncoderStages {
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        in_ch: usize,
        widths: [usize; 5],
        rng: &mut Rng,
    ) -> Self {
        let [w1, w2, w3, w4, w5] = widths;
        let dims = [
            (in_ch, w1, 1),
            (w1, w2, 2),
            (w2, w3, 2),
            (w3, w4, 2),
            (w4, w5, 2),
        ];
        EncoderStages {
            stages: dims
                .iter()
                .enumerate()
                .map(|(i, &(ci, co, s))| {
                    Block::new(store, &format!("{prefix}.stage{}", i + 1), ci, co, s, rng)
                })
                .collect(),
        }
    }

    fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: Tensor<S>) -> EncoderCache<S> {
        let mut block = Vec::with_capacity(5);
        let mut outs = Vec::with_capacity(5);
        let mut cur = x;
        for s in &self.stages {
            let (y, c) = s.forward(store, cur);
            block.push(c);
            outs.push(y.clone());
            cur = y;
        }
        EncoderCache { block, outs }
    }

    /// `d_outs[i]` is the gradient flowing into encoder output i (skips and
    /// the bottleneck); entries are consumed deepest-first.
    fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &EncoderCache<S>,
        mut d_outs: [Option<Tensor<S>>; 5],
    ) {
        let mut d_cur: Option<Tensor<S>> = None;
        for i in (0..5).rev() {
            let mut dy = match d_cur.take() {
                Some(d) => d,
                None => Tensor::zeros(cache.outs[i].shape()),
            };
            if let Some(extra) = d_outs[i].take() {
                dy.add_assign(&extra);
            }
            d_cur = Some(self.stages[i].backward(store, &cache.block[i], &dy));
        }
    }

    fn push_names(&self, prefix: &str, out: &mut Vec<(String, ParamId)>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.push_names(&format!("{prefix}.stage{}", i + 1), out);
        }
    }
}

/// Decoder half consuming a (possibly widened) bottleneck plus skips.
#[derive(Clone)]
struct FusedDecoder {
    s6: Block,
    s7: Block,
    s8: Block,
    head: Head,
    widths: [usize; 5],
}

pub struct FusedDecoderCache<S: Scalar> {
    c6: BlockCache<S>,
    c7: BlockCache<S>,
    c8: BlockCache<S>,
    head: HeadCache<S>,
    in_shape: Vec<usize>,
    mid_shapes: [Vec<usize>; 2],
}

impl FusedDecoder {
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        bottleneck_ch: usize,
        widths: [usize; 5],
        out_ch: usize,
        rng: &mut Rng,
    ) -> Self {
        let [w1, w2, w3, w4, _] = widths;
        FusedDecoder {
            s6: Block::new(store, &format!("{prefix}.stage6"), bottleneck_ch + w4, w4, 1, rng),
            s7: Block::new(store, &format!("{prefix}.stage7"), w4 + w3, w3, 1, rng),
            s8: Block::new(store, &format!("{prefix}.stage8"), w3 + w2, w2, 1, rng),
            head: Head::new(store, prefix, w2 + w1, w1, out_ch, rng),
            widths,
        }
    }

    fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        bottleneck: &Tensor<S>,
        skips: &[Tensor<S>; 4],
    ) -> (Tensor<S>, FusedDecoderCache<S>) {
        let in_shape = bottleneck.shape().to_vec();
        let (d6, c6) = self
            .s6
            .forward(store, concat_channels(&upsample2_forward(bottleneck), &skips[3]));
        let s6_shape = d6.shape().to_vec();
        let (d7, c7) = self
            .s7
            .forward(store, concat_channels(&upsample2_forward(&d6), &skips[2]));
        let s7_shape = d7.shape().to_vec();
        let (d8, c8) = self
            .s8
            .forward(store, concat_channels(&upsample2_forward(&d7), &skips[1]));
        let (out, head) = self
            .head
            .forward(store, concat_channels(&upsample2_forward(&d8), &skips[0]));
        (
            out,
            FusedDecoderCache {
                c6,
                c7,
                c8,
                head,
                in_shape,
                mid_shapes: [s6_shape, s7_shape],
            },
        )
    }

    /// Returns (d_bottleneck, d_skips).
    fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &FusedDecoderCache<S>,
        d_out: &Tensor<S>,
    ) -> (Tensor<S>, [Tensor<S>; 4]) {
        let [w1, w2, w3, w4, _] = self.widths;
        let _ = w1;
        let d_cat = self.head.backward(store, &cache.head, d_out);
        let (d_up, d_skip1) = split_channels(&d_cat, w2);
        let d8_shape: Vec<usize> = {
            // d8 has w2 channels at half resolution of the head input.
            let s = d_up.shape();
            vec![w2, s[1] / 2, s[2] / 2, s[3] / 2]
        };
        let d_d8 = upsample2_backward(&d_up, &d8_shape);

        let d_cat = self.s8.backward(store, &cache.c8, &d_d8);
        let (d_up, d_skip2) = split_channels(&d_cat, w3);
        let d_d7 = upsample2_backward(&d_up, &cache.mid_shapes[1]);

        let d_cat = self.s7.backward(store, &cache.c7, &d_d7);
        let (d_up, d_skip3) = split_channels(&d_cat, w4);
        let d_d6 = upsample2_backward(&d_up, &cache.mid_shapes[0]);

        let d_cat = self.s6.backward(store, &cache.c6, &d_d6);
        let bottleneck_ch = cache.in_shape[0];
        let (d_up, d_skip4) = split_channels(&d_cat, bottleneck_ch);
        let d_bottleneck = upsample2_backward(&d_up, &cache.in_shape);

        (d_bottleneck, [d_skip1, d_skip2, d_skip3, d_skip4])
    }

    fn push_names(&self, prefix: &str, out: &mut Vec<(String, ParamId)>) {
        self.s6.push_names(&format!("{prefix}.stage6"), out);
        self.s7.push_names(&format!("{prefix}.stage7"), out);
        self.s8.push_names(&format!("{prefix}.stage8"), out);
        self.head.push_names(prefix, out);
    }
}

#[derive(Clone)]
enum Arch {
    /// One branch reading CT, PET, or the 2-channel concatenation.
    Single(Branch),
    /// Dual encoders, concatenated bottleneck, averaged skips, one decoder.
    Middle {
        enc_a: EncoderStages,
        enc_b: EncoderStages,
        decoder: FusedDecoder,
    },
}

#[derive(Clone)]
pub struct BaselineModel<S: Scalar> {
    pub kind: BaselineKind,
    pub store: ParamStore<S>,
    pub widths: [usize; 5],
    pub seed: u64,
    arch: Arch,
}

pub enum BaselineCache<S: Scalar> {
    Single(BranchCache<S>),
    Middle {
        ca: EncoderCache<S>,
        cb: EncoderCache<S>,
        cd: FusedDecoderCache<S>,
    },
}

/// Builds a baseline with the same backbone widths as the mirror model.
/// `LateFusionBase` is a pair of models; build its two halves separately
/// (`UnimodalCt`, `UnimodalPet`) and combine predictions at inference.
pub fn build_baseline<S: Scalar>(
    kind: BaselineKind,
    widths: [usize; 5],
    seed: u64,
) -> Result<BaselineModel<S>> {
    if kind == BaselineKind::LateFusionBase {
        return Err(Error::InvalidConfig(
            "late_fusion_base is a pair: build unimodal_ct and unimodal_pet and fuse at inference"
                .into(),
        ));
    }
    let mut store = ParamStore::new();
    let root = Rng::new(seed);
    let arch = match kind {
        BaselineKind::UnimodalCt | BaselineKind::UnimodalPet => {
            let mut rng = root.fork(1);
            Arch::Single(Branch::new(&mut store, "model", 1, 1, widths, &mut rng, None))
        }
        BaselineKind::EarlyFusion => {
            let mut rng = root.fork(1);
            Arch::Single(Branch::new(&mut store, "model", 2, 1, widths, &mut rng, None))
        }
        BaselineKind::MiddleFusion => {
            let mut rng = root.fork(1);
            let enc_a = EncoderStages::new(&mut store, "encoderA", 1, widths, &mut rng);
            let mut rng_b = root.fork(2);
            let enc_b = EncoderStages::new(&mut store, "encoderB", 1, widths, &mut rng_b);
            let mut rng_d = root.fork(3);
            let decoder =
                FusedDecoder::new(&mut store, "decoder", 2 * widths[4], widths, 1, &mut rng_d);
            Arch::Middle {
                enc_a,
                enc_b,
                decoder,
            }
        }
        BaselineKind::LateFusionBase => unreachable!(),
    };
    Ok(BaselineModel {
        kind,
        store,
        widths,
        seed,
        arch,
    })
}

impl<S: Scalar> BaselineModel<S> {
    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn named_params(&self) -> Vec<(String, ParamId)> {
        let mut out = Vec::new();
        match &self.arch {
            Arch::Single(b) => b.push_names("model", &mut out),
            Arch::Middle {
                enc_a,
                enc_b,
                decoder,
            } => {
                enc_a.push_names("encoderA", &mut out);
                enc_b.push_names("encoderB", &mut out);
                decoder.push_names("decoder", &mut out);
            }
        }
        out
    }

    /// Segmentation logits for the sample's two modality patches.
    pub fn forward(&self, x_a: &Tensor<S>, x_b: &Tensor<S>) -> Result<(Tensor<S>, BaselineCache<S>)> {
        if x_a.shape() != x_b.shape() {
            return Err(Error::ShapeMismatch(format!(
                "x_A {:?} vs x_B {:?}",
                x_a.shape(),
                x_b.shape()
            )));
        }
        match (&self.arch, self.kind) {
            (Arch::Single(branch), BaselineKind::UnimodalCt) => {
                let (y, c) = branch.forward(&self.store, x_a.clone());
                Ok((y, BaselineCache::Single(c)))
            }
            (Arch::Single(branch), BaselineKind::UnimodalPet) => {
                let (y, c) = branch.forward(&self.store, x_b.clone());
                Ok((y, BaselineCache::Single(c)))
            }
            (Arch::Single(branch), BaselineKind::EarlyFusion) => {
                let (y, c) = branch.forward(&self.store, concat_channels(x_a, x_b));
                Ok((y, BaselineCache::Single(c)))
            }
            (
                Arch::Middle {
                    enc_a,
                    enc_b,
                    decoder,
                },
                _,
            ) => {
                let ca = enc_a.forward(&self.store, x_a.clone());
                let cb = enc_b.forward(&self.store, x_b.clone());
                let bottleneck = concat_channels(&ca.outs[4], &cb.outs[4]);
                // Skip inputs are the voxelwise average of the branch skips.
                let half = S::from_f64(0.5);
                let mut skips: Vec<Tensor<S>> = Vec::with_capacity(4);
                for i in 0..4 {
                    let mut avg = ca.outs[i].clone();
                    avg.scale(half);
                    avg.add_scaled(&cb.outs[i], half);
                    skips.push(avg);
                }
                let skips: [Tensor<S>; 4] = skips.try_into().map_err(|_| {
                    Error::InvalidConfig("middle fusion expects 4 skip levels".into())
                })?;
                let (y, cd) = decoder.forward(&self.store, &bottleneck, &skips);
                Ok((y, BaselineCache::Middle { ca, cb, cd }))
            }
            _ => unreachable!("arch/kind pairing is fixed at build time"),
        }
    }

    pub fn backward(&mut self, cache: &BaselineCache<S>, d_out: &Tensor<S>) {
        match (&self.arch, cache) {
            (Arch::Single(branch), BaselineCache::Single(c)) => {
                branch.backward(&mut self.store, c, d_out, None);
            }
            (
                Arch::Middle {
                    enc_a,
                    enc_b,
                    decoder,
                },
                BaselineCache::Middle { ca, cb, cd },
            ) => {
                let (d_bottleneck, d_skips) = decoder.backward(&mut self.store, cd, d_out);
                let w5 = self.widths[4];
                let (d_e5_a, d_e5_b) = split_channels(&d_bottleneck, w5);
                let half = S::from_f64(0.5);
                let mut d_outs_a: [Option<Tensor<S>>; 5] = [None, None, None, None, None];
                let mut d_outs_b: [Option<Tensor<S>>; 5] = [None, None, None, None, None];
                // d_skips order: [head(e1), s8(e2), s7(e3), s6(e4)].
                for (level, d) in d_skips.iter().enumerate() {
                    let mut h = d.clone();
                    h.scale(half);
                    d_outs_a[level] = Some(h.clone());
                    d_outs_b[level] = Some(h);
                }
                d_outs_a[4] = Some(d_e5_a);
                d_outs_b[4] = Some(d_e5_b);
                enc_a.backward(&mut self.store, ca, d_outs_a);
                enc_b.backward(&mut self.store, cb, d_outs_b);
            }
            _ => unreachable!(),
        }
    }

    pub fn save(&self, extra_meta: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
        let mut meta = vec![
            ("baseline.kind".to_string(), self.kind.to_string()),
            (
                "model.widths".to_string(),
                self.widths
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("model.seed".to_string(), self.seed.to_string()),
        ];
        meta.extend(extra_meta.iter().cloned());
        let named_ids = self.named_params();
        let named: Vec<(String, &Tensor<S>)> = named_ids
            .iter()
            .map(|(n, id)| (n.clone(), self.store.get(*id)))
            .collect();
        write_named(path, &meta, &named)
    }
}

/// Loads a baseline checkpoint written by [`BaselineModel::save`].
pub fn load_baseline_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(BaselineModel<f32>, BTreeMap<String, String>)> {
    let (meta, entries) = read_named(path)?;
    let kind = BaselineKind::parse(
        meta.get("baseline.kind")
            .ok_or_else(|| Error::Checkpoint("missing baseline.kind".into()))?,
    )?;
    let widths_vec: Vec<usize> = meta
        .get("model.widths")
        .ok_or_else(|| Error::Checkpoint("missing model.widths".into()))?
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Checkpoint(format!("bad widths: {e}")))?;
    let mut widths = [0usize; 5];
    widths.copy_from_slice(&widths_vec);
    let seed: u64 = meta
        .get("model.seed")
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut model = build_baseline::<f32>(kind, widths, seed)?;
    for (name, id) in model.named_params() {
        let data = entries
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
        let t = model.store.get_mut(id);
        if t.numel() != data.len() {
            return Err(Error::Checkpoint(format!("size mismatch for '{name}'")));
        }
        t.data_mut().copy_from_slice(data);
    }
    Ok((model, meta))
}

impl TilePredictor for BaselineModel<f32> {
    fn n_outputs(&self) -> usize {
        1
    }

    fn predict_tile(&self, x_a: &Tensor<f32>, x_b: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        let (logits, _) = self.forward(x_a, x_b)?;
        Ok(vec![logits.map(sigmoid)])
    }
}
