//! The mirror model: two modality-specific 8-stage branches joined by
//! parameter tying over a configurable stage set, plus a skip-free
//! bottleneck decoder and a bottleneck classifier on the concatenated
//! stage-5 features.

pub mod blocks;
pub mod checkpoint;

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::nn::linear::Linear;
use crate::nn::ops::{
    concat_channels, gap_backward, gap_forward, sigmoid, silu_backward, silu_forward,
    split_channels, upsample2_backward, upsample2_forward,
};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use blocks::{Block, BlockCache, Branch, BranchCache, Head, HeadCache};

pub use checkpoint::{load_checkpoint, save_checkpoint};

/// Task combination selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Version {
    /// CT-branch reconstruction + PET-branch segmentation.
    V1,
    /// V1 plus the skip-free bottleneck decoder reconstructing PET.
    V2,
    /// V2 plus the binary tumor classifier.
    V3,
    /// Both branches segment; logits fused by a weighted sum.
    V4,
    /// FLAIR edema / T1Gd core segmentation with whole-tumor bottleneck.
    V2Brain,
    /// FLAIR reconstruction / 3-class T1Gd segmentation / T1Gd bottleneck
    /// reconstruction.
    V2RecBrain,
}

impl Version {
    pub fn has_bottleneck_decoder(self) -> bool {
        matches!(
            self,
            Version::V2 | Version::V3 | Version::V2Brain | Version::V2RecBrain
        )
    }

    pub fn has_classifier(self) -> bool {
        self == Version::V3
    }

    pub fn has_theta(self) -> bool {
        self == Version::V4
    }

    pub fn is_brain(self) -> bool {
        matches!(self, Version::V2Brain | Version::V2RecBrain)
    }

    /// Output channels for (branch A, branch B, bottleneck head).
    pub fn head_channels(self) -> (usize, usize, usize) {
        match self {
            Version::V2RecBrain => (1, 3, 1),
            _ => (1, 1, 1),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(Version::V1),
            "v2" => Ok(Version::V2),
            "v3" => Ok(Version::V3),
            "v4" => Ok(Version::V4),
            "v2-brain" => Ok(Version::V2Brain),
            "v2-rec-brain" => Ok(Version::V2RecBrain),
            other => Err(Error::InvalidConfig(format!("unknown version '{other}'"))),
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Version::V1 => "v1",
            Version::V2 => "v2",
            Version::V3 => "v3",
            Version::V4 => "v4",
            Version::V2Brain => "v2-brain",
            Version::V2RecBrain => "v2-rec-brain",
        };
        f.write_str(s)
    }
}

/// Set of 1-based stage indices whose parameters are tied across branches.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StageIndexSet(BTreeSet<usize>);

impl StageIndexSet {
    pub fn empty() -> Self {
        StageIndexSet(BTreeSet::new())
    }

    pub fn new(indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        for &i in &set {
            if !(1..=8).contains(&i) {
                return Err(Error::InvalidStageIndex(i));
            }
        }
        Ok(StageIndexSet(set))
    }

    /// Parses "5", "3,4,5", "{4,5,6}", or "" (empty set).
    pub fn parse(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('{').trim_end_matches('}');
        if trimmed.is_empty() {
            return Ok(StageIndexSet::empty());
        }
        let mut indices = Vec::new();
        for part in trimmed.split(',') {
            let idx: usize = part
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad stage index '{part}'")))?;
            indices.push(idx);
        }
        StageIndexSet::new(indices)
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.0.contains(&idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_set(&self) -> &BTreeSet<usize> {
        &self.0
    }
}

impl fmt::Display for StageIndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Fusion weight for v4: fixed in [0,1] or learned through a logistic
/// reparameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaSetting {
    Fixed(f64),
    Learnable,
}

impl ThetaSetting {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "learnable" {
            return Ok(ThetaSetting::Learnable);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad theta '{s}'")))?;
        Ok(ThetaSetting::Fixed(v))
    }
}

impl fmt::Display for ThetaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaSetting::Fixed(v) => write!(f, "{v}"),
            ThetaSetting::Learnable => f.write_str("learnable"),
        }
    }
}

pub const DEFAULT_STAGE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];
/// Hidden width of the bottleneck classifier's perceptron.
pub const CLASSIFIER_HIDDEN: usize = 64;
/// Initial fusion weight for the learnable-theta reparameterization.
pub const THETA_INIT: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub version: Version,
    pub shared: StageIndexSet,
    pub theta: Option<ThetaSetting>,
    pub stage_widths: [usize; 5],
    pub in_patch: (usize, usize, usize),
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            version: Version::V2,
            shared: StageIndexSet::new([5]).expect("5 is a valid stage index"),
            theta: None,
            stage_widths: DEFAULT_STAGE_WIDTHS,
            in_patch: (96, 96, 96),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for d in [self.in_patch.0, self.in_patch.1, self.in_patch.2] {
            if d % 16 != 0 || d == 0 {
                return Err(Error::PatchNotDivisible(d));
            }
        }
        if self.version.has_theta() != self.theta.is_some() {
            return Err(Error::InvalidConfig(format!(
                "theta must be present exactly for v4; version {} has theta {:?}",
                self.version, self.theta
            )));
        }
        if let Some(ThetaSetting::Fixed(v)) = self.theta {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("theta {v} outside [0,1]")));
            }
        }
        if self.stage_widths.contains(&0) {
            return Err(Error::InvalidConfig("zero stage width".into()));
        }
        Ok(())
    }
}

/// Per-forward outputs; presence of the optional parts follows the version.
#[derive(Debug, Clone)]
pub struct BranchOutputs<S: Scalar> {
    pub out_a: Tensor<S>,
    pub out_b: Tensor<S>,
    pub out_btl: Option<Tensor<S>>,
    pub class_logit: Option<S>,
}

/// Skip-free decoder over the concatenated bottleneck features.
#[derive(Clone)]
struct BtlDecoder {
    s6: Block,
    s7: Block,
    s8: Block,
    head: Head,
}

struct BtlCache<S: Scalar> {
    input_shape: Vec<usize>,
    c6: BlockCache<S>,
    c7: BlockCache<S>,
    c8: BlockCache<S>,
    head: HeadCache<S>,
    shapes: [Vec<usize>; 3],
}

impl BtlDecoder {
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        widths: [usize; 5],
        out_ch: usize,
        rng: &mut Rng,
    ) -> Self {
        let [w1, w2, w3, w4, w5] = widths;
        BtlDecoder {
            s6: Block::new(store, "btl.stage6", 2 * w5, w4, 1, rng),
            s7: Block::new(store, "btl.stage7", w4, w3, 1, rng),
            s8: Block::new(store, "btl.stage8", w3, w2, 1, rng),
            head: Head::new(store, "btl", w2, w1, out_ch, rng),
        }
    }

    fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        shared: &Tensor<S>,
    ) -> (Tensor<S>, BtlCache<S>) {
        let input_shape = shared.shape().to_vec();
        let (b6, c6) = self.s6.forward(store, upsample2_forward(shared));
        let s6_shape = b6.shape().to_vec();
        let (b7, c7) = self.s7.forward(store, upsample2_forward(&b6));
        let s7_shape = b7.shape().to_vec();
        let (b8, c8) = self.s8.forward(store, upsample2_forward(&b7));
        let s8_shape = b8.shape().to_vec();
        let (out, head) = self.head.forward(store, upsample2_forward(&b8));
        (
            out,
            BtlCache {
                input_shape,
                c6,
                c7,
                c8,
                head,
                shapes: [s6_shape, s7_shape, s8_shape],
            },
        )
    }

    /// Returns the gradient w.r.t. the concatenated bottleneck features.
    fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &BtlCache<S>,
        d_out: &Tensor<S>,
    ) -> Tensor<S> {
        let d = self.head.backward(store, &cache.head, d_out);
        let d = upsample2_backward(&d, &cache.shapes[2]);
        let d = self.s8.backward(store, &cache.c8, &d);
        let d = upsample2_backward(&d, &cache.shapes[1]);
        let d = self.s7.backward(store, &cache.c7, &d);
        let d = upsample2_backward(&d, &cache.shapes[0]);
        let d = self.s6.backward(store, &cache.c6, &d);
        upsample2_backward(&d, &cache.input_shape)
    }

    fn push_names(&self, out: &mut Vec<(String, ParamId)>) {
        self.s6.push_names("btl.stage6", out);
        self.s7.push_names("btl.stage7", out);
        self.s8.push_names("btl.stage8", out);
        self.head.push_names("btl", out);
    }

    fn all_ids(&self) -> Vec<ParamId> {
        let mut v = self.s6.ids();
        v.extend(self.s7.ids());
        v.extend(self.s8.ids());
        v.extend(self.head.ids());
        v
    }
}

/// Global average pooling over the shared features, then a two-layer
/// perceptron emitting one logit.
#[derive(Clone)]
struct Classifier {
    fc1: Linear,
    fc2: Linear,
}

struct ClassifierCache<S: Scalar> {
    input_shape: Vec<usize>,
    gap_out: Tensor<S>,
    fc1_out: Tensor<S>,
}

impl Classifier {
    fn new<S: Scalar>(store: &mut ParamStore<S>, in_ch: usize, rng: &mut Rng) -> Self {
        Classifier {
            fc1: Linear::new(store, "classifier.fc1", in_ch, CLASSIFIER_HIDDEN, rng),
            fc2: Linear::new(store, "classifier.fc2", CLASSIFIER_HIDDEN, 1, rng),
        }
    }

    fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        shared: &Tensor<S>,
    ) -> (S, ClassifierCache<S>) {
        let gap_out = gap_forward(shared);
        let fc1_out = self.fc1.forward(store, &gap_out);
        let act = silu_forward(&fc1_out);
        let logit = self.fc2.forward(store, &act).data()[0];
        (
            logit,
            ClassifierCache {
                input_shape: shared.shape().to_vec(),
                gap_out,
                fc1_out,
            },
        )
    }

    fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &ClassifierCache<S>,
        d_logit: S,
    ) -> Tensor<S> {
        let act = silu_forward(&cache.fc1_out);
        let d_act = self
            .fc2
            .backward(store, &act, &Tensor::from_vec(&[1], vec![d_logit]));
        let d_fc1 = silu_backward(&cache.fc1_out, &d_act);
        let d_gap = self.fc1.backward(store, &cache.gap_out, &d_fc1);
        gap_backward(&d_gap, &cache.input_shape)
    }

    fn push_names(&self, out: &mut Vec<(String, ParamId)>) {
        out.push(("classifier.fc1.weight".into(), self.fc1.weight));
        out.push(("classifier.fc1.bias".into(), self.fc1.bias));
        out.push(("classifier.fc2.weight".into(), self.fc2.weight));
        out.push(("classifier.fc2.bias".into(), self.fc2.bias));
    }

    fn all_ids(&self) -> Vec<ParamId> {
        vec![
            self.fc1.weight,
            self.fc1.bias,
            self.fc2.weight,
            self.fc2.bias,
        ]
    }
}

#[derive(Clone)]
pub struct MirrorUNet<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    branch_a: Branch,
    branch_b: Branch,
    btl: Option<BtlDecoder>,
    classifier: Option<Classifier>,
    theta_rho: Option<ParamId>,
}

pub struct ForwardCache<S: Scalar> {
    cache_a: BranchCache<S>,
    cache_b: BranchCache<S>,
    btl: Option<BtlCache<S>>,
    classifier: Option<ClassifierCache<S>>,
    bottleneck_width: usize,
}

/// Gradients of the loss w.r.t. each model output.
#[derive(Debug, Clone)]
pub struct OutputGrads<S: Scalar> {
    pub d_out_a: Tensor<S>,
    pub d_out_b: Tensor<S>,
    pub d_out_btl: Option<Tensor<S>>,
    pub d_class_logit: Option<S>,
    /// Gradient w.r.t. theta (v4 with a learnable fusion weight).
    pub d_theta: Option<S>,
}

/// Builds the model with deterministic initialization from `config.seed`.
pub fn build_model<S: Scalar>(config: &ModelConfig) -> Result<MirrorUNet<S>> {
    config.validate()?;
    let mut store = ParamStore::new();
    let root = Rng::new(config.seed);
    let (ch_a, ch_b, ch_btl) = config.version.head_channels();

    let mut rng_a = root.fork(1);
    let branch_a = Branch::new(
        &mut store,
        "branchA",
        1,
        ch_a,
        config.stage_widths,
        &mut rng_a,
        None,
    );
    let mut rng_b = root.fork(2);
    let branch_b = Branch::new(
        &mut store,
        "branchB",
        1,
        ch_b,
        config.stage_widths,
        &mut rng_b,
        Some((&branch_a, config.shared.as_set())),
    );

    let btl = if config.version.has_bottleneck_decoder() {
        let mut rng = root.fork(3);
        Some(BtlDecoder::new(
            &mut store,
            config.stage_widths,
            ch_btl,
            &mut rng,
        ))
    } else {
        None
    };

    let classifier = if config.version.has_classifier() {
        let mut rng = root.fork(4);
        Some(Classifier::new(
            &mut store,
            2 * config.stage_widths[4],
            &mut rng,
        ))
    } else {
        None
    };

    let theta_rho = match config.theta {
        Some(ThetaSetting::Learnable) => {
            let rho0 = (THETA_INIT / (1.0 - THETA_INIT)).ln();
            Some(store.add("fusion.rho", false, Tensor::from_vec(&[1], vec![S::from_f64(rho0)])))
        }
        _ => None,
    };

    Ok(MirrorUNet {
        config: config.clone(),
        store,
        branch_a,
        branch_b,
        btl,
        classifier,
        theta_rho,
    })
}

impl<S: Scalar> MirrorUNet<S> {
    /// Total number of scalar parameters; tied storage is counted once.
    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Scalar count of one branch stage, for parameter accounting.
    pub fn stage_param_count(&self, stage_no: usize) -> usize {
        self.branch_a
            .stage_ids(stage_no)
            .iter()
            .map(|&id| self.store.get(id).numel())
            .sum()
    }

    /// Public (name, id) pairs. Tied stages appear under both branch
    /// prefixes, mapping to the same storage.
    pub fn named_params(&self) -> Vec<(String, ParamId)> {
        let mut out = Vec::new();
        self.branch_a.push_names("branchA", &mut out);
        self.branch_b.push_names("branchB", &mut out);
        if let Some(btl) = &self.btl {
            btl.push_names(&mut out);
        }
        if let Some(c) = &self.classifier {
            c.push_names(&mut out);
        }
        if let Some(id) = self.theta_rho {
            out.push(("fusion.rho".into(), id));
        }
        out
    }

    pub fn branch_stage_ids(&self, branch_b: bool, stage_no: usize) -> Vec<ParamId> {
        if branch_b {
            self.branch_b.stage_ids(stage_no)
        } else {
            self.branch_a.stage_ids(stage_no)
        }
    }

    pub fn bottleneck_ids(&self) -> Vec<ParamId> {
        self.btl.as_ref().map(|b| b.all_ids()).unwrap_or_default()
    }

    pub fn classifier_ids(&self) -> Vec<ParamId> {
        self.classifier
            .as_ref()
            .map(|c| c.all_ids())
            .unwrap_or_default()
    }

    pub fn branch_ids(&self, branch_b: bool) -> Vec<ParamId> {
        if branch_b {
            self.branch_b.all_ids()
        } else {
            self.branch_a.all_ids()
        }
    }

    /// Parameters of a branch's output head (block plus projection).
    pub fn branch_head_ids(&self, branch_b: bool) -> Vec<ParamId> {
        if branch_b {
            self.branch_b.head.ids()
        } else {
            self.branch_a.head.ids()
        }
    }

    /// Current fusion weight; sigmoid of rho when learnable.
    pub fn theta(&self) -> Option<S> {
        match self.config.theta {
            Some(ThetaSetting::Fixed(v)) => Some(S::from_f64(v)),
            Some(ThetaSetting::Learnable) => {
                let rho = self.store.get(self.theta_rho.expect("learnable rho")).data()[0];
                Some(sigmoid(rho))
            }
            None => None,
        }
    }

    fn check_inputs(&self, x_a: &Tensor<S>, x_b: &Tensor<S>) -> Result<()> {
        if x_a.shape() != x_b.shape() {
            return Err(Error::ShapeMismatch(format!(
                "x_A {:?} vs x_B {:?}",
                x_a.shape(),
                x_b.shape()
            )));
        }
        for &d in &x_a.shape()[1..] {
            if d % 16 != 0 {
                return Err(Error::PatchNotDivisible(d));
            }
        }
        Ok(())
    }

    /// Runs both branches and the version's auxiliary heads.
    pub fn forward(&self, x_a: &Tensor<S>, x_b: &Tensor<S>) -> Result<(BranchOutputs<S>, ForwardCache<S>)> {
        self.check_inputs(x_a, x_b)?;
        let (out_a, cache_a) = self.branch_a.forward(&self.store, x_a.clone());
        let (out_b, cache_b) = self.branch_b.forward(&self.store, x_b.clone());

        let mut btl_cache = None;
        let mut out_btl = None;
        let mut class_cache = None;
        let mut class_logit = None;

        if self.btl.is_some() || self.classifier.is_some() {
            let shared = concat_channels(cache_a.bottleneck(), cache_b.bottleneck());
            if let Some(btl) = &self.btl {
                let (o, c) = btl.forward(&self.store, &shared);
                out_btl = Some(o);
                btl_cache = Some(c);
            }
            if let Some(cls) = &self.classifier {
                let (logit, c) = cls.forward(&self.store, &shared);
                class_logit = Some(logit);
                class_cache = Some(c);
            }
        }

        Ok((
            BranchOutputs {
                out_a,
                out_b,
                out_btl,
                class_logit,
            },
            ForwardCache {
                cache_a,
                cache_b,
                btl: btl_cache,
                classifier: class_cache,
                bottleneck_width: self.config.stage_widths[4],
            },
        ))
    }

    /// Accumulates parameter gradients for one sample's output gradients.
    pub fn backward(&mut self, cache: &ForwardCache<S>, grads: &OutputGrads<S>) {
        let w5 = cache.bottleneck_width;
        // Shared-feature gradient from bottleneck decoder and classifier.
        let mut d_shared: Option<Tensor<S>> = None;
        if let (Some(btl), Some(bc), Some(d_btl)) =
            (&self.btl, &cache.btl, grads.d_out_btl.as_ref())
        {
            let d = btl.backward(&mut self.store, bc, d_btl);
            d_shared = Some(d);
        }
        if let (Some(cls), Some(cc), Some(d_logit)) =
            (&self.classifier, &cache.classifier, grads.d_class_logit)
        {
            let d = cls.backward(&mut self.store, cc, d_logit);
            match &mut d_shared {
                Some(acc) => acc.add_assign(&d),
                None => d_shared = Some(d),
            }
        }
        let (d_e5_a, d_e5_b) = match d_shared {
            Some(d) => {
                let (a, b) = split_channels(&d, w5);
                (Some(a), Some(b))
            }
            None => (None, None),
        };

        self.branch_a
            .backward(&mut self.store, &cache.cache_a, &grads.d_out_a, d_e5_a.as_ref());
        self.branch_b
            .backward(&mut self.store, &cache.cache_b, &grads.d_out_b, d_e5_b.as_ref());

        if let (Some(rho_id), Some(d_theta)) = (self.theta_rho, grads.d_theta) {
            // theta = sigmoid(rho): d rho = d theta * theta (1 - theta).
            let rho = self.store.get(rho_id).data()[0];
            let t = sigmoid(rho);
            let g = d_theta * t * (S::ONE - t);
            self.store.grad_mut(rho_id).data_mut()[0] += g;
        }
    }

    /// Channel concatenation of the two stage-5 feature maps.
    pub fn shared_representation(&self, x_a: &Tensor<S>, x_b: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_inputs(x_a, x_b)?;
        let (_, ca) = self.branch_a.forward(&self.store, x_a.clone());
        let (_, cb) = self.branch_b.forward(&self.store, x_b.clone());
        Ok(concat_channels(ca.bottleneck(), cb.bottleneck()))
    }

    /// Tumor probability from shared features (v3 only).
    pub fn classify(&self, shared: &Tensor<S>) -> Result<S> {
        let cls = self
            .classifier
            .as_ref()
            .ok_or(Error::MissingOutput("classifier not present for version"))?;
        let expected = 2 * self.config.stage_widths[4];
        if shared.shape()[0] != expected {
            return Err(Error::ShapeMismatch(format!(
                "classifier expects {expected} channels, got {}",
                shared.shape()[0]
            )));
        }
        let (logit, _) = cls.forward(&self.store, shared);
        Ok(sigmoid(logit))
    }

    pub fn cast<T: Scalar>(&self) -> MirrorUNet<T> {
        MirrorUNet {
            config: self.config.clone(),
            store: self.store.cast(),
            branch_a: self.branch_a.clone(),
            branch_b: self.branch_b.clone(),
            btl: self.btl.as_ref().map(|b| BtlDecoder {
                s6: b.s6.clone(),
                s7: b.s7.clone(),
                s8: b.s8.clone(),
                head: b.head.clone(),
            }),
            classifier: self.classifier.as_ref().map(|c| Classifier {
                fc1: c.fc1.clone(),
                fc2: c.fc2.clone(),
            }),
            theta_rho: self.theta_rho,
        }
    }
}

/// Weighted logit fusion: `(1 - theta) * pet + theta * ct`, elementwise.
pub fn fuse_logits<S: Scalar>(ct: &Tensor<S>, pet: &Tensor<S>, theta: S) -> Result<Tensor<S>> {
    if ct.shape() != pet.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ct {:?} vs pet {:?}",
            ct.shape(),
            pet.shape()
        )));
    }
    let one_m = S::ONE - theta;
    let mut out = Tensor::zeros(ct.shape());
    for ((dst, &c), &p) in out.data_mut().iter_mut().zip(ct.data()).zip(pet.data()) {
        *dst = one_m * p + theta * c;
    }
    Ok(out)
}
