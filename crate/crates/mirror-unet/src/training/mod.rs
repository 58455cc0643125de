//! Optimization loop, model evaluation, checkpointing, and sweep plumbing.

pub mod study;
pub mod sweep;

use std::path::Path;
use std::time::Instant;

use crate::baselines::{build_baseline, BaselineKind, BaselineModel};
use crate::corruption::{apply_corruption, Corruption, DEFAULT_PATCH_EDGE, DEFAULT_SIGMA};
use crate::data::{sample_patch, MultimodalSample, Volume};
use crate::error::{Error, Result};
use crate::inference::{binarize, sliding_window_predict_multi, WindowSpec, DEFAULT_TAU};
use crate::metrics::{aggregate, evaluate_case, MetricsRecord};
use crate::model::{build_model, save_checkpoint, MirrorUNet, ModelConfig, Version};
use crate::nn::adam::{Adam, AdamConfig};
use crate::objectives::{dice_ce_with_grad, version_loss_with_grads, LossBreakdown, LossInputs, LossWeights};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Full training configuration; defaults are the reference recipe
/// (Adam lr 1e-3, weight decay 1e-6, batch 4, 400 epochs, p_fg = 2/3).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// When set, train this baseline instead of the mirror model.
    pub baseline: Option<BaselineKind>,
    pub weights: LossWeights,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub corruption: Corruption,
    pub sigma: f64,
    pub shuffle_edge: usize,
    pub p_fg: f64,
    pub seed: u64,
    /// Sliding-window overlap used for validation/evaluation.
    pub overlap: f64,
    /// Binarization threshold.
    pub tau: f64,
    /// Validate every N epochs (the last epoch always validates).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            baseline: None,
            weights: LossWeights::default(),
            lr: 1e-3,
            weight_decay: 1e-6,
            batch_size: 4,
            epochs: 400,
            corruption: Corruption::None,
            sigma: DEFAULT_SIGMA,
            shuffle_edge: DEFAULT_PATCH_EDGE,
            p_fg: 2.0 / 3.0,
            seed: 0,
            overlap: 0.5,
            tau: DEFAULT_TAU,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.p_fg) {
            return Err(Error::InvalidConfig(format!("p_fg {} outside [0,1]", self.p_fg)));
        }
        if self.corruption == Corruption::Shuffle {
            let (px, py, pz) = self.model.in_patch;
            for d in [px, py, pz] {
                if d % self.shuffle_edge != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "shuffle edge {} does not divide patch dimension {d}",
                        self.shuffle_edge
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether the branch-A input is corrupted each step (versions with a
    /// branch-A reconstruction task).
    fn corruption_applies(&self) -> bool {
        self.baseline.is_none()
            && matches!(
                self.model.version,
                Version::V1 | Version::V2 | Version::V3 | Version::V2RecBrain
            )
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossBreakdown<f32>,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_dice: f64,
    pub val_fpv_ml: f64,
    pub val_fnv_ml: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl RunHistory {
    /// Per-step loss CSV: step,total,seg,rec_branch,rec_btl,class_term.
    pub fn write_steps_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::from("step,total,seg,rec_branch,rec_btl,class_term\n");
        for r in &self.steps {
            text.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.step, r.loss.total, r.loss.seg, r.loss.rec_branch, r.loss.rec_btl,
                r.loss.class_term
            ));
        }
        std::fs::write(path.as_ref(), text)?;
        Ok(())
    }

    pub fn write_validation_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::from("epoch,dice,fpv_ml,fnv_ml,wall_secs\n");
        for r in &self.epochs {
            text.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.3}\n",
                r.epoch, r.val_dice, r.val_fpv_ml, r.val_fnv_ml, r.wall_secs
            ));
        }
        std::fs::write(path.as_ref(), text)?;
        Ok(())
    }
}

/// A trained model of either family, sharing one evaluation path.
#[derive(Clone)]
pub enum TrainedModel {
    Mirror(MirrorUNet<f32>),
    Baseline(BaselineModel<f32>),
}

impl TrainedModel {
    pub fn is_brain(&self) -> bool {
        matches!(self, TrainedModel::Mirror(m) if m.config.version.is_brain())
    }

    /// Probability volumes via sliding-window inference.
    pub fn predict_probs(&self, sample: &MultimodalSample, window: &WindowSpec) -> Result<Vec<Volume>> {
        match self {
            TrainedModel::Mirror(m) => sliding_window_predict_multi(m, sample, window),
            TrainedModel::Baseline(b) => sliding_window_predict_multi(b, sample, window),
        }
    }

    /// Final binary mask; brain versions unite the two branch masks.
    pub fn predict_mask(
        &self,
        sample: &MultimodalSample,
        window: &WindowSpec,
        tau: f64,
    ) -> Result<Volume> {
        let probs = self.predict_probs(sample, window)?;
        if self.is_brain() {
            let a = binarize(&probs[0], tau)?;
            let b = binarize(&probs[1], tau)?;
            crate::inference::late_fuse(&a, &b, crate::inference::LateFusionMode::Union)
        } else {
            binarize(&probs[0], tau)
        }
    }
}

/// Ground-truth binary mask for evaluation: the label map itself for the
/// PET/CT task, the whole-tumor mask for the brain task.
pub fn evaluation_target(sample: &MultimodalSample, brain: bool) -> Result<Volume> {
    if brain {
        let (_, _, whole) = crate::brain::brain_targets(&sample.y)?;
        Ok(whole)
    } else {
        Ok(sample.y.clone())
    }
}

/// Sliding-window evaluation over a dataset; returns per-case records and
/// their mean.
pub fn evaluate_model(
    model: &TrainedModel,
    dataset: &[MultimodalSample],
    window: &WindowSpec,
    tau: f64,
) -> Result<(Vec<MetricsRecord>, MetricsRecord)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let brain = model.is_brain();
    let mut records = Vec::with_capacity(dataset.len());
    for (i, sample) in dataset.iter().enumerate() {
        let mask = model.predict_mask(sample, window, tau)?;
        let gt = evaluation_target(sample, brain)?;
        records.push(evaluate_case(&format!("case{i:04}"), &mask, &gt)?);
    }
    let agg = aggregate(&records);
    Ok((records, agg))
}

pub struct TrainRun {
    /// Model after the last step.
    pub final_model: TrainedModel,
    /// Best-by-validation-Dice model.
    pub best_model: TrainedModel,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub history: RunHistory,
    /// Written when an output directory is supplied.
    pub checkpoint_path: Option<std::path::PathBuf>,
}

fn mean_breakdown(parts: &[LossBreakdown<f32>]) -> LossBreakdown<f32> {
    let n = parts.len().max(1) as f32;
    let mut out = parts[0];
    out.total = parts.iter().map(|p| p.total).sum::<f32>() / n;
    out.seg = parts.iter().map(|p| p.seg).sum::<f32>() / n;
    out.rec_branch = parts.iter().map(|p| p.rec_branch).sum::<f32>() / n;
    out.rec_btl = parts.iter().map(|p| p.rec_btl).sum::<f32>() / n;
    out.class_term = parts.iter().map(|p| p.class_term).sum::<f32>() / n;
    out
}

/// Verifies tied stages still share storage; cheap, run every few steps.
fn assert_tied(model: &MirrorUNet<f32>) {
    for stage in model.config.shared.iter() {
        assert_eq!(
            model.branch_stage_ids(false, stage),
            model.branch_stage_ids(true, stage),
            "tied stage {stage} lost shared storage"
        );
    }
}

/// Trains the configured model. Deterministic given `cfg.seed`: the data
/// order, patch draws, corruptions, and initialization all derive from it.
/// Aborts with a diagnostic breakdown on a non-finite loss.
pub fn train_model(
    cfg: &TrainConfig,
    train_set: &[MultimodalSample],
    val_set: &[MultimodalSample],
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    enum Net {
        Mirror(MirrorUNet<f32>),
        Baseline(BaselineModel<f32>),
    }
    let mut net = match cfg.baseline {
        Some(kind) => Net::Baseline(build_baseline(kind, cfg.model.stage_widths, cfg.model.seed)?),
        None => Net::Mirror(build_model(&cfg.model)?),
    };
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = match &net {
        Net::Mirror(m) => Adam::new(adam_cfg, &m.store),
        Net::Baseline(b) => Adam::new(adam_cfg, &b.store),
    };

    let root = Rng::new(cfg.seed);
    let mut order_rng = root.fork(0x06de6);
    let draw_rng = root.fork(0xd6a7);

    let window = WindowSpec::new(cfg.model.in_patch, cfg.overlap)?;
    let mut history = RunHistory::default();
    let mut best_val_dice = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_model: Option<TrainedModel> = None;
    let mut checkpoint_path = None;

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let mut indices: Vec<usize> = (0..train_set.len()).collect();
        order_rng.shuffle(&mut indices);

        for batch in indices.chunks(cfg.batch_size) {
            step += 1;
            let inv_batch = 1.0f32 / batch.len() as f32;
            let mut parts = Vec::with_capacity(batch.len());

            match &mut net {
                Net::Mirror(model) => {
                    model.store.zero_grads();
                    for (slot, &idx) in batch.iter().enumerate() {
                        let mut seed_rng = draw_rng.fork((step as u64) << 8 | slot as u64);
                        let patch_seed = seed_rng.next_u64();
                        let corrupt_seed = seed_rng.next_u64();
                        let patch =
                            sample_patch(&train_set[idx], cfg.model.in_patch, cfg.p_fg, patch_seed)?;
                        let x_a_clean: Tensor<f32> = patch.x_a.to_tensor();
                        let x_a_input: Tensor<f32> = if cfg.corruption_applies() {
                            apply_corruption(
                                &patch.x_a,
                                cfg.corruption,
                                cfg.sigma,
                                cfg.shuffle_edge,
                                corrupt_seed,
                            )?
                            .to_tensor()
                        } else {
                            x_a_clean.clone()
                        };
                        let x_b: Tensor<f32> = patch.x_b.to_tensor();
                        let y: Tensor<f32> = patch.y.to_tensor();

                        let (outputs, cache) = model.forward(&x_a_input, &x_b)?;
                        let inputs = LossInputs {
                            x_a_clean: &x_a_clean,
                            x_b: &x_b,
                            y: &y,
                            c: patch.c,
                            theta: model.theta(),
                        };
                        let (breakdown, mut grads) = version_loss_with_grads(
                            cfg.model.version,
                            &outputs,
                            &inputs,
                            &cfg.weights,
                        )?;
                        if !breakdown.is_finite() {
                            return Err(Error::NanLoss {
                                step,
                                dump: format!("{breakdown:?}"),
                            });
                        }
                        grads.d_out_a.scale(inv_batch);
                        grads.d_out_b.scale(inv_batch);
                        if let Some(g) = &mut grads.d_out_btl {
                            g.scale(inv_batch);
                        }
                        if let Some(g) = &mut grads.d_class_logit {
                            *g *= inv_batch;
                        }
                        if let Some(g) = &mut grads.d_theta {
                            *g *= inv_batch;
                        }
                        model.backward(&cache, &grads);
                        parts.push(breakdown);
                    }
                    adam.step(&mut model.store);
                    if step % 10 == 0 {
                        assert_tied(model);
                    }
                }
                Net::Baseline(model) => {
                    model.store.zero_grads();
                    for (slot, &idx) in batch.iter().enumerate() {
                        let mut seed_rng = draw_rng.fork((step as u64) << 8 | slot as u64);
                        let patch_seed = seed_rng.next_u64();
                        let patch =
                            sample_patch(&train_set[idx], cfg.model.in_patch, cfg.p_fg, patch_seed)?;
                        let x_a: Tensor<f32> = patch.x_a.to_tensor();
                        let x_b: Tensor<f32> = patch.x_b.to_tensor();
                        let y: Tensor<f32> = patch.y.to_tensor();
                        let (logits, cache) = model.forward(&x_a, &x_b)?;
                        let (loss, mut d_out) = dice_ce_with_grad(&logits, &y)?;
                        if !loss.is_finite() {
                            return Err(Error::NanLoss {
                                step,
                                dump: format!("baseline seg loss {loss}"),
                            });
                        }
                        d_out.scale(inv_batch);
                        model.backward(&cache, &d_out);
                        let mut breakdown = LossBreakdown {
                            total: loss,
                            seg: loss,
                            rec_branch: 0.0,
                            rec_btl: 0.0,
                            class_term: 0.0,
                            has_seg: true,
                            has_rec_branch: false,
                            has_rec_btl: false,
                            has_class: false,
                        };
                        breakdown.total = loss;
                        parts.push(breakdown);
                    }
                    adam.step(&mut model.store);
                }
            }
            history.steps.push(StepRecord {
                step,
                loss: mean_breakdown(&parts),
            });
        }

        // Validation pass and best-checkpoint tracking.
        let due = cfg.val_every.max(1);
        if epoch % due != due - 1 && epoch + 1 != cfg.epochs {
            continue;
        }
        let snapshot = match &net {
            Net::Mirror(m) => TrainedModel::Mirror(m.clone()),
            Net::Baseline(b) => TrainedModel::Baseline(b.clone()),
        };
        let (_, agg) = evaluate_model(&snapshot, val_set, &window, cfg.tau)?;
        history.epochs.push(EpochRecord {
            epoch,
            val_dice: agg.dice,
            val_fpv_ml: agg.fpv_ml,
            val_fnv_ml: agg.fnv_ml,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
        if agg.dice > best_val_dice {
            best_val_dice = agg.dice;
            best_epoch = epoch;
            if let Some(dir) = out_dir {
                let path = dir.join("best.ckpt");
                match &snapshot {
                    TrainedModel::Mirror(m) => save_checkpoint(m, &run_meta(cfg, train_set), &path)?,
                    TrainedModel::Baseline(b) => b.save(&run_meta(cfg, train_set), &path)?,
                }
                checkpoint_path = Some(path);
            }
            best_model = Some(snapshot);
        }
    }

    if let Some(dir) = out_dir {
        history.write_steps_csv(dir.join("history.csv"))?;
        history.write_validation_csv(dir.join("validation.csv"))?;
    }

    let final_model = match net {
        Net::Mirror(m) => TrainedModel::Mirror(m),
        Net::Baseline(b) => TrainedModel::Baseline(b),
    };
    let best_model = best_model.unwrap_or_else(|| final_model.clone());
    Ok(TrainRun {
        final_model,
        best_model,
        best_epoch,
        best_val_dice,
        history,
        checkpoint_path,
    })
}

fn run_meta(cfg: &TrainConfig, train_set: &[MultimodalSample]) -> Vec<(String, String)> {
    let sp = train_set[0].x_a.spacing();
    vec![
        ("data.spacing".to_string(), format!("{},{},{}", sp.0, sp.1, sp.2)),
        ("train.corruption".to_string(), cfg.corruption.to_string()),
        ("train.seed".to_string(), cfg.seed.to_string()),
    ]
}
