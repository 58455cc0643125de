//! Training-loop integration tests at miniature scale.

use mirror_unet::baselines::BaselineKind;
use mirror_unet::corruption::Corruption;
use mirror_unet::data::phantom::{brain_phantom, phantom_dataset, PhantomSpec};
use mirror_unet::error::Error;
use mirror_unet::inference::{TilePredictor, WindowSpec};
use mirror_unet::metrics::evaluate_case;
use mirror_unet::model::{
    build_model, save_checkpoint, ModelConfig, OutputGrads, StageIndexSet, ThetaSetting, Version,
};
use mirror_unet::objectives::{version_loss_with_grads, LossInputs, LossWeights};
use mirror_unet::tensor::Tensor;
use mirror_unet::training::sweep::{run_sweep, SweepCell, SweepSettings};
use mirror_unet::training::{evaluate_model, train_model, TrainConfig, TrainedModel};

fn tmpdir(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("munet-train-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn tiny_phantoms(n: usize, seed: u64) -> Vec<mirror_unet::data::MultimodalSample> {
    let spec = PhantomSpec {
        shape: (16, 16, 16),
        organ_count: 1,
        lesion_radius_mm: (3.0, 4.5),
        ..PhantomSpec::default()
    };
    phantom_dataset(n, &spec, 0.25, seed).unwrap()
}

fn tiny_cfg(version: Version, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            version,
            shared: StageIndexSet::new([5]).unwrap(),
            theta: (version == Version::V4).then_some(ThetaSetting::Fixed(0.3)),
            stage_widths: [2, 4, 4, 8, 8],
            in_patch: (16, 16, 16),
            seed,
        },
        epochs: 2,
        batch_size: 2,
        corruption: Corruption::Noise,
        seed,
        val_every: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn equal_seeds_give_bitwise_equal_checkpoints() {
    let train = tiny_phantoms(4, 31);
    let val = tiny_phantoms(2, 32);
    let paths: Vec<_> = (0..2)
        .map(|i| {
            let dir = tmpdir(&format!("det{i}"));
            let run = train_model(&tiny_cfg(Version::V2, 5), &train, &val, None).unwrap();
            let path = dir.join("final.ckpt");
            match run.final_model {
                TrainedModel::Mirror(m) => save_checkpoint(&m, &[], &path).unwrap(),
                _ => unreachable!(),
            }
            path
        })
        .collect();
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    assert_eq!(a, b, "checkpoints differ between identically seeded runs");
}

#[test]
fn zero_seg_weight_leaves_segmentation_head_ungradiented() {
    let mut model = build_model::<f64>(&ModelConfig {
        version: Version::V1,
        shared: StageIndexSet::new([5]).unwrap(),
        theta: None,
        stage_widths: [2, 4, 4, 8, 8],
        in_patch: (16, 16, 16),
        seed: 3,
    })
    .unwrap();
    let sample = &tiny_phantoms(1, 41)[0];
    let x_a: Tensor<f64> = sample.x_a.to_tensor();
    let x_b: Tensor<f64> = sample.x_b.to_tensor();
    let y: Tensor<f64> = sample.y.to_tensor();
    let weights = LossWeights {
        lambda_seg: 0.0,
        ..LossWeights::default()
    };
    model.store.zero_grads();
    let (outputs, cache) = model.forward(&x_a, &x_b).unwrap();
    let inputs = LossInputs {
        x_a_clean: &x_a,
        x_b: &x_b,
        y: &y,
        c: sample.c,
        theta: None,
    };
    let (_, grads): (_, OutputGrads<f64>) =
        version_loss_with_grads(Version::V1, &outputs, &inputs, &weights).unwrap();
    model.backward(&cache, &grads);
    for id in model.branch_head_ids(true) {
        assert!(
            model.store.grad(id).data().iter().all(|&g| g == 0.0),
            "segmentation head received gradient with lambda_seg = 0"
        );
    }
    // The reconstruction head still learns.
    let rec: f64 = model
        .branch_head_ids(false)
        .iter()
        .map(|&id| model.store.grad(id).data().iter().map(|g| g.abs()).sum::<f64>())
        .sum();
    assert!(rec > 0.0);
}

#[test]
fn weight_decay_targets_only_convolution_and_linear_weights() {
    let model = build_model::<f32>(&ModelConfig {
        version: Version::V3,
        shared: StageIndexSet::new([4, 5, 6]).unwrap(),
        theta: None,
        stage_widths: [2, 4, 4, 8, 8],
        in_patch: (16, 16, 16),
        seed: 0,
    })
    .unwrap();
    for (name, id) in model.named_params() {
        let decays = model.store.meta(id).decay;
        let is_weight = name.ends_with(".weight");
        assert_eq!(
            decays, is_weight,
            "decay flag mismatch for {name}: decay={decays}"
        );
    }
}

#[test]
fn nan_loss_aborts_with_diagnostic() {
    let train = tiny_phantoms(2, 51);
    let cfg = tiny_cfg(Version::V1, 9);
    // Poison one parameter; the first step must fail with a NaN report.
    let mut model = build_model::<f32>(&cfg.model).unwrap();
    let id = model.store.ids().next().unwrap();
    model.store.get_mut(id).data_mut()[0] = f32::NAN;
    let x_a: Tensor<f32> = train[0].x_a.to_tensor();
    let x_b: Tensor<f32> = train[0].x_b.to_tensor();
    let y: Tensor<f32> = train[0].y.to_tensor();
    let (outputs, _) = model.forward(&x_a, &x_b).unwrap();
    let inputs = LossInputs {
        x_a_clean: &x_a,
        x_b: &x_b,
        y: &y,
        c: train[0].c,
        theta: None,
    };
    let res = version_loss_with_grads(Version::V1, &outputs, &inputs, &LossWeights::default());
    let breakdown = res.unwrap().0;
    assert!(!breakdown.is_finite(), "poisoned forward should be non-finite");
    // And the training loop surfaces it as the dedicated error: a NaN
    // learning rate poisons the parameters at step 1, so step 2 must abort.
    let mut bad_cfg = cfg;
    bad_cfg.lr = f64::NAN;
    let err = train_model(&bad_cfg, &train, &train, None)
        .err()
        .expect("NaN learning rate must abort training");
    match err {
        Error::NanLoss { step, dump } => {
            assert_eq!(step, 2);
            assert!(dump.contains("total"), "diagnostic dump missing: {dump}");
        }
        other => panic!("expected NanLoss, got {other}"),
    }
}

#[test]
fn history_steps_strictly_increase_and_smoke_loss_descends() {
    let train = tiny_phantoms(4, 61);
    let mut cfg = tiny_cfg(Version::V1, 7);
    cfg.epochs = 10;
    cfg.corruption = Corruption::None;
    let run = train_model(&cfg, &train, &train, None).unwrap();
    for pair in run.history.steps.windows(2) {
        assert!(pair[1].step > pair[0].step);
    }
    let n = run.history.steps.len();
    let head: Vec<f64> = run.history.steps[..n / 10 + 1]
        .iter()
        .map(|s| s.loss.total as f64)
        .collect();
    let tail: Vec<f64> = run.history.steps[n - n / 10 - 1..]
        .iter()
        .map(|s| s.loss.total as f64)
        .collect();
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(
        median(tail) < median(head),
        "median loss did not descend over the run"
    );
}

#[test]
fn evaluate_errors_on_empty_dataset_and_honours_perfect_stub() {
    let train = tiny_phantoms(2, 71);
    let cfg = tiny_cfg(Version::V2, 3);
    let run = train_model(&cfg, &train, &train, None).unwrap();
    let window = WindowSpec::new((16, 16, 16), 0.5).unwrap();
    assert!(matches!(
        evaluate_model(&run.final_model, &[], &window, 0.5),
        Err(Error::EmptyDataset)
    ));

    // Perfect-oracle stub: a predictor emitting certainty-one inside the
    // (everywhere-foreground) target reaches the metric identities.
    struct Sure;
    impl TilePredictor for Sure {
        fn n_outputs(&self) -> usize {
            1
        }
        fn predict_tile(&self, x_a: &Tensor<f32>, _: &Tensor<f32>) -> mirror_unet::error::Result<Vec<Tensor<f32>>> {
            Ok(vec![Tensor::full(x_a.shape(), 1.0)])
        }
    }
    let mut all_fg = mirror_unet::data::Volume::new((8, 8, 8), (2.0, 2.0, 3.0)).unwrap();
    all_fg.data_mut().iter_mut().for_each(|v| *v = 1.0);
    let sample = mirror_unet::data::MultimodalSample::new(
        mirror_unet::data::Volume::new((8, 8, 8), (2.0, 2.0, 3.0)).unwrap(),
        mirror_unet::data::Volume::new((8, 8, 8), (2.0, 2.0, 3.0)).unwrap(),
        all_fg.clone(),
    )
    .unwrap();
    let probs = mirror_unet::inference::sliding_window_predict(
        &Sure,
        &sample,
        &WindowSpec::new((8, 8, 8), 0.5).unwrap(),
    )
    .unwrap();
    let mask = mirror_unet::inference::binarize(&probs, 0.5).unwrap();
    let rec = evaluate_case("stub", &mask, &all_fg).unwrap();
    assert_eq!((rec.dice, rec.fpv_ml, rec.fnv_ml), (1.0, 0.0, 0.0));
}

#[test]
fn baseline_and_v4_arms_train() {
    let train = tiny_phantoms(2, 81);
    for (baseline, version) in [
        (Some(BaselineKind::UnimodalPet), Version::V1),
        (Some(BaselineKind::MiddleFusion), Version::V1),
        (None, Version::V4),
    ] {
        let mut cfg = tiny_cfg(version, 11);
        cfg.baseline = baseline;
        cfg.corruption = Corruption::None;
        cfg.epochs = 1;
        let run = train_model(&cfg, &train, &train, None).unwrap();
        assert!(!run.history.steps.is_empty());
        assert!(run.history.steps.iter().all(|s| s.loss.total.is_finite()));
    }
}

#[test]
fn brain_variants_train_and_evaluate() {
    let samples: Vec<_> = (0..2)
        .map(|i| brain_phantom((16, 16, 16), (2.0, 2.0, 2.0), 100 + i).unwrap())
        .collect();
    for version in [Version::V2Brain, Version::V2RecBrain] {
        let mut cfg = tiny_cfg(version, 13);
        cfg.corruption = Corruption::None;
        let run = train_model(&cfg, &samples, &samples, None).unwrap();
        let window = WindowSpec::new((16, 16, 16), 0.5).unwrap();
        let (records, agg) = evaluate_model(&run.final_model, &samples, &window, 0.5).unwrap();
        assert_eq!(records.len(), 2);
        assert!(agg.dice.is_finite());
    }
}

#[test]
fn sweep_runs_cells_and_records_skips() {
    let settings = SweepSettings {
        n_train: 2,
        n_val: 1,
        phantom: PhantomSpec {
            shape: (16, 16, 16),
            organ_count: 1,
            lesion_radius_mm: (3.0, 4.5),
            ..PhantomSpec::default()
        },
        patch: (16, 16, 16),
        widths: [2, 4, 4, 8, 8],
        epochs: 1,
        batch_size: 2,
        ..SweepSettings::default()
    };
    let cells = vec![
        SweepCell {
            version: Version::V1,
            shared: StageIndexSet::new([5]).unwrap(),
            corruption: Some(Corruption::None),
            theta: None,
            seed: 1,
        },
        // Incompatible: theta on a multi-task version.
        SweepCell {
            version: Version::V1,
            shared: StageIndexSet::new([5]).unwrap(),
            corruption: None,
            theta: Some(ThetaSetting::Fixed(0.3)),
            seed: 1,
        },
    ];
    let dir = tmpdir("sweep");
    let rows = run_sweep(&settings, &cells, Some(&dir)).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].skipped.is_none());
    assert!(rows[0].dice.is_finite());
    let reason = rows[1].skipped.as_ref().unwrap();
    assert!(reason.contains("theta undefined for v1"), "{reason}");
    assert!(dir.join("sweep.csv").exists());
}

#[test]
fn tied_stages_stay_identical_after_optimization() {
    let train = tiny_phantoms(4, 91);
    for shared in [vec![5], vec![4, 5, 6]] {
        let mut cfg = tiny_cfg(Version::V2, 17);
        cfg.model.shared = StageIndexSet::new(shared.clone()).unwrap();
        cfg.epochs = 3;
        let run = train_model(&cfg, &train, &train, None).unwrap();
        let model = match &run.final_model {
            TrainedModel::Mirror(m) => m,
            _ => unreachable!(),
        };
        for &stage in &shared {
            assert_eq!(
                model.branch_stage_ids(false, stage),
                model.branch_stage_ids(true, stage)
            );
        }
        // An unshared stage has genuinely diverged between branches.
        let a = model.branch_stage_ids(false, 2);
        let b = model.branch_stage_ids(true, 2);
        let differs = a
            .iter()
            .zip(&b)
            .any(|(&x, &y)| model.store.get(x).data() != model.store.get(y).data());
        assert!(differs);
    }
}
