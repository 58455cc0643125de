//! Acceptance suite: one test per exit criterion, each printing a PASS line
//! (visible under `--nocapture`; a failure panics with the measured values).
//!
//! The desk-scale directional study (criterion 7) reuses a completed run
//! from `$MUNET_OUT_ROOT/desk_study` when its preset fingerprint matches
//! (for example one produced by `munet sweep --grid desk`); otherwise it
//! runs the full study in-process, which takes a few CPU-hours single-
//! threaded and parallelizes across cells on multi-core hosts.

use mirror_unet::corruption::{
    apply_cube_permutation, gaussian_corrupt, invert_permutation, patch_shuffle, Corruption,
    ShuffleSpec,
};
use mirror_unet::data::phantom::{brain_phantom, generate_phantom, phantom_dataset, PhantomSpec};
use mirror_unet::data::{load_volume, preprocess_autopet, save_volume, Volume};
use mirror_unet::error::Result;
use mirror_unet::inference::{binarize, late_fuse, LateFusionMode, WindowSpec};
use mirror_unet::metrics::{dice_score, fp_fn_volumes, Connectivity};
use mirror_unet::model::{
    build_model, fuse_logits, save_checkpoint, MirrorUNet, ModelConfig, OutputGrads,
    StageIndexSet, ThetaSetting, Version,
};
use mirror_unet::objectives::{
    bce_label_loss, mse_loss, version_loss_with_grads, LossInputs, LossWeights,
};
use mirror_unet::rng::Rng;
use mirror_unet::tensor::Tensor;
use mirror_unet::training::study::{load_cached_study, run_desk_study, DeskPreset};
use mirror_unet::training::sweep::sharing_grid;
use mirror_unet::training::{evaluate_model, train_model, TrainConfig, TrainedModel};

fn pass(n: usize, name: &str, detail: &str) {
    println!("ACCEPTANCE {n:02} ({name}): PASS  [{detail}]");
}

// --- 1. Tying suite -------------------------------------------------------

#[test]
fn criterion_01_tying_suite() {
    let t0 = std::time::Instant::now();
    let spec = PhantomSpec {
        shape: (16, 16, 16),
        organ_count: 1,
        lesion_radius_mm: (3.0, 4.5),
        ..PhantomSpec::default()
    };
    let train = phantom_dataset(4, &spec, 0.25, 1).unwrap();

    for shared in sharing_grid() {
        let cfg = TrainConfig {
            model: ModelConfig {
                version: Version::V2,
                shared: shared.clone(),
                theta: None,
                stage_widths: [2, 4, 4, 8, 8],
                in_patch: (16, 16, 16),
                seed: 77,
            },
            epochs: 5, // 2 steps per epoch at batch 2 -> 10 optimization steps
            batch_size: 2,
            corruption: Corruption::Noise,
            seed: 77,
            val_every: 100,
            ..TrainConfig::default()
        };
        let run = train_model(&cfg, &train, &train, None).unwrap();
        let model = match &run.final_model {
            TrainedModel::Mirror(m) => m,
            _ => unreachable!(),
        };
        assert_eq!(run.history.steps.len(), 10);

        for stage in shared.iter() {
            let a = model.branch_stage_ids(false, stage);
            let b = model.branch_stage_ids(true, stage);
            assert_eq!(a, b, "L={{{shared}}}: stage {stage} lost shared storage");
            for (&x, &y) in a.iter().zip(&b) {
                assert_eq!(
                    model.store.get(x).data(),
                    model.store.get(y).data(),
                    "L={{{shared}}}: stage {stage} bytes diverged"
                );
            }
        }
        let unshared: Vec<usize> = (1..=8).filter(|i| !shared.contains(*i)).collect();
        let any_differs = unshared.iter().any(|&stage| {
            let a = model.branch_stage_ids(false, stage);
            let b = model.branch_stage_ids(true, stage);
            a.iter()
                .zip(&b)
                .any(|(&x, &y)| model.store.get(x).data() != model.store.get(y).data())
        });
        assert!(
            any_differs,
            "L={{{shared}}}: no unshared stage differs between branches"
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 120.0, "tying suite took {secs:.0}s (budget 120s)");
    pass(1, "tying suite", &format!("7 sharing sets, 10 steps each, {secs:.0}s"));
}

// --- 2. Loss decomposition ------------------------------------------------

#[test]
fn criterion_02_loss_decomposition() {
    let cfg = ModelConfig {
        version: Version::V3,
        shared: StageIndexSet::new([5]).unwrap(),
        theta: None,
        stage_widths: [2, 4, 4, 8, 8],
        in_patch: (16, 16, 16),
        seed: 5,
    };
    let model = build_model::<f64>(&cfg).unwrap();
    let weights = LossWeights::default();
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let mut rng = Rng::new(1000 + trial);
        let x_a = Tensor::<f64>::randn(&[1, 16, 16, 16], 0.3, &mut rng).map(|v| v + 0.5);
        let x_b = Tensor::<f64>::randn(&[1, 16, 16, 16], 0.3, &mut rng).map(|v| v + 0.5);
        let mut y = Tensor::<f64>::zeros(&[1, 16, 16, 16]);
        for i in 0..4096 {
            if rng.bernoulli(0.1) {
                y.data_mut()[i] = 1.0;
            }
        }
        let c = u8::from(trial % 2 == 0);
        let (outputs, _) = model.forward(&x_a, &x_b).unwrap();
        let inputs = LossInputs {
            x_a_clean: &x_a,
            x_b: &x_b,
            y: &y,
            c,
            theta: None,
        };
        let v1 = version_loss_with_grads(Version::V1, &outputs, &inputs, &weights)
            .unwrap()
            .0;
        let v2 = version_loss_with_grads(Version::V2, &outputs, &inputs, &weights)
            .unwrap()
            .0;
        let v3 = version_loss_with_grads(Version::V3, &outputs, &inputs, &weights)
            .unwrap()
            .0;

        let rec_btl = mse_loss(outputs.out_btl.as_ref().unwrap(), &x_b).unwrap();
        let class_term = bce_label_loss(outputs.class_logit.unwrap(), c).unwrap();

        let d12 = (v2.total - (v1.total + weights.lambda_rec * rec_btl)).abs() / v2.total.abs();
        let d23 =
            (v3.total - (v2.total + weights.lambda_class * class_term)).abs() / v3.total.abs();
        worst = worst.max(d12).max(d23);
        assert!(d12 < 1e-6, "trial {trial}: V2 additivity violated: {d12:e}");
        assert!(d23 < 1e-6, "trial {trial}: V3 additivity violated: {d23:e}");
    }
    pass(2, "loss decomposition", &format!("20 forwards, worst rel diff {worst:.2e}"));
}

// --- 3. Gradient check ----------------------------------------------------

#[test]
fn criterion_03_gradient_check() {
    let t0 = std::time::Instant::now();
    let cfg = ModelConfig {
        version: Version::V2,
        shared: StageIndexSet::new([5]).unwrap(),
        theta: None,
        stage_widths: [2, 4, 4, 8, 8],
        in_patch: (16, 16, 16),
        seed: 42,
    };
    let mut model = build_model::<f64>(&cfg).unwrap();
    let mut rng = Rng::new(7);
    let x_a =
        Tensor::<f64>::randn(&[1, 16, 16, 16], 0.25, &mut rng).map(|v| (v + 0.5).clamp(0.0, 1.0));
    let x_b =
        Tensor::<f64>::randn(&[1, 16, 16, 16], 0.25, &mut rng).map(|v| (v + 0.5).clamp(0.0, 1.0));
    let mut y = Tensor::<f64>::zeros(&[1, 16, 16, 16]);
    for z in 6..10 {
        for yy in 6..10 {
            for x in 6..10 {
                y.data_mut()[(z * 16 + yy) * 16 + x] = 1.0;
            }
        }
    }
    let weights = LossWeights::default();
    let loss_of = |m: &MirrorUNet<f64>| -> f64 {
        let (o, _) = m.forward(&x_a, &x_b).unwrap();
        let inputs = LossInputs {
            x_a_clean: &x_a,
            x_b: &x_b,
            y: &y,
            c: 1,
            theta: None,
        };
        version_loss_with_grads(Version::V2, &o, &inputs, &weights)
            .unwrap()
            .0
            .total
    };

    model.store.zero_grads();
    let (outputs, cache) = model.forward(&x_a, &x_b).unwrap();
    let inputs = LossInputs {
        x_a_clean: &x_a,
        x_b: &x_b,
        y: &y,
        c: 1,
        theta: None,
    };
    let (_, grads): (_, OutputGrads<f64>) =
        version_loss_with_grads(Version::V2, &outputs, &inputs, &weights).unwrap();
    model.backward(&cache, &grads);
    let analytic: Vec<Tensor<f64>> = model
        .store
        .ids()
        .map(|id| model.store.grad(id).clone())
        .collect();

    let ids: Vec<_> = model.store.ids().collect();
    let mut sample_rng = Rng::new(99);
    let eps = 1e-4;
    let mut max_rel: f64 = 0.0;
    for _ in 0..50 {
        let which = sample_rng.below(ids.len());
        let id = ids[which];
        let at = sample_rng.below(model.store.get(id).numel());
        let a = analytic[which].data()[at];

        let orig = model.store.get(id).data()[at];
        model.store.get_mut(id).data_mut()[at] = orig + eps;
        let up = loss_of(&model);
        model.store.get_mut(id).data_mut()[at] = orig - eps;
        let down = loss_of(&model);
        model.store.get_mut(id).data_mut()[at] = orig;
        let fd = (up - down) / (2.0 * eps);

        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
        assert!(
            rel < 1e-3,
            "{} [{at}]: analytic {a:.6e} vs fd {fd:.6e} (rel {rel:.3e})",
            model.store.meta(id).name
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 300.0, "gradient check took {secs:.0}s (budget 300s)");
    pass(3, "gradient check", &format!("50 params, max rel err {max_rel:.2e}, {secs:.0}s"));
}

// --- 4. Metric oracle -----------------------------------------------------

mod metric_oracle {
    use super::*;

    pub fn dice(pred: &Volume, gt: &Volume) -> f64 {
        let mut inter = 0usize;
        let mut total = 0usize;
        for (&a, &b) in pred.data().iter().zip(gt.data()) {
            inter += usize::from(a == 1.0 && b == 1.0);
            total += usize::from(a == 1.0) + usize::from(b == 1.0);
        }
        if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        }
    }

    /// Component labels by iterated label propagation over 26-neighborhoods;
    /// intentionally different from the library's search-based labeling.
    fn components(mask: &Volume) -> Vec<usize> {
        let (nx, ny, nz) = mask.shape();
        let n = mask.numel();
        let mut comp: Vec<usize> = (0..n)
            .map(|i| if mask.data()[i] == 1.0 { i + 1 } else { 0 })
            .collect();
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                if comp[i] == 0 {
                    continue;
                }
                let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
                for dz in -1i32..=1 {
                    for dy in -1i32..=1 {
                        for dx in -1i32..=1 {
                            let (qx, qy, qz) =
                                (x as i32 + dx, y as i32 + dy, z as i32 + dz);
                            if qx < 0
                                || qy < 0
                                || qz < 0
                                || qx >= nx as i32
                                || qy >= ny as i32
                                || qz >= nz as i32
                            {
                                continue;
                            }
                            let q = (qz as usize * ny + qy as usize) * nx + qx as usize;
                            if comp[q] != 0 && comp[q] < comp[i] {
                                comp[i] = comp[q];
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        comp
    }

    pub fn fp_fn(pred: &Volume, gt: &Volume) -> (f64, f64) {
        let voxel_ml = pred.voxel_volume_mm3() / 1000.0;
        let misses = |src: &Volume, other: &Volume| -> f64 {
            let comp = components(src);
            let roots: std::collections::BTreeSet<usize> =
                comp.iter().copied().filter(|&c| c != 0).collect();
            let mut total = 0.0;
            for root in roots {
                let members: Vec<usize> =
                    (0..comp.len()).filter(|&i| comp[i] == root).collect();
                if !members.iter().any(|&i| other.data()[i] == 1.0) {
                    total += members.len() as f64 * voxel_ml;
                }
            }
            total
        };
        (misses(pred, gt), misses(gt, pred))
    }
}

#[test]
fn criterion_04_metric_oracle() {
    let mut rng = Rng::new(404);
    let mut make = |density: f64| -> Volume {
        let mut v = Volume::new((16, 16, 16), (2.0, 2.0, 3.0)).unwrap();
        for x in v.data_mut() {
            *x = f32::from(rng.bernoulli(density) as u8);
        }
        v
    };
    for trial in 0..100 {
        let density = 0.005 + 0.002 * (trial % 10) as f64;
        let pred = make(density);
        let gt = make(density);
        assert_eq!(
            dice_score(&pred, &gt).unwrap(),
            metric_oracle::dice(&pred, &gt),
            "dice mismatch on trial {trial}"
        );
        let (fpv, fnv) = fp_fn_volumes(&pred, &gt, Connectivity::TwentySix).unwrap();
        let (ofpv, ofnv) = metric_oracle::fp_fn(&pred, &gt);
        assert!((fpv - ofpv).abs() < 1e-9, "FPV mismatch on trial {trial}");
        assert!((fnv - ofnv).abs() < 1e-9, "FNV mismatch on trial {trial}");
    }

    // 5 disjoint predicted voxels at (2,2,3) mm spacing = exactly 0.06 mL.
    let mut pred = Volume::new((8, 8, 8), (2.0, 2.0, 3.0)).unwrap();
    for (x, y, z) in [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1)] {
        pred.set(x, y, z, 1.0);
    }
    let gt = Volume::new((8, 8, 8), (2.0, 2.0, 3.0)).unwrap();
    let (fpv, _) = fp_fn_volumes(&pred, &gt, Connectivity::TwentySix).unwrap();
    assert_eq!(fpv, 0.06);
    pass(4, "metric oracle", "100 random 16^3 pairs exact; 0.06 mL example exact");
}

// --- 5. Fusion identities -------------------------------------------------

#[test]
fn criterion_05_fusion_identities() {
    // Eq.-4 arithmetic: 0.7 * 0.0 + 0.3 * 2.0 = 0.6 exactly.
    let ct = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0f64]);
    let pet = Tensor::from_vec(&[1, 1, 1, 1], vec![0.0f64]);
    assert_eq!(fuse_logits(&ct, &pet, 0.3).unwrap().data()[0], 0.6);

    // v4 at theta = 0: the fused logits equal the PET branch bitwise, so
    // the binarized mask is the PET-branch mask bitwise.
    let cfg = ModelConfig {
        version: Version::V4,
        shared: StageIndexSet::new([5]).unwrap(),
        theta: Some(ThetaSetting::Fixed(0.0)),
        stage_widths: [2, 4, 4, 8, 8],
        in_patch: (16, 16, 16),
        seed: 55,
    };
    let model = build_model::<f32>(&cfg).unwrap();
    let sample = generate_phantom(&PhantomSpec {
        shape: (16, 16, 16),
        organ_count: 1,
        lesion_count: 1,
        lesion_radius_mm: (2.5, 3.5),
        ..PhantomSpec::default()
    })
    .unwrap();
    let x_a: Tensor<f32> = sample.x_a.to_tensor();
    let x_b: Tensor<f32> = sample.x_b.to_tensor();
    let (outputs, _) = model.forward(&x_a, &x_b).unwrap();
    let fused = fuse_logits(&outputs.out_a, &outputs.out_b, 0.0).unwrap();
    assert_eq!(fused.data(), outputs.out_b.data(), "theta=0 fusion not bitwise PET");
    let mask_fused: Vec<f32> = fused.data().iter().map(|&l| f32::from(l >= 0.0)).collect();
    let mask_pet: Vec<f32> = outputs
        .out_b
        .data()
        .iter()
        .map(|&l| f32::from(l >= 0.0))
        .collect();
    assert_eq!(mask_fused, mask_pet);

    // Late-fusion rules against voxelwise OR/AND oracles.
    let mut rng = Rng::new(505);
    let mut mask = |density: f64| -> Volume {
        let mut v = Volume::new((8, 8, 8), (1.0, 1.0, 1.0)).unwrap();
        for x in v.data_mut() {
            *x = f32::from(rng.bernoulli(density) as u8);
        }
        v
    };
    for _ in 0..10 {
        let a = mask(0.3);
        let b = mask(0.3);
        let union = late_fuse(&a, &b, LateFusionMode::Union).unwrap();
        let inter = late_fuse(&a, &b, LateFusionMode::Intersection).unwrap();
        for i in 0..a.numel() {
            let (x, y) = (a.data()[i] == 1.0, b.data()[i] == 1.0);
            assert_eq!(union.data()[i] == 1.0, x || y);
            assert_eq!(inter.data()[i] == 1.0, x && y);
        }
    }
    pass(5, "fusion identities", "theta=0 bitwise; OR/AND oracles; Eq.-4 case exact");
}

// --- 6. Overfit smoke -----------------------------------------------------

#[test]
fn criterion_06_overfit_smoke() {
    let t0 = std::time::Instant::now();
    let spec = PhantomSpec {
        shape: (32, 32, 32),
        organ_count: 2,
        lesion_radius_mm: (4.0, 7.0),
        ..PhantomSpec::default()
    };
    let train = phantom_dataset(4, &spec, 0.0, 11).unwrap();

    let cfg = TrainConfig {
        model: ModelConfig {
            version: Version::V1,
            shared: StageIndexSet::new([5]).unwrap(),
            theta: None,
            stage_widths: [4, 8, 16, 32, 64],
            in_patch: (32, 32, 32),
            seed: 5,
        },
        epochs: 100, // two batches of 2 per epoch = 200 steps
        batch_size: 2,
        lr: 2e-3,
        corruption: Corruption::None,
        seed: 5,
        val_every: 100,
        ..TrainConfig::default()
    };
    let run = train_model(&cfg, &train, &train, None).unwrap();
    assert_eq!(run.history.steps.len(), 200);

    let window = WindowSpec::new((32, 32, 32), 0.5).unwrap();
    let (_, agg) = evaluate_model(&run.final_model, &train, &window, 0.5).unwrap();
    let secs = t0.elapsed().as_secs_f64();

    // Monotone smoke property: median loss of the last 10% of steps is
    // below the median of the first 10%.
    let median = |steps: &[mirror_unet::training::StepRecord]| -> f64 {
        let mut v: Vec<f64> = steps.iter().map(|s| s.loss.total as f64).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let head = median(&run.history.steps[..20]);
    let tail = median(&run.history.steps[180..]);
    assert!(tail < head, "loss did not descend: first-10% {head:.4} vs last-10% {tail:.4}");

    assert!(
        agg.dice >= 0.85,
        "overfit smoke reached Dice {:.4} < 0.85",
        agg.dice
    );
    assert!(secs < 600.0, "overfit smoke took {secs:.0}s (budget 600s)");
    pass(
        6,
        "overfit smoke",
        &format!("train Dice {:.4} after 200 steps, {secs:.0}s", agg.dice),
    );
}

// --- 7. Desk-scale directional study ---------------------------------------

fn study_dir() -> std::path::PathBuf {
    let root = std::env::var_os(mirror_unet::cli::OUT_ROOT_ENV)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::path::PathBuf::from("target"));
    root.join("desk_study")
}

#[test]
fn criterion_07_desk_scale_directions() {
    let preset = DeskPreset::default();
    let dir = study_dir();
    let (rows, report) = match load_cached_study(&preset, &dir) {
        Some(found) => {
            eprintln!("criterion 07: reusing completed study at {}", dir.display());
            found
        }
        None => run_desk_study(&preset, Some(&dir)).unwrap(),
    };
    assert_eq!(rows.len(), 21, "expected 18 v3 runs + 3 PET-only runs");
    eprintln!("{}", report.summary());

    assert!(
        report.dir_a,
        "(a) v3 mean {:.2} < PET-only mean {:.2} (Dice points)",
        report.v3_mean * 100.0,
        report.pet_only_mean * 100.0
    );
    assert!(
        report.dir_b,
        "(b) shuffling mean {:.2} < plain-L2 mean {:.2} (Dice points)",
        report.shuffle_mean * 100.0,
        report.plain_mean * 100.0
    );
    assert!(
        report.dir_c,
        "(c) L={{5}} mean {:.2} more than 1 Dice point below best {:.2}",
        report.l5_mean * 100.0,
        report.best_l_mean * 100.0
    );
    pass(
        7,
        "desk-scale directions",
        &format!(
            "(a) {:.2} vs {:.2}; (b) {:.2} vs {:.2}; (c) {:.2} vs {:.2} Dice points",
            report.v3_mean * 100.0,
            report.pet_only_mean * 100.0,
            report.shuffle_mean * 100.0,
            report.plain_mean * 100.0,
            report.l5_mean * 100.0,
            report.best_l_mean * 100.0
        ),
    );
}

// --- 8. Corruption suite ---------------------------------------------------

#[test]
fn criterion_08_corruption_suite() {
    // Shuffle: multiset preservation and inverse round trip, bit exact.
    let mut rng = Rng::new(808);
    let mut vol = Volume::new((32, 32, 32), (1.0, 1.0, 1.0)).unwrap();
    for v in vol.data_mut() {
        *v = rng.uniform() as f32;
    }
    let spec = ShuffleSpec {
        patch_edge: 8,
        permutation_seed: 99,
    };
    let (shuffled, perm) = patch_shuffle(&vol, &spec).unwrap();
    let mut a: Vec<f32> = vol.data().to_vec();
    let mut b: Vec<f32> = shuffled.data().to_vec();
    a.sort_by(f32::total_cmp);
    b.sort_by(f32::total_cmp);
    assert_eq!(a, b, "voxel multiset changed");
    let restored = apply_cube_permutation(&shuffled, 8, &invert_permutation(&perm)).unwrap();
    assert_eq!(restored.data(), vol.data(), "inverse permutation not bitwise");

    // Gaussian: mean |deviation| = sigma * sqrt(2/pi) over >= 1e6 voxels.
    let n = 128;
    let mut flat = Volume::new((n, n, n), (1.0, 1.0, 1.0)).unwrap();
    flat.data_mut().iter_mut().for_each(|x| *x = 0.5);
    let noisy = gaussian_corrupt(&flat, 0.1, 2024).unwrap();
    let voxels = (n * n * n) as f64;
    assert!(voxels >= 1e6);
    let mean_dev: f64 = noisy
        .data()
        .iter()
        .zip(flat.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / voxels;
    let expected = 0.0798;
    assert!(
        (mean_dev - expected).abs() <= 0.002,
        "mean |deviation| {mean_dev:.5} outside {expected} +/- 0.002"
    );
    pass(
        8,
        "corruption suite",
        &format!("round trip bitwise; mean |dev| {mean_dev:.4} vs 0.0798 +/- 0.002"),
    );
}

// --- 9. Brain-variant consistency ------------------------------------------

#[test]
fn criterion_09_brain_consistency() {
    // whole = edema union core on 100 random label maps, exactly.
    let mut rng = Rng::new(909);
    for trial in 0..100 {
        let mut labels = Volume::new((8, 8, 8), (1.0, 1.0, 1.0)).unwrap();
        for v in labels.data_mut() {
            *v = rng.below(3) as f32;
        }
        let (edema, core, whole) = mirror_unet::brain::brain_targets(&labels).unwrap();
        for i in 0..labels.numel() {
            let or = f32::from(edema.data()[i] == 1.0 || core.data()[i] == 1.0);
            assert_eq!(whole.data()[i], or, "trial {trial} voxel {i}");
        }
    }

    // brain_final_mask ignores the bottleneck decoder entirely.
    let cfg = ModelConfig {
        version: Version::V2Brain,
        shared: StageIndexSet::new([5]).unwrap(),
        theta: None,
        stage_widths: [2, 4, 4, 8, 8],
        in_patch: (16, 16, 16),
        seed: 66,
    };
    let mut model = build_model::<f32>(&cfg).unwrap();
    let sample = brain_phantom((16, 16, 16), (2.0, 2.0, 2.0), 3).unwrap();
    let x_a: Tensor<f32> = sample.x_a.to_tensor();
    let x_b: Tensor<f32> = sample.x_b.to_tensor();
    let (outputs, _) = model.forward(&x_a, &x_b).unwrap();
    let before = mirror_unet::brain::brain_final_mask(&outputs).unwrap();

    let mut perturb = Rng::new(1234);
    for id in model.bottleneck_ids() {
        for v in model.store.get_mut(id).data_mut() {
            *v += 0.37 * perturb.normal() as f32;
        }
    }
    let (outputs2, _) = model.forward(&x_a, &x_b).unwrap();
    let after = mirror_unet::brain::brain_final_mask(&outputs2).unwrap();
    assert_eq!(
        before.data(),
        after.data(),
        "final mask changed under bottleneck perturbation"
    );
    pass(9, "brain consistency", "100 label maps exact; mask invariant to D_BTL perturbation");
}

// --- 10. Preprocessing exactness --------------------------------------------

#[test]
fn criterion_10_preprocessing_exactness() -> Result<()> {
    let sp = (2.0, 2.0, 3.0);
    let ct = Volume::from_data((4, 1, 1), sp, (0.0, 0.0, 0.0), vec![300.0, -100.0, 75.0, 0.0])?;
    let pet = Volume::from_data((4, 1, 1), sp, (0.0, 0.0, 0.0), vec![7.5, 0.0, 15.0, 30.0])?;
    let (ct_p, pet_p) = preprocess_autopet(&ct, &pet)?;
    assert_eq!(ct_p.data()[0], 1.0, "CT 300 -> 1.0");
    assert_eq!(ct_p.data()[1], 0.0, "CT -100 -> 0.0");
    assert_eq!(ct_p.data()[2], 0.5, "CT 75 -> 0.5");
    assert_eq!(pet_p.data()[0], 0.5, "SUV 7.5 -> 0.5");

    // NIfTI round trip, bit exact for values and spacing.
    let mut rng = Rng::new(1010);
    let mut vol = Volume::new((7, 5, 6), sp)?;
    vol.set_origin((-3.25, 8.5, 0.75));
    for v in vol.data_mut() {
        *v = rng.normal() as f32;
    }
    let dir = std::env::temp_dir().join(format!("munet-acc10-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("rt.nii.gz");
    save_volume(&vol, &path)?;
    let back = load_volume(&path)?;
    assert_eq!(back.data(), vol.data(), "values not bit exact");
    assert_eq!(back.spacing(), vol.spacing(), "spacing not bit exact");
    pass(10, "preprocessing exactness", "clip maps exact; NIfTI round trip bit exact");
    Ok(())
}

// Shared fixture sanity: checkpoints written during acceptance reload.
#[test]
fn acceptance_checkpoint_round_trip() {
    let cfg = ModelConfig {
        version: Version::V3,
        shared: StageIndexSet::new([4, 5]).unwrap(),
        theta: None,
        stage_widths: [2, 4, 4, 8, 8],
        in_patch: (16, 16, 16),
        seed: 8,
    };
    let model = build_model::<f32>(&cfg).unwrap();
    let dir = std::env::temp_dir().join(format!("munet-acc-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.ckpt");
    save_checkpoint(&model, &[], &path).unwrap();
    let (loaded, _) = mirror_unet::model::load_checkpoint(&path).unwrap();
    assert_eq!(loaded.param_count(), model.param_count());
}
