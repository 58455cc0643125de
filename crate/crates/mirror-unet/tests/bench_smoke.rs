// Temporary overfit probe; superseded by the acceptance suite.
use mirror_unet::corruption::Corruption;
use mirror_unet::data::phantom::{phantom_dataset, PhantomSpec};
use mirror_unet::inference::WindowSpec;
use mirror_unet::model::{ModelConfig, StageIndexSet, Version};
use mirror_unet::training::{evaluate_model, train_model, TrainConfig};

#[test]
#[ignore]
fn overfit_smoke() {
    let spec = PhantomSpec {
        shape: (32, 32, 32),
        organ_count: 2,
        lesion_radius_mm: (4.0, 7.0),
        ..PhantomSpec::default()
    };
    let train = phantom_dataset(4, &spec, 0.0, 11).unwrap();
    assert!(train.iter().all(|s| s.c == 1));

    for (widths, batch, lr, epochs) in [
        ([2, 4, 8, 16, 32], 2usize, 1e-3, 100usize), // 200 steps
        ([2, 4, 8, 16, 32], 2, 2e-3, 100),
        ([2, 4, 8, 16, 32], 1, 2e-3, 50),
        ([2, 4, 8, 16, 32], 2, 2e-3, 150), // 300 steps
        ([4, 8, 16, 32, 64], 2, 2e-3, 100),
    ] {
        let cfg = TrainConfig {
            model: ModelConfig {
                version: Version::V1,
                shared: StageIndexSet::new([5]).unwrap(),
                theta: None,
                stage_widths: widths,
                in_patch: (32, 32, 32),
                seed: 5,
            },
            epochs,
            batch_size: batch,
            lr,
            corruption: Corruption::None,
            seed: 5,
            val_every: 1000,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let run = train_model(&cfg, &train, &train, None).unwrap();
        let window = WindowSpec::new((32, 32, 32), 0.5).unwrap();
        let (_, agg) = evaluate_model(&run.final_model, &train, &window, 0.5).unwrap();
        let n = run.history.steps.len();
        let last: Vec<f32> = run.history.steps[n - 20..].iter().map(|s| s.loss.total).collect();
        eprintln!(
            "widths {widths:?} batch {batch} lr {lr}: {n} steps in {:.0}s; train dice {:.4}; last20 loss {:.4}",
            t0.elapsed().as_secs_f64(),
            agg.dice,
            last.iter().sum::<f32>() / 20.0,
        );
    }
}
