// Temporary pilot-study probe; removed before finalizing.
use mirror_unet::training::study::{run_desk_study, DeskPreset};

#[test]
#[ignore]
fn pilot_study() {
    let mut preset = DeskPreset::pilot();
    if let Ok(epochs) = std::env::var("PILOT_EPOCHS") {
        preset.epochs = epochs.parse().unwrap();
    }
    if let Ok(h) = std::env::var("PILOT_HEALTHY") {
        preset.healthy_fraction = h.parse().unwrap();
    }
    let (rows, report) = run_desk_study(&preset, None).unwrap();
    for r in &rows {
        eprintln!(
            "{} L={{{}}} {} seed {}: test {:.4} train {:.4} fpv {:.4} fnv {:.4} ({:.0}s)",
            r.arm,
            r.shared,
            r.corruption,
            r.seed,
            r.test_dice,
            r.train_dice,
            r.test_fpv_ml,
            r.test_fnv_ml,
            r.train_secs
        );
    }
    eprintln!("{}", report.summary());
}
