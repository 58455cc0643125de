//! The desk-scale directional study: seeded phantom datasets, a v3 grid
//! over sharing locations and corruption settings, and a PET-only unimodal
//! reference, with the three directional comparisons evaluated on held-out
//! phantoms.

use std::path::Path;
use std::time::Instant;

use super::{evaluate_model, train_model, TrainConfig};
use crate::baselines::BaselineKind;
use crate::corruption::Corruption;
use crate::data::phantom::{phantom_dataset, PhantomSpec};
use crate::error::Result;
use crate::inference::WindowSpec;
use crate::model::{ModelConfig, StageIndexSet, Version};
use crate::objectives::LossWeights;

/// Desk-scale preset: 40 train / 10 test phantoms at 64^3, 30 epochs,
/// 3 seeds. Stage widths are quarter scale so the full study fits a
/// single-core CPU budget.
#[derive(Debug, Clone)]
pub struct DeskPreset {
    pub n_train: usize,
    pub n_test: usize,
    pub shape: (usize, usize, usize),
    pub spacing: (f32, f32, f32),
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub widths: [usize; 5],
    pub l_sets: Vec<StageIndexSet>,
    pub healthy_fraction: f64,
    pub data_seed: u64,
    pub organ_count: usize,
    pub lesion_radius_mm: (f32, f32),
    pub batch_size_override: Option<usize>,
    pub lr: f64,
    pub shuffle_edge: usize,
    /// Loss weights for the study arms. The voxel-mean reduction of the
    /// reconstruction losses rescales the reference lambda_rec by the patch
    /// voxel count, so the desk preset raises it to keep the auxiliary
    /// tasks materially active at desk scale.
    pub weights: LossWeights,
}

impl Default for DeskPreset {
    fn default() -> Self {
        DeskPreset {
            n_train: 40,
            n_test: 10,
            shape: (64, 64, 64),
            spacing: (2.0, 2.0, 3.0),
            epochs: 30,
            batch_size: 2,
            seeds: vec![101, 202, 303],
            widths: [2, 4, 8, 16, 32],
            l_sets: vec![
                StageIndexSet::new([4]).unwrap(),
                StageIndexSet::new([5]).unwrap(),
                StageIndexSet::new([6]).unwrap(),
            ],
            healthy_fraction: 0.3,
            data_seed: 2024,
            organ_count: 3,
            lesion_radius_mm: (6.0, 11.0),
            batch_size_override: None,
            lr: 2e-3,
            shuffle_edge: 16,
            weights: LossWeights {
                lambda_rec: 0.5,
                lambda_seg: 0.5,
                lambda_class: 0.05,
            },
        }
    }
}

impl DeskPreset {
    /// Stable fingerprint of every knob that affects results; used to match
    /// cached study outputs.
    pub fn fingerprint(&self) -> String {
        format!(
            "v1|train={}|test={}|shape={:?}|spacing={:?}|epochs={}|batch={}|seeds={:?}|widths={:?}|l={:?}|healthy={}|data_seed={}",
            self.n_train,
            self.n_test,
            self.shape,
            self.spacing,
            self.epochs,
            self.batch_size,
            self.seeds,
            self.widths,
            self.l_sets.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
            self.healthy_fraction,
            self.data_seed
        ) + &format!("|organs={}|radius={:?}|lr={}|edge={}|phantom=v2|w={},{},{}", self.organ_count, self.lesion_radius_mm, self.lr, self.shuffle_edge, self.weights.lambda_rec, self.weights.lambda_seg, self.weights.lambda_class)
    }

    /// A reduced configuration for quick desk checks; not the acceptance
    /// configuration.
    pub fn pilot() -> Self {
        DeskPreset {
            n_train: 16,
            n_test: 8,
            shape: (32, 32, 32),
            epochs: 40,
            seeds: vec![101, 202],
            organ_count: 2,
            lesion_radius_mm: (3.5, 6.5),
            shuffle_edge: 8,
            ..DeskPreset::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    /// "v3" or "pet_only".
    pub arm: String,
    pub shared: String,
    pub corruption: String,
    pub seed: u64,
    pub test_dice: f64,
    pub test_fpv_ml: f64,
    pub test_fnv_ml: f64,
    pub train_dice: f64,
    pub train_secs: f64,
}

/// Directional outcomes with effect sizes (Dice points, i.e. x100).
#[derive(Debug, Clone)]
pub struct DirectionReport {
    pub v3_mean: f64,
    pub pet_only_mean: f64,
    /// (a) v3 at L={5} with shuffling vs the PET-only unimodal baseline.
    pub dir_a: bool,
    pub shuffle_mean: f64,
    pub plain_mean: f64,
    /// (b) shuffling vs plain L2 across the tested sharing locations.
    pub dir_b: bool,
    pub per_l_means: Vec<(String, f64)>,
    pub l5_mean: f64,
    pub best_l_mean: f64,
    /// (c) L={5} best or within 1 Dice point of the best tested L.
    pub dir_c: bool,
}

impl DirectionReport {
    pub fn summary(&self) -> String {
        format!(
            "(a) v3 {:.2} vs pet-only {:.2}: {}\n(b) shuffle {:.2} vs plain {:.2}: {}\n(c) L=5 {:.2} vs best {:.2} (tolerance 1.0): {}\nper-L means: {:?}",
            self.v3_mean * 100.0,
            self.pet_only_mean * 100.0,
            if self.dir_a { "PASS" } else { "FAIL" },
            self.shuffle_mean * 100.0,
            self.plain_mean * 100.0,
            if self.dir_b { "PASS" } else { "FAIL" },
            self.l5_mean * 100.0,
            self.best_l_mean * 100.0,
            if self.dir_c { "PASS" } else { "FAIL" },
            self.per_l_means
                .iter()
                .map(|(l, d)| (l.clone(), (d * 1e4).round() / 1e2))
                .collect::<Vec<_>>()
        )
    }
}

pub fn write_study_csv(rows: &[StudyRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text =
        String::from("arm,shared,corruption,seed,dice,fpv_ml,fnv_ml,train_dice,train_secs\n");
    for r in rows {
        text.push_str(&format!(
            "{},\"{}\",{},{},{:.6},{:.6},{:.6},{:.6},{:.1}\n",
            r.arm, r.shared, r.corruption, r.seed, r.test_dice, r.test_fpv_ml, r.test_fnv_ml,
            r.train_dice, r.train_secs
        ));
    }
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}

pub fn read_study_csv(path: impl AsRef<Path>) -> Result<Vec<StudyRow>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut fields = Vec::new();
        let mut cur = String::new();
        let mut quoted = false;
        for ch in line.chars() {
            match ch {
                '"' => quoted = !quoted,
                ',' if !quoted => fields.push(std::mem::take(&mut cur)),
                _ => cur.push(ch),
            }
        }
        fields.push(cur);
        if fields.len() != 9 {
            return Err(crate::error::Error::InvalidValue(format!(
                "study CSV line {} has {} fields",
                i + 1,
                fields.len()
            )));
        }
        rows.push(StudyRow {
            arm: fields[0].clone(),
            shared: fields[1].clone(),
            corruption: fields[2].clone(),
            seed: fields[3].parse().unwrap_or(0),
            test_dice: fields[4].parse().unwrap_or(f64::NAN),
            test_fpv_ml: fields[5].parse().unwrap_or(f64::NAN),
            test_fnv_ml: fields[6].parse().unwrap_or(f64::NAN),
            train_dice: fields[7].parse().unwrap_or(f64::NAN),
            train_secs: fields[8].parse().unwrap_or(0.0),
        });
    }
    Ok(rows)
}

/// Loads a completed study from `dir` when its preset fingerprint matches.
pub fn load_cached_study(preset: &DeskPreset, dir: &Path) -> Option<(Vec<StudyRow>, DirectionReport)> {
    let fp = std::fs::read_to_string(dir.join("preset.txt")).ok()?;
    if fp.trim() != preset.fingerprint() {
        return None;
    }
    let rows = read_study_csv(dir.join("study.csv")).ok()?;
    let expected = preset.l_sets.len() * 2 * preset.seeds.len() + preset.seeds.len();
    if rows.len() != expected {
        return None;
    }
    let report = directions_from_rows(preset, &rows);
    Some((rows, report))
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs the full study: v3 x {L sets} x {plain, shuffle} x seeds plus a
/// PET-only unimodal arm per seed, all sharing the same phantom datasets.
/// Runs are independent and execute on the rayon pool; results are kept in
/// a fixed order so the output is identical however many workers exist.
pub fn run_desk_study(preset: &DeskPreset, out_dir: Option<&Path>) -> Result<(Vec<StudyRow>, DirectionReport)> {
    use rayon::prelude::*;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let phantom = PhantomSpec {
        shape: preset.shape,
        spacing: preset.spacing,
        organ_count: preset.organ_count,
        lesion_radius_mm: preset.lesion_radius_mm,
        ..PhantomSpec::default()
    };
    let train_set = phantom_dataset(preset.n_train, &phantom, preset.healthy_fraction, preset.data_seed)?;
    let test_set = phantom_dataset(
        preset.n_test,
        &phantom,
        preset.healthy_fraction,
        preset.data_seed ^ 0x7e57,
    )?;
    let window = WindowSpec::new(preset.shape, 0.5)?;

    let base_cfg = |seed: u64| TrainConfig {
        model: ModelConfig {
            version: Version::V3,
            shared: StageIndexSet::new([5]).unwrap(),
            theta: None,
            stage_widths: preset.widths,
            in_patch: preset.shape,
            seed,
        },
        epochs: preset.epochs,
        batch_size: preset.batch_size_override.unwrap_or(preset.batch_size),
        lr: preset.lr,
        shuffle_edge: preset.shuffle_edge,
        weights: preset.weights,
        seed,
        val_every: 10,
        ..TrainConfig::default()
    };

    // Assemble every run configuration up front.
    let mut planned: Vec<(TrainConfig, String, String, String, u64)> = Vec::new();
    for l_set in &preset.l_sets {
        for corruption in [Corruption::None, Corruption::Shuffle] {
            for &seed in &preset.seeds {
                let mut cfg = base_cfg(seed);
                cfg.model.shared = l_set.clone();
                cfg.corruption = corruption;
                planned.push((
                    cfg,
                    "v3".to_string(),
                    l_set.to_string(),
                    corruption.to_string(),
                    seed,
                ));
            }
        }
    }
    for &seed in &preset.seeds {
        let mut cfg = base_cfg(seed);
        cfg.baseline = Some(BaselineKind::UnimodalPet);
        planned.push((cfg, "pet_only".to_string(), String::new(), "none".to_string(), seed));
    }

    let total_runs = planned.len();
    let rows: Vec<StudyRow> = planned
        .par_iter()
        .enumerate()
        .map(|(i, (cfg, arm, shared, corruption, seed))| -> Result<StudyRow> {
            let t0 = Instant::now();
            eprintln!(
                "[study {:>2}/{total_runs}] {arm} L={{{shared}}} corruption={corruption} seed={seed} ...",
                i + 1
            );
            let run = train_model(cfg, &train_set, &test_set, None)?;
            // The directional comparisons use the final-epoch model so no
            // arm benefits from test-set checkpoint selection.
            let (_, agg) = evaluate_model(&run.final_model, &test_set, &window, cfg.tau)?;
            let (_, train_agg) = evaluate_model(&run.final_model, &train_set, &window, cfg.tau)?;
            let secs = t0.elapsed().as_secs_f64();
            eprintln!(
                "[study {:>2}/{total_runs}] {arm} L={{{shared}}} corruption={corruption} seed={seed} -> test dice {:.4} (train {:.4}) ({secs:.0}s)",
                i + 1,
                agg.dice,
                train_agg.dice
            );
            Ok(StudyRow {
                arm: arm.clone(),
                shared: shared.clone(),
                corruption: corruption.clone(),
                seed: *seed,
                test_dice: agg.dice,
                test_fpv_ml: agg.fpv_ml,
                test_fnv_ml: agg.fnv_ml,
                train_dice: train_agg.dice,
                train_secs: secs,
            })
        })
        .collect::<Result<Vec<StudyRow>>>()?;

    let report = directions_from_rows(preset, &rows);

    if let Some(dir) = out_dir {
        write_study_csv(&rows, dir.join("study.csv"))?;
        std::fs::write(dir.join("directions.txt"), report.summary())?;
        std::fs::write(dir.join("preset.txt"), preset.fingerprint())?;
    }
    Ok((rows, report))
}

/// Computes the three directional comparisons from study rows.
pub fn directions_from_rows(preset: &DeskPreset, rows: &[StudyRow]) -> DirectionReport {
    let dice_of = |arm: &str, shared: Option<&str>, corruption: Option<&str>| -> Vec<f64> {
        rows.iter()
            .filter(|r| {
                r.arm == arm
                    && shared.map(|s| r.shared == s).unwrap_or(true)
                    && corruption.map(|c| r.corruption == c).unwrap_or(true)
            })
            .map(|r| r.test_dice)
            .collect()
    };

    let v3_mean = mean(dice_of("v3", Some("5"), Some("shuffle")));
    let pet_only_mean = mean(dice_of("pet_only", None, None));
    let shuffle_mean = mean(dice_of("v3", None, Some("shuffle")));
    let plain_mean = mean(dice_of("v3", None, Some("none")));
    let per_l_means: Vec<(String, f64)> = preset
        .l_sets
        .iter()
        .map(|l| {
            let key = l.to_string();
            let m = mean(dice_of("v3", Some(&key), Some("shuffle")));
            (key, m)
        })
        .collect();
    let l5_mean = per_l_means
        .iter()
        .find(|(l, _)| l == "5")
        .map(|(_, d)| *d)
        .unwrap_or(f64::NAN);
    let best_l_mean = per_l_means
        .iter()
        .map(|(_, d)| *d)
        .fold(f64::NEG_INFINITY, f64::max);

    DirectionReport {
        v3_mean,
        pet_only_mean,
        dir_a: v3_mean >= pet_only_mean,
        shuffle_mean,
        plain_mean,
        dir_b: shuffle_mean >= plain_mean,
        per_l_means,
        l5_mean,
        best_l_mean,
        // Within one Dice point (metrics are on [0,1]; one point = 0.01).
        dir_c: l5_mean >= best_l_mean - 0.01,
    }
}
