//! Hyperparameter sweep runner over the version x sharing x setting grid.

use std::path::Path;

use super::{evaluate_model, train_model, TrainConfig};
use crate::corruption::Corruption;
use crate::data::phantom::{phantom_dataset, PhantomSpec};
use crate::error::Result;
use crate::inference::WindowSpec;
use crate::model::{ModelConfig, StageIndexSet, ThetaSetting, Version};
use crate::objectives::LossWeights;

/// The studied sharing locations.
pub fn sharing_grid() -> Vec<StageIndexSet> {
    [
        vec![3],
        vec![4],
        vec![5],
        vec![6],
        vec![7],
        vec![4, 5, 6],
        vec![3, 4, 5, 6, 7],
    ]
    .into_iter()
    .map(|v| StageIndexSet::new(v).expect("grid indices are valid"))
    .collect()
}

/// One grid cell. Corruption applies to v1-v3 cells, theta to v4 cells.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub version: Version,
    pub shared: StageIndexSet,
    pub corruption: Option<Corruption>,
    pub theta: Option<ThetaSetting>,
    pub seed: u64,
}

impl SweepCell {
    /// The cell's setting string for reports: the corruption name or theta.
    pub fn setting(&self) -> String {
        match (self.corruption, self.theta) {
            (Some(c), _) => c.to_string(),
            (_, Some(t)) => format!("theta={t}"),
            _ => "-".to_string(),
        }
    }

    /// None when runnable, otherwise the skip reason.
    pub fn incompatibility(&self) -> Option<String> {
        if self.version == Version::V4 {
            if self.corruption.is_some() {
                return Some(format!("corruption undefined for {}", self.version));
            }
            if self.theta.is_none() {
                return Some("v4 requires theta".to_string());
            }
        } else {
            if self.theta.is_some() {
                return Some(format!("theta undefined for {}", self.version));
            }
            if self.corruption.is_none() {
                return Some(format!("{} requires a corruption setting", self.version));
            }
        }
        None
    }
}

/// The full studied grid: versions v1-v3 crossed with 7 sharing sets and
/// 3 corruption settings (63 cells), plus v4 crossed with 7 sharing sets
/// and 6 theta settings (42 cells).
pub fn table2_grid(seed: u64) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for version in [Version::V1, Version::V2, Version::V3] {
        for shared in sharing_grid() {
            for corruption in [Corruption::None, Corruption::Noise, Corruption::Shuffle] {
                cells.push(SweepCell {
                    version,
                    shared: shared.clone(),
                    corruption: Some(corruption),
                    theta: None,
                    seed,
                });
            }
        }
    }
    let thetas = [
        ThetaSetting::Fixed(0.1),
        ThetaSetting::Fixed(0.2),
        ThetaSetting::Fixed(0.3),
        ThetaSetting::Fixed(0.4),
        ThetaSetting::Fixed(0.5),
        ThetaSetting::Learnable,
    ];
    for shared in sharing_grid() {
        for theta in thetas {
            cells.push(SweepCell {
                version: Version::V4,
                shared: shared.clone(),
                corruption: None,
                theta: Some(theta),
                seed,
            });
        }
    }
    cells
}

/// Desk-scale execution settings for a sweep.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub n_train: usize,
    pub n_val: usize,
    pub phantom: PhantomSpec,
    pub healthy_fraction: f64,
    pub data_seed: u64,
    pub patch: (usize, usize, usize),
    pub widths: [usize; 5],
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub lr: f64,
    pub weight_decay: f64,
    pub p_fg: f64,
    pub overlap: f64,
    pub tau: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            n_train: 8,
            n_val: 4,
            phantom: PhantomSpec {
                shape: (32, 32, 32),
                lesion_radius_mm: (4.0, 7.0),
                organ_count: 2,
                ..PhantomSpec::default()
            },
            healthy_fraction: 0.25,
            data_seed: 7,
            patch: (32, 32, 32),
            widths: [2, 4, 8, 16, 32],
            epochs: 2,
            batch_size: 4,
            weights: LossWeights::default(),
            lr: 1e-3,
            weight_decay: 1e-6,
            p_fg: 2.0 / 3.0,
            overlap: 0.5,
            tau: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub version: String,
    pub shared: String,
    pub setting: String,
    pub seed: u64,
    pub dice: f64,
    pub fpv_ml: f64,
    pub fnv_ml: f64,
    pub history: String,
    pub skipped: Option<String>,
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("version,shared,setting,seed,dice,fpv_ml,fnv_ml,history,skipped\n");
    for r in rows {
        text.push_str(&format!(
            "{},\"{}\",{},{},{:.6},{:.6},{:.6},{},{}\n",
            r.version,
            r.shared,
            r.setting,
            r.seed,
            r.dice,
            r.fpv_ml,
            r.fnv_ml,
            r.history,
            r.skipped.clone().unwrap_or_default()
        ));
    }
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}

/// Runs every cell on a shared seeded phantom dataset; one row per cell,
/// incompatible cells recorded as skipped with a reason. Writes
/// `sweep.csv` plus per-cell history CSVs into `out_dir` when given.
pub fn run_sweep(
    settings: &SweepSettings,
    cells: &[SweepCell],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let train_set = phantom_dataset(
        settings.n_train,
        &settings.phantom,
        settings.healthy_fraction,
        settings.data_seed,
    )?;
    let val_set = phantom_dataset(
        settings.n_val,
        &settings.phantom,
        settings.healthy_fraction,
        settings.data_seed ^ 0x5eed,
    )?;

    let mut rows = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        if let Some(reason) = cell.incompatibility() {
            eprintln!(
                "[sweep {i:>3}/{}] skip {} L={{{}}} {}: {reason}",
                cells.len(),
                cell.version,
                cell.shared,
                cell.setting()
            );
            rows.push(SweepRow {
                version: cell.version.to_string(),
                shared: cell.shared.to_string(),
                setting: cell.setting(),
                seed: cell.seed,
                dice: f64::NAN,
                fpv_ml: f64::NAN,
                fnv_ml: f64::NAN,
                history: String::new(),
                skipped: Some(reason),
            });
            continue;
        }

        let cfg = TrainConfig {
            model: ModelConfig {
                version: cell.version,
                shared: cell.shared.clone(),
                theta: cell.theta,
                stage_widths: settings.widths,
                in_patch: settings.patch,
                seed: cell.seed,
            },
            baseline: None,
            weights: settings.weights,
            lr: settings.lr,
            weight_decay: settings.weight_decay,
            batch_size: settings.batch_size,
            epochs: settings.epochs,
            corruption: cell.corruption.unwrap_or(Corruption::None),
            p_fg: settings.p_fg,
            seed: cell.seed,
            overlap: settings.overlap,
            tau: settings.tau,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let run = train_model(&cfg, &train_set, &val_set, None)?;
        let window = WindowSpec::new(settings.patch, settings.overlap)?;
        let (_, agg) = evaluate_model(&run.best_model, &val_set, &window, settings.tau)?;

        let history_path = if let Some(dir) = out_dir {
            let name = format!(
                "history_{}_L{}_{}_s{}.csv",
                cell.version,
                cell.shared.to_string().replace(',', "-"),
                cell.setting().replace('=', "-"),
                cell.seed
            );
            let p = dir.join(&name);
            run.history.write_steps_csv(&p)?;
            name
        } else {
            String::new()
        };
        eprintln!(
            "[sweep {i:>3}/{}] {} L={{{}}} {} seed {} -> dice {:.4} ({:.1}s)",
            cells.len(),
            cell.version,
            cell.shared,
            cell.setting(),
            cell.seed,
            agg.dice,
            t0.elapsed().as_secs_f64()
        );
        rows.push(SweepRow {
            version: cell.version.to_string(),
            shared: cell.shared.to_string(),
            setting: cell.setting(),
            seed: cell.seed,
            dice: agg.dice,
            fpv_ml: agg.fpv_ml,
            fnv_ml: agg.fnv_ml,
            history: history_path,
            skipped: None,
        });
    }
    if let Some(dir) = out_dir {
        write_sweep_csv(&rows, dir.join("sweep.csv"))?;
    }
    Ok(rows)
}
