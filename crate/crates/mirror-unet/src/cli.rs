//! Command-line surface: `synth`, `train`, `eval`, `infer`, `sweep`,
//! `report`.
//!
//! Configuration is a flat key=value file plus `--key=value` overrides
//! (applied in that order); unknown keys are rejected. Relative output
//! paths resolve under `MUNET_OUT_ROOT` when it is set.

use std::path::{Path, PathBuf};

use crate::baselines::{load_baseline_checkpoint, BaselineKind};
use crate::corruption::Corruption;
use crate::data::manifest::{load_dataset, materialize_dataset};
use crate::data::phantom::{brain_phantom, phantom_dataset, PhantomSpec};
use crate::data::{load_volume, preprocess_autopet, save_mask, save_volume, MultimodalSample, Volume};
use crate::error::{Error, Result};
use crate::inference::{binarize, WindowSpec};
use crate::metrics::write_metrics_csv;
use crate::model::{load_checkpoint, StageIndexSet, ThetaSetting, Version};
use crate::report::{emit_report, DEFAULT_ORDERING_EPSILON};
use crate::training::study::{run_desk_study, DeskPreset};
use crate::training::sweep::{run_sweep, table2_grid, SweepSettings};
use crate::training::{evaluate_model, train_model, TrainConfig, TrainedModel};

pub const OUT_ROOT_ENV: &str = "MUNET_OUT_ROOT";

/// Exit code contract: 0 success, 2 configuration error, 3 runtime failure.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Cli(_)
        | Error::InvalidConfig(_)
        | Error::InvalidStageIndex(_)
        | Error::PatchNotDivisible(_)
        | Error::InvalidValue(_) => 2,
        _ => 3,
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_root().join(path)
    }
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub out: PathBuf,
    pub count: usize,
    pub healthy_fraction: f64,
    pub shape: (usize, usize, usize),
    pub spacing: (f32, f32, f32),
    pub seed: u64,
    pub brain: bool,
    pub organ_count: usize,
    pub lesion_radius: (f32, f32),
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub cfg: TrainConfig,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data_manifest: PathBuf,
    pub out: PathBuf,
    pub overlap: f64,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub input_a: PathBuf,
    pub input_b: PathBuf,
    pub out: PathBuf,
    pub overlap: f64,
    pub tau: f64,
    pub preprocess_autopet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepGrid {
    Table2,
    Desk,
    Pilot,
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub grid: SweepGrid,
    pub out: PathBuf,
    pub settings: SweepSettings,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ReportArgs {
    pub sweep_csv: PathBuf,
    pub out: PathBuf,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub enum Command {
    Synth(SynthArgs),
    Train(Box<TrainArgs>),
    Eval(EvalArgs),
    Infer(InferArgs),
    Sweep(SweepArgs),
    Report(ReportArgs),
}

pub const USAGE: &str = "usage: munet <synth|train|eval|infer|sweep|report> [options]\n\
  synth  --out DIR --count N [--healthy F] [--shape X,Y,Z] [--spacing X,Y,Z] [--seed N] [--brain] [--organs N] [--lesion-radius LO,HI]\n\
  train  --train MANIFEST --val MANIFEST --out DIR [--config FILE] [--KEY=VALUE ...]\n\
  eval   --checkpoint CKPT --data MANIFEST --out DIR [--overlap F] [--tau F]\n\
  infer  --checkpoint CKPT --ct NII --pet NII --out DIR [--overlap F] [--tau F] [--preprocess-autopet]\n\
  sweep  --grid table2|desk|pilot --out DIR [--KEY=VALUE ...]\n\
  report --sweep CSV --out DIR [--epsilon POINTS]\n\
Config keys (file lines or --key=value): model.version, model.shared, model.theta,\n\
model.widths, model.patch, model.seed, train.lr, train.weight_decay, train.batch_size,\n\
train.epochs, train.corruption, train.sigma, train.shuffle_edge, train.p_fg, train.seed,\n\
train.overlap, train.tau, train.val_every, loss.lambda_rec, loss.lambda_seg,\n\
loss.lambda_class, baseline.kind.\n\
MUNET_OUT_ROOT sets the root for relative output paths.";

fn cli_err(msg: impl Into<String>) -> Error {
    Error::Cli(msg.into())
}

fn parse_triple_usize(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    let vals: Vec<usize> = match parts.len() {
        1 => {
            let v = parts[0]
                .trim()
                .parse()
                .map_err(|_| cli_err(format!("bad dimension '{s}'")))?;
            vec![v, v, v]
        }
        3 => parts
            .iter()
            .map(|p| p.trim().parse().map_err(|_| cli_err(format!("bad dimension '{s}'"))))
            .collect::<Result<_>>()?,
        _ => return Err(cli_err(format!("expected 1 or 3 comma-separated values, got '{s}'"))),
    };
    Ok((vals[0], vals[1], vals[2]))
}

fn parse_triple_f32(s: &str) -> Result<(f32, f32, f32)> {
    let parts: Vec<&str> = s.split(',').collect();
    let vals: Vec<f32> = match parts.len() {
        1 => {
            let v = parts[0]
                .trim()
                .parse()
                .map_err(|_| cli_err(format!("bad value '{s}'")))?;
            vec![v, v, v]
        }
        3 => parts
            .iter()
            .map(|p| p.trim().parse().map_err(|_| cli_err(format!("bad value '{s}'"))))
            .collect::<Result<_>>()?,
        _ => return Err(cli_err(format!("expected 1 or 3 comma-separated values, got '{s}'"))),
    };
    Ok((vals[0], vals[1], vals[2]))
}

fn parse_pair_f32(s: &str) -> Result<(f32, f32)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(cli_err(format!("expected LO,HI, got '{s}'")));
    }
    let lo = parts[0].trim().parse().map_err(|_| cli_err(format!("bad value '{s}'")))?;
    let hi = parts[1].trim().parse().map_err(|_| cli_err(format!("bad value '{s}'")))?;
    Ok((lo, hi))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| cli_err(format!("type mismatch for {key}: '{value}'")))
}

/// Applies one configuration key to a training config.
pub fn apply_config_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "model.version" => cfg.model.version = Version::parse(value)?,
        "model.shared" => cfg.model.shared = StageIndexSet::parse(value)?,
        "model.theta" => cfg.model.theta = Some(ThetaSetting::parse(value)?),
        "model.widths" => {
            let w: Vec<usize> = value
                .split(',')
                .map(|p| num::<usize>("model.widths", p.trim()))
                .collect::<Result<_>>()?;
            if w.len() != 5 {
                return Err(cli_err(format!("model.widths needs 5 values, got {}", w.len())));
            }
            cfg.model.stage_widths.copy_from_slice(&w);
        }
        "model.patch" => cfg.model.in_patch = parse_triple_usize(value)?,
        "model.seed" => {
            cfg.model.seed = num("model.seed", value)?;
        }
        "train.lr" => cfg.lr = num("train.lr", value)?,
        "train.weight_decay" => cfg.weight_decay = num("train.weight_decay", value)?,
        "train.batch_size" => cfg.batch_size = num("train.batch_size", value)?,
        "train.epochs" => cfg.epochs = num("train.epochs", value)?,
        "train.corruption" => cfg.corruption = Corruption::parse(value)?,
        "train.sigma" => cfg.sigma = num("train.sigma", value)?,
        "train.shuffle_edge" => cfg.shuffle_edge = num("train.shuffle_edge", value)?,
        "train.p_fg" => cfg.p_fg = num("train.p_fg", value)?,
        "train.seed" => {
            cfg.seed = num("train.seed", value)?;
        }
        "train.overlap" => cfg.overlap = num("train.overlap", value)?,
        "train.tau" => cfg.tau = num("train.tau", value)?,
        "train.val_every" => cfg.val_every = num("train.val_every", value)?,
        "loss.lambda_rec" => cfg.weights.lambda_rec = num("loss.lambda_rec", value)?,
        "loss.lambda_seg" => cfg.weights.lambda_seg = num("loss.lambda_seg", value)?,
        "loss.lambda_class" => cfg.weights.lambda_class = num("loss.lambda_class", value)?,
        "baseline.kind" => cfg.baseline = Some(BaselineKind::parse(value)?),
        other => return Err(cli_err(format!("unknown config key '{other}'"))),
    }
    Ok(())
}

/// Reads a flat key=value config file ('#' starts a comment line).
pub fn apply_config_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| cli_err(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        apply_config_key(cfg, k.trim(), v.trim())?;
    }
    Ok(())
}

struct ArgStream<'a> {
    args: &'a [String],
    pos: usize,
}

impl<'a> ArgStream<'a> {
    fn next_value(&mut self, flag: &str) -> Result<&'a str> {
        self.pos += 1;
        self.args
            .get(self.pos - 1)
            .map(|s| s.as_str())
            .ok_or_else(|| cli_err(format!("missing value for {flag}")))
    }
}

/// Parses argv (without the program name) into a fully resolved command.
pub fn parse_cli(argv: &[String]) -> Result<Command> {
    let sub = argv.first().ok_or_else(|| cli_err("missing subcommand"))?;
    let rest = &argv[1..];
    match sub.as_str() {
        "synth" => parse_synth(rest),
        "train" => parse_train(rest),
        "eval" => parse_eval(rest),
        "infer" => parse_infer(rest),
        "sweep" => parse_sweep(rest),
        "report" => parse_report(rest),
        other => Err(cli_err(format!("unknown subcommand '{other}'"))),
    }
}

/// Splits `--key=value` / `--key value` pairs, returning (key, value).
fn next_flag<'a>(s: &mut ArgStream<'a>) -> Result<Option<(String, Option<&'a str>)>> {
    let Some(arg) = s.args.get(s.pos) else {
        return Ok(None);
    };
    s.pos += 1;
    let stripped = arg
        .strip_prefix("--")
        .ok_or_else(|| cli_err(format!("expected a --flag, got '{arg}'")))?;
    if let Some((k, v)) = stripped.split_once('=') {
        Ok(Some((k.to_string(), Some(v))))
    } else {
        Ok(Some((stripped.to_string(), None)))
    }
}

fn want<'a>(s: &mut ArgStream<'a>, inline: Option<&'a str>, flag: &str) -> Result<&'a str> {
    match inline {
        Some(v) => Ok(v),
        None => s.next_value(flag),
    }
}

fn parse_synth(args: &[String]) -> Result<Command> {
    let mut s = ArgStream { args, pos: 0 };
    let mut out = None;
    let mut count = 10usize;
    let mut healthy = 0.5f64;
    let mut shape = (64usize, 64usize, 64usize);
    let mut spacing = (2.0f32, 2.0f32, 3.0f32);
    let mut seed = 0u64;
    let mut brain = false;
    let mut organs = 3usize;
    let mut lesion_radius = (5.0f32, 10.0f32);
    while let Some((key, inline)) = next_flag(&mut s)? {
        match key.as_str() {
            "out" => out = Some(PathBuf::from(want(&mut s, inline, "--out")?)),
            "count" => count = num("count", want(&mut s, inline, "--count")?)?,
            "healthy" => healthy = num("healthy", want(&mut s, inline, "--healthy")?)?,
            "shape" => shape = parse_triple_usize(want(&mut s, inline, "--shape")?)?,
            "spacing" => spacing = parse_triple_f32(want(&mut s, inline, "--spacing")?)?,
            "seed" => seed = num("seed", want(&mut s, inline, "--seed")?)?,
            "brain" => brain = true,
            "organs" => organs = num("organs", want(&mut s, inline, "--organs")?)?,
            "lesion-radius" => {
                lesion_radius = parse_pair_f32(want(&mut s, inline, "--lesion-radius")?)?
            }
            other => return Err(cli_err(format!("unknown flag '--{other}' for synth"))),
        }
    }
    Ok(Command::Synth(SynthArgs {
        out: out.ok_or_else(|| cli_err("synth requires --out"))?,
        count,
        healthy_fraction: healthy,
        shape,
        spacing,
        seed,
        brain,
        organ_count: organs,
        lesion_radius,
    }))
}

fn parse_train(args: &[String]) -> Result<Command> {
    let mut s = ArgStream { args, pos: 0 };
    let mut cfg = TrainConfig::default();
    let mut config_file: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut train_manifest = None;
    let mut val_manifest = None;
    let mut out = None;
    while let Some((key, inline)) = next_flag(&mut s)? {
        match key.as_str() {
            "config" => config_file = Some(PathBuf::from(want(&mut s, inline, "--config")?)),
            "train" => train_manifest = Some(PathBuf::from(want(&mut s, inline, "--train")?)),
            "val" => val_manifest = Some(PathBuf::from(want(&mut s, inline, "--val")?)),
            "out" => out = Some(PathBuf::from(want(&mut s, inline, "--out")?)),
            k if k.contains('.') => {
                let v = want(&mut s, inline, &format!("--{k}"))?;
                overrides.push((k.to_string(), v.to_string()));
            }
            other => return Err(cli_err(format!("unknown flag '--{other}' for train"))),
        }
    }
    if let Some(path) = &config_file {
        apply_config_file(&mut cfg, path)?;
    }
    for (k, v) in &overrides {
        apply_config_key(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(Command::Train(Box::new(TrainArgs {
        cfg,
        train_manifest: train_manifest.ok_or_else(|| cli_err("train requires --train"))?,
        val_manifest: val_manifest.ok_or_else(|| cli_err("train requires --val"))?,
        out: out.ok_or_else(|| cli_err("train requires --out"))?,
    })))
}

fn parse_eval(args: &[String]) -> Result<Command> {
    let mut s = ArgStream { args, pos: 0 };
    let mut checkpoint = None;
    let mut data = None;
    let mut out = None;
    let mut overlap = 0.5f64;
    let mut tau = 0.5f64;
    while let Some((key, inline)) = next_flag(&mut s)? {
        match key.as_str() {
            "checkpoint" => checkpoint = Some(PathBuf::from(want(&mut s, inline, "--checkpoint")?)),
            "data" => data = Some(PathBuf::from(want(&mut s, inline, "--data")?)),
            "out" => out = Some(PathBuf::from(want(&mut s, inline, "--out")?)),
            "overlap" => overlap = num("overlap", want(&mut s, inline, "--overlap")?)?,
            "tau" => tau = num("tau", want(&mut s, inline, "--tau")?)?,
            other => return Err(cli_err(format!("unknown flag '--{other}' for eval"))),
        }
    }
    Ok(Command::Eval(EvalArgs {
        checkpoint: checkpoint.ok_or_else(|| cli_err("eval requires --checkpoint"))?,
        data_manifest: data.ok_or_else(|| cli_err("eval requires --data"))?,
        out: out.ok_or_else(|| cli_err("eval requires --out"))?,
        overlap,
        tau,
    }))
}

fn parse_infer(args: &[String]) -> Result<Command> {
    let mut s = ArgStream { args, pos: 0 };
    let mut checkpoint = None;
    let mut a = None;
    let mut b = None;
    let mut out = None;
    let mut overlap = 0.5f64;
    let mut tau = 0.5f64;
    let mut preprocess = false;
    while let Some((key, inline)) = next_flag(&mut s)? {
        match key.as_str() {
            "checkpoint" => checkpoint = Some(PathBuf::from(want(&mut s, inline, "--checkpoint")?)),
            "ct" | "flair" => a = Some(PathBuf::from(want(&mut s, inline, "--ct")?)),
            "pet" | "t1gd" => b = Some(PathBuf::from(want(&mut s, inline, "--pet")?)),
            "out" => out = Some(PathBuf::from(want(&mut s, inline, "--out")?)),
            "overlap" => overlap = num("overlap", want(&mut s, inline, "--overlap")?)?,
            "tau" => tau = num("tau", want(&mut s, inline, "--tau")?)?,
            "preprocess-autopet" => preprocess = true,
            other => return Err(cli_err(format!("unknown flag '--{other}' for infer"))),
        }
    }
    Ok(Command::Infer(InferArgs {
        checkpoint: checkpoint.ok_or_else(|| cli_err("infer requires --checkpoint"))?,
        input_a: a.ok_or_else(|| cli_err("infer requires --ct (or --flair)"))?,
        input_b: b.ok_or_else(|| cli_err("infer requires --pet (or --t1gd)"))?,
        out: out.ok_or_else(|| cli_err("infer requires --out"))?,
        overlap,
        tau,
        preprocess_autopet: preprocess,
    }))
}

fn parse_sweep(args: &[String]) -> Result<Command> {
    let mut s = ArgStream { args, pos: 0 };
    let mut grid = None;
    let mut out = None;
    let mut settings = SweepSettings::default();
    let mut seed = 0u64;
    while let Some((key, inline)) = next_flag(&mut s)? {
        match key.as_str() {
            "grid" => {
                grid = Some(match want(&mut s, inline, "--grid")? {
                    "table2" => SweepGrid::Table2,
                    "desk" => SweepGrid::Desk,
                    "pilot" => SweepGrid::Pilot,
                    other => return Err(cli_err(format!("unknown grid '{other}'"))),
                })
            }
            "out" => out = Some(PathBuf::from(want(&mut s, inline, "--out")?)),
            "seed" => seed = num("seed", want(&mut s, inline, "--seed")?)?,
            "train-n" => settings.n_train = num("train-n", want(&mut s, inline, "--train-n")?)?,
            "val-n" => settings.n_val = num("val-n", want(&mut s, inline, "--val-n")?)?,
            "shape" => {
                let shape = parse_triple_usize(want(&mut s, inline, "--shape")?)?;
                settings.phantom.shape = shape;
                settings.patch = shape;
            }
            "epochs" => settings.epochs = num("epochs", want(&mut s, inline, "--epochs")?)?,
            "batch" => settings.batch_size = num("batch", want(&mut s, inline, "--batch")?)?,
            "widths" => {
                let w: Vec<usize> = want(&mut s, inline, "--widths")?
                    .split(',')
                    .map(|p| num::<usize>("widths", p.trim()))
                    .collect::<Result<_>>()?;
                if w.len() != 5 {
                    return Err(cli_err("widths needs 5 values"));
                }
                settings.widths.copy_from_slice(&w);
            }
            other => return Err(cli_err(format!("unknown flag '--{other}' for sweep"))),
        }
    }
    Ok(Command::Sweep(SweepArgs {
        grid: grid.ok_or_else(|| cli_err("sweep requires --grid"))?,
        out: out.ok_or_else(|| cli_err("sweep requires --out"))?,
        settings,
        seed,
    }))
}

fn parse_report(args: &[String]) -> Result<Command> {
    let mut s = ArgStream { args, pos: 0 };
    let mut sweep_csv = None;
    let mut out = None;
    let mut epsilon = DEFAULT_ORDERING_EPSILON;
    while let Some((key, inline)) = next_flag(&mut s)? {
        match key.as_str() {
            "sweep" => sweep_csv = Some(PathBuf::from(want(&mut s, inline, "--sweep")?)),
            "out" => out = Some(PathBuf::from(want(&mut s, inline, "--out")?)),
            "epsilon" => epsilon = num("epsilon", want(&mut s, inline, "--epsilon")?)?,
            other => return Err(cli_err(format!("unknown flag '--{other}' for report"))),
        }
    }
    Ok(Command::Report(ReportArgs {
        sweep_csv: sweep_csv.ok_or_else(|| cli_err("report requires --sweep"))?,
        out: out.ok_or_else(|| cli_err("report requires --out"))?,
        epsilon,
    }))
}

fn load_trained(path: &Path) -> Result<(TrainedModel, std::collections::BTreeMap<String, String>)> {
    let (meta, _) = crate::model::checkpoint::read_named(path)?;
    if meta.contains_key("baseline.kind") {
        let (model, meta) = load_baseline_checkpoint(path)?;
        Ok((TrainedModel::Baseline(model), meta))
    } else {
        let (model, meta) = load_checkpoint(path)?;
        Ok((TrainedModel::Mirror(model), meta))
    }
}

fn check_spacing(meta: &std::collections::BTreeMap<String, String>, sample: &MultimodalSample) -> Result<()> {
    if let Some(sp) = meta.get("data.spacing") {
        let want = parse_triple_f32(sp)?;
        let got = sample.x_a.spacing();
        if want != got {
            return Err(Error::SpacingMismatch {
                expected: want,
                got,
            });
        }
    }
    Ok(())
}

fn patch_of(model: &TrainedModel) -> (usize, usize, usize) {
    match model {
        TrainedModel::Mirror(m) => m.config.in_patch,
        // Baseline checkpoints carry no patch; a 64-cube tile is the
        // desk-scale default and any multiple-of-16 tile is valid.
        TrainedModel::Baseline(_) => (64, 64, 64),
    }
}

/// Executes a parsed command.
pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => {
            let dir = resolve_out(&a.out);
            let samples: Vec<MultimodalSample> = if a.brain {
                let mut rng = crate::rng::Rng::new(a.seed);
                (0..a.count)
                    .map(|_| brain_phantom(a.shape, a.spacing, rng.next_u64()))
                    .collect::<Result<_>>()?
            } else {
                let spec = PhantomSpec {
                    shape: a.shape,
                    spacing: a.spacing,
                    organ_count: a.organ_count,
                    lesion_radius_mm: a.lesion_radius,
                    ..PhantomSpec::default()
                };
                phantom_dataset(a.count, &spec, a.healthy_fraction, a.seed)?
            };
            let manifest = materialize_dataset(&samples, &dir, a.brain)?;
            println!("wrote {} cases; manifest: {}", samples.len(), manifest.display());
            Ok(())
        }
        Command::Train(a) => {
            let dir = resolve_out(&a.out);
            let train_set = load_dataset(&a.train_manifest)?;
            let val_set = load_dataset(&a.val_manifest)?;
            let run = train_model(&a.cfg, &train_set, &val_set, Some(&dir))?;
            println!(
                "trained {} epochs; best validation Dice {:.4} at epoch {}; outputs in {}",
                a.cfg.epochs,
                run.best_val_dice,
                run.best_epoch,
                dir.display()
            );
            Ok(())
        }
        Command::Eval(a) => {
            let dir = resolve_out(&a.out);
            std::fs::create_dir_all(&dir)?;
            let (model, meta) = load_trained(&a.checkpoint)?;
            let dataset = load_dataset(&a.data_manifest)?;
            if dataset.is_empty() {
                return Err(Error::EmptyDataset);
            }
            check_spacing(&meta, &dataset[0])?;
            let window = WindowSpec::new(patch_of(&model), a.overlap)?;
            let (records, agg) = evaluate_model(&model, &dataset, &window, a.tau)?;
            write_metrics_csv(&records, dir.join("metrics.csv"))?;
            println!(
                "evaluated {} cases: dice {:.4}, FPV {:.4} mL, FNV {:.4} mL; metrics.csv in {}",
                records.len(),
                agg.dice,
                agg.fpv_ml,
                agg.fnv_ml,
                dir.display()
            );
            Ok(())
        }
        Command::Infer(a) => {
            let dir = resolve_out(&a.out);
            std::fs::create_dir_all(&dir)?;
            let (model, meta) = load_trained(&a.checkpoint)?;
            let mut vol_a = load_volume(&a.input_a)?;
            let mut vol_b = load_volume(&a.input_b)?;
            if a.preprocess_autopet {
                let (ct, pet) = preprocess_autopet(&vol_a, &vol_b)?;
                vol_a = ct;
                vol_b = pet;
            }
            let zeros = {
                let mut z = Volume::new(vol_a.shape(), vol_a.spacing())?;
                z.set_origin(vol_a.origin());
                z
            };
            let sample = MultimodalSample::new(vol_a, vol_b, zeros)?;
            check_spacing(&meta, &sample)?;
            let window = WindowSpec::new(patch_of(&model), a.overlap)?;
            let probs = model.predict_probs(&sample, &window)?;
            if probs.len() == 1 {
                save_volume(&probs[0], dir.join("probability.nii.gz"))?;
            } else {
                // Brain task: per-class probabilities and masks alongside
                // the final whole-tumor mask (label 1 = whole tumor).
                save_volume(&probs[0], dir.join("probability_edema.nii.gz"))?;
                save_volume(&probs[1], dir.join("probability_core.nii.gz"))?;
                save_mask(&binarize(&probs[0], a.tau)?, dir.join("mask_edema.nii.gz"))?;
                save_mask(&binarize(&probs[1], a.tau)?, dir.join("mask_core.nii.gz"))?;
            }
            let mask = model.predict_mask(&sample, &window, a.tau)?;
            save_mask(&mask, dir.join("mask.nii.gz"))?;
            println!("wrote probability and mask volumes to {}", dir.display());
            Ok(())
        }
        Command::Sweep(a) => {
            let dir = resolve_out(&a.out);
            match a.grid {
                SweepGrid::Table2 => {
                    let cells = table2_grid(a.seed);
                    let rows = run_sweep(&a.settings, &cells, Some(&dir))?;
                    let done = rows.iter().filter(|r| r.skipped.is_none()).count();
                    println!(
                        "sweep complete: {done}/{} cells; table: {}",
                        rows.len(),
                        dir.join("sweep.csv").display()
                    );
                }
                SweepGrid::Desk | SweepGrid::Pilot => {
                    let preset = if a.grid == SweepGrid::Desk {
                        DeskPreset::default()
                    } else {
                        DeskPreset::pilot()
                    };
                    // run_desk_study writes study.csv, directions.txt, and
                    // the preset fingerprint into the output directory.
                    let (_, report) = run_desk_study(&preset, Some(&dir))?;
                    println!("{}", report.summary());
                }
            }
            Ok(())
        }
        Command::Report(a) => {
            let dir = resolve_out(&a.out);
            let bundle = emit_report(&a.sweep_csv, &dir, a.epsilon)?;
            for line in &bundle.ordering_summary {
                println!("{line}");
            }
            if !bundle.missing.is_empty() {
                println!("warning: {} missing cells (see warnings.txt)", bundle.missing.len());
            }
            println!("report files in {}", dir.display());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn train_overrides_resolve_shared_stages() {
        let cmd = parse_cli(&argv(&[
            "train",
            "--train",
            "a.json",
            "--val",
            "b.json",
            "--out",
            "runs/x",
            "--model.shared=5",
            "--train.epochs=3",
        ]))
        .unwrap();
        match cmd {
            Command::Train(t) => {
                assert!(t.cfg.model.shared.contains(5));
                assert_eq!(t.cfg.model.shared.iter().count(), 1);
                assert_eq!(t.cfg.epochs, 3);
            }
            _ => panic!("expected train"),
        }
    }

    #[test]
    fn invalid_stage_index_is_a_config_error() {
        let err = parse_cli(&argv(&[
            "train",
            "--train",
            "a.json",
            "--val",
            "b.json",
            "--out",
            "o",
            "--model.shared=9",
        ]))
        .unwrap_err();
        assert!(matches!(err, Error::InvalidStageIndex(9)));
        assert_eq!(exit_code_for(&err), 2);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_cli(&argv(&[
            "train",
            "--train",
            "a.json",
            "--val",
            "b.json",
            "--out",
            "o",
            "--model.depth=9",
        ]))
        .unwrap_err();
        assert!(matches!(err, Error::Cli(_)));
    }

    #[test]
    fn sweep_table2_grid_resolves() {
        let cmd = parse_cli(&argv(&["sweep", "--grid=table2", "--out", "s"])).unwrap();
        match cmd {
            Command::Sweep(s) => {
                assert_eq!(s.grid, SweepGrid::Table2);
                assert_eq!(table2_grid(s.seed).len(), 105);
            }
            _ => panic!("expected sweep"),
        }
    }

    #[test]
    fn config_file_then_override_order() {
        let dir = std::env::temp_dir().join(format!("munet-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg_path = dir.join("c.toml");
        std::fs::write(&cfg_path, "# comment\nmodel.version = v3\ntrain.epochs = 7\n").unwrap();
        let cmd = parse_cli(&argv(&[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--train",
            "a.json",
            "--val",
            "b.json",
            "--out",
            "o",
            "--train.epochs=9",
        ]))
        .unwrap();
        match cmd {
            Command::Train(t) => {
                assert_eq!(t.cfg.model.version, Version::V3);
                assert_eq!(t.cfg.epochs, 9); // CLI wins over the file
            }
            _ => panic!("expected train"),
        }
    }

    #[test]
    fn type_mismatch_is_reported() {
        let err = parse_cli(&argv(&[
            "train",
            "--train",
            "a.json",
            "--val",
            "b.json",
            "--out",
            "o",
            "--train.epochs=soon",
        ]))
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("type mismatch"), "{msg}");
    }
}
