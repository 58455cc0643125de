//! JSON dataset manifests listing per-case file paths.
//!
//! A manifest is a JSON array of either `{ct, pet, mask, label}` or
//! `{flair, t1gd, mask}` entries. Phantom datasets are materialized to the
//! same layout so synthetic and real data are interchangeable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_volume, save_mask, save_volume, MultimodalSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PetCtEntry {
    pub ct: PathBuf,
    pub pet: PathBuf,
    pub mask: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrainEntry {
    pub flair: PathBuf,
    pub t1gd: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestEntry {
    PetCt(PetCtEntry),
    Brain(BrainEntry),
}

impl ManifestEntry {
    /// Loads the entry's volumes. Paths are resolved relative to `base` when
    /// they are not absolute.
    pub fn load(&self, base: &Path) -> Result<MultimodalSample> {
        let resolve = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        let (a, b, mask, label) = match self {
            ManifestEntry::PetCt(e) => (
                load_volume(resolve(&e.ct))?,
                load_volume(resolve(&e.pet))?,
                load_volume(resolve(&e.mask))?,
                e.label,
            ),
            ManifestEntry::Brain(e) => (
                load_volume(resolve(&e.flair))?,
                load_volume(resolve(&e.t1gd))?,
                load_volume(resolve(&e.mask))?,
                None,
            ),
        };
        let sample = MultimodalSample::new(a, b, mask)?;
        if let Some(l) = label {
            if l != sample.c {
                return Err(Error::InvalidValue(format!(
                    "manifest label {l} disagrees with mask foreground (c = {})",
                    sample.c
                )));
            }
        }
        Ok(sample)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), serde_json::to_string_pretty(entries)?)?;
    Ok(())
}

/// Writes samples as NIfTI files plus a `manifest.json` into `dir`.
/// Brain samples (label maps with values > 1) get `{flair, t1gd, mask}`
/// entries; everything else gets `{ct, pet, mask, label}`.
pub fn materialize_dataset(
    samples: &[MultimodalSample],
    dir: impl AsRef<Path>,
    brain: bool,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mask_name = format!("case{i:04}_mask.nii.gz");
        save_mask(&s.y, dir.join(&mask_name))?;
        if brain {
            let flair = format!("case{i:04}_flair.nii.gz");
            let t1gd = format!("case{i:04}_t1gd.nii.gz");
            save_volume(&s.x_a, dir.join(&flair))?;
            save_volume(&s.x_b, dir.join(&t1gd))?;
            entries.push(ManifestEntry::Brain(BrainEntry {
                flair: flair.into(),
                t1gd: t1gd.into(),
                mask: mask_name.into(),
            }));
        } else {
            let ct = format!("case{i:04}_ct.nii.gz");
            let pet = format!("case{i:04}_pet.nii.gz");
            save_volume(&s.x_a, dir.join(&ct))?;
            save_volume(&s.x_b, dir.join(&pet))?;
            entries.push(ManifestEntry::PetCt(PetCtEntry {
                ct: ct.into(),
                pet: pet.into(),
                mask: mask_name.into(),
                label: Some(s.c),
            }));
        }
    }
    let manifest_path = dir.join("manifest.json");
    save_manifest(&entries, &manifest_path)?;
    Ok(manifest_path)
}

/// Loads every sample listed in a manifest file.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<MultimodalSample>> {
    let path = manifest_path.as_ref();
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let entries = load_manifest(path)?;
    entries.iter().map(|e| e.load(&base)).collect()
}
