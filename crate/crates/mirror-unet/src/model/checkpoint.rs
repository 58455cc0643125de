//! Checkpoint serialization: a flat map from stage-qualified parameter
//! names to little-endian float32 arrays, preceded by the model config and
//! free-form metadata as key=value text.
//!
//! Tied stages are written under *both* branch prefixes (equal bytes), so a
//! sweep can diff `branchA.stage5.*` against `branchB.stage5.*` to confirm
//! tying; the loader verifies that duplicated entries agree bit for bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{build_model, MirrorUNet, ModelConfig, StageIndexSet, ThetaSetting, Version};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

const MAGIC: &[u8; 8] = b"MUNET1\0\0";

impl ModelConfig {
    pub fn to_meta(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("model.version".to_string(), self.version.to_string()),
            ("model.shared".to_string(), self.shared.to_string()),
            (
                "model.widths".to_string(),
                self.stage_widths
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "model.patch".to_string(),
                format!("{},{},{}", self.in_patch.0, self.in_patch.1, self.in_patch.2),
            ),
            ("model.seed".to_string(), self.seed.to_string()),
        ];
        if let Some(theta) = self.theta {
            kv.push(("model.theta".to_string(), theta.to_string()));
        }
        kv
    }

    pub fn from_meta(map: &BTreeMap<String, String>) -> Result<ModelConfig> {
        let get = |k: &str| -> Result<&String> {
            map.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing config key '{k}'")))
        };
        let version = Version::parse(get("model.version")?)?;
        let shared = StageIndexSet::parse(get("model.shared")?)?;
        let widths_vec: Vec<usize> = get("model.widths")?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Checkpoint(format!("bad widths: {e}")))?;
        if widths_vec.len() != 5 {
            return Err(Error::Checkpoint(format!(
                "expected 5 stage widths, got {}",
                widths_vec.len()
            )));
        }
        let mut stage_widths = [0usize; 5];
        stage_widths.copy_from_slice(&widths_vec);
        let patch_vec: Vec<usize> = get("model.patch")?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Checkpoint(format!("bad patch: {e}")))?;
        if patch_vec.len() != 3 {
            return Err(Error::Checkpoint("patch needs 3 dimensions".into()));
        }
        let seed: u64 = get("model.seed")?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad seed: {e}")))?;
        let theta = match map.get("model.theta") {
            Some(s) => Some(ThetaSetting::parse(s)?),
            None => None,
        };
        Ok(ModelConfig {
            version,
            shared,
            theta,
            stage_widths,
            in_patch: (patch_vec[0], patch_vec[1], patch_vec[2]),
            seed,
        })
    }
}

/// Low-level container writer shared with the baseline models.
pub fn write_named<S: Scalar>(
    path: impl AsRef<Path>,
    meta: &[(String, String)],
    named: &[(String, &crate::tensor::Tensor<S>)],
) -> Result<()> {
    let mut meta_text = String::new();
    for (k, v) in meta {
        meta_text.push_str(k);
        meta_text.push('=');
        meta_text.push_str(v);
        meta_text.push('\n');
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_text.as_bytes());
    buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in named {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.numel() as u64).to_le_bytes());
        for &v in tensor.data() {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path.as_ref())?;
    f.write_all(&buf)?;
    Ok(())
}

/// Low-level container reader; returns metadata and the name -> values map.
pub fn read_named(
    path: impl AsRef<Path>,
) -> Result<(BTreeMap<String, String>, BTreeMap<String, Vec<f32>>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let meta_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let meta_text = std::str::from_utf8(take(&mut pos, meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("meta not UTF-8: {e}")))?
        .to_string();
    let mut meta = BTreeMap::new();
    for line in meta_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }

    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut entries: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|e| Error::Checkpoint(format!("name not UTF-8: {e}")))?
            .to_string();
        let numel = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let raw = take(&mut pos, numel * 4)?;
        let mut data = Vec::with_capacity(numel);
        for c in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        }
        entries.insert(name, data);
    }
    Ok((meta, entries))
}

/// Writes the model plus free-form metadata (e.g. training spacing).
pub fn save_checkpoint<S: Scalar>(
    model: &MirrorUNet<S>,
    extra_meta: &[(String, String)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let meta: Vec<(String, String)> = model
        .config
        .to_meta()
        .into_iter()
        .chain(extra_meta.iter().cloned())
        .collect();
    let named_ids = model.named_params();
    let named: Vec<(String, &crate::tensor::Tensor<S>)> = named_ids
        .iter()
        .map(|(n, id)| (n.clone(), model.store.get(*id)))
        .collect();
    write_named(path, &meta, &named)
}

/// Reads a checkpoint, rebuilds the model, and fills its parameters.
/// Returns the model and the full metadata map.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(MirrorUNet<f32>, BTreeMap<String, String>)> {
    let (meta, entries) = read_named(path)?;
    let config = ModelConfig::from_meta(&meta)?;
    let mut model = build_model::<f32>(&config)?;
    let named = model.named_params();
    let mut filled: BTreeMap<usize, String> = BTreeMap::new();
    for (name, id) in &named {
        let data = entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
        let tensor = model.store.get_mut(*id);
        if tensor.numel() != data.len() {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}' has {} values, model expects {}",
                data.len(),
                tensor.numel()
            )));
        }
        if let Some(prev) = filled.get(&id.0) {
            // Tied storage seen under a second name: verify bit equality.
            if tensor.data() != &data[..] {
                return Err(Error::Checkpoint(format!(
                    "tied stage mismatch between '{prev}' and '{name}'"
                )));
            }
        } else {
            tensor.data_mut().copy_from_slice(data);
            filled.insert(id.0, name.clone());
        }
    }
    Ok((model, meta))
}
