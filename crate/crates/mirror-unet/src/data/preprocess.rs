//! Intensity preprocessing and spacing resampling.

use super::Volume;
use crate::error::{Error, Result};

/// Target spacing for the PET/CT pipeline, in millimeters.
pub const PETCT_SPACING: (f32, f32, f32) = (2.0, 2.0, 3.0);
/// Target spacing for the MRI pipeline, in millimeters.
pub const MRI_SPACING: (f32, f32, f32) = (1.0, 1.0, 1.0);

pub const CT_CLIP: (f32, f32) = (-100.0, 250.0);
pub const SUV_CLIP: (f32, f32) = (0.0, 15.0);

fn out_dims(shape: (usize, usize, usize), from: (f32, f32, f32), to: (f32, f32, f32)) -> (usize, usize, usize) {
    let f = |n: usize, a: f32, b: f32| ((n as f32 * a / b).round() as usize).max(1);
    (
        f(shape.0, from.0, to.0),
        f(shape.1, from.1, to.1),
        f(shape.2, from.2, to.2),
    )
}

/// Trilinear resampling to `target` spacing; voxel centers are aligned so
/// equal spacings reproduce the input exactly.
pub fn resample_trilinear(vol: &Volume, target: (f32, f32, f32)) -> Result<Volume> {
    if vol.spacing() == target {
        return Ok(vol.clone());
    }
    let (nx, ny, nz) = vol.shape();
    let (ox, oy, oz) = out_dims(vol.shape(), vol.spacing(), target);
    let mut out = Volume::new((ox, oy, oz), target)?;
    out.set_origin(vol.origin());
    let sp = vol.spacing();

    for z in 0..oz {
        let fz = ((z as f32 + 0.5) * target.2 / sp.2 - 0.5).clamp(0.0, (nz - 1) as f32);
        let z0 = fz.floor() as usize;
        let z1 = (z0 + 1).min(nz - 1);
        let tz = fz - z0 as f32;
        for y in 0..oy {
            let fy = ((y as f32 + 0.5) * target.1 / sp.1 - 0.5).clamp(0.0, (ny - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(ny - 1);
            let ty = fy - y0 as f32;
            for x in 0..ox {
                let fx = ((x as f32 + 0.5) * target.0 / sp.0 - 0.5).clamp(0.0, (nx - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(nx - 1);
                let tx = fx - x0 as f32;

                let c000 = vol.at(x0, y0, z0);
                let c100 = vol.at(x1, y0, z0);
                let c010 = vol.at(x0, y1, z0);
                let c110 = vol.at(x1, y1, z0);
                let c001 = vol.at(x0, y0, z1);
                let c101 = vol.at(x1, y0, z1);
                let c011 = vol.at(x0, y1, z1);
                let c111 = vol.at(x1, y1, z1);

                let c00 = c000 + (c100 - c000) * tx;
                let c10 = c010 + (c110 - c010) * tx;
                let c01 = c001 + (c101 - c001) * tx;
                let c11 = c011 + (c111 - c011) * tx;
                let c0 = c00 + (c10 - c00) * ty;
                let c1 = c01 + (c11 - c01) * ty;
                out.set(x, y, z, c0 + (c1 - c0) * tz);
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor resampling for label volumes.
pub fn resample_nearest(vol: &Volume, target: (f32, f32, f32)) -> Result<Volume> {
    if vol.spacing() == target {
        return Ok(vol.clone());
    }
    let (nx, ny, nz) = vol.shape();
    let (ox, oy, oz) = out_dims(vol.shape(), vol.spacing(), target);
    let mut out = Volume::new((ox, oy, oz), target)?;
    out.set_origin(vol.origin());
    let sp = vol.spacing();
    for z in 0..oz {
        let iz = (((z as f32 + 0.5) * target.2 / sp.2 - 0.5).round() as isize)
            .clamp(0, nz as isize - 1) as usize;
        for y in 0..oy {
            let iy = (((y as f32 + 0.5) * target.1 / sp.1 - 0.5).round() as isize)
                .clamp(0, ny as isize - 1) as usize;
            for x in 0..ox {
                let ix = (((x as f32 + 0.5) * target.0 / sp.0 - 0.5).round() as isize)
                    .clamp(0, nx as isize - 1) as usize;
                out.set(x, y, z, vol.at(ix, iy, iz));
            }
        }
    }
    Ok(out)
}

/// CT: clip to [-100, 250] HU then map affinely to [0, 1].
/// PET: clip SUV to [0, 15] then map to [0, 1].
/// Both are resampled to 2.0 x 2.0 x 3.0 mm first.
pub fn preprocess_autopet(ct: &Volume, pet_suv: &Volume) -> Result<(Volume, Volume)> {
    let mut ct = resample_trilinear(ct, PETCT_SPACING)?;
    let mut pet = resample_trilinear(pet_suv, PETCT_SPACING)?;
    if ct.shape() != pet.shape() {
        return Err(Error::ShapeMismatch(format!(
            "CT {:?} vs PET {:?} after resampling",
            ct.shape(),
            pet.shape()
        )));
    }
    let (lo, hi) = CT_CLIP;
    let range = hi - lo;
    for v in ct.data_mut() {
        *v = (v.clamp(lo, hi) - lo) / range;
    }
    let (plo, phi) = SUV_CLIP;
    for v in pet.data_mut() {
        *v = v.clamp(plo, phi) / phi;
    }
    Ok((ct, pet))
}

/// Z-score normalization over nonzero (foreground) voxels after resampling
/// to 1 mm isotropic; background voxels are left at zero.
pub fn preprocess_mri(vol: &Volume) -> Result<Volume> {
    let mut out = resample_trilinear(vol, MRI_SPACING)?;
    let fg: Vec<usize> = (0..out.numel())
        .filter(|&i| out.data()[i] != 0.0)
        .collect();
    if fg.is_empty() {
        return Err(Error::ZeroVariance);
    }
    let n = fg.len() as f64;
    let mean = fg.iter().map(|&i| out.data()[i] as f64).sum::<f64>() / n;
    let var = fg
        .iter()
        .map(|&i| {
            let d = out.data()[i] as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    if var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let std = var.sqrt();
    for &i in &fg {
        out.data_mut()[i] = ((out.data()[i] as f64 - mean) / std) as f32;
    }
    Ok(out)
}
