//! Foreground-biased patch sampling.

use super::{MultimodalSample, Volume};
use crate::error::Result;
use crate::rng::Rng;

fn crop_volume(vol: &Volume, start: (isize, isize, isize), shape: (usize, usize, usize), pad_edge: bool) -> Volume {
    let (nx, ny, nz) = vol.shape();
    let mut out = Volume::new(shape, vol.spacing()).expect("patch shape is nonzero");
    let o = vol.origin();
    let sp = vol.spacing();
    out.set_origin((
        o.0 + start.0 as f32 * sp.0,
        o.1 + start.1 as f32 * sp.1,
        o.2 + start.2 as f32 * sp.2,
    ));
    for z in 0..shape.2 {
        let sz = start.2 + z as isize;
        for y in 0..shape.1 {
            let sy = start.1 + y as isize;
            for x in 0..shape.0 {
                let sx = start.0 + x as isize;
                let inside = sx >= 0
                    && sy >= 0
                    && sz >= 0
                    && (sx as usize) < nx
                    && (sy as usize) < ny
                    && (sz as usize) < nz;
                let v = if inside {
                    vol.at(sx as usize, sy as usize, sz as usize)
                } else if pad_edge {
                    // Clamp to the nearest edge voxel.
                    let cx = sx.clamp(0, nx as isize - 1) as usize;
                    let cy = sy.clamp(0, ny as isize - 1) as usize;
                    let cz = sz.clamp(0, nz as isize - 1) as usize;
                    vol.at(cx, cy, cz)
                } else {
                    0.0
                };
                out.set(x, y, z, v);
            }
        }
    }
    out
}

/// Draws an aligned patch from all three volumes. With probability `p_fg`
/// the patch is centered on a uniformly chosen foreground voxel (when one
/// exists); otherwise the center is uniform over the volume. Out-of-range
/// regions are edge-padded for images and zero-padded for the mask. The
/// patch's tumor label is recomputed from the cropped mask.
pub fn sample_patch(
    sample: &MultimodalSample,
    patch_shape: (usize, usize, usize),
    p_fg: f64,
    seed: u64,
) -> Result<MultimodalSample> {
    assert!((0.0..=1.0).contains(&p_fg), "p_fg must be in [0, 1]");
    if patch_shape == sample.shape() {
        // The patch is the whole volume; every center yields the same crop.
        return Ok(sample.clone());
    }
    let mut rng = Rng::new(seed);
    let (nx, ny, nz) = sample.shape();

    let fg: Vec<usize> = (0..sample.y.numel())
        .filter(|&i| sample.y.data()[i] > 0.5)
        .collect();

    let center_idx = if !fg.is_empty() && rng.bernoulli(p_fg) {
        fg[rng.below(fg.len())]
    } else {
        rng.below(nx * ny * nz)
    };
    let cz = center_idx / (nx * ny);
    let cy = (center_idx / nx) % ny;
    let cx = center_idx % nx;

    let start = (
        cx as isize - (patch_shape.0 / 2) as isize,
        cy as isize - (patch_shape.1 / 2) as isize,
        cz as isize - (patch_shape.2 / 2) as isize,
    );

    let x_a = crop_volume(&sample.x_a, start, patch_shape, true);
    let x_b = crop_volume(&sample.x_b, start, patch_shape, true);
    let y = crop_volume(&sample.y, start, patch_shape, false);
    MultimodalSample::new(x_a, x_b, y)
}
