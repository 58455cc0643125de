//! Self-supervision input corruptions for the reconstruction branch:
//! additive Gaussian noise and voxel-patch shuffling.

use crate::data::Volume;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which corruption the reconstruction branch sees; `None` is the plain-L2
/// setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Corruption {
    None,
    Noise,
    Shuffle,
}

impl Corruption {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Corruption::None),
            "noise" => Ok(Corruption::Noise),
            "shuffle" | "shuffling" => Ok(Corruption::Shuffle),
            other => Err(Error::InvalidConfig(format!("unknown corruption '{other}'"))),
        }
    }
}

impl std::fmt::Display for Corruption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Corruption::None => "none",
            Corruption::Noise => "noise",
            Corruption::Shuffle => "shuffle",
        })
    }
}

/// Default noise level on [0,1]-scaled intensities.
pub const DEFAULT_SIGMA: f64 = 0.1;
/// Default shuffle cube edge in voxels.
pub const DEFAULT_PATCH_EDGE: usize = 16;

#[derive(Debug, Clone)]
pub struct ShuffleSpec {
    /// Cube edge; must divide every spatial dimension.
    pub patch_edge: usize,
    pub permutation_seed: u64,
}

impl ShuffleSpec {
    pub fn validate(&self, shape: (usize, usize, usize)) -> Result<()> {
        for d in [shape.0, shape.1, shape.2] {
            if self.patch_edge == 0 || d % self.patch_edge != 0 {
                return Err(Error::InvalidConfig(format!(
                    "patch_edge {} does not divide volume dimension {d}",
                    self.patch_edge
                )));
            }
        }
        Ok(())
    }
}

/// Adds i.i.d. zero-mean Gaussian noise of std `sigma`, then clips to [0,1].
pub fn gaussian_corrupt(volume: &Volume, sigma: f64, seed: u64) -> Result<Volume> {
    if sigma < 0.0 {
        return Err(Error::InvalidValue(format!("negative sigma {sigma}")));
    }
    let mut out = volume.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = Rng::new(seed);
    for v in out.data_mut() {
        *v = (*v + (sigma * rng.normal()) as f32).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Partitions the volume into non-overlapping cubes and permutes cube
/// positions uniformly at random. Returns the permutation (`perm[dest] =
/// source`) so the shuffle can be inverted.
pub fn patch_shuffle(volume: &Volume, spec: &ShuffleSpec) -> Result<(Volume, Vec<usize>)> {
    spec.validate(volume.shape())?;
    let n_cubes = cube_grid(volume, spec.patch_edge);
    let total = n_cubes.0 * n_cubes.1 * n_cubes.2;
    let perm = Rng::new(spec.permutation_seed).permutation(total);
    let out = apply_cube_permutation(volume, spec.patch_edge, &perm)?;
    Ok((out, perm))
}

/// Moves cube `perm[dest]` into position `dest` for every cube.
pub fn apply_cube_permutation(
    volume: &Volume,
    patch_edge: usize,
    perm: &[usize],
) -> Result<Volume> {
    let (gx, gy, gz) = cube_grid(volume, patch_edge);
    if perm.len() != gx * gy * gz {
        return Err(Error::InvalidConfig(format!(
            "permutation has {} entries, grid has {}",
            perm.len(),
            gx * gy * gz
        )));
    }
    let mut out = volume.clone();
    let e = patch_edge;
    for dest in 0..perm.len() {
        let src = perm[dest];
        let (dx, dy, dz) = (dest % gx, (dest / gx) % gy, dest / (gx * gy));
        let (sx, sy, sz) = (src % gx, (src / gx) % gy, src / (gx * gy));
        for z in 0..e {
            for y in 0..e {
                for x in 0..e {
                    let v = volume.at(sx * e + x, sy * e + y, sz * e + z);
                    out.set(dx * e + x, dy * e + y, dz * e + z, v);
                }
            }
        }
    }
    Ok(out)
}

/// Inverts a permutation returned by [`patch_shuffle`].
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (dest, &src) in perm.iter().enumerate() {
        inv[src] = dest;
    }
    inv
}

fn cube_grid(volume: &Volume, edge: usize) -> (usize, usize, usize) {
    let (nx, ny, nz) = volume.shape();
    (nx / edge, ny / edge, nz / edge)
}

/// Applies the configured corruption to the reconstruction branch's input.
pub fn apply_corruption(
    volume: &Volume,
    corruption: Corruption,
    sigma: f64,
    patch_edge: usize,
    seed: u64,
) -> Result<Volume> {
    match corruption {
        Corruption::None => Ok(volume.clone()),
        Corruption::Noise => gaussian_corrupt(volume, sigma, seed),
        Corruption::Shuffle => {
            // Training validates the edge against the patch shape up front;
            // ad-hoc shapes that the edge does not divide error here.
            let spec = ShuffleSpec {
                patch_edge,
                permutation_seed: seed,
            };
            patch_shuffle(volume, &spec).map(|(v, _)| v)
        }
    }
}
