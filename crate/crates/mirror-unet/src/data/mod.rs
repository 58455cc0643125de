//! Volumes, NIfTI I/O, preprocessing, patch sampling, dataset manifests,
//! and the synthetic phantom generator used for desk-scale experiments.

pub mod manifest;
pub mod nifti;
pub mod phantom;
pub mod preprocess;
pub mod sampling;

pub use manifest::{load_manifest, ManifestEntry};
pub use nifti::{load_volume, save_mask, save_volume};
pub use phantom::{brain_phantom, generate_phantom, PhantomSpec};
pub use preprocess::{preprocess_autopet, preprocess_mri, resample_nearest, resample_trilinear};
pub use sampling::sample_patch;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 3D scalar grid with physical voxel spacing, axis order (W, H, D),
/// x fastest in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: (usize, usize, usize),
    spacing: (f32, f32, f32),
    origin: (f32, f32, f32),
    data: Vec<f32>,
}

impl Volume {
    pub fn new(shape: (usize, usize, usize), spacing: (f32, f32, f32)) -> Result<Self> {
        if spacing.0 <= 0.0 || spacing.1 <= 0.0 || spacing.2 <= 0.0 {
            return Err(Error::InvalidValue(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        if shape.0 == 0 || shape.1 == 0 || shape.2 == 0 {
            return Err(Error::InvalidValue(format!(
                "dimensions must be >= 1, got {shape:?}"
            )));
        }
        Ok(Volume {
            shape,
            spacing,
            origin: (0.0, 0.0, 0.0),
            data: vec![0.0; shape.0 * shape.1 * shape.2],
        })
    }

    pub fn from_data(
        shape: (usize, usize, usize),
        spacing: (f32, f32, f32),
        origin: (f32, f32, f32),
        data: Vec<f32>,
    ) -> Result<Self> {
        let mut v = Volume::new(shape, spacing)?;
        if data.len() != v.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "buffer has {} values, shape {:?} needs {}",
                data.len(),
                shape,
                v.data.len()
            )));
        }
        v.data = data;
        v.origin = origin;
        Ok(v)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn spacing(&self) -> (f32, f32, f32) {
        self.spacing
    }

    pub fn origin(&self) -> (f32, f32, f32) {
        self.origin
    }

    pub fn set_origin(&mut self, origin: (f32, f32, f32)) {
        self.origin = origin;
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline(always)]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.shape.1 + y) * self.shape.0 + x
    }

    #[inline(always)]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline(always)]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Voxel volume in cubic millimeters.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.0 as f64 * self.spacing.1 as f64 * self.spacing.2 as f64
    }

    /// True if any voxel exceeds 0.5 (foreground convention for masks).
    pub fn any_foreground(&self) -> bool {
        self.data.iter().any(|&v| v > 0.5)
    }

    /// Converts to a single-channel `[1, D, H, W]` network tensor.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let (nx, ny, nz) = self.shape;
        Tensor::from_vec(
            &[1, nz, ny, nx],
            self.data.iter().map(|&v| S::from_f64(v as f64)).collect(),
        )
    }

    /// Builds a volume from a `[1, D, H, W]` tensor, taking geometry from `like`.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>, like: &Volume) -> Volume {
        let s = t.shape();
        assert_eq!(s[0], 1, "expected single-channel tensor");
        assert_eq!((s[3], s[2], s[1]), like.shape);
        Volume {
            shape: like.shape,
            spacing: like.spacing,
            origin: like.origin,
            data: t.data().iter().map(|v| v.to_f64() as f32).collect(),
        }
    }
}

/// Two aligned modality volumes, a ground-truth mask, and the binary
/// tumor-presence label.
#[derive(Debug, Clone)]
pub struct MultimodalSample {
    /// CT or FLAIR.
    pub x_a: Volume,
    /// PET or T1Gd.
    pub x_b: Volume,
    /// Binary mask, or {0,1,2} label map for the brain task.
    pub y: Volume,
    /// Tumor presence: 1 iff `y` has at least one foreground voxel.
    pub c: u8,
}

impl MultimodalSample {
    pub fn new(x_a: Volume, x_b: Volume, y: Volume) -> Result<Self> {
        if x_a.shape() != x_b.shape() || x_a.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!(
                "sample volumes disagree: {:?} / {:?} / {:?}",
                x_a.shape(),
                x_b.shape(),
                y.shape()
            )));
        }
        if x_a.spacing() != x_b.spacing() || x_a.spacing() != y.spacing() {
            return Err(Error::ShapeMismatch(format!(
                "sample spacings disagree: {:?} / {:?} / {:?}",
                x_a.spacing(),
                x_b.spacing(),
                y.spacing()
            )));
        }
        let c = u8::from(y.any_foreground());
        Ok(MultimodalSample { x_a, x_b, y, c })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.x_a.shape()
    }
}
