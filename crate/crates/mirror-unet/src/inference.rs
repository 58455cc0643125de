//! Sliding-window whole-volume prediction, thresholding, and late-fusion
//! combination rules.

use crate::data::{MultimodalSample, Volume};
use crate::error::{Error, Result};
use crate::model::{fuse_logits, MirrorUNet, Version};
use crate::nn::ops::sigmoid;
use crate::tensor::Tensor;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Sliding-window tiling: `stride = patch * (1 - overlap)`, uniform
/// probability blending over overlapping tiles.
#[derive(Debug, Clone)]
pub struct WindowSpec {
    pub patch_shape: (usize, usize, usize),
    pub overlap: f64,
}

impl WindowSpec {
    pub fn new(patch_shape: (usize, usize, usize), overlap: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::InvalidConfig(format!(
                "overlap {overlap} outside [0, 1)"
            )));
        }
        Ok(WindowSpec {
            patch_shape,
            overlap,
        })
    }

    fn stride(&self, patch: usize) -> usize {
        ((patch as f64) * (1.0 - self.overlap)).round().max(1.0) as usize
    }
}

/// Tile start offsets covering `0..dim` completely; the last tile is pulled
/// back so it ends exactly at `dim`.
pub fn tile_starts(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    if patch >= dim {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut s = 0usize;
    while s + patch < dim {
        starts.push(s);
        s += stride;
    }
    starts.push(dim - patch);
    starts.dedup();
    starts
}

/// Maps tiles of the two aligned input volumes to probability maps.
pub trait TilePredictor {
    /// Number of probability volumes produced per tile.
    fn n_outputs(&self) -> usize;
    /// Each returned tensor is `[1, D, H, W]` with values in [0, 1].
    fn predict_tile(&self, x_a: &Tensor<f32>, x_b: &Tensor<f32>) -> Result<Vec<Tensor<f32>>>;
}

fn extract_patch(vol: &Volume, start: (usize, usize, usize), shape: (usize, usize, usize)) -> Tensor<f32> {
    let (nx, ny, _nz) = vol.shape();
    let mut data = Vec::with_capacity(shape.0 * shape.1 * shape.2);
    for z in 0..shape.2 {
        for y in 0..shape.1 {
            let base = ((start.2 + z) * ny + (start.1 + y)) * nx + start.0;
            data.extend_from_slice(&vol.data()[base..base + shape.0]);
        }
    }
    Tensor::from_vec(&[1, shape.2, shape.1, shape.0], data)
}

fn pad_to(vol: &Volume, shape: (usize, usize, usize)) -> Volume {
    let (nx, ny, nz) = vol.shape();
    if (nx, ny, nz) == shape {
        return vol.clone();
    }
    let mut out = Volume::new(shape, vol.spacing()).expect("padded shape nonzero");
    out.set_origin(vol.origin());
    for z in 0..shape.2 {
        let sz = z.min(nz - 1);
        for y in 0..shape.1 {
            let sy = y.min(ny - 1);
            for x in 0..shape.0 {
                let sx = x.min(nx - 1);
                out.set(x, y, z, vol.at(sx, sy, sz));
            }
        }
    }
    out
}

/// Tiles the sample, averages per-tile probabilities uniformly, and returns
/// one probability volume per predictor output. Volumes smaller than the
/// patch are edge-padded and the padding is cropped from the result.
pub fn sliding_window_predict_multi<P: TilePredictor>(
    predictor: &P,
    sample: &MultimodalSample,
    spec: &WindowSpec,
) -> Result<Vec<Volume>> {
    let (nx, ny, nz) = sample.shape();
    let p = spec.patch_shape;
    let work_shape = (nx.max(p.0), ny.max(p.1), nz.max(p.2));
    let x_a = pad_to(&sample.x_a, work_shape);
    let x_b = pad_to(&sample.x_b, work_shape);

    let starts_x = tile_starts(work_shape.0, p.0, spec.stride(p.0));
    let starts_y = tile_starts(work_shape.1, p.1, spec.stride(p.1));
    let starts_z = tile_starts(work_shape.2, p.2, spec.stride(p.2));

    let n_out = predictor.n_outputs();
    let numel = work_shape.0 * work_shape.1 * work_shape.2;
    let mut sums = vec![vec![0.0f64; numel]; n_out];
    let mut counts = vec![0.0f64; numel];

    for &sz in &starts_z {
        for &sy in &starts_y {
            for &sx in &starts_x {
                let ta = extract_patch(&x_a, (sx, sy, sz), p);
                let tb = extract_patch(&x_b, (sx, sy, sz), p);
                let outs = predictor.predict_tile(&ta, &tb)?;
                debug_assert_eq!(outs.len(), n_out);
                for (o, out) in outs.iter().enumerate() {
                    let data = out.data();
                    let mut i = 0usize;
                    for z in 0..p.2 {
                        for y in 0..p.1 {
                            let base = ((sz + z) * work_shape.1 + (sy + y)) * work_shape.0 + sx;
                            for x in 0..p.0 {
                                sums[o][base + x] += data[i] as f64;
                                i += 1;
                            }
                        }
                    }
                }
                let mut i = 0usize;
                let _ = &mut i;
                for z in 0..p.2 {
                    for y in 0..p.1 {
                        let base = ((sz + z) * work_shape.1 + (sy + y)) * work_shape.0 + sx;
                        for x in 0..p.0 {
                            counts[base + x] += 1.0;
                        }
                    }
                }
            }
        }
    }

    let mut results = Vec::with_capacity(n_out);
    for sums_o in sums {
        let mut out = Volume::new((nx, ny, nz), sample.x_a.spacing())?;
        out.set_origin(sample.x_a.origin());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = (z * work_shape.1 + y) * work_shape.0 + x;
                    out.set(x, y, z, (sums_o[i] / counts[i]) as f32);
                }
            }
        }
        results.push(out);
    }
    Ok(results)
}

/// Single-output convenience form.
pub fn sliding_window_predict<P: TilePredictor>(
    predictor: &P,
    sample: &MultimodalSample,
    spec: &WindowSpec,
) -> Result<Volume> {
    let mut v = sliding_window_predict_multi(predictor, sample, spec)?;
    Ok(v.remove(0))
}

impl TilePredictor for MirrorUNet<f32> {
    fn n_outputs(&self) -> usize {
        match self.config.version {
            Version::V2Brain | Version::V2RecBrain => 2,
            _ => 1,
        }
    }

    fn predict_tile(&self, x_a: &Tensor<f32>, x_b: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        let (out, _) = self.forward(x_a, x_b)?;
        match self.config.version {
            Version::V1 | Version::V2 | Version::V3 => {
                Ok(vec![out.out_b.map(sigmoid)])
            }
            Version::V4 => {
                let theta = self.theta().expect("v4 carries theta");
                let fused = fuse_logits(&out.out_a, &out.out_b, theta)?;
                Ok(vec![fused.map(sigmoid)])
            }
            Version::V2Brain => Ok(vec![out.out_a.map(sigmoid), out.out_b.map(sigmoid)]),
            Version::V2RecBrain => {
                // Branch B carries 3 channels (edema, core, whole); the
                // final mask unites the edema and core channels.
                let s = out.out_b.shape().to_vec();
                let vol = s[1] * s[2] * s[3];
                let spatial = [1, s[1], s[2], s[3]];
                let edema = Tensor::from_vec(&spatial, out.out_b.data()[..vol].to_vec());
                let core = Tensor::from_vec(&spatial, out.out_b.data()[vol..2 * vol].to_vec());
                Ok(vec![edema.map(sigmoid), core.map(sigmoid)])
            }
        }
    }
}

/// Thresholds probabilities at `tau` (>= convention).
pub fn binarize(probs: &Volume, tau: f64) -> Result<Volume> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::InvalidValue(format!("tau {tau} outside (0,1)")));
    }
    let mut out = probs.clone();
    for v in out.data_mut() {
        *v = f32::from(*v as f64 >= tau);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LateFusionMode {
    /// binarize(sigmoid(l_a + l_b), 0.5) on logit volumes.
    LogitSum,
    /// Voxelwise OR of binary masks.
    Union,
    /// Voxelwise AND of binary masks.
    Intersection,
}

fn check_mask(v: &Volume) -> Result<()> {
    if v.data().iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::InvalidValue(
            "late fusion mask input must be binary".into(),
        ));
    }
    Ok(())
}

/// Combines two unimodal predictions at the decision level.
pub fn late_fuse(a: &Volume, b: &Volume, mode: LateFusionMode) -> Result<Volume> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    match mode {
        LateFusionMode::LogitSum => {
            for (dst, &vb) in out.data_mut().iter_mut().zip(b.data()) {
                let p = sigmoid(*dst as f64 + vb as f64);
                *dst = f32::from(p >= 0.5);
            }
        }
        LateFusionMode::Union => {
            check_mask(a)?;
            check_mask(b)?;
            for (dst, &vb) in out.data_mut().iter_mut().zip(b.data()) {
                *dst = f32::from(*dst == 1.0 || vb == 1.0);
            }
        }
        LateFusionMode::Intersection => {
            check_mask(a)?;
            check_mask(b)?;
            for (dst, &vb) in out.data_mut().iter_mut().zip(b.data()) {
                *dst = f32::from(*dst == 1.0 && vb == 1.0);
            }
        }
    }
    Ok(out)
}

/// Whole-tumor mask for the brain task: voxelwise OR of the core and edema
/// masks. The bottleneck output never contributes to the final mask.
pub fn combine_brain_masks(core: &Volume, edema: &Volume) -> Result<Volume> {
    check_mask(core)?;
    check_mask(edema)?;
    late_fuse(core, edema, LateFusionMode::Union)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ConstStub(f32);
    impl TilePredictor for ConstStub {
        fn n_outputs(&self) -> usize {
            1
        }
        fn predict_tile(&self, x_a: &Tensor<f32>, _x_b: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
            Ok(vec![Tensor::full(x_a.shape(), self.0)])
        }
    }

    /// Returns a distinct constant per invocation; tiles are visited in a
    /// deterministic (z, y, x) order, so the call index identifies the tile.
    struct CountingStub(std::cell::RefCell<usize>);
    impl TilePredictor for CountingStub {
        fn n_outputs(&self) -> usize {
            1
        }
        fn predict_tile(&self, x_a: &Tensor<f32>, _x_b: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
            let mut c = self.0.borrow_mut();
            *c += 1;
            Ok(vec![Tensor::full(x_a.shape(), *c as f32)])
        }
    }

    fn flat_sample(shape: (usize, usize, usize)) -> MultimodalSample {
        let v = Volume::new(shape, (1.0, 1.0, 1.0)).unwrap();
        MultimodalSample::new(v.clone(), v.clone(), v).unwrap()
    }

    #[test]
    fn constant_stub_gives_constant_output_for_any_overlap() {
        let sample = flat_sample((20, 20, 12));
        for overlap in [0.0, 0.25, 0.5, 0.75] {
            let spec = WindowSpec::new((8, 8, 8), overlap).unwrap();
            let out = sliding_window_predict(&ConstStub(0.7), &sample, &spec).unwrap();
            assert_eq!(out.shape(), (20, 20, 12));
            assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        }
    }

    #[test]
    fn single_tile_equals_one_forward_pass() {
        let sample = flat_sample((8, 8, 8));
        let spec = WindowSpec::new((8, 8, 8), 0.5).unwrap();
        let stub = CountingStub(std::cell::RefCell::new(0));
        let out = sliding_window_predict(&stub, &sample, &spec).unwrap();
        assert_eq!(*stub.0.borrow(), 1);
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn overlapping_tiles_average_against_coverage_oracle() {
        let shape = (12, 8, 8);
        let patch = (8, 8, 8);
        let sample = flat_sample(shape);
        let spec = WindowSpec::new(patch, 0.5).unwrap();
        let stub = CountingStub(std::cell::RefCell::new(0));
        let out = sliding_window_predict(&stub, &sample, &spec).unwrap();

        // Brute-force coverage enumeration in the same (z, y, x) order.
        let sx = tile_starts(shape.0, patch.0, 4);
        let sy = tile_starts(shape.1, patch.1, 4);
        let sz = tile_starts(shape.2, patch.2, 4);
        let mut tiles = Vec::new();
        for &z in &sz {
            for &y in &sy {
                for &x in &sx {
                    tiles.push((x, y, z));
                }
            }
        }
        for vz in 0..shape.2 {
            for vy in 0..shape.1 {
                for vx in 0..shape.0 {
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    for (idx, &(tx, ty, tz)) in tiles.iter().enumerate() {
                        let inside = vx >= tx
                            && vx < tx + patch.0
                            && vy >= ty
                            && vy < ty + patch.1
                            && vz >= tz
                            && vz < tz + patch.2;
                        if inside {
                            sum += (idx + 1) as f64;
                            count += 1.0;
                        }
                    }
                    assert!(count >= 1.0, "voxel uncovered");
                    let expect = sum / count;
                    let got = out.at(vx, vy, vz) as f64;
                    assert!((got - expect).abs() < 1e-6, "({vx},{vy},{vz})");
                }
            }
        }
    }

    #[test]
    fn small_volume_is_padded_then_cropped() {
        let sample = flat_sample((5, 5, 5));
        let spec = WindowSpec::new((8, 8, 8), 0.5).unwrap();
        let out = sliding_window_predict(&ConstStub(0.3), &sample, &spec).unwrap();
        assert_eq!(out.shape(), (5, 5, 5));
    }

    #[test]
    fn binarize_conventions() {
        let mut v = Volume::new((2, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        v.set(0, 0, 0, 0.4);
        v.set(1, 0, 0, 0.6);
        let m = binarize(&v, 0.5).unwrap();
        assert_eq!(m.data(), &[0.0, 1.0]);

        // Probabilities exactly at tau binarize to foreground.
        let mut half = Volume::new((2, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        half.data_mut().iter_mut().for_each(|x| *x = 0.5);
        assert!(binarize(&half, 0.5)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 1.0));

        // Idempotence.
        let twice = binarize(&binarize(&v, 0.5).unwrap(), 0.5).unwrap();
        assert_eq!(twice.data(), m.data());

        assert!(binarize(&v, 0.0).is_err());
        assert!(binarize(&v, 1.0).is_err());
    }

    #[test]
    fn late_fusion_rules() {
        let mut a = Volume::new((3, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        a.set(0, 0, 0, 1.0);
        let mut b = Volume::new((3, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        b.set(2, 0, 0, 1.0);

        let u = late_fuse(&a, &b, LateFusionMode::Union).unwrap();
        assert_eq!(u.data(), &[1.0, 0.0, 1.0]);
        let i = late_fuse(&a, &b, LateFusionMode::Intersection).unwrap();
        assert_eq!(i.data(), &[0.0, 0.0, 0.0]);

        // Logit sum: sigmoid(2 - 1) ~ 0.731 -> foreground at tau 0.5.
        let mut la = Volume::new((1, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        la.set(0, 0, 0, 2.0);
        let mut lb = Volume::new((1, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        lb.set(0, 0, 0, -1.0);
        let fused = late_fuse(&la, &lb, LateFusionMode::LogitSum).unwrap();
        assert_eq!(fused.data(), &[1.0]);
    }

    #[test]
    fn union_and_intersection_bound_the_inputs() {
        let mut rng = crate::rng::Rng::new(17);
        let mut a = Volume::new((6, 6, 6), (1.0, 1.0, 1.0)).unwrap();
        let mut b = Volume::new((6, 6, 6), (1.0, 1.0, 1.0)).unwrap();
        for v in a.data_mut() {
            *v = f32::from(rng.bernoulli(0.4) as u8);
        }
        for v in b.data_mut() {
            *v = f32::from(rng.bernoulli(0.4) as u8);
        }
        let u = late_fuse(&a, &b, LateFusionMode::Union).unwrap();
        let i = late_fuse(&a, &b, LateFusionMode::Intersection).unwrap();
        for idx in 0..a.numel() {
            assert!(u.data()[idx] >= a.data()[idx].max(b.data()[idx]));
            assert!(i.data()[idx] <= a.data()[idx].min(b.data()[idx]));
        }
    }

    #[test]
    fn brain_mask_union_identities() {
        let mut core = Volume::new((4, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        core.set(0, 0, 0, 1.0);
        let mut edema = Volume::new((4, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        edema.set(2, 0, 0, 1.0);
        let whole = combine_brain_masks(&core, &edema).unwrap();
        assert_eq!(whole.data().iter().filter(|&&v| v == 1.0).count(), 2);

        // Absorption: edema containing core returns edema.
        let mut edema_sup = edema.clone();
        edema_sup.set(0, 0, 0, 1.0);
        let whole2 = combine_brain_masks(&core, &edema_sup).unwrap();
        assert_eq!(whole2.data(), edema_sup.data());
    }
}
