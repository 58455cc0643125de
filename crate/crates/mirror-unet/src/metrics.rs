//! Dice score and lesion-wise false-positive / false-negative volumes via
//! connected-component analysis.

use crate::data::Volume;
use crate::error::{Error, Result};

/// Per-case evaluation record. Volumes are in milliliters.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub case_id: String,
    pub dice: f64,
    pub fpv_ml: f64,
    pub fnv_ml: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<(i32, i32, i32)> {
        let mut out = Vec::new();
        for dz in -1i32..=1 {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::Eighteen => manhattan <= 2,
                        Connectivity::TwentySix => true,
                    };
                    if keep {
                        out.push((dx, dy, dz));
                    }
                }
            }
        }
        out
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "6" => Ok(Connectivity::Six),
            "18" => Ok(Connectivity::Eighteen),
            "26" => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidConfig(format!("connectivity '{other}'"))),
        }
    }
}

fn check_binary_mask(mask: &Volume) -> Result<()> {
    for &v in mask.data() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::InvalidValue(format!(
                "mask contains non-binary value {v}"
            )));
        }
    }
    Ok(())
}

/// 2|P intersect G| / (|P| + |G|); defined as 1.0 when both masks are empty.
pub fn dice_score(pred: &Volume, gt: &Volume) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    check_binary_mask(pred)?;
    check_binary_mask(gt)?;
    let mut inter = 0usize;
    let mut p = 0usize;
    let mut g = 0usize;
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let (pa, gb) = (a == 1.0, b == 1.0);
        p += pa as usize;
        g += gb as usize;
        inter += (pa && gb) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Labels foreground voxels; two voxels share a label iff they are connected
/// under the chosen neighborhood. Returns the label volume (0 = background,
/// labels from 1) and per-component voxel counts indexed by label - 1.
pub fn connected_components(mask: &Volume, connectivity: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (nx, ny, nz) = mask.shape();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; mask.numel()];
    let mut sizes = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut next = 0u32;

    for start in 0..mask.numel() {
        if mask.data()[start] == 0.0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        let mut count = 0usize;
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            count += 1;
            let x = (idx % nx) as i32;
            let y = ((idx / nx) % ny) as i32;
            let z = (idx / (nx * ny)) as i32;
            for &(dx, dy, dz) in &offsets {
                let (qx, qy, qz) = (x + dx, y + dy, z + dz);
                if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i32 || qy >= ny as i32 || qz >= nz as i32 {
                    continue;
                }
                let qidx = (qz as usize * ny + qy as usize) * nx + qx as usize;
                if mask.data()[qidx] != 0.0 && labels[qidx] == 0 {
                    labels[qidx] = next;
                    stack.push(qidx);
                }
            }
        }
        sizes.push(count);
    }
    (labels, sizes)
}

/// AutoPET-style lesion-wise volumes:
/// FPV = total volume of predicted components with zero ground-truth overlap;
/// FNV = total volume of ground-truth components entirely missed.
/// Computed in cubic millimeters from the voxel spacing, reported in mL.
pub fn fp_fn_volumes(pred: &Volume, gt: &Volume, connectivity: Connectivity) -> Result<(f64, f64)> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.spacing() != gt.spacing() {
        return Err(Error::SpacingMismatch {
            expected: gt.spacing(),
            got: pred.spacing(),
        });
    }
    check_binary_mask(pred)?;
    check_binary_mask(gt)?;
    let voxel_ml = pred.voxel_volume_mm3() / 1000.0;

    let summed = |source: &Volume, other: &Volume| -> f64 {
        let (labels, sizes) = connected_components(source, connectivity);
        let mut overlapped = vec![false; sizes.len()];
        for (i, &l) in labels.iter().enumerate() {
            if l != 0 && other.data()[i] == 1.0 {
                overlapped[l as usize - 1] = true;
            }
        }
        sizes
            .iter()
            .zip(&overlapped)
            .filter(|(_, &hit)| !hit)
            .map(|(&s, _)| s as f64 * voxel_ml)
            .sum()
    };

    Ok((summed(pred, gt), summed(gt, pred)))
}

/// Convenience wrapper building a [`MetricsRecord`] with 26-connectivity.
pub fn evaluate_case(case_id: &str, pred: &Volume, gt: &Volume) -> Result<MetricsRecord> {
    let dice = dice_score(pred, gt)?;
    let (fpv_ml, fnv_ml) = fp_fn_volumes(pred, gt, Connectivity::TwentySix)?;
    Ok(MetricsRecord {
        case_id: case_id.to_string(),
        dice,
        fpv_ml,
        fnv_ml,
    })
}

/// Mean-aggregates records into a summary row (case_id "mean").
pub fn aggregate(records: &[MetricsRecord]) -> MetricsRecord {
    let n = records.len().max(1) as f64;
    MetricsRecord {
        case_id: "mean".to_string(),
        dice: records.iter().map(|r| r.dice).sum::<f64>() / n,
        fpv_ml: records.iter().map(|r| r.fpv_ml).sum::<f64>() / n,
        fnv_ml: records.iter().map(|r| r.fnv_ml).sum::<f64>() / n,
    }
}

/// Writes the per-case CSV with a trailing mean row.
pub fn write_metrics_csv(records: &[MetricsRecord], path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut text = String::from("case_id,dice,fpv_ml,fnv_ml\n");
    for r in records.iter().chain(std::iter::once(&aggregate(records))) {
        text.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.case_id, r.dice, r.fpv_ml, r.fnv_ml
        ));
    }
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn mask(shape: (usize, usize, usize), spacing: (f32, f32, f32), fg: &[(usize, usize, usize)]) -> Volume {
        let mut v = Volume::new(shape, spacing).unwrap();
        for &(x, y, z) in fg {
            v.set(x, y, z, 1.0);
        }
        v
    }

    #[test]
    fn dice_identities() {
        let a = mask((4, 4, 4), (1.0, 1.0, 1.0), &[(0, 0, 0), (1, 0, 0)]);
        let b = mask((4, 4, 4), (1.0, 1.0, 1.0), &[(1, 0, 0), (2, 0, 0)]);
        assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
        // |P| = 2, |G| = 2, overlap 1 -> 0.5
        assert_eq!(dice_score(&a, &b).unwrap(), 0.5);
        let empty = mask((4, 4, 4), (1.0, 1.0, 1.0), &[]);
        let c = mask((4, 4, 4), (1.0, 1.0, 1.0), &[(3, 3, 3)]);
        assert_eq!(dice_score(&c, &empty).unwrap(), 0.0);
        assert_eq!(dice_score(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn dice_is_symmetric() {
        let mut rng = Rng::new(90);
        for _ in 0..10 {
            let a = random_mask(&mut rng, 0.3);
            let b = random_mask(&mut rng, 0.3);
            assert_eq!(dice_score(&a, &b).unwrap(), dice_score(&b, &a).unwrap());
        }
    }

    #[test]
    fn dice_rejects_non_binary() {
        let mut v = Volume::new((2, 2, 2), (1.0, 1.0, 1.0)).unwrap();
        v.set(0, 0, 0, 0.7);
        assert!(dice_score(&v, &v).is_err());
    }

    #[test]
    fn single_voxel_and_empty_components() {
        let single = mask((3, 3, 3), (1.0, 1.0, 1.0), &[(1, 1, 1)]);
        let (_, sizes) = connected_components(&single, Connectivity::TwentySix);
        assert_eq!(sizes, vec![1]);
        let empty = mask((3, 3, 3), (1.0, 1.0, 1.0), &[]);
        let (_, sizes) = connected_components(&empty, Connectivity::TwentySix);
        assert!(sizes.is_empty());
    }

    #[test]
    fn diagonal_voxels_split_by_connectivity() {
        let diag = mask((3, 3, 3), (1.0, 1.0, 1.0), &[(0, 0, 0), (1, 1, 1)]);
        let (_, s26) = connected_components(&diag, Connectivity::TwentySix);
        assert_eq!(s26.len(), 1);
        let (_, s6) = connected_components(&diag, Connectivity::Six);
        assert_eq!(s6.len(), 2);
        // Edge-sharing voxels merge at 18 but not at 6.
        let edge = mask((3, 3, 3), (1.0, 1.0, 1.0), &[(0, 0, 0), (1, 1, 0)]);
        let (_, s18) = connected_components(&edge, Connectivity::Eighteen);
        assert_eq!(s18.len(), 1);
        let (_, s6b) = connected_components(&edge, Connectivity::Six);
        assert_eq!(s6b.len(), 2);
    }

    #[test]
    fn fp_fn_volume_arithmetic() {
        // Predicted 5-voxel component disjoint from gt at (2,2,3) mm:
        // FPV = 5 * 12 mm^3 = 0.06 mL.
        let sp = (2.0, 2.0, 3.0);
        let pred = mask(
            (8, 8, 8),
            sp,
            &[(0, 0, 0), (1, 0, 0), (2, 0, 0), (0, 1, 0), (0, 0, 1)],
        );
        let gt = mask((8, 8, 8), sp, &[(6, 6, 6), (6, 7, 6), (7, 6, 6), (6, 6, 7)]);
        let (fpv, fnv) = fp_fn_volumes(&pred, &gt, Connectivity::TwentySix).unwrap();
        assert!((fpv - 0.06).abs() < 1e-12);
        // gt 4-voxel component fully missed: FNV = 4 * 12 mm^3 = 0.048 mL.
        assert!((fnv - 0.048).abs() < 1e-12);
    }

    #[test]
    fn overlapping_component_contributes_nothing() {
        let sp = (2.0, 2.0, 3.0);
        let pred = mask((6, 6, 6), sp, &[(0, 0, 0), (1, 0, 0), (2, 0, 0)]);
        let gt = mask((6, 6, 6), sp, &[(2, 0, 0)]);
        let (fpv, fnv) = fp_fn_volumes(&pred, &gt, Connectivity::TwentySix).unwrap();
        assert_eq!(fpv, 0.0);
        assert_eq!(fnv, 0.0);
    }

    #[test]
    fn spacing_mismatch_is_rejected() {
        let a = mask((4, 4, 4), (1.0, 1.0, 1.0), &[(0, 0, 0)]);
        let b = mask((4, 4, 4), (2.0, 2.0, 2.0), &[(0, 0, 0)]);
        assert!(matches!(
            fp_fn_volumes(&a, &b, Connectivity::TwentySix),
            Err(Error::SpacingMismatch { .. })
        ));
    }

    fn random_mask(rng: &mut Rng, density: f64) -> Volume {
        let mut v = Volume::new((16, 16, 16), (2.0, 2.0, 3.0)).unwrap();
        for x in v.data_mut() {
            *x = f32::from(rng.bernoulli(density) as u8);
        }
        v
    }

    #[test]
    fn matches_brute_force_oracle_on_random_masks() {
        let mut rng = Rng::new(91);
        for trial in 0..20 {
            let density = 0.02 + 0.01 * (trial % 5) as f64;
            let pred = random_mask(&mut rng, density);
            let gt = random_mask(&mut rng, density);
            assert_eq!(
                dice_score(&pred, &gt).unwrap(),
                oracle::dice_oracle(&pred, &gt)
            );
            let (fpv, fnv) = fp_fn_volumes(&pred, &gt, Connectivity::TwentySix).unwrap();
            let (ofpv, ofnv) = oracle::fp_fn_oracle(&pred, &gt);
            assert!((fpv - ofpv).abs() < 1e-9, "trial {trial}: {fpv} vs {ofpv}");
            assert!((fnv - ofnv).abs() < 1e-9);
        }
    }

    #[test]
    fn perfect_and_empty_prediction_identities() {
        let mut rng = Rng::new(92);
        let gt = random_mask(&mut rng, 0.05);
        let rec = evaluate_case("x", &gt, &gt).unwrap();
        assert_eq!((rec.dice, rec.fpv_ml, rec.fnv_ml), (1.0, 0.0, 0.0));

        let empty = Volume::new((16, 16, 16), (2.0, 2.0, 3.0)).unwrap();
        let rec2 = evaluate_case("y", &empty, &gt).unwrap();
        assert_eq!(rec2.dice, 0.0);
        let total_gt_ml =
            gt.data().iter().filter(|&&v| v == 1.0).count() as f64 * 12.0 / 1000.0;
        assert!((rec2.fnv_ml - total_gt_ml).abs() < 1e-9);
        assert_eq!(rec2.fpv_ml, 0.0);
    }
}
