//! Property tests for the small algebraic invariants.

use mirror_unet::corruption::{apply_cube_permutation, invert_permutation, patch_shuffle, ShuffleSpec};
use mirror_unet::data::Volume;
use mirror_unet::inference::{binarize, late_fuse, LateFusionMode};
use mirror_unet::metrics::dice_score;
use mirror_unet::model::fuse_logits;
use mirror_unet::tensor::Tensor;
use proptest::prelude::*;

fn volume_from(values: Vec<f32>, nx: usize, ny: usize, nz: usize) -> Volume {
    Volume::from_data((nx, ny, nz), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusing_identical_logits_is_identity(values in prop::collection::vec(-5.0f64..5.0, 8), theta in 0.0f64..=1.0) {
        let t = Tensor::from_vec(&[1, 1, 1, 8], values.clone());
        let fused = fuse_logits(&t, &t, theta).unwrap();
        for (a, b) in fused.data().iter().zip(&values) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_logits_stay_between_the_inputs(ct in prop::collection::vec(-5.0f64..5.0, 8), pet in prop::collection::vec(-5.0f64..5.0, 8), theta in 0.0f64..=1.0) {
        let c = Tensor::from_vec(&[1, 1, 1, 8], ct.clone());
        let p = Tensor::from_vec(&[1, 1, 1, 8], pet.clone());
        let fused = fuse_logits(&c, &p, theta).unwrap();
        for i in 0..8 {
            let lo = ct[i].min(pet[i]) - 1e-12;
            let hi = ct[i].max(pet[i]) + 1e-12;
            prop_assert!(fused.data()[i] >= lo && fused.data()[i] <= hi);
        }
    }

    #[test]
    fn binarize_is_idempotent(values in prop::collection::vec(0.0f32..=1.0, 27), tau in 0.05f64..0.95) {
        let v = volume_from(values, 3, 3, 3);
        let once = binarize(&v, tau).unwrap();
        let twice = binarize(&once, tau).unwrap();
        prop_assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in prop::collection::vec(0u8..=1, 27), b in prop::collection::vec(0u8..=1, 27)) {
        let va = volume_from(a.iter().map(|&x| x as f32).collect(), 3, 3, 3);
        let vb = volume_from(b.iter().map(|&x| x as f32).collect(), 3, 3, 3);
        let d1 = dice_score(&va, &vb).unwrap();
        let d2 = dice_score(&vb, &va).unwrap();
        prop_assert_eq!(d1, d2);
        prop_assert!((0.0..=1.0).contains(&d1));
    }

    #[test]
    fn union_and_intersection_bound_inputs(a in prop::collection::vec(0u8..=1, 27), b in prop::collection::vec(0u8..=1, 27)) {
        let va = volume_from(a.iter().map(|&x| x as f32).collect(), 3, 3, 3);
        let vb = volume_from(b.iter().map(|&x| x as f32).collect(), 3, 3, 3);
        let u = late_fuse(&va, &vb, LateFusionMode::Union).unwrap();
        let i = late_fuse(&va, &vb, LateFusionMode::Intersection).unwrap();
        for idx in 0..27 {
            prop_assert!(u.data()[idx] >= va.data()[idx].max(vb.data()[idx]));
            prop_assert!(i.data()[idx] <= va.data()[idx].min(vb.data()[idx]));
        }
    }

    #[test]
    fn shuffle_round_trips_for_any_seed(values in prop::collection::vec(0.0f32..1.0, 64), seed in any::<u64>()) {
        let v = volume_from(values, 4, 4, 4);
        let spec = ShuffleSpec { patch_edge: 2, permutation_seed: seed };
        let (shuffled, perm) = patch_shuffle(&v, &spec).unwrap();
        // Multiset preserved.
        let mut a: Vec<f32> = v.data().to_vec();
        let mut b: Vec<f32> = shuffled.data().to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        prop_assert_eq!(a, b);
        // Inverse permutation restores bitwise.
        let restored = apply_cube_permutation(&shuffled, 2, &invert_permutation(&perm)).unwrap();
        prop_assert_eq!(restored.data(), v.data());
    }
}
