//! Brain-task specifics: target decomposition from the {0,1,2} label map
//! and the final whole-tumor mask rule (union of the branch predictions;
//! the bottleneck output is a training regularizer only).

use crate::data::Volume;
use crate::error::{Error, Result};
use crate::model::BranchOutputs;
use crate::tensor::Tensor;

/// Which task each part of the model carries for the brain versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrainTaskAssignment {
    pub branch_a_task: BranchATask,
    pub branch_b_task: BranchBTask,
    pub btl_task: BtlTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchATask {
    EdemaSeg,
    FlairRecon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchBTask {
    CoreSeg,
    AllClassSeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BtlTask {
    WholeTumorSeg,
    T1gdRecon,
}

impl BrainTaskAssignment {
    pub fn for_version(version: crate::model::Version) -> Option<Self> {
        match version {
            crate::model::Version::V2Brain => Some(BrainTaskAssignment {
                branch_a_task: BranchATask::EdemaSeg,
                branch_b_task: BranchBTask::CoreSeg,
                btl_task: BtlTask::WholeTumorSeg,
            }),
            crate::model::Version::V2RecBrain => Some(BrainTaskAssignment {
                branch_a_task: BranchATask::FlairRecon,
                branch_b_task: BranchBTask::AllClassSeg,
                btl_task: BtlTask::T1gdRecon,
            }),
            _ => None,
        }
    }
}

/// Splits a {0: background, 1: edema, 2: core} label map into the three
/// binary targets. The whole-tumor mask is exactly edema union core.
pub fn brain_targets(labels: &Volume) -> Result<(Volume, Volume, Volume)> {
    let mut edema = labels.clone();
    let mut core = labels.clone();
    let mut whole = labels.clone();
    for i in 0..labels.numel() {
        let v = labels.data()[i];
        if v != 0.0 && v != 1.0 && v != 2.0 {
            return Err(Error::InvalidValue(format!(
                "brain label {v} outside {{0,1,2}}"
            )));
        }
        edema.data_mut()[i] = f32::from(v == 1.0);
        core.data_mut()[i] = f32::from(v == 2.0);
        whole.data_mut()[i] = f32::from(v >= 1.0);
    }
    Ok((edema, core, whole))
}

/// Final whole-tumor mask from v2-brain outputs: binarize each branch's
/// logits at probability one half (logit >= 0) and take the voxelwise OR.
/// `out_btl` never contributes.
pub fn brain_final_mask(outputs: &BranchOutputs<f32>) -> Result<Tensor<f32>> {
    if outputs.out_a.shape() != outputs.out_b.shape() || outputs.out_a.shape()[0] != 1 {
        return Err(Error::MissingOutput(
            "v2-brain needs single-channel logits from both branches",
        ));
    }
    let mut mask = Tensor::zeros(outputs.out_a.shape());
    for ((dst, &a), &b) in mask
        .data_mut()
        .iter_mut()
        .zip(outputs.out_a.data())
        .zip(outputs.out_b.data())
    {
        *dst = f32::from(a >= 0.0 || b >= 0.0);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn label_volume(values: Vec<f32>) -> Volume {
        let n = values.len();
        Volume::from_data((n, 1, 1), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), values).unwrap()
    }

    #[test]
    fn all_zero_labels_give_three_empty_masks() {
        let (e, c, w) = brain_targets(&label_volume(vec![0.0; 8])).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
        assert!(c.data().iter().all(|&v| v == 0.0));
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_core_voxel() {
        let (e, c, w) = brain_targets(&label_volume(vec![0.0, 2.0, 0.0])).unwrap();
        assert_eq!(e.data(), &[0.0, 0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 1.0, 0.0]);
        assert_eq!(w.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn whole_is_the_voxelwise_or_of_edema_and_core() {
        let mut rng = Rng::new(61);
        for _ in 0..100 {
            let labels: Vec<f32> = (0..64).map(|_| rng.below(3) as f32).collect();
            let (e, c, w) = brain_targets(&label_volume(labels)).unwrap();
            for i in 0..64 {
                let or = f32::from(e.data()[i] == 1.0 || c.data()[i] == 1.0);
                assert_eq!(w.data()[i], or);
            }
        }
    }

    #[test]
    fn invalid_label_is_rejected() {
        assert!(brain_targets(&label_volume(vec![0.0, 3.0])).is_err());
    }

    #[test]
    fn final_mask_unions_the_branches_and_ignores_btl() {
        let outputs = BranchOutputs {
            out_a: Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, -1.0, -2.0, -0.5]),
            out_b: Tensor::from_vec(&[1, 1, 1, 4], vec![-3.0, 2.0, -1.0, -0.5]),
            out_btl: Some(Tensor::from_vec(&[1, 1, 1, 4], vec![9.0, 9.0, 9.0, 9.0])),
            class_logit: None,
        };
        let mask = brain_final_mask(&outputs).unwrap();
        assert_eq!(mask.data(), &[1.0, 1.0, 0.0, 0.0]);
    }
}
