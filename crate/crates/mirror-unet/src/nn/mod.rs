//! Hand-rolled neural-network primitives: every operation has an explicit
//! forward and backward pass so gradients can be validated against finite
//! differences.

pub mod adam;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod ops;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use conv::{conv3d_backward, conv3d_forward, ConvSpec};
pub use linear::Linear;
pub use norm::{instance_norm_backward, instance_norm_forward, NormCache};
pub use ops::{
    concat_channels, gap_backward, gap_forward, sigmoid, silu_backward, silu_forward,
    split_channels, upsample2_backward, upsample2_forward,
};
pub use params::{ParamId, ParamMeta, ParamStore};
