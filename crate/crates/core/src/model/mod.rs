//! The ConvNetD architecture family.

mod flops;
mod net;
mod params;
mod spec;

pub use flops::{
    count_flops, FlopsCount, LayerFlops, NORM_FLOPS_PER_ACTIVATION, NORM_FLOPS_PER_GROUP,
    POOL_FLOPS_PER_OUTPUT, RELU_FLOPS_PER_ACTIVATION, UPDATE_FLOPS_PER_PARAM,
};
pub use net::{argmax_rows, cross_entropy, Gradients, Loss, Reduction, Tape, Want, NORM_EPS};
pub use params::{BlockLayout, ModelParams, ParamLayout};
pub use spec::{pooled, ModelSpec, NormGroups};

/// Build freshly initialized parameters for `spec`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> crate::Result<ModelParams<f32>> {
    ModelParams::init(spec, seed)
}
