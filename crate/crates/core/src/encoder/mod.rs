//! Word-level transformer encoder with a masked-token head, a linear
//! classification head and an optional multi-center (SoftTriple) head.
//!
//! Sequences are processed one at a time without padding, so a sample's
//! output never depends on what else is in the batch.

mod backward;
mod forward;
mod gradcheck;
mod params;

pub use backward::{
    backward, evaluate_loss, Example, GradientSet, LossBreakdown, LossSpec, ProxyCentroids,
    TaskLoss,
};
pub use forward::{embed, forward, predict, EncoderOutput};
pub use gradcheck::{gradient_check, random_case, GradCase, GradCheckReport, GradInstance};
pub use params::{Block, HeadKind, ModelConfig, ModelParams, TensorGroup};
