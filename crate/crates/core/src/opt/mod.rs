//! The SAM optimizer family: Adam baseline plus eight variants expressed as
//! gradient / perturbation / descent oracles around a common outer step.

mod adam;
mod oracles;
mod step;
mod variant;

pub use adam::{adam_step, EventCounters, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use oracles::{
    esam_masked_perturbation, perturb_asam, perturb_fisher, perturb_friendly, perturb_nosam,
    perturb_sam, select_topk, Perturbation, StepEvent, ZERO_GRAD_EPS,
};
pub use step::{sam_outer_step, LookSamDiag, StepCost, StepOutcome, TrainBatch};
pub use variant::{grids, VariantKind, VariantSpec};
