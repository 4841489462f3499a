//! Head-only distillation: reverse-mode gradients, finite-difference checks,
//! AdamW and a toy training run.

mod adamw;
mod gradcheck;
mod head;
mod tape;
mod toy;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use gradcheck::{gradcheck, gradcheck_mixed, relative_error, GradcheckReport, MiniatureProblem};
pub use head::{batch_loss, head_forward, sample_loss, HeadNodes, HeadParams, HeadSample, LossSpec, SampleLoss};
pub use tape::{Gradients, Real, Tape, Var};
pub use toy::{loss_spec, render_gaussians, toy_dataset, toy_distill_run, toy_distill_run_with, StepRecord, ToyConfig, ToyDataset, ToyRun};
