//! Variance-reduced stochastic gradient methods with curvature-corrected
//! directions and Barzilai-Borwein step sizes, for ℓ₂-regularized binary
//! classification losses.
//!
//! The main entry points are [`LossModel`], [`optimize`] and, for whole
//! experiments, [`harness::run_experiment`].

// `!(x > 0.0)` rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod correction;
pub mod data;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod optimizer;
pub mod reference;
pub mod stepsize;
pub mod theory;

pub use correction::{CorrectionError, CorrectionOperator, CorrectionVariant};
pub use data::{DataError, LabelRule, ParseOptions, SparseDataset, SparseVector};
pub use harness::{ExperimentSpec, HarnessError, ResultTable};
pub use losses::{LossError, LossKind, LossModel};
pub use optimizer::{
    direction, measure_variance, optimize, AnchorOption, EpochRecord, Method, OptimError, RunConfig, RunOutcome,
    VarianceProbe,
};
pub use reference::{solve_reference, ReferenceCache, ReferenceError, ReferenceOptions, ReferenceSolution};
pub use stepsize::{BbsPreset, StepSizeSchedule, XiMode};
