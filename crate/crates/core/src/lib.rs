//! Partition-tightened convex relaxations for certifying ReLU networks.
//!
//! The crate computes sound upper bounds on `sup { cᵀf(x) : x ∈ X }` for a
//! feedforward ReLU network `f` and a polyhedral input region `X`:
//!
//! * [`relaxation`] solves the triangle LP relaxation and the exact problem
//!   by activation-pattern enumeration;
//! * [`partition`] splits `X` along neuron hyperplanes (or a grid) and takes
//!   the maximum of the per-part relaxed bounds;
//! * [`sdp`] solves the one-layer semidefinite relaxation with an
//!   operator-splitting method.
//!
//! [`iris`] and [`report`] hold the dataset, trainer and run reports used by
//! the command-line front end.

pub mod bounds;
pub mod error;
pub mod iris;
pub mod linalg;
pub mod lp;
pub mod network;
pub mod partition;
pub mod region;
pub mod report;
pub mod sdp;
pub mod relaxation;

pub use bounds::{preact_bounds, BoundsMode, LayerBounds, PreactBounds, Stability};
pub use error::{CertError, Result};
pub use lp::{solve_lp, LpProblem, LpResult, LpStatus, Sense};
pub use network::{ActivationTrace, Layer, Network};
pub use partition::{
    certify_partitioned, grid_partition, motivating_partition, refine_recursive,
    select_optimal_row, solution_guided_row, split_by_row, PartitionPlan,
    PartitionedCertificate, RowChoice, Strategy,
};
pub use region::{Cut, CutSense, InputRegion};
pub use report::{run_certify, CertifyOptions, RunReport, Solver};
pub use sdp::{
    build_sdp, geo_gap, lift_point, sdp_feasibility_residuals, solve_sdp, SdpProblem, SdpResult,
    SdpSettings, SdpStatus,
};
pub use relaxation::{
    build_relaxed_lp, certify_lp, exact_value, worst_case_gap_bound, CertKind, Certificate,
    GapDiagnostics, NeuronSplit, SafetySpec,
};
